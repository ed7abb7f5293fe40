"""Quaternion algebra kernel: products, charts, and rotation conversions.

Conventions used throughout the package:

* A quaternion is a length-4 float64 array ``[s, v1, v2, v3]`` with the
  scalar part first; this is also the serialization order.
* ``exp_map(xi)`` returns ``(cos|xi|, sin|xi| * xi/|xi|)``.  The rotation
  represented by ``exp_map(xi)`` has angle ``2*|xi|``, so a body angular
  velocity ``Omega`` corresponds to the tangent vector ``xi = Omega/2``.
* ``rotation_matrix`` evaluates the polynomial formula
  ``(2 s^2 - 1) I + 2 v v^T + 2 s hat(v)``, which extends smoothly to
  non-unit arguments.  Ambient four-component gradients of attitude
  dependent functions differentiate exactly this extension.

No function here normalizes its input or its output; unit norm is a
consequence of the algebra (products of unit quaternions, exponentials)
and is only ever *checked*, never repaired.
"""

from __future__ import annotations

import math

import numpy as np

# Tolerance for accepting a quaternion as unit at validation boundaries.
EPS_UNIT = 1e-9

# Below this angle sin(t)/t is evaluated by series to avoid 0/0.
SERIES_THRESHOLD = 1e-4

_EYE3 = np.eye(3)


def identity() -> np.ndarray:
    """The multiplicative identity (1, 0, 0, 0)."""
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Hamilton product q * p in scalar-first components."""
    qs, qv = q[0], q[1:]
    ps, pv = p[0], p[1:]
    out = np.empty(4)
    out[0] = qs * ps - qv @ pv
    out[1:] = qs * pv + ps * qv + np.cross(qv, pv)
    return out


def conjugate(q: np.ndarray) -> np.ndarray:
    out = np.array(q, dtype=float)
    out[1:] = -out[1:]
    return out


def norm(q: np.ndarray) -> float:
    return float(np.sqrt(np.dot(q, q)))


def inverse(q: np.ndarray) -> np.ndarray:
    """Multiplicative inverse conjugate(q) / |q|^2.

    Raises ValueError for the zero quaternion.
    """
    n2 = float(np.dot(q, q))
    if n2 == 0.0:
        raise ValueError("zero quaternion has no inverse")
    return conjugate(q) / n2


def is_unit(q: np.ndarray, tol: float = EPS_UNIT) -> bool:
    return abs(float(np.dot(q, q)) - 1.0) <= tol


def require_unit(q: np.ndarray, tol: float = EPS_UNIT) -> None:
    """Raise ValueError unless |q|^2 is within tol of 1."""
    err = abs(float(np.dot(q, q)) - 1.0)
    if not err <= tol:
        raise ValueError(f"quaternion is not unit: |q|^2 - 1 = {err:.3e}")


def _sinc(t: float) -> float:
    # sin(t)/t with a series branch; the t**4 term keeps the switch at
    # SERIES_THRESHOLD well below double precision resolution.
    if t < SERIES_THRESHOLD:
        t2 = t * t
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    return math.sin(t) / t


def exp_map(xi: np.ndarray) -> np.ndarray:
    """Exponential (cos|xi|, sin|xi| xi/|xi|) of a tangent 3-vector.

    Unit norm of the result is automatic from cos^2 + sin^2 = 1; nothing
    is renormalized.
    """
    xi = np.asarray(xi, dtype=float)
    t = math.sqrt(float(xi @ xi))
    out = np.empty(4)
    out[0] = math.cos(t)
    out[1:] = _sinc(t) * xi
    return out


def log_map(q: np.ndarray) -> np.ndarray:
    """Principal inverse of exp_map on unit quaternions, |result| in [0, pi).

    Undefined at the antipode (-1, 0, 0, 0) of the identity, where the
    axis carries no information; that input raises ValueError.
    """
    require_unit(q)
    s = float(q[0])
    v = np.asarray(q[1:], dtype=float)
    vn = math.sqrt(float(v @ v))
    if vn == 0.0:
        if s < 0.0:
            raise ValueError("log_map is undefined at the antipode (-1, 0, 0, 0)")
        return np.zeros(3)
    t = math.atan2(vn, s)
    if t < SERIES_THRESHOLD:
        # v = sinc(t) * xi, so divide out the series instead of t/sin(t)
        return v / _sinc(t)
    return v * (t / vn)


def hat(x: np.ndarray) -> np.ndarray:
    """Skew matrix with hat(x) @ y = cross(x, y)."""
    return np.array(
        [
            [0.0, -x[2], x[1]],
            [x[2], 0.0, -x[0]],
            [-x[1], x[0], 0.0],
        ]
    )


def vee(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Inverse of hat. The input must be skew-symmetric within tol."""
    m = np.asarray(m, dtype=float)
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m + m.T))) > tol * scale:
        raise ValueError("vee requires a skew-symmetric matrix")
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def rotation_matrix(q: np.ndarray, check: bool = True) -> np.ndarray:
    """Rotation matrix (2 s^2 - 1) I + 2 v v^T + 2 s hat(v) of a unit quaternion.

    Equals the conjugation v -> Im(q (0,v) q*) for unit q, and maps q and
    -q to the same rotation.  With ``check=False`` the same polynomial is
    evaluated without the unit-norm test, which is what ambient
    finite-difference probes of attitude functions need.
    """
    if check:
        require_unit(q)
    s = float(q[0])
    v = q[1:]
    r = 2.0 * np.outer(v, v)
    d = 2.0 * s * s - 1.0
    r[0, 0] += d
    r[1, 1] += d
    r[2, 2] += d
    s2 = 2.0 * s
    r[0, 1] -= s2 * v[2]
    r[1, 0] += s2 * v[2]
    r[0, 2] += s2 * v[1]
    r[2, 0] -= s2 * v[1]
    r[1, 2] -= s2 * v[0]
    r[2, 1] += s2 * v[0]
    return r


def from_rotation_matrix(r: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Unit quaternion q with rotation_matrix(q) = r.

    Of the two preimages +-q the one with nonnegative scalar part is
    returned; an exactly zero scalar part is disambiguated by making the
    first nonzero vector component positive.  The branch selection below
    always divides by the largest of the four candidate denominators, so
    the conversion is stable for every rotation angle.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError("rotation matrix must be 3x3")
    if float(np.max(np.abs(r.T @ r - _EYE3))) > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("matrix is not a rotation (orthogonality or det check failed)")

    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        k = 2.0 * math.sqrt(1.0 + tr)
        q = np.array(
            [0.25 * k, (r[2, 1] - r[1, 2]) / k, (r[0, 2] - r[2, 0]) / k, (r[1, 0] - r[0, 1]) / k]
        )
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        k = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array(
            [(r[2, 1] - r[1, 2]) / k, 0.25 * k, (r[0, 1] + r[1, 0]) / k, (r[0, 2] + r[2, 0]) / k]
        )
    elif r[1, 1] >= r[2, 2]:
        k = 2.0 * math.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2])
        q = np.array(
            [(r[0, 2] - r[2, 0]) / k, (r[0, 1] + r[1, 0]) / k, 0.25 * k, (r[1, 2] + r[2, 1]) / k]
        )
    else:
        k = 2.0 * math.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2])
        q = np.array(
            [(r[1, 0] - r[0, 1]) / k, (r[0, 2] + r[2, 0]) / k, (r[1, 2] + r[2, 1]) / k, 0.25 * k]
        )
    q /= math.sqrt(float(q @ q))

    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                if c < 0.0:
                    q = -q
                break
    return q


def f_matrix(q: np.ndarray) -> np.ndarray:
    """3x4 matrix with f_matrix(q).T @ v = quat_mul(q, (0, v)).

    Its action on ambient 4-component attitude gradients produces the
    3-component generalized force conjugate to the tangent vector, and
    f_matrix(q) @ q = 0 for every q.
    """
    out = np.empty((3, 4))
    out[:, 0] = -q[1:]
    out[:, 1:] = g_matrix(q)
    return out


def g_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 matrix with g_matrix(q).T @ v = vector part of quat_mul(q, (0, v))."""
    s = float(q[0])
    v = q[1:]
    return np.array(
        [
            [s, v[2], -v[1]],
            [-v[2], s, v[0]],
            [v[1], -v[0], s],
        ]
    )
