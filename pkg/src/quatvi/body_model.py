"""Rigid body mass geometry, inertia construction, and potential fields.

A body is a collection of uniform balls rigidly attached to the body
frame with the center of mass at the origin.  Two inertia-like matrices
appear:

* ``j_d``, the second moment sum(m_i rho_i rho_i^T) plus each ball's own
  (m a^2 / 5) I contribution, which is the quadratic form the discrete
  rotational action contracts against, and
* ``j = trace(j_d) I - j_d``, the standard inertia tensor satisfying
  j @ Omega = angular momentum in the body frame.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import quat_algebra as qa

# Absolute tolerance on the center-of-mass residual sum(m_i rho_i).
COM_TOL = 1e-12

# A mass element closer than this to the field center is treated as
# sitting on the singularity.
SINGULARITY_RADIUS = 1e-12


class SingularConfigurationError(ValueError):
    """A mass element coincides with the center of the gravity field."""


@dataclass(frozen=True)
class Ball:
    """Uniform ball: point mass plus its own rotational inertia.

    Parameters
    ----------
    mass : positive mass of the ball.
    rho : body-frame position of the ball center, shape (3,).
    radius : ball radius; zero gives a point mass.
    """

    mass: float
    rho: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        if self.rho.shape != (3,):
            raise ValueError("ball position must be a 3-vector")
        if not self.mass > 0.0:
            raise ValueError("ball mass must be positive")
        if self.radius < 0.0:
            raise ValueError("ball radius must be nonnegative")


@dataclass(frozen=True)
class RigidBodyGeometry:
    """Collection of balls whose mass-weighted centers sum to zero."""

    balls: tuple[Ball, ...]

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))
        if not self.balls:
            raise ValueError("geometry needs at least one ball")
        com = sum(b.mass * b.rho for b in self.balls)
        if float(np.max(np.abs(com))) > COM_TOL:
            raise ValueError(
                f"center of mass must sit at the body origin, got offset {com}"
            )

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.balls])

    @cached_property
    def centers(self) -> np.ndarray:
        return np.array([b.rho for b in self.balls])

    @cached_property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls])

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


@dataclass(frozen=True)
class InertiaPair:
    """The second-moment matrix j_d and the inertia tensor j of one body."""

    j_d: np.ndarray
    j: np.ndarray
    total_mass: float

    @cached_property
    def inv_j(self) -> np.ndarray:
        """Inverse inertia; requires j positive definite."""
        try:
            np.linalg.cholesky(self.j)
        except np.linalg.LinAlgError:
            raise ValueError("inertia tensor is not positive definite") from None
        return np.linalg.inv(self.j)


def build_inertia(geometry: RigidBodyGeometry) -> InertiaPair:
    """Assemble j_d and j from the ball decomposition.

    Each ball contributes m rho rho^T + (m a^2 / 5) I to j_d; the second
    term is the ball's own second moment about its center.  The pair
    satisfies trace(j) = 2 trace(j_d).
    """
    j_d = np.zeros((3, 3))
    for b in geometry.balls:
        j_d += b.mass * np.outer(b.rho, b.rho)
        j_d += (b.mass * b.radius * b.radius / 5.0) * np.eye(3)
    j = np.trace(j_d) * np.eye(3) - j_d
    return InertiaPair(j_d=j_d, j=j, total_mass=geometry.total_mass)


def three_ball_planar_geometry(
    mass: float = 1.0, ball_radius: float = 0.1, circumradius: float = 1.0
) -> RigidBodyGeometry:
    """Three equal balls at the vertices of an equilateral triangle.

    The triangle lies in the body x-y plane with circumradius as given
    and one vertex on the +x axis, which puts the center of mass exactly
    at the origin.
    """
    c = circumradius
    h = c * np.sqrt(3.0) / 2.0
    return RigidBodyGeometry(
        balls=(
            Ball(mass, np.array([c, 0.0, 0.0]), ball_radius),
            Ball(mass, np.array([-0.5 * c, h, 0.0]), ball_radius),
            Ball(mass, np.array([-0.5 * c, -h, 0.0]), ball_radius),
        )
    )


class PotentialField(abc.ABC):
    """Potential energy V(x, q) of a rigid body pose.

    ``grad_q`` is the ambient four-component gradient: the partial
    derivatives of the defining formula with respect to all four
    quaternion components, without any tangency projection.
    """

    @abc.abstractmethod
    def value(self, x: np.ndarray, q: np.ndarray) -> float: ...

    @abc.abstractmethod
    def grad_x(self, x: np.ndarray, q: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def grad_q(self, x: np.ndarray, q: np.ndarray) -> np.ndarray: ...

    def grads(self, x: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(grad_x, grad_q) in one call; subclasses may share work."""
        return self.grad_x(x, q), self.grad_q(x, q)


class ZeroPotential(PotentialField):
    """Free motion: V = 0 everywhere."""

    def value(self, x, q):
        return 0.0

    def grad_x(self, x, q):
        return np.zeros(3)

    def grad_q(self, x, q):
        return np.zeros(4)


class CentralGravityPotential(PotentialField):
    """Inverse-distance attraction of every ball to the inertial origin.

    V(x, q) = -mu * sum_i m_i / |x + R(q) rho_i| with R the rotation of
    q.  Because each ball is a uniform sphere, its exterior field is that
    of a point at the center, so no shape correction enters V.
    """

    def __init__(self, mu: float, geometry: RigidBodyGeometry):
        if not mu > 0.0:
            raise ValueError("gravitational parameter mu must be positive")
        self.mu = float(mu)
        self.geometry = geometry
        self._m = geometry.masses
        self._rho = geometry.centers

    def _offsets(self, x, q):
        # Ball centers in the inertial frame and their radii from the origin.
        r_mat = qa.rotation_matrix(q, check=False)
        y = x + self._rho @ r_mat.T
        r = np.sqrt(np.einsum("ij,ij->i", y, y))
        if np.any(r <= SINGULARITY_RADIUS):
            raise SingularConfigurationError(
                "a mass element sits at the center of the gravity field"
            )
        return y, r

    def value(self, x, q):
        _, r = self._offsets(x, q)
        return float(-self.mu * np.sum(self._m / r))

    def grad_x(self, x, q):
        y, r = self._offsets(x, q)
        g = (self.mu * self._m / r**3)[:, None] * y
        return g.sum(axis=0)

    def grad_q(self, x, q):
        y, r = self._offsets(x, q)
        g = (self.mu * self._m / r**3)[:, None] * y
        return self._pullback_q(q, g)

    def _pullback_q(self, q, g):
        # d/dq of R(q) rho, contracted against per-ball weights g, using
        # R(q) rho = (2 s^2 - 1) rho + 2 v (v . rho) + 2 s (v x rho).
        s, v = float(q[0]), q[1:]
        rho = self._rho
        vxr = np.cross(np.broadcast_to(v, rho.shape), rho)
        gs = 4.0 * s * np.einsum("ij,ij->", g, rho) + 2.0 * np.einsum("ij,ij->", g, vxr)
        vdotr = rho @ v
        gdotv = g @ v
        gv = 2.0 * (
            vdotr @ g + gdotv @ rho + s * np.sum(np.cross(rho, g), axis=0)
        )
        out = np.empty(4)
        out[0] = gs
        out[1:] = gv
        return out

    def grads(self, x, q):
        y, r = self._offsets(x, q)
        g = (self.mu * self._m / r**3)[:, None] * y
        return g.sum(axis=0), self._pullback_q(q, g)


@dataclass(frozen=True)
class RigidBodyModel:
    """Inertia and potential of one simulated body."""

    inertia: InertiaPair
    potential: PotentialField

    @property
    def mass(self) -> float:
        return self.inertia.total_mass


def finite_difference_gradient(
    potential: PotentialField,
    x: np.ndarray,
    q: np.ndarray,
    delta: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference (grad_x, grad_q) probe of a potential.

    The quaternion block perturbs all four ambient components, matching
    the convention of ``PotentialField.grad_q``.  When ``delta`` is None
    each block uses 1e-5 * max(1, |block|).
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    dx = delta if delta is not None else 1e-5 * max(1.0, float(np.linalg.norm(x)))
    dq = delta if delta is not None else 1e-5 * max(1.0, float(np.linalg.norm(q)))
    gx = np.empty(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = dx
        gx[i] = (potential.value(x + e, q) - potential.value(x - e, q)) / (2.0 * dx)
    gq = np.empty(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = dq
        gq[i] = (potential.value(x, q + e) - potential.value(x, q - e)) / (2.0 * dq)
    return gx, gq
