"""Conserved-quantity tracking and convergence measurement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat_algebra as qa
from .body_model import RigidBodyModel
from .broyden import BroydenConfig
from .integrator import HamiltonianState, Stepper, StepperConfig


def total_energy(state: HamiltonianState, model: RigidBodyModel) -> float:
    """|p|^2 / 2m + (1/8) w . inv(J) w + V(x, q)."""
    p, w = state.p, state.w
    kinetic = 0.5 * float(p @ p) / model.mass
    rotational = 0.125 * float(w @ (model.inertia.inv_j @ w))
    return kinetic + rotational + model.potential.value(state.x, state.q)


def angular_momentum(state: HamiltonianState) -> np.ndarray:
    """Spatial angular momentum x cross p + (1/2) R(q) w.

    The rotational factor 1/2 converts the conjugate momentum w = 2 J
    Omega into the body angular momentum J Omega before rotating it to
    the inertial frame.  Conserved componentwise whenever the potential
    sees only rotation-invariant quantities.
    """
    return np.cross(state.x, state.p) + 0.5 * (qa.rotation_matrix(state.q) @ state.w)


@dataclass(frozen=True)
class InvariantSample:
    """Per-step conserved-quantity record."""

    t: float
    energy: float
    unit_norm_error: float
    angular_momentum: np.ndarray
    momentum_error: float


def sample_invariants(
    state: HamiltonianState,
    model: RigidBodyModel,
    t: float,
    reference_momentum: np.ndarray | None = None,
) -> InvariantSample:
    """Snapshot of the invariants at one instant.

    ``momentum_error`` is |L - L_ref| / max(1, |L_ref|), or zero when no
    reference is given.
    """
    momentum = angular_momentum(state)
    if reference_momentum is None:
        err = 0.0
    else:
        scale = max(1.0, float(np.linalg.norm(reference_momentum)))
        err = float(np.linalg.norm(momentum - reference_momentum)) / scale
    return InvariantSample(
        t=t,
        energy=total_energy(state, model),
        unit_norm_error=abs(qa.norm(state.q) - 1.0),
        angular_momentum=momentum,
        momentum_error=err,
    )


def secular_drift_rate(times: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of |values - values[0]| over the final half.

    Distinguishes the bounded oscillation characteristic of symplectic
    schemes from genuine secular growth; the early transient is excluded
    by fitting only the second half of the record.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 4:
        raise ValueError("drift fit needs at least 4 samples")
    dev = np.abs(values - values[0])
    start = times.size // 2
    t = times[start:]
    d = dev[start:]
    t_mean = t.mean()
    denom = float(((t - t_mean) ** 2).sum())
    if denom == 0.0:
        raise ValueError("drift fit needs distinct sample times")
    return float(((t - t_mean) * (d - d.mean())).sum() / denom)


@dataclass(frozen=True)
class ConvergenceStudy:
    """Self-convergence table: errors against a much finer reference run."""

    h: tuple[float, ...]
    errors: tuple[float, ...]
    orders: tuple[float, ...]
    block_errors: dict[str, tuple[float, ...]]
    reference_h: float


def _state_blocks(state: HamiltonianState) -> dict[str, np.ndarray]:
    return {"x": state.x, "q": state.q, "p": state.p, "w": state.w}


def convergence_order_study(
    ic: HamiltonianState,
    model: RigidBodyModel,
    h_list,
    t_end: float,
    solver: BroydenConfig | None = None,
) -> ConvergenceStudy:
    """Observed order from successive step halvings on [0, t_end].

    ``h_list`` must hold at least three step sizes, each half the
    previous one, all dividing t_end.  The reference is the same scheme
    run at one eighth of the smallest step; orders are log2 ratios of
    successive aggregate state errors at t_end.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ValueError("need at least three step sizes")
    for h in h_list:
        if not h > 0.0:
            raise ValueError("step sizes must be positive")
        if abs(round(t_end / h) - t_end / h) > 1e-9:
            raise ValueError(f"t_end = {t_end} is not a whole number of steps of {h}")
    for a, b in zip(h_list, h_list[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ValueError("each step size must be half the previous one")
    solver = solver if solver is not None else BroydenConfig()

    def run(h: float) -> HamiltonianState:
        stepper = Stepper(StepperConfig(h=h, model=model, solver=solver))
        state = ic
        for _ in range(round(t_end / h)):
            state = stepper.step(state)
        return state

    h_ref = h_list[-1] / 8.0
    ref = run(h_ref)
    ref_blocks = _state_blocks(ref)

    errors = []
    block_errors: dict[str, list[float]] = {k: [] for k in ref_blocks}
    for h in h_list:
        final = run(h)
        blocks = _state_blocks(final)
        total = 0.0
        for k in ref_blocks:
            e = float(np.linalg.norm(blocks[k] - ref_blocks[k]))
            block_errors[k].append(e)
            total += e * e
        errors.append(np.sqrt(total))

    orders = []
    for e_coarse, e_fine in zip(errors, errors[1:]):
        if e_coarse > 0.0 and e_fine > 0.0:
            orders.append(float(np.log2(e_coarse / e_fine)))
        else:
            orders.append(float("nan"))

    return ConvergenceStudy(
        h=tuple(h_list),
        errors=tuple(errors),
        orders=tuple(orders),
        block_errors={k: tuple(v) for k, v in block_errors.items()},
        reference_h=h_ref,
    )
