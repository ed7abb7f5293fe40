"""Quasi-Newton root finding for small dense nonlinear systems.

The Jacobian estimate starts from central finite differences and is then
updated with the rank-1 rule

    B <- B + ((df - B dx) dx^T) / (dx . dx)

after every accepted step.  ``BroydenSolver`` keeps its estimate between
``solve`` calls, which pays off when the same system is solved along a
trajectory with slowly varying roots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BroydenConfig:
    """Solver settings.

    tol_residual : convergence threshold on the infinity norm of f.
    max_iter : iteration budget for a single solve.
    fd_step : finite-difference step scale; the step actually used is
        fd_step * max(1, |x0|).
    jacobian_refresh_interval : for trajectory drivers, the number of
        steps between forced finite-difference rebuilds; 0 builds once at
        the start and carries the estimate.
    """

    tol_residual: float = 1e-12
    max_iter: int = 50
    fd_step: float = 1e-7
    jacobian_refresh_interval: int = 0

    def __post_init__(self):
        if not self.tol_residual > 0.0:
            raise ValueError("tol_residual must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.fd_step > 0.0:
            raise ValueError("fd_step must be positive")
        if self.jacobian_refresh_interval < 0:
            raise ValueError("jacobian_refresh_interval must be nonnegative")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual_norm: float
    converged: bool


class SolverError(RuntimeError):
    """Raised when a solve does not converge; carries the last report."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def fd_jacobian(f, x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference Jacobian of f at x, one column per component."""
    x = np.asarray(x, dtype=float)
    n = x.size
    fx = np.asarray(f(x), dtype=float)
    jac = np.empty((fx.size, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        jac[:, i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step)
    return jac


class BroydenSolver:
    """Root finder that owns a persistent Jacobian estimate.

    One instance serves one trajectory; instances are not shared between
    threads.  A solve that fails to converge on a carried (possibly
    stale) estimate is retried once from a fresh finite-difference
    Jacobian before the failure is raised.
    """

    def __init__(self, config: BroydenConfig | None = None):
        self.config = config if config is not None else BroydenConfig()
        self._jac: np.ndarray | None = None
        self.last_report: SolveReport | None = None

    def reset_jacobian(self) -> None:
        self._jac = None

    def solve(self, f, x0: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        x0 = np.array(x0, dtype=float)
        step = self.config.fd_step * max(1.0, float(np.linalg.norm(x0)))
        fresh = self._jac is None
        if fresh:
            self._jac = fd_jacobian(f, x0, step)
        try:
            x, report = self._iterate(f, x0, step)
        except SolverError:
            if fresh:
                raise
            self._jac = fd_jacobian(f, x0, step)
            x, report = self._iterate(f, x0, step)
        self.last_report = report
        return x, report

    def _iterate(self, f, x0, step):
        cfg = self.config
        jac = self._jac
        x = x0.copy()
        fx = np.asarray(f(x), dtype=float)
        rebuilt = False
        iterations = 0
        while True:
            if not np.all(np.isfinite(fx)):
                self._jac = jac
                raise SolverError(
                    "residual is not finite",
                    SolveReport(iterations, float("nan"), False),
                )
            res = float(np.max(np.abs(fx)))
            if res <= cfg.tol_residual:
                self._jac = jac
                return x, SolveReport(iterations, res, True)
            if iterations >= cfg.max_iter:
                self._jac = jac
                raise SolverError(
                    f"no convergence in {cfg.max_iter} iterations "
                    f"(residual {res:.3e})",
                    SolveReport(iterations, res, False),
                )
            try:
                dx = np.linalg.solve(jac, -fx)
            except np.linalg.LinAlgError:
                if rebuilt:
                    self._jac = jac
                    raise SolverError(
                        "Jacobian estimate is singular",
                        SolveReport(iterations, res, False),
                    ) from None
                jac = fd_jacobian(f, x, step)
                rebuilt = True
                continue
            x = x + dx
            fx_new = np.asarray(f(x), dtype=float)
            jac = jac + np.outer(fx_new - fx - jac @ dx, dx) / float(dx @ dx)
            fx = fx_new
            iterations += 1


def solve_broyden(f, x0: np.ndarray, config: BroydenConfig | None = None):
    """One-shot solve with a fresh finite-difference Jacobian."""
    return BroydenSolver(config).solve(f, x0)
