"""Command line driver: configure, run, and check simulations.

Subcommands:

* ``run``       integrate a trajectory and write CSV plus a metadata JSON
* ``converge``  step-halving self-convergence study
* ``validate``  parse and echo a configuration without running

Exit codes: 0 success, 2 configuration problem, 3 implicit solver
failure, 4 singular mass configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import quat_algebra as qa
from .body_model import (
    Ball,
    CentralGravityPotential,
    RigidBodyGeometry,
    RigidBodyModel,
    SingularConfigurationError,
    ZeroPotential,
    build_inertia,
    three_ball_planar_geometry,
)
from .broyden import BroydenConfig, BroydenSolver, SolverError
from .diagnostics import angular_momentum, secular_drift_rate, total_energy
from .integrator import (
    HamiltonianState,
    StepSizeError,
    Stepper,
    StepperConfig,
    discrete_legendre_momenta,
    lagrangian_step,
)

CSV_HEADER = "t,x1,x2,x3,qs,qv1,qv2,qv3,p1,p2,p3,w1,w2,w3,energy,norm_err,L1,L2,L3"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SINGULAR = 4

_POTENTIAL_KINDS = ("central_gravity", "none")
_INTEGRATOR_KINDS = ("hamiltonian", "lagrangian")


class ConfigError(ValueError):
    """Configuration file or flag problem."""


def _require_keys(section: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


def _vec(value, n: int, where: str) -> np.ndarray:
    try:
        out = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must be a numeric list") from exc
    if out.shape != (n,):
        raise ConfigError(f"{where} must have {n} components")
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{where} must be finite")
    return out


def _scalar(value, where: str, positive=False, nonnegative=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    out = float(value)
    if not math.isfinite(out):
        raise ConfigError(f"{where} must be finite")
    if positive and not out > 0.0:
        raise ConfigError(f"{where} must be positive")
    if nonnegative and out < 0.0:
        raise ConfigError(f"{where} must be nonnegative")
    return out


@dataclass(frozen=True)
class SimConfig:
    """Fully resolved simulation setup in canonical (q, p, w) form."""

    geometry: RigidBodyGeometry
    potential_kind: str
    mu: float
    x0: np.ndarray
    q0: np.ndarray
    p0: np.ndarray
    w0: np.ndarray
    h: float
    t_end: float
    out_path: str
    stride: int
    integrator_kind: str
    solver: BroydenConfig
    diagnostics: bool

    def build_model(self) -> RigidBodyModel:
        inertia = build_inertia(self.geometry)
        if self.potential_kind == "central_gravity":
            potential = CentralGravityPotential(self.mu, self.geometry)
        else:
            potential = ZeroPotential()
        return RigidBodyModel(inertia=inertia, potential=potential)

    def initial_state(self) -> HamiltonianState:
        return HamiltonianState(x=self.x0, q=self.q0, p=self.p0, w=self.w0)

    def stepper_config(self, model: RigidBodyModel) -> StepperConfig:
        return StepperConfig(h=self.h, model=model, solver=self.solver)

    def n_steps(self) -> int:
        n = round(self.t_end / self.h)
        if abs(n * self.h - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ConfigError(
                f"t_end = {self.t_end} is not a whole number of steps of h = {self.h}"
            )
        return n

    def to_dict(self) -> dict:
        return {
            "geometry": {
                "balls": [
                    {
                        "mass": b.mass,
                        "rho": [float(c) for c in b.rho],
                        "radius": b.radius,
                    }
                    for b in self.geometry.balls
                ]
            },
            "potential": {"kind": self.potential_kind, "mu": self.mu},
            "initial": {
                "x0": [float(c) for c in self.x0],
                "q0": [float(c) for c in self.q0],
                "p0": [float(c) for c in self.p0],
                "w0": [float(c) for c in self.w0],
            },
            "h": self.h,
            "t_end": self.t_end,
            "output": {"path": self.out_path, "stride": self.stride},
            "integrator": self.integrator_kind,
            "solver": {
                "tol": self.solver.tol_residual,
                "max_iter": self.solver.max_iter,
                "fd_step": self.solver.fd_step,
                "jacobian_refresh_interval": self.solver.jacobian_refresh_interval,
            },
            "diagnostics": self.diagnostics,
        }


def _parse_geometry(section) -> RigidBodyGeometry:
    if not isinstance(section, dict):
        raise ConfigError("geometry must be an object")
    _require_keys(section, {"balls"}, {"balls"}, "geometry")
    balls_raw = section["balls"]
    if not isinstance(balls_raw, list) or not balls_raw:
        raise ConfigError("geometry.balls must be a nonempty list")
    balls = []
    for i, entry in enumerate(balls_raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"geometry.balls[{i}] must be an object")
        _require_keys(entry, {"mass", "rho", "radius"}, {"mass", "rho"}, f"geometry.balls[{i}]")
        balls.append(
            Ball(
                mass=_scalar(entry["mass"], f"geometry.balls[{i}].mass", positive=True),
                rho=_vec(entry["rho"], 3, f"geometry.balls[{i}].rho"),
                radius=_scalar(entry.get("radius", 0.0), f"geometry.balls[{i}].radius", nonnegative=True),
            )
        )
    try:
        return RigidBodyGeometry(balls=tuple(balls))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _pick_one(section: dict, primary: str, alternative: str, where: str):
    has_p = primary in section
    has_a = alternative in section
    if has_p == has_a:
        raise ConfigError(f"{where} must contain exactly one of '{primary}' or '{alternative}'")
    return (primary, section[primary]) if has_p else (alternative, section[alternative])


def _parse_solver(section) -> BroydenConfig:
    if not isinstance(section, dict):
        raise ConfigError("solver must be an object")
    _require_keys(
        section, {"tol", "max_iter", "fd_step", "jacobian_refresh_interval"}, set(), "solver"
    )
    try:
        max_iter = section.get("max_iter", 50)
        refresh = section.get("jacobian_refresh_interval", 0)
        if isinstance(max_iter, bool) or not isinstance(max_iter, int):
            raise ConfigError("solver.max_iter must be an integer")
        if isinstance(refresh, bool) or not isinstance(refresh, int):
            raise ConfigError("solver.jacobian_refresh_interval must be an integer")
        return BroydenConfig(
            tol_residual=_scalar(section.get("tol", 1e-12), "solver.tol", positive=True),
            max_iter=max_iter,
            fd_step=_scalar(section.get("fd_step", 1e-7), "solver.fd_step", positive=True),
            jacobian_refresh_interval=refresh,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(doc: dict) -> SimConfig:
    """Validate a configuration document and resolve it to canonical form."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    _require_keys(
        doc,
        {
            "geometry",
            "potential",
            "initial",
            "h",
            "t_end",
            "output",
            "integrator",
            "solver",
            "diagnostics",
        },
        {"geometry", "potential", "initial", "h", "t_end"},
        "configuration",
    )
    geometry = _parse_geometry(doc["geometry"])
    inertia = build_inertia(geometry)

    pot = doc["potential"]
    if not isinstance(pot, dict):
        raise ConfigError("potential must be an object")
    _require_keys(pot, {"kind", "mu"}, {"kind"}, "potential")
    kind = pot["kind"]
    if kind not in _POTENTIAL_KINDS:
        raise ConfigError(f"potential.kind must be one of {_POTENTIAL_KINDS}")
    mu = _scalar(pot.get("mu", 1.0), "potential.mu", positive=True)

    init = doc["initial"]
    if not isinstance(init, dict):
        raise ConfigError("initial must be an object")
    _require_keys(
        init, {"x0", "q0", "R0", "p0", "xdot0", "w0", "omega0"}, {"x0"}, "initial"
    )
    x0 = _vec(init["x0"], 3, "initial.x0")

    att_key, att_val = _pick_one(init, "q0", "R0", "initial")
    if att_key == "q0":
        q0 = _vec(att_val, 4, "initial.q0")
        try:
            qa.require_unit(q0)
        except ValueError as exc:
            raise ConfigError(f"initial.q0: {exc}") from exc
    else:
        r0 = np.asarray(att_val, dtype=float)
        if r0.shape != (3, 3):
            raise ConfigError("initial.R0 must be a 3x3 matrix")
        try:
            q0 = qa.from_rotation_matrix(r0)
        except ValueError as exc:
            raise ConfigError(f"initial.R0: {exc}") from exc

    lin_key, lin_val = _pick_one(init, "p0", "xdot0", "initial")
    vec3 = _vec(lin_val, 3, f"initial.{lin_key}")
    p0 = vec3 if lin_key == "p0" else geometry.total_mass * vec3

    rot_key, rot_val = _pick_one(init, "w0", "omega0", "initial")
    vec3 = _vec(rot_val, 3, f"initial.{rot_key}")
    w0 = vec3 if rot_key == "w0" else 2.0 * (inertia.j @ vec3)

    out = doc.get("output", {})
    if not isinstance(out, dict):
        raise ConfigError("output must be an object")
    _require_keys(out, {"path", "stride"}, set(), "output")
    out_path = out.get("path", "trajectory.csv")
    if not isinstance(out_path, str) or not out_path:
        raise ConfigError("output.path must be a nonempty string")
    stride = out.get("stride", 100)
    if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
        raise ConfigError("output.stride must be a positive integer")

    integrator_kind = doc.get("integrator", "hamiltonian")
    if integrator_kind not in _INTEGRATOR_KINDS:
        raise ConfigError(f"integrator must be one of {_INTEGRATOR_KINDS}")

    diagnostics = doc.get("diagnostics", True)
    if not isinstance(diagnostics, bool):
        raise ConfigError("diagnostics must be a boolean")

    return SimConfig(
        geometry=geometry,
        potential_kind=kind,
        mu=mu,
        x0=x0,
        q0=q0,
        p0=p0,
        w0=w0,
        h=_scalar(doc["h"], "h", positive=True),
        t_end=_scalar(doc["t_end"], "t_end", nonnegative=True),
        out_path=out_path,
        stride=stride,
        integrator_kind=integrator_kind,
        solver=_parse_solver(doc.get("solver", {})),
        diagnostics=diagnostics,
    )


def preset_paper_dict() -> dict:
    """Three-ball triangle body on an inclined tumbling orbit in a central field."""
    geometry = three_ball_planar_geometry(mass=1.0, ball_radius=0.1, circumradius=1.0)
    return {
        "geometry": {
            "balls": [
                {"mass": b.mass, "rho": [float(c) for c in b.rho], "radius": b.radius}
                for b in geometry.balls
            ]
        },
        "potential": {"kind": "central_gravity", "mu": 1.0},
        "initial": {
            "x0": [8.0, 0.0, 0.0],
            "q0": [1.0, 0.0, 0.0, 0.0],
            "p0": [1.0, 0.0, 0.0],
            "w0": [1.0, 2.0, 3.0],
        },
        "h": 0.01,
        "t_end": 1000.0,
        "output": {"path": "orbit.csv", "stride": 100},
        "integrator": "hamiltonian",
        # The long-horizon conservation checks spend their whole error
        # budget on solver residuals, so the preset asks for a residual
        # well below the solver default.
        "solver": {"tol": 1e-14, "max_iter": 50, "fd_step": 1e-7, "jacobian_refresh_interval": 0},
        "diagnostics": True,
    }


def preset_paper_experiment() -> SimConfig:
    return config_from_dict(preset_paper_dict())


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(
    config_path: str | None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> SimConfig:
    """Assemble a SimConfig from preset, file, and flag layers (later wins)."""
    doc: dict = {}
    if preset is not None:
        if preset != "paper":
            raise ConfigError(f"unknown preset '{preset}'")
        doc = preset_paper_dict()
    if config_path is not None:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        doc = _merge(doc, loaded)
    if not doc:
        raise ConfigError("no configuration given; pass --config and/or --preset")
    if overrides:
        doc = _merge(doc, overrides)
    return config_from_dict(doc)


def _fmt(value: float) -> str:
    # repr of a Python float is the shortest string that round-trips.
    return repr(float(value))


def _row(t, state, energy, norm_err, momentum) -> str:
    fields = [
        t,
        state.x[0], state.x[1], state.x[2],
        state.q[0], state.q[1], state.q[2], state.q[3],
        state.p[0], state.p[1], state.p[2],
        state.w[0], state.w[1], state.w[2],
        energy, norm_err, momentum[0], momentum[1], momentum[2],
    ]
    return ",".join(_fmt(v) for v in fields)


@dataclass(frozen=True)
class ExperimentResult:
    exit_code: int
    csv_path: Path
    meta_path: Path
    steps_completed: int
    summary: dict
    failure: dict | None


class _LagrangianDriver:
    """Configuration-pair recursion wrapped as a momentum-form stepper.

    The first step bootstraps from the momentum form; afterwards only
    (x, q) pairs advance and the reported momenta come from the discrete
    Legendre transform of the trailing pair.
    """

    def __init__(self, config: StepperConfig):
        self.config = config
        self._stepper = Stepper(config)
        self._solver = BroydenSolver(config.solver)
        self._prev: tuple[np.ndarray, np.ndarray] | None = None
        self.steps_done = 0
        self.total_iterations = 0
        self.max_iterations = 0

    def _record(self, report):
        self.steps_done += 1
        if report is not None:
            self.total_iterations += report.iterations
            self.max_iterations = max(self.max_iterations, report.iterations)

    def step(self, state: HamiltonianState) -> HamiltonianState:
        model, h = self.config.model, self.config.h
        if self._prev is None:
            nxt = self._stepper.step(state)
            self._prev = (state.x, state.q)
            self._record(self._stepper.last_report)
            return nxt
        x2, q2 = lagrangian_step(
            self._prev[0], self._prev[1], state.x, state.q, model, h, solver=self._solver
        )
        self._prev = (state.x, state.q)
        p2, w2 = discrete_legendre_momenta(state.x, state.q, x2, q2, model, h)
        self._record(self._solver.last_report)
        return HamiltonianState(x=x2, q=q2, p=p2, w=w2)


def run_experiment(config: SimConfig) -> ExperimentResult:
    """Integrate per config; write the data CSV and its metadata JSON.

    A solver or singularity failure mid-run still writes everything up
    to the last good state and reports the failure in the metadata.
    """
    model = config.build_model()
    state = config.initial_state()
    n = config.n_steps()
    csv_path = Path(config.out_path)
    meta_path = csv_path.with_name(csv_path.stem + ".meta.json")

    driver = (
        _LagrangianDriver(config.stepper_config(model))
        if config.integrator_kind == "lagrangian"
        else Stepper(config.stepper_config(model))
    )

    rows: list[str] = []
    failure = None
    momentum_ref = None
    energies: list[float] = []
    times: list[float] = []
    max_norm_err = None
    max_momentum_err = None
    k = 0

    def observe(state: HamiltonianState) -> tuple[float, float, np.ndarray]:
        nonlocal max_norm_err, max_momentum_err
        energy = total_energy(state, model)
        norm_err = abs(qa.norm(state.q) - 1.0)
        momentum = angular_momentum(state)
        scale = max(1.0, float(np.linalg.norm(momentum_ref)))
        momentum_err = float(np.linalg.norm(momentum - momentum_ref)) / scale
        if max_norm_err is None or norm_err > max_norm_err:
            max_norm_err = norm_err
        if max_momentum_err is None or momentum_err > max_momentum_err:
            max_momentum_err = momentum_err
        return energy, norm_err, momentum

    try:
        if n > 0:
            momentum_ref = angular_momentum(state)
            energy, norm_err, momentum = observe(state)
            energies.append(energy)
            times.append(0.0)
            rows.append(_row(0.0, state, energy, norm_err, momentum))
            for k in range(1, n + 1):
                state = driver.step(state)
                emit = (k % config.stride == 0) or (k == n)
                if config.diagnostics or emit:
                    energy, norm_err, momentum = observe(state)
                    if config.diagnostics:
                        energies.append(energy)
                        times.append(k * config.h)
                if emit:
                    rows.append(_row(k * config.h, state, energy, norm_err, momentum))
    except (SolverError, StepSizeError) as exc:
        failure = {"step": k, "kind": "solver", "message": str(exc)}
    except SingularConfigurationError as exc:
        failure = {"step": k, "kind": "singularity", "message": str(exc)}

    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")

    drift = None
    if config.diagnostics and failure is None and len(energies) >= 4:
        drift = secular_drift_rate(np.array(times), np.array(energies))
    summary = {
        "steps_completed": driver.steps_done,
        "max_unit_norm_error": max_norm_err,
        "max_momentum_error": max_momentum_err,
        "energy_drift_rate": drift,
        "initial_energy": energies[0] if energies else None,
        "final_energy": energies[-1] if energies else None,
    }
    meta = {
        "config": config.to_dict(),
        "solver_stats": {
            "total_iterations": driver.total_iterations,
            "max_iterations_per_step": driver.max_iterations,
        },
        "final_state": {
            "t": driver.steps_done * config.h,
            "x": [float(v) for v in state.x],
            "q": [float(v) for v in state.q],
            "p": [float(v) for v in state.p],
            "w": [float(v) for v in state.w],
        },
        "summary": summary,
        "failure": failure,
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if failure is None:
        code = EXIT_OK
    elif failure["kind"] == "singularity":
        code = EXIT_SINGULAR
    else:
        code = EXIT_SOLVER
    return ExperimentResult(
        exit_code=code,
        csv_path=csv_path,
        meta_path=meta_path,
        steps_completed=driver.steps_done,
        summary=summary,
        failure=failure,
    )


def run_convergence_study(config: SimConfig, h_list: list[float]) -> dict:
    """Step-halving study on the configured problem over [0, t_end]."""
    from .diagnostics import convergence_order_study

    study = convergence_order_study(
        config.initial_state(),
        config.build_model(),
        h_list,
        config.t_end,
        solver=config.solver,
    )
    return {
        "h": list(study.h),
        "errors": list(study.errors),
        "orders": list(study.orders),
        "block_errors": {k: list(v) for k, v in study.block_errors.items()},
        "reference_h": study.reference_h,
        "t_end": config.t_end,
    }


def _add_common_config_args(parser):
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--preset", choices=["paper"], help="built-in base configuration")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quatvi",
        description="Structure-preserving rigid body simulation with quaternion attitude",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a trajectory")
    _add_common_config_args(p_run)
    p_run.add_argument("--h", type=float, help="time step override")
    p_run.add_argument("--t-end", type=float, help="final time override")
    p_run.add_argument("--out", help="output CSV path override")
    p_run.add_argument("--stride", type=int, help="output row stride override")
    p_run.add_argument(
        "--integrator", choices=list(_INTEGRATOR_KINDS), help="stepping form override"
    )

    p_conv = sub.add_parser("converge", help="step-halving convergence study")
    _add_common_config_args(p_conv)
    p_conv.add_argument(
        "--h-list", required=True, help="comma separated step sizes, each half the previous"
    )
    p_conv.add_argument("--t-end", type=float, help="study horizon override")
    p_conv.add_argument("--out", help="report JSON path (default convergence.json)")

    p_val = sub.add_parser("validate", help="check a configuration and echo it")
    _add_common_config_args(p_val)
    return parser


def _run_overrides(args) -> dict:
    overrides: dict = {}
    if args.h is not None:
        overrides["h"] = args.h
    if args.t_end is not None:
        overrides["t_end"] = args.t_end
    out_section = {}
    if args.out is not None:
        out_section["path"] = args.out
    if getattr(args, "stride", None) is not None:
        out_section["stride"] = args.stride
    if out_section:
        overrides["output"] = out_section
    if getattr(args, "integrator", None) is not None:
        overrides["integrator"] = args.integrator
    return overrides


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config, args.preset, _run_overrides(args))
            result = run_experiment(config)
            if result.failure is not None:
                print(
                    f"run stopped at step {result.failure['step']}: "
                    f"{result.failure['message']}",
                    file=sys.stderr,
                )
            print(f"wrote {result.csv_path} and {result.meta_path}")
            return result.exit_code

        if args.command == "converge":
            overrides = {"t_end": args.t_end} if args.t_end is not None else {}
            config = load_config(args.config, args.preset, overrides)
            try:
                h_list = [float(tok) for tok in args.h_list.split(",") if tok.strip()]
            except ValueError as exc:
                raise ConfigError(f"bad --h-list: {exc}") from exc
            try:
                report = run_convergence_study(config, h_list)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            out_path = Path(args.out) if args.out else Path("convergence.json")
            with open(out_path, "w") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
                fh.write("\n")
            for h, err, order in zip(
                report["h"], report["errors"], ["-"] + report["orders"]
            ):
                print(f"h = {h:<10g} error = {err:.6e}  order = {order}")
            print(f"wrote {out_path}")
            return EXIT_OK

        if args.command == "validate":
            config = load_config(args.config, args.preset)
            config.n_steps()
            print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK

    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, StepSizeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SingularConfigurationError as exc:
        print(f"singular configuration: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    raise AssertionError("unreachable command")


if __name__ == "__main__":
    sys.exit(main())
