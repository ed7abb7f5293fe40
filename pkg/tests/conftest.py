import numpy as np
import pytest

import quatvi as qv


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL summary line per acceptance check, then assert."""

    def check(name: str, ok: bool, detail: str):
        status = "PASS" if ok else "FAIL"
        request.config._criterion_lines.append(f"[{status}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return check


def random_unit_quaternion(rng) -> np.ndarray:
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_tangent(rng, max_angle=3.0) -> np.ndarray:
    # |xi| < pi keeps the vector inside the injectivity radius of exp_map.
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    return (max_angle * rng.uniform(1e-6, 1.0)) * direction


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def preset_geometry():
    return qv.three_ball_planar_geometry()


@pytest.fixture(scope="session")
def preset_inertia(preset_geometry):
    return qv.build_inertia(preset_geometry)


@pytest.fixture(scope="session")
def preset_model(preset_geometry, preset_inertia):
    return qv.RigidBodyModel(
        inertia=preset_inertia,
        potential=qv.CentralGravityPotential(1.0, preset_geometry),
    )


@pytest.fixture(scope="session")
def free_model(preset_inertia):
    return qv.RigidBodyModel(inertia=preset_inertia, potential=qv.ZeroPotential())


@pytest.fixture(scope="session")
def preset_state():
    return qv.HamiltonianState(
        x=[8.0, 0.0, 0.0], q=[1.0, 0.0, 0.0, 0.0], p=[1.0, 0.0, 0.0], w=[1.0, 2.0, 3.0]
    )


@pytest.fixture(scope="session")
def tight_solver():
    return qv.BroydenConfig(tol_residual=1e-14)
