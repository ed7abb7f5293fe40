import json

import numpy as np
import pytest

import quatvi as qv
from quatvi.cli import (
    CSV_HEADER,
    ConfigError,
    config_from_dict,
    load_config,
    main,
    preset_paper_dict,
    preset_paper_experiment,
    run_experiment,
)


def dumbbell_config(**overrides):
    doc = {
        "geometry": {
            "balls": [
                {"mass": 1.0, "rho": [1.0, 0.0, 0.0], "radius": 0.1},
                {"mass": 1.0, "rho": [-1.0, 0.0, 0.0], "radius": 0.1},
            ]
        },
        "potential": {"kind": "none"},
        "initial": {
            "x0": [0.0, 0.0, 0.0],
            "q0": [1.0, 0.0, 0.0, 0.0],
            "p0": [0.0, 0.0, 0.0],
            "w0": [0.1, 0.2, 0.3],
        },
        "h": 0.01,
        "t_end": 1.0,
        "output": {"path": "out.csv", "stride": 10},
        "solver": {"tol": 1e-14},
    }
    for key, value in overrides.items():
        doc[key] = value
    return doc


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_csv_header_is_pinned():
    assert CSV_HEADER == (
        "t,x1,x2,x3,qs,qv1,qv2,qv3,p1,p2,p3,w1,w2,w3,energy,norm_err,L1,L2,L3"
    )


def test_preset_values():
    config = preset_paper_experiment()
    assert config.h == 0.01
    assert np.array_equal(config.x0, [8.0, 0.0, 0.0])
    assert np.array_equal(config.q0, [1.0, 0.0, 0.0, 0.0])
    assert np.array_equal(config.p0, [1.0, 0.0, 0.0])
    assert np.array_equal(config.w0, [1.0, 2.0, 3.0])
    assert config.t_end == 1000.0
    assert config.stride == 100
    assert config.integrator_kind == "hamiltonian"
    assert config.n_steps() == 100000


def test_unknown_keys_rejected():
    doc = dumbbell_config()
    doc["surprise"] = 1
    with pytest.raises(ConfigError):
        config_from_dict(doc)
    doc = dumbbell_config()
    doc["initial"]["typo"] = 1
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_missing_required_keys_rejected():
    doc = dumbbell_config()
    del doc["h"]
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_alternative_forms_are_exclusive():
    doc = dumbbell_config()
    doc["initial"]["R0"] = np.eye(3).tolist()
    with pytest.raises(ConfigError):
        config_from_dict(doc)
    doc = dumbbell_config()
    del doc["initial"]["p0"]
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_rotation_matrix_initial_condition():
    doc = dumbbell_config()
    del doc["initial"]["q0"]
    theta = 0.3
    doc["initial"]["R0"] = [
        [np.cos(theta), -np.sin(theta), 0.0],
        [np.sin(theta), np.cos(theta), 0.0],
        [0.0, 0.0, 1.0],
    ]
    config = config_from_dict(doc)
    from quatvi import quat_algebra as qa

    assert np.allclose(config.q0, qa.exp_map([0.0, 0.0, theta / 2.0]), atol=1e-12)


def test_velocity_form_initial_conditions():
    doc = dumbbell_config()
    del doc["initial"]["p0"]
    del doc["initial"]["w0"]
    doc["initial"]["xdot0"] = [0.5, 0.0, 0.0]
    doc["initial"]["omega0"] = [1.0, 1.0, 1.0]
    config = config_from_dict(doc)
    # total mass 2, so p = m xdot; w = 2 J Omega
    assert np.allclose(config.p0, [1.0, 0.0, 0.0], atol=0)
    j = qv.build_inertia(config.geometry).j
    assert np.allclose(config.w0, 2.0 * (j @ np.ones(3)), atol=0)


def test_invalid_values_rejected():
    for key, value in [
        ("h", 0.0),
        ("h", "fast"),
        ("t_end", -1.0),
        ("integrator", "verlet"),
        ("diagnostics", "yes"),
    ]:
        with pytest.raises(ConfigError):
            config_from_dict(dumbbell_config(**{key: value}))
    with pytest.raises(ConfigError):
        config_from_dict(dumbbell_config(output={"path": "x.csv", "stride": 0}))
    with pytest.raises(ConfigError):
        config_from_dict(dumbbell_config(potential={"kind": "harmonic"}))
    doc = dumbbell_config()
    doc["initial"]["q0"] = [1.0, 1.0, 0.0, 0.0]
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_t_end_must_be_whole_number_of_steps():
    config = config_from_dict(dumbbell_config(t_end=1.005))
    with pytest.raises(ConfigError):
        config.n_steps()


def test_load_config_requires_some_source():
    with pytest.raises(ConfigError):
        load_config(None, None)
    with pytest.raises(ConfigError):
        load_config(None, "unknown-preset")
    with pytest.raises(ConfigError):
        load_config("/no/such/file.json")


def test_run_writes_expected_rows(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = write_config(tmp_path, dumbbell_config(t_end=0.5))
    assert main(["run", "--config", path]) == 0
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    # rows at steps 0, 10, 20, 30, 40, 50
    assert len(lines) == 7
    assert lines[1].startswith("0.0,0.0,0.0,0.0,1.0,")
    assert lines[-1].startswith("0.5,")
    meta = json.loads((tmp_path / "out.meta.json").read_text())
    assert meta["failure"] is None
    assert meta["summary"]["steps_completed"] == 50
    assert meta["solver_stats"]["max_iterations_per_step"] <= 10
    assert meta["config"]["h"] == 0.01


def test_run_final_row_always_emitted(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    doc = dumbbell_config(t_end=0.25, output={"path": "out.csv", "stride": 1000})
    path = write_config(tmp_path, doc)
    assert main(["run", "--config", path]) == 0
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert len(lines) == 3  # header, step 0, step 25
    assert lines[-1].startswith("0.25,")


def test_run_zero_horizon_header_only(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = write_config(tmp_path, dumbbell_config(t_end=0.0))
    assert main(["run", "--config", path]) == 0
    assert (tmp_path / "out.csv").read_text() == CSV_HEADER + "\n"
    meta = json.loads((tmp_path / "out.meta.json").read_text())
    assert meta["failure"] is None
    assert meta["summary"]["steps_completed"] == 0


def test_run_deterministic_bytes(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    doc = dumbbell_config(t_end=0.5, potential={"kind": "central_gravity", "mu": 1.0})
    doc["initial"]["x0"] = [8.0, 0.0, 0.0]
    path = write_config(tmp_path, doc)
    assert main(["run", "--config", path, "--out", "first.csv"]) == 0
    assert main(["run", "--config", path, "--out", "second.csv"]) == 0
    assert (tmp_path / "first.csv").read_bytes() == (tmp_path / "second.csv").read_bytes()
    first_meta = json.loads((tmp_path / "first.meta.json").read_text())
    second_meta = json.loads((tmp_path / "second.meta.json").read_text())
    first_meta["config"]["output"]["path"] = second_meta["config"]["output"]["path"]
    assert first_meta == second_meta


def test_free_body_momentum_conservation(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    doc = dumbbell_config(t_end=10.0)  # 1000 steps
    path = write_config(tmp_path, doc)
    assert main(["run", "--config", path]) == 0
    meta = json.loads((tmp_path / "out.meta.json").read_text())
    assert meta["summary"]["max_momentum_error"] <= 1e-12


def test_resume_matches_single_run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    base = dumbbell_config(t_end=1.0, potential={"kind": "central_gravity", "mu": 1.0})
    base["initial"]["x0"] = [8.0, 0.0, 0.0]
    base["initial"]["p0"] = [1.0, 0.0, 0.0]
    whole = dict(base, output={"path": "whole.csv", "stride": 10})
    assert main(["run", "--config", write_config(tmp_path, whole, "whole.json")]) == 0

    first = dict(base, t_end=0.5, output={"path": "first.csv", "stride": 10})
    assert main(["run", "--config", write_config(tmp_path, first, "first.json")]) == 0
    fs = json.loads((tmp_path / "first.meta.json").read_text())["final_state"]

    second = dict(base, t_end=0.5, output={"path": "second.csv", "stride": 10})
    second["initial"] = {"x0": fs["x"], "q0": fs["q"], "p0": fs["p"], "w0": fs["w"]}
    assert main(["run", "--config", write_config(tmp_path, second, "second.json")]) == 0

    end_whole = json.loads((tmp_path / "whole.meta.json").read_text())["final_state"]
    end_split = json.loads((tmp_path / "second.meta.json").read_text())["final_state"]
    for key in ("x", "q", "p", "w"):
        diff = np.abs(np.array(end_whole[key]) - np.array(end_split[key]))
        assert np.max(diff) <= 1e-13


def test_singular_start_exits_4(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    doc = preset_paper_dict()
    doc["initial"]["x0"] = [-1.0, 0.0, 0.0]  # first ball lands on the origin
    doc["t_end"] = 1.0
    doc["output"] = {"path": "sing.csv", "stride": 10}
    path = write_config(tmp_path, doc)
    assert main(["run", "--config", path]) == 4
    meta = json.loads((tmp_path / "sing.meta.json").read_text())
    assert meta["failure"]["kind"] == "singularity"
    assert (tmp_path / "sing.csv").read_text() == CSV_HEADER + "\n"


def test_unsolvable_step_exits_3(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    doc = dumbbell_config(t_end=1.0)
    # far above the largest representable one-step momentum, so the
    # implicit equation has no solution
    doc["initial"]["w0"] = [0.0, 0.0, 1e5]
    path = write_config(tmp_path, doc)
    assert main(["run", "--config", path]) == 3
    meta = json.loads((tmp_path / "out.meta.json").read_text())
    assert meta["failure"]["kind"] == "solver"
    assert meta["summary"]["steps_completed"] == 0
    err = capsys.readouterr().err
    assert "stopped at step" in err


def test_flag_precedence_over_config_over_preset(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    overlay = {"t_end": 2.0, "output": {"path": "overlay.csv"}}
    path = write_config(tmp_path, overlay)
    assert main(["validate", "--preset", "paper", "--config", path]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["t_end"] == 2.0  # config file beat the preset
    assert doc["h"] == 0.01  # preset value survives where not overridden
    assert doc["output"]["path"] == "overlay.csv"
    assert doc["output"]["stride"] == 100


def test_run_flags_override_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = write_config(tmp_path, dumbbell_config())
    code = main(
        ["run", "--config", path, "--t-end", "0.1", "--h", "0.005",
         "--out", "flagged.csv", "--stride", "5"]
    )
    assert code == 0
    meta = json.loads((tmp_path / "flagged.meta.json").read_text())
    assert meta["config"]["t_end"] == 0.1
    assert meta["config"]["h"] == 0.005
    assert meta["config"]["output"]["stride"] == 5
    assert meta["summary"]["steps_completed"] == 20


def test_validate_resolves_alternative_forms(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    doc = dumbbell_config()
    del doc["initial"]["p0"]
    doc["initial"]["xdot0"] = [0.25, 0.0, 0.0]
    path = write_config(tmp_path, doc)
    assert main(["validate", "--config", path]) == 0
    echoed = json.loads(capsys.readouterr().out)
    assert echoed["initial"]["p0"] == [0.5, 0.0, 0.0]
    assert "xdot0" not in echoed["initial"]


def test_validate_rejects_bad_config(tmp_path, capsys):
    path = write_config(tmp_path, {"nonsense": True})
    assert main(["validate", "--config", path]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_validate_rejects_unreadable_file(capsys):
    assert main(["validate", "--config", "/does/not/exist.json"]) == 2


def test_validate_rejects_malformed_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["validate", "--config", str(path)]) == 2


def test_lagrangian_mode_matches_hamiltonian(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    doc = dumbbell_config(t_end=0.5, potential={"kind": "central_gravity", "mu": 1.0})
    doc["initial"]["x0"] = [8.0, 0.0, 0.0]
    path = write_config(tmp_path, doc)
    assert main(["run", "--config", path, "--out", "ham.csv"]) == 0
    assert main(
        ["run", "--config", path, "--out", "lag.csv", "--integrator", "lagrangian"]
    ) == 0
    ham = json.loads((tmp_path / "ham.meta.json").read_text())["final_state"]
    lag = json.loads((tmp_path / "lag.meta.json").read_text())["final_state"]
    for key in ("x", "q", "p", "w"):
        assert np.allclose(ham[key], lag[key], atol=1e-9)


def test_converge_subcommand(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    path = write_config(tmp_path, dumbbell_config(t_end=0.5))
    code = main(
        ["converge", "--config", path, "--h-list", "0.02,0.01,0.005",
         "--out", "report.json"]
    )
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["h"] == [0.02, 0.01, 0.005]
    assert len(report["orders"]) == 2
    for order in report["orders"]:
        assert 1.7 <= order <= 2.3
    assert "order" in capsys.readouterr().out


def test_converge_rejects_bad_h_list(tmp_path, capsys):
    path = write_config(tmp_path, dumbbell_config(t_end=0.5))
    assert main(["converge", "--config", path, "--h-list", "0.02,0.015"]) == 2


def test_run_experiment_api(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    config = config_from_dict(dumbbell_config(t_end=0.1))
    result = run_experiment(config)
    assert result.exit_code == 0
    assert result.steps_completed == 10
    assert result.csv_path.exists()
    assert result.meta_path.exists()
    assert result.failure is None
