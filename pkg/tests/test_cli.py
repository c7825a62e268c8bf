import json
import os
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest

from qsrid import io
from qsrid.cli import EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from qsrid.model import StateSpaceModel, Trajectory


def schema(name):
    return json.loads(resources.files("qsrid").joinpath("schemas", f"{name}.schema.json").read_text())


def validate(path, name):
    jsonschema.validate(io.read_json(path), schema(name))


def write_config(tmp_path, **overrides):
    d = io.RunConfig().to_dict()
    d["signal"] = dict(d["signal"], duration=10.0)
    d.update(overrides)
    path = tmp_path / "config.json"
    io.write_json(path, d)
    return str(path)


def run(*args):
    return main([str(a) for a in args])


# --------------------------------------------------------------- formats

def test_model_json_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    model = StateSpaceModel(rng.normal(size=(3, 3)), rng.normal(size=(3, 2)),
                            rng.normal(size=(2, 3)), rng.normal(size=(2, 2)) * 1e-17)
    path = tmp_path / "m.json"
    io.save_model(path, model)
    back = io.load_model(path)
    for name in "ABCD":
        assert np.array_equal(getattr(back, name), getattr(model, name))
    validate(path, "model")
    assert io.read_json(path)["n"] == 3


def test_model_json_rejects_bad_shapes():
    with pytest.raises(ValueError):
        io.model_from_dict({"n": 2, "m": 1, "p": 1, "A": [[0.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]]})


def test_trajectory_csv_format(tmp_path):
    tr = Trajectory(0.1, u=[1.0 / 3.0, 2.0, 0.0], y=[[0.1, -1e-20], [2.0, 3.0], [4.0, 5.0]],
                    x=np.zeros((3, 2)))
    path = tmp_path / "t.csv"
    io.write_trajectory_csv(path, tr, include_states=True)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().split("\n")
    assert lines[0] == "# states=true"
    assert lines[1] == "t,u1,y1,y2,x1,x2"
    assert lines[2].split(",")[1] == "0.33333333333333331"
    assert lines[2].split(",")[3] == "-9.9999999999999995e-21"
    back = io.read_trajectory_csv(path)
    assert np.array_equal(back.u, tr.u) and np.array_equal(back.y, tr.y)
    assert np.array_equal(back.x, tr.x)
    assert back.dt == pytest.approx(0.1, rel=1e-15)


def test_trajectory_csv_without_states(tmp_path):
    tr = Trajectory(0.5, u=[1.0, 2.0], y=[3.0, 4.0])
    path = tmp_path / "t.csv"
    io.write_trajectory_csv(path, tr)
    assert path.read_text().split("\n")[0] == "t,u1,y1"
    assert io.read_trajectory_csv(path).x is None
    with pytest.raises(ValueError):
        io.write_trajectory_csv(path, tr, include_states=True)


def test_trajectory_csv_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,u1,y1\n0,1,2\n1,1,2\n")
    with pytest.raises(ValueError):
        io.read_trajectory_csv(bad)
    bad.write_text("t,u1,y1\n0,1,2\n1,1,2\n3,1,2\n")
    with pytest.raises(ValueError, match="uniformly"):
        io.read_trajectory_csv(bad)


def test_run_config_round_trip(tmp_path):
    cfg = io.RunConfig(seed=7, n_test=1, algorithm={"gamma_max": 10.0, "tolerances": {"lmi_tol": 1e-8}})
    path = tmp_path / "c.json"
    cfg.save(path)
    back = io.RunConfig.load(path)
    assert back == cfg and back.to_dict() == cfg.to_dict()
    assert back.algorithm_config().tolerances.lmi_tol == 1e-8
    validate(path, "config")
    with pytest.raises(ValueError, match="unknown config keys"):
        io.RunConfig.from_dict({"sed": 1})
    with pytest.raises(ValueError):
        io.RunConfig(fit={"order": 0})


def test_supply_rate_from_explicit_matrices():
    sr = io.supply_rate_from_dict({"Q": [[-1.0]], "S": [[0.5]], "R": [[2.0]]}, 1, 1)
    assert (sr.Q[0, 0], sr.S[0, 0], sr.R[0, 0]) == (-1.0, 0.5, 2.0)
    with pytest.raises(ValueError):
        io.supply_rate_from_dict({"Q": [[1.0]]}, 1, 1)


# --------------------------------------------------------------- generate

def test_generate_example(tmp_path):
    cfg = write_config(tmp_path, seed=1, n_train=1, n_test=0,
                       signal={"kind": "multisine", "duration": 20.0, "dt": 1e-3,
                               "amplitudes": [0.1, 0.1], "frequencies": [0.1, 0.5]})
    assert run("generate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
    lines = (tmp_path / "o" / "data" / "train_000.csv").read_text().split("\n")
    assert lines[0] == "t,u1,y1"
    assert lines[-1] == ""
    assert len(lines) - 2 == 20001


def test_generate_zero_input_and_states(tmp_path):
    cfg = write_config(tmp_path, n_train=1, n_test=0, include_states=True,
                       signal={"kind": "zero", "duration": 1.0, "dt": 0.01})
    assert run("generate", "--config", cfg, "--out", tmp_path) == EXIT_OK
    tr = io.read_trajectory_csv(tmp_path / "data" / "train_000.csv")
    assert np.all(tr.y == 0.0) and tr.x.shape == (101, 2)


def test_generate_deterministic_and_seed_override(tmp_path):
    cfg = write_config(tmp_path, n_train=1, n_test=0)
    run("generate", "--config", cfg, "--out", tmp_path / "a")
    run("generate", "--config", cfg, "--out", tmp_path / "b")
    run("generate", "--config", cfg, "--out", tmp_path / "c", "--seed", 99)
    a = (tmp_path / "a" / "data" / "train_000.csv").read_bytes()
    assert a == (tmp_path / "b" / "data" / "train_000.csv").read_bytes()
    assert a != (tmp_path / "c" / "data" / "train_000.csv").read_bytes()
    assert run("generate", "--config", cfg, "--out", tmp_path / "d", "--seed", 2 ** 64 - 1) == EXIT_OK


def test_generate_from_model_file(tmp_path):
    io.save_model(tmp_path / "plant.json", StateSpaceModel(-1.0, 1.0, 1.0, 0.0))
    cfg = write_config(tmp_path, system="plant.json", n_train=1, n_test=0)
    assert run("generate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK


def test_usage_errors(tmp_path):
    cfg = write_config(tmp_path, system="nonexistent")
    assert run("generate", "--config", cfg, "--out", tmp_path / "o") == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE
    assert run("fit", "--config", tmp_path / "missing.json", "--out", tmp_path) == EXIT_USAGE
    assert run("fit", "--config", write_config(tmp_path), "--out", tmp_path / "empty") == EXIT_USAGE
    assert run("generate", "--config", cfg, "--out", tmp_path, "--seed", -1) == EXIT_USAGE


# --------------------------------------------------------------- check

@pytest.mark.parametrize("D,code", [(1.0, EXIT_OK), (0.0, EXIT_INFEASIBLE)])
def test_check_exit_codes(tmp_path, D, code):
    io.save_model(tmp_path / "m.json", StateSpaceModel(-1.0, 1.0, 1.0, D))
    cfg = write_config(tmp_path, supply_rate={"preset": "passivity"})
    assert run("check", "--config", cfg, "--out", tmp_path, "--model", tmp_path / "m.json") == code
    validate(tmp_path / "check_report.json", "check_report")
    rep = io.read_json(tmp_path / "check_report.json")
    assert rep["feasible"] == (code == EXIT_OK)
    if rep["feasible"]:
        assert rep["verified"] and rep["certificate"]["margin"] <= -1e-7


# ------------------------------------------------------------- pipeline

def test_pipeline_lmi_only(tmp_path):
    cfg = write_config(tmp_path, algorithm={"local_constraints": False, "allow_negative_gamma": True})
    out = tmp_path / "run"
    assert run("generate", "--config", cfg, "--out", out) == EXIT_OK
    assert run("fit", "--config", cfg, "--out", out) == EXIT_OK
    validate(out / "fit_report.json", "fit_report")
    validate(out / "baseline.json", "model")
    assert run("check", "--config", cfg, "--out", out) == EXIT_INFEASIBLE
    assert run("perturb", "--config", cfg, "--out", out) == EXIT_OK
    validate(out / "perturb_report.json", "perturb_report")
    validate(out / "perturbed.json", "model")
    assert run("validate", "--config", cfg, "--out", out) == EXIT_OK
    validate(out / "validation_report.json", "validation_report")
    rep = io.read_json(out / "validation_report.json")
    assert rep["model"] == "perturbed.json"
    assert rep["triangle_bound_holds"]
    assert len(rep["nrmse_fit"]) == 2
    assert (out / "validation_000.csv").read_text().split("\n")[0] == "t,y_true,y_model"
    assert run("check", "--config", cfg, "--out", out, "--model", out / "perturbed.json") == EXIT_OK


def test_perturb_failure_is_numerical(tmp_path):
    cfg = write_config(tmp_path, n_test=0)
    out = tmp_path / "run"
    run("generate", "--config", cfg, "--out", out)
    run("fit", "--config", cfg, "--out", out)
    assert run("perturb", "--config", cfg, "--out", out) == EXIT_NUMERICAL
    validate(out / "perturb_report.json", "perturb_report")
    assert io.read_json(out / "perturb_report.json")["success"] is False


def test_validate_perfect_model(tmp_path):
    plant = StateSpaceModel([[0.0, 1.0], [-2.0, -1.0]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.5]])
    io.save_model(tmp_path / "plant.json", plant)
    cfg = write_config(tmp_path, system="plant.json", n_train=1, n_test=1,
                       supply_rate={"preset": "passivity"})
    out = tmp_path / "run"
    run("generate", "--config", cfg, "--out", out)
    assert run("validate", "--config", cfg, "--out", out, "--model", tmp_path / "plant.json") == EXIT_OK
    rep = io.read_json(out / "validation_report.json")
    assert rep["nrmse_fit"][0] == pytest.approx(100.0, abs=1e-6)
    assert rep["residual"] < 1e-12  # RK4 data vs exact ZOH model


def test_validate_dimension_mismatch(tmp_path):
    io.save_model(tmp_path / "mimo.json", StateSpaceModel(-np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2))))
    cfg = write_config(tmp_path, n_train=1, n_test=1)
    out = tmp_path / "run"
    run("generate", "--config", cfg, "--out", out)
    assert run("validate", "--config", cfg, "--out", out, "--model", tmp_path / "mimo.json") == EXIT_USAGE


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qsrid.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("generate", "fit", "check", "perturb", "validate"):
        assert cmd in proc.stdout


def test_shipped_configs_are_valid():
    root = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
    for name in ("example1.json", "example1_lmi_only.json"):
        path = os.path.join(root, name)
        validate(path, "config")
        io.RunConfig.load(path)
