import csv
import hashlib
import json

import pytest
import yaml

from cspg.cli import ConfigError, main, parse_config
from cspg.csrecovery import load_binary
from cspg.multiindex import IndexSet

SMALL_RUN = {
    "weights": {"kind": "polynomial", "c": 1.2, "alpha": 0.25},
    "s": [8, 16, 32],
    "oversample_C": 0.05,
    "epsilon": 1e-6,
    "seed": 11,
    "test_seed": 99,
    "n_test": 40,
    "target_p": 0.5,
}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_parse_config_defaults_and_validation():
    cfg = parse_config({})
    assert cfg.s == [8, 16, 32, 64] and cfg.recovery == "bpdn"
    with pytest.raises(ConfigError, match="nosuch"):
        parse_config({"nosuch": 1})
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"seed": -1})
    with pytest.raises(ConfigError):
        parse_config({"weights": {"kind": "polynomial", "c": 1.2, "gamma": 1}})
    with pytest.raises(ConfigError):
        parse_config({"model": {"abar": 2.0, "colour": 1}})
    with pytest.raises(ConfigError, match="sweep"):
        parse_config({"sweep": {"trails": 3}})
    with pytest.raises(ConfigError):
        parse_config({"method": "simplex"})


def test_invalid_key_exits_with_config_code(tmp_path, capsys):
    path = write_cfg(tmp_path, {**SMALL_RUN, "oversample": 2})
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "oversample" in capsys.readouterr().err


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("s: [1, 2\n")
    assert main(["run", "--config", str(path)]) == 2


def test_enumerate_single_index(tmp_path):
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {"weights": {"kind": "exponential", "beta": 2.0}, "s": [2]})
    assert main(["enumerate", "--config", path, "--out", str(out)]) == 0
    iset = IndexSet.from_json((out / "index_set_s2.json").read_text())
    assert len(iset) == 1


def test_enumerate_table_bounds_hold(tmp_path):
    out = tmp_path / "o"
    s_values = [2**k for k in range(1, 11)]
    path = write_cfg(tmp_path, {"weights": {"kind": "exponential", "beta": 1.5}, "s": s_values})
    assert main(["enumerate", "--config", path, "--out", str(out)]) == 0
    with open(out / "sizes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(s_values)
    for r in rows:
        n = int(r["N"])
        assert n <= float(r["subset_bound"]) * (1 + 1e-12)
        if r["closed_form"]:
            assert float(r["subset_bound"]) <= float(r["closed_form"]) * (1 + 1e-12)


def test_enumerate_unbounded(tmp_path, capsys):
    path = write_cfg(tmp_path, {"weights": {"kind": "constant", "beta": 2.0}, "s": [64]})
    assert main(["enumerate", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "unbounded index set" in capsys.readouterr().err


def test_bounds_command(tmp_path):
    out = tmp_path / "o"
    path = write_cfg(tmp_path, {"weights": {"kind": "polynomial", "c": 2.0, "alpha": 1.0}, "s": [4, 64, 1024]})
    assert main(["bounds", "--config", path, "--out", str(out)]) == 0
    with open(out / "bounds.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["consistent"] for r in rows] == ["True"] * 3


def test_run_writes_outputs_and_round_trips(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    path = write_cfg(tmp_path, SMALL_RUN)
    assert main(["run", "--config", path, "--out", str(out1)]) == 0
    with open(out1 / "rates.csv") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == ["s", "N", "m", "l2", "l2_se", "linf", "wall_ms"]
        rows = list(reader)
    assert [int(r["s"]) for r in rows] == [8, 16, 32]
    report = json.loads((out1 / "results.json").read_text())
    assert report["rate"]["target_exponent"] == pytest.approx(-1.5)
    for run in report["runs"]:
        blob = (out1 / run["coeffs_file"]).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == run["coeffs_sha256"]
        coeffs, head = load_binary(out1 / run["coeffs_file"])
        assert coeffs.size == run["plan"]["N"] == head["N"]
    # the resolved config reproduces the run, also with more workers
    resolved = str(out1 / "config.resolved.yaml")
    assert main(["run", "--config", resolved, "--out", str(out2), "--workers", "3"]) == 0
    for run in report["runs"]:
        assert (out1 / run["coeffs_file"]).read_bytes() == (out2 / run["coeffs_file"]).read_bytes()


def test_seed_flag_changes_samples(tmp_path):
    path = write_cfg(tmp_path, {**SMALL_RUN, "s": [16]})
    assert main(["run", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", path, "--out", str(tmp_path / "b"), "--seed", "12"]) == 0
    a = (tmp_path / "a" / "coeffs_s16.bin").read_bytes()
    b = (tmp_path / "b" / "coeffs_s16.bin").read_bytes()
    assert a != b


def test_flat_model_run(tmp_path):
    cfg = {
        "model": {"abar": 2.0, "psi": {"c": 0.0, "count": 4}, "rhs": 1.0},
        "s": [8],
        "oversample_C": 0.05,
        "epsilon": 1e-6,
        "n_test": 20,
        "discretization": {"n_cells": 64, "B": 4},
    }
    out = tmp_path / "o"
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    report = json.loads((out / "results.json").read_text())
    # F is constant, so the only error left is the FEM gap to the finer reference mesh
    assert report["runs"][0]["errors"]["l2_estimate"] <= 2e-5


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = {"model": {"abar": 1.0, "psi": {"c": 3.0, "tau": 0.0, "count": 2}}, "epsilon": 1e-3, "s": [8]}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    assert "sample" in capsys.readouterr().err


@pytest.mark.parametrize("suite", ["chebyshev", "stechkin", "counting", "fem"])
def test_verify_suites_pass(suite, capsys):
    assert main(["verify", suite]) == 0
    text = capsys.readouterr().out
    assert "[PASS]" in text and "[FAIL]" not in text


def test_verify_failure_exit_code(monkeypatch):
    from cspg import verify

    monkeypatch.setitem(verify.SUITES, "fem", lambda: [verify.Check("forced", False, 0)])
    assert main(["verify", "fem"]) == 4


def test_sweep_oversample(tmp_path):
    cfg = {
        "weights": {"kind": "exponential", "beta": 1.1},
        "s": [20],
        "sweep": {"index_s": 128, "N": 200, "C": [0.004, 0.008], "trials": 10, "seed": 5},
    }
    out = tmp_path / "o"
    assert main(["sweep-oversample", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0
    data = json.loads((out / "sweep.json").read_text())
    assert data["N"] == 200 and [r["m"] for r in data["rows"]] == [12, 23]
    assert data["smallest_C_95"] == 0.008
