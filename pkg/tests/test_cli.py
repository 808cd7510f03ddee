import csv
import json
import math

import numpy as np
import pytest
import yaml

from akrbdo.cli import main
from akrbdo.config import RunConfig, dump_config, load_config

PF3 = 1.3498980316301e-3

SMALL_REFINE = {"initial_doe_size": 10, "batch": 5, "candidates": 1000, "chains": 10, "max_calls": 60, "grid_points": 11}


def _write(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def _linear(**extra):
    return {"problem": {"kind": "benchmark", "name": "LINEAR", "params": {"n": 2, "beta_true": 3.0}}, "seed": 1, **extra}


def _read_table(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# manifest_hash=")
    return lines[0].split("=", 1)[1], list(csv.DictReader(lines[1:]))


def test_reliability_linear(tmp_path):
    out = tmp_path / "out"
    assert main(["reliability", "--config", _write(tmp_path, _linear()), "--out", str(out)]) == 0
    res = json.loads((out / "result.json").read_text())
    assert abs(res["pf"] - PF3) <= 3 * res["cov"] * PF3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "completed"
    assert res["manifest_hash"] == manifest["config_hash"]
    h, rows = _read_table(out / "levels.csv")
    assert h == manifest["config_hash"] and len(rows) == res["levels"]


def test_missing_field_exit_2(tmp_path, capsys):
    assert main(["reliability", "--config", _write(tmp_path, {"seed": 1}), "--out", str(tmp_path / "o")]) == 2
    assert "problem" in capsys.readouterr().err


def test_unknown_field_exit_2(tmp_path):
    cfg = _linear(bogus=1)
    assert main(["reliability", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_unknown_benchmark_exit_2(tmp_path):
    cfg = {"problem": {"name": "NOPE"}}
    assert main(["reliability", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_pf_floor_exit_3(tmp_path):
    cfg = _linear(subset={"samples_per_level": 1000, "max_levels": 2})
    cfg["problem"]["params"]["beta_true"] = 30.0
    out = tmp_path / "o"
    assert main(["reliability", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 3
    assert json.loads((out / "manifest.json").read_text())["status"] == "numerical_failure"


def test_manifest_hash_mismatch(tmp_path):
    out = tmp_path / "o"
    path = _write(tmp_path, _linear(subset={"samples_per_level": 1000}))
    assert main(["reliability", "--config", path, "--out", str(out)]) == 0
    assert main(["reliability", "--config", path, "--out", str(out)]) == 0
    assert main(["reliability", "--config", path, "--out", str(out), "--seed", "2"]) == 2


def test_same_config_byte_identical(tmp_path):
    path = _write(tmp_path, _linear(subset={"samples_per_level": 2000}))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["reliability", "--config", path, "--out", str(a)]) == 0
    assert main(["reliability", "--config", path, "--out", str(b), "--threads", "1"]) == 0
    for name in ("result.json", "levels.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_refine_infinite_tolerance_no_rounds(tmp_path):
    cfg = _linear(refine={**SMALL_REFINE, "epsilon_pf0": math.inf})
    out = tmp_path / "o"
    assert main(["refine", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["limit_states"][0]["rounds"] == 0
    assert res["limit_states"][0]["calls"] == 10


def test_refine_outputs(tmp_path):
    cfg = _linear(refine=SMALL_REFINE, subset={"samples_per_level": 2000})
    out = tmp_path / "o"
    assert main(["refine", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    _, doe = _read_table(out / "doe_0.csv")
    y = np.array([float(r["output"]) for r in doe])
    p = np.array([float(r["prediction"]) for r in doe])
    assert np.allclose(p, y, atol=1e-8 * max(1.0, np.abs(y).max()))
    _, grid = _read_table(out / "grid_0.csv")
    assert len(grid) == 11 * 11
    assert all(float(r["lower"]) <= float(r["mean"]) <= float(r["upper"]) for r in grid)
    res = json.loads((out / "result.json").read_text())
    assert res["reference_pf"] == pytest.approx(PF3)
    assert (out / "surrogate_0.json").exists()


def test_ddo_closed_form(tmp_path):
    cfg = {"problem": {"name": "RBDO-CLOSED-FORM"}, "beta_targets": [3.0]}
    out = tmp_path / "o"
    assert main(["ddo", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    res = json.loads((out / "ddo.json").read_text())
    assert abs(sum(res["design"]) - 4.0) <= 1e-3
    assert res["converged"]


def test_ddo_requires_design_problem(tmp_path):
    assert main(["ddo", "--config", _write(tmp_path, _linear()), "--out", str(tmp_path / "o")]) == 2


def test_verify_closed_form(tmp_path):
    cfg = {"problem": {"name": "RBDO-CLOSED-FORM"}, "design_point": [4.1213, 4.1213], "verification_samples": 10_000}
    out = tmp_path / "o"
    assert main(["verify", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "verification.json").read_text())
    assert rep["system"]["beta"] == pytest.approx(3.0, abs=0.15)
    assert rep["deterministic_feasible"]


def test_design_point_mismatch_exit_2(tmp_path):
    cfg = {"problem": {"name": "RBDO-CLOSED-FORM"}, "design_point": [1.0]}
    assert main(["verify", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_marginal_cov_entry(tmp_path):
    cfg = {
        "problem": {
            "name": "LINEAR",
            "marginals": [
                {"name": "u1", "family": "Normal", "mean": 2.0, "cov": 0.5},
                {"name": "u2", "family": "Normal", "mean": 0.0, "std_dev": 1.0},
            ],
        }
    }
    config = load_config(_write(tmp_path, cfg))
    from akrbdo.config import build_benchmark

    assert build_benchmark(config).spec.marginals[0].std_dev == pytest.approx(1.0)
    cfg["problem"]["marginals"][0]["std_dev"] = 1.0
    assert main(["verify", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_config_round_trip(tmp_path):
    cfg = _linear(refine=SMALL_REFINE, beta_targets=[2.5])
    config = load_config(_write(tmp_path, cfg))
    again = RunConfig.model_validate(yaml.safe_load(dump_config(config)))
    assert again == config
    assert dump_config(again) == dump_config(config)


@pytest.mark.parametrize("name", ["linear_reliability", "series_refine", "closed_form_rbdo", "hull_rbdo"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    from akrbdo.config import build_benchmark

    config = load_config(Path(__file__).resolve().parents[1] / "configs" / f"{name}.yaml")
    assert build_benchmark(config).limit_states


def test_refine_burn_in_option(tmp_path):
    cfg = _linear(refine={**SMALL_REFINE, "burn_in": 5})
    assert load_config(_write(tmp_path, cfg)).refine.burn_in == 5
    bad = _linear(refine={**SMALL_REFINE, "burn_in": -1})
    assert main(["refine", "--config", _write(tmp_path, bad, "bad.yaml"), "--out", str(tmp_path / "o")]) == 2
    out = tmp_path / "short"
    assert main(["refine", "--config", _write(tmp_path, cfg, "short.yaml"), "--out", str(out)]) == 0
