import json
import math
from pathlib import Path

import numpy as np
import pytest

import regtails.cli as cli
from regtails.config import (
    config_from_dict,
    config_from_json,
    config_to_dict,
    config_to_json,
)
from regtails.errors import ConfigError, NonConvergenceError


def _linear_doc(**overrides):
    doc = {
        "model": {"name": "linear", "box": {"lower": [0.0], "upper": [5.0]},
                  "theta_true": [2.0]},
        "noise": {"driver": "gaussian", "kernel": None},
        "grid": {"T": 5.0, "n_steps": 500},
        "norming": "d_T",
        "montecarlo": {"n_trials": 300, "master_seed": 11,
                       "R_grid": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5]},
        "bounds": {"beta": "auto", "B_cal": {"mode": "calibrate", "fraction": 0.1},
                   "c0": "estimate", "equivalence_pairs": 300},
        "output": {"directory": "out"},
    }
    doc.update(overrides)
    return doc


def _write_config(tmp_path, doc, name="cfg.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# -- config parsing ---------------------------------------------------------


def test_round_trip_identity():
    cfg = config_from_dict(_linear_doc())
    again = config_from_json(config_to_json(cfg))
    assert cfg == again
    assert config_to_dict(cfg) == config_to_dict(again)


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d["grid"].update(n_steps=0), "grid.n_steps"),
    (lambda d: d["grid"].update(T=-1.0), "grid.T"),
    (lambda d: d["montecarlo"].update(R_grid=[1.0, 0.5]), "montecarlo.R_grid"),
    (lambda d: d["montecarlo"].update(n_trials=0), "montecarlo.n_trials"),
    (lambda d: d["model"].update(theta_true=[5.0]), "model.theta_true"),
    (lambda d: d["model"]["box"].update(lower=[5.0]), "model.box"),
    (lambda d: d["noise"].update(driver="levy"), "noise.driver"),
    (lambda d: d["model"].update(name="spline"), "model.name"),
    (lambda d: d["output"].update(formats=["xlsx"]), "output.formats"),
    (lambda d: d["bounds"]["B_cal"].update(mode="guess"), "bounds.B_cal.mode"),
])
def test_validation_names_offending_field(mutate, field):
    doc = _linear_doc()
    mutate(doc)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        config_from_dict(doc)


def test_norming_default_and_validation():
    doc = _linear_doc()
    del doc["norming"]
    assert config_from_dict(doc).norming == "d_T"
    doc["norming"] = "diag"
    with pytest.raises(ConfigError, match="norming"):
        config_from_dict(doc)


# -- CLI ----------------------------------------------------------------------


def test_tails_outputs_and_rerun_identical(tmp_path):
    cfg_path = _write_config(tmp_path, _linear_doc())
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert cli.main(["tails", "--config", cfg_path, "--out", str(out1)]) == 0
    assert cli.main(["tails", "--config", cfg_path, "--out", str(out2), "--workers", "2"]) == 0
    for name in ("tails.csv", "tails_meta.json", "tails_plot.tsv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    header = (out1 / "tails.csv").read_text().splitlines()
    assert header[2] == "R,count,n,p_hat,ci_low,ci_high,envelope,verdict"
    meta = json.loads((out1 / "tails_meta.json").read_text())
    assert meta["config"]["montecarlo"]["master_seed"] == 11
    assert "consistency_envelope" in meta["notes"]
    assert meta["version"]
    assert isinstance(meta["overall_pass"], bool)


def test_seed_override_changes_results(tmp_path):
    cfg_path = _write_config(tmp_path, _linear_doc())
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert cli.main(["tails", "--config", cfg_path, "--out", str(out1), "--seed", "99"]) == 0
    assert cli.main(["tails", "--config", cfg_path, "--out", str(out2)]) == 0
    assert (out1 / "tails.csv").read_bytes() != (out2 / "tails.csv").read_bytes()
    meta = json.loads((out1 / "tails_meta.json").read_text())
    assert meta["config"]["montecarlo"]["master_seed"] == 99


def test_invalid_config_exits_2(tmp_path):
    doc = _linear_doc()
    doc["grid"]["n_steps"] = 0
    cfg_path = _write_config(tmp_path, doc)
    assert cli.main(["tails", "--config", cfg_path, "--out", str(tmp_path / "x")]) == 2


def test_oversized_beta_exits_2_with_max_admissible(tmp_path, capsys):
    doc = _linear_doc()
    doc["bounds"] = {"beta": 10.0, "c0": 1.0}
    cfg_path = _write_config(tmp_path, doc)
    assert cli.main(["tails", "--config", cfg_path, "--out", str(tmp_path / "x")]) == 2
    err = capsys.readouterr().err
    assert "maximal admissible beta" in err
    assert "0.0625" in err


def test_runtime_failure_exits_3(tmp_path, monkeypatch):
    cfg_path = _write_config(tmp_path, _linear_doc())

    def boom(cfg, workers=1):
        raise NonConvergenceError("too many failed fits")

    monkeypatch.setattr(cli, "run_trials", boom)
    assert cli.main(["tails", "--config", cfg_path, "--out", str(tmp_path / "x")]) == 3


def test_missing_config_exits_2(tmp_path):
    assert cli.main(["tails", "--config", str(tmp_path / "nope.json")]) == 2


def test_simulate_outputs(tmp_path):
    doc = _linear_doc()
    doc["noise"] = {"driver": "gaussian", "kernel": {"form": "exponential", "rate": 1.0}}
    doc["grid"] = {"T": 2.0, "n_steps": 200}
    doc["montecarlo"]["n_trials"] = 800
    cfg_path = _write_config(tmp_path, doc)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", cfg_path, "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", cfg_path, "--out", str(out2)]) == 0
    summary = json.loads((out1 / "simulate_summary.json").read_text())
    assert summary["covariance"][0]["within_4se"]
    assert summary["covariance"][0]["theory"] == pytest.approx(0.5, rel=1e-5)
    paths = sorted(out1.glob("path_*.tsv"))
    assert paths
    # byte-identical rerun
    assert paths[0].read_bytes() == (out2 / paths[0].name).read_bytes()


def test_simulate_series_mode(tmp_path):
    doc = _linear_doc()
    doc["noise"] = {"driver": "gaussian", "kernel": None,
                    "basis": {"family": "haar", "n_terms": 512, "horizon": 2.0}}
    doc["grid"] = {"T": 1.0, "n_steps": 8}
    doc["montecarlo"]["n_trials"] = 3000
    cfg_path = _write_config(tmp_path, doc)
    out = tmp_path / "ser"
    assert cli.main(["simulate", "--config", cfg_path, "--out", str(out)]) == 0
    summary = json.loads((out / "simulate_summary.json").read_text())
    assert summary["mode"] == "series_construction"
    assert summary["all_within_4se"]


def test_check_filtered_rademacher_passes(tmp_path):
    doc = _linear_doc()
    doc["model"] = {"name": "exp_inner", "parameters": {"regressors": "constant"},
                    "box": {"lower": [-0.5], "upper": [0.5]}, "theta_true": [0.0]}
    doc["noise"] = {"driver": "rademacher", "kernel": {"form": "exponential", "rate": 1.0}}
    doc["grid"] = {"T": 1.0, "n_steps": 100}
    doc["norming"] = "s_T"
    doc["bounds"] = {"equivalence_pairs": 300}
    cfg_path = _write_config(tmp_path, doc)
    out = tmp_path / "chk"
    assert cli.main(["check", "--config", cfg_path, "--out", str(out)]) == 0
    report = json.loads((out / "check_report.json").read_text())
    assert report["verdicts"]["mgf_raw"] is True
    assert report["verdicts"]["mgf_filtered"] is True
    assert report["verdicts"]["quadratic_form"] is True
    assert report["verdicts"]["equivalence_bracket"] is True
    assert report["c0_theory"] == pytest.approx(math.exp(-1.0), rel=1e-9)
    assert report["b2"] > 0


def test_check_negative_control_fails_but_exits_0(tmp_path):
    doc = _linear_doc()
    doc["noise"] = {"driver": "centered_exponential", "kernel": None}
    doc["grid"] = {"T": 1.0, "n_steps": 100}
    doc["bounds"] = {"equivalence_pairs": 300}
    cfg_path = _write_config(tmp_path, doc)
    out = tmp_path / "neg"
    assert cli.main(["check", "--config", cfg_path, "--out", str(out)]) == 0
    report = json.loads((out / "check_report.json").read_text())
    assert report["verdicts"]["mgf_raw"] is False


def test_constants_subcommand(tmp_path, capsys):
    doc = _linear_doc()
    doc["bounds"] = {"c0": 1.0, "beta": "auto"}
    cfg_path = _write_config(tmp_path, doc)
    assert cli.main(["constants", "--config", cfg_path]) == 0
    payload = json.loads(capsys.readouterr().out)
    # white-increment noise: f0 = 1/(2 pi), d0 = 1, b = c0/16 - beta
    assert payload["constants"]["d0"] == pytest.approx(1.0, rel=1e-12)
    assert payload["constants"]["b"] == pytest.approx(1.0 / 16.0, rel=2e-3)
    assert payload["extras"]["f0_source"] == "white_noise"
