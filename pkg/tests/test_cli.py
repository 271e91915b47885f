from __future__ import annotations

import json
import os

import numpy as np
import pytest

from singlab.cli import EXIT_CHECKS, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from singlab.errors import ConfigError
from singlab.fractal_sets import BoxUnion
from singlab.scenarios import ScenarioConfig, load_schema


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


# configuration validation


def test_schema_shipped_in_docs_matches_package():
    docs = os.path.join(os.path.dirname(__file__), "..", "docs", "scenario.schema.json")
    with open(docs) as fh:
        assert json.load(fh) == load_schema()


def test_schema_rejects_unknown_key():
    with pytest.raises(ConfigError, match="schema"):
        ScenarioConfig.from_dict({"name": "stein", "bogus": 1})


def test_gamma_window_quoted():
    doc = {"name": "contrast", "gammas": [2.1, 2.05, 2.03, 2.3]}
    with pytest.raises(ConfigError, match=r"gamma_4=2.3 violates 2 < gamma_k < \(N - d_k\)/2"):
        ScenarioConfig.from_dict(doc)


def test_gamma_lower_edge_quoted():
    with pytest.raises(ConfigError, match="gamma_1=2.0 violates 2 < gamma_k"):
        ScenarioConfig.from_dict({"name": "contrast", "gammas": [2.0, 2.1, 2.1, 2.1]})


def test_ladder_window_quoted():
    with pytest.raises(ConfigError, match="violates N-5 < d_k < N-4"):
        ScenarioConfig.from_dict({"name": "pointwise", "ladder_eps": 0.6})


def test_small_ambient_dimension_rejected():
    with pytest.raises(ConfigError, match="N >= 5"):
        ScenarioConfig.from_dict({"name": "contrast", "N": 4, "domain_lo": [0] * 4, "domain_hi": [1] * 4})


def test_overlapping_regions_rejected():
    box = {"lo": [0.0] * 5, "hi": [0.6] + [0.125] * 4}
    with pytest.raises(ConfigError, match="overlap"):
        ScenarioConfig.from_dict({"name": "contrast", "regular": [box], "singular": [box]})


def test_admissible_configs_accepted():
    for name in ("stein", "dense", "contrast", "pointwise", "radial", "hp-sweep"):
        cfg = ScenarioConfig.from_dict({"name": name})
        assert cfg.name == name


def test_default_ladder():
    cfg = ScenarioConfig.default("contrast")
    assert cfg.ladder() == [0.5, 0.75, 0.875, 0.9375]
    assert all(2 < g < 0.5 * (5 - d) for g, d in zip(cfg.gamma_schedule(), cfg.ladder()))


# exit codes


def test_bad_arguments_exit_config(capsys):
    assert main(["nosuch"]) == EXIT_CONFIG
    assert main(["cantor"]) == EXIT_CONFIG


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"name": "stein", "gamma": 1.5})
    assert main(["scenario", "stein", "--config", cfg]) == EXIT_CONFIG
    assert "0 < gamma < 1" in capsys.readouterr().err


def test_mismatched_scenario_name(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"name": "radial"})
    assert main(["scenario", "stein", "--config", cfg]) == EXIT_CONFIG


def test_missing_file_is_runtime_failure(tmp_path, capsys):
    assert main(["dimest", "--set", str(tmp_path / "missing.json")]) == EXIT_RUNTIME


def test_cantor_then_dimest(tmp_path, capsys):
    assert main(["cantor", "--dim", "0.5", "--generation", "12", "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "set.json").read_text())
    assert doc["generation"] == 12 and len(doc["boxes"]) == 4096
    assert main(["dimest", "--set", str(tmp_path / "set.json"), "--expect", "0.5"]) == EXIT_OK
    grill_dir = tmp_path / "grill"
    assert main(["cantor", "--dim", "0.5", "--generation", "8", "--ambient", "2", "--thick", "1",
                 "--out", str(grill_dir)]) == EXIT_OK
    s = str(grill_dir / "set.json")
    args = ["dimest", "--set", s, "--scale-range", "1e-3", "0.1"]
    assert main(args + ["--expect", "1.5"]) == EXIT_OK
    assert main(args + ["--expect", "1.0"]) == EXIT_CHECKS


def test_pipeline_rhs_solve_fit_sdmap(tmp_path, capsys):
    s = write(tmp_path / "point.json", BoxUnion.point([0.5] * 5).to_dict())
    dom = ["0,0,0,0,0", "1,1,1,1,1"]
    out = str(tmp_path / "run")
    assert main(["hp-check", "--set", s, "--gamma", "2.25", "--p", "2", "--domain", *dom, "--out", out]) == EXIT_OK
    rep = json.loads((tmp_path / "run" / "hp_check.json").read_text())
    assert rep["verdict"] == "guaranteed"
    assert main(["rhs-build", "--sets", s, "--gammas", "2.25", "--domain", *dom, "--budget", "1000",
                 "--out", out]) == EXIT_OK
    rhs = str(tmp_path / "run" / "rhs.json")
    assert main(["solve", "--rhs", rhs, "--nodes", "17", "--out", out]) == EXIT_OK
    assert (tmp_path / "run" / "u.bin").exists() and (tmp_path / "run" / "u.bin.json").exists()
    assert main(["fit-exponent", "--field", str(tmp_path / "run" / "u.bin"), "--point", "0.5,0.5,0.5,0.5,0.5",
                 "--window", "0.125", "0.45", "--out", out]) == EXIT_OK
    fit = json.loads((tmp_path / "run" / "fit.json").read_text())
    assert fit["exponent"] < 0
    assert main(["sdmap", "--rhs", rhs, "--cell", "0.015625", "--spacing", "0.5", "--radii", "0.4", "0.2",
                 "--out", out]) == EXIT_OK
    m = json.loads((tmp_path / "run" / "sdmap.json").read_text())
    assert m["usc_violations"] == [] and len(m["map"]["points"]) == 32


def test_rhs_build_window_violation(tmp_path, capsys):
    s = write(tmp_path / "point.json", BoxUnion.point([0.5] * 5).to_dict())
    code = main(["rhs-build", "--sets", s, "--gammas", "2.6", "--domain", "0,0,0,0,0", "1,1,1,1,1",
                 "--budget", "500"])
    assert code == EXIT_CONFIG
    assert "(N - dim_upper)/2" in capsys.readouterr().err


def test_threads_flag_sets_environment(tmp_path, capsys, monkeypatch):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    assert main(["cantor", "--dim", "0.5", "--generation", "3", "--threads", "2"]) == EXIT_OK
    assert os.environ["OMP_NUM_THREADS"] == "2"


# scenarios through the command line


def test_stein_scenario_outputs(tmp_path, capsys):
    out = tmp_path / "stein"
    assert main(["scenario", "stein", "--out", str(out), "--seed", "3"]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["summary"]["all_passed"] and rep["criteria"] == [9]
    assert "box-counting" in rep["note"]
    assert (out / "profile.csv").exists() and (out / "plots.gp").exists()
    assert "wall_time" not in (out / "report.json").read_text()
    assert "total" in json.loads((out / "timings.json").read_text())
    x, u = np.loadtxt(out / "profile.csv", delimiter=",", skiprows=1, unpack=True)
    assert len(x) == 10001
    # the profile blows up at every k/50
    for k in range(1, 50):
        near = np.abs(x - k / 50) <= 1e-4
        assert np.max(u[near]) > 50 * np.median(u)


def test_radial_scenario_report_is_deterministic(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"name": "radial", "grid3d": False})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["scenario", "radial", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["scenario", "radial", "--config", cfg, "--out", str(b)]) == EXIT_OK
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    fits = sorted(p.name for p in a.glob("fit_*.csv"))
    assert len(fits) == 3
    header = (a / fits[0]).read_text().splitlines()[0]
    assert header == "log_scale,log_value,fitted"


def test_empty_plot_section_is_omitted(tmp_path):
    from singlab.scenarios import ScenarioReport, emit_plots

    rep = ScenarioReport("demo", {})
    rep.plot_data["fit_present"] = {"x": [0.0, 1.0], "y": [0.0, 2.0], "fit": [0.0, 2.0]}
    rep.plot_data["fit_missing"] = None
    emit_plots(rep, tmp_path)
    assert (tmp_path / "fit_present.csv").exists() and not (tmp_path / "fit_missing.csv").exists()
    assert rep.omitted == ["fit_missing"] and "fit_present.csv" in rep.artifacts


def test_global_flags_before_or_after_subcommand():
    from singlab.cli import build_parser

    p = build_parser()
    before = p.parse_args(["--out", "x", "--seed", "4", "cantor", "--dim", "0.5"])
    after = p.parse_args(["cantor", "--dim", "0.5", "--out", "x", "--seed", "4"])
    assert (before.out, before.seed) == (after.out, after.seed) == ("x", 4)
