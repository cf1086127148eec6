"""Unit tests for the analysis package on synthetic harness outputs."""

import csv
import json
import os
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

import cpdre_analysis
from cpdre_analysis import (AnalysisError, find_runs, load_csv, plot_shape,
                            plot_tails, report)
from cpdre_analysis.shape import hull_symmetric, hull_table
from cpdre_analysis.tails import fit_log_slope

SRC_DIR = os.path.join(os.path.dirname(cpdre_analysis.__file__))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def make_run(root, name="shaperun", mu=(0.25, 0.25), ci_half=0.03,
             with_hits=True, with_tails=True):
    """Build a minimal synthetic run directory."""
    run = os.path.join(root, name)
    os.makedirs(run, exist_ok=True)
    _write_csv(os.path.join(run, "summary.csv"),
               ["check", "value", "threshold", "passed"],
               [("demo_check", 1, "== 1", 1)])
    with open(os.path.join(run, "manifest.json"), "w") as f:
        json.dump({"config": {"preset": "shape", "trials": 4,
                              "seed": 0}, "master_seed": 0}, f)
    rows = []
    for ray, m in enumerate(mu):
        rows.append(("xi_zero", ray, 10, m, m, m - ci_half, m + ci_half))
    _write_csv(os.path.join(run, "shape.csv"),
               ["arm", "ray", "n", "t_over_n_mean", "mu_hat", "ci_lo",
                "ci_hi"], rows)
    if with_hits:
        hit_rows = []
        for trial in range(4):
            for ray, m in enumerate(mu):
                for n in (2, 4, 6, 8, 10):
                    hit_rows.append(("xi_zero", trial, ray, n, m * n, 0))
        _write_csv(os.path.join(run, "hits.csv"),
                   ["arm", "trial", "ray", "n", "t", "censor"], hit_rows)
    if with_tails:
        t = np.arange(2.0, 21.0, 2.0)
        p = np.exp(-0.8 * t)
        _write_csv(os.path.join(run, "tails.csv"),
                   ["t", "n_finite_gt_t", "p", "log_p"],
                   [(tt, int(pp * 1e6), pp, np.log(pp))
                    for tt, pp in zip(t, p)])
    return run


# -- component isolation -----------------------------------------------------

def test_never_imports_simulator():
    # static check: no source file names the simulator package
    for base, _, files in os.walk(SRC_DIR):
        for name in files:
            if not name.endswith(".py"):
                continue
            text = open(os.path.join(base, name)).read()
            assert "import cpdre\n" not in text
            assert "from cpdre import" not in text
            assert "from cpdre." not in text
    # dynamic check in a clean interpreter: importing the full package
    # must not pull the simulator into sys.modules
    code = ("import sys, cpdre_analysis.cli, cpdre_analysis.shape, "
            "cpdre_analysis.tails, cpdre_analysis.report; "
            "bad = [m for m in sys.modules if m == 'cpdre' "
            "or m.startswith('cpdre.')]; "
            "sys.exit(1 if bad else 0)")
    assert subprocess.run([sys.executable, "-c", code]).returncode == 0


# -- io ----------------------------------------------------------------------

def test_load_csv_missing_column(tmp_path):
    p = tmp_path / "x.csv"
    _write_csv(p, ["a", "b"], [(1, 2)])
    with pytest.raises(AnalysisError, match="missing columns"):
        load_csv(str(p), ["a", "c"])
    with pytest.raises(AnalysisError, match="missing input"):
        load_csv(str(tmp_path / "absent.csv"), ["a"])


def test_find_runs(tmp_path):
    with pytest.raises(AnalysisError, match="no run outputs"):
        find_runs(str(tmp_path))
    r1 = make_run(tmp_path, "b_run")
    r2 = make_run(tmp_path, "a_run")
    assert find_runs(str(tmp_path)) == [r2, r1]
    assert find_runs(r1) == [r1]


# -- shape -------------------------------------------------------------------

def test_hull_table_reciprocal():
    df = pd.DataFrame({"arm": ["xi_zero"] * 2, "ray": [0, 1],
                       "n": [10, 10], "mu_hat": [0.25, 0.5],
                       "ci_lo": [0.2, 0.4], "ci_hi": [0.3, 0.6]})
    hull = hull_table(df)
    r0 = hull[hull["ray"] == 0].iloc[0]
    assert r0["speed"] == pytest.approx(4.0)
    assert r0["speed_lo"] == pytest.approx(1 / 0.3)
    assert r0["speed_hi"] == pytest.approx(1 / 0.2)
    assert hull[hull["ray"] == 1].iloc[0]["speed"] == pytest.approx(2.0)


def test_symmetric_hull_rendering(tmp_path):
    run = make_run(tmp_path, mu=(0.25, 0.26))
    out = tmp_path / "out"
    art = plot_shape(run, str(out))
    assert os.path.isfile(art["overlay"])
    hull = pd.read_csv(art["hull"])
    assert hull_symmetric(hull, "xi_zero")


def test_asymmetric_hull_detected(tmp_path):
    run = make_run(tmp_path, mu=(0.2, 0.5))
    art = plot_shape(run, str(tmp_path / "out"))
    hull = pd.read_csv(art["hull"])
    assert not hull_symmetric(hull, "xi_zero")


def test_no_survivors_placeholder(tmp_path):
    run = os.path.join(tmp_path, "empty")
    os.makedirs(run)
    _write_csv(os.path.join(run, "shape.csv"),
               ["arm", "ray", "n", "t_over_n_mean", "mu_hat", "ci_lo",
                "ci_hi"],
               [("xi_zero", 0, 10, "NA", "NA", "NA", "NA"),
                ("xi_zero", 1, 10, "NA", "NA", "NA", "NA")])
    art = plot_shape(run, str(tmp_path / "out"))
    assert art.get("placeholder") is True
    assert os.path.isfile(art["overlay"])


# -- tails -------------------------------------------------------------------

def test_fit_log_slope_exact():
    x = np.arange(1.0, 11.0)
    slope, lo, hi, flag = fit_log_slope(x, -0.8 * x + 1.3)
    assert flag == "ok"
    assert slope == pytest.approx(-0.8, abs=1e-12)
    assert lo <= slope <= hi


def test_fit_log_slope_constant_and_insufficient():
    x = np.arange(1.0, 6.0)
    slope, _, _, flag = fit_log_slope(x, np.zeros(5) + 2.0)
    assert flag == "constant" and slope == 0.0
    assert fit_log_slope([1.0, 2.0], [0.0, -1.0])[3] == "insufficient"


def test_synthetic_exponential_within_5pct(tmp_path):
    """Exponential survival with multiplicative noise: slope within 5%."""
    run = os.path.join(tmp_path, "run")
    os.makedirs(run)
    rng = np.random.default_rng(7)
    t = np.arange(1.0, 16.0)
    rate = 0.6
    p = np.exp(-rate * t) * np.exp(rng.normal(0, 0.01, len(t)))
    _write_csv(os.path.join(run, "tails.csv"),
               ["t", "n_finite_gt_t", "p", "log_p"],
               [(tt, 1, pp, np.log(pp)) for tt, pp in zip(t, p)])
    art = plot_tails(run, str(tmp_path / "out"))
    slopes = pd.read_csv(art["slopes"])
    row = slopes[slopes["source"] == "extinction_tau"].iloc[0]
    assert row["flag"] == "ok"
    assert abs(row["slope"] - (-rate)) / rate < 0.05
    assert os.path.isfile(art["plot"])


def test_censored_only_is_na_with_warning(tmp_path):
    run = os.path.join(tmp_path, "run")
    os.makedirs(run)
    _write_csv(os.path.join(run, "restart.csv"),
               ["trial", "L", "sigma", "censor", "Y_coords",
                "sigma_identity_ok", "seed_in_restart", "seed_in_base",
                "message"],
               [(0, "NA", "NA", 1, "NA", "NA", "NA", "NA", "too short")])
    with pytest.warns(UserWarning, match="censored-only"):
        art = plot_tails(run, str(tmp_path / "out"))
    slopes = pd.read_csv(art["slopes"])
    row = slopes.iloc[0]
    assert row["flag"] == "censored_only"
    assert np.isnan(row["slope"])


def test_tails_missing_data_errors(tmp_path):
    run = os.path.join(tmp_path, "bare")
    os.makedirs(run)
    with pytest.raises(AnalysisError, match="no tail CSVs"):
        plot_tails(run, str(tmp_path / "out"))


# -- report ------------------------------------------------------------------

def test_report_two_sections_and_determinism(tmp_path):
    make_run(tmp_path, "run_a")
    make_run(tmp_path, "run_b")
    out = tmp_path / "out"
    p1 = report(str(tmp_path), str(out))
    text1 = open(p1).read()
    assert text1.count("## shape") == 2
    assert "demo_check" in text1
    p2 = report(str(tmp_path), str(out))
    assert open(p2).read() == text1


def test_report_empty_dir_errors(tmp_path):
    with pytest.raises(AnalysisError):
        report(str(tmp_path), str(tmp_path / "out"))


# -- cli ---------------------------------------------------------------------

def test_cli_end_to_end(tmp_path):
    from cpdre_analysis.cli import main
    make_run(tmp_path, "run_a")
    out = tmp_path / "out"
    rc = main(["--in", str(tmp_path), "--out", str(out),
               "--kinds", "shape,tails,report"])
    assert rc == 0
    assert (out / "run_a" / "hull.csv").is_file()
    assert (out / "run_a" / "slopes.csv").is_file()
    assert (out / "report.md").is_file()
    text = (out / "report.md").read_text()
    assert "hull.csv" in text and "tails.png" in text


def test_cli_bad_kind_and_missing_inputs(tmp_path):
    from cpdre_analysis.cli import main
    assert main(["--in", str(tmp_path), "--out", str(tmp_path / "o"),
                 "--kinds", "bogus"]) == 1
    run = make_run(tmp_path, "run_a", with_hits=False, with_tails=False)
    os.remove(os.path.join(run, "shape.csv"))
    assert main(["--in", str(tmp_path), "--out", str(tmp_path / "o"),
                 "--kinds", "shape"]) == 1
