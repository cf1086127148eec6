"""Acceptance suite: full-budget statistical checks for every preset.

Each fixture runs one preset once per session at its acceptance budget and
exposes the output directory plus the parsed summary; tests then assert the
individual pass criteria and tolerances.  Budgets are sized for a single
worker; the whole suite takes roughly half an hour of compute.
"""

import csv
import math
import os
import time

import numpy as np
import pytest

from cpdre.harness import config_from_dict, run_preset

JOBS = int(os.environ.get("CPDRE_JOBS", "1"))


def _run(tmp_path_factory, name, overrides):
    cfg = config_from_dict({"preset": name, **overrides})
    out = str(tmp_path_factory.mktemp(f"acc_{name}"))
    t0 = time.monotonic()
    passed = run_preset(cfg, out, jobs=JOBS)
    elapsed = time.monotonic() - t0
    return out, _summary(out), passed, elapsed


def _summary(out_dir):
    rows = {}
    with open(os.path.join(out_dir, "summary.csv")) as f:
        for row in csv.DictReader(f):
            rows[row["check"]] = row
    return rows


def _read(out_dir, name):
    with open(os.path.join(out_dir, name)) as f:
        return list(csv.DictReader(f))


def _val(summary, check):
    v = summary[check]["value"]
    return float("nan") if v == "NA" else float(v)


def _all_passed(summary):
    return all(r["passed"] == "1" for r in summary.values())


# -- criterion 1: oracle equivalence ----------------------------------------

@pytest.fixture(scope="session")
def oracle_run(tmp_path_factory):
    return _run(tmp_path_factory, "oracle", {"trials": 100_000, "seed": 1})


def test_oracle_equivalence(oracle_run):
    out, summary, passed, elapsed = oracle_run
    assert passed and _all_passed(summary)
    for case in ("basic", "cpdp", "switching", "spin"):
        assert _val(summary, f"oracle_{case}_max_abs_z") < 4.0
    assert elapsed < 120.0
    rows = _read(out, "oracle.csv")
    assert {r["case"] for r in rows} == {"basic", "cpdp", "switching",
                                         "spin"}
    assert all(abs(float(r["z"])) < 4.0 for r in rows)


# -- criterion 2: exact pathwise couplings ----------------------------------

@pytest.fixture(scope="session")
def couplings_run(tmp_path_factory):
    return _run(tmp_path_factory, "couplings", {"trials": 10_000, "seed": 2})


def test_pathwise_couplings(couplings_run):
    out, summary, passed, elapsed = couplings_run
    assert passed and _all_passed(summary)
    for check in ("additivity", "monotone", "worst_case",
                  "conditional_duality"):
        assert _val(summary, f"couplings_{check}_violations") == 0
    rows = _read(out, "couplings.csv")
    n_realizations = {c: 0 for c in ("additivity", "monotone", "worst_case",
                                     "conditional_duality")}
    for r in rows:
        n_realizations[r["check"]] += int(r["n_points"])
        assert r["violations"] == "0"
    for c, n in n_realizations.items():
        assert n >= 10_000, c
    assert elapsed < 300.0


# -- criterion 3: rate telescoping and stream statistics --------------------

@pytest.fixture(scope="session")
def streams_run(tmp_path_factory):
    return _run(tmp_path_factory, "streams", {"seed": 3})


def test_rate_telescoping_and_streams(streams_run):
    out, summary, passed, _ = streams_run
    assert passed and _all_passed(summary)
    assert _val(summary, "streams_reconstruction_exact") == 1
    assert _val(summary, "streams_chi2_p") > 0.001
    rows = _read(out, "streams.csv")
    assert len(rows) >= 10  # one row per catalog map


def test_rate_telescoping_three_levels():
    # exactness must extend to N = 2 backgrounds
    from cpdre.graphical import build_catalog
    from cpdre.harness import _reconstruct_exact
    from cpdre.lattice import window
    from cpdre.model import IndependentUpdates, Model, RateTable

    rng = np.random.Generator(np.random.Philox(key=77))
    lam = np.round(rng.random((3, 3, 3)) * 2, 3)
    r = np.round(rng.random(3) * 1.5, 3)
    Q = np.array([[-1.0, 0.7, 0.3], [0.5, -1.0, 0.5], [0.2, 0.8, -1.0]])
    model = Model(RateTable(2, lam, r), IndependentUpdates(Q, Q))
    assert _reconstruct_exact(build_catalog(window(1, 2), model))


# -- criterion 4: stationary duality ----------------------------------------

@pytest.fixture(scope="session")
def duality_run(tmp_path_factory):
    return _run(tmp_path_factory, "duality", {"trials": 100_000, "seed": 4})


def test_stationary_duality(duality_run):
    out, summary, passed, elapsed = duality_run
    assert passed and _all_passed(summary)
    assert _val(summary, "duality_abs_z") < 4.0
    row = _read(out, "duality.csv")[0]
    assert row["model"] == "cpdp"
    assert float(row["t"]) == 5.0
    assert int(row["n_trials"]) == 100_000
    assert elapsed < 600.0


# -- criterion 5: extinction dichotomy --------------------------------------

@pytest.fixture(scope="session")
def extinction_run(tmp_path_factory):
    return _run(tmp_path_factory, "extinction", {"trials": 20_000,
                                                 "seed": 5})


def test_extinction_tail(extinction_run):
    out, summary, passed, _ = extinction_run
    assert passed and _all_passed(summary)
    assert _val(summary, "extinction_survival_rate") >= 0.3
    assert _val(summary, "extinction_tail_slope") < 0.0
    assert _val(summary, "extinction_tail_slope_ci_hi") < 0.0
    tails = _read(out, "tails.csv")
    ts = [float(r["t"]) for r in tails]
    assert min(ts) == 2.0 and max(ts) == 20.0


# -- criteria 6 and 7: linear growth and shape independence -----------------

@pytest.fixture(scope="session")
def shape_run(tmp_path_factory):
    return _run(tmp_path_factory, "shape",
                {"trials": 1800, "seed": 6,
                 "params": {"min_surviving": 200}})


def test_linear_growth(shape_run):
    out, summary, passed, _ = shape_run
    assert passed and _all_passed(summary)
    assert _val(summary, "shape_secant_stabilization") < 0.15
    assert _val(summary, "shape_growth_violation_rate") < 0.01
    # the largest fitted radius covers the stated 60-site extent
    rows = _read(out, "shape.csv")
    assert max(int(r["n"]) for r in rows) == 60


def test_shape_initial_configuration_independence(shape_run):
    out, summary, passed, _ = shape_run
    assert passed
    assert _val(summary, "shape_arms_ci_overlap") == 1
    assert _val(summary, "shape_surviving_xi_zero") >= 200
    # per-ray CI overlap, read back from the emitted estimates
    rows = _read(out, "shape.csv")
    by_arm_ray = {}
    for r in rows:
        by_arm_ray[(r["arm"], r["ray"])] = (float(r["ci_lo"]),
                                            float(r["ci_hi"]))
    for ray in ("0", "1"):
        lo0, hi0 = by_arm_ray[("xi_zero", ray)]
        lo1, hi1 = by_arm_ray[("xi_full", ray)]
        assert lo0 <= hi1 and lo1 <= hi0


# -- criterion 8: essential hitting machinery -------------------------------

@pytest.fixture(scope="session")
def essential_run(tmp_path_factory):
    return _run(tmp_path_factory, "essential", {"trials": 400, "seed": 8})


def test_essential_hitting(essential_run):
    out, summary, passed, _ = essential_run
    assert passed and _all_passed(summary)
    assert _val(summary, "essential_K_tail_slope") < 0.0
    assert _val(summary, "essential_sigma_ge_t_first") == 1
    assert _val(summary, "essential_equivalence_ok") == 1
    rows = _read(out, "essential.csv")
    assert len(rows) == 400
    for r in rows:
        if r["sigma"] not in ("NA", "inf") and r["t_first"] != "inf":
            assert float(r["sigma"]) >= float(r["t_first"]) - 1e-9
        assert r["equiv_ok"] == "1"


# -- criterion 9: block construction ----------------------------------------

@pytest.fixture(scope="session")
def block_run(tmp_path_factory):
    return _run(tmp_path_factory, "block",
                {"trials": 130, "seed": 9,
                 "params": {"min_tracked_levels": 1000}})


def test_block_construction(block_run):
    out, summary, passed, _ = block_run
    assert passed and _all_passed(summary)
    probe = _read(out, "block_probe.csv")[0]
    assert float(probe["p_hat"]) >= 0.9
    assert _val(summary, "block_tracked_levels") >= 1000
    assert _val(summary, "block_implication_violations") == 0
    rows = _read(out, "block.csv")
    assert len(rows) >= 1000
    assert all(r["violations"] == "0" for r in rows)


# -- criterion 10: restart procedure ----------------------------------------

@pytest.fixture(scope="session")
def restart_run(tmp_path_factory):
    return _run(tmp_path_factory, "restart", {"trials": 250, "seed": 10})


def test_restart_procedure(restart_run):
    out, summary, passed, _ = restart_run
    assert passed and _all_passed(summary)
    assert _val(summary, "restart_geometric_gof_p") > 0.001
    assert _val(summary, "restart_seed_in_eta_sigma") == 1
    assert _val(summary, "restart_sigma_identity") == 1
    slope_row = summary["restart_sigma_tail_slope"]
    assert slope_row["value"] != "NA"
    assert float(slope_row["value"]) < 0.0
    rows = [r for r in _read(out, "restart.csv") if r["L"] != "NA"]
    assert len(rows) >= 20
    for r in rows:
        assert r["seed_in_restart"] == "1"
        assert r["sigma_identity_ok"] == "1"


# -- criterion 11: oriented percolation diagnostics -------------------------

@pytest.fixture(scope="session")
def percolation_run(tmp_path_factory):
    return _run(tmp_path_factory, "percolation", {"trials": 10_000,
                                                  "seed": 11})


def test_percolation_diagnostics(percolation_run):
    out, summary, passed, _ = percolation_run
    assert passed and _all_passed(summary)
    assert _val(summary, "percolation_tau_tail_slope") < 0.0
    assert _val(summary, "percolation_shortfall_slope") < 0.0
    rows = _read(out, "percolation.csv")
    assert {float(r["p"]) for r in rows} == {0.95}
    tails = _read(out, "perc_tails.csv")
    # the tail must actually be populated at the first levels
    assert int(tails[0]["n_tau_gt_t"]) > 0
    sf = _read(out, "perc_shortfall.csv")
    assert int(sf[0]["n_surviving"]) > 0


# -- cross-cutting: deterministic outputs at acceptance scale ---------------

def test_manifest_recorded(oracle_run):
    out, _, _, _ = oracle_run
    import json
    manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
    assert manifest["config"]["trials"] == 100_000
    assert manifest["master_seed"] == 1
    assert math.isfinite(float(manifest["versions"]["numpy"].split(".")[0]))
