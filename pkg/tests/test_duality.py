"""Dual process tests: rate mirroring, the exact pathwise duality identity,
and the stationary-start distributional check."""

import numpy as np
import pytest

from cpdre.duality import (conditional_duality_check, dual_run, mirror_model,
                           mirror_rates, require_reversible,
                           stationary_background_dist,
                           stationary_duality_check)
from cpdre.engine import CoupledRun, CopySpec, evolve
from cpdre.graphical import build_catalog, sample_stream, stream_rng
from cpdre.lattice import window
from cpdre.model import (IndependentUpdates, Model, RateTable,
                         basic_contact_model, cpdp_model, switching_model)


def test_mirror_rates_involution():
    rng = np.random.Generator(np.random.Philox(key=3))
    rates = RateTable(1, rng.random((2, 2, 2)), rng.random(2))
    m = mirror_rates(rates)
    assert np.array_equal(m.lam, np.swapaxes(rates.lam, 0, 2))
    assert np.array_equal(m.r, rates.r)
    mm = mirror_rates(m)
    assert np.array_equal(mm.lam, rates.lam)


def test_mirror_model_self_dual_cpdp():
    # cpdp rates depend only on the edge level: mirroring is the identity
    model = cpdp_model(2.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    m = mirror_model(model)
    assert np.array_equal(m.rates.lam, model.rates.lam)


@pytest.mark.parametrize("model", [
    basic_contact_model(1.5, 1.0),
    cpdp_model(2.0, 1.0, 1.0, 1.0, 1.0, 1.0),
    switching_model(0.5, 1.0, 1.5, 2.5, 1.5, 0.5, 1.0, 2.0),
])
def test_conditional_duality_identity_exact(model):
    """The pathwise identity must hold on every realization."""
    win = window(1, 4)
    cat = build_catalog(win, model)
    N = model.N
    for seed in range(25):
        stream = sample_stream(cat, 4.0, seed)
        rng = stream_rng(seed, role=9)
        eta0 = (rng.random(win.n_sites) < 0.3).astype(np.uint8)
        xi0 = rng.integers(0, N + 1, win.n_cells).astype(np.uint8)
        eta_pr = (rng.random(win.n_sites) < 0.3).astype(np.uint8)
        traj = evolve(CoupledRun(cat, stream, [CopySpec("a", eta0, xi0)]),
                      4.0, snap_times=np.zeros(0))
        for t in (1.0, 2.5, 4.0):
            fwd, dua, equal = conditional_duality_check(traj, t, eta_pr)
            assert equal, (seed, t, fwd, dua)


def test_dual_run_empty_target():
    model = basic_contact_model(1.5, 1.0)
    win = window(1, 3)
    cat = build_catalog(win, model)
    stream = sample_stream(cat, 2.0, 0)
    eta0 = np.ones(win.n_sites, dtype=np.uint8)
    traj = evolve(CoupledRun(
        cat, stream,
        [CopySpec("a", eta0, np.zeros(win.n_cells, dtype=np.uint8))]),
        2.0, snap_times=np.zeros(0))
    out = dual_run(traj, 2.0, np.zeros(win.n_sites, dtype=np.uint8))
    assert not out.any()


def test_stationary_background_dist():
    model = cpdp_model(2.0, 1.0, 1.0, 3.0, 2.0, 2.0)
    ps, pe = stationary_background_dist(model)
    assert np.allclose(ps, [0.75, 0.25])
    assert np.allclose(pe, [0.5, 0.5])
    model = switching_model(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0)
    ps, pe = stationary_background_dist(model)
    assert np.allclose(ps, [2 / 3, 1 / 3])


def test_require_reversible():
    require_reversible(cpdp_model(2.0, 1.0, 1.0, 1.0, 1.0, 1.0))
    # a 3-state cycle chain is irreversible
    Q = np.array([[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]])
    lam = np.ones((3, 3, 3))
    model = Model(RateTable(2, lam, np.ones(3)), IndependentUpdates(Q, Q))
    with pytest.raises(ValueError):
        require_reversible(model)


def test_stationary_duality_small_z():
    model = cpdp_model(2.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    win = window(1, 6)
    p_fwd, p_dual, z = stationary_duality_check(
        model, win, [win.site_index((0,))], [win.site_index((1,))],
        t=2.0, n_trials=4000, master_seed=21)
    assert 0 < p_fwd < 1 and 0 < p_dual < 1
    assert abs(z) < 5.0
