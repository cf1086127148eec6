"""Oriented percolation and block construction tests: exact clusters at the
extreme densities, a brute-force reachability oracle, pathwise monotonicity
in p, and the renormalization event probe."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdre.lattice import Window, window
from cpdre.percolation import (MacroParams, cluster, cluster_levels,
                               density_slab, directions, extinction_level,
                               field_from_uniforms, full_cubes_at,
                               hit_counts, sample_independent_field,
                               wilson_ci)


def all_open_field(d, n_max, box_r):
    return field_from_uniforms(
        d, 0.5, box_r,
        np.zeros((n_max, Window(d, radius=box_r).n_sites, 2 * d)))


def test_directions_order():
    assert directions(1) == [(1,), (-1,)]
    assert directions(2) == [(1, 0), (0, 1), (-1, 0), (0, -1)]


def test_all_open_cluster_is_parity_ball():
    fld = all_open_field(1, 6, 6)
    lv = cluster_levels(fld, start=(0,), n=4)
    for n in range(5):
        got = {fld.box.sites[i] for i in np.nonzero(lv[n])[0]}
        expect = {(x,) for x in range(-n, n + 1) if (x + n) % 2 == 0}
        assert got == expect
    assert cluster(fld, (0,), 3) == {(-3,), (-1,), (1,), (3,)}
    assert extinction_level(fld, (0,)) is None


def test_all_closed_field_dies_immediately():
    fld = field_from_uniforms(
        1, 0.5, 4, np.ones((4, Window(1, radius=4).n_sites, 2)))
    assert extinction_level(fld, (0,)) == 1
    lv = cluster_levels(fld, start=(0,))
    assert len(lv) == 2 and not lv[1].any()


def test_cluster_levels_vs_bruteforce():
    """Independent BFS oracle over the raw open-edge arrays."""
    d, box_r, n = 1, 5, 5
    box = Window(d, radius=box_r)
    dirs = directions(d)
    for seed in range(10):
        fld = sample_independent_field(d, 0.7, n, box_r, seed)
        lv = cluster_levels(fld, start=(0,), n=n)
        reach = {(0,)}
        for level in range(1, len(lv)):
            nxt = set()
            for x in reach:
                i = box.site_index(x)
                for j, u in enumerate(dirs):
                    y = tuple(a + b for a, b in zip(x, u))
                    if box.site_index(y) < 0:
                        continue
                    if fld.open_[level - 1, i, j]:
                        nxt.add(y)
            reach = nxt
            got = {box.sites[i] for i in np.nonzero(lv[level])[0]}
            assert got == reach, (seed, level)
            if not reach:
                break


@given(st.integers(0, 500), st.floats(0.2, 0.5), st.floats(0.05, 0.45))
@settings(max_examples=25, deadline=None)
def test_monotone_in_p(seed, p_lo, gap):
    """Shared uniforms: the p-cluster grows with p at every level."""
    p_hi = p_lo + gap
    rng = np.random.Generator(np.random.Philox(key=seed))
    box_r, n = 4, 4
    u = rng.random((n, Window(1, radius=box_r).n_sites, 2))
    f_lo = field_from_uniforms(1, p_lo, box_r, u)
    f_hi = field_from_uniforms(1, p_hi, box_r, u)
    assert np.all(f_lo.open_ <= f_hi.open_)
    lv_lo = cluster_levels(f_lo, start=(0,), n=n)
    lv_hi = cluster_levels(f_hi, start=(0,), n=n)
    for k in range(len(lv_lo)):
        assert np.all(lv_lo[k] <= lv_hi[k])


def test_hit_counts_all_open():
    fld = all_open_field(1, 8, 8)
    levels, r1 = hit_counts(fld, (2,), n_hits=3)
    # (2, k) is first reached at k=2, then every second level
    assert levels == [2, 4, 6]
    assert r1 == 2


def test_density_slab_all_open():
    fld = all_open_field(1, 6, 6)
    # even-sublattice start: P_n covers every site of matching parity
    for n in (1, 2, 3):
        count = density_slab(fld, n, 3)
        expect = len([x for x in range(-3, 4) if (abs(x) + n) % 2 == 0])
        assert count == expect


def test_field_sampling_density():
    fld = sample_independent_field(1, 0.3, 20, 10, seed=4)
    frac = fld.open_.mean()
    n = fld.open_.size
    se = np.sqrt(0.3 * 0.7 / n)
    assert abs(frac - 0.3) < 5 * se
    # determinism
    fld2 = sample_independent_field(1, 0.3, 20, 10, seed=4)
    assert np.array_equal(fld.open_, fld2.open_)


def test_wilson_ci():
    lo, hi = wilson_ci(0, 0)
    assert (lo, hi) == (0.0, 1.0)
    lo, hi = wilson_ci(90, 100)
    # frozen against the closed-form Wilson score interval
    z = 1.96
    ph, n = 0.9, 100
    mid = (ph + z * z / (2 * n)) / (1 + z * z / n)
    half = z * np.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) \
        / (1 + z * z / n)
    assert lo == pytest.approx(mid - half, abs=1e-12)
    assert hi == pytest.approx(mid + half, abs=1e-12)
    assert 0 < lo < 0.9 < hi < 1


def test_full_cubes_at():
    win = window(1, 5)
    eta = np.zeros(win.n_sites, dtype=np.uint8)
    assert len(full_cubes_at(eta, win, 1)) == 0
    # infect [-2, 2]: cubes x+[-1,1] fully infected for x in {-1, 0, 1}
    for x in range(-2, 3):
        eta[win.site_index((x,))] = 1
    centers = full_cubes_at(eta, win, 1)
    got = sorted(win.site_of_index(i) for i in centers)
    assert got == [(-1,), (0,), (1,)]


def test_macro_params_validation():
    p = MacroParams(2, 4, 3.0, 0.9)
    assert p.n < p.a
    with pytest.raises(ValueError):
        MacroParams(4, 4, 3.0, 0.9)


def test_probe_block_event_calibrated_region():
    from cpdre.model import cpdp_model
    from cpdre.percolation import probe_block_event

    model = cpdp_model(8.0, 1.0, 2.0, 1.0, 2.0, 1.0)
    p_hat, (lo, hi), trials = probe_block_event(
        model, 1, MacroParams(2, 4, 3.0, 0.9), trials=60, master_seed=5)
    assert trials == 60
    assert 0 <= lo <= p_hat <= hi + 1e-9 and hi <= 1
    assert p_hat >= 0.8  # calibrated parameters sit well above the target


def test_block_coupling_level_audit():
    from cpdre.graphical import build_catalog, sample_stream
    from cpdre.model import cpdp_model
    from cpdre.percolation import build_block_coupling

    cat = build_catalog(window(1, 60),
                        cpdp_model(8.0, 1.0, 2.0, 1.0, 2.0, 1.0))
    params = MacroParams(2, 4, 3.0, 0.9)
    n_levels = 4
    horizon = (5 * (n_levels - 1) + 6) * params.b + 1
    stream = sample_stream(cat, horizon, 11)
    origin = cat.window.site_index((0,))
    bc = build_block_coupling(cat, stream, params, origin, 0.0, n_levels,
                              filler_seed=1)
    assert len(bc.level_rows) >= 1
    total_viol = 0
    for k, lr in enumerate(bc.level_rows, start=1):
        assert lr["level"] == k
        assert 0 <= lr["open_edges"] <= lr["tracked_edges"]
        total_viol += lr["violations"]
    # the implication certificate must hold on every tracked level
    assert total_viol == 0


def test_even_sublattice_definition():
    box = Window(2, radius=2)
    evens = [x for x in box.sites if sum(abs(c) for c in x) % 2 == 0]
    # frozen count for the 5x5 box
    assert len(evens) == 13
    assert all((abs(a) + abs(b)) % 2 == 0 for a, b in evens)
