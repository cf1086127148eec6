"""
Measurement sets and times: extinction/hitting times, growth set H_t, coupled
regions K_t / Kbar_t (infection) and Psi_t / Psi'_t / Phi_t (background), and
directional shape estimation from hitting records.

"Permanently" coupled regions are horizon-censored: agreement is required at
every recorded event time up to the trajectory horizon.  All sets are exact
at event resolution (replayed from the change logs).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .engine import Trajectory
from .lattice import ball, edge_ball

FINITE = "finite"
CENSORED = "censored_at_horizon"
INFINITE = "infinite_by_criterion"


@dataclass(frozen=True)
class CensoredTime:
    value: float
    status: str

    @property
    def finite(self) -> bool:
        return self.status == FINITE


def _censored(value: float, horizon: float) -> CensoredTime:
    if np.isfinite(value):
        return CensoredTime(float(value), FINITE)
    return CensoredTime(float(horizon), CENSORED)


@dataclass(frozen=True)
class RegionSnapshot:
    time: float
    sites: frozenset
    cells: frozenset = frozenset()


def extinction_time(traj: Trajectory, copy: int = 0) -> CensoredTime:
    return _censored(traj.ext_time[copy], traj.T)


def hitting_time(traj: Trajectory, copy: int, site: int) -> CensoredTime:
    return _censored(traj.first_hit[copy, site], traj.T)


def ever_infected(traj: Trajectory, copy: int, t: float) -> RegionSnapshot:
    """H_t: sites infected at least once up to time t."""
    sites = np.nonzero(traj.first_hit[copy] <= t)[0]
    return RegionSnapshot(t, frozenset(int(s) for s in sites))


def infection_coupled_region(traj: Trajectory, t: float, copy_a: int = 0,
                             copy_b: int = 1) -> RegionSnapshot:
    """K_t: sites where the two infection copies agree at time t."""
    ea = traj.eta_at(copy_a, t)
    eb = traj.eta_at(copy_b, t)
    return RegionSnapshot(t, frozenset(np.nonzero(ea == eb)[0].tolist()))


def _last_disagreement(traj: Trajectory, copy_a: int, copy_b: int,
                       isbg: int, n_locs: int,
                       init_a: np.ndarray, init_b: np.ndarray) -> np.ndarray:
    """Per location, the supremum of times the two copies' values differ
    (-inf if they never differ).

    A disagreement spanning (t0, t1) counts up to t1: the location enters
    every K_s for s >= t1 only, so its last-disagreement time is the event
    restoring agreement, not the one opening the gap.  A location still
    differing at the horizon gets +inf (never permanently coupled within
    this trajectory).
    """
    last = np.full(n_locs, -np.inf)
    va = init_a.astype(np.int64).copy()
    vb = init_b.astype(np.int64).copy()
    open_gap = va != vb
    sel = (traj.log_isbg == isbg) & np.isin(traj.log_copy, [copy_a, copy_b])
    ts = traj.log_t[sel]
    cps = traj.log_copy[sel]
    locs = traj.log_loc[sel]
    vals = traj.log_val[sel]
    for t, cp, loc, val in zip(ts, cps, locs, vals):
        if cp == copy_a:
            va[loc] = val
        else:
            vb[loc] = val
        now = va[loc] != vb[loc]
        if now or open_gap[loc]:
            last[loc] = t
        open_gap[loc] = now
    still = va != vb
    last[still] = np.inf
    return last


def permanently_coupled(traj: Trajectory, t: float, copy_a: int = 0,
                        copy_b: int = 1) -> RegionSnapshot:
    """Kbar_t (censored): in K_s for every event time s in [t, horizon]."""
    last = _last_disagreement(
        traj, copy_a, copy_b, 0, traj.catalog.window.n_sites,
        traj.copies[copy_a].eta0, traj.copies[copy_b].eta0)
    return RegionSnapshot(t, frozenset(np.nonzero(last <= t)[0].tolist()))


def _require_bg_monotone(traj: Trajectory) -> None:
    if not traj.catalog.model.diagnostics.bg_monotone:
        raise ValueError(
            "background is not monotonically representable; the two-copy "
            "extreme sandwich does not certify the full coupling set")


def background_coupled_region(traj: Trajectory, t: float, copy_lo: int = 0,
                              copy_hi: int = 1) -> RegionSnapshot:
    """Psi_t: cells where the all-zero and all-N background copies agree.

    Under monotone representability the extreme copies sandwich every other
    initial condition, so their agreement set is the full coupling set.
    """
    _require_bg_monotone(traj)
    xa = traj.xi_at(copy_lo, t)
    xb = traj.xi_at(copy_hi, t)
    cells = frozenset(np.nonzero(xa == xb)[0].tolist())
    return RegionSnapshot(t, frozenset(), cells)


def permanently_coupled_background(traj: Trajectory, t: float,
                                   copy_lo: int = 0,
                                   copy_hi: int = 1) -> RegionSnapshot:
    """Psi'_t (censored): background agreement from t to the horizon."""
    _require_bg_monotone(traj)
    last = _last_disagreement(
        traj, copy_lo, copy_hi, 1, traj.catalog.window.n_cells,
        traj.copies[copy_lo].xi0, traj.copies[copy_hi].xi0)
    cells = frozenset(np.nonzero(last <= t)[0].tolist())
    return RegionSnapshot(t, frozenset(), cells)


def phi_region(traj: Trajectory, spin_range: int, t: float,
               copy_lo: int = 0, copy_hi: int = 1) -> RegionSnapshot:
    """Phi_t: sites whose whole range-L neighbourhood is permanently coupled.

    The neighbourhood of x is ball(L, x) plus every edge meeting it (incident
    edges included even for L=0).  Neighbourhood cells outside the window
    count as uncoupled, so Phi is conservative near the boundary.
    """
    psi = permanently_coupled_background(traj, t, copy_lo, copy_hi).cells
    win = traj.catalog.window
    sites = set()
    for i, x in enumerate(win.sites):
        ok = True
        for y in ball(spin_range, x):
            j = win.site_index(y)
            if j < 0 or j not in psi:
                ok = False
                break
        if ok:
            for e in edge_ball(spin_range, x):
                try:
                    c = win.edge_cell(e)
                except KeyError:
                    ok = False
                    break
                if c not in psi:
                    ok = False
                    break
        if ok:
            sites.add(i)
    return RegionSnapshot(t, frozenset(sites), frozenset())


@dataclass
class ShapeEstimate:
    """Directional growth-time estimates mu_hat (time per unit l1 distance)."""

    rays: list
    radii: np.ndarray
    mu_hat: np.ndarray       # per ray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    secant: np.ndarray       # per ray, (t(n)-t(n/2))/(n/2) at largest n
    secant_half: np.ndarray  # same at n/2 vs n/4 (convergence check)
    n_trials_used: np.ndarray
    table: np.ndarray        # (n_rays, n_radii) mean t(n r)/n, nan if no data


def shape_estimate(hits: np.ndarray, rays, radii, surviving: np.ndarray,
                   n_boot: int = 1000, seed: int = 0,
                   min_trials: int = 10) -> ShapeEstimate:
    """Estimate mu per ray from per-trial hitting times.

    hits: (n_trials, n_rays, n_radii) hitting times, nan = censored.
    surviving: boolean mask of trials surviving to the horizon (conditioning
    on survival approximates conditioning on non-extinction).
    """
    hits = np.asarray(hits, dtype=float)
    radii = np.asarray(radii, dtype=float)
    use = hits[surviving]
    n_surv = use.shape[0]
    if n_surv < min_trials:
        raise ValueError(
            f"need >= {min_trials} surviving trials, have {n_surv}")
    n_rays = len(rays)
    mu = np.full(n_rays, np.nan)
    lo = np.full(n_rays, np.nan)
    hi = np.full(n_rays, np.nan)
    sec = np.full(n_rays, np.nan)
    sec_half = np.full(n_rays, np.nan)
    used = np.zeros(n_rays, dtype=np.int64)
    table = np.full((n_rays, len(radii)), np.nan)
    rng = np.random.Generator(np.random.Philox(key=seed))
    for ri in range(n_rays):
        col = use[:, ri, :]
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            table[ri] = np.nanmean(col / radii[None, :], axis=0)
        # per trial: largest uncensored radius
        ratios = []
        for row in col:
            ok = np.nonzero(np.isfinite(row))[0]
            if len(ok):
                j = ok[-1]
                ratios.append(row[j] / radii[j])
        ratios = np.array(ratios)
        used[ri] = len(ratios)
        if len(ratios) < min_trials:
            continue
        mu[ri] = ratios.mean()
        bs = rng.integers(0, len(ratios), size=(n_boot, len(ratios)))
        means = ratios[bs].mean(axis=1)
        lo[ri], hi[ri] = np.quantile(means, [0.025, 0.975])
        # secant slopes between n and n/2 (largest n with data at both)
        sec[ri] = _secant(col, radii, 1.0)
        sec_half[ri] = _secant(col, radii, 0.5)
    return ShapeEstimate(list(rays), radii, mu, lo, hi, sec, sec_half,
                         used, table)


def _secant(col: np.ndarray, radii: np.ndarray, scale: float) -> float:
    """Mean of (t(n) - t(n/2)) / (n - n/2) at the largest usable n*scale."""
    for j in range(len(radii) - 1, -1, -1):
        n = radii[j] * scale
        jn = _radius_index(radii, n)
        jh = _radius_index(radii, n / 2)
        if jn is None or jh is None or jn == jh:
            continue
        both = np.isfinite(col[:, jn]) & np.isfinite(col[:, jh])
        if both.sum() == 0:
            continue
        d = (col[both, jn] - col[both, jh]) / (radii[jn] - radii[jh])
        return float(d.mean())
    return float("nan")


def _radius_index(radii: np.ndarray, n: float):
    j = np.nonzero(np.isclose(radii, n))[0]
    return int(j[0]) if len(j) else None


def inclusion_rates(traj_first_hits: np.ndarray, mu_hat: float, t_grid,
                    eps_grid, radii_axis: np.ndarray) -> np.ndarray:
    """Directional inclusion checks of H_t against the mu_hat-ball.

    For each t and eps: inner = every axis site with distance <= (1-eps) t /
    mu_hat was hit by t; outer = no hit site beyond (1+eps) t / mu_hat.
    Returns (len(t_grid), len(eps_grid), 2) booleans per trial-row mean.
    """
    n_trials = traj_first_hits.shape[0]
    out = np.zeros((len(t_grid), len(eps_grid), 2))
    for it, t in enumerate(t_grid):
        hit = traj_first_hits <= t  # (trials, n_axis_sites)
        for ie, eps in enumerate(eps_grid):
            r_in = (1 - eps) * t / mu_hat
            r_out = (1 + eps) * t / mu_hat
            inner_mask = radii_axis <= r_in
            outer_mask = radii_axis > r_out
            inner_ok = np.all(hit[:, inner_mask], axis=1) if inner_mask.any() \
                else np.ones(n_trials, bool)
            outer_ok = ~np.any(hit[:, outer_mask], axis=1) if outer_mask.any() \
                else np.ones(n_trials, bool)
            out[it, ie, 0] = inner_ok.mean()
            out[it, ie, 1] = outer_ok.mean()
    return out
