"""
Dual process machinery: mirrored rates, pathwise dual replay on a fixed
graphical realization, and the stationary-start distributional duality check.

The pathwise dual runs the recorded events backwards in time with every
infection arrow flipped, against the time-reversed background trajectory; an
arrow is usable for the dual exactly when it was usable forward.  The
distributional check instead forward-simulates the mirrored-rate model from
the stationary background law (valid for reversible backgrounds).
"""

from __future__ import annotations

import numpy as np

from .engine import Trajectory
from .graphical import INF, REC
from .lattice import Window
from .model import (DynamicalPercolation, IndependentUpdates, Model,
                    RateTable, check_reversible, stationary_dist)


def mirror_rates(rates: RateTable) -> RateTable:
    """lam_mirrored(i, j, k) = lam(k, j, i); r unchanged."""
    return RateTable(rates.N, np.swapaxes(rates.lam, 0, 2).copy(),
                     rates.r.copy())


def mirror_model(model: Model) -> Model:
    return Model(mirror_rates(model.rates), model.bg)


class _BgReplay:
    """Lazy background lookup xi_u(cell) from a copy's change log."""

    def __init__(self, traj: Trajectory, copy: int):
        self.xi0 = traj.copies[copy].xi0
        sel = (traj.log_copy == copy) & (traj.log_isbg == 1)
        order = np.argsort(traj.log_t[sel], kind="stable")
        ts = traj.log_t[sel][order]
        locs = traj.log_loc[sel][order]
        vals = traj.log_val[sel][order]
        self.cells: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for c in np.unique(locs):
            m = locs == c
            self.cells[int(c)] = (ts[m], vals[m])

    def at(self, cell: int, u: float) -> int:
        """Background level of cell at time u (changes at exactly u applied:
        irrelevant for infection events, which never share timestamps)."""
        if cell not in self.cells:
            return int(self.xi0[cell])
        ts, vals = self.cells[cell]
        i = int(np.searchsorted(ts, u, side="right"))
        return int(vals[i - 1]) if i > 0 else int(self.xi0[cell])


def dual_run(traj: Trajectory, t: float, eta_prime: np.ndarray,
             copy: int = 0) -> np.ndarray:
    """Dual infection state at dual time t (forward time 0).

    Walks the stream's infection/recovery events in decreasing time; event at
    forward time u acts on the dual at dual time t - u with its arrow
    reversed, judged against the forward background state xi_u.
    """
    cat = traj.catalog
    stream_times = traj.stream.times
    stream_maps = traj.stream.maps
    bg = _BgReplay(traj, copy)
    eta_hat = np.asarray(eta_prime, dtype=np.uint8).copy()
    i0 = int(np.searchsorted(stream_times, 0.0, side="left"))
    i1 = int(np.searchsorted(stream_times, t, side="right"))
    kind, p0, p1, p2, lvl = cat.kind, cat.p0, cat.p1, cat.p2, cat.lvl
    F3, G = cat.F3, cat.G
    for j in range(i1 - 1, i0 - 1, -1):
        m = stream_maps[j]
        u = stream_times[j]
        k = kind[m]
        if k == INF:
            x, y, ec = p0[m], p1[m], p2[m]
            if eta_hat[y] == 1 and eta_hat[x] == 0:
                if F3[bg.at(x, u), bg.at(ec, u), bg.at(y, u)] >= lvl[m]:
                    eta_hat[x] = 1
        elif k == REC:
            s = p0[m]
            if eta_hat[s] == 1 and G[bg.at(s, u)] <= lvl[m]:
                eta_hat[s] = 0
    return eta_hat


def conditional_duality_check(traj: Trajectory, t: float,
                              eta_prime: np.ndarray,
                              copy: int = 0) -> tuple[bool, bool, bool]:
    """Pathwise identity: {eta_t meets eta'} == {eta_0 meets dual_t}.

    Returns (forward indicator, dual indicator, equal).  Must agree on every
    realization; any mismatch is a correctness bug, not noise.
    """
    eta_t = traj.eta_at(copy, t)
    fwd = bool(np.any((eta_t == 1) & (np.asarray(eta_prime) == 1)))
    eta_hat = dual_run(traj, t, eta_prime, copy)
    dua = bool(np.any((traj.copies[copy].eta0 == 1) & (eta_hat == 1)))
    return fwd, dua, fwd == dua


def stationary_background_dist(model: Model):
    """(pi_site, pi_edge) product stationary laws; None for spin systems."""
    bg = model.bg
    if isinstance(bg, DynamicalPercolation):
        ps = np.array([bg.beta_V, bg.alpha_V]) / (bg.alpha_V + bg.beta_V)
        pe = np.array([bg.beta_E, bg.alpha_E]) / (bg.alpha_E + bg.beta_E)
        return ps, pe
    if isinstance(bg, IndependentUpdates):
        return stationary_dist(bg.Q_site), stationary_dist(bg.Q_edge)
    return None


def require_reversible(model: Model) -> None:
    bg = model.bg
    if isinstance(bg, IndependentUpdates):
        for Q in (bg.Q_site, bg.Q_edge):
            if Q.shape[0] > 1 and not check_reversible(Q, stationary_dist(Q)):
                raise ValueError("background chain is not reversible")
    # two-state chains (DynamicalPercolation) are always reversible; spin
    # systems are assumed reversible by model contract (not cheaply checkable)


def stationary_duality_check(model: Model, win: Window, eta_sites,
                             eta_prime_sites, t: float, n_trials: int,
                             master_seed: int,
                             run_trials_kw: dict | None = None):
    """Two-proportion check of the stationary self-duality relation.

    p_fwd = P(eta_t^{eta, pi} meets eta'); p_dual = the same under the
    mirrored-rate model started from eta'.  Returns (p_fwd, p_dual, z).
    """
    from .graphical import build_catalog
    from .mc import product_stationary_xi, run_trials, splitmix64

    require_reversible(model)
    pis = stationary_background_dist(model)
    if pis is None:
        raise NotImplementedError(
            "stationary start for spin systems needs burn-in sampling")
    mirrored = mirror_model(model)
    kw = dict(run_trials_kw or {})
    counts = []
    for half, (mdl, init_sites, target_sites) in enumerate(
            ((model, eta_sites, eta_prime_sites),
             (mirrored, eta_prime_sites, eta_sites))):
        cat = build_catalog(win, mdl)
        eta0 = np.zeros(win.n_sites, dtype=np.uint8)
        for s in init_sites:
            eta0[s] = 1
        target = np.zeros(win.n_sites, dtype=np.uint8)
        for s in target_sites:
            target[s] = 1
        seeds = [splitmix64(master_seed + half, k) for k in range(n_trials)]
        res = run_trials(cat, t, seeds, eta0,
                         xi0=product_stationary_xi(cat, *pis),
                         snap_times=np.array([t]), **kw)
        hit = np.any(res["snap_eta"][:, 0] & target[None, :], axis=1)
        counts.append(int(hit.sum()))
    p_fwd = counts[0] / n_trials
    p_dual = counts[1] / n_trials
    pool = (counts[0] + counts[1]) / (2 * n_trials)
    se = np.sqrt(pool * (1 - pool) * 2 / n_trials)
    z = 0.0 if se == 0 else (p_fwd - p_dual) / se
    return p_fwd, p_dual, float(z)
