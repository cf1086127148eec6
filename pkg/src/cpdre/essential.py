"""
Essential hitting times and related machinery.

The essential hitting time sigma(x) of a site x is built by iterating three
stopping times on one shared stream: l_k (first time >= v_{k-1} with x not
infected), u_k (next re-infection of x), and v_k = u_k plus the lifetime of a
restarted copy (delta_x, all-zero background) evolving on the remaining
stream.  K is the first k where the restarted copy survives (v_k infinite) or
x is never re-infected (u_{k+1} infinite); sigma = u_K.

"Survives forever" is horizon-censored: a restarted copy alive T_surv time
units past u_k counts as surviving; the misclassification mass is estimated
separately by the extinction-tail experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .duality import _BgReplay
from .engine import CoupledRun, Trajectory, evolve, make_copy
from .graphical import REC, Catalog, EventStream
from .observables import CENSORED, FINITE, INFINITE, CensoredTime


@dataclass
class Iteration:
    l: float
    u: float                 # inf if never re-infected (determined)
    v: CensoredTime | None   # None when u is infinite


@dataclass
class EssentialRecord:
    x: int
    iterations: list[Iteration]
    K: int | None            # None = undetermined (censored)
    sigma: CensoredTime
    base_extinct: CensoredTime
    censored: bool
    t_first: float           # first hitting time of x (u_1), inf if never


def _next_state_time(v0, times, vals, t: float, want: int):
    """First time >= t at which the site history has value `want`.

    Returns the exact change time, or t itself if the state already holds at
    t, or None if it never holds up to the end of the history.
    """
    i = int(np.searchsorted(times, t, side="right"))
    cur = vals[i - 1] if i > 0 else v0
    if cur == want:
        return t
    for j in range(i, len(times)):
        if vals[j] == want and times[j] >= t:
            return float(times[j])
    return None


def essential_hitting(catalog: Catalog, stream: EventStream, x: int,
                      xi0, horizon: float, T_surv: float = 50.0,
                      eta0_sites=None, start_t: float = 0.0,
                      max_iter: int = 500,
                      base_traj: Trajectory | None = None) -> EssentialRecord:
    """Run the u/l/v iteration for site x on a shared stream.

    The base copy starts from eta0_sites (default: the origin) with
    background xi0 at time start_t.  Restarted copies (delta_x, all-zero)
    consume exactly the events after their start time (temporal shift).
    """
    win = catalog.window
    if eta0_sites is None:
        eta0_sites = [win.site_index((0,) * win.d)]
    if base_traj is None:
        if np.isscalar(xi0):
            base = make_copy(catalog, "base", eta0_sites, xi_level=int(xi0),
                             t0=start_t)
        else:
            base = make_copy(catalog, "base", eta0_sites, xi0=xi0,
                             t0=start_t)
        base_traj = evolve(CoupledRun(catalog, stream, [base]), horizon,
                           snap_times=np.zeros(0), t_begin=start_t)
    v0, times, vals = base_traj.site_history(0, x)
    base_ext = float(base_traj.ext_time[0])

    iters: list[Iteration] = []
    v_prev = start_t
    sigma = None
    K = None
    censored = False
    t_first = float(base_traj.first_hit[0, x])
    for k in range(1, max_iter + 1):
        if k == 1 and _next_state_time(v0, times, vals, v_prev, 1) == v_prev:
            # x already infected at the start: u_1 is the start time itself
            l_k = v_prev
            u_k = v_prev
        else:
            l_k = _next_state_time(v0, times, vals, v_prev, 0)
            if l_k is None:
                # x stays infected to the horizon: u_{k+1} unknowable
                censored = True
                break
            u_k = _next_state_time(v0, times, vals, l_k, 1)
        if u_k is None:
            if np.isfinite(base_ext):
                # base died and x uninfected: u_k is genuinely infinite
                iters.append(Iteration(l_k, np.inf, None))
                K = k - 1
                if K >= 1:
                    sigma = CensoredTime(iters[K - 1].u, FINITE)
                else:
                    # the process died without ever infecting x
                    sigma = CensoredTime(np.inf, INFINITE)
                break
            censored = True
            break
        # restarted copy (delta_x, all-zero) on the shifted stream
        t_end = min(horizon, u_k + T_surv)
        rc = make_copy(catalog, "restart", [x], xi_level=0, t0=u_k)
        rt = evolve(CoupledRun(catalog, stream, [rc]), t_end,
                    snap_times=np.zeros(0), log=False,
                    stop_when_extinct=True, t_begin=u_k)
        ext = float(rt.ext_time[0])
        if np.isfinite(ext):
            iters.append(Iteration(l_k, u_k, CensoredTime(ext, FINITE)))
            v_prev = ext
            continue
        if u_k + T_surv > horizon + 1e-9:
            iters.append(Iteration(l_k, u_k,
                                   CensoredTime(horizon, CENSORED)))
            censored = True
            break
        iters.append(Iteration(l_k, u_k, CensoredTime(np.inf, INFINITE)))
        K = k
        sigma = CensoredTime(u_k, FINITE)
        break
    else:
        censored = True

    if sigma is None:
        sigma = CensoredTime(horizon, CENSORED)
    return EssentialRecord(
        x=x, iterations=iters, K=K, sigma=sigma,
        base_extinct=_ct(base_ext, horizon), censored=censored,
        t_first=t_first)


def _ct(value: float, horizon: float) -> CensoredTime:
    return (CensoredTime(float(value), FINITE) if np.isfinite(value)
            else CensoredTime(horizon, CENSORED))


def shifted_essential(catalog: Catalog, stream: EventStream, x: int,
                      xi0, horizon: float,
                      T_surv: float = 50.0) -> EssentialRecord | None:
    """s^xi(x): essential hitting of x by a fresh (delta_0, all-zero) copy
    started at time sigma^xi(0) on the same stream.

    With xi0 all-zero, sigma(0) short-circuits to 0 when the restarted copy
    at u_1 = 0 coincides with the base run.  Returns None when sigma^xi(0)
    is censored.
    """
    win = catalog.window
    origin = win.site_index((0,) * win.d)
    rec0 = essential_hitting(catalog, stream, origin, xi0, horizon,
                             T_surv=T_surv)
    if rec0.K is None or not rec0.sigma.finite:
        return None
    s0 = rec0.sigma.value
    return essential_hitting(catalog, stream, x, 0, horizon,
                             T_surv=T_surv, start_t=s0)


@dataclass
class BadGrowthProbe:
    t_grid: np.ndarray
    M: float
    c: float
    gamma: float
    probs: dict        # (t, y) -> per-event probabilities
    p_any: np.ndarray  # per t: P(N >= 1) over the probed y set


def effective_recoveries_at(traj: Trajectory, copy: int, site: int,
                            t0: float, t1: float) -> int:
    """Count effective recovery events at a site in [t0, t1).

    Effectiveness depends only on the background trajectory and the stream
    (not on the infection state), per the recovery-map condition.
    """
    cat = traj.catalog
    bg = _BgReplay(traj, copy)
    st = traj.stream
    i0, i1 = st.index_range(t0, t1)
    n = 0
    for j in range(i0, i1):
        m = st.maps[j]
        if cat.kind[m] == REC and cat.p0[m] == site:
            if cat.G[bg.at(site, st.times[j])] <= cat.lvl[m]:
                n += 1
    return n


def bad_growth_probe(catalog: Catalog, x: int, y_list, t_grid, M: float,
                     c: float, xi0, n_trials: int, master_seed: int,
                     survival_horizon: float | None = None) -> BadGrowthProbe:
    """Monte Carlo estimates of the five bad-growth events per (y, t).

    For each probe source y two coupled copies run on the trial stream:
    (delta_y, xi0) and (delta_y, all-zero).  gamma = 3 M (1 + 1/c).
    """
    from .mc import splitmix64
    from .graphical import sample_stream

    win = catalog.window
    t_grid = np.asarray(t_grid, dtype=float)
    gamma = 3.0 * M * (1.0 + 1.0 / c)
    t_max = float(t_grid.max())
    horizon = max(gamma * t_max, 2 * t_max)
    if survival_horizon is None:
        survival_horizon = horizon
    horizon = max(horizon, survival_horizon)

    names = ["no_recovery", "superlinear_growth", "late_death_zero",
             "late_death_env", "slow_hit", "union"]
    counts = {(float(t), y): np.zeros(len(names)) for t in t_grid
              for y in y_list}
    any_count = np.zeros(len(t_grid))

    xs = win.site_of_index(x)
    for tr in range(n_trials):
        seed = splitmix64(master_seed, tr)
        st = sample_stream(catalog, horizon, seed)
        copies = []
        for y in y_list:
            copies.append(make_copy(catalog, f"env{y}", [y],
                                    xi_level=xi0 if np.isscalar(xi0) else 0,
                                    xi0=None if np.isscalar(xi0) else xi0))
            copies.append(make_copy(catalog, f"zero{y}", [y], xi_level=0))
        traj = evolve(CoupledRun(catalog, st, copies), horizon,
                      snap_times=np.zeros(0))
        hit_any = np.zeros(len(t_grid), dtype=bool)
        for iy, y in enumerate(y_list):
            ce, cz = 2 * iy, 2 * iy + 1
            ys = win.site_of_index(y)
            tau_env = float(traj.ext_time[ce])
            tau_zero = float(traj.ext_time[cz])
            for it, t in enumerate(t_grid):
                e = np.zeros(len(names))
                if effective_recoveries_at(traj, ce, y, 0.0, t / 2) == 0:
                    e[0] = 1
                # H_t outside B_{Mt}(y)
                in_ball = np.array(win.sites_in_ball(M * t, ys))
                mask = np.ones(win.n_sites, dtype=bool)
                mask[in_ball] = False
                if np.any(traj.first_hit[ce, mask] <= t):
                    e[1] = 1
                if t / 2 < tau_zero < survival_horizon:
                    e[2] = 1
                if t / 2 < tau_env < survival_horizon:
                    e[3] = 1
                if tau_env >= survival_horizon:
                    ht = _first_infected_after(traj, ce, x, 2 * t)
                    if ht is None or ht > gamma * t:
                        e[4] = 1
                e[5] = 1 if np.any(e[:5]) else 0
                counts[(float(t), y)] += e
                if e[5]:
                    hit_any[it] = True
        any_count += hit_any

    probs = {k: v / n_trials for k, v in counts.items()}
    return BadGrowthProbe(t_grid, M, c, gamma, probs, any_count / n_trials)


def _first_infected_after(traj: Trajectory, copy: int, site: int, t: float):
    v0, times, vals = traj.site_history(copy, site)
    r = _next_state_time(v0, times, vals, t, 1)
    return r


# ---------------------------------------------------------------------------
# restart procedure: iterated reseeding until a macro percolation survives
# ---------------------------------------------------------------------------

@dataclass
class RestartIteration:
    N: int                    # integer steps until death or a full seed cube
    M: int | None             # macro extinction level; None = alive at horizon
    restart_site: int
    seed_center: int | None   # cube center when a seed was found
    seed_time: float | None


@dataclass
class RestartRecord:
    iterations: list[RestartIteration]
    L: int | None             # first iteration whose macro percolation lives
    sigma: CensoredTime
    Y: tuple | None           # microscopic seed coordinate on success
    censored: bool
    sigma_identity_ok: bool | None   # sigma == sum_i<L (N_i+1+6bM_i) + N_L+1
    seed_in_restart: bool | None     # Y+[-n,n]^d infected in the restarted copy
    seed_in_base: bool | None        # ... and in the base process (monotone)
    message: str = ""


def restart_procedure(catalog: Catalog, stream: EventStream, xi0,
                      params, horizon: float, macro_horizon: int = 20,
                      n_step_cap: int = 200, max_iter: int = 64,
                      filler_seed: int = 0,
                      eta0_sites=None) -> RestartRecord:
    """Iterate reseeding until a coupled macroscopic percolation survives.

    At each iteration the process restarts from one infected vertex of the
    base run (lexicographic minimum; the origin if the base is extinct) with
    all-zero background.  N counts integer steps until the restarted copy is
    empty or fully infects some cube x+[-n,n]^d; a found seed launches the
    block coupling, whose extinction level is M (None = alive at the macro
    horizon, which ends the procedure with sigma and Y).
    """
    from .mc import splitmix64
    from .percolation import (BoxOverflow, StreamExhausted,
                              build_block_coupling, full_cubes_at)

    win = catalog.window
    origin = win.site_index((0,) * win.d)
    if eta0_sites is None:
        eta0_sites = [origin]
    if np.isscalar(xi0):
        base = make_copy(catalog, "base", eta0_sites, xi_level=int(xi0))
    else:
        base = make_copy(catalog, "base", eta0_sites, xi0=xi0)
    base_traj = evolve(CoupledRun(catalog, stream, [base]),
                       min(horizon, stream.horizon), snap_times=np.zeros(0))

    iters: list[RestartIteration] = []
    U = 0.0
    b = params.b

    def _record(L, sigma, Y, censored, ok=None, in_restart=None,
                in_base=None, msg=""):
        return RestartRecord(iters, L, sigma, Y, censored, ok,
                             in_restart, in_base, msg)

    for ell in range(1, max_iter + 1):
        if U + 1 > horizon:
            return _record(None, CensoredTime(horizon, CENSORED), None,
                           True, msg="micro horizon exhausted")
        eta_base = base_traj.eta_at(0, U)
        infected = np.nonzero(eta_base)[0]
        site = int(infected[0]) if len(infected) else origin
        t_cap = min(horizon, U + n_step_cap + 1)
        snap_times = np.arange(U + 1.0, t_cap + 1e-9, 1.0)
        rc = make_copy(catalog, "restart", [site], xi_level=0, t0=U)
        rt = evolve(CoupledRun(catalog, stream, [rc]), t_cap,
                    snap_times=snap_times, log=False,
                    stop_when_extinct=True, t_begin=U)
        N = None
        seed_center = None
        for k in range(len(snap_times)):
            eta_k = rt.snap_eta[0, k]
            if not eta_k.any():
                N = k
                break
            cubes = full_cubes_at(eta_k, win, params.n)
            if len(cubes):
                N = k
                seed_center = int(cubes[0])
                break
        if N is None:
            return _record(None, CensoredTime(horizon, CENSORED), None,
                           True, msg=f"no determination in {n_step_cap} steps")
        t_seed = U + N + 1.0
        if seed_center is None:
            iters.append(RestartIteration(N, 0, site, None, None))
            U = t_seed
            continue
        try:
            bc = build_block_coupling(
                catalog, stream, params, seed_center, t_seed, macro_horizon,
                filler_seed=splitmix64(filler_seed, ell))
        except (BoxOverflow, StreamExhausted) as e:
            return _record(None, CensoredTime(horizon, CENSORED), None,
                           True, msg=f"certificate failure: {e}")
        if bc.extinction is None:
            iters.append(RestartIteration(N, None, site, seed_center,
                                          t_seed))
            parts = sum(it.N + 1 + 6 * b * it.M for it in iters[:-1])
            ok = abs(parts + N + 1 - t_seed) < 1e-9
            eta_r = rt.snap_eta[0, N]
            from .percolation import _cube_matrix
            centers, rows = _cube_matrix(win, params.n)
            row = rows[np.searchsorted(centers, seed_center)]
            in_restart = bool(eta_r[row].all())
            in_base = None
            diag = catalog.model.diagnostics
            if diag.monotone and diag.worst_case_necessary:
                eta_b = base_traj.eta_at(0, t_seed)
                in_base = bool(eta_b[row].all()) if eta_b.any() else None
            return _record(ell, CensoredTime(t_seed, FINITE),
                           win.site_of_index(seed_center), False, ok,
                           in_restart, in_base)
        iters.append(RestartIteration(N, bc.extinction, site, seed_center,
                                      t_seed))
        U = t_seed + 6.0 * b * bc.extinction
    return _record(None, CensoredTime(horizon, CENSORED), None, True,
                   msg=f"no surviving percolation in {max_iter} iterations")
