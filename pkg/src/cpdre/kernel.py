"""
Jitted event loop: apply a time-ordered event slice to coupled copies.

All copies share the identical event sequence; each copy has its own (eta, xi)
state, a mode flag (0 = normal dynamics, 1 = maximal process: every infection
arrow usable, no recoveries) and a start time before which it ignores events.

The kernel records first-hit times, extinction times, boundary-collar contact
times, snapshots on a caller-supplied time grid, and (optionally) exact change
logs of eta and xi, which are enough to replay any copy's state at any time.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .graphical import BG, INF, REC, SPIN_UP

INF_TIME = np.inf


@njit(cache=True)
def _pattern(xi, nbr_off, nbr_cells, cell):
    lo = nbr_off[cell]
    hi = nbr_off[cell + 1]
    pat = 0
    for b in range(hi - lo):
        nb = nbr_cells[lo + b]
        if nb >= 0 and xi[nb] != 0:
            pat |= 1 << b
    return pat


@njit(cache=True)
def run_events(times, maps, i0, i1,
               kind, p0, p1, p2, lvl, f0,
               allowed,
               F3, G, bg_tables, q_up, q_dn, nbr_off, nbr_cells,
               eta, xi, mode, tstart, count,
               collar,
               first_hit, ext_time, boundary_hit,
               snap_times, snap_eta, snap_xi, want_xi_snap,
               log_cap, log_t, log_copy, log_loc, log_val, log_isbg,
               stop_when_extinct):
    """Apply events [i0, i1) to all copies in place.  Returns log length.

    `allowed` masks catalog maps (spatially restricted sub-runs); pass an
    all-ones array for unrestricted evolution.  When `stop_when_extinct` is
    set the call returns early once every copy's infection has died (the
    remaining background evolution is not needed by any caller that sets it).
    """
    n_copies = eta.shape[0]
    n_snap = snap_times.shape[0]
    n_log = 0
    snap_ptr = 0
    for j in range(i0, i1):
        t = times[j]
        m = maps[j]
        while snap_ptr < n_snap and snap_times[snap_ptr] < t:
            for c in range(n_copies):
                snap_eta[c, snap_ptr, :] = eta[c]
                if want_xi_snap:
                    snap_xi[c, snap_ptr, :] = xi[c]
            snap_ptr += 1
        if allowed[m] == 0:
            continue
        k = kind[m]
        for c in range(n_copies):
            if t < tstart[c]:
                continue
            if k == INF:
                src = p0[m]
                dst = p1[m]
                if eta[c, src] == 1 and eta[c, dst] == 0:
                    ok = False
                    if mode[c] == 1:
                        ok = True
                    else:
                        ec = p2[m]
                        if F3[xi[c, src], xi[c, ec], xi[c, dst]] >= lvl[m]:
                            ok = True
                    if ok:
                        eta[c, dst] = 1
                        count[c] += 1
                        if first_hit[c, dst] == INF_TIME:
                            first_hit[c, dst] = t
                        if collar[dst] == 1 and boundary_hit[c] == INF_TIME:
                            boundary_hit[c] = t
                        if n_log < log_cap:
                            log_t[n_log] = t
                            log_copy[n_log] = c
                            log_loc[n_log] = dst
                            log_val[n_log] = 1
                            log_isbg[n_log] = 0
                            n_log += 1
            elif k == REC:
                if mode[c] == 1:
                    continue
                s = p0[m]
                if eta[c, s] == 1 and G[xi[c, s]] <= lvl[m]:
                    eta[c, s] = 0
                    count[c] -= 1
                    if count[c] == 0 and ext_time[c] == INF_TIME:
                        ext_time[c] = t
                    if n_log < log_cap:
                        log_t[n_log] = t
                        log_copy[n_log] = c
                        log_loc[n_log] = s
                        log_val[n_log] = 0
                        log_isbg[n_log] = 0
                        n_log += 1
            elif k == BG:
                cell = p0[m]
                v = bg_tables[p2[m], xi[c, cell]]
                if v != xi[c, cell]:
                    xi[c, cell] = v
                    if n_log < log_cap:
                        log_t[n_log] = t
                        log_copy[n_log] = c
                        log_loc[n_log] = cell
                        log_val[n_log] = v
                        log_isbg[n_log] = 1
                        n_log += 1
            else:
                cell = p0[m]
                ck = p2[m]
                if k == SPIN_UP:
                    if xi[c, cell] == 0:
                        pat = _pattern(xi[c], nbr_off, nbr_cells, cell)
                        if q_up[ck, pat] >= f0[m]:
                            xi[c, cell] = 1
                            if n_log < log_cap:
                                log_t[n_log] = t
                                log_copy[n_log] = c
                                log_loc[n_log] = cell
                                log_val[n_log] = 1
                                log_isbg[n_log] = 1
                                n_log += 1
                else:
                    if xi[c, cell] == 1:
                        pat = _pattern(xi[c], nbr_off, nbr_cells, cell)
                        if q_dn[ck, pat] >= f0[m]:
                            xi[c, cell] = 0
                            if n_log < log_cap:
                                log_t[n_log] = t
                                log_copy[n_log] = c
                                log_loc[n_log] = cell
                                log_val[n_log] = 0
                                log_isbg[n_log] = 1
                                n_log += 1
        if stop_when_extinct:
            dead = True
            for c in range(n_copies):
                if count[c] > 0:
                    dead = False
                    break
            if dead:
                break
    while snap_ptr < n_snap:
        for c in range(n_copies):
            snap_eta[c, snap_ptr, :] = eta[c]
            if want_xi_snap:
                snap_xi[c, snap_ptr, :] = xi[c]
        snap_ptr += 1
    return n_log


@njit(cache=True)
def run_batch(times, maps, offsets,
              kind, p0, p1, p2, lvl, f0,
              allowed,
              F3, G, bg_tables, q_up, q_dn, nbr_off, nbr_cells,
              eta, xi, collar,
              snap_times, snap_eta, snap_xi, want_xi_snap,
              ext_time, boundary_hit, first_hit,
              stop_when_extinct):
    """Many independent single-copy trials in one call.

    Trial i consumes events [offsets[i], offsets[i+1]) and owns row i of every
    state/output array.  Dummy buffers keep the inner kernel signature whole.
    """
    n_trials = offsets.shape[0] - 1
    n_sites = eta.shape[1]
    log_f = np.zeros(0, dtype=np.float64)
    log_i = np.zeros(0, dtype=np.int32)
    log_b = np.zeros(0, dtype=np.uint8)
    mode = np.zeros(1, dtype=np.uint8)
    tstart = np.zeros(1, dtype=np.float64)
    for i in range(n_trials):
        e1 = eta[i:i + 1]
        x1 = xi[i:i + 1]
        cnt = np.zeros(1, dtype=np.int64)
        cnt[0] = 0
        for s in range(n_sites):
            if e1[0, s] != 0:
                cnt[0] += 1
        ext1 = ext_time[i:i + 1]
        bnd1 = boundary_hit[i:i + 1]
        for s in range(n_sites):
            if e1[0, s] != 0:
                first_hit[i, s] = 0.0
        run_events(times, maps, offsets[i], offsets[i + 1],
                   kind, p0, p1, p2, lvl, f0, allowed,
                   F3, G, bg_tables, q_up, q_dn, nbr_off, nbr_cells,
                   e1, x1, mode, tstart, cnt, collar,
                   first_hit[i:i + 1], ext1, bnd1,
                   snap_times, snap_eta[i:i + 1], snap_xi[i:i + 1],
                   want_xi_snap,
                   0, log_f, log_i, log_i, log_b, log_b,
                   stop_when_extinct)
