"""
Mass Monte Carlo driver: many independent single-copy trials per kernel call.

Per-trial streams are sampled with trial-derived seeds, concatenated, and
handed to the batch kernel in chunks, keeping the Python overhead per trial
negligible.  Used by the oracle comparison, stationary duality and the
extinction-tail experiments.
"""

from __future__ import annotations

import numpy as np

from .graphical import Catalog, sample_stream, stream_rng
from .kernel import run_batch


def splitmix64(seed: int, k: int) -> int:
    """Documented, stable mixing function for deriving per-trial seeds.

    One splitmix64 step applied to seed + k * golden-gamma; collision-free in
    k for fixed seed (the step is a bijection of 64-bit words).
    """
    mask = 0xFFFFFFFFFFFFFFFF
    z = (int(seed) + (int(k) + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D4BD5B93CC04A5) & mask
    return (z ^ (z >> 31)) & mask


def run_trials(catalog: Catalog, T: float, seeds, eta0: np.ndarray,
               xi0=None, snap_times=None, want_xi_snap: bool = False,
               stop_when_extinct: bool = False, collar_width: int = 1,
               chunk: int = 256, stream_role: int = 0):
    """Run one copy per seed; returns stacked outputs.

    eta0: (n_sites,) shared initial infection, or (n_trials, n_sites).
    xi0: None (all zero), an int level, a (n_cells,) array, a (n_trials,
         n_cells) array, or a callable seed -> (n_cells,) array (e.g. to draw
         the initial background from its stationary law per trial).
    """
    win = catalog.window
    seeds = list(seeds)
    n = len(seeds)
    snap_times = (np.zeros(0) if snap_times is None
                  else np.asarray(snap_times, dtype=np.float64))
    ns = len(snap_times)
    collar = win.collar_mask(collar_width)
    allowed = np.ones(catalog.n_maps, dtype=np.uint8)

    out_snap_eta = np.zeros((n, ns, win.n_sites), dtype=np.uint8)
    out_snap_xi = np.zeros((n, ns, win.n_cells if want_xi_snap else 0),
                           dtype=np.uint8)
    out_ext = np.full(n, np.inf)
    out_bnd = np.full(n, np.inf)
    out_final_eta = np.zeros((n, win.n_sites), dtype=np.uint8)
    out_final_xi = np.zeros((n, win.n_cells), dtype=np.uint8)
    out_first_hit = np.full((n, win.n_sites), np.inf)

    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        m = hi - lo
        streams = [sample_stream(catalog, T, s, role=stream_role)
                   for s in seeds[lo:hi]]
        offsets = np.zeros(m + 1, dtype=np.int64)
        for i, st in enumerate(streams):
            offsets[i + 1] = offsets[i] + len(st)
        times = (np.concatenate([st.times for st in streams])
                 if offsets[-1] else np.zeros(0))
        maps = (np.concatenate([st.maps for st in streams])
                if offsets[-1] else np.zeros(0, dtype=np.int32))

        eta = np.zeros((m, win.n_sites), dtype=np.uint8)
        if np.ndim(eta0) == 2:
            eta[:] = eta0[lo:hi]
        else:
            eta[:] = eta0
        xi = np.zeros((m, win.n_cells), dtype=np.uint8)
        if callable(xi0):
            for i, s in enumerate(seeds[lo:hi]):
                xi[i] = xi0(s)
        elif xi0 is None:
            pass
        elif np.ndim(xi0) == 0:
            xi[:] = int(xi0)
        elif np.ndim(xi0) == 2:
            xi[:] = xi0[lo:hi]
        else:
            xi[:] = xi0

        ext = np.full(m, np.inf)
        bnd = np.full(m, np.inf)
        for i in range(m):
            if eta[i].sum() == 0:
                ext[i] = 0.0
            if np.any((eta[i] == 1) & (collar == 1)):
                bnd[i] = 0.0
        run_batch(times, maps, offsets,
                  catalog.kind, catalog.p0, catalog.p1, catalog.p2,
                  catalog.lvl, catalog.f0, allowed,
                  catalog.F3, catalog.G, catalog.bg_tables,
                  catalog.q_up, catalog.q_dn,
                  catalog.nbr_off, catalog.nbr_cells,
                  eta, xi, collar,
                  snap_times, out_snap_eta[lo:hi], out_snap_xi[lo:hi],
                  want_xi_snap, ext, bnd, out_first_hit[lo:hi],
                  stop_when_extinct)
        out_ext[lo:hi] = ext
        out_bnd[lo:hi] = bnd
        out_final_eta[lo:hi] = eta
        out_final_xi[lo:hi] = xi

    return {"snap_eta": out_snap_eta, "snap_xi": out_snap_xi,
            "ext_time": out_ext, "boundary_hit": out_bnd,
            "final_eta": out_final_eta, "final_xi": out_final_xi,
            "first_hit": out_first_hit}


def product_stationary_xi(catalog: Catalog, pi_site: np.ndarray,
                          pi_edge: np.ndarray, role: int = 1):
    """Callable for run_trials xi0: independent draw per cell from pi."""
    win = catalog.window

    def draw(seed: int) -> np.ndarray:
        rng = stream_rng(seed, role)
        xs = rng.choice(len(pi_site), size=win.n_sites, p=pi_site)
        xe = rng.choice(len(pi_edge), size=win.n_edges, p=pi_edge)
        return np.concatenate([xs, xe]).astype(np.uint8)

    return draw
