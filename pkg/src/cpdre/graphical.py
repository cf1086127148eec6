"""
Random mapping representation: map catalog and seeded Poisson event streams.

The process is driven by a countable catalog of deterministic maps, each with
a constant rate:

  * infection maps, one per directed edge and level rank k, at the telescoped
    rate lam(a_k) - lam(a_{k-1}); the map sets eta(head) = 1 iff the tail is
    infected and F(background triple) >= k,
  * recovery maps, one per site and rank k, at rate r(b_k) - r(b_{k+1}); the
    map sets eta(site) = 0 iff G(current site level) <= k,
  * background maps: constant up/down flips (dynamical percolation), quantile
    maps of the uniformized per-cell kernel (independent updates), or
    threshold maps over local patterns (spin systems).

All coupled copies of a run consume one merged Poisson stream with total rate
sum(h_m) and categorical map selection, so shared randomness is automatic.
Zero-rate maps are never materialized (they cannot fire).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lattice import Window
from .model import (EDGE, SITE, DynamicalPercolation, IndependentUpdates,
                    Model, SpinSystem)

# map kinds
INF = 0
REC = 1
BG = 2
SPIN_UP = 3
SPIN_DOWN = 4

KIND_NAMES = {INF: "inf", REC: "rec", BG: "bg",
              SPIN_UP: "spin_up", SPIN_DOWN: "spin_down"}


@dataclass(frozen=True)
class MapDescriptor:
    """Human-readable view of one catalog entry."""

    kind: int
    rate: float
    level: int          # rank k for inf/rec, 0 otherwise
    src: int            # tail site index (inf only, else -1)
    dst: int            # head site index (inf), site (rec), else -1
    cell: int           # edge cell (inf) / target cell (bg, spin), else -1
    threshold: float    # spin maps: flip applies iff pattern rate >= threshold


@dataclass
class Catalog:
    """Dense arrays describing every map; shared lookup tables.

    Per-map columns (parallel arrays of length n_maps):
      kind  INF/REC/BG/SPIN_UP/SPIN_DOWN
      rate  constant Poisson rate h_m
      p0    inf: tail site; rec: site; bg/spin: cell index
      p1    inf: head site; else -1
      p2    inf: edge cell; bg: row of bg_tables; spin: cell kind; else -1
      lvl   inf/rec: level rank k; else 0
      f0    spin: threshold; else 0
    """

    window: Window
    model: Model
    kind: np.ndarray
    rate: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    lvl: np.ndarray
    f0: np.ndarray
    F3: np.ndarray           # (N+1,)^3 ranks
    G: np.ndarray            # (N+1,) ranks
    bg_tables: np.ndarray    # (n_rows, N+1) target level per current level
    q_up: np.ndarray         # (2, 2**m_max) spin rates by [cell kind, pattern]
    q_dn: np.ndarray
    nbr_off: np.ndarray      # (n_cells+1,) slices into nbr_cells
    nbr_cells: np.ndarray    # flattened neighbour cell indices, -1 = outside

    @property
    def n_maps(self) -> int:
        return len(self.rate)

    @property
    def total_rate(self) -> float:
        return float(self.rate.sum())

    @property
    def cum_rate(self) -> np.ndarray:
        if not hasattr(self, "_cum"):
            self._cum = np.cumsum(self.rate)
        return self._cum

    def describe(self, i: int) -> MapDescriptor:
        k = int(self.kind[i])
        cell = int(self.p2[i]) if k == INF else (
            int(self.p0[i]) if k in (BG, SPIN_UP, SPIN_DOWN) else -1)
        return MapDescriptor(
            kind=k, rate=float(self.rate[i]), level=int(self.lvl[i]),
            src=int(self.p0[i]) if k == INF else -1,
            dst=int(self.p1[i]) if k == INF else (
                int(self.p0[i]) if k == REC else -1),
            cell=cell, threshold=float(self.f0[i]))


def _quantile_maps(Q: np.ndarray):
    """Distinct quantile maps of the uniformized kernel of Q.

    Returns (rates, tables): tables[j] maps current level -> target level,
    active at rate rates[j].  Identity tables are dropped.  The marginal rate
    of any transition i -> v reconstructs Q[i, v] exactly (up to float sums).
    """
    n = Q.shape[0]
    lam = float(np.max(-np.diag(Q)))
    if lam <= 0:
        return [], []
    P = np.eye(n) + Q / lam
    cums = np.cumsum(P, axis=1)
    cums[:, -1] = 1.0
    breaks = np.unique(np.round(cums.ravel(), 12))
    breaks = breaks[breaks > 1e-12]
    rates, tables = [], []
    lo = 0.0
    for c in breaks:
        # target = quantile of each row at the upper endpoint c
        tgt = np.array([int(np.searchsorted(np.round(cums[i], 12), c))
                        for i in range(n)], dtype=np.uint8)
        tgt = np.minimum(tgt, n - 1)
        if np.any(tgt != np.arange(n)):
            rates.append(lam * (c - lo))
            tables.append(tgt)
        lo = c
    return rates, tables


def _threshold_maps(q: np.ndarray):
    """(rate, threshold) pairs telescoping a pattern-rate vector q.

    Maps apply iff q[pattern] >= threshold; summing rates of applicable maps
    returns q[pattern] exactly (thresholds are the distinct values of q).
    """
    vals = np.unique(q[q > 0])
    out = []
    prev = 0.0
    for v in vals:
        out.append((float(v - prev), float(v)))
        prev = float(v)
    return out


def _spin_neighbors(win: Window, spin: SpinSystem):
    """Flattened per-cell neighbour lists in canonical pattern-bit order."""
    d = win.d
    offs = {SITE: spin.neighborhood_offsets(SITE),
            EDGE: spin.neighborhood_offsets(EDGE)}
    nbr_off = np.zeros(win.n_cells + 1, dtype=np.int64)
    chunks = []
    for c in range(win.n_cells):
        if c < win.n_sites:
            anchor = win.site_of_index(c)
            kind, axis = SITE, 0
        else:
            e = win.cell_of_index(c)
            anchor = e[0]
            kind = EDGE
            axis = next(i for i in range(d) if e[0][i] != e[1][i])
        ids = []
        for tag, off in offs[kind]:
            if tag == "s":
                x = _place(anchor, off, axis)
                si = win.site_index(x)
                ids.append(si if si >= 0 else -1)
            else:
                u, v = off
                a = _place(anchor, u, axis)
                b = _place(anchor, v, axis)
                key = (a, b) if a <= b else (b, a)
                try:
                    ids.append(win.edge_cell(key))
                except KeyError:
                    ids.append(-1)
        chunks.append(np.array(ids, dtype=np.int32))
        nbr_off[c + 1] = nbr_off[c] + len(ids)
    nbr_cells = (np.concatenate(chunks) if chunks
                 else np.zeros(0, dtype=np.int32))
    return nbr_off, nbr_cells


def _place(anchor, off, axis):
    """Translate a canonical offset to anchor, swapping axis 0 with `axis`."""
    if axis != 0:
        off = list(off)
        off[0], off[axis] = off[axis], off[0]
    return tuple(a + o for a, o in zip(anchor, off))


def build_catalog(win: Window, model: Model) -> Catalog:
    rates_t = model.rates
    order = model.ordering
    n_lvls = rates_t.N + 1
    kind, rate, p0, p1, p2, lvl, f0 = [], [], [], [], [], [], []

    def add(k, h, a0, a1=-1, a2=-1, level=0, thr=0.0):
        kind.append(k); rate.append(h); p0.append(a0); p1.append(a1)
        p2.append(a2); lvl.append(level); f0.append(thr)

    # infection maps: telescoped ascending lam
    lam_sorted = [rates_t.lam[t] for t in order.triples_by_rank]
    inf_levels = []
    prev = 0.0
    for k, v in enumerate(lam_sorted, start=1):
        h = v - prev
        if h > 0:
            inf_levels.append((k, h))
        prev = v
    for src, dst, ecell in win.directed_edges():
        for k, h in inf_levels:
            add(INF, h, src, dst, ecell, level=k)

    # recovery maps: telescoped descending r
    r_sorted = [rates_t.r[b] for b in order.levels_by_rank]
    rec_levels = []
    for k in range(1, n_lvls + 1):
        nxt = r_sorted[k] if k < n_lvls else 0.0
        h = r_sorted[k - 1] - nxt
        if h > 0:
            rec_levels.append((k, h))
    for s in range(win.n_sites):
        for k, h in rec_levels:
            add(REC, h, s, level=k)

    # background maps
    bg = model.bg
    bg_rows = []
    m_max = 1
    q_up = np.zeros((2, 1))
    q_dn = np.zeros((2, 1))
    nbr_off = np.zeros(1, dtype=np.int64)
    nbr_cells = np.zeros(0, dtype=np.int32)
    if isinstance(bg, DynamicalPercolation):
        bg_rows = [np.array([1, 1], dtype=np.uint8),
                   np.array([0, 0], dtype=np.uint8)]
        for c in range(win.n_cells):
            is_site = c < win.n_sites
            add(BG, bg.alpha_V if is_site else bg.alpha_E, c, a2=0)
            add(BG, bg.beta_V if is_site else bg.beta_E, c, a2=1)
    elif isinstance(bg, IndependentUpdates):
        for Qk, rng_cells in ((bg.Q_site, range(win.n_sites)),
                              (bg.Q_edge, range(win.n_sites, win.n_cells))):
            qr, qt = _quantile_maps(Qk)
            rows = []
            for t in qt:
                rows.append(len(bg_rows))
                bg_rows.append(t)
            for c in rng_cells:
                for h, row in zip(qr, rows):
                    add(BG, h, c, a2=row)
    else:
        spin: SpinSystem = bg
        if spin.d != win.d:
            raise ValueError("spin table dimension does not match window")
        m_site = len(spin.neighborhood_offsets(SITE))
        m_edge = len(spin.neighborhood_offsets(EDGE))
        m_max = max(m_site, m_edge, 1)
        q_up = np.zeros((2, 2 ** m_max))
        q_dn = np.zeros((2, 2 ** m_max))
        q_up[SITE, :2 ** m_site] = spin.flip_site[0]
        q_dn[SITE, :2 ** m_site] = spin.flip_site[1]
        q_up[EDGE, :2 ** m_edge] = spin.flip_edge[0]
        q_dn[EDGE, :2 ** m_edge] = spin.flip_edge[1]
        nbr_off, nbr_cells = _spin_neighbors(win, spin)
        for c in range(win.n_cells):
            ck = SITE if c < win.n_sites else EDGE
            tab = spin.flip_site if ck == SITE else spin.flip_edge
            for h, thr in _threshold_maps(tab[0]):
                add(SPIN_UP, h, c, a2=ck, thr=thr)
            for h, thr in _threshold_maps(tab[1]):
                add(SPIN_DOWN, h, c, a2=ck, thr=thr)

    bg_tab = (np.vstack(bg_rows).astype(np.uint8) if bg_rows
              else np.zeros((1, n_lvls), dtype=np.uint8))
    return Catalog(
        window=win, model=model,
        kind=np.array(kind, dtype=np.int8),
        rate=np.array(rate, dtype=np.float64),
        p0=np.array(p0, dtype=np.int32),
        p1=np.array(p1, dtype=np.int32),
        p2=np.array(p2, dtype=np.int32),
        lvl=np.array(lvl, dtype=np.int32),
        f0=np.array(f0, dtype=np.float64),
        F3=order.F3, G=order.G, bg_tables=bg_tab,
        q_up=q_up, q_dn=q_dn, nbr_off=nbr_off, nbr_cells=nbr_cells)


@dataclass
class EventStream:
    """Time-ordered merged Poisson stream over a catalog.

    Equal timestamps (measure zero, but possible in floats) are ordered by
    catalog index, so replays are exact.
    """

    times: np.ndarray   # float64, nondecreasing
    maps: np.ndarray    # int32 catalog indices
    horizon: float
    seed: int

    def __len__(self) -> int:
        return len(self.times)

    def index_range(self, t0: float, t1: float) -> tuple[int, int]:
        """Events with t0 <= time < t1."""
        return (int(np.searchsorted(self.times, t0, side="left")),
                int(np.searchsorted(self.times, t1, side="left")))


def stream_rng(seed: int, role: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, role)."""
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | (int(role) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def sample_stream(catalog: Catalog, T: float, seed: int,
                  role: int = 0) -> EventStream:
    """Merged stream: Poisson(total * T) events, categorical map selection."""
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    total = catalog.total_rate
    rng = stream_rng(seed, role)
    n = int(rng.poisson(total * T)) if total > 0 and T > 0 else 0
    if n == 0:
        return EventStream(np.zeros(0), np.zeros(0, dtype=np.int32), T, seed)
    times = rng.random(n) * T
    u = rng.random(n)
    maps = np.searchsorted(catalog.cum_rate, u * total,
                           side="right").astype(np.int32)
    maps = np.minimum(maps, catalog.n_maps - 1)
    order = np.lexsort((maps, times))
    return EventStream(times[order], maps[order], T, seed)


def spin_pattern(catalog: Catalog, xi: np.ndarray, cell: int) -> int:
    lo, hi = catalog.nbr_off[cell], catalog.nbr_off[cell + 1]
    pat = 0
    for bit, nb in enumerate(catalog.nbr_cells[lo:hi]):
        if nb >= 0 and xi[nb]:
            pat |= 1 << bit
    return pat


def usable(catalog: Catalog, map_idx: int, xi: np.ndarray) -> bool:
    """Whether an infection arrow can transmit given the background state."""
    if catalog.kind[map_idx] != INF:
        raise ValueError("usable() applies to infection maps")
    src, dst = catalog.p0[map_idx], catalog.p1[map_idx]
    ecell = catalog.p2[map_idx]
    rank = catalog.F3[xi[src], xi[ecell], xi[dst]]
    return bool(rank >= catalog.lvl[map_idx])


def apply_map(catalog: Catalog, map_idx: int, eta: np.ndarray,
              xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pure application of one map to (eta, xi); returns new arrays."""
    eta = eta.copy()
    xi = xi.copy()
    k = catalog.kind[map_idx]
    if k == INF:
        src, dst = catalog.p0[map_idx], catalog.p1[map_idx]
        if eta[src] and not eta[dst] and usable(catalog, map_idx, xi):
            eta[dst] = 1
    elif k == REC:
        s = catalog.p0[map_idx]
        if eta[s] and catalog.G[xi[s]] <= catalog.lvl[map_idx]:
            eta[s] = 0
    elif k == BG:
        c = catalog.p0[map_idx]
        xi[c] = catalog.bg_tables[catalog.p2[map_idx], xi[c]]
    else:
        c = catalog.p0[map_idx]
        ck = catalog.p2[map_idx]
        pat = spin_pattern(catalog, xi, c)
        if k == SPIN_UP:
            if xi[c] == 0 and catalog.q_up[ck, pat] >= catalog.f0[map_idx]:
                xi[c] = 1
        else:
            if xi[c] == 1 and catalog.q_dn[ck, pat] >= catalog.f0[map_idx]:
                xi[c] = 0
    return eta, xi


def dump_stream(stream: EventStream, catalog: Catalog, path) -> None:
    """Debug CSV: one row per event."""
    win = catalog.window
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "kind", "level", "coords"])
        for t, m in zip(stream.times, stream.maps):
            d = catalog.describe(int(m))
            if d.kind == INF:
                coords = (f"{win.site_of_index(d.src)}->"
                          f"{win.site_of_index(d.dst)}")
            elif d.kind == REC:
                coords = str(win.site_of_index(d.dst))
            else:
                coords = str(win.cell_of_index(d.cell))
            w.writerow([f"{t:.9f}", KIND_NAMES[d.kind], d.level, coords])
