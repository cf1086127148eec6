"""
Oriented bond percolation on Z^d x N and the renormalization block coupling.

Two layers live here.  The first is a pure percolation toolkit: level-indexed
Bernoulli fields on directed macroscopic edges, cluster growth, extinction
levels, return times and slab densities.  The second evaluates renormalization
events on a live graphical construction: starting from a fully infected seed
cube inside a macro box, the infection (with background restarted at all-zero
and arrows confined to a guard box) must fully infect a translated cube in a
neighbouring macro box five macro time units later.  The indicators of these
events populate a 5-dependent oriented field whose open cluster certifies
fully infected cubes -- a hard pathwise implication audited on every run.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from .engine import CoupledRun, Trajectory, evolve, make_copy
from .graphical import INF, Catalog, EventStream, build_catalog, sample_stream
from .lattice import Window, unit_vectors
from .model import Model


class BoxOverflow(RuntimeError):
    """A guard or macro box does not fit inside the simulation window."""


class StreamExhausted(RuntimeError):
    """An event evaluation needs times beyond the sampled stream horizon."""


def directions(d: int) -> list[tuple[int, ...]]:
    """Fixed direction order u_1, .., u_d, -u_1, .., -u_d."""
    pos = unit_vectors(d)
    return pos + [tuple(-c for c in u) for u in pos]


# ---------------------------------------------------------------------------
# pure oriented percolation fields
# ---------------------------------------------------------------------------

@dataclass
class OrientedField:
    """Level-indexed {0,1} field on directed macro edges within a box.

    open_[k-1, i, j] is the state of the level-k edge from box site i in
    direction j (directions(d) order).  Edges whose head falls outside the
    box are stored but never traversed.
    """

    d: int
    p: float
    M: int
    n_max: int
    box: Window
    open_: np.ndarray
    uniforms: np.ndarray | None = None

    def edge_open(self, level: int, site: tuple, dir_idx: int) -> bool:
        return bool(self.open_[level - 1, self.box.site_index(site), dir_idx])


def sample_independent_field(d: int, p: float, n_max: int, box_radius: int,
                             seed: int,
                             keep_uniforms: bool = False) -> OrientedField:
    """i.i.d. Bernoulli(p) field on all (level, edge) pairs."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("density p must lie in [0, 1]")
    box = Window(d, radius=box_radius)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    u = rng.random((n_max, box.n_sites, 2 * d))
    return OrientedField(d, p, 0, n_max, box, (u < p).astype(np.uint8),
                         u if keep_uniforms else None)


def field_from_uniforms(d: int, p: float, box_radius: int,
                        uniforms: np.ndarray) -> OrientedField:
    """Thresholded field from shared uniforms (pathwise monotone in p)."""
    box = Window(d, radius=box_radius)
    return OrientedField(d, p, 0, uniforms.shape[0], box,
                         (uniforms < p).astype(np.uint8), uniforms)


@lru_cache(maxsize=32)
def _edge_endpoints(box: Window, d: int):
    """Per direction, (tail, head) site index arrays for edges inside box."""
    out = []
    for u in directions(d):
        src, dst = [], []
        for i, x in enumerate(box.sites):
            j = box.site_index(tuple(a + b for a, b in zip(x, u)))
            if j >= 0:
                src.append(i)
                dst.append(j)
        out.append((np.array(src, dtype=np.int64),
                    np.array(dst, dtype=np.int64)))
    return out


def _step(field: OrientedField, reach: np.ndarray, level: int) -> np.ndarray:
    """One percolation level: propagate along open level-`level` edges."""
    nxt = np.zeros(field.box.n_sites, dtype=bool)
    row = field.open_[level - 1]
    for j, (src, dst) in enumerate(_edge_endpoints(field.box, field.d)):
        ok = reach[src] & (row[src, j] == 1)
        nxt[dst[ok]] = True
    return nxt


def cluster_levels(field: OrientedField, start=None, starts=None,
                   n: int | None = None) -> list[np.ndarray]:
    """Reachable-set masks [P_0, .., P_n]; stops early once empty."""
    box = field.box
    reach = np.zeros(box.n_sites, dtype=bool)
    if starts is not None:
        for s in starts:
            reach[box.site_index(s)] = True
    else:
        if start is None:
            start = (0,) * field.d
        reach[box.site_index(start)] = True
    n = field.n_max if n is None else n
    out = [reach]
    for k in range(1, n + 1):
        reach = _step(field, reach, k)
        out.append(reach)
        if not reach.any():
            break
    return out


def cluster(field: OrientedField, start, n: int) -> set:
    """P_n: macro sites reachable from (start, 0) in exactly n levels."""
    levels = cluster_levels(field, start=start, n=n)
    if len(levels) <= n:
        return set()
    box = field.box
    return {box.sites[i] for i in np.nonzero(levels[n])[0]}


def extinction_level(field: OrientedField, start=None) -> int | None:
    """First empty level (tau); None when alive at the field horizon."""
    levels = cluster_levels(field, start=start)
    if levels[-1].any():
        return None
    return len(levels) - 1


def hit_counts(field: OrientedField, x, n_hits: int = 1):
    """Return levels R_1 <= .. <= R_n at which (0,0) reaches (x, level),
    plus the first such level whose own cluster is alive at the horizon.

    Returns (R: list of the first n_hits levels found, R_hat_1 or None).
    """
    box = field.box
    xi = box.site_index(x)
    levels = cluster_levels(field)
    hits = [k for k in range(1, len(levels)) if levels[k][xi]]
    r_hat = None
    for k in hits:
        sub = np.zeros(box.n_sites, dtype=bool)
        sub[xi] = True
        for lv in range(k + 1, field.n_max + 1):
            sub = _step(field, sub, lv)
            if not sub.any():
                break
        else:
            r_hat = k
            break
    return hits[:n_hits], r_hat


def density_slab(field: OrientedField, n: int, r: int) -> int:
    """|P_n ∩ B_r ∩ (Z x {0}^{d-1})| started from the even sublattice."""
    box = field.box
    starts = [x for x in box.sites if sum(abs(c) for c in x) % 2 == 0]
    levels = cluster_levels(field, starts=starts, n=n)
    if len(levels) <= n:
        return 0
    count = 0
    for i in np.nonzero(levels[n])[0]:
        x = box.sites[i]
        if abs(x[0]) <= r and all(c == 0 for c in x[1:]):
            count += 1
    return count


def wilson_ci(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    hw = z * np.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - hw), min(1.0, mid + hw)


# ---------------------------------------------------------------------------
# seed cubes on the micro lattice
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _cube_matrix(win: Window, n: int):
    """(centers, rows): site indices whose cube x+[-n,n]^d lies inside the
    window, with rows[i] listing the cube's member site indices."""
    offs = list(itertools.product(range(-n, n + 1), repeat=win.d))
    centers, rows = [], []
    for i, x in enumerate(win.sites):
        idx = [win.site_index(tuple(a + o for a, o in zip(x, off)))
               for off in offs]
        if all(j >= 0 for j in idx):
            centers.append(i)
            rows.append(idx)
    return (np.array(centers, dtype=np.int64),
            np.array(rows, dtype=np.int64))


@lru_cache(maxsize=32)
def _coords(win: Window) -> np.ndarray:
    return np.array(win.sites, dtype=np.int64)


def full_cubes_at(eta: np.ndarray, win: Window, n: int) -> np.ndarray:
    """Center site indices (ascending = lexicographic) of fully infected
    cubes x+[-n,n]^d in the configuration eta."""
    centers, rows = _cube_matrix(win, n)
    ok = eta[rows].all(axis=1)
    return centers[ok]


def first_full_cube(traj: Trajectory, copy: int, n: int, t0: float,
                    t1: float, restrict: np.ndarray | None = None):
    """Earliest time in [t0, t1] at which some cube y+[-n,n]^d is fully
    infected; ties at one timestamp break to the lexicographically smallest
    center.  restrict: optional boolean mask over the cube-center list.

    Returns (t, center site index) or None.
    """
    win = traj.catalog.window
    centers, rows = _cube_matrix(win, n)
    sel_rows = np.ones(len(centers), dtype=bool) if restrict is None \
        else restrict
    eta = traj.eta_at(copy, t0).astype(np.int64)
    deficit = (eta[rows] == 0).sum(axis=1)
    done = sel_rows & (deficit == 0)
    if done.any():
        return t0, int(centers[np.nonzero(done)[0][0]])
    inv: dict[int, list[int]] = {}
    for r in np.nonzero(sel_rows)[0]:
        for s in rows[r]:
            inv.setdefault(int(s), []).append(int(r))
    sel = ((traj.log_copy == copy) & (traj.log_isbg == 0)
           & (traj.log_t > t0) & (traj.log_t <= t1))
    for t, loc, val in zip(traj.log_t[sel], traj.log_loc[sel],
                           traj.log_val[sel]):
        loc = int(loc)
        if val == eta[loc]:
            continue
        eta[loc] = val
        delta = -1 if val == 1 else 1
        best = None
        for r in inv.get(loc, ()):
            deficit[r] += delta
            if delta < 0 and deficit[r] == 0:
                if best is None or centers[r] < best:
                    best = int(centers[r])
        if best is not None:
            return float(t), best
    return None


# ---------------------------------------------------------------------------
# renormalization events on the graphical construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroParams:
    """Renormalization scales: seed half-width n, box half-width a (sites),
    macro time unit b, target edge density p."""

    n: int
    a: int
    b: float
    p: float

    def __post_init__(self):
        if not 0 <= self.n < self.a:
            raise ValueError("need 0 <= n < a")
        if self.b <= 0:
            raise ValueError("macro time unit b must be positive")
        if not 0.0 < self.p < 1.0:
            raise ValueError("target density p must lie in (0, 1)")


def _box_bounds(origin, xhat, a: int, half: int):
    """lo/hi of origin + 2a*xhat + [-half, half]^d."""
    lo = tuple(o + 2 * a * h - half for o, h in zip(origin, xhat))
    hi = tuple(o + 2 * a * h + half for o, h in zip(origin, xhat))
    return lo, hi


def _require_inside(win: Window, lo, hi) -> None:
    if any(l < wl or h > wh
           for l, h, wl, wh in zip(lo, hi, win.lo, win.hi)):
        raise BoxOverflow(f"box {lo}..{hi} exceeds window"
                          f" {win.lo}..{win.hi}")


def _infection_mask(catalog: Catalog, lo, hi) -> np.ndarray:
    """Map mask disabling infection arrows with an endpoint outside the box
    (infection paths confined to the guard box; background unrestricted)."""
    win = catalog.window
    xs = _coords(win)
    in_box = np.ones(win.n_sites, dtype=bool)
    for i in range(win.d):
        in_box &= (xs[:, i] >= lo[i]) & (xs[:, i] <= hi[i])
    allowed = np.ones(catalog.n_maps, dtype=np.uint8)
    inf = np.nonzero(catalog.kind == INF)[0]
    bad = ~in_box[catalog.p0[inf]] | ~in_box[catalog.p1[inf]]
    allowed[inf[bad]] = 0
    return allowed


def block_event(catalog: Catalog, stream: EventStream, params: MacroParams,
                origin, t0: float, xhat, j: int, seed_center: int,
                s: float, u_idx: int):
    """Evaluate the direction-u renormalization event from seed (x, s).

    The seed cube x+[-n,n]^d starts fully infected with all-zero background
    at absolute time s; infection arrows are confined to the guard box
    origin + 2a*xhat + [-5a,5a]^d; success requires some cube with center in
    the macro box of xhat+u fully infected at a time in
    t0 + [(j+5)b, (j+6)b].

    Returns (occurred, (center site index, time) or None).
    """
    win = catalog.window
    d = win.d
    u = directions(d)[u_idx]
    n, a, b = params.n, params.a, params.b
    h_lo, h_hi = _box_bounds(origin, xhat, a, 5 * a)
    _require_inside(win, h_lo, h_hi)
    t_end = t0 + (j + 6) * b
    if t_end > stream.horizon + 1e-9:
        raise StreamExhausted(
            f"need events to t={t_end}, stream ends at {stream.horizon}")
    centers, rows = _cube_matrix(win, n)
    pos = np.searchsorted(centers, seed_center)
    if pos >= len(centers) or centers[pos] != seed_center:
        raise BoxOverflow("seed cube does not fit inside the window")
    copy = make_copy(catalog, "seed", rows[pos], xi_level=0, t0=s)
    traj = evolve(CoupledRun(catalog, stream, [copy]), t_end,
                  snap_times=np.zeros(0),
                  allowed=_infection_mask(catalog, h_lo, h_hi),
                  stop_when_extinct=True, t_begin=s)
    tgt_lo, tgt_hi = _box_bounds(origin, tuple(h + du for h, du in
                                               zip(xhat, u)), a, a)
    xs = _coords(win)[centers]
    restrict = np.ones(len(centers), dtype=bool)
    for i in range(d):
        restrict &= (xs[:, i] >= tgt_lo[i]) & (xs[:, i] <= tgt_hi[i])
    hit = first_full_cube(traj, 0, n, t0 + (j + 5) * b, t_end,
                          restrict=restrict)
    if hit is None:
        return False, None
    t, c = hit
    return True, (c, t)


def probe_block_event(model: Model, d: int, params: MacroParams,
                      u_idx: int = 0, trials: int = 200,
                      master_seed: int = 0, x=None, s: float | None = None,
                      j: int = 0):
    """Monte Carlo estimate of the renormalization event probability.

    Defaults place the seed at the worst corner of the source macro box
    (farthest from the target, latest admissible start time s = (j+1)b).
    Returns (p_hat, (wilson_lo, wilson_hi), trials).
    """
    from .mc import splitmix64

    win = Window(d, radius=5 * params.a + params.n)
    cat = build_catalog(win, model)
    u = directions(d)[u_idx]
    if x is None:
        x = tuple(-params.a * c for c in u)
    if s is None:
        s = (j + 1) * params.b
    seed_center = win.site_index(tuple(x))
    horizon = (j + 6) * params.b
    hits = 0
    for tr in range(trials):
        st = sample_stream(cat, horizon, splitmix64(master_seed, tr))
        occ, _ = block_event(cat, st, params, (0,) * d, 0.0, (0,) * d, j,
                             seed_center, s, u_idx)
        hits += int(occ)
    return hits / trials, wilson_ci(hits, trials), trials


def probe_finite_spacetime(model: Model, d: int, n: int, L: int, T: float,
                           trials: int, master_seed: int = 0) -> dict:
    """Estimates of the three finite space-time event probabilities.

    E1: window radius L+n, seed cube at origin, some cube centered in
        [0, L)^d fully infected at time T+1.
    E2: radius L+2n, some cube centered in {L+n} x [0, L)^{d-1} fully
        infected at a time in [1, T+1).
    E3: radius 2L+3n, some cube centered in [L+n, 2L+n] x [0, 2L)^{d-1}
        fully infected at a time in [T, 2T).

    Returns {"E1": (p, ci), "E2": (p, ci), "E3": (p, ci)}.
    """
    from .mc import splitmix64

    specs = {
        "E1": (L + n, lambda x: all(0 <= c < L for c in x),
               (T + 1.0, T + 1.0)),
        "E2": (L + 2 * n, lambda x: x[0] == L + n
               and all(0 <= c < L for c in x[1:]), (1.0, T + 1.0)),
        "E3": (2 * L + 3 * n, lambda x: L + n <= x[0] <= 2 * L + n
               and all(0 <= c < 2 * L for c in x[1:]), (T, 2.0 * T)),
    }
    out = {}
    for name, (rad, center_ok, (ta, tb)) in specs.items():
        win = Window(d, radius=rad)
        cat = build_catalog(win, model)
        centers, rows = _cube_matrix(win, n)
        restrict = np.array([center_ok(win.sites[c]) for c in centers])
        seed_pos = np.searchsorted(centers, win.site_index((0,) * d))
        seed_rows = rows[seed_pos]
        hits = 0
        for tr in range(trials):
            st = sample_stream(cat, tb, splitmix64(master_seed, tr))
            copy = make_copy(cat, "seed", seed_rows, xi_level=0)
            traj = evolve(CoupledRun(cat, st, [copy]), tb,
                          snap_times=np.zeros(0), stop_when_extinct=True)
            if first_full_cube(traj, 0, n, ta, tb, restrict=restrict):
                hits += 1
        out[name] = (hits / trials, wilson_ci(hits, trials))
        master_seed += trials
    return out


# ---------------------------------------------------------------------------
# block coupling: 5-dependent field from a live run
# ---------------------------------------------------------------------------

@dataclass
class BlockCoupling:
    """Result of build_block_coupling.

    seeds maps (xhat, k) to the certified space-time point (center site
    index, absolute time); the open cluster of `field` only crosses edges
    whose renormalization event occurred, so membership implies a certified
    fully infected cube (audited, `violations` must be 0).
    """

    field: OrientedField
    seeds: dict
    params: MacroParams
    origin: tuple
    t0: float
    n_levels: int
    tracked_edges: int
    levels_tracked: int
    extinction: int | None
    violations: int
    messages: list = dc_field(default_factory=list)
    level_rows: list = dc_field(default_factory=list)
    # per level: dict(level, tracked_edges, open_edges, violations)


def build_block_coupling(catalog: Catalog, stream: EventStream,
                         params: MacroParams, origin_center: int,
                         t0: float, n_levels: int, filler_seed: int,
                         macro_radius: int | None = None) -> BlockCoupling:
    """Populate a 5-dependent oriented field from the graphical construction.

    origin_center: site index of the level-0 seed cube center (the cube is
    started fully infected inside each event evaluation).  Edges out of
    tracked macro sites carry the renormalization event indicators; all
    other edges are i.i.d. Bernoulli(p) filler, so the field is a legitimate
    member of the 5-dependent class while the tracked cluster stays exact.
    """
    win = catalog.window
    d = win.d
    dirs = directions(d)
    if macro_radius is None:
        macro_radius = n_levels
    box = Window(d, radius=macro_radius)
    fld = sample_independent_field(d, params.p, n_levels, macro_radius,
                                   filler_seed)
    fld = OrientedField(d, params.p, 5, n_levels, box, fld.open_)
    origin = win.site_of_index(origin_center)
    zero = (0,) * d
    seeds = {(zero, 0): (origin_center, t0)}
    tracked = {zero: (origin_center, t0)}
    tracked_edges = 0
    levels_tracked = 0
    messages = []
    level_rows = []
    for k in range(1, n_levels + 1):
        j = 5 * (k - 1)
        results = {}
        lvl_edges = 0
        lvl_open = 0
        for xhat, (c, s) in tracked.items():
            for ui in range(2 * d):
                occ, pt = block_event(catalog, stream, params, origin, t0,
                                      xhat, j, c, s, ui)
                fld.open_[k - 1, box.site_index(xhat), ui] = int(occ)
                results[(xhat, ui)] = pt
                tracked_edges += 1
                lvl_edges += 1
                lvl_open += int(occ)
        level_rows.append({"level": k, "tracked_edges": lvl_edges,
                           "open_edges": lvl_open, "violations": 0})
        candidates = set()
        for (xhat, ui), pt in results.items():
            if pt is not None:
                u = dirs[ui]
                child = tuple(h + du for h, du in zip(xhat, u))
                if box.site_index(child) < 0:
                    raise BoxOverflow("tracked cluster left the macro box")
                candidates.add(child)
        # per child, the first direction in the fixed order whose incoming
        # event occurred decides its certified point
        nxt = {}
        for child in sorted(candidates):
            for ui, u in enumerate(dirs):
                parent = tuple(c - du for c, du in zip(child, u))
                pt = results.get((parent, ui))
                if pt is not None:
                    nxt[child] = pt
                    break
        for child, pt in nxt.items():
            seeds[(child, k)] = pt
        tracked = nxt
        if tracked:
            levels_tracked += 1
        else:
            break

    # audit: the open cluster must coincide with the tracked sets and every
    # member must carry a certified seed inside its space-time box
    violations = 0
    levels = cluster_levels(fld)
    extinction = None if levels[-1].any() and len(levels) == n_levels + 1 \
        else len(levels) - 1
    for k in range(1, len(levels)):
        bad = 0
        for i in np.nonzero(levels[k])[0]:
            xhat = box.sites[i]
            pt = seeds.get((xhat, k))
            if pt is None:
                bad += 1
                messages.append(f"level {k}: {xhat} open but uncertified")
                continue
            c, t = pt
            lo, hi = _box_bounds(origin, xhat, params.a, params.a)
            x = win.site_of_index(c)
            if not all(l <= cc <= h for cc, l, h in zip(x, lo, hi)):
                bad += 1
                messages.append(f"level {k}: seed {x} outside box of {xhat}")
            if not (t0 + 5 * k * params.b - 1e-9 <= t
                    <= t0 + (5 * k + 1) * params.b + 1e-9):
                bad += 1
                messages.append(f"level {k}: seed time {t} outside window")
        violations += bad
        if bad and k - 1 < len(level_rows):
            level_rows[k - 1]["violations"] += bad
    return BlockCoupling(fld, seeds, params, origin, t0, n_levels,
                         tracked_edges, levels_tracked, extinction,
                         violations, messages, level_rows)
