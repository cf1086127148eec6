"""
Event-driven evolution of coupled copies sharing one event stream.

A CoupledRun bundles a catalog, a stream and an ordered list of labeled
initial conditions.  evolve() applies the stream to every copy at once (the
coupling device: identical events, per-copy state) and returns a Trajectory
with snapshots, exact change logs, first-hit/extinction/boundary times.

A copy with an empty infection set stays empty (no spontaneous infection);
its background keeps evolving.  Copies may start at a later time t0 and then
ignore all earlier events (temporal shift of the stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphical import Catalog, EventStream
from .kernel import run_events


@dataclass
class CopySpec:
    """One labeled initial condition evolving on the shared stream."""

    label: str
    eta0: np.ndarray
    xi0: np.ndarray
    mode: int = 0       # 0 normal, 1 maximal (all arrows usable, no recovery)
    t0: float = 0.0


def make_copy(catalog: Catalog, label: str, infected, xi_level=0,
              mode: int = 0, t0: float = 0.0,
              xi0: np.ndarray | None = None) -> CopySpec:
    """Convenience constructor: infected = iterable of site indices or 'all'."""
    win = catalog.window
    eta0 = np.zeros(win.n_sites, dtype=np.uint8)
    if isinstance(infected, str) and infected == "all":
        eta0[:] = 1
    else:
        for s in infected:
            eta0[s] = 1
    if xi0 is None:
        xi0 = np.full(win.n_cells, xi_level, dtype=np.uint8)
    else:
        xi0 = np.asarray(xi0, dtype=np.uint8).copy()
    return CopySpec(label, eta0, xi0, mode, t0)


@dataclass
class CoupledRun:
    catalog: Catalog
    stream: EventStream
    copies: list[CopySpec]


@dataclass
class Trajectory:
    """Result of evolve(): snapshots, exact logs and derived times."""

    catalog: Catalog
    copies: list[CopySpec]
    stream: EventStream
    T: float
    snap_times: np.ndarray
    snap_eta: np.ndarray        # (n_copies, n_snap, n_sites)
    snap_xi: np.ndarray         # (n_copies, n_snap, n_cells) or empty
    first_hit: np.ndarray       # (n_copies, n_sites)
    ext_time: np.ndarray        # (n_copies,)
    boundary_hit: np.ndarray    # (n_copies,)
    final_eta: np.ndarray
    final_xi: np.ndarray
    log_t: np.ndarray
    log_copy: np.ndarray
    log_loc: np.ndarray
    log_val: np.ndarray
    log_isbg: np.ndarray
    _site_hist: dict = field(default_factory=dict, repr=False)

    @property
    def n_copies(self) -> int:
        return len(self.copies)

    def copy_index(self, label: str) -> int:
        for i, c in enumerate(self.copies):
            if c.label == label:
                return i
        raise KeyError(label)

    # -- exact replay ------------------------------------------------------
    def eta_at(self, copy: int, t: float) -> np.ndarray:
        """Infection state just after time t (jumps at exactly t included)."""
        eta = self.copies[copy].eta0.copy()
        sel = ((self.log_copy == copy) & (self.log_isbg == 0)
               & (self.log_t <= t))
        for loc, val in zip(self.log_loc[sel], self.log_val[sel]):
            eta[loc] = val
        return eta

    def xi_at(self, copy: int, t: float) -> np.ndarray:
        xi = self.copies[copy].xi0.copy()
        sel = ((self.log_copy == copy) & (self.log_isbg == 1)
               & (self.log_t <= t))
        for loc, val in zip(self.log_loc[sel], self.log_val[sel]):
            xi[loc] = val
        return xi

    def site_history(self, copy: int, site: int):
        """(times, values) of eta changes at one site, plus the initial value."""
        key = (copy, site)
        if key not in self._site_hist:
            sel = ((self.log_copy == copy) & (self.log_isbg == 0)
                   & (self.log_loc == site))
            self._site_hist[key] = (self.log_t[sel], self.log_val[sel])
        times, vals = self._site_hist[key]
        return int(self.copies[copy].eta0[site]), times, vals

    def infected_at(self, copy: int, site: int, t: float) -> bool:
        v0, times, vals = self.site_history(copy, site)
        i = int(np.searchsorted(times, t, side="right"))
        return bool(vals[i - 1]) if i > 0 else bool(v0)

    def n_infected(self, copy: int) -> np.ndarray:
        return self.snap_eta[copy].sum(axis=1)


def evolve(run: CoupledRun, T: float, dt_rec: float = 0.1,
           snap_times: np.ndarray | None = None, log: bool = True,
           want_xi_snap: bool = False, collar_width: int | None = None,
           allowed: np.ndarray | None = None,
           stop_when_extinct: bool = False,
           t_begin: float = 0.0) -> Trajectory:
    """Evolve all copies through events in [t_begin, T]."""
    cat = run.catalog
    stream = run.stream
    if T > stream.horizon + 1e-9:
        raise ValueError(f"T={T} beyond stream horizon {stream.horizon}")
    win = cat.window
    copies = run.copies
    nc = len(copies)
    eta = np.stack([c.eta0 for c in copies]).astype(np.uint8)
    xi = np.stack([c.xi0 for c in copies]).astype(np.uint8)
    mode = np.array([c.mode for c in copies], dtype=np.uint8)
    tstart = np.array([c.t0 for c in copies], dtype=np.float64)
    count = eta.sum(axis=1).astype(np.int64)

    if collar_width is None:
        from .model import SpinSystem
        collar_width = (run.catalog.model.bg.range_L + 1
                        if isinstance(run.catalog.model.bg, SpinSystem) else 1)
    collar = win.collar_mask(collar_width)

    if snap_times is None:
        snap_times = np.arange(0.0, T + dt_rec * 0.5, dt_rec)
    snap_times = np.asarray(snap_times, dtype=np.float64)
    ns = len(snap_times)
    snap_eta = np.zeros((nc, ns, win.n_sites), dtype=np.uint8)
    snap_xi = (np.zeros((nc, ns, win.n_cells), dtype=np.uint8)
               if want_xi_snap else np.zeros((nc, ns, 0), dtype=np.uint8))

    first_hit = np.full((nc, win.n_sites), np.inf)
    ext_time = np.full(nc, np.inf)
    boundary_hit = np.full(nc, np.inf)
    for c in range(nc):
        inf0 = np.nonzero(eta[c])[0]
        first_hit[c, inf0] = tstart[c]
        if count[c] == 0:
            ext_time[c] = tstart[c]
        if np.any(collar[inf0] == 1):
            boundary_hit[c] = tstart[c]

    i0, i1 = stream.index_range(t_begin, T)
    if allowed is None:
        allowed = np.ones(cat.n_maps, dtype=np.uint8)
    cap = (i1 - i0) * nc if log else 0
    log_t = np.zeros(cap, dtype=np.float64)
    log_copy = np.zeros(cap, dtype=np.int32)
    log_loc = np.zeros(cap, dtype=np.int32)
    log_val = np.zeros(cap, dtype=np.int32)
    log_isbg = np.zeros(cap, dtype=np.uint8)

    n_log = run_events(
        stream.times, stream.maps, i0, i1,
        cat.kind, cat.p0, cat.p1, cat.p2, cat.lvl, cat.f0,
        allowed, cat.F3, cat.G, cat.bg_tables, cat.q_up, cat.q_dn,
        cat.nbr_off, cat.nbr_cells,
        eta, xi, mode, tstart, count, collar,
        first_hit, ext_time, boundary_hit,
        snap_times, snap_eta, snap_xi, want_xi_snap,
        cap, log_t, log_copy, log_loc, log_val, log_isbg,
        stop_when_extinct)

    return Trajectory(
        catalog=cat, copies=copies, stream=stream, T=T, snap_times=snap_times,
        snap_eta=snap_eta, snap_xi=snap_xi, first_hit=first_hit,
        ext_time=ext_time, boundary_hit=boundary_hit,
        final_eta=eta, final_xi=xi,
        log_t=log_t[:n_log], log_copy=log_copy[:n_log],
        log_loc=log_loc[:n_log], log_val=log_val[:n_log],
        log_isbg=log_isbg[:n_log])


def maximal_process(catalog: Catalog, stream: EventStream, eta0,
                    T: float, **kw) -> Trajectory:
    """Recovery-free, background-free upper bound (first-passage growth)."""
    copy = make_copy(catalog, "maximal", eta0, mode=1)
    return evolve(CoupledRun(catalog, stream, [copy]), T, **kw)


def truncation_ok(max_traj: Trajectory, copy: int = 0) -> tuple[bool, float]:
    """Window-validity certificate: the maximal process avoided the collar.

    Returns (ok, first violation time); a True certificate means the window
    results coincide pathwise with the untruncated construction.
    """
    t = float(max_traj.boundary_hit[copy])
    return not np.isfinite(t), t


def restart_copy(catalog: Catalog, label: str, infected, t0: float,
                 xi_level: int = 0,
                 xi0: np.ndarray | None = None) -> CopySpec:
    """Copy started from (infected, background) at t0; sees only later events."""
    return make_copy(catalog, label, infected, xi_level=xi_level, t0=t0,
                     xi0=xi0)
