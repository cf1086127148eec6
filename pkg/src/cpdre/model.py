"""
Rate tables, background specifications and model validation.

A model is a pair of rate functions

    lam : {0..N}^3 -> [0, inf)   infection rate by (tail, edge, head) levels
    r   : {0..N}   -> [0, inf)   recovery rate by site level

plus a background specification describing how the environment levels evolve:
per-cell independent Markov chains, two-state dynamical percolation, or a
finite-range spin system given by a flip-rate table over local patterns.

The level orderings F (ascending in lam) and G (descending in r) turn the rate
tables into telescoped map rates; they live here because they are a property
of the model alone.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .lattice import ball, canonical_edge

SITE = 0
EDGE = 1


@dataclass(frozen=True)
class RateTable:
    """Infection/recovery rates indexed by background levels 0..N."""

    N: int
    lam: np.ndarray  # shape (N+1, N+1, N+1)
    r: np.ndarray    # shape (N+1,)

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        r = np.asarray(self.r, dtype=float)
        n = self.N + 1
        if lam.shape != (n, n, n):
            raise ValueError(f"lam must have shape {(n, n, n)}, got {lam.shape}")
        if r.shape != (n,):
            raise ValueError(f"r must have shape {(n,)}, got {r.shape}")
        for name, t in (("lam", lam), ("r", r)):
            if not np.all(np.isfinite(t)) or np.any(t < 0):
                raise ValueError(f"{name} entries must be finite and >= 0")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "r", r)

    @property
    def lam_max(self) -> float:
        return float(self.lam.max())


@dataclass(frozen=True)
class IndependentUpdates:
    """Per-cell independent Markov chains with generators Q_site, Q_edge."""

    Q_site: np.ndarray
    Q_edge: np.ndarray

    def __post_init__(self):
        for name in ("Q_site", "Q_edge"):
            Q = np.asarray(getattr(self, name), dtype=float)
            _check_generator(Q, name)
            object.__setattr__(self, name, Q)
        if self.Q_site.shape != self.Q_edge.shape:
            raise ValueError("Q_site and Q_edge must act on the same level set")

    @property
    def n_levels(self) -> int:
        return self.Q_site.shape[0]


@dataclass(frozen=True)
class DynamicalPercolation:
    """Two-state background: cells flip 0->1 at rate alpha, 1->0 at rate beta."""

    alpha_V: float
    beta_V: float
    alpha_E: float
    beta_E: float

    def __post_init__(self):
        for name in ("alpha_V", "beta_V", "alpha_E", "beta_E"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class SpinSystem:
    """Finite-range spin background on two levels.

    flip_site / flip_edge have shape (2, 2**m): row 0 holds up-flip rates of a
    0-cell, row 1 down-flip rates of a 1-cell, columns indexed by the binary
    pattern of the cell's neighbourhood (bit order = sorted cell enumeration,
    see neighborhood()).  Pattern sizes m depend on the dimension, so tables
    are supplied for a fixed d.
    """

    range_L: int
    d: int
    flip_site: np.ndarray
    flip_edge: np.ndarray

    def __post_init__(self):
        if self.range_L < 0:
            raise ValueError("spin range must be nonnegative")
        for kind, name in ((SITE, "flip_site"), (EDGE, "flip_edge")):
            t = np.asarray(getattr(self, name), dtype=float)
            m = len(self.neighborhood_offsets(kind))
            if t.shape != (2, 2 ** m):
                raise ValueError(
                    f"{name} must have shape (2, {2 ** m}) for d={self.d}, "
                    f"L={self.range_L}; got {t.shape}")
            if not np.all(np.isfinite(t)) or np.any(t < 0):
                raise ValueError(f"{name} entries must be finite and >= 0")
            object.__setattr__(self, name, t)

    def neighborhood_offsets(self, kind: int):
        """Canonical ordered cell offsets a flip rate may depend on.

        For a site at the origin: sites of ball(L) except itself, plus edges
        with both endpoints in ball(L).  For the edge {0, e_1}: sites of
        ball(L, 0) | ball(L, e_1) plus edges with both endpoints in that set,
        minus the edge itself.  Offsets are ('s', site) / ('e', edge) tuples
        sorted lexicographically; bit i of a pattern is the level of offset i.
        """
        L, d = self.range_L, self.d
        origin = (0,) * d
        if kind == SITE:
            sites = ball(L, origin) - {origin}
            region = ball(L, origin)
            excluded = None
        else:
            e1 = tuple(1 if i == 0 else 0 for i in range(d))
            region = ball(L, origin) | ball(L, e1)
            sites = set(region)
            excluded = canonical_edge(origin, e1)
        edges = set()
        for x in region:
            for i in range(d):
                y = x[:i] + (x[i] + 1,) + x[i + 1:]
                if y in region:
                    edges.add(canonical_edge(x, y))
        if excluded is not None:
            edges.discard(excluded)
        out = [("s", s) for s in sorted(sites)] + [("e", e) for e in sorted(edges)]
        return out


BackgroundSpec = IndependentUpdates | DynamicalPercolation | SpinSystem


def _check_generator(Q: np.ndarray, name: str) -> None:
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        raise ValueError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(Q)):
        raise ValueError(f"{name} has non-finite entries")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        raise ValueError(f"{name} off-diagonals must be >= 0")
    if np.max(np.abs(Q.sum(axis=1))) > 1e-9:
        raise ValueError(f"{name} rows must sum to 0")
    if Q.shape[0] > 1:
        n, _ = connected_components(off > 0, directed=True, connection="strong")
        if n != 1:
            raise ValueError(f"{name} must be irreducible")


def bg_levels(bg: BackgroundSpec) -> int:
    """Number of background levels N+1 implied by the background spec."""
    if isinstance(bg, IndependentUpdates):
        return bg.n_levels
    return 2


@dataclass(frozen=True)
class LevelOrdering:
    """Bijections ranking levels: F ascending in lam, G descending in r.

    F3[i, j, k] is the 1-based rank of triple (i, j, k); triples_by_rank lists
    them in rank order.  G[i] is the 1-based rank of site level i; ties broken
    lexicographically in both.
    """

    F3: np.ndarray             # (N+1, N+1, N+1) int32, ranks 1..(N+1)^3
    G: np.ndarray              # (N+1,) int32, ranks 1..N+1
    triples_by_rank: tuple     # a_1 .. a_{(N+1)^3}
    levels_by_rank: tuple      # b_1 .. b_{N+1}


def level_ordering(rates: RateTable) -> LevelOrdering:
    n = rates.N + 1
    triples = sorted(itertools.product(range(n), repeat=3),
                     key=lambda t: (rates.lam[t], t))
    F3 = np.zeros((n, n, n), dtype=np.int32)
    for rank, t in enumerate(triples, start=1):
        F3[t] = rank
    levels = sorted(range(n), key=lambda b: (-rates.r[b], b))
    G = np.zeros(n, dtype=np.int32)
    for rank, b in enumerate(levels, start=1):
        G[b] = rank
    return LevelOrdering(F3, G, tuple(triples), tuple(levels))


@dataclass(frozen=True)
class Diagnostics:
    monotone: bool
    worst_case_necessary: bool
    bg_monotone: bool
    messages: tuple[str, ...]


def _lam_monotone(lam: np.ndarray) -> bool:
    return all(np.all(np.diff(lam, axis=ax) >= 0) for ax in range(3))


def stochastically_monotone(Q: np.ndarray) -> bool:
    """Stochastic monotonicity of the uniformized kernel of Q.

    On a totally ordered finite state space this is equivalent to monotone
    representability: for i <= j every up-set {k, .., N} must satisfy
    P(i, up-set) <= P(j, up-set).
    """
    n = Q.shape[0]
    if n == 1:
        return True
    lam = float(np.max(-np.diag(Q)))
    if lam == 0:
        return True
    P = np.eye(n) + Q / lam
    tails = P[:, ::-1].cumsum(axis=1)[:, ::-1]  # tails[i, k] = P(i, {k..N})
    return bool(np.all(np.diff(tails, axis=0) >= -1e-12))


def _spin_monotone(spin: SpinSystem) -> bool:
    # Attractiveness: up-flip rates nondecreasing, down-flip rates
    # nonincreasing when any neighbour bit turns on.
    for kind in (SITE, EDGE):
        t = spin.flip_site if kind == SITE else spin.flip_edge
        m = len(spin.neighborhood_offsets(kind))
        for pat in range(2 ** m):
            for bit in range(m):
                if pat & (1 << bit):
                    continue
                hi = pat | (1 << bit)
                if t[0, hi] < t[0, pat] - 1e-12:
                    return False
                if t[1, hi] > t[1, pat] + 1e-12:
                    return False
    return True


def validate_model(rates: RateTable, bg: BackgroundSpec) -> Diagnostics:
    """Structural checks: monotonicity and worst-case-monotonicity necessities."""
    msgs = []
    if bg_levels(bg) != rates.N + 1:
        raise ValueError(
            f"background has {bg_levels(bg)} levels but rate table expects "
            f"{rates.N + 1}")
    monotone = _lam_monotone(rates.lam) and bool(np.all(np.diff(rates.r) <= 0))
    if not monotone:
        msgs.append("rates are not componentwise monotone")
    wc = (rates.lam[0, 0, 0] == rates.lam.min()
          and rates.r[0] == rates.r.max())
    if not wc:
        msgs.append("all-zero background is not the worst case")
    if isinstance(bg, IndependentUpdates):
        bg_mono = (stochastically_monotone(bg.Q_site)
                   and stochastically_monotone(bg.Q_edge))
    elif isinstance(bg, DynamicalPercolation):
        bg_mono = True
    else:
        bg_mono = _spin_monotone(bg)
    if not bg_mono:
        msgs.append("background is not monotonically representable")
    return Diagnostics(monotone, wc, bg_mono, tuple(msgs))


def stationary_dist(Q: np.ndarray) -> np.ndarray:
    """Unique pi with pi Q = 0, sum(pi) = 1, residual below 1e-12."""
    Q = np.asarray(Q, dtype=float)
    _check_generator(Q, "Q")
    n = Q.shape[0]
    A = np.vstack([Q.T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = float(np.max(np.abs(pi @ Q)))
    if resid >= 1e-12 or np.any(pi < -1e-12):
        raise ValueError(f"stationary solve failed (residual {resid:.2e})")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def check_reversible(Q: np.ndarray, pi: np.ndarray) -> bool:
    """Detailed balance pi_i Q_ij = pi_j Q_ji within 1e-10."""
    flow = pi[:, None] * Q
    return bool(np.max(np.abs(flow - flow.T)) < 1e-10)


def spin_bounds(spin: SpinSystem) -> tuple[float, float, float, float]:
    """(alpha_V_lo, beta_V_hi, alpha_E_lo, beta_E_hi): extreme flip rates."""
    return (float(spin.flip_site[0].min()), float(spin.flip_site[1].max()),
            float(spin.flip_edge[0].min()), float(spin.flip_edge[1].max()))


@dataclass(frozen=True)
class Model:
    """Rate table + background, with the derived level ordering."""

    rates: RateTable
    bg: BackgroundSpec
    ordering: LevelOrdering = field(init=False)
    diagnostics: Diagnostics = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ordering", level_ordering(self.rates))
        object.__setattr__(self, "diagnostics",
                           validate_model(self.rates, self.bg))

    @property
    def N(self) -> int:
        return self.rates.N


# -- convenience constructors ---------------------------------------------

def basic_contact_model(lam: float, r: float) -> Model:
    """Classical contact process: N=0, trivial one-state background."""
    rates = RateTable(0, np.full((1, 1, 1), lam), np.array([r]))
    bg = IndependentUpdates(np.zeros((1, 1)), np.zeros((1, 1)))
    return Model(rates, bg)


def cpdp_model(lam: float, r: float, alpha_V: float, beta_V: float,
               alpha_E: float, beta_E: float) -> Model:
    """Dynamical-graph infection over dynamical percolation.

    lam(i, j, k) = lam * j (edge level gates the infection), constant r.
    """
    n = 2
    table = np.zeros((n, n, n))
    table[:, 1, :] = lam
    rates = RateTable(1, table, np.full(n, r))
    return Model(rates, DynamicalPercolation(alpha_V, beta_V, alpha_E, beta_E))


def switching_model(lam00: float, lam01: float, lam10: float, lam11: float,
                    r0: float, r1: float, alpha: float, beta: float) -> Model:
    """Infection rate depends on tail/head site levels, not on the edge.

    lam(i, j, k) = lam_{ik}; site and edge backgrounds both flip 0<->1 at
    rates alpha/beta (the edge level is simply ignored by the rates).
    """
    table = np.zeros((2, 2, 2))
    table[0, :, 0] = lam00
    table[0, :, 1] = lam01
    table[1, :, 0] = lam10
    table[1, :, 1] = lam11
    rates = RateTable(1, table, np.array([r0, r1]))
    Q = np.array([[-alpha, alpha], [beta, -beta]])
    return Model(rates, IndependentUpdates(Q, Q))
