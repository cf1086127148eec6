"""
Lattice geometry: sites, edges, l1 balls and finite windows of Z^d.

Sites are d-tuples of signed integers, edges are unordered pairs of sites at
l1 distance 1, and a cell is either of the two.  A Window materializes the box
[-L, L]^d together with every edge meeting it and assigns dense row-major
indices to sites and cells so the event loop can address state in O(1).

Supported dimensions: 1 <= d <= 3 (rejected elsewhere at config validation;
dense window arrays stay small).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

Site = tuple[int, ...]
# Canonical edge form: (lower endpoint, higher endpoint) in lexicographic order.
Edge = tuple[Site, Site]


def l1_norm(x: Site) -> int:
    """Sum of absolute coordinates."""
    return sum(abs(c) for c in x)


def canonical_edge(x: Site, y: Site) -> Edge:
    if l1_norm(tuple(a - b for a, b in zip(x, y))) != 1:
        raise ValueError(f"not nearest neighbours: {x}, {y}")
    return (x, y) if x <= y else (y, x)


def ball(r: float, center: Site) -> set[Site]:
    """All sites within l1 distance r of center."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    d = len(center)
    ri = int(r)
    out = set()
    for offs in itertools.product(range(-ri, ri + 1), repeat=d):
        if sum(abs(o) for o in offs) <= r:
            out.add(tuple(c + o for c, o in zip(center, offs)))
    return out


def edge_ball(r: float, center: Site) -> set[Edge]:
    """Every edge with at least one endpoint in ball(r, center)."""
    d = len(center)
    out = set()
    for x in ball(r, center):
        for i in range(d):
            for s in (-1, 1):
                y = x[:i] + (x[i] + s,) + x[i + 1:]
                out.add(canonical_edge(x, y))
    return out


def unit_vectors(d: int) -> list[Site]:
    """Positive axis directions e_1 .. e_d."""
    return [tuple(1 if j == i else 0 for j in range(d)) for i in range(d)]


@dataclass(frozen=True)
class Window:
    """Finite box prod_i [lo_i, hi_i] with dense indexing of sites and cells.

    Cells are indexed sites-first: cell index of a site equals its site index,
    edges follow in lexicographic order of their canonical form.  Edges with
    one endpoint outside the box still belong to the window (they meet it) and
    carry background state; their outside endpoint has site index -1.

    The common case is the symmetric box [-L, L]^d (pass radius=L); explicit
    bounds support tiny asymmetric boxes such as a 2-site segment.
    """

    d: int
    radius: int | None = None
    lo: tuple[int, ...] | None = None
    hi: tuple[int, ...] | None = None
    sites: tuple[Site, ...] = field(init=False)
    edges: tuple[Edge, ...] = field(init=False)

    def __post_init__(self):
        if not 1 <= self.d <= 3:
            raise ValueError(f"dimension {self.d} unsupported (need 1..3)")
        if self.radius is not None:
            if self.radius < 0:
                raise ValueError("window radius must be nonnegative")
            object.__setattr__(self, "lo", (-self.radius,) * self.d)
            object.__setattr__(self, "hi", (self.radius,) * self.d)
        if self.lo is None or self.hi is None or len(self.lo) != self.d \
                or len(self.hi) != self.d:
            raise ValueError("need a radius or per-dimension lo/hi bounds")
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError("empty window")
        sites = tuple(itertools.product(
            *(range(l, h + 1) for l, h in zip(self.lo, self.hi))))
        inside = set(sites)
        edges = set()
        for x in sites:
            for i in range(self.d):
                for s in (-1, 1):
                    y = x[:i] + (x[i] + s,) + x[i + 1:]
                    edges.add(canonical_edge(x, y))
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "edges", tuple(sorted(edges)))
        object.__setattr__(self, "_site_index",
                           {x: i for i, x in enumerate(sites)})
        object.__setattr__(self, "_edge_index",
                           {e: i for i, e in enumerate(self.edges)})
        object.__setattr__(self, "_inside", inside)

    # -- sizes ------------------------------------------------------------
    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_cells(self) -> int:
        return self.n_sites + self.n_edges

    # -- lookups ----------------------------------------------------------
    def contains(self, x: Site) -> bool:
        return x in self._inside

    def site_index(self, x: Site) -> int:
        """Dense index of an interior site; -1 for sites outside the box."""
        return self._site_index.get(x, -1)

    def edge_index(self, e: Edge) -> int:
        return self._edge_index[e]

    def edge_cell(self, e: Edge) -> int:
        return self.n_sites + self._edge_index[e]

    def site_of_index(self, i: int) -> Site:
        return self.sites[i]

    def cell_of_index(self, c: int):
        if c < self.n_sites:
            return self.sites[c]
        return self.edges[c - self.n_sites]

    # -- derived geometry --------------------------------------------------
    def directed_edges(self) -> list[tuple[int, int, int]]:
        """Infection arrows (src site idx, dst site idx, edge cell idx).

        Only arrows with both endpoints inside the window; infection never
        crosses the boundary (closed system on the truncated window).
        """
        out = []
        for e in self.edges:
            x, y = e
            ix, iy = self.site_index(x), self.site_index(y)
            if ix < 0 or iy < 0:
                continue
            c = self.edge_cell(e)
            out.append((ix, iy, c))
            out.append((iy, ix, c))
        return out

    def collar_mask(self, width: int) -> np.ndarray:
        """uint8 mask of sites within `width` of the window boundary."""
        m = np.zeros(self.n_sites, dtype=np.uint8)
        for i, x in enumerate(self.sites):
            gap = min(min(c - l, h - c)
                      for c, l, h in zip(x, self.lo, self.hi))
            if gap < width:
                m[i] = 1
        return m

    def sites_in_ball(self, r: float, center: Site) -> list[int]:
        """Indices of window sites within l1 distance r of center."""
        return [i for i in (self.site_index(x) for x in ball(r, center))
                if i >= 0]


def window(d: int, radius: int) -> Window:
    """Symmetric box [-radius, radius]^d."""
    return Window(d, radius)


def segment_window(n_sites: int) -> Window:
    """d=1 box {0, .., n_sites-1}: micro-windows for exact-chain checks."""
    return Window(1, lo=(0,), hi=(n_sites - 1,))
