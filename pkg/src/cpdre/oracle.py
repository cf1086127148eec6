"""
Exact finite-CTMC reference for tiny windows.

States are full configurations (eta, xi) of a micro-window; the generator is
assembled straight from the rate tables (not from the map catalog), giving an
independent route to the same process law.  Transient distributions come from
uniformization; compare_mc turns Monte Carlo frequencies into z-scores.

The window is closed: no infection enters or leaves, matching the truncated
process semantics of the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Window
from .model import EDGE, SITE, IndependentUpdates, Model, SpinSystem

MAX_STATES = 4096


@dataclass
class ExactChain:
    window: Window
    model: Model
    Q: np.ndarray
    n_eta_states: int
    n_levels: int

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    def encode(self, eta: np.ndarray, xi: np.ndarray) -> int:
        """State index: eta bits little-endian, then xi digits base N+1."""
        win = self.window
        s = 0
        for i in range(win.n_sites - 1, -1, -1):
            s = s * 2 + int(eta[i])
        x = 0
        for c in range(win.n_cells - 1, -1, -1):
            x = x * self.n_levels + int(xi[c])
        return x * self.n_eta_states + s

    def decode(self, state: int) -> tuple[np.ndarray, np.ndarray]:
        win = self.window
        s = state % self.n_eta_states
        x = state // self.n_eta_states
        eta = np.zeros(win.n_sites, dtype=np.uint8)
        for i in range(win.n_sites):
            eta[i] = s % 2
            s //= 2
        xi = np.zeros(win.n_cells, dtype=np.uint8)
        for c in range(win.n_cells):
            xi[c] = x % self.n_levels
            x //= self.n_levels
        return eta, xi


def _bg_rate(model: Model, win: Window, xi: np.ndarray, cell: int,
             target: int) -> float:
    """Rate of the background transition xi(cell) -> target."""
    cur = int(xi[cell])
    if target == cur:
        return 0.0
    bg = model.bg
    if isinstance(bg, IndependentUpdates):
        Q = bg.Q_site if cell < win.n_sites else bg.Q_edge
        return float(Q[cur, target])
    # DynamicalPercolation; SpinSystem is handled inline (needs the pattern)
    if cell < win.n_sites:
        return bg.alpha_V if target == 1 else bg.beta_V
    return bg.alpha_E if target == 1 else bg.beta_E


def enumerate_and_assemble(model: Model, win: Window) -> ExactChain:
    n_lvls = model.N + 1
    n_eta = 2 ** win.n_sites
    n_xi = n_lvls ** win.n_cells
    n = n_eta * n_xi
    if n > MAX_STATES:
        raise ValueError(f"{n} states exceed the {MAX_STATES} bound")
    chain = ExactChain(win, model, np.zeros((n, n)), n_eta, n_lvls)
    arrows = win.directed_edges()
    rates = model.rates

    spin_nbrs = None
    if isinstance(model.bg, SpinSystem):
        from .graphical import _spin_neighbors
        spin_nbrs = _spin_neighbors(win, model.bg)

    Q = chain.Q
    for st in range(n):
        eta, xi = chain.decode(st)
        # infections
        for src, dst, ecell in arrows:
            if eta[src] == 1 and eta[dst] == 0:
                lam = float(rates.lam[xi[src], xi[ecell], xi[dst]])
                if lam > 0:
                    eta2 = eta.copy()
                    eta2[dst] = 1
                    Q[st, chain.encode(eta2, xi)] += lam
        # recoveries
        for s in range(win.n_sites):
            if eta[s] == 1:
                r = float(rates.r[xi[s]])
                if r > 0:
                    eta2 = eta.copy()
                    eta2[s] = 0
                    Q[st, chain.encode(eta2, xi)] += r
        # background
        for cell in range(win.n_cells):
            if isinstance(model.bg, SpinSystem):
                lo, hi = spin_nbrs[0][cell], spin_nbrs[0][cell + 1]
                pat = 0
                for b, nb in enumerate(spin_nbrs[1][lo:hi]):
                    if nb >= 0 and xi[nb]:
                        pat |= 1 << b
                kind = SITE if cell < win.n_sites else EDGE
                tab = (model.bg.flip_site if kind == SITE
                       else model.bg.flip_edge)
                rate = float(tab[int(xi[cell]), pat])
                if rate > 0:
                    xi2 = xi.copy()
                    xi2[cell] = 1 - xi[cell]
                    Q[st, chain.encode(eta, xi2)] += rate
            else:
                for tgt in range(n_lvls):
                    rate = _bg_rate(model, win, xi, cell, tgt)
                    if rate > 0:
                        xi2 = xi.copy()
                        xi2[cell] = tgt
                        Q[st, chain.encode(eta, xi2)] += rate
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return chain


def transient_dist(chain: ExactChain, init, t: float,
                   tol: float = 1e-10) -> np.ndarray:
    """Distribution at time t by uniformization, truncation error < tol."""
    n = chain.n_states
    p0 = np.zeros(n)
    if np.isscalar(init):
        p0[int(init)] = 1.0
    else:
        p0[:] = init
    if t == 0:
        return p0
    Q = chain.Q
    lam = float(np.max(-np.diag(Q)))
    if lam == 0:
        return p0
    P = np.eye(n) + Q / lam
    mu = lam * t
    # Poisson weights, stable recursion from the mode
    out = np.zeros(n)
    v = p0.copy()
    logw = -mu
    w = np.exp(logw)
    acc = 0.0
    k = 0
    while acc < 1.0 - tol:
        out += w * v
        acc += w
        k += 1
        v = v @ P
        logw += np.log(mu) - np.log(k)
        w = np.exp(logw)
        if k > 20 * (1 + mu):
            break
    s = out.sum()
    if abs(s - 1.0) > 1e-9:
        raise RuntimeError(f"uniformization mass {s}")
    return out / s


def encode_many(chain: ExactChain, eta_rows: np.ndarray,
                xi_rows: np.ndarray) -> np.ndarray:
    """Vectorized encode() over rows."""
    win = chain.window
    pw_eta = 2 ** np.arange(win.n_sites)
    pw_xi = (chain.n_levels ** np.arange(win.n_cells)) * chain.n_eta_states
    return (eta_rows.astype(np.int64) @ pw_eta
            + xi_rows.astype(np.int64) @ pw_xi)


def oracle_case(model: Model, win: Window, eta_sites, ts, n_trials: int,
                master_seed: int):
    """Simulator-vs-exact comparison on one micro case.

    Runs n_trials with per-trial derived seeds, all-zero initial background,
    and returns a list of (t, p_exact, counts, max_abs_z) for each snapshot.
    """
    from .graphical import build_catalog
    from .mc import run_trials, splitmix64

    cat = build_catalog(win, model)
    chain = enumerate_and_assemble(model, win)
    eta0 = np.zeros(win.n_sites, dtype=np.uint8)
    for s in eta_sites:
        eta0[win.site_index(s)] = 1
    init = chain.encode(eta0, np.zeros(win.n_cells, dtype=np.uint8))
    ts = sorted(ts)
    seeds = [splitmix64(master_seed, k) for k in range(n_trials)]
    res = run_trials(cat, max(ts), seeds, eta0, xi0=0,
                     snap_times=np.asarray(ts, dtype=float),
                     want_xi_snap=True, chunk=2048)
    out = []
    for i, t in enumerate(ts):
        p = transient_dist(chain, init, t)
        states = encode_many(chain, res["snap_eta"][:, i], res["snap_xi"][:, i])
        counts = np.bincount(states, minlength=chain.n_states).astype(float)
        z, _ = compare_mc(p, counts, n_trials)
        out.append((t, p, counts, z))
    return out


def compare_mc(p_exact: np.ndarray, counts: np.ndarray,
               n_trials: int) -> tuple[float, np.ndarray]:
    """Max |z| over states, pooling states with expected count < 5.

    Normal z-scores are meaningless for tiny expectations, so low-expectation
    states are pooled into a single cell before scoring.
    """
    if n_trials <= 0:
        raise ValueError("need at least one trial")
    exp = p_exact * n_trials
    big = exp >= 5
    ps, cs = [], []
    for i in np.nonzero(big)[0]:
        ps.append(p_exact[i])
        cs.append(counts[i])
    rest_p = float(p_exact[~big].sum())
    rest_c = float(counts[~big].sum())
    if rest_p * n_trials > 0:
        ps.append(rest_p)
        cs.append(rest_c)
    zs = []
    for p, c in zip(ps, cs):
        se = np.sqrt(p * (1 - p) / n_trials)
        zs.append(0.0 if se == 0 else (c / n_trials - p) / se)
    zs = np.array(zs)
    return float(np.max(np.abs(zs))) if len(zs) else 0.0, zs
