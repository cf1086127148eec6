"""
Experiment presets behind one CLI: configuration, seeding, parallel fan-out
over trials, and deterministic CSV emission.

Every preset maps (config, master seed) to a fixed output tree: one or more
data CSVs, a summary.csv of pass/fail checks, a metadata.json sidecar
describing columns, and a manifest.json recording the config hash, seed and
library versions.  Outputs are byte-identical across runs and --jobs values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from types import SimpleNamespace

import numpy as np

from .graphical import build_catalog, dump_stream, sample_stream, stream_rng
from .lattice import Window, segment_window, unit_vectors
from .mc import run_trials, splitmix64
from .model import (EDGE, SITE, Model, RateTable, SpinSystem,
                    basic_contact_model, cpdp_model, switching_model)

FLOAT_FMT = "%.10g"


def derive_trial_seed(master: int, trial_id: int) -> int:
    """Collision-free 64-bit per-trial seed (documented splitmix64 step)."""
    return splitmix64(master, trial_id)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 1)."""


def _spin_tables(m: int, up0: float, up1: float, dn0: float, dn1: float):
    """Attractive flip tables: up = up0 + up1*pop, down = dn0 + dn1*(m-pop)."""
    pats = np.arange(2 ** m)
    pop = np.array([bin(p).count("1") for p in pats], dtype=float)
    t = np.zeros((2, 2 ** m))
    t[0] = up0 + up1 * pop
    t[1] = dn0 + dn1 * (m - pop)
    return t


def _spin_pattern_size(range_L: int, d: int, kind: int) -> int:
    probe = SimpleNamespace(range_L=range_L, d=d)
    return len(SpinSystem.neighborhood_offsets(probe, kind))


def spin_glauber_model(lam_closed: float, lam_open: float, r0: float,
                       r1: float, d: int, range_L: int,
                       up0: float, up1: float, dn0: float,
                       dn1: float) -> Model:
    """Two-level spin background with attractive linear flip tables.

    lam(i, j, k) = lam_open if the edge level j is 1 else lam_closed;
    recovery r0/r1 by the site level.
    """
    lam = np.empty((2, 2, 2))
    lam[:, 0, :] = lam_closed
    lam[:, 1, :] = lam_open
    bg = SpinSystem(
        range_L, d,
        _spin_tables(_spin_pattern_size(range_L, d, SITE), up0, up1, dn0, dn1),
        _spin_tables(_spin_pattern_size(range_L, d, EDGE), up0, up1, dn0, dn1))
    return Model(RateTable(1, lam, np.array([r0, r1])), bg)


def model_from_spec(spec: dict, d: int) -> Model:
    """Build a Model from the JSON model spec {"kind": ..., params...}."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError('model spec must be an object with a "kind" key')
    kind = spec["kind"]
    p = {k: v for k, v in spec.items() if k != "kind"}
    try:
        if kind == "basic":
            return basic_contact_model(p["lam"], p["r"])
        if kind == "cpdp":
            a = p.get("alpha")
            b = p.get("beta")
            return cpdp_model(
                p["lam"], p["r"],
                p.get("alpha_V", a), p.get("beta_V", b),
                p.get("alpha_E", a), p.get("beta_E", b))
        if kind == "switching":
            return switching_model(p["lam00"], p["lam01"], p["lam10"],
                                   p["lam11"], p["r0"], p["r1"],
                                   p["alpha"], p["beta"])
        if kind == "spin":
            return spin_glauber_model(
                p["lam_closed"], p["lam_open"], p["r0"], p["r1"],
                d, p.get("range_L", 1),
                p.get("up0", 0.5), p.get("up1", 0.5),
                p.get("dn0", 0.5), p.get("dn1", 0.25))
    except KeyError as e:
        raise ConfigError(f'model kind "{kind}" is missing parameter {e}') \
            from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f'invalid model spec: {e}') from None
    raise ConfigError(
        f'unknown model kind "{kind}"; expected basic|cpdp|switching|spin')


@dataclass
class ExperimentConfig:
    """Validated run description: preset name plus shared and preset fields."""

    preset: str
    model: dict
    d: int = 1
    radius: int = 10
    T: float = 10.0
    dt_rec: float = 0.5
    trials: int = 100
    seed: int = 0
    params: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"preset": self.preset, "model": self.model, "d": self.d,
                "radius": self.radius, "T": self.T, "dt_rec": self.dt_rec,
                "trials": self.trials, "seed": self.seed,
                "params": self.params}

    def build_model(self) -> Model:
        return model_from_spec(self.model, self.d)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - {"preset", "model", "d", "radius", "T", "dt_rec",
                           "trials", "seed", "params"}
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if "preset" not in data:
        raise ConfigError('config needs a "preset" field; '
                          f"known presets: {sorted(PRESETS)}")
    preset = data["preset"]
    if preset not in PRESETS:
        raise ConfigError(f'unknown preset "{preset}"; '
                          f"known presets: {sorted(PRESETS)}")
    cfg = ExperimentConfig(
        preset=preset,
        model=data.get("model", dict(PRESET_DEFAULTS[preset].get(
            "model", {"kind": "basic", "lam": 2.0, "r": 1.0}))),
        d=int(data.get("d", PRESET_DEFAULTS[preset].get("d", 1))),
        radius=int(data.get("radius",
                            PRESET_DEFAULTS[preset].get("radius", 10))),
        T=float(data.get("T", PRESET_DEFAULTS[preset].get("T", 10.0))),
        dt_rec=float(data.get("dt_rec", 0.5)),
        trials=int(data.get("trials",
                            PRESET_DEFAULTS[preset].get("trials", 100))),
        seed=int(data.get("seed", 0)),
        params={**PRESET_DEFAULTS[preset].get("params", {}),
                **data.get("params", {})},
    )
    if cfg.d < 1:
        raise ConfigError(f"dimension must be >= 1, got {cfg.d}")
    if cfg.radius < 1:
        raise ConfigError(f"window radius must be >= 1, got {cfg.radius}")
    if cfg.T <= 0:
        raise ConfigError(f"horizon T must be > 0, got {cfg.T}")
    if cfg.trials < 0:
        raise ConfigError(f"trials must be >= 0, got {cfg.trials}")
    if cfg.seed < 0 or cfg.seed > 0xFFFFFFFFFFFFFFFF:
        raise ConfigError("master seed must fit in 64 bits")
    if cfg.preset != "percolation":
        cfg.build_model()  # raises ConfigError on a bad model spec
    return cfg


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply --override key=value pairs (dotted paths, JSON values)."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f'override "{item}" is not of the form '
                              "key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f'override path "{key}" crosses a '
                                  "non-object value")
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# deterministic CSV / JSON emission
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v is None:
        return "NA"
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "NA"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return FLOAT_FMT % v
    return str(v)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def write_manifest(out_dir: str, cfg: ExperimentConfig) -> None:
    import numba

    from . import __version__
    blob = json.dumps(cfg.as_dict(), sort_keys=True, separators=(",", ":"))
    manifest = {
        "config": cfg.as_dict(),
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "master_seed": cfg.seed,
        "versions": {"cpdre": __version__, "numpy": np.__version__,
                     "numba": numba.__version__,
                     "python": ".".join(map(str, sys.version_info[:3]))},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def write_metadata(out_dir: str, tables: dict) -> None:
    """Sidecar describing every emitted CSV column (units in brackets)."""
    with open(os.path.join(out_dir, "metadata.json"), "w") as f:
        json.dump(tables, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# statistics helpers
# ---------------------------------------------------------------------------

def fit_log_slope(t: np.ndarray, counts: np.ndarray, n: int,
                  min_count: int = 5):
    """OLS slope of log(counts/n) vs t with a 95% CI; (nan, nan, nan) if
    fewer than 3 usable points."""
    t = np.asarray(t, dtype=float)
    counts = np.asarray(counts, dtype=float)
    use = counts >= min_count
    if use.sum() < 3:
        return float("nan"), float("nan"), float("nan")
    x = t[use]
    y = np.log(counts[use] / n)
    xm = x - x.mean()
    slope = float(np.dot(xm, y) / np.dot(xm, xm))
    resid = y - y.mean() - slope * xm
    dof = len(x) - 2
    se = float(np.sqrt(np.dot(resid, resid) / max(dof, 1) / np.dot(xm, xm)))
    from scipy.stats import t as tdist
    half = float(tdist.ppf(0.975, max(dof, 1)) * se)
    return slope, slope - half, slope + half


def fit_slope_simple(x: np.ndarray, counts: np.ndarray):
    """OLS slope of log(counts) vs x over points with counts >= 1.

    For rare-event tails where normal-theory CIs are meaningless; needs at
    least two usable points, else nan.
    """
    x = np.asarray(x, dtype=float)
    counts = np.asarray(counts, dtype=float)
    use = counts >= 1
    if use.sum() < 2:
        return float("nan")
    xs = x[use]
    y = np.log(counts[use])
    xm = xs - xs.mean()
    return float(np.dot(xm, y) / np.dot(xm, xm))


def geometric_gof(values: np.ndarray):
    """Chi-square GOF of values >= 1 against Geometric(p_hat = 1/mean).

    Cells {1, 2, ...} are pooled from the right until every expected count
    is >= 5; df = cells - 2 (one estimated parameter).  Returns (p_value,
    statistic, df); a fit with fewer than 3 cells is degenerate and reported
    as p = 1 with df = 0.
    """
    from scipy.stats import chi2

    values = np.asarray(values, dtype=int)
    n = len(values)
    if n == 0 or values.min() < 1:
        raise ValueError("geometric GOF needs values >= 1")
    p_hat = 1.0 / values.mean()
    kmax = int(values.max())
    obs = np.bincount(values, minlength=kmax + 1)[1:].astype(float)
    exp = n * p_hat * (1 - p_hat) ** np.arange(kmax)
    exp[-1] = n * (1 - p_hat) ** (kmax - 1)  # tail mass pooled into last cell
    while len(exp) > 1 and exp[-1] < 5:
        exp[-2] += exp[-1]
        obs[-2] += obs[-1]
        exp = exp[:-1]
        obs = obs[:-1]
    df = len(exp) - 2
    if df < 1:
        return 1.0, 0.0, 0
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return float(chi2.sf(stat, df)), stat, df


def _parallel(worker, payloads: list, jobs: int) -> list:
    """Order-preserving map, optionally over a process pool."""
    if jobs <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(worker, payloads))


def _chunks(n: int, pieces: int) -> list[tuple[int, int]]:
    pieces = max(1, min(pieces, n))
    step = -(-n // pieces)
    return [(lo, min(lo + step, n)) for lo in range(0, n, step)]


@lru_cache(maxsize=8)
def _cached_catalog(cfg_json: str):
    data = json.loads(cfg_json)
    cfg = config_from_dict(data)
    win = Window(cfg.d, radius=cfg.radius)
    return cfg, win, build_catalog(win, cfg.build_model())


# ---------------------------------------------------------------------------
# preset: oracle
# ---------------------------------------------------------------------------

ORACLE_CASES = {
    "basic": {"model": {"kind": "basic", "lam": 1.5, "r": 1.0},
              "n_sites": 2, "eta": [0], "ts": [0.3, 1.0]},
    "cpdp": {"model": {"kind": "cpdp", "lam": 2.0, "r": 1.0,
                       "alpha": 1.0, "beta": 1.0},
             "n_sites": 2, "eta": [0], "ts": [0.3, 1.0]},
    "switching": {"model": {"kind": "switching", "lam00": 0.5, "lam01": 1.0,
                            "lam10": 1.5, "lam11": 2.5, "r0": 1.5, "r1": 0.5,
                            "alpha": 1.0, "beta": 2.0},
                  "n_sites": 2, "eta": [0], "ts": [0.3, 1.0]},
    "spin": {"model": {"kind": "spin", "lam_closed": 0.5, "lam_open": 2.0,
                       "r0": 1.2, "r1": 0.6, "range_L": 1},
             "n_sites": 2, "eta": [0], "ts": [0.3, 1.0]},
}


def preset_oracle(cfg: ExperimentConfig, out_dir: str, jobs: int):
    from .oracle import oracle_case

    rows = []
    summary = []
    for ci, (name, case) in enumerate(sorted(ORACLE_CASES.items())):
        model = model_from_spec(case["model"], 1)
        win = segment_window(case["n_sites"])
        res = oracle_case(model, win, [(s,) for s in case["eta"]],
                          case["ts"], cfg.trials,
                          splitmix64(cfg.seed, ci))
        worst = 0.0
        for t, p, counts, _ in res:
            for state, p_ex, p_mc, z in _pooled_rows(p, counts, cfg.trials):
                rows.append((name, t, state, p_ex, p_mc, z))
                worst = max(worst, abs(z))
        summary.append((f"oracle_{name}_max_abs_z", worst, "< 4", worst < 4))
    write_csv(os.path.join(out_dir, "oracle.csv"),
              ["case", "t", "state", "p_exact", "p_mc", "z"], rows)
    return summary, {"oracle.csv": {
        "case": "micro-case name", "t": "snapshot time [time]",
        "state": "encoded (eta, xi) state; -1 = pooled low-expectation cell",
        "p_exact": "uniformization probability", "p_mc": "MC frequency",
        "z": "normal z-score"}}


def _pooled_rows(p_exact: np.ndarray, counts: np.ndarray, n: int):
    """Per-state (state, p_exact, p_mc, z) rows; expected-count-below-5
    states pooled into one row labeled -1 (mirrors the oracle comparison)."""
    exp = p_exact * n
    big = exp >= 5
    cells = [(int(i), float(p_exact[i]), float(counts[i]))
             for i in np.nonzero(big)[0]]
    rest_p = float(p_exact[~big].sum())
    if rest_p * n > 0:
        cells.append((-1, rest_p, float(counts[~big].sum())))
    out = []
    for state, pe, c in cells:
        se = math.sqrt(pe * (1 - pe) / n)
        z = 0.0 if se == 0 else (c / n - pe) / se
        out.append((state, pe, c / n, z))
    return out


# ---------------------------------------------------------------------------
# preset: couplings
# ---------------------------------------------------------------------------

CHECKS = ("additivity", "monotone", "worst_case", "conditional_duality")


def _couplings_chunk(payload):
    from .duality import conditional_duality_check
    from .engine import CoupledRun, CopySpec, evolve

    cfg_json, lo, hi = payload
    cfg, win, cat = _cached_catalog(cfg_json)
    N = cat.model.N
    monotone = cat.model.diagnostics.monotone
    snap_times = np.arange(0.0, cfg.T + 1e-9, cfg.dt_rec)
    rows = []
    traj_rows = []
    for trial in range(lo, hi):
        seed = derive_trial_seed(cfg.seed, trial)
        stream = sample_stream(cat, cfg.T, seed)
        rng = stream_rng(seed, role=7)
        eta_a = (rng.random(win.n_sites) < 0.25).astype(np.uint8)
        eta_b = (rng.random(win.n_sites) < 0.25).astype(np.uint8)
        eta_ab = eta_a | eta_b
        xi_r = rng.integers(0, N + 1, win.n_cells).astype(np.uint8)
        eta_pr = (rng.random(win.n_sites) < 0.25).astype(np.uint8)
        copies = [
            CopySpec("A", eta_a, xi_r.copy()),
            CopySpec("B", eta_b, xi_r.copy()),
            CopySpec("AuB", eta_ab, xi_r.copy()),
            CopySpec("lo", eta_a.copy(),
                     np.zeros(win.n_cells, dtype=np.uint8)),
            CopySpec("hi", eta_ab.copy(),
                     np.full(win.n_cells, N, dtype=np.uint8)),
        ]
        traj = evolve(CoupledRun(cat, stream, copies), cfg.T,
                      snap_times=snap_times, want_xi_snap=True)
        se = traj.snap_eta
        sx = traj.snap_xi
        viol = {c: 0 for c in CHECKS}
        n_pts = len(snap_times)
        viol["additivity"] = int(np.sum(np.any(
            se[2] != (se[0] | se[1]), axis=1)))
        if monotone:
            viol["monotone"] = int(np.sum(
                np.any(se[3] > se[4], axis=1)
                | np.any(sx[3] > sx[4], axis=1)))
            viol["worst_case"] = int(np.sum(np.any(se[3] > se[0], axis=1)))
        fwd, dua, equal = conditional_duality_check(traj, cfg.T / 2, eta_pr)
        viol["conditional_duality"] = 0 if equal else 1
        for c in CHECKS:
            pts = 1 if c == "conditional_duality" else n_pts
            rows.append((trial, c, pts, viol[c]))
        if trial < 5:
            for c in range(len(copies)):
                for si, t in enumerate(snap_times):
                    traj_rows.append((trial, copies[c].label, t,
                                      int(se[c, si].sum()),
                                      int(np.isfinite(
                                          traj.boundary_hit[c])
                                          and traj.boundary_hit[c] <= t)))
    return rows, traj_rows


def preset_couplings(cfg: ExperimentConfig, out_dir: str, jobs: int):
    cfg_json = json.dumps(cfg.as_dict(), sort_keys=True)
    parts = _parallel(_couplings_chunk,
                      [(cfg_json, lo, hi)
                       for lo, hi in _chunks(cfg.trials, jobs * 4)], jobs)
    rows = [r for p in parts for r in p[0]]
    traj_rows = [r for p in parts for r in p[1]]
    write_csv(os.path.join(out_dir, "couplings.csv"),
              ["trial", "check", "n_points", "violations"], rows)
    write_csv(os.path.join(out_dir, "trajectories.csv"),
              ["trial", "copy", "time", "n_infected", "boundary_flag"],
              traj_rows)
    monotone = cfg.build_model().diagnostics.monotone
    summary = []
    for c in CHECKS:
        if c in ("monotone", "worst_case") and not monotone:
            continue
        total = sum(r[3] for r in rows if r[1] == c)
        summary.append((f"couplings_{c}_violations", total, "== 0",
                        total == 0))
    return summary, {
        "couplings.csv": {"trial": "trial id", "check": "audit name",
                          "n_points": "checked snapshot count",
                          "violations": "snapshots violating the identity"},
        "trajectories.csv": {"trial": "trial id", "copy": "copy label",
                             "time": "snapshot time [time]",
                             "n_infected": "infected site count",
                             "boundary_flag":
                                 "1 if the collar was hit by this time"}}


# ---------------------------------------------------------------------------
# preset: streams
# ---------------------------------------------------------------------------

def _reconstruct_exact(cat) -> bool:
    """Telescoped map rates must resum to the rate tables exactly."""
    from .graphical import INF, REC

    rates = cat.model.rates
    F3, G = cat.F3, cat.G
    n = rates.N + 1
    ok = True
    for src, dst, ec in cat.window.directed_edges():
        sel = (cat.kind == INF) & (cat.p0 == src) & (cat.p1 == dst)
        lv = cat.lvl[sel]
        rt = cat.rate[sel]
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    tot = rt[lv <= F3[i, j, k]].sum()
                    if abs(tot - rates.lam[i, j, k]) > 1e-9:
                        ok = False
    for s in range(cat.window.n_sites):
        sel = (cat.kind == REC) & (cat.p0 == s)
        lv = cat.lvl[sel]
        rt = cat.rate[sel]
        for b in range(n):
            tot = rt[lv >= G[b]].sum()
            if abs(tot - rates.r[b]) > 1e-9:
                ok = False
    return ok


def preset_streams(cfg: ExperimentConfig, out_dir: str, jobs: int):
    from scipy.stats import chi2

    win = Window(cfg.d, radius=cfg.radius)
    cat = build_catalog(win, cfg.build_model())
    n_streams = int(cfg.params.get("n_streams", 100))
    counts = np.zeros(cat.n_maps, dtype=np.int64)
    for k in range(n_streams):
        st = sample_stream(cat, cfg.T, derive_trial_seed(cfg.seed, k))
        counts += np.bincount(st.maps, minlength=cat.n_maps)
        if k == 0:
            dump_stream(st, cat, os.path.join(out_dir, "stream_dump.csv"))
    mu = cat.rate * cfg.T * n_streams
    z = (counts - mu) / np.sqrt(mu)
    stat = float(np.sum(z ** 2))
    p_val = float(chi2.sf(stat, cat.n_maps))
    exact = _reconstruct_exact(cat)
    rows = [(m, int(cat.kind[m]), cat.rate[m], mu[m], int(counts[m]),
             float(z[m])) for m in range(cat.n_maps)]
    write_csv(os.path.join(out_dir, "streams.csv"),
              ["map", "kind", "rate", "expected", "observed", "z"], rows)
    summary = [
        ("streams_reconstruction_exact", int(exact), "== 1", exact),
        ("streams_chi2_p", p_val, "> 0.001", p_val > 0.001),
    ]
    return summary, {
        "streams.csv": {"map": "catalog map index", "kind": "map kind code",
                        "rate": "map rate [1/time]",
                        "expected": "expected count over all streams",
                        "observed": "observed count", "z": "Poisson z-score"},
        "stream_dump.csv": {"time": "event time [time]", "kind": "map kind",
                            "level": "map level", "location": "cell/arrow"}}


# ---------------------------------------------------------------------------
# preset: duality
# ---------------------------------------------------------------------------

def preset_duality(cfg: ExperimentConfig, out_dir: str, jobs: int):
    from .duality import stationary_duality_check

    win = Window(cfg.d, radius=cfg.radius)
    model = cfg.build_model()
    t = float(cfg.params.get("t", cfg.T / 2))
    eta = [win.site_index(tuple(x)) for x in cfg.params.get("eta", [[0]])]
    eta_pr = [win.site_index(tuple(x))
              for x in cfg.params.get("eta_prime", [[1]])]
    p_fwd, p_dual, z = stationary_duality_check(
        model, win, eta, eta_pr, t, cfg.trials, cfg.seed)
    name = cfg.model.get("kind", "model")
    write_csv(os.path.join(out_dir, "duality.csv"),
              ["model", "t", "p_fwd", "p_dual", "n_trials", "z"],
              [(name, t, p_fwd, p_dual, cfg.trials, z)])
    summary = [("duality_abs_z", abs(z), "< 4", abs(z) < 4)]
    return summary, {"duality.csv": {
        "model": "model kind", "t": "comparison time [time]",
        "p_fwd": "forward hit probability", "p_dual": "dual hit probability",
        "n_trials": "trials per side", "z": "two-proportion z"}}


# ---------------------------------------------------------------------------
# preset: extinction
# ---------------------------------------------------------------------------

def preset_extinction(cfg: ExperimentConfig, out_dir: str, jobs: int):
    win = Window(cfg.d, radius=cfg.radius)
    cat = build_catalog(win, cfg.build_model())
    seed_r = int(cfg.params.get("seed_radius", 2))
    eta0 = np.zeros(win.n_sites, dtype=np.uint8)
    for i in win.sites_in_ball(seed_r, (0,) * cfg.d):
        eta0[i] = 1
    xi_init = cfg.params.get("xi_init", "one")
    xi0 = cat.model.N if xi_init == "one" else 0
    seeds = [derive_trial_seed(cfg.seed, k) for k in range(cfg.trials)]
    res = run_trials(cat, cfg.T, seeds, eta0, xi0=xi0,
                     stop_when_extinct=True)
    tau = res["ext_time"]
    finite = np.isfinite(tau)
    rows = [(k, tau[k] if finite[k] else cfg.T,
             0 if finite[k] else 1) for k in range(cfg.trials)]
    write_csv(os.path.join(out_dir, "extinction.csv"),
              ["trial", "tau", "censor"], rows)
    t_grid = np.asarray(cfg.params.get(
        "t_grid", list(np.arange(2.0, 20.5, 2.0))))
    counts = np.array([(finite & (tau > t)).sum() for t in t_grid])
    tail_rows = [(t, int(c), c / cfg.trials,
                  math.log(c / cfg.trials) if c else float("nan"))
                 for t, c in zip(t_grid, counts)]
    write_csv(os.path.join(out_dir, "tails.csv"),
              ["t", "n_finite_gt_t", "p", "log_p"], tail_rows)
    slope, lo, hi = fit_log_slope(t_grid, counts, cfg.trials)
    survival = float((~finite).mean())
    min_surv = float(cfg.params.get("min_survival", 0.3))
    summary = [
        ("extinction_survival_rate", survival, f">= {min_surv}",
         survival >= min_surv),
        ("extinction_tail_slope", slope, "< 0", bool(slope < 0)),
        ("extinction_tail_slope_ci_hi", hi, "< 0", bool(hi < 0)),
    ]
    return summary, {
        "extinction.csv": {"trial": "trial id",
                           "tau": "extinction time, horizon if censored "
                                  "[time]",
                           "censor": "1 = survived to the horizon"},
        "tails.csv": {"t": "threshold [time]",
                      "n_finite_gt_t": "count of t < tau < horizon",
                      "p": "empirical P(t < tau < inf)",
                      "log_p": "natural log of p"}}


# ---------------------------------------------------------------------------
# preset: shape (hitting times, growth envelope, coupled regions)
# ---------------------------------------------------------------------------

def _shape_arm(cat, cfg: ExperimentConfig, xi_level: int, radii, rays,
               arm_idx: int):
    win = cat.window
    seed_r = int(cfg.params.get("seed_radius", 2))
    eta0 = np.zeros(win.n_sites, dtype=np.uint8)
    for i in win.sites_in_ball(seed_r, (0,) * cfg.d):
        eta0[i] = 1
    seeds = [derive_trial_seed(cfg.seed + arm_idx, k)
             for k in range(cfg.trials)]
    res = run_trials(cat, cfg.T, seeds, eta0, xi0=xi_level,
                     stop_when_extinct=True)
    fh = res["first_hit"]
    hits = np.full((cfg.trials, len(rays), len(radii)), np.nan)
    for ri, ray in enumerate(rays):
        for ni, r in enumerate(radii):
            site = win.site_index(tuple(int(r) * c for c in ray))
            if site < 0:
                raise ConfigError(
                    f"radius {r} along ray {ray} leaves the window; "
                    f"increase the window radius (now {cfg.radius})")
            col = fh[:, site]
            hits[:, ri, ni] = np.where(np.isfinite(col), col, np.nan)
    surviving = ~np.isfinite(res["ext_time"])
    return hits, surviving, fh


def preset_shape(cfg: ExperimentConfig, out_dir: str, jobs: int):
    from .observables import inclusion_rates, shape_estimate

    win = Window(cfg.d, radius=cfg.radius)
    model = cfg.build_model()
    cat = build_catalog(win, model)
    radii = np.asarray(cfg.params.get("radii",
                                      [5, 10, 15, 20, 30, 40, 50, 60]),
                       dtype=float)
    e1 = unit_vectors(cfg.d)[0]
    rays = [e1, tuple(-c for c in e1)]
    min_surv = int(cfg.params.get("min_surviving", 10))
    arms = {"xi_zero": 0, "xi_full": model.N}

    hit_rows, shape_rows, est = [], [], {}
    fh_zero = surv_zero = None
    for ai, (arm, lvl) in enumerate(sorted(arms.items())):
        hits, surviving, fh = _shape_arm(cat, cfg, lvl, radii, rays, ai)
        if arm == "xi_zero":
            fh_zero, surv_zero = fh, surviving
        n_surv = int(surviving.sum())
        if n_surv < min_surv:
            raise ConfigError(
                f">= {min_surv} surviving trials required, arm {arm} has "
                f"{n_surv}; raise trials (now {cfg.trials})")
        se = shape_estimate(hits, rays, radii, surviving,
                            seed=splitmix64(cfg.seed, 900 + ai))
        est[arm] = se
        for k in range(cfg.trials):
            for ri, ray in enumerate(rays):
                for ni, r in enumerate(radii):
                    t = hits[k, ri, ni]
                    hit_rows.append((arm, k, ri, int(r),
                                     cfg.T if math.isnan(t) else t,
                                     1 if math.isnan(t) else 0))
        for ri in range(len(rays)):
            for ni, r in enumerate(radii):
                shape_rows.append((arm, ri, int(r), se.table[ri, ni],
                                   se.mu_hat[ri], se.ci_lo[ri],
                                   se.ci_hi[ri]))
    write_csv(os.path.join(out_dir, "hits.csv"),
              ["arm", "trial", "ray", "n", "t", "censor"], hit_rows)
    write_csv(os.path.join(out_dir, "shape.csv"),
              ["arm", "ray", "n", "t_over_n_mean", "mu_hat", "ci_lo",
               "ci_hi"], shape_rows)

    # growth envelope H_t subset B_{Mt} and directional inclusion rates
    lam_max = float(model.rates.lam.max())
    M = 3 * lam_max * 2 * cfg.d
    t_grid = np.asarray(cfg.params.get(
        "t_grid", list(np.arange(1.0, cfg.T + 1e-9, 2.0))))
    norms = np.abs(np.array(win.sites)).sum(axis=1)
    growth_rows = []
    viol_total = 0
    for t in t_grid:
        outside = norms > M * t
        bad = int(np.sum(np.any(fh_zero[:, outside] <= t, axis=1))) \
            if outside.any() else 0
        viol_total += bad
        growth_rows.append((t, M, bad, cfg.trials))
    write_csv(os.path.join(out_dir, "growth.csv"),
              ["t", "M", "violations", "n_trials"], growth_rows)

    mu0 = float(np.nanmean(est["xi_zero"].mu_hat))
    axis_sites = [win.site_index(tuple(int(r) * c for c in e1))
                  for r in range(0, cfg.radius + 1)]
    eps_grid = np.asarray(cfg.params.get("eps_grid", [0.2, 0.4, 0.6]))
    inc = inclusion_rates(fh_zero[surv_zero][:, axis_sites], mu0, t_grid,
                          eps_grid, np.arange(0, cfg.radius + 1, dtype=float))
    inc_rows = [(t, e, inc[it, ie, 0], inc[it, ie, 1])
                for it, t in enumerate(t_grid)
                for ie, e in enumerate(eps_grid)]
    write_csv(os.path.join(out_dir, "inclusion.csv"),
              ["t", "eps", "inner_rate", "outer_rate"], inc_rows)

    _regions_sidecar(cat, cfg, out_dir)

    sz = est["xi_zero"]
    sf = est["xi_full"]
    sec_dev = float(np.nanmax(np.abs(sz.secant - sz.secant_half)
                              / np.nanmean(sz.mu_hat)))
    overlap = all(
        sz.ci_lo[r] <= sf.ci_hi[r] and sf.ci_lo[r] <= sz.ci_hi[r]
        for r in range(len(rays)))
    viol_rate = viol_total / (len(t_grid) * cfg.trials)
    summary = [
        ("shape_secant_stabilization", sec_dev, "< 0.15", sec_dev < 0.15),
        ("shape_growth_violation_rate", viol_rate, "< 0.01",
         viol_rate < 0.01),
        ("shape_arms_ci_overlap", int(overlap), "== 1", overlap),
        ("shape_surviving_xi_zero", int(surv_zero.sum()),
         f">= {min_surv}", True),
    ]
    meta = {
        "hits.csv": {"arm": "initial background arm", "trial": "trial id",
                     "ray": "ray index (0 = +e1, 1 = -e1)",
                     "n": "l1 radius [sites]",
                     "t": "hitting time, horizon if censored [time]",
                     "censor": "1 = never hit"},
        "shape.csv": {"arm": "initial background arm", "ray": "ray index",
                      "n": "l1 radius [sites]",
                      "t_over_n_mean": "mean t(n)/n [time/site]",
                      "mu_hat": "per-ray growth time estimate [time/site]",
                      "ci_lo": "bootstrap 2.5%", "ci_hi": "bootstrap 97.5%"},
        "growth.csv": {"t": "time [time]", "M": "envelope speed bound",
                       "violations": "trials with a hit outside B_Mt",
                       "n_trials": "trial count"},
        "inclusion.csv": {"t": "time [time]", "eps": "tolerance",
                          "inner_rate": "P(inner ball fully hit)",
                          "outer_rate": "P(no hit beyond outer ball)"},
        "regions.csv": {"trial": "trial id", "time": "snapshot time [time]",
                        "H": "|ever-infected set|",
                        "K": "|infection agreement set|",
                        "Kbar": "|permanent infection agreement set|",
                        "Psi": "|background agreement set|",
                        "Phi": "|sites with fully coupled neighbourhood|"},
    }
    return summary, meta


def _regions_sidecar(cat, cfg: ExperimentConfig, out_dir: str) -> None:
    """Small coupled-region audit run alongside the shape experiment."""
    from .engine import CoupledRun, CopySpec, evolve
    from .observables import (background_coupled_region, ever_infected,
                              infection_coupled_region, permanently_coupled,
                              phi_region)

    win = cat.window
    model = cat.model
    n_reg = int(cfg.params.get("region_trials", 5))
    T = min(cfg.T, 10.0)
    times = np.arange(1.0, T + 1e-9, 2.0)
    rows = []
    spin_range = model.bg.range_L if isinstance(model.bg, SpinSystem) else 0
    for k in range(n_reg):
        seed = derive_trial_seed(cfg.seed + 17, k)
        stream = sample_stream(cat, T, seed)
        o = win.site_index((0,) * cfg.d)
        eta0 = np.zeros(win.n_sites, dtype=np.uint8)
        eta0[o] = 1
        eta_all = np.ones(win.n_sites, dtype=np.uint8)
        copies = [CopySpec("lo", eta0, np.zeros(win.n_cells, dtype=np.uint8)),
                  CopySpec("hi", eta_all,
                           np.full(win.n_cells, model.N, dtype=np.uint8))]
        traj = evolve(CoupledRun(cat, stream, copies), T,
                      snap_times=np.zeros(0))
        for t in times:
            h = len(ever_infected(traj, 0, t).sites)
            kt = len(infection_coupled_region(traj, t).sites)
            kb = len(permanently_coupled(traj, t).sites)
            if model.diagnostics.bg_monotone:
                ps = len(background_coupled_region(traj, t).cells)
                ph = len(phi_region(traj, spin_range, t).sites)
            else:
                ps = ph = None
            rows.append((k, t, h, kt, kb, ps, ph))
    write_csv(os.path.join(out_dir, "regions.csv"),
              ["trial", "time", "H", "K", "Kbar", "Psi", "Phi"], rows)


# ---------------------------------------------------------------------------
# preset: essential hitting
# ---------------------------------------------------------------------------

def _essential_chunk(payload):
    from .essential import essential_hitting

    cfg_json, lo, hi = payload
    cfg, win, cat = _cached_catalog(cfg_json)
    x_coord = tuple(cfg.params.get("x", [5] + [0] * (cfg.d - 1)))
    x = win.site_index(x_coord)
    T_surv = float(cfg.params.get("T_surv", cfg.T))
    rows = []
    for trial in range(lo, hi):
        seed = derive_trial_seed(cfg.seed, trial)
        stream = sample_stream(cat, cfg.T, seed)
        rec = essential_hitting(cat, stream, x, xi0=cat.model.N,
                                horizon=cfg.T, T_surv=T_surv)
        u1 = rec.iterations[0].u if rec.iterations else float("inf")
        equiv_ok = _equiv_ok(rec)
        rows.append((trial, x, rec.K, rec.sigma.value,
                     int(not rec.sigma.finite), u1, rec.t_first,
                     int(rec.censored), int(equiv_ok)))
    return rows


def _equiv_ok(rec) -> bool:
    """{K = k and survival} iff {u_k < inf and v_k = inf}, censored level.

    A determined K must end in exactly one of two consistent patterns:
    survival (iteration K has finite u and infinite v) or base death (one
    extra iteration with infinite u, every earlier v finite).
    """
    if rec.K is None:
        return True
    k, its = rec.K, rec.iterations
    if len(its) == k and k >= 1:
        it = its[-1]
        return bool(math.isfinite(it.u) and it.v is not None
                    and not it.v.finite)
    if len(its) == k + 1:
        if math.isfinite(its[-1].u):
            return False
        return all(it.v is not None and it.v.finite for it in its[:k])
    return False


def preset_essential(cfg: ExperimentConfig, out_dir: str, jobs: int):
    cfg_json = json.dumps(cfg.as_dict(), sort_keys=True)
    parts = _parallel(_essential_chunk,
                      [(cfg_json, lo, hi)
                       for lo, hi in _chunks(cfg.trials, jobs * 4)], jobs)
    rows = [r for p in parts for r in p]
    write_csv(os.path.join(out_dir, "essential.csv"),
              ["trial", "x", "K", "sigma", "censor", "u_1", "t_first",
               "undetermined", "equiv_ok"], rows)
    ks = np.array([r[2] for r in rows if r[2] is not None], dtype=int)
    n_grid = np.arange(0, max(ks.max(), 1) if len(ks) else 1)
    counts = np.array([(ks > n).sum() for n in n_grid])
    slope, lo_s, hi_s = fit_log_slope(n_grid, counts, max(len(ks), 1),
                                      min_count=3)
    sigma_ge = all(r[3] >= r[6] - 1e-9 for r in rows
                   if math.isfinite(r[6]))
    equiv = all(r[8] == 1 for r in rows)
    summary = [
        ("essential_K_tail_slope", slope, "< 0", bool(slope < 0)),
        ("essential_sigma_ge_t_first", int(sigma_ge), "== 1", sigma_ge),
        ("essential_equivalence_ok", int(equiv), "== 1", equiv),
    ]
    return summary, {"essential.csv": {
        "trial": "trial id", "x": "target site index",
        "K": "iteration count, NA if undetermined at the horizon",
        "sigma": "essential hitting time [time]",
        "censor": "1 = sigma censored at the horizon",
        "u_1": "first re-hit time of iteration 1 [time]",
        "t_first": "first hitting time of x [time]",
        "undetermined": "1 = K undetermined at the horizon",
        "equiv_ok": "1 = censored-level K/survival equivalence held"}}


# ---------------------------------------------------------------------------
# presets: block construction and restart procedure
# ---------------------------------------------------------------------------

def _macro_params(cfg: ExperimentConfig):
    from .percolation import MacroParams

    p = cfg.params
    return MacroParams(int(p.get("n", 2)), int(p.get("a", 4)),
                       float(p.get("b", 3.0)), float(p.get("p", 0.9)))


def _block_chunk(payload):
    from .percolation import build_block_coupling

    cfg_json, lo, hi = payload
    cfg, win, cat = _cached_catalog(cfg_json)
    params = _macro_params(cfg)
    n_levels = int(cfg.params["n_levels"])
    horizon = (5 * (n_levels - 1) + 6) * params.b + 1
    origin = win.site_index((0,) * cfg.d)
    rows = []
    for trial in range(lo, hi):
        seed = derive_trial_seed(cfg.seed, trial)
        stream = sample_stream(cat, horizon, seed)
        bc = build_block_coupling(cat, stream, params, origin, 0.0,
                                  n_levels, filler_seed=splitmix64(seed, 1))
        for lr in bc.level_rows:
            frac = (lr["open_edges"] / lr["tracked_edges"]
                    if lr["tracked_edges"] else float("nan"))
            rows.append((trial, lr["level"], lr["tracked_edges"],
                         frac, lr["violations"]))
    return rows


def preset_block(cfg: ExperimentConfig, out_dir: str, jobs: int):
    from .percolation import probe_block_event

    params = _macro_params(cfg)
    model = cfg.build_model()
    probe_trials = int(cfg.params.get("probe_trials", 200))
    p_hat, (ci_lo, ci_hi), _ = probe_block_event(
        model, cfg.d, params, trials=probe_trials,
        master_seed=splitmix64(cfg.seed, 0xB10C))
    cfg.params.setdefault("n_levels", 10)
    cfg_json = json.dumps(cfg.as_dict(), sort_keys=True)
    parts = _parallel(_block_chunk,
                      [(cfg_json, lo, hi)
                       for lo, hi in _chunks(cfg.trials, jobs * 2)], jobs)
    rows = [r for p in parts for r in p]
    write_csv(os.path.join(out_dir, "block.csv"),
              ["trial", "level", "tracked_edges", "open_fraction",
               "violations"], rows)
    write_csv(os.path.join(out_dir, "block_probe.csv"),
              ["n", "a", "b", "p", "trials", "p_hat", "ci_lo", "ci_hi"],
              [(params.n, params.a, params.b, params.p, probe_trials,
                p_hat, ci_lo, ci_hi)])
    levels_tracked = len(rows)
    violations = sum(r[4] for r in rows)
    min_levels = int(cfg.params.get("min_tracked_levels", 0))
    summary = [
        ("block_probe_p_hat", p_hat, ">= 0.9", ci_lo >= 0.9 or p_hat >= 0.9),
        ("block_tracked_levels", levels_tracked, f">= {min_levels}",
         levels_tracked >= min_levels),
        ("block_implication_violations", violations, "== 0",
         violations == 0),
    ]
    return summary, {
        "block.csv": {"trial": "trial id", "level": "macro level",
                      "tracked_edges": "renormalization events evaluated",
                      "open_fraction": "fraction of tracked edges open",
                      "violations": "cluster members without a certificate"},
        "block_probe.csv": {"n": "seed half-width [sites]",
                            "a": "box half-width [sites]",
                            "b": "macro time unit [time]",
                            "p": "target edge density",
                            "trials": "probe trials",
                            "p_hat": "worst-corner event probability",
                            "ci_lo": "Wilson 2.5%", "ci_hi": "Wilson 97.5%"}}


def _restart_chunk(payload):
    from .essential import restart_procedure

    cfg_json, lo, hi = payload
    cfg, win, cat = _cached_catalog(cfg_json)
    params = _macro_params(cfg)
    macro_horizon = int(cfg.params.get("macro_horizon", 8))
    # the stream must cover a block coupling launched near the micro horizon
    stream_T = cfg.T + (5 * (macro_horizon - 1) + 6) * params.b + 1
    rows = []
    iter_rows = []
    for trial in range(lo, hi):
        seed = derive_trial_seed(cfg.seed, trial)
        stream = sample_stream(cat, stream_T, seed)
        rec = restart_procedure(cat, stream, cat.model.N, params, cfg.T,
                                macro_horizon=macro_horizon,
                                filler_seed=splitmix64(seed, 2))
        y = ";".join(map(str, rec.Y)) if rec.Y is not None else None
        rows.append((trial, rec.L, rec.sigma.value,
                     int(not rec.sigma.finite), y,
                     rec.sigma_identity_ok, rec.seed_in_restart,
                     rec.seed_in_base, rec.message))
        for ell, it in enumerate(rec.iterations, start=1):
            iter_rows.append((trial, ell, it.N, it.M))
    return rows, iter_rows


def preset_restart(cfg: ExperimentConfig, out_dir: str, jobs: int):
    cfg_json = json.dumps(cfg.as_dict(), sort_keys=True)
    parts = _parallel(_restart_chunk,
                      [(cfg_json, lo, hi)
                       for lo, hi in _chunks(cfg.trials, jobs * 2)], jobs)
    rows = [r for p in parts for r in p[0]]
    iter_rows = [r for p in parts for r in p[1]]
    write_csv(os.path.join(out_dir, "restart.csv"),
              ["trial", "L", "sigma", "censor", "Y_coords",
               "sigma_identity_ok", "seed_in_restart", "seed_in_base",
               "message"], rows)
    write_csv(os.path.join(out_dir, "restart_iters.csv"),
              ["trial", "ell", "N", "M"], iter_rows)
    done = [r for r in rows if r[1] is not None]
    Ls = np.array([r[1] for r in done], dtype=int)
    if len(Ls):
        gof_p, stat, df = geometric_gof(Ls)
    else:
        gof_p, stat, df = float("nan"), float("nan"), 0
    seed_ok = all(r[6] for r in done)
    ident_ok = all(r[5] for r in done)
    sig = np.sort(np.array([r[2] for r in done]))
    summary = [
        ("restart_completed", len(done), ">= 1", len(done) >= 1),
        ("restart_geometric_gof_p", gof_p, "> 0.001",
         bool(gof_p > 0.001)),
        ("restart_seed_in_eta_sigma", int(seed_ok), "== 1", seed_ok),
        ("restart_sigma_identity", int(ident_ok), "== 1", ident_ok),
    ]
    if len(sig) >= 20:
        t_grid = np.arange(1.0, max(float(sig.max()), 2.0))
        counts = np.array([(sig > t).sum() for t in t_grid])
        slope, s_lo, s_hi = fit_log_slope(t_grid, counts, len(sig))
        summary.append(("restart_sigma_tail_slope", slope, "< 0",
                        bool(slope < 0)))
    else:
        summary.append(("restart_sigma_tail_slope", None,
                        "skipped: < 20 completed runs", True))
    return summary, {
        "restart.csv": {"trial": "trial id",
                        "L": "first surviving iteration, NA if censored",
                        "sigma": "restart time [time]",
                        "censor": "1 = censored",
                        "Y_coords": "seed center coordinates (;-joined)",
                        "sigma_identity_ok":
                            "1 = sigma equals its telescoped sum",
                        "seed_in_restart":
                            "1 = Y + [-n, n]^d infected at sigma",
                        "seed_in_base": "1 = same in the base copy, NA if "
                                        "not applicable",
                        "message": "censoring reason"},
        "restart_iters.csv": {"trial": "trial id", "ell": "iteration",
                              "N": "integer steps to death or a seed cube",
                              "M": "macro extinction level, NA = alive"}}


# ---------------------------------------------------------------------------
# preset: oriented percolation diagnostics
# ---------------------------------------------------------------------------

def _percolation_chunk(payload):
    from .percolation import cluster_levels, hit_counts, sample_independent_field

    cfg_json, lo, hi = payload
    cfg = config_from_dict(json.loads(cfg_json))
    prm = cfg.params
    p = float(prm.get("p", 0.95))
    n_max = int(prm.get("n_max", 40))
    box_r = int(prm.get("box_radius", n_max))
    slab_r = int(prm.get("slab_radius", 10))
    beta = float(prm.get("beta", 0.6))
    n_grid = list(prm.get("n_grid", [5, 10, 20, 30, 40]))
    short_grid = list(prm.get("short_grid", [2, 4, 6, 8, 10]))
    tau_cap = int(prm.get("tau_cap", 6))
    tau_start_r = int(prm.get("tau_start_radius", 28))
    x_hit = tuple(prm.get("x_hit", [2] + [0] * (cfg.d - 1)))

    box = Window(cfg.d, radius=box_r)
    even = [x for x in box.sites if sum(abs(c) for c in x) % 2 == 0]
    origin_like = [x for x in box.sites if sum(abs(c) for c in x) <= 1]
    tau_starts = [x for x in box.sites
                  if sum(abs(c) for c in x) <= tau_start_r]
    axis = np.array([i for i, x in enumerate(box.sites)
                     if all(c == 0 for c in x[1:])
                     and sum(abs(c) for c in x) <= slab_r])
    axis_norm = np.array([sum(abs(c) for c in box.sites[i]) for i in axis])
    axis_coord = np.array([box.sites[i][0] for i in axis])

    rows = []
    tau_tail = np.zeros(tau_cap, dtype=np.int64)          # count tau > t, finite
    shortfall = np.zeros(len(short_grid), dtype=np.int64)
    shortfall_n = np.zeros(len(short_grid), dtype=np.int64)
    for k in range(lo, hi):
        fld = sample_independent_field(cfg.d, p, n_max, box_r,
                                       derive_trial_seed(cfg.seed, k))
        lv = cluster_levels(fld)
        alive = lv[-1].any() and len(lv) == n_max + 1
        tau = None if alive else len(lv) - 1
        hit_levels, r1 = hit_counts(fld, x_hit)
        lv_slab = cluster_levels(fld, starts=even)
        for n in n_grid:
            size = int(lv[n].sum()) if n < len(lv) else 0
            dens = int(lv_slab[n][axis].sum()) if n < len(lv_slab) else 0
            rows.append((p, fld.M, k, n, size, tau,
                         hit_levels[0] if hit_levels else None, dens))
        # tau-on-extinction tail pooled over many start sites
        for x in tau_starts:
            lx = cluster_levels(fld, start=x, n=tau_cap)
            if not (lx[-1].any() and len(lx) == tau_cap + 1):
                t_ext = len(lx) - 1
                tau_tail[:t_ext] += 1
        # conditional slab-density shortfall from near-origin starts,
        # ball radius growing with the level (decay in n on survival)
        for x in origin_like:
            lx = cluster_levels(fld, start=x, n=max(short_grid))
            if not (lx[-1].any() and len(lx) == max(short_grid) + 1):
                continue
            for ni, n in enumerate(short_grid):
                r = max(1, n // 2)
                par = (sum(abs(c) for c in x) + n) % 2
                in_ball = (np.abs(axis_coord - x[0]) <= r) \
                    & (axis_norm % 2 == par) if cfg.d == 1 \
                    else (axis_norm <= r) & (axis_norm % 2 == par)
                count = int(lx[n][axis[in_ball]].sum())
                shortfall_n[ni] += 1
                if count < beta * 0.5 * n:
                    shortfall[ni] += 1
    return rows, tau_tail, shortfall, shortfall_n, len(tau_starts)


def preset_percolation(cfg: ExperimentConfig, out_dir: str, jobs: int):
    cfg_json = json.dumps(cfg.as_dict(), sort_keys=True)
    parts = _parallel(_percolation_chunk,
                      [(cfg_json, lo, hi)
                       for lo, hi in _chunks(cfg.trials, jobs * 2)], jobs)
    rows = [r for p in parts for r in p[0]]
    tau_tail = np.sum([p[1] for p in parts], axis=0)
    shortfall = np.sum([p[2] for p in parts], axis=0)
    shortfall_n = np.sum([p[3] for p in parts], axis=0)
    n_starts = parts[0][4]
    short_grid = list(cfg.params.get("short_grid", [2, 4, 6, 8, 10]))
    tau_cap = int(cfg.params.get("tau_cap", 6))

    write_csv(os.path.join(out_dir, "percolation.csv"),
              ["p", "M", "trial", "level", "cluster_size", "tau", "R1",
               "density"], rows)
    n_tau_samples = cfg.trials * n_starts
    t_grid = np.arange(1, tau_cap)
    tail_rows = [(int(t), int(tau_tail[t]), tau_tail[t] / n_tau_samples)
                 for t in t_grid]
    write_csv(os.path.join(out_dir, "perc_tails.csv"),
              ["t", "n_tau_gt_t", "p"], tail_rows)
    short_rows = [(n, int(c), int(m), c / m if m else float("nan"))
                  for n, c, m in zip(short_grid, shortfall, shortfall_n)]
    write_csv(os.path.join(out_dir, "perc_shortfall.csv"),
              ["n", "n_shortfall", "n_surviving", "p"], short_rows)
    s1 = fit_slope_simple(t_grid, tau_tail[1:tau_cap])
    s2 = fit_slope_simple(np.asarray(short_grid, dtype=float), shortfall)
    summary = [
        ("percolation_tau_tail_slope", s1, "< 0", bool(s1 < 0)),
        ("percolation_shortfall_slope", s2, "< 0", bool(s2 < 0)),
    ]
    return summary, {
        "percolation.csv": {"p": "edge density", "M": "dependency range",
                            "trial": "field id", "level": "macro level n",
                            "cluster_size": "|P_n| from the origin",
                            "tau": "extinction level, NA = alive",
                            "R1": "first hit level of x, NA = never",
                            "density": "|P_n ∩ slab| from the even "
                                       "sublattice"},
        "perc_tails.csv": {"t": "level",
                           "n_tau_gt_t": "count of t < tau < inf, pooled "
                                         "over start sites",
                           "p": "empirical probability"},
        "perc_shortfall.csv": {"n": "level",
                               "n_shortfall": "surviving starts below the "
                                              "slab density target",
                               "n_surviving": "surviving starts measured",
                               "p": "empirical probability"}}


# ---------------------------------------------------------------------------
# preset: calibrate (macro parameter sweep)
# ---------------------------------------------------------------------------

def preset_calibrate(cfg: ExperimentConfig, out_dir: str, jobs: int):
    from .percolation import MacroParams, probe_block_event

    model = cfg.build_model()
    grid_n = cfg.params.get("n_grid", [1, 2])
    grid_a = cfg.params.get("a_grid", [3, 4])
    grid_b = cfg.params.get("b_grid", [2.0, 3.0])
    target = float(cfg.params.get("p", 0.9))
    rows = []
    best = None
    for i, (n, a, b) in enumerate(
            (n, a, b) for n in grid_n for a in grid_a for b in grid_b):
        if not n < a:
            continue
        params = MacroParams(int(n), int(a), float(b), target)
        p_hat, (lo, hi), _ = probe_block_event(
            model, cfg.d, params, trials=cfg.trials,
            master_seed=splitmix64(cfg.seed, i))
        rows.append((n, a, b, cfg.trials, p_hat, lo, hi))
        if lo >= target and (best is None or p_hat > best[4]):
            best = rows[-1]
    write_csv(os.path.join(out_dir, "calibrate.csv"),
              ["n", "a", "b", "trials", "p_hat", "ci_lo", "ci_hi"], rows)
    found = best is not None
    summary = [("calibrate_found_params", int(found),
                f"probe ci_lo >= {target}", True)]
    return summary, {"calibrate.csv": {
        "n": "seed half-width [sites]", "a": "box half-width [sites]",
        "b": "macro time unit [time]", "trials": "probe trials",
        "p_hat": "worst-corner event probability",
        "ci_lo": "Wilson 2.5%", "ci_hi": "Wilson 97.5%"}}


# ---------------------------------------------------------------------------
# preset registry, defaults, runner
# ---------------------------------------------------------------------------

CALIBRATED_MODEL = {"kind": "cpdp", "lam": 8.0, "r": 1.0,
                    "alpha": 2.0, "beta": 1.0}
SUPERCRITICAL_MODEL = {"kind": "cpdp", "lam": 4.0, "r": 1.0,
                       "alpha": 1.0, "beta": 1.0}

PRESET_DEFAULTS = {
    "oracle": {"trials": 2000, "radius": 1, "T": 1.0},
    "couplings": {"model": {"kind": "cpdp", "lam": 2.0, "r": 1.0,
                            "alpha": 1.0, "beta": 1.0},
                  "radius": 8, "T": 6.0, "trials": 200},
    "streams": {"model": {"kind": "cpdp", "lam": 2.0, "r": 1.0,
                          "alpha": 1.0, "beta": 1.0},
                "radius": 3, "T": 10.0, "trials": 100},
    "duality": {"model": {"kind": "cpdp", "lam": 2.0, "r": 1.0,
                          "alpha": 1.0, "beta": 1.0},
                "radius": 12, "T": 5.0, "trials": 20000,
                "params": {"t": 5.0, "eta": [[0]], "eta_prime": [[1]]}},
    "extinction": {"model": SUPERCRITICAL_MODEL, "radius": 90, "T": 25.0,
                   "trials": 2000, "params": {"seed_radius": 2}},
    "shape": {"model": SUPERCRITICAL_MODEL, "radius": 140, "T": 45.0,
              "trials": 400},
    "essential": {"model": SUPERCRITICAL_MODEL, "radius": 80, "T": 40.0,
                  "trials": 100, "params": {"x": [5], "T_surv": 40.0}},
    "block": {"model": CALIBRATED_MODEL, "radius": 125, "trials": 10,
              "T": 160.0,
              "params": {"n": 2, "a": 4, "b": 3.0, "p": 0.9,
                         "n_levels": 10}},
    "restart": {"model": CALIBRATED_MODEL, "radius": 170, "T": 80.0,
                "trials": 20,
                "params": {"n": 2, "a": 4, "b": 1.5, "p": 0.9,
                           "macro_horizon": 10}},
    "percolation": {"trials": 1000,
                    "params": {"p": 0.95, "M": 5, "n_max": 40}},
    "calibrate": {"model": CALIBRATED_MODEL, "trials": 100},
}

PRESETS = {
    "oracle": preset_oracle,
    "couplings": preset_couplings,
    "streams": preset_streams,
    "duality": preset_duality,
    "extinction": preset_extinction,
    "shape": preset_shape,
    "essential": preset_essential,
    "block": preset_block,
    "restart": preset_restart,
    "percolation": preset_percolation,
    "calibrate": preset_calibrate,
}


def run_preset(cfg: ExperimentConfig, out_dir: str, jobs: int = 1) -> bool:
    """Run one preset into out_dir; returns True when all checks passed."""
    os.makedirs(out_dir, exist_ok=True)
    summary, meta = PRESETS[cfg.preset](cfg, out_dir, jobs)
    write_csv(os.path.join(out_dir, "summary.csv"),
              ["check", "value", "threshold", "passed"],
              [(c, v, thr, int(ok)) for c, v, thr, ok in summary])
    meta["summary.csv"] = {"check": "check name", "value": "observed value",
                           "threshold": "pass condition",
                           "passed": "1 = passed"}
    write_metadata(out_dir, meta)
    write_manifest(out_dir, cfg)
    return all(ok for _, _, _, ok in summary)


def aggregate(csv_paths: list[str], key: str = "trial") -> list[tuple]:
    """Merge per-trial CSV rows from several files, sorted by trial id.

    All files must share one header; rows are keyed (and deduplicated) by
    the trial column, so input order does not matter.
    """
    header = None
    rows = {}
    for path in csv_paths:
        with open(path) as f:
            head = f.readline().strip().split(",")
            if header is None:
                header = head
                try:
                    ki = head.index(key)
                except ValueError:
                    raise ValueError(f'no "{key}" column in {path}') from None
            elif head != header:
                raise ValueError(f"header mismatch in {path}")
            for line in f:
                cells = line.rstrip("\n").split(",")
                rows[(int(cells[ki]), tuple(cells))] = tuple(cells)
    return [rows[k] for k in sorted(rows)]


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}")
    if args.preset:
        data["preset"] = args.preset
    if args.seed is not None:
        data["seed"] = args.seed
    data = apply_overrides(data, args.override or [])
    return config_from_dict(data)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="cpdre",
        description="Experiment harness for contact processes in dynamical "
                    "random environments")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--preset", help="preset name (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (64-bit)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="config override, dotted path, JSON value")

    run_p = sub.add_parser("run", help="run a preset")
    common(run_p)
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--jobs", type=int,
                       default=int(os.environ.get("CPDRE_JOBS", "1")),
                       help="worker processes (default $CPDRE_JOBS or 1)")
    val_p = sub.add_parser("validate", help="validate a config and exit")
    common(val_p)
    sub.add_parser("list-presets", help="list preset names")

    args = ap.parse_args(argv)
    if args.cmd == "list-presets":
        for name in sorted(PRESETS):
            print(name)
        return 0
    try:
        cfg = _load_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    if args.cmd == "validate":
        print(f"ok: preset={cfg.preset} trials={cfg.trials} seed={cfg.seed}")
        return 0
    try:
        passed = run_preset(cfg, args.out, max(1, args.jobs))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    if not passed:
        print("one or more acceptance checks failed (see summary.csv)",
              file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
