"""Log-survival tail plots and least-squares slope fits.

Every fit is a plain OLS of log empirical survival against the abscissa,
with a 95% normal-theory CI from the residual variance.  Sources are the
tail CSVs a harness run leaves behind; only rows with positive mass enter
the fit (log of zero counts carries no information).
"""

import math
import os
import warnings

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .io import AnalysisError, load_csv  # noqa: E402


def fit_log_slope(x, log_p):
    """OLS slope of log_p on x; returns (slope, ci_lo, ci_hi, flag).

    flag is "ok", "constant" (zero slope series), or "insufficient"
    (fewer than 3 usable points, slope reported as NA).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(log_p, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if len(x) < 3 or len(np.unique(x)) < 2:
        return math.nan, math.nan, math.nan, "insufficient"
    if np.allclose(y, y[0]):
        return 0.0, 0.0, 0.0, "constant"
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    resid = y - (ym + slope * (x - xm))
    se = math.sqrt(float((resid ** 2).sum()) / (len(x) - 2) / sxx)
    return slope, slope - 1.96 * se, slope + 1.96 * se, "ok"


def _survival_from_values(values, grid):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    n = len(values)
    if n == 0:
        return None
    p = np.array([(values > g).sum() / n for g in grid])
    return p


def _sources(run_dir: str):
    """Yield (name, x, p) tail series found in the run directory."""
    path = os.path.join(run_dir, "tails.csv")
    if os.path.isfile(path):
        df = load_csv(path, ["t", "p"])
        yield "extinction_tau", df["t"].to_numpy(), df["p"].to_numpy()
    path = os.path.join(run_dir, "perc_tails.csv")
    if os.path.isfile(path):
        df = load_csv(path, ["t", "p"])
        yield "percolation_tau", df["t"].to_numpy(), df["p"].to_numpy()
    path = os.path.join(run_dir, "perc_shortfall.csv")
    if os.path.isfile(path):
        df = load_csv(path, ["n", "p"])
        yield "percolation_shortfall", df["n"].to_numpy(), \
            df["p"].to_numpy()
    path = os.path.join(run_dir, "essential.csv")
    if os.path.isfile(path):
        df = load_csv(path, ["K"])
        ks = df["K"].dropna().to_numpy(dtype=float)
        if len(ks):
            grid = np.arange(0, max(int(ks.max()), 1))
            yield "essential_K", grid, _survival_from_values(ks, grid)
        else:
            yield "essential_K", np.zeros(0), None
    path = os.path.join(run_dir, "restart.csv")
    if os.path.isfile(path):
        df = load_csv(path, ["sigma", "censor"])
        sig = df.loc[df["censor"] == 0, "sigma"].to_numpy(dtype=float)
        if len(sig):
            grid = np.arange(1.0, max(float(sig.max()), 2.0))
            yield "restart_sigma", grid, _survival_from_values(sig, grid)
        else:
            yield "restart_sigma", np.zeros(0), None


def plot_tails(run_dir: str, out_dir: str) -> dict:
    """Fit and plot every tail series present; returns artifact paths.

    Writes slopes.csv (source, slope, ci_lo, ci_hi, n_points, flag) and
    tails.png.  A source whose mass is entirely censored yields an NA row
    with flag "censored_only" and a warning.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    fig, ax = plt.subplots(figsize=(7, 5))
    plotted = False
    for name, x, p in _sources(run_dir):
        if p is None or not len(p) or not np.any(p > 0):
            warnings.warn(f"{name}: censored-only or empty tail, "
                          "slope is NA")
            rows.append((name, math.nan, math.nan, math.nan, 0,
                         "censored_only"))
            continue
        keep = p > 0
        logp = np.log(p[keep])
        slope, lo, hi, flag = fit_log_slope(x[keep], logp)
        rows.append((name, slope, lo, hi, int(keep.sum()), flag))
        ax.semilogy(x[keep], p[keep], "o", label=name)
        if flag in ("ok", "constant"):
            xs = np.asarray(x[keep], dtype=float)
            yy = np.exp(logp.mean() + slope * (xs - xs.mean()))
            ax.semilogy(xs, yy, "-", lw=1,
                        label=f"{name} fit ({slope:+.3f})")
        plotted = True
    if not rows:
        plt.close(fig)
        raise AnalysisError(f"no tail CSVs found in {run_dir}")
    slopes = pd.DataFrame(rows, columns=["source", "slope", "ci_lo",
                                         "ci_hi", "n_points", "flag"])
    slopes_path = os.path.join(out_dir, "slopes.csv")
    slopes.to_csv(slopes_path, index=False, na_rep="NA")
    artifacts = {"slopes": slopes_path}
    if plotted:
        ax.set_xlabel("threshold")
        ax.set_ylabel("survival probability")
        ax.legend(fontsize=7)
    else:
        ax.text(0.5, 0.5, "no tail data", ha="center", va="center",
                transform=ax.transAxes)
        ax.set_axis_off()
    fig.tight_layout()
    png = os.path.join(out_dir, "tails.png")
    fig.savefig(png)
    plt.close(fig)
    artifacts["plot"] = png
    return artifacts
