"""Growth-set overlays and fitted hull tables from shape-run CSVs.

The harness reports raw site hits; the cosmetic half-cube expansion
(each reached site drawn as the unit cube around it) is applied here at
render time only, never to the fitted numbers.
"""

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .io import AnalysisError, load_csv  # noqa: E402

SHAPE_COLS = ["arm", "ray", "n", "mu_hat", "ci_lo", "ci_hi"]
HITS_COLS = ["arm", "trial", "ray", "n", "t", "censor"]


def hull_table(shape_df: pd.DataFrame) -> pd.DataFrame:
    """Per-arm, per-ray asymptotic speeds with bootstrap CI.

    mu_hat is the fitted time per site along the ray, so the hull radius
    in direction ray is speed = 1 / mu_hat; the CI maps through the same
    reciprocal (monotone decreasing, so the bounds swap).
    """
    rows = []
    for (arm, ray), grp in shape_df.groupby(["arm", "ray"], sort=True):
        mu = float(grp["mu_hat"].iloc[0])
        lo = float(grp["ci_lo"].iloc[0])
        hi = float(grp["ci_hi"].iloc[0])
        if not np.isfinite(mu) or mu <= 0:
            rows.append((arm, ray, mu, np.nan, np.nan, np.nan))
        else:
            rows.append((arm, ray, mu, 1.0 / mu,
                         1.0 / hi if hi > 0 else np.nan,
                         1.0 / lo if lo > 0 else np.nan))
    return pd.DataFrame(
        rows, columns=["arm", "ray", "mu_hat", "speed", "speed_lo",
                       "speed_hi"])


def _extent_per_time(hits: pd.DataFrame, times: np.ndarray) -> dict:
    """Mean reached radius per ray at each time, from the hit table."""
    out = {}
    for ray, grp in hits.groupby("ray", sort=True):
        ok = grp[grp["censor"] == 0]
        means = []
        for t in times:
            reached = ok[ok["t"] <= t].groupby("trial")["n"].max()
            n_trials = grp["trial"].nunique()
            total = float(reached.sum())
            means.append(total / n_trials if n_trials else 0.0)
        out[int(ray)] = np.asarray(means)
    return out


def plot_shape(run_dir: str, out_dir: str) -> dict:
    """Render H_t/t overlays plus the fitted hull; returns artifact paths.

    Writes hull.csv always; writes shape_overlay.png (or a "no
    survivors" placeholder when nothing was fitted) and, when
    inclusion.csv is present, inclusion_bands.png.
    """
    os.makedirs(out_dir, exist_ok=True)
    shape_df = load_csv(os.path.join(run_dir, "shape.csv"), SHAPE_COLS)
    hull = hull_table(shape_df)
    hull_path = os.path.join(out_dir, "hull.csv")
    hull.to_csv(hull_path, index=False, na_rep="NA")
    artifacts = {"hull": hull_path}

    overlay_path = os.path.join(out_dir, "shape_overlay.png")
    if hull.empty or not np.isfinite(hull["speed"]).any():
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.text(0.5, 0.5, "no survivors", ha="center", va="center",
                fontsize=16)
        ax.set_axis_off()
        fig.savefig(overlay_path)
        plt.close(fig)
        artifacts["overlay"] = overlay_path
        artifacts["placeholder"] = True
        return artifacts

    hits = load_csv(os.path.join(run_dir, "hits.csv"), HITS_COLS)
    t_max = float(hits.loc[hits["censor"] == 0, "t"].max())
    times = np.linspace(max(1.0, t_max / 6), t_max, 6)

    fig, axes = plt.subplots(1, hull["arm"].nunique(), figsize=(10, 4),
                             sharey=True, squeeze=False)
    for ax, (arm, arm_hull) in zip(axes[0],
                                   hull.groupby("arm", sort=True)):
        ext = _extent_per_time(hits[hits["arm"] == arm], times)
        for ray, sign in ((0, 1.0), (1, -1.0)):
            if ray not in ext:
                continue
            # half-cube expansion: site n covers up to n + 1/2
            edge = sign * (ext[ray] + 0.5) / times
            ax.plot(times, edge, "o-", label=f"H_t/t edge, ray {ray}")
            row = arm_hull[arm_hull["ray"] == ray].iloc[0]
            ax.axhline(sign * row["speed"], color="k", lw=1)
            if np.isfinite(row["speed_lo"]):
                ax.axhspan(sign * row["speed_lo"], sign * row["speed_hi"],
                           alpha=0.2, color="gray")
        ax.set_title(f"arm {arm}")
        ax.set_xlabel("t")
        ax.legend(fontsize=7)
    axes[0][0].set_ylabel("normalized position")
    fig.tight_layout()
    fig.savefig(overlay_path)
    plt.close(fig)
    artifacts["overlay"] = overlay_path

    inc_path = os.path.join(run_dir, "inclusion.csv")
    if os.path.isfile(inc_path):
        inc = load_csv(inc_path, ["t", "eps", "inner_rate", "outer_rate"])
        fig, ax = plt.subplots(figsize=(6, 4))
        for eps, grp in inc.groupby("eps", sort=True):
            ax.plot(grp["t"], grp["inner_rate"], "o-",
                    label=f"inner, eps={eps}")
            ax.plot(grp["t"], grp["outer_rate"], "s--",
                    label=f"outer, eps={eps}")
        ax.set_xlabel("t")
        ax.set_ylabel("inclusion rate")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(fontsize=7)
        fig.tight_layout()
        out = os.path.join(out_dir, "inclusion_bands.png")
        fig.savefig(out)
        plt.close(fig)
        artifacts["inclusion"] = out
    return artifacts


def hull_symmetric(hull: pd.DataFrame, arm: str) -> bool:
    """True when the two axis rays' speed CIs overlap (reflection test)."""
    grp = hull[hull["arm"] == arm]
    if len(grp) != 2:
        raise AnalysisError(f"arm {arm}: expected 2 rays, got {len(grp)}")
    a, b = grp.iloc[0], grp.iloc[1]
    return bool(a["speed_lo"] <= b["speed_hi"]
                and b["speed_lo"] <= a["speed_hi"])
