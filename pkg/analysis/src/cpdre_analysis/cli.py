"""Command line entry point: analyze --in DIR --out DIR --kinds ...

Each requested kind is applied to every run directory that carries the
matching inputs; a kind that matches no run at all is an error.  When
in_dir holds several runs, artifacts land in out_dir/<run name>/ and the
report covers all of them.
"""

import argparse
import os
import sys

from .io import AnalysisError, find_runs
from .report import report
from .shape import plot_shape
from .tails import plot_tails

TAIL_FILES = ("tails.csv", "perc_tails.csv", "perc_shortfall.csv",
              "essential.csv", "restart.csv")


def _out_for(run_dir: str, in_dir: str, out_dir: str) -> str:
    if os.path.abspath(run_dir) == os.path.abspath(in_dir):
        return out_dir
    return os.path.join(out_dir, os.path.basename(run_dir))


def run(in_dir: str, out_dir: str, kinds: list[str]) -> None:
    runs = find_runs(in_dir)
    artifacts = {}
    for kind in kinds:
        if kind == "report":
            continue
        matched = False
        for run_dir in runs:
            if kind == "shape":
                ok = os.path.isfile(os.path.join(run_dir, "shape.csv"))
            else:
                ok = any(os.path.isfile(os.path.join(run_dir, f))
                         for f in TAIL_FILES)
            if not ok:
                continue
            matched = True
            dst = _out_for(run_dir, in_dir, out_dir)
            fn = plot_shape if kind == "shape" else plot_tails
            artifacts.setdefault(run_dir, {}).update(fn(run_dir, dst))
        if not matched:
            raise AnalysisError(
                f'kind "{kind}": no run under {in_dir} has the required '
                "inputs")
    if "report" in kinds:
        report(in_dir, out_dir, artifacts)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="analyze",
        description="Offline plots and summaries of harness CSV outputs.")
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="harness output directory (one run or a "
                             "directory of runs)")
    parser.add_argument("--out", dest="out_dir", required=True,
                        help="destination for images, tables, and the "
                             "report")
    parser.add_argument("--kinds", default="shape,tails,report",
                        help="comma-separated subset of shape,tails,report")
    args = parser.parse_args(argv)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = sorted(set(kinds) - {"shape", "tails", "report"})
    if bad or not kinds:
        print(f"unknown kinds: {bad or 'none given'}", file=sys.stderr)
        return 1
    try:
        run(args.in_dir, args.out_dir, kinds)
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
