"""Single markdown report embedding manifests, summaries, and artifacts."""

import json
import os

from .io import AnalysisError, find_runs, load_csv, load_manifest


def _summary_table(run_dir: str) -> str:
    df = load_csv(os.path.join(run_dir, "summary.csv"),
                  ["check", "value", "threshold", "passed"])
    lines = ["| check | value | threshold | passed |",
             "| --- | --- | --- | --- |"]
    for _, r in df.iterrows():
        lines.append(f"| {r['check']} | {r['value']} | {r['threshold']} "
                     f"| {r['passed']} |")
    return "\n".join(lines)


def _section(run_dir: str, artifacts: dict | None) -> str:
    manifest = load_manifest(run_dir)
    cfg = manifest.get("config", {})
    name = cfg.get("preset", os.path.basename(run_dir))
    parts = [f"## {name} ({os.path.basename(run_dir)})", "",
             "```json", json.dumps(cfg, indent=2, sort_keys=True), "```",
             "", _summary_table(run_dir), ""]
    for label, path in sorted((artifacts or {}).items()):
        if not isinstance(path, str):
            continue
        rel = os.path.basename(path)
        if path.endswith(".png"):
            parts.append(f"![{label}]({rel})")
        else:
            parts.append(f"- {label}: [{rel}]({rel})")
    parts.append("")
    return "\n".join(parts)


def report(in_dir: str, out_dir: str,
           artifacts_by_run: dict | None = None) -> str:
    """Write report.md covering every run under in_dir; returns its path.

    artifacts_by_run optionally maps run directory -> artifact paths
    produced by the shape/tails passes, so the report links them.
    Regenerating from the same inputs yields identical text.
    """
    runs = find_runs(in_dir)
    if not runs:
        raise AnalysisError(f"nothing to report in {in_dir}")
    os.makedirs(out_dir, exist_ok=True)
    sections = ["# Harness run report", ""]
    for run in runs:
        sections.append(_section(run, (artifacts_by_run or {}).get(run)))
    path = os.path.join(out_dir, "report.md")
    with open(path, "w") as f:
        f.write("\n".join(sections))
    return path
