"""CSV and manifest loading with loud failures on malformed inputs."""

import json
import os

import pandas as pd


class AnalysisError(ValueError):
    """Raised for missing inputs or malformed columns."""


def load_csv(path: str, required: list[str] | None = None) -> pd.DataFrame:
    """Read one harness CSV; fail loudly on absence or missing columns."""
    if not os.path.isfile(path):
        raise AnalysisError(f"missing input file: {path}")
    df = pd.read_csv(path, na_values=["NA"])
    if required:
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise AnalysisError(
                f"{path}: missing columns {missing}; has "
                f"{list(df.columns)}")
    return df


def load_manifest(run_dir: str) -> dict:
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.isfile(path):
        raise AnalysisError(f"missing manifest: {path}")
    with open(path) as f:
        return json.load(f)


def find_runs(in_dir: str) -> list[str]:
    """Locate run directories: in_dir itself or its immediate children.

    A run directory is recognized by its summary.csv. Results are sorted
    by name so downstream output is deterministic.
    """
    if not os.path.isdir(in_dir):
        raise AnalysisError(f"input directory does not exist: {in_dir}")
    if os.path.isfile(os.path.join(in_dir, "summary.csv")):
        return [in_dir]
    runs = sorted(
        os.path.join(in_dir, name) for name in os.listdir(in_dir)
        if os.path.isfile(os.path.join(in_dir, name, "summary.csv")))
    if not runs:
        raise AnalysisError(
            f"no run outputs (summary.csv) found under {in_dir}")
    return runs
