"""Offline analysis of harness CSV outputs.

This package never runs or imports the simulator; it only reads the CSV
files and manifests a harness run leaves behind and turns them into hull
tables, tail-slope fits, plots, and a markdown report.
"""

from .io import AnalysisError, find_runs, load_csv
from .report import report
from .shape import plot_shape
from .tails import plot_tails

__all__ = ["AnalysisError", "find_runs", "load_csv", "plot_shape",
           "plot_tails", "report"]
