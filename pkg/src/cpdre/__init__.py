"""Contact processes in dynamical random environments: exact graphical-
construction simulator and experiment harness on finite lattice windows."""

__version__ = "0.1.0"
