"""MARS-initialised ReLU networks and lattice piecewise-linear compilation."""

__version__ = "0.1.0"
