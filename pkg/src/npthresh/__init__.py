"""Detection of an unknown number of thresholds in nonparametric regression."""

__version__ = "0.1.0"
