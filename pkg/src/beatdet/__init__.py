"""Beat and downbeat tracking as one-dimensional anchor-free detection."""

__version__ = "0.1.0"
