"""Neural probabilistic amplitude shaping for nonlinear fiber channels."""

__version__ = "0.1.0"
