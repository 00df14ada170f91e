"""Host-aware gene expression control with data-enabled predictive control."""

__version__ = "0.1.0"
