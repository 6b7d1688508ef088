"""Self-supervised dynamics pretraining on multivariate time series."""

__version__ = "0.1.0"
