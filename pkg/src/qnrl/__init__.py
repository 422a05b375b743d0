"""Multi-batch line-search L-BFGS for deep Q-learning."""

__version__ = "0.1.0"
