"""GLassoformer: group-Lasso sparse-query transformer, RGSM training and baselines."""

__version__ = "0.1.0"
