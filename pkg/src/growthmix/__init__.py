"""Joint Bayesian model of growth trajectories and ordinal questionnaire data.

A B-spline Gaussian model for standardized growth scores and a longitudinal
partial credit model for questionnaire answers share a normalized generalized
gamma clustering prior on the subject-level parameters.  The package provides
data ingestion, the MCMC sampler, posterior partition/summary tooling, a
synthetic-data generator, and a joint-distribution correctness harness.
"""

__version__ = "0.1.0"

from .data import Dataset, MissingMask, load_dataset, missing_rates, save_dataset
from .splines import SplineBasis, build_basis, evaluate_at

__all__ = [
    "Dataset",
    "MissingMask",
    "SplineBasis",
    "build_basis",
    "evaluate_at",
    "load_dataset",
    "missing_rates",
    "save_dataset",
    "__version__",
]
