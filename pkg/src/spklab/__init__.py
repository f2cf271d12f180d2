"""Metric-learning laboratory for speaker verification.

Angular-margin and contrast losses with exact analytic gradients, a small
feedforward encoder trained by hand-derived backpropagation, cosine trial
scoring with adaptive s-norm, and equal error rate with bootstrap
confidence intervals.
"""

from spklab.errors import DegenerateCohortError, DomainError, TrainingDiverged

__version__ = "0.1.0"

__all__ = ["DomainError", "DegenerateCohortError", "TrainingDiverged", "__version__"]
