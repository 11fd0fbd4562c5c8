"""Numerical laboratory for two-phase unsupervised pretraining (MLE on
unlabeled data, then ERM on labeled data).

Instantiations: factor model, Gaussian mixture model, pairwise-logistic
contrastive model, plus a discrete family where replacing ERM by a second
MLE step fails.
"""

from pretrain_lab.rng import RngStream

__all__ = ["RngStream"]
__version__ = "0.1.0"
