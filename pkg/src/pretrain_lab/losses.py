"""Losses and a paired Monte-Carlo excess-risk estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from pretrain_lab.errors import ParameterError

KINDS = ("squared", "truncated_squared", "zero_one")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "squared"
    truncation_level: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "truncated_squared":
            if self.truncation_level is None or not self.truncation_level > 0:
                raise ParameterError("truncated_squared loss needs a positive truncation_level")
        elif self.truncation_level is not None:
            raise ParameterError(f"truncation_level only applies to truncated_squared, not {self.kind}")

    def __call__(self, prediction, label):
        return loss_eval(self, prediction, label)


def truncation_level(D: float, n: float) -> float:
    """Truncation level 36 (D^2 + 1) log n used for the contrastive downstream ERM."""
    return 36.0 * (D * D + 1.0) * math.log(n)


def loss_eval(spec: LossSpec, prediction, label):
    """Vectorised loss; scalars in, scalar out."""
    pred = np.asarray(prediction, dtype=float)
    y = np.asarray(label, dtype=float)
    if spec.kind == "zero_one":
        if not (np.all(np.isin(pred, (0.0, 1.0))) and np.all(np.isin(y, (0.0, 1.0)))):
            raise ParameterError("zero_one loss needs binary prediction and label")
        out = (pred != y).astype(float)
    else:
        out = (y - pred) ** 2
        if spec.kind == "truncated_squared":
            # cap applies at equality
            out = np.where(out >= spec.truncation_level, spec.truncation_level, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    std_error: float
    sample_count: int


Predictor = Callable[[np.ndarray], np.ndarray]


def excess_risk_mc(pred: Predictor, bayes: Predictor, spec: LossSpec, test_sampler, count: int, rng) -> RiskEstimate:
    """Mean of loss(pred(x), y) - loss(bayes(x), y) over fresh test draws.

    ``test_sampler(count, rng)`` returns ``(x, y)``; both predictors see the
    same draws, so the Bayes predictor has zero excess risk sample by sample.
    """
    x, y = test_sampler(count, rng)
    diff = loss_eval(spec, pred(x), y) - loss_eval(spec, bayes(x), y)
    diff = np.atleast_1d(diff)
    mean = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
    return RiskEstimate(mean, se, int(diff.size))
