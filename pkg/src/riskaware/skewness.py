"""Skewness magnitude ``d``, its scalar reduction, and the relative-skewness pseudometric.

``d = 2 sqrt(E{C(Y)})`` vanishes exactly for skew-symmetric models.  For a
scalar, totally hidden state it equals the absolute Pearson moment
coefficient of skewness, so a gamma(kappa, theta) state has
``d = 2 / sqrt(kappa)`` for every scale ``theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnavailableError
from .functionals import _posteriors
from .margin import margin_report
from .model import GenerativeModel, gamma_hidden, gaussian
from .numerics import RngStream


@dataclass(frozen=True)
class SkewnessValue:
    d: float
    std_error: float = 0.0

    def as_dict(self) -> dict:
        return {"d": self.d, "d_se": self.std_error}


def skewness_d(model=None, batch=None, *, post=None, workers=1) -> SkewnessValue:
    """``2 sqrt`` of the batch mean of the hedgeable margin (delta-method error)."""
    post = _posteriors(model, batch, post, workers)
    r = margin_report(post=post)
    return SkewnessValue(r.d_value, r.d_se)


def pearson_skewness(model: GenerativeModel) -> float:
    """``|E{((X - m) / s)^3}|`` of a scalar hidden state, from its raw-moment oracle."""
    if model.state_dim != 1 or not model.hidden:
        raise InvalidInputError("Pearson reduction needs a scalar, totally hidden state")
    p = model.posterior()
    m2 = p.central_moment((2,))
    m3 = p.central_moment((3,))
    if not m2 > 0:
        raise UnavailableError("zero variance: skewness is undefined")
    return float(abs(m3) / m2 ** 1.5)


@dataclass(frozen=True)
class PearsonCheck:
    d: float
    pearson: float
    gap: float
    d_se: float = 0.0


def pearson_reduction_check(model: GenerativeModel, batch=None, *, post=None) -> PearsonCheck:
    """Compare ``d`` with the Pearson coefficient computed from raw moments."""
    pearson = pearson_skewness(model)
    if batch is None and post is None:
        batch = model.sample_observations(1, RngStream(0))
    d = skewness_d(model, batch, post=post)
    return PearsonCheck(d.d, pearson, float(abs(d.d - pearson)), d.std_error)


def relative_skewness(a, b) -> float:
    """``sqrt(|d_a^2 - d_b^2|)`` from cached skewness values (SkewnessValue or float)."""
    da = a.d if isinstance(a, SkewnessValue) else float(a)
    db = b.d if isinstance(b, SkewnessValue) else float(b)
    return math.sqrt(abs(da * da - db * db))


def relative_skewness_of(model_a, model_b, batch_a=None, batch_b=None, *, workers=1) -> float:
    return relative_skewness(skewness_d(model_a, batch_a, workers=workers),
                             skewness_d(model_b, batch_b, workers=workers))


def gamma_inverse_design(alpha: float, theta: float = 1.0) -> GenerativeModel:
    """Scalar hidden model with ``d = alpha``: gamma with ``kappa = 4 / alpha^2``.

    ``alpha = 0`` gives the hidden Gaussian reference (``d = 0``).
    """
    alpha = float(alpha)
    if not alpha >= 0 or not math.isfinite(alpha):
        raise InvalidInputError("alpha must be a finite nonnegative number")
    if alpha == 0.0:
        return gaussian(dim=1, prior_mean=0.0, prior_var=1.0, hidden=True)
    return gamma_hidden(kappa=4.0 / alpha ** 2, theta=theta)


def monotone_trend(values) -> str:
    """'increasing', 'decreasing', 'constant' or 'mixed' for a sequence."""
    v = np.asarray(values, float)
    if v.size < 2:
        return "constant"
    diff = np.diff(v)
    if np.all(diff > 0):
        return "increasing"
    if np.all(diff < 0):
        return "decreasing"
    if np.all(diff == 0):
        return "constant"
    return "mixed"

