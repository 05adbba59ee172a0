"""The risk-aware estimator family and its curve identities.

For a posterior with mean ``m``, covariance ``S = U diag(s) U^T`` and
``t = E{||Z||^2 Z | Y}`` (so ``R = 2 S m + t``), the family member at risk
parameter ``mu`` solves

    (I + 2 mu S) x = m + mu R,

which is the minimiser of ``mse + (mu / 2) sev`` per observation; the
maximally risk-averse member is its ``mu -> inf`` limit

    x_inf = (1/2) S^+ R + U [0; (U^T m)_null] = m + (1/2) S^+ t.

All functions accept a :class:`~riskaware.model.PosteriorSummary` or a
stacked :class:`~riskaware.model.PosteriorBatch`; results carry the same
leading shape.  Work is done in the eigenbasis of ``S``: components of
``U^T t`` in the numerical null space of ``S`` are zero analytically and
are discarded (with a logged warning when they are not negligible).
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import InvalidInputError, NumericFailure

log = logging.getLogger(__name__)

INF = math.inf
NULL_SKEW_WARN = 1e-8


def as_mu(mu) -> float:
    """Validate an extended risk parameter in ``[0, inf]`` (``"inf"`` accepted)."""
    try:
        value = float(mu)
    except (TypeError, ValueError):
        raise InvalidInputError(f"risk parameter must be a number or 'inf', got {mu!r}") from None
    if math.isnan(value) or value < 0:
        raise InvalidInputError(f"risk parameter must lie in [0, inf], got {mu!r}")
    return value


def to_eigen(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Coordinates ``U^T v`` (batched)."""
    return np.einsum("...ji,...j->...i", u, v)


def from_eigen(u: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Vector ``U c`` (batched)."""
    return np.einsum("...ij,...j->...i", u, c)


def eigen_parts(p):
    """(eigenvalues, range mask, ``U^T t`` restricted to the range) for ``p``.

    Null-space components of ``U^T t`` are set to zero; if any exceeds
    ``1e-8 * (1 + ||t||)`` a warning is logged.
    """
    e = p.eig
    pos = e.positive
    tc = to_eigen(e.u, np.asarray(p.third, float))
    null = np.where(pos, 0.0, tc)
    if np.any(null):
        worst = np.max(np.abs(null))
        scale = 1.0 + np.max(np.linalg.norm(np.atleast_2d(p.third), axis=-1))
        if worst > NULL_SKEW_WARN * scale:
            log.warning("discarding third-moment residual %.3g in the null space of the "
                        "posterior covariance", worst)
    return e.lam, pos, np.where(pos, tc, 0.0)


def _safe_lam(lam, pos):
    return np.where(pos, lam, 1.0)


def _finite(x):
    if not np.all(np.isfinite(x)):
        raise NumericFailure("estimate is not finite")
    return x


def risk_aware_estimate(p, mu) -> np.ndarray:
    """The family member at ``mu`` in ``[0, inf]``.

    Finite ``mu`` divides by ``1 + 2 mu s_i`` in the eigenbasis; ``mu = inf``
    uses ``S^+`` on the range and keeps the mean on the null space.  A zero
    covariance gives the mean for every ``mu``.
    """
    mu = as_mu(mu)
    mean = np.asarray(p.mean, float)
    if mu == 0.0:
        return _finite(mean.copy())
    lam, pos, tc = eigen_parts(p)
    if math.isinf(mu):
        shift = tc / (2.0 * _safe_lam(lam, pos))
    else:
        shift = mu * tc / (1.0 + 2.0 * mu * lam)
    return _finite(mean + from_eigen(p.eig.u, np.where(pos, shift, 0.0)))


def delta_x_eigen(p) -> np.ndarray:
    """``U^T (x_0 - x_inf)``; exactly zero off the range of the covariance."""
    lam, pos, tc = eigen_parts(p)
    return np.where(pos, -tc / (2.0 * _safe_lam(lam, pos)), 0.0)


def delta_x(p) -> np.ndarray:
    """Difference ``x_0 - x_inf`` between the conditional mean and the risk-averse limit."""
    return _finite(from_eigen(p.eig.u, delta_x_eigen(p)))


def curve_shift_identity(p, mu) -> np.ndarray:
    """``x_mu`` rebuilt as a shift of the conditional mean along ``delta_x``.

    ``x_mu = x_0 - U G(mu) U^T dx`` with ``G = diag(2 mu s_i / (1 + 2 mu s_i))``
    on the range and zero elsewhere.
    """
    mu = as_mu(mu)
    if math.isinf(mu):
        raise InvalidInputError("curve_shift_identity needs a finite mu")
    lam = p.eig.lam
    g = 2.0 * mu * lam / (1.0 + 2.0 * mu * lam)
    return np.asarray(p.mean, float) - from_eigen(p.eig.u, g * delta_x_eigen(p))


def difference_identity(p, mu, mu_prime) -> np.ndarray:
    """``x_mu - x_mu'`` as ``-(mu - mu') U H U^T dx``.

    ``H = diag(2 s_i / ((1 + 2 mu s_i)(1 + 2 mu' s_i)))``.
    """
    mu, mu_prime = as_mu(mu), as_mu(mu_prime)
    if math.isinf(mu) or math.isinf(mu_prime):
        raise InvalidInputError("difference_identity needs finite mu and mu'")
    lam = p.eig.lam
    h = 2.0 * lam / ((1.0 + 2.0 * mu * lam) * (1.0 + 2.0 * mu_prime * lam))
    return -(mu - mu_prime) * from_eigen(p.eig.u, h * delta_x_eigen(p))


def estimator_derivative(p, mu) -> np.ndarray:
    """``d x_mu / d mu = (I + 2 mu S)^{-1} (R - 2 S x_mu)`` by direct linear solves."""
    mu = as_mu(mu)
    cov = np.asarray(p.cov, float)
    n = cov.shape[-1]
    x = risk_aware_estimate(p, mu)
    rhs = np.asarray(p.r_stat, float) - 2.0 * np.einsum("...ij,...j->...i", cov, x)
    a = np.eye(n) + 2.0 * mu * cov
    return np.linalg.solve(a, rhs[..., None])[..., 0]


def skew_symmetry_residual(p, tensor=None) -> float:
    """Scale-free size of ``E{Z_i^2 Z | Y}``: ``max_i ||T[i]|| / (1 + s_max^{3/2})``.

    ``T[i, j] = E{Z_i^2 Z_j | Y}`` is taken from the posterior's moment
    oracle unless supplied.  Zero exactly when the posterior is
    skew-symmetric.
    """
    t = np.asarray(p.third_central() if tensor is None else tensor, float)
    smax = float(np.max(p.eig.lam, initial=0.0))
    return float(np.max(np.linalg.norm(t, axis=-1)) / (1.0 + smax ** 1.5))
