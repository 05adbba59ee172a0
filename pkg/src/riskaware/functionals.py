"""Monte Carlo evaluation of mse and sev for arbitrary estimators.

Both functionals are outer averages over an observation batch of exact
conditional quantities.  With ``a = E{X|Y} - est(Y)``:

* ``E{||X - est||^2 | Y} = tr S + ||a||^2``
* ``Var{||X - est||^2 | Y} = Var{||Z||^2 | Y} + 4 a^T S a + 4 a^T E{||Z||^2 Z | Y}``

Every frontier evaluation reuses one posterior batch, so differences
between estimators are paired (common random numbers).  Standard errors
are the batch standard deviation of the per-observation summands over
``sqrt(n)``; they are zero for totally hidden models, whose single
trivial observation makes the outer expectation exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConsistencyError, InvalidInputError, NumericFailure
from .estimators import as_mu, delta_x_eigen, eigen_parts, from_eigen, risk_aware_estimate
from .model import GenerativeModel, ObservationBatch, PosteriorBatch

SEV_SCALE = 4.0


# --------------------------------------------------------------------------
# estimates

@dataclass(frozen=True)
class FunctionalEstimate:
    """Monte Carlo mean of per-observation ``terms``.

    ``terms`` keeps the summands so that differences between estimates on
    the same batch can be given paired standard errors.
    """

    value: float
    std_error: float
    n_samples: int
    terms: np.ndarray = field(repr=False, compare=False)
    n_failed: int = 0

    @classmethod
    def from_terms(cls, terms, n_failed: int = 0) -> "FunctionalEstimate":
        terms = np.asarray(terms, float)
        if not np.all(np.isfinite(terms)):
            raise NumericFailure("functional summands are not finite")
        n = terms.size
        se = float(np.std(terms, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(terms)), se, n, terms, n_failed)

    def paired_se(self, other: "FunctionalEstimate") -> float:
        """Standard error of ``self.value - other.value`` on a shared batch."""
        if self.terms.shape != other.terms.shape:
            return math.hypot(self.std_error, other.std_error)
        n = self.terms.size
        return float(np.std(self.terms - other.terms, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    def as_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples}


def product_of(a: FunctionalEstimate, b: FunctionalEstimate) -> FunctionalEstimate:
    """Product of two means with a delta-method standard error.

    The returned terms are the linearised summands ``a.value * b_i +
    b.value * a_i - a.value * b.value``, whose mean is the product.
    """
    terms = a.value * b.terms + b.value * a.terms - a.value * b.value
    n = terms.size
    se = float(np.std(terms, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return FunctionalEstimate(a.value * b.value, se, n, terms, max(a.n_failed, b.n_failed))


# --------------------------------------------------------------------------
# estimators as functions of the observation

@dataclass(frozen=True)
class EstimatorFn:
    """A deterministic map ``Y -> R^n`` evaluated on a posterior batch.

    ``fn(post)`` returns an array of shape ``(len(post), n)``; it may use
    the observations ``post.ys`` and any posterior field, which are both
    functions of ``Y``.
    """

    name: str
    fn: Callable[[PosteriorBatch], np.ndarray] = field(repr=False)

    def __call__(self, post: PosteriorBatch) -> np.ndarray:
        out = np.asarray(self.fn(post), float)
        out = np.broadcast_to(out, post.mean.shape)
        if not np.all(np.isfinite(out)):
            raise NumericFailure(f"estimator {self.name} produced non-finite values")
        return out


def conditional_mean() -> EstimatorFn:
    return EstimatorFn("mean", lambda post: post.mean)


def risk_aware(mu) -> EstimatorFn:
    mu = as_mu(mu)
    return EstimatorFn(f"risk_aware({mu})", lambda post: risk_aware_estimate(post, mu))


def affine(scale=1.0, shift=0.0) -> EstimatorFn:
    """``scale * E{X|Y} + shift`` (scale may be a matrix, shift a vector)."""
    a = np.asarray(scale, float)
    b = np.asarray(shift, float)

    def fn(post):
        m = post.mean
        return (m @ a.T if a.ndim == 2 else a * m) + b
    return EstimatorFn(f"affine({scale},{shift})", fn)


def mix(weight) -> EstimatorFn:
    """Convex combination ``(1 - w) x_0 + w x_inf``."""
    w = float(weight)
    if not 0.0 <= w <= 1.0:
        raise InvalidInputError("mix weight must lie in [0, 1]")
    return EstimatorFn(f"mix({w})",
                       lambda post: (1 - w) * post.mean + w * risk_aware_estimate(post, math.inf))


def constant(value) -> EstimatorFn:
    c = np.asarray(value, float)
    return EstimatorFn(f"const({value})", lambda post: np.broadcast_to(c, post.mean.shape))


def from_function(name: str, fn: Callable[[np.ndarray], np.ndarray]) -> EstimatorFn:
    """Estimator given as a function of the raw observations ``ys`` (shape ``(N, m)``)."""
    return EstimatorFn(name, lambda post: fn(post.ys))


# --------------------------------------------------------------------------
# functionals

def _posteriors(model: GenerativeModel | None, batch, post, workers=1) -> PosteriorBatch:
    if post is not None:
        return post
    if model is None or batch is None:
        raise InvalidInputError("need either a posterior batch or a model and observations")
    if isinstance(batch, ObservationBatch) and len(batch) == 0:
        raise InvalidInputError("observation batch is empty")
    return model.posterior_batch(batch, workers=workers)


def _as_estimates(est, post) -> np.ndarray:
    return est(post) if isinstance(est, EstimatorFn) else np.broadcast_to(
        np.asarray(est, float), post.mean.shape)


def conditional_mse(post: PosteriorBatch, x: np.ndarray) -> np.ndarray:
    """Per-observation ``E{||X - x||^2 | Y}``."""
    a = post.mean - x
    return np.trace(post.cov, axis1=-2, axis2=-1) + np.sum(a * a, axis=-1)


def conditional_sev(post: PosteriorBatch, x: np.ndarray) -> np.ndarray:
    """Per-observation ``Var{||X - x||^2 | Y}`` from central moments up to order four."""
    a = post.mean - x
    sa = np.einsum("...ij,...j->...i", post.cov, a)
    return post.sq_norm_var + 4.0 * np.sum(a * sa, axis=-1) + 4.0 * np.sum(a * post.third, axis=-1)


def conditional_sev_oracle(p, x) -> float:
    """``Var{||X - x||^2 | Y}`` straight from raw moments of one posterior summary."""
    n = p.dim
    x = np.asarray(x, float).reshape(n)
    e2 = e4 = 0.0
    # ||X - x||^2 = sum_i (X_i - x_i)^2; expand each power in raw moments
    for i in range(n):
        e2 += _shifted(p, {i: 2}, x)
        for j in range(n):
            e4 += _shifted(p, {i: 2, j: 2} if i != j else {i: 4}, x)
    return e4 - e2 * e2


def _shifted(p, powers: dict, x) -> float:
    """``E{prod_i (X_i - x_i)^k_i | Y}`` from the raw-moment oracle."""
    from itertools import product
    idx = sorted(powers)
    total = 0.0
    for sub in product(*(range(powers[i] + 1) for i in idx)):
        coef = 1.0
        mono = [0] * p.dim
        for i, j in zip(idx, sub):
            coef *= math.comb(powers[i], j) * (-x[i]) ** (powers[i] - j)
            mono[i] = j
        total += coef * p.raw_moment(mono)
    return total


def mse_of(model, est, batch=None, *, post=None, workers=1) -> FunctionalEstimate:
    """``mse(est) = E{tr S(Y) + ||est(Y) - E{X|Y}||^2}``."""
    post = _posteriors(model, batch, post, workers)
    return FunctionalEstimate.from_terms(conditional_mse(post, _as_estimates(est, post)),
                                         post.n_failed)


def sev_direct(model, est, batch=None, *, post=None, workers=1) -> FunctionalEstimate:
    """``sev(est) = E{Var{||X - est(Y)||^2 | Y}}`` from conditional central moments."""
    post = _posteriors(model, batch, post, workers)
    return FunctionalEstimate.from_terms(conditional_sev(post, _as_estimates(est, post)),
                                         post.n_failed)


def sev_quadratic(model, est, batch=None, baseline: FunctionalEstimate | None = None, *,
                  c: float = SEV_SCALE, post=None, workers=1, verify=False,
                  rel_tol: float = 1e-9) -> FunctionalEstimate:
    """``sev(x_inf) + c E{(est - x_inf)^T S (est - x_inf)}``.

    ``baseline`` must be :func:`sev_direct` at ``x_inf`` on the same batch
    (computed when omitted).  With ``verify`` the result is compared to
    :func:`sev_direct`; a gap beyond three paired standard errors (or
    ``rel_tol`` relative when those are zero) raises ConsistencyError.
    """
    post = _posteriors(model, batch, post, workers)
    x_inf = risk_aware_estimate(post, math.inf)
    if baseline is None:
        baseline = sev_direct(None, x_inf, post=post)
    x = _as_estimates(est, post)
    d = x - x_inf
    quad = np.sum(d * np.einsum("...ij,...j->...i", post.cov, d), axis=-1)
    out = FunctionalEstimate.from_terms(baseline.terms + c * quad, post.n_failed)
    if verify:
        direct = sev_direct(None, x, post=post)
        gap = abs(out.value - direct.value)
        allowed = max(3.0 * out.paired_se(direct), rel_tol * max(1.0, abs(direct.value)))
        if gap > allowed:
            raise ConsistencyError(f"quadratic sev {out.value:.12g} differs from direct "
                                   f"{direct.value:.12g} by {gap:.3g} (allowed {allowed:.3g})")
    return out


def frontier_point(model, mu, batch=None, *, post=None, workers=1):
    """(mse, sev) of the family member at ``mu`` on a shared posterior batch."""
    post = _posteriors(model, batch, post, workers)
    x = risk_aware_estimate(post, mu)
    return (FunctionalEstimate.from_terms(conditional_mse(post, x), post.n_failed),
            FunctionalEstimate.from_terms(conditional_sev(post, x), post.n_failed))


# --------------------------------------------------------------------------
# the frontier in closed form along mu (per observation)

class CurveTerms:
    """Per-observation mse, sev and their mu-derivatives along the family.

    In the eigenbasis, with ``f(mu) = mu / (1 + 2 mu s)`` and ``tc = U^T t``:
    ``mse = tr S + sum tc^2 f^2`` and ``sev = V + sum tc^2 (4 s f^2 - 4 f)``.
    """

    def __init__(self, post: PosteriorBatch):
        lam, pos, tc = eigen_parts(post)
        self.post = post
        self.lam = np.where(pos, lam, 0.0)
        self.pos = pos
        self.tc2 = tc * tc
        self.trace = np.trace(post.cov, axis1=-2, axis2=-1)
        self.v = np.asarray(post.sq_norm_var, float)
        self.dx2 = np.sum(delta_x_eigen(post) ** 2, axis=-1)

    def _f(self, mu):
        if math.isinf(mu):
            return np.where(self.pos, 0.5 / np.where(self.pos, self.lam, 1.0), 0.0), \
                np.zeros_like(self.lam)
        d = 1.0 / (1.0 + 2.0 * mu * self.lam)
        return np.where(self.pos, mu * d, 0.0), np.where(self.pos, d * d, 0.0)

    def mse(self, mu) -> np.ndarray:
        f, _ = self._f(as_mu(mu))
        return self.trace + np.sum(self.tc2 * f * f, axis=-1)

    def sev(self, mu) -> np.ndarray:
        f, _ = self._f(as_mu(mu))
        return self.v + np.sum(self.tc2 * (4.0 * self.lam * f * f - 4.0 * f), axis=-1)

    def d_mse(self, mu) -> np.ndarray:
        f, fp = self._f(as_mu(mu))
        return np.sum(self.tc2 * 2.0 * f * fp, axis=-1)

    def d_sev(self, mu) -> np.ndarray:
        f, fp = self._f(as_mu(mu))
        return np.sum(self.tc2 * (8.0 * self.lam * f - 4.0) * fp, axis=-1)

    def product(self, mu) -> float:
        return float(np.mean(self.mse(mu)) * np.mean(self.sev(mu)))

    def d_product(self, mu) -> float:
        return float(np.mean(self.d_mse(mu)) * np.mean(self.sev(mu))
                     + np.mean(self.mse(mu)) * np.mean(self.d_sev(mu)))


def sev_gap_unscaled(sev_value: float, sev_inf: float, c: float = SEV_SCALE) -> float:
    """Convert a raw sev excess over ``sev(x_inf)`` to the unscaled quadratic form."""
    return (sev_value - sev_inf) / c


def estimate_matrix(post: PosteriorBatch, est) -> np.ndarray:
    """Evaluate an estimator (EstimatorFn or array) on a posterior batch."""
    return _as_estimates(est, post)


__all__ = [
    "CurveTerms", "EstimatorFn", "FunctionalEstimate", "SEV_SCALE", "affine", "conditional_mean",
    "conditional_mse", "conditional_sev", "conditional_sev_oracle", "constant",
    "estimate_matrix", "from_eigen", "from_function", "frontier_point", "mix", "mse_of",
    "product_of", "risk_aware", "sev_direct", "sev_gap_unscaled", "sev_quadratic",
]
