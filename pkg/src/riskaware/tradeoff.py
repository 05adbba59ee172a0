"""Efficient-frontier scans, the characteristic constant, and frontier diagnostics.

Along the risk-aware family, mse is nondecreasing and sev nonincreasing in
``mu``.  The characteristic constant ``h`` is the minimum over ``mu`` of
``mse * sev``; every estimator's product is at least ``h``, and ``h`` is at
least the anchor ``mse(x_0) * sev(x_inf)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InvalidInputError
from .estimators import as_mu
from .functionals import (SEV_SCALE, CurveTerms, FunctionalEstimate, _posteriors,
                          conditional_mse, conditional_sev, estimate_matrix, product_of)
from .model import PosteriorBatch

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def default_grid(lo: float = 1e-4, hi: float = 1e4, count: int = 60) -> list[float]:
    """``{0} U logspace(lo, hi, count) U {inf}``."""
    if count < 1 or not 0 < lo <= hi or not math.isfinite(hi):
        raise InvalidInputError("mu grid needs 0 < lo <= hi < inf and count >= 1")
    pts = np.geomspace(lo, hi, count) if count > 1 else np.array([lo])
    return [0.0, *map(float, pts), math.inf]


@dataclass(frozen=True)
class FrontierPoint:
    mu: float
    mse: FunctionalEstimate
    sev: FunctionalEstimate
    product: FunctionalEstimate


@dataclass
class FrontierCurve:
    """Frontier sampled on a grid, with the refined minimiser of the product."""

    points: list[FrontierPoint]
    h_value: float
    mu_star: float
    anchor: float
    h_point: FrontierPoint
    anchor_se: float = 0.0
    warnings: list[str] = field(default_factory=list)
    n_failed: int = 0

    @property
    def mus(self) -> np.ndarray:
        return np.array([p.mu for p in self.points])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name).value for p in self.points])

    def se(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name).std_error for p in self.points])

    @property
    def h_se(self) -> float:
        return self.h_point.product.std_error


def _point(post: PosteriorBatch, curve: CurveTerms, mu: float) -> FrontierPoint:
    mse = FunctionalEstimate.from_terms(curve.mse(mu), post.n_failed)
    sev = FunctionalEstimate.from_terms(curve.sev(mu), post.n_failed)
    return FrontierPoint(mu, mse, sev, product_of(mse, sev))


def _phi(mu: float) -> float:
    return 1.0 if math.isinf(mu) else mu / (1.0 + mu)


def _mu_of_phi(phi: float) -> float:
    return math.inf if phi >= 1.0 else phi / (1.0 - phi)


def _golden(fun, a: float, b: float, tol: float = 1e-13, max_iter: int = 200):
    """Golden-section minimisation of ``fun`` on ``[a, b]``; returns (x, f(x))."""
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def _polish(curve: CurveTerms, lo: float, hi: float, mu0: float) -> float:
    """Bisect the product's mu-derivative for a stationary point near ``mu0``."""
    width = max(mu0 * 1e-6, 1e-12)
    a, b = max(lo, mu0 - width), min(hi, mu0 + width)
    if not (math.isfinite(a) and math.isfinite(b)):
        return mu0
    da, db = curve.d_product(a), curve.d_product(b)
    if not (da < 0 < db):
        return mu0
    for _ in range(200):
        m = 0.5 * (a + b)
        if not a < m < b:
            break
        if curve.d_product(m) < 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def refine_minimum(curve: CurveTerms, grid: list[float], products: np.ndarray,
                   tie_rtol: float = 1e-12) -> tuple[float, float]:
    """Grid argmin (smallest mu among ties), then golden-section and polish.

    The search runs on ``log mu`` between the grid neighbours of the
    discrete minimiser, or on ``mu / (1 + mu)`` when a neighbour is 0 or
    inf.  A final bisection on the analytic derivative pins interior
    minima to machine precision.
    """
    best = float(np.min(products))
    k = int(np.nonzero(products <= best + tie_rtol * abs(best))[0][0])
    mu_best, p_best = grid[k], float(products[k])
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    if lo > 0 and math.isfinite(hi):
        x, fx = _golden(lambda s: curve.product(math.exp(s)), math.log(lo), math.log(hi))
        cand = math.exp(x)
    else:
        x, fx = _golden(lambda s: curve.product(_mu_of_phi(s)), _phi(lo), _phi(hi))
        cand = _mu_of_phi(x)
    if math.isfinite(cand) and 0 < cand:
        cand = _polish(curve, lo, hi, cand)
        fx = curve.product(cand)
    if fx < p_best - tie_rtol * abs(p_best):
        return cand, fx
    return mu_best, p_best


def _check_monotone(points: list[FrontierPoint], nsig: float = 3.0) -> list[str]:
    out = []
    for p, q in zip(points[:-1], points[1:]):
        tol_m = nsig * q.mse.paired_se(p.mse) + 1e-12 * abs(p.mse.value)
        tol_s = nsig * q.sev.paired_se(p.sev) + 1e-12 * abs(p.sev.value)
        if q.mse.value < p.mse.value - tol_m:
            out.append(f"mse decreases between mu={p.mu:g} and mu={q.mu:g}")
        if q.sev.value > p.sev.value + tol_s:
            out.append(f"sev increases between mu={p.mu:g} and mu={q.mu:g}")
    return out


def frontier_scan(model=None, grid=None, batch=None, *, post=None, workers=1,
                  refine=True) -> FrontierCurve:
    """Evaluate the frontier on ``grid`` (must contain 0 and inf) with common posteriors."""
    post = _posteriors(model, batch, post, workers)
    grid = default_grid() if grid is None else [as_mu(m) for m in grid]
    grid = sorted(set(grid))
    if grid[0] != 0.0 or not math.isinf(grid[-1]):
        raise InvalidInputError("mu grid must contain 0 and inf")
    curve = CurveTerms(post)
    points = [_point(post, curve, mu) for mu in grid]
    products = np.array([p.product.value for p in points])
    if refine:
        mu_star, _ = refine_minimum(curve, grid, products)
    else:
        best = float(np.min(products))
        mu_star = grid[int(np.nonzero(products <= best + 1e-12 * abs(best))[0][0])]
    h_point = _point(post, curve, mu_star)
    anchor_mse = points[0].mse
    anchor_sev = points[-1].sev
    anchor = product_of(anchor_mse, anchor_sev)
    warnings = _check_monotone(points)
    for w in warnings:
        log.warning(w)
    return FrontierCurve(points=points, h_value=h_point.product.value, mu_star=mu_star,
                         anchor=anchor.value, h_point=h_point, anchor_se=anchor.std_error,
                         warnings=warnings, n_failed=post.n_failed)


@dataclass(frozen=True)
class UncertaintyVerdict:
    """Product of a probe estimator against the characteristic constant."""

    name: str
    mse: FunctionalEstimate
    sev: FunctionalEstimate
    product: FunctionalEstimate
    margin: float
    margin_se: float
    passed: bool

    def as_dict(self) -> dict:
        return {"probe": self.name, "mse": self.mse.value, "mse_se": self.mse.std_error,
                "sev": self.sev.value, "sev_se": self.sev.std_error,
                "product": self.product.value, "product_se": self.product.std_error,
                "margin": self.margin, "margin_se": self.margin_se, "passed": self.passed}


def verify_uncertainty(model, probe, curve: FrontierCurve, batch=None, *, post=None,
                       workers=1, nsig: float = 3.0) -> UncertaintyVerdict:
    """Check ``mse(probe) * sev(probe) >= h`` with a paired ``nsig``-sigma allowance."""
    post = _posteriors(model, batch, post, workers)
    x = estimate_matrix(post, probe)
    mse = FunctionalEstimate.from_terms(conditional_mse(post, x), post.n_failed)
    sev = FunctionalEstimate.from_terms(conditional_sev(post, x), post.n_failed)
    prod = product_of(mse, sev)
    margin = prod.value - curve.h_value
    se = prod.paired_se(curve.h_point.product)
    slack = nsig * se + 1e-12 * abs(curve.h_value)
    name = getattr(probe, "name", "array")
    return UncertaintyVerdict(name, mse, sev, prod, margin, se, margin >= -slack)


def solve_constrained(model, epsilon: float, batch=None, *, post=None, workers=1,
                      rel_width: float = 1e-3) -> float:
    """Smallest ``mu`` with ``sev(x_mu) <= epsilon`` (to ``rel_width`` on a log scale).

    Returns 0 when the conditional mean is already feasible and ``inf`` when
    only the risk-averse limit is.  The returned ``mu`` is always feasible.
    """
    epsilon = float(epsilon)
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise InvalidInputError("epsilon must be positive and finite")
    post = _posteriors(model, batch, post, workers)
    curve = CurveTerms(post)
    sev = lambda mu: float(np.mean(curve.sev(mu)))  # noqa: E731
    if sev(0.0) <= epsilon:
        return 0.0
    sev_inf = sev(math.inf)
    if epsilon < sev_inf:
        raise InfeasibleError(f"epsilon {epsilon:.6g} is below the smallest attainable sev "
                              f"{sev_inf:.6g}", sev_min=sev_inf)
    if epsilon <= sev_inf * (1.0 + 1e-12):
        return math.inf
    hi = 1.0
    while sev(hi) > epsilon:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    lo = hi
    while sev(lo) <= epsilon:
        lo *= 0.5
        if lo < 1e-300:
            return lo
    while hi / lo - 1.0 > rel_width:
        mid = math.sqrt(lo * hi)
        if sev(mid) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class LipschitzConstants:
    """Frontier Lipschitz constants in ``mu``.

    ``k_mse = 4 E{s_max ||dx||^2}`` bounds the slope of mse.  ``k_sev = 4
    E{s_max^2 ||dx||^2}`` bounds the slope of the unscaled quadratic form
    ``E{(x_mu - x_inf)^T S (x_mu - x_inf)}``; the raw sev excess is
    ``sev_scale`` times that form, so ``k_sev_raw = sev_scale * k_sev``
    bounds the slope of sev itself.
    """

    k_mse: float
    k_sev: float
    sev_scale: float = SEV_SCALE

    @property
    def k_sev_raw(self) -> float:
        return self.sev_scale * self.k_sev


def lipschitz_constants(model=None, batch=None, *, post=None, workers=1) -> LipschitzConstants:
    post = _posteriors(model, batch, post, workers)
    curve = CurveTerms(post)
    smax = np.max(curve.lam, axis=-1)
    return LipschitzConstants(k_mse=float(4.0 * np.mean(smax * curve.dx2)),
                              k_sev=float(4.0 * np.mean(smax ** 2 * curve.dx2)))
