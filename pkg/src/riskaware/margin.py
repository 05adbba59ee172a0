"""Hedgeable risk margins, skewness magnitude, and the trade-off bound hierarchy.

The per-observation margin is ``C(Y) = ||dx||^2_{S^+}``, the squared
``S^+``-norm of ``dx = x_0 - x_inf``.  Its mean is sandwiched between
``E{||dx||^2 / s_max}`` and ``E{||dx||^2 / s_min}``, and
``d = 2 sqrt(E{C})`` drives an upper bound ``U`` and lower bounds ``L(mu)``
on how far the frontier product can rise above the anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, UnavailableError
from .estimators import (as_mu, delta_x_eigen, estimator_derivative, from_eigen,
                         risk_aware_estimate)
from .functionals import CurveTerms, FunctionalEstimate, _posteriors
from .numerics import integrate_1d, pinv_from_eig


def _margins(post) -> np.ndarray:
    e = post.eig
    pos = e.positive
    dc = delta_x_eigen(post)
    inv = np.where(pos, 1.0 / np.where(pos, e.lam, 1.0), 0.0)
    return np.sum(dc * dc * inv, axis=-1)


def hedge_margin(p) -> float | np.ndarray:
    """``C(Y) = dx^T S^+ dx`` for one posterior (or per row of a batch); 0 when ``S = 0``."""
    out = _margins(p)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SpectralStats:
    """Estimated essential bounds on the posterior spectrum.

    ``rho_max`` / ``rho_min`` are the ``1 - q`` / ``q`` empirical quantiles of
    the per-observation largest / smallest eigenvalue (or user overrides);
    ``rho_min`` is None when some posterior is rank-deficient.
    """

    rho_min: float | None
    rho_max: float
    quantile_used: float
    min_seen: float
    max_seen: float
    rho_min_override: bool = False
    rho_max_override: bool = False

    def as_dict(self) -> dict:
        return {"rho_min": self.rho_min, "rho_max": self.rho_max,
                "quantile_used": self.quantile_used, "min_seen": self.min_seen,
                "max_seen": self.max_seen, "rho_min_override": self.rho_min_override,
                "rho_max_override": self.rho_max_override}


def spectral_stats(post, quantile: float = 0.001, rho_min=None, rho_max=None) -> SpectralStats:
    lam = post.eig.lam
    smax = lam[..., 0]
    smin = lam[..., -1]
    full_rank = bool(np.all(post.eig.positive))
    est_max = float(np.quantile(smax, 1.0 - quantile))
    est_min = float(np.quantile(smin, quantile)) if full_rank else None
    if rho_max is not None and not float(rho_max) >= 0:
        raise InvalidInputError("rho_max must be nonnegative")
    if rho_min is not None and not float(rho_min) > 0:
        raise InvalidInputError("rho_min must be positive")
    r_max = est_max if rho_max is None else float(rho_max)
    r_min = est_min if rho_min is None else float(rho_min)
    if r_min is not None and r_min > r_max:
        raise InvalidInputError(f"rho_min {r_min} exceeds rho_max {r_max}")
    return SpectralStats(r_min, r_max, quantile, float(np.min(smin)), float(np.max(smax)),
                         rho_min is not None, rho_max is not None)


@dataclass
class MarginReport:
    """Margins, their bounds, and the inputs of the trade-off bounds."""

    c_values: np.ndarray = field(repr=False)
    expected_margin: FunctionalEstimate
    d_value: float
    d_se: float
    e_lower: FunctionalEstimate
    e_upper: FunctionalEstimate
    spectral: SpectralStats
    mse0: FunctionalEstimate
    sev_inf: FunctionalEstimate
    n_failed: int = 0

    @property
    def anchor(self) -> float:
        return self.mse0.value * self.sev_inf.value

    @property
    def u_bound(self) -> float:
        return bound_upper(self)

    def l_bound(self, mu) -> float:
        return bound_lower(self, mu=mu)

    def as_dict(self, mu_grid=()) -> dict:
        out = {"expected_margin": self.expected_margin.value,
               "expected_margin_se": self.expected_margin.std_error,
               "d_value": self.d_value, "d_se": self.d_se,
               "e_lower": self.e_lower.value, "e_lower_se": self.e_lower.std_error,
               "e_upper": self.e_upper.value, "e_upper_se": self.e_upper.std_error,
               "mse0": self.mse0.value, "sev_inf": self.sev_inf.value, "anchor": self.anchor,
               "u_bound": self.u_bound, "spectral": self.spectral.as_dict(),
               "n_samples": self.expected_margin.n_samples, "n_failed": self.n_failed}
        if self.spectral.rho_min is None:
            out["l_bound"] = None
        else:
            out["l_bound"] = [{"mu": mu, "value": self.l_bound(mu)} for mu in mu_grid]
        return out


def margin_report(model=None, batch=None, quantile: float = 0.001, *, rho_min=None,
                  rho_max=None, post=None, workers=1) -> MarginReport:
    """Average the margin over a batch and collect everything the bounds need."""
    if not 0 < quantile <= 0.05:
        raise InvalidInputError("quantile must lie in (0, 0.05]")
    post = _posteriors(model, batch, post, workers)
    c = _margins(post)
    e = post.eig
    pos = e.positive
    dx2 = np.sum(delta_x_eigen(post) ** 2, axis=-1)
    smax = e.lam[..., 0]
    smin_pos = np.min(np.where(pos, e.lam, np.inf), axis=-1)
    rank0 = ~np.any(pos, axis=-1)
    lower = np.where(rank0, 0.0, dx2 / np.where(rank0, 1.0, smax))
    upper = np.where(rank0, 0.0, dx2 / np.where(rank0, 1.0, smin_pos))
    em = FunctionalEstimate.from_terms(c, post.n_failed)
    d = 2.0 * math.sqrt(max(em.value, 0.0))
    d_se = 2.0 * em.std_error / d if d > 0 else 2.0 * math.sqrt(em.std_error)
    curve = CurveTerms(post)
    return MarginReport(
        c_values=c, expected_margin=em, d_value=d, d_se=d_se,
        e_lower=FunctionalEstimate.from_terms(lower, post.n_failed),
        e_upper=FunctionalEstimate.from_terms(upper, post.n_failed),
        spectral=spectral_stats(post, quantile, rho_min, rho_max),
        mse0=FunctionalEstimate.from_terms(curve.mse(0.0), post.n_failed),
        sev_inf=FunctionalEstimate.from_terms(curve.sev(math.inf), post.n_failed),
        n_failed=post.n_failed)


def _anchors(report, mse0, sev_inf):
    return (report.mse0.value if mse0 is None else float(mse0),
            report.sev_inf.value if sev_inf is None else float(sev_inf))


def bound_upper(report: MarginReport, mse0=None, sev_inf=None) -> float:
    """``U = (r^2 mse0 + r sev_inf) d^2 + r^3 d^4`` with ``r = rho_max``."""
    mse0, sev_inf = _anchors(report, mse0, sev_inf)
    r = report.spectral.rho_max
    d2 = report.d_value ** 2
    return (r * r * mse0 + r * sev_inf) * d2 + r ** 3 * d2 * d2


def alpha(mu, rho_min: float, rho_max: float) -> float:
    """``alpha(mu) = rho_min^2 / (4 (1 + 2 mu rho_max)^2)``; zero at ``mu = inf``."""
    mu = as_mu(mu)
    if math.isinf(mu):
        return 0.0
    return 0.25 * rho_min ** 2 / (1.0 + 2.0 * mu * rho_max) ** 2


def bound_lower(report: MarginReport, mse0=None, sev_inf=None, mu=0.0) -> float:
    """``L(mu) = (a mse0 + r mu^2 a sev_inf) d^2 + r mu^2 a^2 d^4`` with ``r = rho_min``.

    Zero at ``mu = inf``; raises UnavailableError when ``rho_min`` is absent.
    """
    mu = as_mu(mu)
    r = report.spectral.rho_min
    if r is None:
        raise UnavailableError("rho_min is unavailable (rank-deficient posteriors); "
                               "supply it explicitly to evaluate the lower bound")
    if math.isinf(mu):
        return 0.0
    mse0, sev_inf = _anchors(report, mse0, sev_inf)
    a = alpha(mu, r, report.spectral.rho_max)
    d2 = report.d_value ** 2
    return (a * mse0 + r * mu * mu * a * sev_inf) * d2 + r * mu * mu * a * a * d2 * d2


@dataclass(frozen=True)
class LocalizationDiagnostic:
    """Leading term and remainder size of the ``mu*`` localisation estimate."""

    leading: float
    remainder: float
    eps: float

    def as_dict(self) -> dict:
        return {"leading": self.leading, "remainder": self.remainder, "eps": self.eps}


def mu_star_localization(report: MarginReport, batch=None, eps: float = 0.1, *, model=None,
                         post=None, workers=1) -> LocalizationDiagnostic:
    """Diagnostic scale for ``mu*``: ``sqrt(E{sum_i [U^T dx]_i^2}) / (eps rho_min sqrt(E{||dx||^2}))``.

    The remainder reported is ``Var(||dx||^2) / (eps E{||dx||^2}^{3/2})``.
    Not an enforced bound.
    """
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    r = report.spectral.rho_min
    if r is None:
        raise UnavailableError("rho_min is unavailable for this model")
    post = _posteriors(model, batch, post, workers)
    dc = delta_x_eigen(post)
    dx2 = np.sum(dc * dc, axis=-1)
    m = float(np.mean(dx2))
    if m <= 0:
        raise UnavailableError("delta_x vanishes identically; mu* localisation is undefined")
    lead = math.sqrt(float(np.mean(np.sum(dc * dc, axis=-1)))) / (eps * r * math.sqrt(m))
    rem = float(np.var(dx2)) / (eps * m ** 1.5)
    return LocalizationDiagnostic(lead, rem, eps)


def projection_margin(p, mu_max: float = 1e6, abs_tol: float = 1e-13, rel_tol: float = 1e-10):
    """Integrate ``<S^+ dx_tau/dtau, x_inf - x_0>`` over ``tau in [0, mu_max]``.

    The derivative comes from direct linear solves, independent of the
    eigen-coordinate closed forms.  Returns ``(integral, tail_bound)``
    where ``tail_bound`` bounds the omitted integral over ``(mu_max, inf)``.
    """
    sp = pinv_from_eig(p.eig)
    direction = risk_aware_estimate(p, math.inf) - risk_aware_estimate(p, 0.0)
    w = sp @ direction

    def integrand(taus):
        return np.array([float(w @ estimator_derivative(p, t)) for t in taus])

    # the curve moves fastest near 0; split on a log scale for efficiency
    edges = [0.0, *np.geomspace(1e-6, mu_max, 13)]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate_1d(integrand, a, b, abs_tol, rel_tol)
        total += val
    lam = p.eig.lam[p.eig.positive]
    smin = float(np.min(lam)) if lam.size else 1.0
    tail = hedge_margin(p) / (1.0 + 2.0 * mu_max * smin) if lam.size else 0.0
    return total, tail


def skewness_direction(post) -> np.ndarray:
    """Per-observation ``dx`` vectors (direction of posterior asymmetry)."""
    return from_eigen(post.eig.u, delta_x_eigen(post))

