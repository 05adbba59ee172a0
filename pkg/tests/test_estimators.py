import logging
import math

import numpy as np
import pytest
from conftest import random_posteriors
from hypothesis import given, settings
from hypothesis import strategies as st

from riskaware import InvalidInputError, build_model
from riskaware.estimators import (curve_shift_identity, delta_x, difference_identity,
                                  estimator_derivative, risk_aware_estimate,
                                  skew_symmetry_residual)
from riskaware.model import PosteriorBatch, closed_summary


@pytest.fixture(scope="module")
def exp1():
    return build_model("gamma_hidden", kappa=1, theta=1).posterior()


def direct_solve(post, mu):
    """Independent oracle: solve ``(I + 2 mu S) x = m + mu R`` with LAPACK."""
    n = post.mean.shape[-1]
    a = np.eye(n) + 2.0 * mu * post.cov
    b = post.mean + mu * post.r_stat
    return np.linalg.solve(a, b[..., None])[..., 0]


def rel_err(a, b, scale):
    return np.linalg.norm(a - b, axis=-1) / np.maximum(scale, 1e-300)


# ---------------------------------------------------------------- examples

def test_mu_zero_is_mean(exp1):
    post = random_posteriors(np.random.default_rng(0), 20, 3)
    assert np.array_equal(risk_aware_estimate(post, 0.0), post.mean)
    assert risk_aware_estimate(exp1, 0)[0] == 1.0


def test_gaussian_collapses_to_mean():
    m = build_model("gaussian", dim=2, prior_mean="1,-2", corr=0.3)
    p = m.posterior([0.4, 1.1])
    for mu in (0.0, 0.1, 1.0, 1e3, math.inf):
        assert np.allclose(risk_aware_estimate(p, mu), p.mean, rtol=1e-12, atol=1e-12)
    assert np.allclose(delta_x(p), 0.0, atol=1e-12)


def test_exp1_family_values(exp1):
    assert risk_aware_estimate(exp1, 1.0)[0] == pytest.approx(5 / 3, rel=1e-15)
    assert risk_aware_estimate(exp1, math.inf)[0] == pytest.approx(2.0, rel=1e-15)
    assert risk_aware_estimate(exp1, "inf")[0] == pytest.approx(2.0, rel=1e-15)
    assert delta_x(exp1)[0] == pytest.approx(-1.0, rel=1e-15)


def test_symmetric_posterior_has_zero_delta():
    p = build_model("uniform_hidden", lower=-1, upper=3).posterior()
    assert abs(delta_x(p)[0]) <= 1e-14
    assert skew_symmetry_residual(p) <= 1e-14


def test_curve_shift_examples(exp1):
    assert curve_shift_identity(exp1, 0.0)[0] == 1.0
    assert curve_shift_identity(exp1, 1.0)[0] == pytest.approx(5 / 3, rel=1e-15)
    assert curve_shift_identity(exp1, 1e9)[0] == pytest.approx(2.0, rel=1e-9)
    with pytest.raises(InvalidInputError):
        curve_shift_identity(exp1, math.inf)


def test_difference_examples(exp1):
    assert difference_identity(exp1, 0.7, 0.7)[0] == 0.0
    # x_1 - x_0 = 5/3 - 1
    assert difference_identity(exp1, 1.0, 0.0)[0] == pytest.approx(2 / 3, rel=1e-15)
    g = build_model("gaussian").posterior([0.3])
    assert difference_identity(g, 2.0, 0.1)[0] == pytest.approx(0.0, abs=1e-15)


def test_skew_residual_examples(exp1):
    assert skew_symmetry_residual(exp1) == pytest.approx(1.0, rel=1e-14)
    g = build_model("gaussian", dim=2, corr=0.5).posterior([0.1, 0.2])
    assert skew_symmetry_residual(g) <= 1e-12


def test_invalid_mu(exp1):
    for bad in (-1.0, float("nan"), "x", None):
        with pytest.raises(InvalidInputError):
            risk_aware_estimate(exp1, bad)


def test_zero_covariance_gives_mean_everywhere():
    p = closed_summary(np.array([1.5, -2.0]), np.zeros((2, 2)), np.zeros(2), 0.0)
    for mu in (0.0, 3.0, math.inf):
        assert np.array_equal(risk_aware_estimate(p, mu), p.mean)
    assert np.array_equal(delta_x(p), np.zeros(2))


# ---------------------------------------------------------------- identities

@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_family_matches_direct_solve(n):
    post = random_posteriors(np.random.default_rng(10 + n), 250, n)
    for mu in (1e-3, 0.3, 1.0, 17.0, 1e4):
        x = risk_aware_estimate(post, mu)
        ref = direct_solve(post, mu)
        assert np.max(rel_err(x, ref, np.linalg.norm(ref, axis=-1))) <= 1e-10


def test_identities_on_1000_random_posteriors():
    rng = np.random.default_rng(2024)
    posts = [random_posteriors(rng, 250, n) for n in (1, 2, 4, 8)]
    mus = [0.0, 1e-4, 0.05, 0.5, 1.0, 3.0, 100.0, 1e4]
    for post in posts:
        scale_mean = np.linalg.norm(post.mean, axis=-1)
        for mu in mus:
            direct = direct_solve(post, mu)
            shift = curve_shift_identity(post, mu)
            assert np.max(rel_err(shift, direct, np.linalg.norm(direct, axis=-1))) <= 1e-10
            for mu2 in mus:
                d2 = direct_solve(post, mu2)
                diff = difference_identity(post, mu, mu2)
                # relative to the operands: the direct difference itself carries
                # rounding of order eps * ||x||
                scale = np.linalg.norm(direct, axis=-1) + np.linalg.norm(d2, axis=-1) + scale_mean
                assert np.max(rel_err(diff, direct - d2, scale)) <= 1e-10


def test_continuity_at_infinity_random():
    post = random_posteriors(np.random.default_rng(5), 200, 4)
    x_inf = risk_aware_estimate(post, math.inf)
    gaps = [np.max(np.linalg.norm(risk_aware_estimate(post, mu) - x_inf, axis=-1))
            for mu in np.geomspace(1, 1e8, 9)]
    assert all(b < a for a, b in zip(gaps[:-1], gaps[1:]))
    # |x_mu - x_inf| = |tc| / (2 s (1 + 2 mu s)) <= |tc| / (4 s^2 mu) componentwise
    e = post.eig
    tc = np.einsum("kji,kj->ki", e.u, post.third)
    envelope = np.max(np.linalg.norm(tc / (4 * e.lam ** 2), axis=-1)) / 1e8
    assert gaps[-1] <= envelope * (1 + 1e-6)
    assert gaps[-1] <= 1e-5


def test_continuity_rate_scalar(exp1):
    # x_mu - x_inf = -1 / (1 + 2 mu) on Exp(1), so mu * gap -> 1/2
    for mu in (1e2, 1e4, 1e6, 1e8):
        gap = abs(risk_aware_estimate(exp1, mu)[0] - 2.0)
        assert mu * gap == pytest.approx(0.5, rel=2 / mu)


def test_null_space_mean_perturbation():
    rng = np.random.default_rng(8)
    post = random_posteriors(rng, 100, 4, rank=2)
    e = post.eig
    v = rng.standard_normal((100, 2))
    shift = np.einsum("kij,kj->ki", e.u[:, :, 2:], v)
    moved = PosteriorBatch(mean=post.mean + shift, cov=post.cov, r_stat=post.r_stat,
                           third=post.third, sq_norm_var=post.sq_norm_var, ys=post.ys,
                           index=post.index)
    d = risk_aware_estimate(moved, math.inf) - risk_aware_estimate(post, math.inf)
    assert np.allclose(d, shift, rtol=0, atol=1e-10)


def test_null_space_residual_is_discarded_with_warning(caplog):
    p = closed_summary(np.zeros(2), np.diag([1.0, 0.0]), np.array([0.5, 0.3]), 1.0)
    with caplog.at_level(logging.WARNING, logger="riskaware.estimators"):
        x = risk_aware_estimate(p, math.inf)
    assert x.tolist() == [0.25, 0.0]
    assert any("null space" in r.message for r in caplog.records)


@pytest.mark.parametrize("name,params,y", [
    ("gaussian", {"dim": 3, "corr": 0.2}, [0.1, -0.4, 2.0]),
    ("gaussian", {}, [1.5]),
    ("uniform_hidden", {"lower": 0, "upper": 5}, None),
])
def test_skew_symmetric_implies_zero_delta(name, params, y):
    m = build_model(name, **params)
    p = m.posterior(y) if y is not None else m.posterior()
    assert skew_symmetry_residual(p) <= 1e-10
    assert np.linalg.norm(delta_x(p)) <= 1e-10


def test_derivative_matches_closed_form(exp1):
    # d/dmu [1 + 2mu/(1+2mu)] = 2/(1+2mu)^2
    for mu in (0.0, 0.5, 3.0):
        assert estimator_derivative(exp1, mu)[0] == pytest.approx(2 / (1 + 2 * mu) ** 2,
                                                                  rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(m=st.floats(-10, 10), lam=st.floats(1e-3, 1e3), t=st.floats(-50, 50),
       mu=st.floats(0, 1e6))
def test_scalar_member_between_endpoints(m, lam, t, mu):
    p = closed_summary(np.array([m]), np.array([[lam]]), np.array([t]), t * t / lam + 1.0)
    x0, xmu, xinf = (risk_aware_estimate(p, v)[0] for v in (0.0, mu, math.inf))
    lo, hi = min(x0, xinf), max(x0, xinf)
    tol = 1e-12 * (1 + abs(lo) + abs(hi))
    assert lo - tol <= xmu <= hi + tol
