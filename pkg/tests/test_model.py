import math

import numpy as np
import pytest

from riskaware import InvalidInputError, PosteriorSummary, RngStream, build_model
from riskaware.model import (CHUNK, ObservationBatch, SampleFileModel, gaussian_raw_moment,
                             read_sample_file, write_sample_file)
from riskaware.numerics import integrate_1d


def cov_from_oracle(p):
    n = p.dim
    return np.array([[p.central_moment(tuple(int(k == i) + int(k == j) for k in range(n)))
                      for j in range(n)] for i in range(n)])


def test_gaussian_sampling_reproducible():
    m = build_model("gaussian")
    a = m.sample_observations(10, RngStream(42))
    b = m.sample_observations(10, RngStream(42))
    assert a.samples.shape == (10, 1)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_sampling_independent_of_chunking():
    m = build_model("exp_noise")
    # every full chunk is drawn from its own child stream, so runs of
    # different lengths share their complete leading chunks exactly
    a = m.sample_observations(CHUNK + 10, RngStream(3)).samples
    b = m.sample_observations(2 * CHUNK + 7, RngStream(3)).samples
    assert np.array_equal(a[:CHUNK], b[:CHUNK])
    assert np.all(np.isfinite(b))


def test_hidden_model_single_trivial_observation():
    m = build_model("gamma_hidden")
    b = m.sample_observations(500, RngStream(0))
    assert isinstance(b, ObservationBatch) and b.samples.shape == (1, 0)
    assert m.hidden and m.obs_dim == 0


def test_gaussian_r_stat_prior_mean_zero():
    m = build_model("gaussian", prior_mean=0.0, prior_var=2.0, noise_var=0.5)
    for y in (-3.0, 0.1, 5.0):
        p = m.posterior([y])
        s2, mu = p.cov[0, 0], p.mean[0]
        assert p.r_stat[0] == pytest.approx(2 * s2 * mu, rel=1e-12, abs=1e-15)
        raw = p.raw_moment((3,)) - p.raw_moment((2,)) * p.raw_moment((1,))
        assert raw == pytest.approx(2 * s2 * mu, rel=1e-10, abs=1e-14)


def test_gaussian_batch_matches_single():
    m = build_model("gaussian", dim=3, prior_mean="1,2,3", corr=0.3)
    post = m.posterior_batch(m.sample_observations(50, RngStream(1)))
    for i in (0, 17, 49):
        p = m.posterior(post.ys[i])
        assert np.allclose(post.mean[i], p.mean) and np.allclose(post.r_stat[i], p.r_stat)


def test_gamma_exp1_posterior():
    p = build_model("gamma_hidden", kappa=1, theta=1).posterior()
    assert p.mean[0] == 1 and p.cov[0, 0] == 1 and p.r_stat[0] == 4
    assert p.raw_moment((3,)) - p.raw_moment((2,)) * p.raw_moment((1,)) == 4


def test_lognormal_mult_posterior_formula():
    s_x = 0.7
    m = build_model("lognormal_mult", s_x=s_x)
    y = 2.3
    p = m.posterior([y])
    vp = s_x * 0.25 / (s_x + 0.25)
    mp = s_x / (s_x + 0.25) * math.log(y)
    for k in range(1, 5):
        assert p.raw_moment((k,)) == pytest.approx(math.exp(k * mp + k * k * vp / 2), rel=1e-14)
    assert p.mean[0] == pytest.approx(math.exp(mp + vp / 2), rel=1e-14)


def test_lognormal_mult_invalid_y():
    m = build_model("lognormal_mult")
    with pytest.raises(InvalidInputError):
        m.posterior([-1.0])


def test_lognormal_against_nested_monte_carlo():
    """Importance-weighted prior draws reproduce the closed-form posterior moments."""
    s_x, s_w = 1.0, 0.25
    m = build_model("lognormal_mult", s_x=s_x, s_w=s_w)
    gen = np.random.default_rng(11)
    lx = math.sqrt(s_x) * gen.standard_normal(400_000)
    x = np.exp(lx)
    for y in (0.4, 1.0, 3.0):
        w = np.exp(-(math.log(y) - lx) ** 2 / (2 * s_w))
        p = m.posterior([y])
        for k in (1, 2):
            f = x ** k
            est = np.sum(w * f) / np.sum(w)
            # delta-method standard error of a self-normalised ratio estimator
            n = len(w)
            wbar = np.mean(w)
            se = math.sqrt(np.mean((w * (f - est)) ** 2) / n) / wbar
            assert abs(est - p.raw_moment((k,))) <= 3 * se + 1e-12, (y, k, est, se)


def test_exp_noise_density_normalised_and_moments():
    m = build_model("exp_noise")
    for y in (0.05, 1.7, -2.0, 40.0):
        pdf = m.posterior_density(y)
        z, _ = integrate_1d(pdf, 0, math.inf, 1e-12, 1e-10)
        assert abs(z - 1) <= 1e-8
        p = m.posterior([y])
        mean, _ = integrate_1d(lambda x: x * pdf(x), 0, math.inf, 1e-12, 1e-10)
        assert p.mean[0] == pytest.approx(mean, rel=1e-7)


def test_exp_noise_rejects_zero():
    with pytest.raises(InvalidInputError):
        build_model("exp_noise").posterior([0.0])


@pytest.mark.parametrize("name,params,y", [
    ("gaussian", {"dim": 2, "prior_mean": "1,2", "corr": 0.5}, [0.3, -1.0]),
    ("exp_noise", {}, [1.2]),
    ("lognormal_mult", {"s_x": 1.5}, [0.8]),
    ("gamma_hidden", {"kappa": "1,3", "theta": "2,0.5"}, None),
    ("uniform_hidden", {"lower": -1, "upper": 3}, None),
    ("lognormal_hidden", {"s": 0.3}, None),
])
def test_oracle_reproduces_summary(name, params, y):
    m = build_model(name, **params)
    p = m.posterior(y) if y is not None else m.posterior()
    assert np.allclose(cov_from_oracle(p), p.cov, rtol=1e-8, atol=1e-12)
    q = PosteriorSummary.from_oracle(p.moment_oracle, p.dim)
    assert np.allclose(q.mean, p.mean, rtol=1e-10)
    assert np.allclose(q.r_stat, p.r_stat, rtol=1e-6, atol=1e-9)
    assert np.allclose(q.third, p.third, rtol=1e-6, atol=1e-9)
    assert q.sq_norm_var == pytest.approx(p.sq_norm_var, rel=1e-6, abs=1e-9)


def test_gaussian_raw_moment_isserlis():
    mean = np.array([0.0, 0.0])
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert gaussian_raw_moment(mean, cov, (4, 0)) == pytest.approx(3 * 4.0)
    assert gaussian_raw_moment(mean, cov, (2, 2)) == pytest.approx(2 * 1 + 2 * 0.25)
    assert gaussian_raw_moment(mean, cov, (1, 2)) == 0


def test_parameter_validation():
    for name, params in [("lognormal_mult", {"s_x": 0}), ("gamma_hidden", {"kappa": -1}),
                         ("gamma_hidden", {"theta": 0}), ("gaussian", {"prior_var": -1}),
                         ("exp_noise", {"mean_x": 0}), ("nope", {}),
                         ("gaussian", {"bogus": 1})]:
        with pytest.raises(InvalidInputError):
            build_model(name, **params)


def test_sample_file_round_trip(tmp_path):
    gen = np.random.default_rng(0)
    x = gen.gamma(2.0, 1.0, size=(1000, 1))
    y = x + gen.standard_normal((1000, 1))
    path = tmp_path / "d.csv"
    write_sample_file(path, x, y)
    xr, yr = read_sample_file(path)
    assert np.array_equal(xr, x) and np.array_equal(yr, y)
    m = SampleFileModel(path, bins=10)
    assert m.state_dim == 1 and m.obs_dim == 1 and len(m.groups) == 10
    assert all(len(g) == 100 for g in m.groups)
    post = m.posterior_batch(m.sample_observations(200, RngStream(2)))
    for i in (0, 50, 199):
        b = m.bin_of(post.ys[i])
        xb = x[m.groups[b], 0]
        assert post.mean[i, 0] == pytest.approx(xb.mean())
        assert post.cov[i, 0, 0] == pytest.approx(xb.var())
        assert post.third[i, 0] == pytest.approx(np.mean((xb - xb.mean()) ** 3))


def test_sample_file_hidden_and_bad_files(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("x_1,x_2\n1,2\n3,5\n4,4\n", encoding="utf-8")
    m = SampleFileModel(path)
    assert m.hidden and m.posterior().mean.tolist() == [8 / 3, 11 / 3]
    bad = tmp_path / "b.csv"
    bad.write_text("x_1,z\n1,2\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        SampleFileModel(bad)
    bad.write_text("x_1,y_1\n1,nan\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        SampleFileModel(bad)
    bad.write_text("x_1,y_1\n1,abc\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        SampleFileModel(bad)


def test_posterior_batch_independent_of_workers():
    m = build_model("exp_noise")
    b = m.sample_observations(2 * CHUNK + 100, RngStream(9))
    p1 = m.posterior_batch(b, workers=1)
    p4 = m.posterior_batch(b, workers=4)
    assert p1.mean.tobytes() == p4.mean.tobytes()
    assert p1.sq_norm_var.tobytes() == p4.sq_norm_var.tobytes()
