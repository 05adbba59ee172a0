"""Shared fixtures: one posterior batch per built-in model, reused across tests."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from riskaware import RngStream, build_model  # noqa: E402
from riskaware.model import PosteriorBatch, SampleFileModel, write_sample_file  # noqa: E402

OUTER = 20_000
SEED = 20240607


def built_in_specs():
    """(label, model name, params) for the built-in models exercised everywhere."""
    return [
        ("gaussian", "gaussian", {"dim": 2, "prior_mean": "1,-0.5", "corr": 0.4}),
        ("exp_noise", "exp_noise", {}),
        ("lognormal_mult", "lognormal_mult", {"s_x": 1.0}),
        ("gamma_hidden", "gamma_hidden", {"kappa": 1.0, "theta": 1.0}),
    ]


@pytest.fixture(scope="session")
def posterior_sets(tmp_path_factory):
    """label -> (model, PosteriorBatch) at the acceptance batch size."""
    out = {}
    for label, name, params in built_in_specs():
        model = build_model(name, **params)
        batch = model.sample_observations(OUTER, RngStream(SEED, 0))
        out[label] = (model, model.posterior_batch(batch))
    # an empirical model built from exp_noise joint draws
    src = build_model("exp_noise")
    x, y = src.sample_joint(50_000, RngStream(SEED, 99))
    path = tmp_path_factory.mktemp("data") / "joint.csv"
    write_sample_file(path, x, y)
    sf = SampleFileModel(path, bins=64)
    out["sample_file"] = (sf, sf.posterior_batch(sf.sample_observations(OUTER, RngStream(SEED, 1))))
    return out


def random_posteriors(rng: np.random.Generator, count: int, n: int, rank=None,
                      lam_range=(0.1, 10.0)) -> PosteriorBatch:
    """Random posterior summaries with third moments in the range of the covariance."""
    q, _ = np.linalg.qr(rng.standard_normal((count, n, n)))
    lam = rng.uniform(*lam_range, size=(count, n))
    if rank is not None:
        lam[:, rank:] = 0.0
    cov = np.einsum("kij,kj,klj->kil", q, lam, q)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    mean = rng.standard_normal((count, n)) * 3
    tc = rng.standard_normal((count, n)) * np.where(lam > 0, 1.0, 0.0)
    third = np.einsum("kij,kj->ki", q, tc)
    r = 2 * np.einsum("kij,kj->ki", cov, mean) + third
    return PosteriorBatch(mean=mean, cov=cov, r_stat=r, third=third,
                          sq_norm_var=rng.uniform(1, 5, count) + np.sum(tc ** 2, axis=1),
                          ys=np.zeros((count, 0)), index=np.arange(count))


@pytest.fixture
def report(capsys):
    """Print a line straight to the terminal (bypasses output capture)."""
    def emit(line: str):
        with capsys.disabled():
            print(line)
    return emit


@pytest.fixture(scope="session")
def exp1_exact():
    """Symbolic Exp(1) values from the independent scalar oracle."""
    from oracle_scalar import exp1_oracle
    return exp1_oracle()
