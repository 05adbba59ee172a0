"""Generative models of (state, observation) pairs and their posterior summaries.

A model samples observations ``Y`` and, for each ``Y``, reports the
conditional mean, covariance, third-order statistic ``R(Y)`` and the two
higher-order quantities needed for the squared-error variance:

* ``third = E{||Z||^2 Z | Y}`` with ``Z = X - E{X|Y}``
* ``sq_norm_var = Var{||Z||^2 | Y}``

Every summary also carries a raw-moment oracle ``E{prod_i X_i^k_i | Y}`` for
total degree up to four, so the fast closed forms can be cross-checked
against the definitions.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, PosteriorError, QuadratureError
from .numerics import DEFAULT_RANK_TOL, EigenDecomp, RngStream, eig_sym, integrate_1d

log = logging.getLogger(__name__)

CHUNK = 4096
Oracle = Callable[[tuple], float]


# --------------------------------------------------------------------------
# moment helpers

def central_from_raw(raw: Oracle, mean: np.ndarray, powers: Sequence[int]) -> float:
    """Central moment ``E{prod (X_i - m_i)^k_i}`` expanded in raw moments."""
    powers = tuple(int(k) for k in powers)
    total = 0.0
    for sub in itertools.product(*(range(k + 1) for k in powers)):
        coef = 1.0
        for k, j, m in zip(powers, sub, mean):
            coef *= math.comb(k, j) * (-m) ** (k - j)
        if coef != 0.0:
            total += coef * raw(sub)
    return total


def _unit(n: int, *idx: int) -> tuple:
    out = [0] * n
    for i in idx:
        out[i] += 1
    return tuple(out)


def _isserlis(idx: list[int], cov: np.ndarray) -> float:
    if not idx:
        return 1.0
    if len(idx) % 2:
        return 0.0
    first, rest = idx[0], idx[1:]
    return sum(cov[first, rest[j]] * _isserlis(rest[:j] + rest[j + 1:], cov)
               for j in range(len(rest)))


def gaussian_raw_moment(mean: np.ndarray, cov: np.ndarray, powers: Sequence[int]) -> float:
    idx = [i for i, k in enumerate(powers) for _ in range(k)]
    total = 0.0
    for mask in itertools.product((0, 1), repeat=len(idx)):
        centred = [i for i, b in zip(idx, mask) if b]
        if len(centred) % 2:
            continue
        term = _isserlis(centred, cov)
        for i, b in zip(idx, mask):
            if not b:
                term *= mean[i]
        total += term
    return total


def raw_from_central_1d(mean: float, central: Sequence[float], k: int) -> float:
    """``E{X^k}`` from the mean and central moments ``(1, 0, var, mu3, mu4)``."""
    return sum(math.comb(k, j) * mean ** (k - j) * central[j] for j in range(k + 1))


# --------------------------------------------------------------------------
# posterior containers

@dataclass(frozen=True)
class PosteriorSummary:
    """Conditional moments of the state for one observation."""

    mean: np.ndarray
    cov: np.ndarray
    r_stat: np.ndarray
    third: np.ndarray
    sq_norm_var: float
    moment_oracle: Oracle | None = field(default=None, repr=False, compare=False)
    rank_tol: float = DEFAULT_RANK_TOL

    @cached_property
    def eig(self) -> EigenDecomp:
        return eig_sym(self.cov, self.rank_tol)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def raw_moment(self, powers: Sequence[int]) -> float:
        if self.moment_oracle is None:
            raise InvalidInputError("this posterior carries no moment oracle")
        if sum(powers) > 4:
            raise InvalidInputError("moment oracle supports total degree <= 4")
        return float(self.moment_oracle(tuple(int(k) for k in powers)))

    def central_moment(self, powers: Sequence[int]) -> float:
        return central_from_raw(self.raw_moment, self.mean, powers)

    def third_central(self) -> np.ndarray:
        """Tensor ``T[i, j] = E{Z_i^2 Z_j | Y}`` from the moment oracle."""
        n = self.dim
        return np.array([[self.central_moment(_unit(n, i, i, j)) for j in range(n)]
                         for i in range(n)])

    @classmethod
    def from_oracle(cls, oracle: Oracle, dim: int, rank_tol: float = DEFAULT_RANK_TOL):
        """Build every field from raw moments alone (slow, definition-level)."""
        n = dim
        mean = np.array([oracle(_unit(n, i)) for i in range(n)], dtype=float)
        cen = lambda *idx: central_from_raw(oracle, mean, _unit(n, *idx))  # noqa: E731
        cov = np.array([[cen(i, j) for j in range(n)] for i in range(n)])
        third = np.array([sum(cen(i, i, j) for i in range(n)) for j in range(n)])
        sq = sum(cen(i, i, j, j) for i in range(n) for j in range(n)) - np.trace(cov) ** 2
        e_sq = sum(oracle(_unit(n, j, j)) for j in range(n))
        r = np.array([sum(oracle(_unit(n, j, j, i)) for j in range(n)) - e_sq * mean[i]
                      for i in range(n)])
        return cls(mean=mean, cov=cov, r_stat=r, third=third, sq_norm_var=float(sq),
                   moment_oracle=oracle, rank_tol=rank_tol)


def _check_summary(mean, cov, r_stat, third, sq):
    arrays = (mean, cov, r_stat, third, np.asarray(sq))
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise PosteriorError("posterior summary has non-finite entries")


def closed_summary(mean, cov, third, sq_norm_var, oracle=None, rank_tol=DEFAULT_RANK_TOL):
    """Assemble a summary, deriving ``R(Y) = 2 cov mean + third``."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    third = np.asarray(third, dtype=float)
    r = 2.0 * cov @ mean + third
    _check_summary(mean, cov, r, third, sq_norm_var)
    return PosteriorSummary(mean=mean, cov=cov, r_stat=r, third=third,
                            sq_norm_var=float(sq_norm_var), moment_oracle=oracle,
                            rank_tol=rank_tol)


@dataclass
class PosteriorBatch:
    """Posterior summaries of a whole observation batch, stacked along axis 0.

    ``index`` maps rows back to positions in the observation batch; rows
    whose posterior failed are absent and counted in ``n_failed``.
    """

    mean: np.ndarray
    cov: np.ndarray
    r_stat: np.ndarray
    third: np.ndarray
    sq_norm_var: np.ndarray
    ys: np.ndarray
    index: np.ndarray
    n_failed: int = 0
    rank_tol: float = DEFAULT_RANK_TOL
    closed_form: bool = False

    def __len__(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @cached_property
    def eig(self) -> EigenDecomp:
        return eig_sym(self.cov, self.rank_tol)

    @property
    def failure_rate(self) -> float:
        total = len(self) + self.n_failed
        return self.n_failed / total if total else 0.0

    def summary(self, i: int) -> PosteriorSummary:
        return PosteriorSummary(mean=self.mean[i], cov=self.cov[i], r_stat=self.r_stat[i],
                                third=self.third[i], sq_norm_var=float(self.sq_norm_var[i]),
                                rank_tol=self.rank_tol)

    @classmethod
    def stack(cls, summaries: Sequence[PosteriorSummary], ys, index, n_failed=0,
              rank_tol=DEFAULT_RANK_TOL, closed_form=False):
        if not summaries:
            raise PosteriorError("no posterior could be computed for this batch")
        return cls(mean=np.stack([s.mean for s in summaries]),
                   cov=np.stack([s.cov for s in summaries]),
                   r_stat=np.stack([s.r_stat for s in summaries]),
                   third=np.stack([s.third for s in summaries]),
                   sq_norm_var=np.array([s.sq_norm_var for s in summaries]),
                   ys=np.asarray(ys), index=np.asarray(index), n_failed=n_failed,
                   rank_tol=rank_tol, closed_form=closed_form)


@dataclass(frozen=True)
class ObservationBatch:
    """Observations ``samples[i]`` of shape ``(count, obs_dim)``."""

    samples: np.ndarray
    seed_info: RngStream | None = None

    def __len__(self) -> int:
        return self.samples.shape[0]


# --------------------------------------------------------------------------
# models

class GenerativeModel:
    """Joint law of (X, Y).  Subclasses implement sampling and posteriors."""

    name = "model"
    closed_form = True

    def __init__(self, state_dim: int, obs_dim: int, rank_tol: float = DEFAULT_RANK_TOL):
        self.state_dim = state_dim
        self.obs_dim = obs_dim
        self.rank_tol = rank_tol

    @property
    def hidden(self) -> bool:
        return self.obs_dim == 0

    def params(self) -> dict:
        return {}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"

    def _sample_chunk(self, gen: np.random.Generator, count: int):
        raise NotImplementedError

    def sample_joint(self, count: int, rng: RngStream):
        """Draw ``count`` joint samples, in fixed chunks keyed by ``rng.child(k)``."""
        if count < 1:
            raise InvalidInputError("count must be positive")
        xs, ys = [], []
        for k, start in enumerate(range(0, count, CHUNK)):
            x, y = self._sample_chunk(rng.child(k).generator(), min(CHUNK, count - start))
            xs.append(x)
            ys.append(y)
        return np.concatenate(xs), np.concatenate(ys)

    def sample_observations(self, count: int, rng: RngStream) -> ObservationBatch:
        if count < 1:
            raise InvalidInputError("count must be positive")
        if self.hidden:
            return ObservationBatch(np.zeros((1, 0)), rng)
        return ObservationBatch(self.sample_joint(count, rng)[1], rng)

    def posterior(self, y) -> PosteriorSummary:
        raise NotImplementedError

    def _posterior_chunk(self, ys: np.ndarray):
        """Return (summaries, ok_indices, n_failed) for one chunk of observations."""
        out, ok, failed = [], [], 0
        for i, y in enumerate(ys):
            try:
                out.append(self.posterior(y))
                ok.append(i)
            except (PosteriorError, InvalidInputError) as exc:
                log.debug("posterior failed at y=%s: %s", y, exc)
                failed += 1
        return out, ok, failed

    def posterior_batch(self, batch: ObservationBatch | np.ndarray, workers: int = 1) -> PosteriorBatch:
        """Posterior summaries for every observation; failures are skipped and counted.

        Work is split into fixed-size chunks, so the result does not depend
        on ``workers``.
        """
        ys = batch.samples if isinstance(batch, ObservationBatch) else np.asarray(batch, float)
        ys = ys.reshape(len(ys), self.obs_dim)
        starts = list(range(0, len(ys), CHUNK))
        chunks = [ys[s:s + CHUNK] for s in starts]
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self._posterior_chunk, chunks))
        else:
            results = [self._posterior_chunk(c) for c in chunks]
        summaries, index, failed = [], [], 0
        for s, (out, ok, nf) in zip(starts, results):
            summaries.extend(out)
            index.extend(s + i for i in ok)
            failed += nf
        return PosteriorBatch.stack(summaries, ys[index], index, failed, self.rank_tol,
                                    self.closed_form)


def _positive(name, value):
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise InvalidInputError(f"{name} must be positive and finite, got {value}")
    return value


class GaussianModel(GenerativeModel):
    """Jointly Gaussian state and observation: ``Y = H X + noise``.

    Posteriors are Gaussian, so every member of the risk-aware family equals
    the conditional mean.  An observation matrix with zero rows gives a
    totally hidden Gaussian state.
    """

    name = "gaussian"

    def __init__(self, prior_mean, prior_cov, obs_matrix, noise_cov, rank_tol=DEFAULT_RANK_TOL):
        m0 = np.atleast_1d(np.asarray(prior_mean, float))
        p0 = np.atleast_2d(np.asarray(prior_cov, float))
        h = np.asarray(obs_matrix, float).reshape(-1, m0.size)
        r = np.asarray(noise_cov, float).reshape(h.shape[0], h.shape[0])
        for label, mat in (("prior covariance", p0), ("noise covariance", r)):
            if mat.size:
                eig_sym(mat)  # raises unless symmetric PSD
        super().__init__(m0.size, h.shape[0], rank_tol)
        self.prior_mean, self.prior_cov, self.obs_matrix, self.noise_cov = m0, p0, h, r
        if h.shape[0]:
            s = h @ p0 @ h.T + r
            self.gain = np.linalg.solve(s, h @ p0).T
            self.post_cov = p0 - self.gain @ h @ p0
            self.post_cov = 0.5 * (self.post_cov + self.post_cov.T)
        else:
            self.gain = np.zeros((m0.size, 0))
            self.post_cov = p0

    def params(self):
        return {"prior_mean": self.prior_mean.tolist(), "prior_cov": self.prior_cov.tolist(),
                "obs_matrix": self.obs_matrix.tolist(), "noise_cov": self.noise_cov.tolist()}

    def _sample_chunk(self, gen, count):
        x = gen.multivariate_normal(self.prior_mean, self.prior_cov, size=count, method="eigh")
        if not self.obs_dim:
            return x, np.zeros((count, 0))
        v = gen.multivariate_normal(np.zeros(self.obs_dim), self.noise_cov, size=count,
                                    method="eigh")
        return x, x @ self.obs_matrix.T + v

    def _moments(self, ys):
        mean = self.prior_mean + (ys - self.prior_mean @ self.obs_matrix.T) @ self.gain.T
        return mean, self.post_cov

    def posterior(self, y=None):
        y = np.asarray([] if y is None else y, float).reshape(self.obs_dim)
        if not np.all(np.isfinite(y)):
            raise InvalidInputError("observation must be finite")
        mean, cov = self._moments(y[None, :])
        mean = mean[0]
        oracle = lambda powers: gaussian_raw_moment(mean, cov, powers)  # noqa: E731
        n = self.state_dim
        return closed_summary(mean, cov, np.zeros(n), 2.0 * np.trace(cov @ cov), oracle,
                              self.rank_tol)

    def posterior_batch(self, batch, workers=1):
        ys = batch.samples if isinstance(batch, ObservationBatch) else np.asarray(batch, float)
        ys = ys.reshape(len(ys), self.obs_dim)
        mean, cov = self._moments(ys)
        n, count = self.state_dim, len(ys)
        covs = np.broadcast_to(cov, (count, n, n)).copy()
        return PosteriorBatch(mean=mean, cov=covs, r_stat=2.0 * mean @ cov,
                              third=np.zeros((count, n)),
                              sq_norm_var=np.full(count, 2.0 * np.trace(cov @ cov)),
                              ys=ys, index=np.arange(count), rank_tol=self.rank_tol,
                              closed_form=True)


def gaussian(dim=1, prior_mean=0.0, prior_var=1.0, noise_var=0.5, corr=0.0, hidden=False):
    """Isotropic-ish Gaussian prior observed through identity plus white noise."""
    dim = int(dim)
    if dim < 1:
        raise InvalidInputError("dim must be at least 1")
    prior_var = _positive("prior_var", prior_var)
    corr = float(corr)
    cov = prior_var * ((1 - corr) * np.eye(dim) + corr * np.ones((dim, dim)))
    means = _floats(prior_mean)
    if len(means) not in (1, dim):
        raise InvalidInputError("prior_mean needs 1 or dim entries")
    mean = np.broadcast_to(np.asarray(means, float), (dim,)).copy()
    if str(hidden).lower() in ("1", "true", "yes"):
        return GaussianModel(mean, cov, np.zeros((0, dim)), np.zeros((0, 0)))
    noise_var = _positive("noise_var", noise_var)
    return GaussianModel(mean, cov, np.eye(dim), noise_var * np.eye(dim))


class ExpNoiseModel(GenerativeModel):
    """Exponential state observed with state-dependent Gaussian noise.

    ``X ~ Exp(mean mean_x)``, ``Y = X + v`` with ``v | X ~ N(0, noise_coef X^2)``.
    Posterior moments are computed by adaptive quadrature in ``s = log x``,
    where the unnormalised log density is
    ``-x / mean_x - (y / x - 1)^2 / (2 noise_coef)``.
    """

    name = "exp_noise"
    closed_form = False
    _LOG_CUTOFF = math.log(1e-300)

    def __init__(self, mean_x=2.0, noise_coef=9.0, abs_tol=1e-12, rel_tol=1e-9,
                 rank_tol=DEFAULT_RANK_TOL):
        super().__init__(1, 1, rank_tol)
        self.mean_x = _positive("mean_x", mean_x)
        self.noise_coef = _positive("noise_coef", noise_coef)
        self.abs_tol = _positive("abs_tol", abs_tol)
        self.rel_tol = _positive("rel_tol", rel_tol)

    def params(self):
        return {"mean_x": self.mean_x, "noise_coef": self.noise_coef,
                "abs_tol": self.abs_tol, "rel_tol": self.rel_tol}

    def _sample_chunk(self, gen, count):
        x = gen.exponential(self.mean_x, size=count)
        y = x + math.sqrt(self.noise_coef) * x * gen.standard_normal(count)
        return x[:, None], y[:, None]

    def log_weight(self, s, y):
        """Unnormalised log posterior density of ``s = log X`` given ``Y = y``."""
        with np.errstate(over="ignore"):
            return -np.exp(s) / self.mean_x - (y * np.exp(-s) - 1.0) ** 2 / (2.0 * self.noise_coef)

    def support(self, y: float, step: float = 0.01):
        """Interval in ``s`` outside which the density is below 1e-300 of its peak.

        Also returns a coarse trapezoid estimate of the posterior mean and
        standard deviation, used to centre and scale the moment integrals.
        """
        lo = math.log(abs(y)) - 8.0
        hi = max(math.log(2000.0 * self.mean_x), lo + 10.0)
        for _ in range(60):
            s = np.arange(lo, hi + step, step)
            g = self.log_weight(s, y)
            top = np.max(g)
            left_ok = g[0] - top < self._LOG_CUTOFF
            right_ok = g[-1] - top < self._LOG_CUTOFF
            if left_ok and right_ok:
                break
            lo -= 0.0 if left_ok else 5.0
            hi += 0.0 if right_ok else 5.0
        else:
            raise PosteriorError(f"could not bracket the posterior support at y={y}")
        keep = np.nonzero(g - top > self._LOG_CUTOFF)[0]
        a = s[max(keep[0] - 1, 0)]
        b = s[min(keep[-1] + 1, len(s) - 1)]
        w = np.exp(g - top)
        x = np.exp(s)
        z = np.sum(w)
        m = np.sum(w * x) / z
        sd = math.sqrt(max(np.sum(w * (x - m) ** 2) / z, 0.0))
        return a, b, top, m, sd if sd > 0 else max(m, 1e-300)

    def posterior_density(self, y: float):
        """Normalised posterior density of X on (0, inf) as a vectorised callable."""
        a, b, top, _, _ = self.support(y)
        z, _ = integrate_1d(lambda s: np.exp(self.log_weight(s, y) - top), a, b,
                            self.abs_tol, self.rel_tol)

        def pdf(x):
            x = np.asarray(x, float)
            with np.errstate(divide="ignore"):
                s = np.log(x)
            out = np.exp(self.log_weight(s, y) - top) / (z * x)
            return np.where(x > 0, out, 0.0)
        return pdf

    def posterior(self, y):
        y = float(np.asarray(y, float).reshape(-1)[0])
        if not math.isfinite(y) or y == 0.0:
            raise InvalidInputError(f"observation {y} is outside the numeric support")
        a, b, top, x0, scale = self.support(y)

        def integrand(s):
            w = np.exp(self.log_weight(s, y) - top)
            d = (np.exp(s) - x0) / scale
            return np.stack([w, w * d, w * d * d, w * d ** 3, w * d ** 4], axis=-1)

        try:
            vals, _ = integrate_1d(integrand, a, b, self.abs_tol, self.rel_tol,
                                   initial_panels=8)
        except QuadratureError as exc:
            raise PosteriorError(f"quadrature failed at y={y}: {exc}", partial=exc.estimate) from exc
        m1, m2, m3, m4 = vals[1:] / vals[0]
        mean = x0 + scale * m1
        var = scale ** 2 * (m2 - m1 ** 2)
        mu3 = scale ** 3 * (m3 - 3 * m1 * m2 + 2 * m1 ** 3)
        mu4 = scale ** 4 * (m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4)
        if not var > 0:
            raise PosteriorError(f"non-positive posterior variance at y={y}")
        central = (1.0, 0.0, var, mu3, mu4)
        oracle = lambda p: raw_from_central_1d(mean, central, p[0])  # noqa: E731
        return closed_summary([mean], [[var]], [mu3], mu4 - var ** 2, oracle, self.rank_tol)


class LognormalMultModel(GenerativeModel):
    """Lognormal state observed through multiplicative lognormal noise.

    ``Y = X W`` with ``(log X, log W) ~ N(0, diag(s_x, s_w))``.  The posterior
    of ``log X`` given ``log Y`` is Gaussian, so all moments are closed form.
    """

    name = "lognormal_mult"

    def __init__(self, s_x=1.0, s_w=0.25, rank_tol=DEFAULT_RANK_TOL):
        super().__init__(1, 1, rank_tol)
        self.s_x = _positive("s_x", s_x)
        self.s_w = _positive("s_w", s_w)
        self.post_var = self.s_x * self.s_w / (self.s_x + self.s_w)

    def params(self):
        return {"s_x": self.s_x, "s_w": self.s_w}

    def _sample_chunk(self, gen, count):
        lx = math.sqrt(self.s_x) * gen.standard_normal(count)
        lw = math.sqrt(self.s_w) * gen.standard_normal(count)
        return np.exp(lx)[:, None], np.exp(lx + lw)[:, None]

    def _log_mean(self, ys):
        ys = np.asarray(ys, float)
        if np.any(~np.isfinite(ys)) or np.any(ys <= 0):
            raise InvalidInputError("lognormal observations must be positive and finite")
        return self.s_x / (self.s_x + self.s_w) * np.log(ys)

    def _central(self, mp):
        v = self.post_var
        em1 = math.expm1(v)
        w = em1 + 1.0
        m = np.exp(mp + 0.5 * v)
        var = m ** 2 * em1
        mu3 = m ** 3 * em1 ** 2 * (w + 2.0)
        mu4 = m ** 4 * em1 ** 2 * (w ** 4 + 2 * w ** 3 + 3 * w ** 2 - 3.0)
        return m, var, mu3, mu4

    def posterior(self, y):
        mp = float(self._log_mean(np.asarray(y, float).reshape(-1)[0]))
        m, var, mu3, mu4 = (float(t) for t in self._central(mp))
        v = self.post_var
        oracle = lambda p: math.exp(p[0] * mp + 0.5 * p[0] ** 2 * v)  # noqa: E731
        return closed_summary([m], [[var]], [mu3], mu4 - var ** 2, oracle, self.rank_tol)

    def posterior_batch(self, batch, workers=1):
        ys = batch.samples if isinstance(batch, ObservationBatch) else np.asarray(batch, float)
        ys = ys.reshape(len(ys), 1)
        m, var, mu3, mu4 = self._central(self._log_mean(ys[:, 0]))
        return PosteriorBatch(mean=m[:, None], cov=var[:, None, None],
                              r_stat=(2.0 * var * m + mu3)[:, None], third=mu3[:, None],
                              sq_norm_var=mu4 - var ** 2, ys=ys, index=np.arange(len(ys)),
                              rank_tol=self.rank_tol, closed_form=True)


# -- one-dimensional laws for totally hidden states -------------------------

@dataclass(frozen=True)
class Marginal:
    """A scalar law with closed-form moments up to order four."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind in ("gamma", "lognormal_scale"):
            _positive("kappa" if self.kind == "gamma" else "s", self.a if self.kind == "gamma" else self.b)
        if self.kind == "gamma":
            _positive("theta", self.b)
        if self.kind == "lognormal":
            _positive("s", self.b)
        if self.kind == "uniform" and not self.b > self.a:
            raise InvalidInputError("uniform needs upper > lower")
        if self.kind == "normal" and not self.b >= 0:
            raise InvalidInputError("normal variance must be nonnegative")

    def raw(self, k: int) -> float:
        a, b = self.a, self.b
        if self.kind == "gamma":
            return b ** k * math.prod(a + j for j in range(k))
        if self.kind == "lognormal":
            return math.exp(k * a + 0.5 * k * k * b)
        if self.kind == "uniform":
            return (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
        if self.kind == "normal":
            return raw_from_central_1d(a, (1.0, 0.0, b, 0.0, 3 * b * b), k)
        raise InvalidInputError(f"unknown marginal {self.kind}")

    def central(self) -> tuple[float, float, float, float]:
        """(mean, variance, third central, fourth central)."""
        a, b = self.a, self.b
        if self.kind == "gamma":
            return a * b, a * b * b, 2 * a * b ** 3, 3 * a * (a + 2) * b ** 4
        if self.kind == "lognormal":
            em1 = math.expm1(b)
            w = em1 + 1.0
            m = math.exp(a + 0.5 * b)
            return (m, m * m * em1, m ** 3 * em1 ** 2 * (w + 2),
                    m ** 4 * em1 ** 2 * (w ** 4 + 2 * w ** 3 + 3 * w ** 2 - 3))
        if self.kind == "uniform":
            return 0.5 * (a + b), (b - a) ** 2 / 12, 0.0, (b - a) ** 4 / 80
        if self.kind == "normal":
            return a, b, 0.0, 3 * b * b
        raise InvalidInputError(f"unknown marginal {self.kind}")

    def sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        a, b = self.a, self.b
        if self.kind == "gamma":
            return gen.gamma(a, b, size=count)
        if self.kind == "lognormal":
            return np.exp(a + math.sqrt(b) * gen.standard_normal(count))
        if self.kind == "uniform":
            return gen.uniform(a, b, size=count)
        return a + math.sqrt(b) * gen.standard_normal(count)


class HiddenModel(GenerativeModel):
    """Totally hidden state with independent coordinates; the only observation is trivial."""

    def __init__(self, marginals: Sequence[Marginal], name: str = "hidden",
                 rank_tol=DEFAULT_RANK_TOL):
        super().__init__(len(marginals), 0, rank_tol)
        if not marginals:
            raise InvalidInputError("need at least one coordinate")
        self.marginals = tuple(marginals)
        self.name = name

    def params(self):
        return {"marginals": [(m.kind, m.a, m.b) for m in self.marginals]}

    def _sample_chunk(self, gen, count):
        x = np.stack([m.sample(gen, count) for m in self.marginals], axis=-1)
        return x, np.zeros((count, 0))

    def oracle(self, powers):
        return math.prod(m.raw(k) for m, k in zip(self.marginals, powers))

    def posterior(self, y=None):
        c = np.array([m.central() for m in self.marginals])
        mean, var, mu3, mu4 = c.T
        return closed_summary(mean, np.diag(var), mu3, float(np.sum(mu4 - var ** 2)),
                              self.oracle, self.rank_tol)

    def posterior_batch(self, batch=None, workers=1):
        p = self.posterior()
        return PosteriorBatch.stack([p], np.zeros((1, 0)), [0], rank_tol=self.rank_tol,
                                    closed_form=True)


def _floats(value) -> list[float]:
    if isinstance(value, str):
        return [float(v) for v in value.split(",") if v.strip()]
    return [float(v) for v in np.atleast_1d(value)]


def _broadcast(*lists):
    n = max(len(v) for v in lists)
    out = []
    for v in lists:
        if len(v) not in (1, n):
            raise InvalidInputError("parameter lists must have equal length")
        out.append(v * n if len(v) == 1 else v)
    return out


def gamma_hidden(kappa=1.0, theta=1.0) -> HiddenModel:
    """Product of independent gamma(kappa_i, theta_i) coordinates (shape, scale)."""
    ks, ts = _broadcast(_floats(kappa), _floats(theta))
    return HiddenModel([Marginal("gamma", k, t) for k, t in zip(ks, ts)], "gamma_hidden")


def exp_hidden(mean=1.0) -> HiddenModel:
    ms = _floats(mean)
    return HiddenModel([Marginal("gamma", 1.0, m) for m in ms], "exp_hidden")


def lognormal_hidden(mu=0.0, s=1.0) -> HiddenModel:
    mus, ss = _broadcast(_floats(mu), _floats(s))
    return HiddenModel([Marginal("lognormal", m, v) for m, v in zip(mus, ss)], "lognormal_hidden")


def uniform_hidden(lower=-1.0, upper=1.0) -> HiddenModel:
    los, his = _broadcast(_floats(lower), _floats(upper))
    return HiddenModel([Marginal("uniform", a, b) for a, b in zip(los, his)], "uniform_hidden")


class SampleFileModel(GenerativeModel):
    """Empirical model read from a CSV of joint draws ``x_1..x_n, y_1..y_m``.

    Observations are binned on ``y_1`` into equal-count bins; the posterior
    for any ``y`` is the empirical law of the states in its bin.  With no
    ``y`` columns the state is treated as totally hidden.
    """

    name = "sample_file"

    def __init__(self, path, bins=64, rank_tol=DEFAULT_RANK_TOL):
        self.path = str(path)
        x, y = read_sample_file(path)
        super().__init__(x.shape[1], y.shape[1], rank_tol)
        self.x, self.y = x, y
        bins = int(bins)
        if bins < 1:
            raise InvalidInputError("bins must be positive")
        self.bins = 1 if self.hidden else min(bins, len(x))
        if self.hidden:
            groups = [np.arange(len(x))]
            self.edges = np.array([])
        else:
            order = np.argsort(y[:, 0], kind="stable")
            groups = np.array_split(order, self.bins)
            ysorted = y[order, 0]
            cuts = np.cumsum([len(g) for g in groups])[:-1]
            self.edges = 0.5 * (ysorted[cuts - 1] + ysorted[cuts])
        self.groups = groups
        self._summaries = [self._bin_summary(x[g]) for g in groups]

    def params(self):
        return {"path": self.path, "bins": self.bins}

    def _bin_summary(self, xb):
        mean = xb.mean(axis=0)
        z = xb - mean
        q = np.sum(z * z, axis=1)
        cov = z.T @ z / len(xb)
        third = (q[:, None] * z).mean(axis=0)

        def oracle(powers, xb=xb):
            return float(np.mean(np.prod(xb ** np.asarray(powers), axis=1)))
        return closed_summary(mean, cov, third, float(np.var(q)), oracle, self.rank_tol)

    def bin_of(self, y) -> int:
        return int(np.searchsorted(self.edges, float(np.asarray(y).reshape(-1)[0]), side="right"))

    def _sample_chunk(self, gen, count):
        idx = gen.integers(0, len(self.x), size=count)
        return self.x[idx], self.y[idx]

    def posterior(self, y=None):
        if self.hidden:
            return self._summaries[0]
        y = np.asarray(y, float).reshape(-1)
        if not np.all(np.isfinite(y)):
            raise InvalidInputError("observation must be finite")
        return self._summaries[self.bin_of(y)]

    def posterior_batch(self, batch, workers=1):
        if self.hidden:
            return PosteriorBatch.stack(self._summaries, np.zeros((1, 0)), [0],
                                        rank_tol=self.rank_tol, closed_form=True)
        ys = batch.samples if isinstance(batch, ObservationBatch) else np.asarray(batch, float)
        ys = ys.reshape(len(ys), self.obs_dim)
        b = np.searchsorted(self.edges, ys[:, 0], side="right")
        st = PosteriorBatch.stack(self._summaries, ys[:len(self._summaries)],
                                  np.arange(len(self._summaries)), rank_tol=self.rank_tol)
        return PosteriorBatch(mean=st.mean[b], cov=st.cov[b], r_stat=st.r_stat[b],
                              third=st.third[b], sq_norm_var=st.sq_norm_var[b], ys=ys,
                              index=np.arange(len(ys)), rank_tol=self.rank_tol, closed_form=True)


def read_sample_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a UTF-8 CSV with header ``x_1..x_n, y_1..y_m`` into two arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty sample file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
    if not xcols or len(xcols) + len(ycols) != len(header):
        raise InvalidInputError(f"{path}: header must contain only x_i and y_j columns")
    xcols.sort(key=lambda i: int(header[i][2:]))
    ycols.sort(key=lambda i: int(header[i][2:]))
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc
    if data.size == 0 or data.shape[1] != len(header):
        raise InvalidInputError(f"{path}: no records or ragged rows")
    if not np.all(np.isfinite(data)):
        raise InvalidInputError(f"{path}: non-finite values")
    return data[:, xcols], data[:, ycols]


def write_sample_file(path, x, y) -> None:
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float).reshape(len(x), -1)
    header = [f"x_{i + 1}" for i in range(x.shape[1])] + [f"y_{j + 1}" for j in range(y.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.hstack([x, y]):
            w.writerow([repr(float(v)) for v in row])


MODELS: dict[str, Callable[..., GenerativeModel]] = {
    "gaussian": gaussian,
    "exp_noise": ExpNoiseModel,
    "lognormal_mult": LognormalMultModel,
    "gamma_hidden": gamma_hidden,
    "exp_hidden": exp_hidden,
    "lognormal_hidden": lognormal_hidden,
    "uniform_hidden": uniform_hidden,
    "sample_file": SampleFileModel,
}


def build_model(name: str, **params) -> GenerativeModel:
    """Construct a registered model from keyword parameters (strings allowed)."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise InvalidInputError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InvalidInputError(f"bad parameters for {name}: {exc}") from exc
