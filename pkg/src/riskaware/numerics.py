"""Small numerical kernels: symmetric eigendecomposition, pseudoinverse,
adaptive Gauss-Kronrod quadrature and counter-based random streams.

Everything here works on plain numpy arrays.  The eigen routines accept a
stack of matrices with arbitrary leading dimensions so a whole batch of
posterior covariances is decomposed in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, QuadratureError

__all__ = [
    "EigenDecomp",
    "RngStream",
    "eig_sym",
    "pinv_from_eig",
    "integrate_1d",
]

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class EigenDecomp:
    """Spectral decomposition ``m = u @ diag(lam) @ u.T``.

    ``lam`` is sorted in descending order along the last axis and
    ``u[..., :, i]`` is the eigenvector of ``lam[..., i]``.  For stacked
    input, ``rank`` and ``tol_used`` carry one entry per matrix.
    """

    u: np.ndarray
    lam: np.ndarray
    rank: np.ndarray
    tol_used: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        """Mask of eigenvalues treated as nonzero."""
        return np.abs(self.lam) > self.tol_used[..., None]

    def reconstruct(self) -> np.ndarray:
        return np.einsum("...ik,...k,...jk->...ij", self.u, self.lam, self.u)


def _jacobi(a: np.ndarray, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a stack of symmetric matrices (in place on ``a``)."""
    n = a.shape[-1]
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    if n == 1:
        return a[..., 0, 0][..., None].copy(), v
    eps = np.finfo(float).eps
    scale = np.sqrt(np.sum(a * a, axis=(-2, -1)))
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(a[..., iu[0], iu[1]] ** 2, axis=-1))
        if np.all(off <= eps * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                active = apq != 0.0
                if not np.any(active):
                    continue
                safe = np.where(active, apq, 1.0)
                # a tiny apq sends tau to inf, where t -> 0 is the correct limit
                with np.errstate(over="ignore"):
                    tau = (a[..., q, q] - a[..., p, p]) / (2.0 * safe)
                    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                c = np.where(active, c, 1.0)[..., None]
                s = np.where(active, s, 0.0)[..., None]
                ap, aq = a[..., :, p].copy(), a[..., :, q].copy()
                a[..., :, p] = c * ap - s * aq
                a[..., :, q] = s * ap + c * aq
                rp, rq = a[..., p, :].copy(), a[..., q, :].copy()
                a[..., p, :] = c * rp - s * rq
                a[..., q, :] = s * rp + c * rq
                vp, vq = v[..., :, p].copy(), v[..., :, q].copy()
                v[..., :, p] = c * vp - s * vq
                v[..., :, q] = s * vp + c * vq
    return np.diagonal(a, axis1=-2, axis2=-1).copy(), v


def eig_sym(m, rel_tol: float = DEFAULT_RANK_TOL, psd: bool = True) -> EigenDecomp:
    """Eigendecomposition of a symmetric matrix (or stack) by cyclic Jacobi.

    Eigenvalues with magnitude below ``rel_tol * max|lambda|`` are set to
    zero and excluded from the rank.  With ``psd=True`` (the default, used
    for covariances) slightly negative roundoff eigenvalues are clamped to
    zero and anything more negative raises.

    Raises
    ------
    InvalidInputError
        Non-finite or non-symmetric input, non-positive ``rel_tol``, or a
        clearly indefinite matrix when ``psd`` is set.
    """
    if not rel_tol > 0:
        raise InvalidInputError("rel_tol must be positive")
    a = np.array(m, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidInputError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)), initial=0.0)
    if asym > 1e-10 * max(1.0, np.max(np.abs(a), initial=0.0)):
        raise InvalidInputError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    a = 0.5 * (a + np.swapaxes(a, -1, -2))

    lam, v = _jacobi(a)
    order = np.argsort(-lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)

    big = np.max(np.abs(lam), axis=-1)
    tol = rel_tol * np.maximum(big, np.finfo(float).tiny)
    small = np.abs(lam) <= tol[..., None]
    if psd:
        if np.any(lam < -tol[..., None]):
            raise InvalidInputError("matrix is not positive semidefinite")
        small |= lam < 0
    lam = np.where(small, 0.0, lam)
    rank = np.sum(~small, axis=-1)
    return EigenDecomp(u=v, lam=lam, rank=rank, tol_used=tol)


def pinv_from_eig(e: EigenDecomp) -> np.ndarray:
    """Moore-Penrose pseudoinverse ``u @ diag(1/lam on the rank) @ u.T``."""
    nz = e.lam != 0.0
    inv = np.where(nz, 1.0 / np.where(nz, e.lam, 1.0), 0.0)
    return np.einsum("...ik,...k,...jk->...ij", e.u, inv, e.u)


# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1] (QUADPACK qk15).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
KRONROD_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def _map_domain(f, lo: float, hi: float):
    """Return (g, a, b) with  int_lo^hi f(x) dx = int_a^b g(t) dt  on a finite (a, b)."""
    if math.isfinite(lo) and math.isfinite(hi):
        return f, lo, hi

    def guard(x, jac):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            fx = np.asarray(f(x), dtype=float)
            jac = jac.reshape(jac.shape + (1,) * (fx.ndim - 1))
            out = fx * jac
        bad = ~np.isfinite(x)
        if np.any(bad):
            out[bad] = 0.0
        return out

    if math.isfinite(lo):
        def g(t):
            with np.errstate(divide="ignore", over="ignore"):
                x = lo + t / (1.0 - t)
                jac = 1.0 / (1.0 - t) ** 2
            return guard(x, jac)
        return g, 0.0, 1.0
    if math.isfinite(hi):
        def g(t):
            with np.errstate(divide="ignore", over="ignore"):
                x = hi - t / (1.0 - t)
                jac = 1.0 / (1.0 - t) ** 2
            return guard(x, jac)
        return g, 0.0, 1.0

    def g(t):
        with np.errstate(divide="ignore", over="ignore"):
            x = t / (1.0 - t * t)
            jac = (1.0 + t * t) / (1.0 - t * t) ** 2
        return guard(x, jac)
    return g, -1.0, 1.0


def _gk15(g, a, b):
    """Kronrod-15 estimates and ``|K15 - G7|`` errors on panels ``(a[i], b[i])``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = mid[:, None] + half[:, None] * KRONROD_NODES[None, :]
    fx = np.asarray(g(nodes.ravel()), dtype=float)
    fx = fx.reshape((len(a), 15) + fx.shape[1:])
    scale = half.reshape((-1,) + (1,) * (fx.ndim - 2))
    kron = scale * np.tensordot(fx, KRONROD_WEIGHTS, axes=(1, 0)) if fx.ndim == 2 else \
        scale * np.einsum("pn...,n->p...", fx, KRONROD_WEIGHTS)
    gauss = scale * np.einsum("pn...,n->p...", fx, GAUSS_WEIGHTS)
    return kron, np.abs(kron - gauss)


def integrate_1d(f, lo: float, hi: float, abs_tol: float = 1e-10, rel_tol: float = 1e-10,
                 max_subdivisions: int = 500, initial_panels: int = 1):
    """Adaptive Gauss-Kronrod (7/15) quadrature of ``f`` over ``(lo, hi)``.

    ``f`` is called with a 1-D array of nodes and must return an array of
    shape ``(len(nodes),)`` or ``(len(nodes), k)``; in the second case all
    ``k`` integrals are computed together and each must meet the tolerance.
    Infinite limits are mapped to a finite interval with
    ``x = lo + t / (1 - t)`` (and its mirror / two-sided analogue).
    ``initial_panels`` splits the (mapped) interval evenly before adapting.

    The per-panel error estimate is ``|K15 - G7|``; the reported error is
    its sum over panels.  Each refinement round bisects, in one vectorised
    integrand call, every panel whose error exceeds its equal share of the
    tolerance (at least the worst panel).

    Returns
    -------
    (value, error)
        Floats for scalar integrands, arrays for vector integrands.

    Raises
    ------
    QuadratureError
        Tolerance not met after ``max_subdivisions`` bisections; carries the
        best estimate and its error.
    """
    if not (abs_tol > 0 and rel_tol > 0):
        raise InvalidInputError("tolerances must be positive")
    if math.isnan(lo) or math.isnan(hi):
        raise InvalidInputError("integration limits must not be NaN")
    if lo == hi:
        return 0.0, 0.0
    sign = 1.0
    if lo > hi:
        lo, hi, sign = hi, lo, -1.0
    g, a, b = _map_domain(f, lo, hi)

    cuts = np.linspace(a, b, max(int(initial_panels), 1) + 1)
    pa, pb = cuts[:-1], cuts[1:]
    val, err = _gk15(g, pa, pb)
    splits = 0
    while True:
        total = val.sum(axis=0)
        err_total = err.sum(axis=0)
        if not np.all(np.isfinite(total)):
            raise QuadratureError("integrand produced non-finite values", sign * total, err_total)
        bound = np.maximum(abs_tol, rel_tol * np.abs(total))
        if np.all(err_total <= bound):
            break
        # per-panel badness: worst ratio of panel error to its share of the bound
        ratio = (err / bound).reshape(len(pa), -1).max(axis=1)
        pick = ratio > 1.0 / len(pa)
        pick[np.argmax(ratio)] = True
        splits += int(pick.sum())
        if splits > max_subdivisions:
            raise QuadratureError(f"no convergence after {max_subdivisions} subdivisions",
                                  sign * total, err_total)
        sa, sb = pa[pick], pb[pick]
        sm = 0.5 * (sa + sb)
        if np.any(~((sa < sm) & (sm < sb))):
            raise QuadratureError("panel width reached machine precision", sign * total, err_total)
        nv, ne = _gk15(g, np.concatenate([sa, sm]), np.concatenate([sm, sb]))
        keep = ~pick
        pa = np.concatenate([pa[keep], sa, sm])
        pb = np.concatenate([pb[keep], sm, sb])
        val = np.concatenate([val[keep], nv])
        err = np.concatenate([err[keep], ne])
    if np.ndim(total) == 0:
        return sign * float(total), float(err_total)
    return sign * total, err_total


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Immutable descriptor of a counter-based random stream.

    The Philox key is ``(seed, stream_id)``, so the same pair reproduces the
    same draws regardless of which worker or thread asks for them.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or not 0 <= int(val) <= _MASK64:
                raise InvalidInputError(f"{name} must be an unsigned 64-bit integer, got {val!r}")

    def generator(self) -> np.random.Generator:
        key = np.array([int(self.seed), int(self.stream_id)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        """Derive an independent sub-stream, e.g. one per chunk of work."""
        return RngStream(self.seed, _splitmix64(int(self.stream_id) ^ _splitmix64(int(index) + 1)))
