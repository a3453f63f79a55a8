"""Multivariate normal CDF engine.

Dimensions 0-2 are computed in closed form (the bivariate case by
Gauss-Legendre quadrature of the Drezner-Wesolowsky identity, accurate to
about 1e-14). Higher dimensions use a randomised quasi-Monte-Carlo rule:
separation-of-variables with a variable-reordered Cholesky factor,
integrated over a Richtmyer lattice under random Cranley-Patterson shifts.
The shift spread yields an error estimate; sampling stops once the
requested absolute accuracy is met or the point budget is exhausted.
All results are deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainError, InputError

__all__ = ["MvnSpec", "MvnResult", "bvn_cdf", "mvn_cdf", "mvn_cdf_batch"]

_SQRT_2PI = np.sqrt(2.0 * np.pi)
_PRIMES = np.array(
    [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61,
        67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137,
        139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199,
    ],
    dtype=float,
)

# Gauss-Legendre half-rules used by the bivariate quadrature.
_GL = {
    6: (
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
        np.array([-0.9324695142031522, -0.6612093864662647, -0.2386191860831970]),
    ),
    12: (
        np.array(
            [
                0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                0.2031674267230659, 0.2334925365383547, 0.2491470458134029,
            ]
        ),
        np.array(
            [
                -0.9815606342467191, -0.9041172563704750, -0.7699026741943050,
                -0.5873179542866171, -0.3678314989981802, -0.1252334085114692,
            ]
        ),
    ),
    20: (
        np.array(
            [
                0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                0.1527533871307259,
            ]
        ),
        np.array(
            [
                -0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
                -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
                -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
                -0.07652652113349733,
            ]
        ),
    ),
}


def _bvnd(dh, dk, r):
    """Genz's BVND: upper-right probability P(X > dh, Y > dk), vectorised."""
    dh = np.asarray(dh, dtype=float)
    dk = np.asarray(dk, dtype=float)
    if abs(r) < 0.3:
        w, x = _GL[6]
    elif abs(r) < 0.75:
        w, x = _GL[12]
    else:
        w, x = _GL[20]
    h = dh.copy()
    k = dk.copy()
    hk = h * k
    bvn = np.zeros(np.broadcast(h, k).shape)

    if abs(r) < 0.925:
        if abs(r) > 0:
            hs = (h * h + k * k) / 2.0
            asr = np.arcsin(r)
            for i in range(len(w)):
                for is_ in (-1.0, 1.0):
                    sn = np.sin(asr * (is_ * x[i] + 1.0) / 2.0)
                    bvn += w[i] * np.exp((sn * hk - hs) / (1.0 - sn * sn))
            bvn *= asr / (4.0 * np.pi)
        bvn += ndtr(-h) * ndtr(-k)
        return bvn

    if r < 0.0:
        k = -k
        hk = -hk
    if abs(r) < 1.0:
        as_ = (1.0 - r) * (1.0 + r)
        a = np.sqrt(as_)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr = -(bs / as_ + hk) / 2.0
        m1 = asr > -100.0
        bvn = np.where(
            m1,
            a
            * np.exp(np.where(m1, asr, -np.inf))
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_**2 / 5.0),
            0.0,
        )
        m2 = -hk < 100.0
        b = np.sqrt(bs)
        with np.errstate(over="ignore"):
            corr = (
                np.exp(np.where(m2, -hk / 2.0, 0.0))
                * _SQRT_2PI
                * ndtr(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            )
        bvn = bvn - np.where(m2, corr, 0.0)
        a /= 2.0
        for i in range(len(w)):
            for is_ in (-1.0, 1.0):
                xs = (a * (is_ * x[i] + 1.0)) ** 2
                rs = np.sqrt(1.0 - xs)
                asr1 = -(bs / xs + hk) / 2.0
                m3 = asr1 > -100.0
                term = (
                    a
                    * w[i]
                    * np.exp(np.where(m3, asr1, -np.inf))
                    * (
                        np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                        - (1.0 + c * xs * (1.0 + d * xs))
                    )
                )
                bvn = bvn + np.where(m3, term, 0.0)
        bvn = -bvn / (2.0 * np.pi)
    if r > 0.0:
        bvn = bvn + ndtr(-np.maximum(h, k))
    else:
        bvn = -bvn
        add = np.where(k > h, ndtr(k) - ndtr(h), 0.0)
        bvn = bvn + add
    return bvn


def bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for standard normal (X, Y) with correlation rho."""
    if not -1.0 - 1e-12 <= rho <= 1.0 + 1e-12:
        raise DomainError(f"correlation {rho} outside [-1, 1]")
    rho = float(np.clip(rho, -1.0, 1.0))
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if rho == 1.0:
        return np.minimum(ndtr(h), ndtr(k))
    if rho == -1.0:
        return np.clip(ndtr(h) + ndtr(k) - 1.0, 0.0, None)
    # Infinite limits reduce to lower dimensions; +-38 saturates the CDF.
    out = _bvnd(-np.clip(h, -38.0, 38.0), -np.clip(k, -38.0, 38.0), rho)
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    out = np.where(np.isposinf(h), ndtr(k), out)
    out = np.where(np.isposinf(k) & ~np.isposinf(h), ndtr(h), out)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class MvnSpec:
    """A centred/shifted multivariate normal and CDF accuracy targets."""

    dimension: int
    mean: np.ndarray
    cov: np.ndarray
    accuracy: float = 1e-5    # absolute CDF accuracy target
    budget: int = 500_000     # maximum number of integrand evaluations

    def __post_init__(self):
        mean = np.zeros(self.dimension) if self.mean is None else np.asarray(self.mean, float)
        cov = np.asarray(self.cov, dtype=float)
        if self.dimension < 0:
            raise InputError("dimension must be nonnegative")
        if self.dimension > 0:
            if mean.shape != (self.dimension,):
                raise InputError("mean has wrong shape")
            if cov.shape != (self.dimension, self.dimension):
                raise InputError("covariance has wrong shape")
            if not np.allclose(cov, cov.T, atol=1e-10):
                raise DomainError("covariance must be symmetric")
            eig = np.linalg.eigvalsh(cov)
            if eig[0] < -1e-8 * max(np.trace(cov), 1e-300):
                raise DomainError("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class MvnResult:
    value: float
    error: float
    converged: bool = True

    def __float__(self):
        return self.value


def _truncated_normal_mean(t):
    # E[Z | Z <= t]; stable for very negative t.
    if t < -8.0:
        return t - 1.0 / t
    p = ndtr(t)
    if p <= 0.0:
        return t
    return -np.exp(-0.5 * t * t) / _SQRT_2PI / p


def _reordered_cholesky(cov, b):
    """Variable-reordered Cholesky for the sequential CDF transform.

    At each step the remaining variable with the smallest conditional
    probability is pinned next, which concentrates the integrand variation
    in the leading lattice coordinates. Rank deficiencies yield zero pivot
    columns. Returns (L, permuted limits, permutation).
    """
    c = np.array(cov, dtype=float)
    bb = np.array(b, dtype=float)
    p = len(bb)
    L = np.zeros((p, p))
    y = np.zeros(p)
    perm = np.arange(p)
    scale = max(np.trace(c) / max(p, 1), 1e-300)
    tiny = 1e-12 * scale
    for j in range(p):
        best_i, best_pr = j, np.inf
        for i in range(j, p):
            s2 = c[i, i] - L[i, :j] @ L[i, :j]
            if s2 > tiny:
                t = (bb[i] - L[i, :j] @ y[:j]) / np.sqrt(s2)
                pr = ndtr(t)
            else:
                pr = 1.0 if (bb[i] - L[i, :j] @ y[:j]) >= 0.0 else 0.0
            if pr < best_pr:
                best_pr, best_i = pr, i
        if best_i != j:
            i = best_i
            c[[i, j]] = c[[j, i]]
            c[:, [i, j]] = c[:, [j, i]]
            bb[[i, j]] = bb[[j, i]]
            L[[i, j], :j] = L[[j, i], :j]
            perm[[i, j]] = perm[[j, i]]
        s2 = c[j, j] - L[j, :j] @ L[j, :j]
        if s2 > tiny:
            L[j, j] = np.sqrt(s2)
            for i in range(j + 1, p):
                L[i, j] = (c[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
            t = (bb[j] - L[j, :j] @ y[:j]) / L[j, j]
            y[j] = _truncated_normal_mean(min(t, 8.0))
        else:
            L[j, j] = 0.0
            y[j] = 0.0
    return L, bb, perm


def _lattice_block(n_points, dim, shifts, start):
    """Tent-transformed Richtmyer lattice points k = start..start+n-1."""
    k = np.arange(start + 1, start + n_points + 1, dtype=float)
    gen = np.sqrt(_PRIMES[:dim])
    # (shifts, points, dim)
    x = np.abs(2.0 * np.mod(k[None, :, None] * gen[None, None, :] + shifts[:, None, :], 1.0) - 1.0)
    return x


# Lattice points are deterministic in (seed, shift count, dimension), so one
# grown-on-demand copy serves every likelihood call of a seeded run.
_LATTICE_CACHE: dict = {}
_LATTICE_CACHE_MAX_POINTS = 16_384


def _shifts_for(seed: int, n_shifts: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((n_shifts, dim))


def _lattice_slice(seed, n_shifts, dim, start, take):
    end = start + take
    if end > _LATTICE_CACHE_MAX_POINTS:
        return _lattice_block(take, dim, _shifts_for(seed, n_shifts, dim), start)
    key = (seed, n_shifts, dim)
    cached = _LATTICE_CACHE.get(key)
    if cached is None or cached.shape[1] < end:
        size = 256
        while size < end:
            size *= 2
        _LATTICE_CACHE[key] = _lattice_block(
            size, dim, _shifts_for(seed, n_shifts, dim), 0
        )
        cached = _LATTICE_CACHE[key]
    return cached[:, start:end, :]


def _qmc_products(L, B, x):
    """Sequential conditional probabilities for one lattice block.

    L: (p, p) lower factor; B: (nev, p) upper limits; x: (ns, np_, p-1)
    points in (0, 1). Returns product array of shape (ns, np_, nev). The
    shift and point axes are folded together while conditioning.
    """
    p = L.shape[0]
    ns, npts = x.shape[0], x.shape[1]
    nev = B.shape[0]
    n = ns * npts
    xf = x.reshape(n, x.shape[2])
    sd_max = max(np.max(np.diag(L)), 1e-150)
    if L[0, 0] > 0.0:
        d = ndtr(B[:, 0] / L[0, 0])
    else:
        d = (B[:, 0] >= -1e-6 * sd_max).astype(float)
    prod = np.broadcast_to(d, (n, nev)).copy()
    dcur = prod.copy()
    ys = np.empty((p - 1, n, nev))
    for i in range(1, p):
        u = xf[:, i - 1][:, None]
        ys[i - 1] = ndtri(np.clip(u * dcur, 1e-300, 1.0 - 1e-16))
        s = np.einsum("k,kne->ne", L[i, :i], ys[:i])
        if L[i, i] > 0.0:
            dcur = ndtr((B[:, i][None, :] - s) / L[i, i])
        else:
            dcur = ((B[:, i][None, :] - s) >= -1e-6 * sd_max).astype(float)
        prod *= dcur
    return prod.reshape(ns, npts, nev)


def _qmc_cdf(L, B, accuracy, budget, seed, n_shifts=None, n_start=None):
    """Randomised lattice integration shared by single and batch paths.

    Returns (values, errors, converged) arrays over the event axis of B.
    Blocks are evaluated in point chunks to bound memory; coarse accuracy
    targets start from a smaller lattice.
    """
    if n_shifts is None:
        n_shifts = 8 if accuracy >= 2e-4 else 10
    if n_start is None:
        n_start = 128 if accuracy >= 2e-4 else 256
    p = L.shape[0]
    nev = B.shape[0]
    dim = max(p - 1, 1)
    sums = np.zeros((n_shifts, nev))
    count = 0
    n_block = n_start
    chunk = max(32, int(2_000_000 // (n_shifts * max(nev, 1) * p)))
    while True:
        done = 0
        while done < n_block:
            take = min(chunk, n_block - done)
            x = _lattice_slice(seed, n_shifts, dim, count + done, take)
            sums += _qmc_products(L, B, x).sum(axis=1)
            done += take
        count += n_block
        means = sums / count
        values = means.mean(axis=0)
        errors = 3.0 * means.std(axis=0, ddof=1) / np.sqrt(n_shifts)
        total = count * n_shifts
        if np.all(errors <= accuracy) or total >= budget:
            return np.clip(values, 0.0, 1.0), errors, bool(np.all(errors <= accuracy))
        n_block = min(count, max(1, (budget // n_shifts) - count))


def mvn_cdf(spec: MvnSpec, upper, seed: int = 0) -> MvnResult:
    """P(Z <= upper) for Z ~ N(mean, cov), with an error estimate.

    Closed forms below dimension three; the quasi-Monte-Carlo estimate
    above, deterministic for a fixed ``seed``. ``converged`` is False when
    the budget ran out before the accuracy target was met.
    """
    p = spec.dimension
    if p == 0:
        return MvnResult(1.0, 0.0)
    b = np.asarray(upper, dtype=float) - spec.mean
    if b.shape != (p,):
        raise InputError("upper has wrong shape")
    if np.any(np.isneginf(b)):
        return MvnResult(0.0, 0.0)
    cov = spec.cov
    var = np.diag(cov).copy()
    scale = max(np.max(var), 1e-300)

    # Deterministic coordinates contribute a step factor; infinite limits
    # contribute a factor one. Both drop out of the integration.
    drop = np.isposinf(b) | (var <= 1e-14 * scale)
    if np.any(drop):
        for i in np.nonzero(var <= 1e-14 * scale)[0]:
            if b[i] < -1e-7 * np.sqrt(scale):
                return MvnResult(0.0, 0.0)
        keep = ~drop
        if not np.any(keep):
            return MvnResult(1.0, 0.0)
        b = b[keep]
        cov = cov[np.ix_(keep, keep)]
        var = var[keep]
        p = len(b)

    if p == 1:
        return MvnResult(float(ndtr(b[0] / np.sqrt(var[0]))), 1e-15)
    if p == 2:
        rho = cov[0, 1] / np.sqrt(var[0] * var[1])
        val = float(bvn_cdf(b[0] / np.sqrt(var[0]), b[1] / np.sqrt(var[1]), rho))
        return MvnResult(val, 5e-14)

    L, bb, _ = _reordered_cholesky(cov, b)
    vals, errs, ok = _qmc_cdf(L, bb[None, :], spec.accuracy, spec.budget, seed)
    return MvnResult(float(vals[0]), float(errs[0]), ok)


def mvn_cdf_batch(
    cov: np.ndarray,
    uppers: np.ndarray,
    accuracy: float = 1e-5,
    budget: int = 500_000,
    seed: int = 0,
):
    """CDF of one zero-mean normal at many upper-limit vectors.

    The limit vectors share covariance, Cholesky factor, lattice points and
    randomisation, so likelihood sweeps over events cost little more than a
    single evaluation. Returns (values, errors) arrays.
    """
    B = np.atleast_2d(np.asarray(uppers, dtype=float))
    p = B.shape[1]
    if p == 0:
        return np.ones(B.shape[0]), np.zeros(B.shape[0])
    cov = np.asarray(cov, dtype=float)
    var = np.diag(cov)
    if p == 1:
        sd = np.sqrt(max(var[0], 0.0))
        if sd == 0.0:
            vals = (B[:, 0] >= 0.0).astype(float)
        else:
            vals = ndtr(B[:, 0] / sd)
        return vals, np.full(B.shape[0], 1e-15)
    if p == 2:
        s0, s1 = np.sqrt(var[0]), np.sqrt(var[1])
        if s0 > 0.0 and s1 > 0.0:
            rho = cov[0, 1] / (s0 * s1)
            vals = bvn_cdf(B[:, 0] / s0, B[:, 1] / s1, np.clip(rho, -1, 1))
            return np.asarray(vals, dtype=float), np.full(B.shape[0], 5e-14)
    ref = np.median(np.where(np.isfinite(B), B, np.nan), axis=0)
    ref = np.where(np.isfinite(ref), ref, 0.0)
    L, _, perm = _reordered_cholesky(cov, ref)
    vals, errs, _ = _qmc_cdf(L, B[:, perm], accuracy, budget, seed)
    neg = np.any(np.isneginf(B), axis=1)
    vals = np.where(neg, 0.0, vals)
    return vals, errs
