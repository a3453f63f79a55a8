"""Multivariate tail machinery for the network max-stable model.

Everything here is driven by the kernel matrix of a station tuple (an
:class:`~riverextremes.kernels.HrStructure`): the exponent measure and its
closed form as a sum of Gaussian CDFs, the angular density on the L1
simplex, and the censored density obtained by differentiating the exponent
measure in the exceeding coordinates only.

All Gaussian CDF evaluations are deterministic given a seed, so likelihood
surfaces built on top of these functions are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import DomainError, InputError, ThresholdError
from .kernels import HrStructure
from .mvn import MvnSpec, mvn_cdf, mvn_cdf_batch

__all__ = [
    "CensoredTerm",
    "exponent_measure",
    "spectral_density",
    "censored_density",
    "censored_log_density_batch",
    "below_threshold_mass",
]

_LOG_2PI = np.log(2.0 * np.pi)


def exponent_measure(
    hr: HrStructure,
    x,
    accuracy: float = 1e-5,
    budget: int = 500_000,
    seed: int = 0,
) -> float:
    """Exponent measure V(x) of the fitted max-stable vector.

    Computed as ``sum_k x_k^-1 * Phi_{m-1}(log(x_j/x_k) + G[j,k]/2; S^(k))``,
    which is homogeneous of order -1 and satisfies V(z, inf, ..., inf) = 1/z.
    Infinite coordinates are allowed; all finite ones must be positive.
    """
    xv = np.asarray(x, dtype=float)
    if xv.shape != (hr.m,):
        raise InputError(f"x must have length {hr.m}")
    if np.any(xv <= 0.0) or np.any(np.isnan(xv)):
        raise DomainError("coordinates must be positive")
    if hr.m == 1:
        return float(1.0 / xv[0])
    logx = np.log(xv)
    total = 0.0
    for k in range(hr.m):
        if np.isinf(xv[k]):
            continue
        idx = hr.anchor_indices(k)
        upper = logx[idx] - logx[k] + hr.gamma[idx, k] / 2.0
        spec = MvnSpec(hr.m - 1, np.zeros(hr.m - 1), hr.sigma(k), accuracy, budget)
        total += mvn_cdf(spec, upper, seed=seed).value / xv[k]
    return float(total)


def spectral_density(hr: HrStructure, omega) -> float:
    """Angular density of the exponent measure on the interior of the
    unit L1 simplex."""
    w = np.asarray(omega, dtype=float)
    m = hr.m
    if m < 2:
        raise InputError("spectral density needs at least two stations")
    if w.shape != (m,):
        raise InputError(f"omega must have length {m}")
    if np.any(w <= 0.0):
        raise DomainError("omega must be strictly positive (interior point)")
    if abs(w.sum() - 1.0) > 1e-8:
        raise DomainError("omega must lie on the unit L1 simplex")
    w = w / w.sum()
    sig = hr.sigma(0)
    wt = np.log(w[1:] / w[0]) + hr.gamma[1:, 0] / 2.0
    try:
        factor = cho_factor(sig, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DomainError("anchored covariance is singular") from exc
    quad = float(wt @ cho_solve(factor, wt))
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    log_g = (
        -0.5 * quad
        - 0.5 * logdet
        - 0.5 * (m - 1) * _LOG_2PI
        - 2.0 * np.log(w[0])
        - np.sum(np.log(w[1:]))
    )
    return float(np.exp(log_g))


@dataclass(frozen=True)
class CensoredTerm:
    """One event's contribution data: values, thresholds, exceedance set."""

    x: np.ndarray
    threshold: np.ndarray
    exceed_idx: np.ndarray

    @classmethod
    def from_event(cls, x, threshold) -> "CensoredTerm":
        xv = np.asarray(x, dtype=float)
        thr = np.broadcast_to(np.asarray(threshold, dtype=float), xv.shape).copy()
        if np.any(xv <= 0.0) or np.any(~np.isfinite(xv)):
            raise InputError("event values must be positive and finite")
        exceed = np.nonzero(xv > thr)[0]
        return cls(x=xv, threshold=thr, exceed_idx=exceed)

    @property
    def n_exceed(self) -> int:
        return len(self.exceed_idx)


def _anchored_blocks(hr: HrStructure, perm, b):
    """Covariance blocks for the permuted vector with the pivot first.

    Returns (gamma_perm, sigma) where sigma rows follow perm[1:].
    """
    gp = hr.gamma[np.ix_(perm, perm)]
    sig = HrStructure(gp).sigma(0)
    return gp, sig


def _conditional_parts(gp, sig, b, m):
    """Split the anchored covariance into exceeding and censored blocks."""
    ex = np.arange(0, b - 1)          # perm positions 1..b-1
    cn = np.arange(b - 1, m - 1)      # perm positions b..m-1
    s11 = sig[np.ix_(ex, ex)]
    s21 = sig[np.ix_(cn, ex)]
    s22 = sig[np.ix_(cn, cn)]
    return s11, s21, s22


def censored_density(
    hr: HrStructure,
    term: CensoredTerm,
    accuracy: float = 1e-6,
    budget: int = 1_000_000,
    seed: int = 0,
) -> float:
    """Likelihood of one event with below-threshold coordinates censored.

    The exceeding coordinates enter through the Gaussian density of their
    log ratios; the censored ones through the conditional Gaussian CDF at
    the thresholds. With all coordinates exceeding this is the full density
    of the exponent measure.
    """
    m = hr.m
    if term.x.shape != (m,):
        raise InputError(f"event must have length {m}")
    b = term.n_exceed
    if b == 0:
        raise DomainError("no exceeding coordinate; use below_threshold_mass")
    rest = np.setdiff1d(np.arange(m), term.exceed_idx)
    perm = np.concatenate([term.exceed_idx, rest])
    gp, sig = _anchored_blocks(hr, perm, b)
    x = term.x[perm]
    u = term.threshold[perm]
    logx = np.log(x)
    xt = logx[1:] - logx[0] + gp[1:, 0] / 2.0

    log_pref = -2.0 * logx[0] - np.sum(logx[1:b])
    s11, s21, s22 = _conditional_parts(gp, sig, b, m)
    xt_ex = xt[: b - 1]

    log_phi = 0.0
    mu_c = np.log(u[b:]) - logx[0] + gp[b:, 0] / 2.0
    sig_c = s22
    if b > 1:
        try:
            chol = np.linalg.cholesky(s11)
        except np.linalg.LinAlgError as exc:
            raise DomainError("exceedance covariance block is singular") from exc
        z = solve_triangular(chol, xt_ex, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        log_phi = -0.5 * (z @ z) - 0.5 * logdet - 0.5 * (b - 1) * _LOG_2PI
        if m > b:
            w = solve_triangular(chol, s21.T, lower=True)  # (b-1, m-b)
            mu_c = mu_c - w.T @ z
            sig_c = s22 - w.T @ w
            sig_c = 0.5 * (sig_c + sig_c.T)

    if m > b:
        spec = MvnSpec(m - b, np.zeros(m - b), sig_c, accuracy, budget)
        cdf = mvn_cdf(spec, mu_c, seed=seed).value
    else:
        cdf = 1.0
    return float(np.exp(log_pref + log_phi) * cdf)


def censored_log_density_batch(
    hr: HrStructure,
    events: np.ndarray,
    threshold,
    accuracy: float = 5e-4,
    budget: int = 60_000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Log censored densities for many events sharing one station tuple.

    Events are grouped by exceedance pattern so each group shares its
    covariance blocks, Cholesky factors and lattice rule. Returns
    ``(logf, is_extreme)`` where ``logf`` holds log densities for extreme
    events (and zero elsewhere) and ``is_extreme`` flags rows with at least
    one exceedance.
    """
    X = np.atleast_2d(np.asarray(events, dtype=float))
    n, m = X.shape
    if m != hr.m:
        raise InputError(f"events must have {hr.m} columns")
    thr = np.broadcast_to(np.asarray(threshold, dtype=float), (m,))
    exceed = X > thr[None, :]
    is_extreme = exceed.any(axis=1)
    logf = np.zeros(n)
    logX = np.log(X)
    log_u = np.log(thr)

    patterns: dict[bytes, list[int]] = {}
    for i in np.nonzero(is_extreme)[0]:
        patterns.setdefault(exceed[i].tobytes(), []).append(i)

    for key, rows in patterns.items():
        patt = np.frombuffer(key, dtype=bool)
        ex_idx = np.nonzero(patt)[0]
        b = len(ex_idx)
        rest = np.nonzero(~patt)[0]
        perm = np.concatenate([ex_idx, rest])
        gp, sig = _anchored_blocks(hr, perm, b)
        s11, s21, s22 = _conditional_parts(gp, sig, b, m)
        rows = np.asarray(rows)
        lx = logX[np.ix_(rows, perm)]
        xt = lx[:, 1:] - lx[:, :1] + gp[1:, 0][None, :] / 2.0
        pref = -2.0 * lx[:, 0] - lx[:, 1:b].sum(axis=1)

        mu_c = log_u[perm[b:]][None, :] - lx[:, :1] + gp[b:, 0][None, :] / 2.0
        sig_c = s22
        lphi = np.zeros(len(rows))
        if b > 1:
            try:
                chol = np.linalg.cholesky(s11)
            except np.linalg.LinAlgError as exc:
                raise DomainError("exceedance covariance block is singular") from exc
            z = solve_triangular(chol, xt[:, : b - 1].T, lower=True)  # (b-1, nev)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            lphi = -0.5 * np.sum(z * z, axis=0) - 0.5 * logdet - 0.5 * (b - 1) * _LOG_2PI
            if m > b:
                w = solve_triangular(chol, s21.T, lower=True)
                mu_c = mu_c - (w.T @ z).T
                sig_c = s22 - w.T @ w
                sig_c = 0.5 * (sig_c + sig_c.T)
        if m > b:
            vals, _ = mvn_cdf_batch(sig_c, mu_c, accuracy, budget, seed)
            with np.errstate(divide="ignore"):
                lcdf = np.log(vals)
        else:
            lcdf = 0.0
        logf[rows] = pref + lphi + lcdf
    return logf, is_extreme


def below_threshold_mass(
    hr: HrStructure,
    threshold,
    accuracy: float = 1e-5,
    budget: int = 500_000,
    seed: int = 0,
) -> float:
    """Probability-scale mass 1 - V(u) of an event entirely below threshold.

    Raises :class:`ThresholdError` when V(u) >= 1, i.e. the thresholds are
    too low for the tail approximation to define a probability.
    """
    thr = np.broadcast_to(np.asarray(threshold, dtype=float), (hr.m,))
    v = exponent_measure(hr, thr, accuracy=accuracy, budget=budget, seed=seed)
    if v >= 1.0:
        raise ThresholdError(
            f"V(u) = {v:.4f} >= 1: thresholds too low for the tail model; "
            "raise the per-station thresholds"
        )
    return 1.0 - v
