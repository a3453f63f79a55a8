"""Univariate tail models: GEV transforms, threshold likelihoods and
regional covariate models.

Exceedances of a high threshold are fitted with the point-process
likelihood whose parameters coincide with the generalized extreme value
law of yearly maxima. A regional model ties the location and scale of
several stations to log-linear functions of catchment covariates with a
shared regional shape, fitted by an independence likelihood.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2

from .errors import ConvergenceError, EstimationError, InputError

__all__ = [
    "GevParams",
    "RegionalModel",
    "MarginalModel",
    "FitStationResult",
    "frechet_transform",
    "tail_prob",
    "ppp_nll",
    "ppp_nll_grad",
    "fit_station",
    "fit_regional",
    "return_level",
    "lr_test",
    "save_marginal_model",
    "load_marginal_model",
]

_XI_TINY = 1e-6


@dataclass(frozen=True)
class GevParams:
    """Location, scale and shape of a yearly-maximum GEV law."""

    loc: float
    scale: float
    shape: float

    def __post_init__(self):
        if not self.scale > 0.0:
            raise InputError("scale must be positive")


def _log1p_xz_over_xi(xi, z):
    """log(1 + xi z) / xi with a series continuation through xi = 0."""
    z = np.asarray(z, dtype=float)
    if abs(xi) < _XI_TINY:
        return z - xi * z**2 / 2.0 + xi**2 * z**3 / 3.0
    return np.log1p(xi * z) / xi


def frechet_transform(gev: GevParams, x, standardized: bool = False):
    """Map a value to the standard Frechet scale: ``(1 + xi z)_+^(1/xi)``.

    ``z`` is the standardized value ``(x - loc)/scale`` unless the input is
    already standardized. Arguments below the lower endpoint map to zero.
    """
    z = np.asarray(x, dtype=float)
    if not standardized:
        z = (z - gev.loc) / gev.scale
    xi = gev.shape
    arg = 1.0 + xi * z
    with np.errstate(over="ignore"):
        out = np.where(arg > 0.0, np.exp(_log1p_xz_over_xi(xi, np.where(arg > 0.0, z, 0.0))), 0.0)
    return out if out.ndim else float(out)


def tail_prob(gev: GevParams, u, n_per_year_equivalent: float):
    """Tail probability ``P(X > u)`` per observation unit.

    ``n_per_year_equivalent`` is the number of observation units per year
    (declustered events per year in the joint model).
    """
    if n_per_year_equivalent <= 0.0:
        raise InputError("rate must be positive")
    z = (np.asarray(u, dtype=float) - gev.loc) / gev.scale
    xi = gev.shape
    arg = 1.0 + xi * z
    with np.errstate(over="ignore", divide="ignore"):
        lam = np.where(arg > 0.0, np.exp(-_log1p_xz_over_xi(xi, np.where(arg > 0.0, z, 0.0))), np.where(xi < 0.0, 0.0, np.inf))
    out = np.clip(lam / n_per_year_equivalent, 0.0, 1.0)
    return out if out.ndim else float(out)


def ppp_nll(gev: GevParams, exceedances, q: float, n_years: float) -> float:
    """Negative log point-process likelihood of threshold exceedances.

    Support violations return ``inf`` so optimizers can walk the boundary.
    """
    if n_years <= 0.0:
        raise InputError("n_years must be positive")
    x = np.asarray(exceedances, dtype=float)
    a, b, xi = gev.scale, gev.loc, gev.shape
    zq = (q - b) / a
    tq = 1.0 + xi * zq
    if tq <= 0.0:
        if xi < 0.0 and x.size == 0:
            rate_term = 0.0
        else:
            return np.inf
    else:
        rate_term = n_years * math.exp(-_log1p_xz_over_xi(xi, zq))
    if x.size == 0:
        return float(rate_term)
    z = (x - b) / a
    t = 1.0 + xi * z
    if np.any(t <= 0.0):
        return np.inf
    dens = x.size * math.log(a) + (1.0 + xi) * np.sum(_log1p_xz_over_xi(xi, z))
    return float(rate_term + dens)


def ppp_nll_grad(gev: GevParams, exceedances, q: float, n_years: float) -> np.ndarray:
    """Gradient of :func:`ppp_nll` with respect to (scale, loc, shape)."""
    x = np.asarray(exceedances, dtype=float)
    a, b, xi = gev.scale, gev.loc, gev.shape
    zq = (q - b) / a
    tq = 1.0 + xi * zq
    if tq <= 0.0:
        raise InputError("gradient undefined outside the support")
    z = (x - b) / a
    t = 1.0 + xi * z
    if np.any(t <= 0.0):
        raise InputError("gradient undefined outside the support")
    lam = math.exp(-_log1p_xz_over_xi(xi, zq))
    if abs(xi) < _XI_TINY:
        d_a = n_years * lam * zq / a + np.sum(1.0 - z) / a
        d_b = -x.size / a + n_years * lam / a
        d_xi = n_years * lam * zq**2 / 2.0 + np.sum(z - z**2 / 2.0)
    else:
        pw = lam / tq  # tq^(-1/xi - 1)
        d_a = n_years * pw * zq / a + np.sum(1.0 / a - (1.0 + xi) * z / (a * t))
        d_b = n_years * pw / a - (1.0 + xi) * np.sum(1.0 / t) / a
        d_xi_rate = n_years * lam * (math.log(tq) / xi**2 - zq / (xi * tq))
        d_xi = d_xi_rate + np.sum(-np.log(t) / xi**2 + (1.0 / xi + 1.0) * z / t)
    return np.array([d_a, d_b, d_xi])


def _num_hessian(f, x, rel_step=1e-4):
    x = np.asarray(x, dtype=float)
    n = len(x)
    h = rel_step * np.maximum(np.abs(x), 1.0)
    hess = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n); ei[i] = h[i]
            ej = np.zeros(n); ej[j] = h[j]
            if i == j:
                val = (f(x + ei) - 2.0 * f(x) + f(x - ei)) / h[i] ** 2
            else:
                val = (
                    f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
                ) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    return hess


@dataclass(frozen=True)
class FitStationResult:
    params: GevParams
    se: np.ndarray            # standard errors of (scale, loc, shape)
    nll: float
    n_exceedances: int
    optimizer: object = field(repr=False, default=None)


def fit_station(exceedances, q: float, n_years: float, max_evals: int = 4000) -> FitStationResult:
    """Fit the point-process GEV model to one station's exceedances.

    Simplex search restarted from moment-based initial values; standard
    errors from the numerically differentiated observed information.
    """
    x = np.asarray(exceedances, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise EstimationError("need at least two exceedances")
    if np.all(x <= q):
        raise InputError("exceedances must lie above the threshold")
    if np.ptp(x) == 0.0:
        raise EstimationError("exceedances are all equal; tail scale is degenerate")

    rate = x.size / n_years
    sd = float(np.std(x, ddof=1))
    starts = []
    for xi0 in (-0.1, 0.01, 0.15, 0.3):
        a0 = max(sd * math.sqrt(6.0) / math.pi, 1e-8)
        # location from inverting the exceedance rate at the threshold
        if abs(xi0) < _XI_TINY:
            b0 = q + a0 * math.log(rate)
        else:
            b0 = q - a0 * (rate ** (-xi0) - 1.0) / xi0
        starts.append(np.array([a0, b0, xi0]))

    def objective(theta):
        a, b, xi = theta
        if a <= 0.0 or abs(xi) > 5.0:
            return np.inf
        return ppp_nll(GevParams(b, a, xi), x, q, n_years)

    best = None
    for s in starts:
        res = minimize(
            objective, s, method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": 1e-8, "fatol": 1e-10, "adaptive": True},
        )
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise ConvergenceError("station fit did not converge", trace=best)

    a, b, xi = best.x
    hess = _num_hessian(objective, best.x)
    se = np.full(3, np.nan)
    try:
        cov = np.linalg.inv(hess)
        diag = np.diag(cov)
        if np.all(diag > 0.0):
            se = np.sqrt(diag)
    except np.linalg.LinAlgError:
        pass
    return FitStationResult(
        params=GevParams(loc=b, scale=a, shape=xi),
        se=se,
        nll=float(best.fun),
        n_exceedances=int(x.size),
        optimizer=best,
    )


@dataclass(frozen=True)
class RegionalModel:
    """Log-linear regional tail model on positive covariates.

    For station j in region i with covariates P_j:
    ``log a_j = alpha^(i) . log P_j``, ``log b_j = beta^(i) . log P_j`` and
    ``xi_j = xi^(i)``.
    """

    covariate_names: tuple
    region_of: dict              # station id -> region label
    alpha: dict                  # region -> coefficient vector for log scale
    beta: dict                   # region -> coefficient vector for log location
    xi: dict                     # region -> shape
    se: dict = field(default_factory=dict)   # region -> SEs of (alpha, beta, xi)
    nll: float = float("nan")

    def predict(self, station_id, covariates) -> GevParams:
        region = self.region_of.get(station_id)
        if region is None:
            raise InputError(f"station {station_id} has no region assignment")
        return self.predict_region(region, covariates)

    def predict_region(self, region, covariates) -> GevParams:
        lp = np.log(np.asarray(covariates, dtype=float))
        if np.any(~np.isfinite(lp)):
            raise InputError("covariates must be positive")
        a = float(np.exp(self.alpha[region] @ lp))
        b = float(np.exp(self.beta[region] @ lp))
        return GevParams(loc=b, scale=a, shape=float(self.xi[region]))


def _check_design(logp, names):
    rank = np.linalg.matrix_rank(logp)
    if rank < logp.shape[1]:
        # point at the most nearly dependent columns via QR
        _, r = np.linalg.qr(logp)
        diag = np.abs(np.diag(r))
        bad = [names[i] for i in np.nonzero(diag < 1e-10 * max(diag.max(), 1.0))[0]]
        raise InputError(
            f"covariate design is rank deficient (rank {rank} < {logp.shape[1]}); "
            f"nearly collinear columns: {bad or list(names)}"
        )


def fit_regional(
    values: np.ndarray,
    station_ids,
    covariates: np.ndarray,
    regions,
    thresholds,
    n_years,
    covariate_names=None,
    max_evals: int = 40_000,
) -> RegionalModel:
    """Fit the regional log-linear model by independence likelihood.

    ``values`` is the event matrix (events x stations, NaN for missing),
    ``covariates`` the positive station covariates (stations x K). Regions
    are fitted separately; initial values come from per-station fits
    regressed on the log covariates.
    """
    vals = np.atleast_2d(np.asarray(values, dtype=float))
    m = vals.shape[1]
    station_ids = list(station_ids)
    P = np.atleast_2d(np.asarray(covariates, dtype=float))
    if len(station_ids) != m or P.shape[0] != m:
        raise InputError("station ids, covariates and event columns must align")
    if np.any(P <= 0.0):
        raise InputError("covariates must be positive")
    regions = list(regions)
    thresholds = np.asarray(thresholds, dtype=float)
    n_years_arr = np.broadcast_to(np.asarray(n_years, dtype=float), (m,))
    K = P.shape[1]
    names = tuple(covariate_names) if covariate_names else tuple(f"P{k+1}" for k in range(K))
    logp = np.log(P)

    exceed = []
    for j in range(m):
        col = vals[:, j]
        exceed.append(col[np.isfinite(col) & (col > thresholds[j])])

    model_alpha, model_beta, model_xi, model_se = {}, {}, {}, {}
    total_nll = 0.0
    for region in dict.fromkeys(regions):
        idx = [j for j in range(m) if regions[j] == region]
        lp_r = logp[idx]
        _check_design(lp_r, names)

        station_fits = [fit_station(exceed[j], thresholds[j], n_years_arr[j]) for j in idx]
        la = np.log([f.params.scale for f in station_fits])
        lb_vals = np.array([f.params.loc for f in station_fits])
        if np.any(lb_vals <= 0.0):
            raise EstimationError(
                f"region {region}: station location estimates must be positive "
                "for the log-linear model"
            )
        alpha0 = np.linalg.lstsq(lp_r, la, rcond=None)[0]
        beta0 = np.linalg.lstsq(lp_r, np.log(lb_vals), rcond=None)[0]
        xi0 = float(np.mean([f.params.shape for f in station_fits]))
        theta0 = np.concatenate([alpha0, beta0, [xi0]])

        def region_nll(theta, idx=idx, lp_r=lp_r):
            alpha, beta, xi = theta[:K], theta[K:2 * K], theta[-1]
            if abs(xi) > 5.0:
                return np.inf
            total = 0.0
            with np.errstate(over="ignore"):
                a_all = np.exp(lp_r @ alpha)
                b_all = np.exp(lp_r @ beta)
            if np.any(~np.isfinite(a_all)) or np.any(~np.isfinite(b_all)) or np.any(a_all <= 0.0):
                return np.inf
            for pos, j in enumerate(idx):
                total += ppp_nll(
                    GevParams(float(b_all[pos]), float(a_all[pos]), float(xi)),
                    exceed[j], float(thresholds[j]), float(n_years_arr[j]),
                )
                if not np.isfinite(total):
                    return np.inf
            return total

        res = minimize(
            region_nll, theta0, method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": 1e-9, "fatol": 1e-10, "adaptive": True},
        )
        if not np.isfinite(res.fun):
            raise ConvergenceError(f"regional fit failed for region {region}", trace=res)
        theta = res.x
        model_alpha[region] = theta[:K].copy()
        model_beta[region] = theta[K:2 * K].copy()
        model_xi[region] = float(theta[-1])
        total_nll += float(res.fun)
        try:
            cov = np.linalg.inv(_num_hessian(region_nll, theta))
            diag = np.diag(cov)
            model_se[region] = np.sqrt(np.where(diag > 0.0, diag, np.nan))
        except np.linalg.LinAlgError:
            model_se[region] = np.full(2 * K + 1, np.nan)

    return RegionalModel(
        covariate_names=names,
        region_of={sid: regions[j] for j, sid in enumerate(station_ids)},
        alpha=model_alpha,
        beta=model_beta,
        xi=model_xi,
        se=model_se,
        nll=total_nll,
    )


def return_level(gev: GevParams, t_years: float) -> float:
    """Level exceeded once per ``t_years`` on average by yearly maxima."""
    if t_years <= 1.0:
        raise InputError("return period must exceed one year")
    y = -math.log1p(-1.0 / t_years)
    xi = gev.shape
    if abs(xi) < _XI_TINY:
        return float(gev.loc - gev.scale * math.log(y))
    return float(gev.loc + gev.scale * (y**-xi - 1.0) / xi)


def lr_test(nll_restricted: float, nll_full: float, df: int):
    """Likelihood ratio statistic and p-value for nested tail models."""
    if df < 1:
        raise InputError("df must be at least one")
    stat = 2.0 * (nll_restricted - nll_full)
    return float(stat), float(chi2.sf(max(stat, 0.0), df))


# -- marginal model container and file format --------------------------------


@dataclass
class MarginalModel:
    """Per-station GEV laws plus optional regional structure and metadata."""

    station_ids: list
    gev: dict                    # station id -> GevParams
    thresholds: dict             # station id -> fitting threshold
    n_years: dict                # station id -> years of record
    regional: RegionalModel | None = None

    def params_for(self, station_id) -> GevParams:
        try:
            return self.gev[station_id]
        except KeyError:
            raise InputError(f"no marginal model for station {station_id}") from None


def save_marginal_model(model: MarginalModel, path) -> None:
    doc = {
        "stations": [
            {
                "station_id": sid,
                "loc": model.gev[sid].loc,
                "scale": model.gev[sid].scale,
                "shape": model.gev[sid].shape,
                "threshold": model.thresholds.get(sid),
                "n_years": model.n_years.get(sid),
            }
            for sid in model.station_ids
        ]
    }
    if model.regional is not None:
        reg = model.regional
        doc["regional"] = {
            "covariate_names": list(reg.covariate_names),
            "region_of": {str(k): v for k, v in reg.region_of.items()},
            "regions": [
                {
                    "region": r,
                    "alpha": np.asarray(reg.alpha[r]).tolist(),
                    "beta": np.asarray(reg.beta[r]).tolist(),
                    "xi": reg.xi[r],
                }
                for r in reg.alpha
            ],
            "nll": reg.nll,
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_marginal_model(path) -> MarginalModel:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        ids, gev, thr, ny = [], {}, {}, {}
        for rec in doc["stations"]:
            sid = rec["station_id"]
            ids.append(sid)
            gev[sid] = GevParams(rec["loc"], rec["scale"], rec["shape"])
            thr[sid] = rec.get("threshold")
            ny[sid] = rec.get("n_years")
        regional = None
        if "regional" in doc:
            r = doc["regional"]
            regional = RegionalModel(
                covariate_names=tuple(r["covariate_names"]),
                region_of=dict(r["region_of"]),
                alpha={rec["region"]: np.asarray(rec["alpha"]) for rec in r["regions"]},
                beta={rec["region"]: np.asarray(rec["beta"]) for rec in r["regions"]},
                xi={rec["region"]: rec["xi"] for rec in r["regions"]},
                nll=r.get("nll", float("nan")),
            )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed marginal model file {path}: {exc}") from exc
    return MarginalModel(ids, gev, thr, ny, regional)
