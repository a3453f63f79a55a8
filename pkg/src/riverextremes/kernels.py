"""Dependence kernels on the river network.

Four nested variogram-type kernels are supported, combining a
flow-connected component (linear-with-sill correlation along the river,
weighted by junction shares) with a fractal component on planar positions
(anisotropic via a rotation and dilation matrix). The kernel evaluated on
a station set yields the matrix used by all multivariate tail densities:
for an anchor station k, the conditional covariance has entries
``0.5 * (G[i,k] + G[j,k] - G[i,j])``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, InputError, KernelValidityError
from .network import (
    CatchmentSummary,
    FlowRelation,
    NetLocation,
    RiverNetwork,
    flow_relation,
    river_distance,
    weight_product,
)

__all__ = [
    "KernelVariant",
    "KernelParams",
    "StationSet",
    "NetworkGeometry",
    "HrStructure",
    "anisotropy_matrix",
    "river_kernel",
    "euclid_kernel",
    "kernel_value",
    "kernel_matrix",
    "hr_structure",
    "extremal_coefficient",
    "bivariate_cdf",
    "load_kernel_params",
    "save_kernel_params",
    "load_stations",
    "save_stations",
]

_PSD_RTOL = 1e-8


class KernelVariant(enum.Enum):
    """Kernel families, from plain Euclidean to the full network model."""

    EUCLID = "euclid"        # fractal variogram on raw station coordinates
    HYDRO = "hydro"          # fractal variogram on hydrological positions
    FULL = "full"            # river component + anisotropic hydrological term
    FULL_ISO = "full_iso"    # river component + isotropic hydrological term

    @property
    def uses_river(self) -> bool:
        return self in (KernelVariant.FULL, KernelVariant.FULL_ISO)

    @property
    def uses_anisotropy(self) -> bool:
        return self in (KernelVariant.EUCLID, KernelVariant.HYDRO, KernelVariant.FULL)

    @property
    def free_parameters(self) -> tuple[str, ...]:
        if self is KernelVariant.FULL:
            return ("lambda_riv", "lambda_euc", "tau", "alpha", "beta", "c")
        if self is KernelVariant.FULL_ISO:
            return ("lambda_riv", "lambda_euc", "tau", "alpha")
        return ("lambda_euc", "alpha", "beta", "c")


@dataclass(frozen=True)
class KernelParams:
    """Kernel variant plus its parameter vector.

    Parameters a variant does not use are stored at neutral values
    (``lambda_riv = 0``, ``tau = 1``, ``beta = pi/2``, ``c = 1``); the
    single scale of the EUCLID and HYDRO variants is ``lambda_euc``.
    """

    variant: KernelVariant = KernelVariant.FULL
    lambda_riv: float = 0.0
    lambda_euc: float = 1.0
    tau: float = 1.0          # km
    alpha: float = 1.0
    beta: float = math.pi / 2  # radians
    c: float = 1.0

    def __post_init__(self):
        if self.lambda_riv < 0.0 or self.lambda_euc < 0.0:
            raise DomainError("kernel weights must be nonnegative")
        if self.tau <= 0.0:
            raise DomainError("tau must be positive")
        if not 0.0 < self.alpha <= 2.0:
            raise DomainError("alpha must lie in (0, 2]")
        if not math.pi / 4 <= self.beta <= 3 * math.pi / 4:
            raise DomainError("beta must lie in [pi/4, 3pi/4]")
        if self.c <= 0.0:
            raise DomainError("c must be positive")

    def normalized(self) -> "KernelParams":
        """Force unused parameters to their neutral values."""
        out = self
        if not self.variant.uses_river:
            out = replace(out, lambda_riv=0.0, tau=1.0)
        if not self.variant.uses_anisotropy:
            out = replace(out, beta=math.pi / 2, c=1.0)
        return out

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.lambda_riv, self.lambda_euc, self.tau, self.alpha, self.beta, self.c]
        )


@dataclass(frozen=True)
class StationSet:
    """Gauging stations: unique ids plus one catchment summary each."""

    ids: tuple
    summaries: tuple

    def __post_init__(self):
        ids = tuple(self.ids)
        summaries = tuple(self.summaries)
        if len(ids) != len(summaries):
            raise InputError("ids and summaries must have equal length")
        if len(set(ids)) != len(ids):
            raise InputError("station ids must be unique")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "summaries", summaries)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def locations(self) -> tuple[NetLocation, ...]:
        return tuple(s.location for s in self.summaries)

    def index(self, station_id) -> int:
        try:
            return self.ids.index(station_id)
        except ValueError:
            raise InputError(f"unknown station id {station_id}") from None

    def subset(self, indices) -> "StationSet":
        return StationSet(
            ids=tuple(self.ids[i] for i in indices),
            summaries=tuple(self.summaries[i] for i in indices),
        )


def anisotropy_matrix(beta: float, c: float) -> np.ndarray:
    """Rotation and dilation matrix ``[[cos b, -sin b], [c sin b, c cos b]]``."""
    if not math.pi / 4 <= beta <= 3 * math.pi / 4:
        raise DomainError("beta must lie in [pi/4, 3pi/4]")
    if c <= 0.0:
        raise DomainError("c must be positive")
    return np.array(
        [
            [math.cos(beta), -math.sin(beta)],
            [c * math.sin(beta), c * math.cos(beta)],
        ]
    )


class NetworkGeometry:
    """Pairwise station geometry cached for fast kernel evaluation.

    Holds river distances, junction weight products, the flow-connectivity
    mask and coordinate differences; building it once makes a kernel matrix
    evaluation a handful of elementwise array operations.
    """

    def __init__(self, river_dist, weight_prod, connected, hydro_xy, raw_xy):
        self.river_dist = np.asarray(river_dist, dtype=float)
        self.weight_prod = np.asarray(weight_prod, dtype=float)
        self.connected = np.asarray(connected, dtype=bool)
        self.hydro_xy = np.asarray(hydro_xy, dtype=float)
        self.raw_xy = np.asarray(raw_xy, dtype=float)
        self.m = self.river_dist.shape[0]
        self.hydro_diff = self.hydro_xy[:, None, :] - self.hydro_xy[None, :, :]
        self.raw_diff = self.raw_xy[:, None, :] - self.raw_xy[None, :, :]

    @classmethod
    def from_stations(cls, net: RiverNetwork, stations: StationSet) -> "NetworkGeometry":
        m = len(stations)
        locs = stations.locations
        d = np.zeros((m, m))
        w = np.ones((m, m))
        conn = np.eye(m, dtype=bool)
        for i in range(m):
            for j in range(i + 1, m):
                rel, _ = flow_relation(net, locs[i], locs[j])
                d[i, j] = d[j, i] = river_distance(net, locs[i], locs[j])
                if rel is not FlowRelation.UNCONNECTED:
                    conn[i, j] = conn[j, i] = True
                    w[i, j] = w[j, i] = weight_product(net, locs[i], locs[j])
        hydro = np.array([s.hydro_position for s in stations.summaries])
        raw = np.array([net.point_at(loc) for loc in locs])
        return cls(d, w, conn, hydro, raw)


def _river_part(params: KernelParams, dist, wprod, connected):
    sill = np.where(connected, 1.0 - wprod * np.clip(1.0 - dist / params.tau, 0.0, None), 1.0)
    return sill


def _euclid_part(params: KernelParams, diff):
    if params.variant.uses_anisotropy:
        rot = anisotropy_matrix(params.beta, params.c)
        transformed = diff @ rot.T
    else:
        transformed = diff
    norms = np.sqrt(np.sum(transformed**2, axis=-1))
    return norms**params.alpha


def river_kernel(
    params: KernelParams, net: RiverNetwork, s: NetLocation, t: NetLocation
) -> float:
    """Flow-connected dependence component, in [0, 1].

    One minus the junction-weighted linear-with-sill correlation along the
    river for flow-connected pairs; one for unconnected pairs.
    """
    if not params.variant.uses_river:
        raise DomainError(f"variant {params.variant.value} has no river component")
    rel, _ = flow_relation(net, s, t)
    if rel is FlowRelation.UNCONNECTED:
        return 1.0
    d = river_distance(net, s, t)
    w = weight_product(net, s, t)
    return float(1.0 - w * max(1.0 - d / params.tau, 0.0))


def euclid_kernel(
    params: KernelParams,
    a: CatchmentSummary,
    b: CatchmentSummary,
    net: RiverNetwork | None = None,
) -> float:
    """Fractal variogram between two stations' planar positions.

    Hydrological positions are used except for the EUCLID variant, which
    works on the raw station coordinates and therefore needs ``net``.
    """
    if params.variant is KernelVariant.EUCLID:
        if net is None:
            raise InputError("EUCLID variant needs the network for raw coordinates")
        pa, pb = net.point_at(a.location), net.point_at(b.location)
    else:
        pa, pb = a.hydro_position, b.hydro_position
    return float(_euclid_part(params, np.asarray(pa) - np.asarray(pb)))


def kernel_value(
    params: KernelParams,
    net: RiverNetwork,
    a: CatchmentSummary,
    b: CatchmentSummary,
) -> float:
    """Full dependence kernel for one pair of stations."""
    params = params.normalized()
    euc = euclid_kernel(params, a, b, net)
    if not params.variant.uses_river:
        return params.lambda_euc * euc
    riv = river_kernel(params, net, a.location, b.location)
    return params.lambda_riv * riv + params.lambda_euc * euc


def kernel_matrix(
    params: KernelParams,
    geometry: NetworkGeometry,
) -> np.ndarray:
    """Kernel evaluated on all station pairs; symmetric with zero diagonal."""
    params = params.normalized()
    if params.variant is KernelVariant.EUCLID:
        gam = params.lambda_euc * _euclid_part(params, geometry.raw_diff)
    else:
        gam = params.lambda_euc * _euclid_part(params, geometry.hydro_diff)
        if params.variant.uses_river:
            gam = gam + params.lambda_riv * _river_part(
                params, geometry.river_dist, geometry.weight_prod, geometry.connected
            )
    np.fill_diagonal(gam, 0.0)
    return gam


class HrStructure:
    """Kernel matrix of a station tuple plus its anchored covariances.

    ``sigma(k)`` drops station ``k`` and returns the (m-1)x(m-1) covariance
    with entries ``0.5 * (G[i,k] + G[j,k] - G[i,j])``, validated to be
    positive semi-definite (eigenvalues above ``-1e-8 * trace``, negatives
    clipped to zero).
    """

    def __init__(self, gamma: np.ndarray):
        g = np.asarray(gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise InputError("kernel matrix must be square")
        if not np.allclose(g, g.T, atol=1e-12):
            raise InputError("kernel matrix must be symmetric")
        if np.any(np.abs(np.diag(g)) > 1e-12) or np.any(g < -1e-12):
            raise InputError("kernel matrix needs zero diagonal, nonnegative entries")
        self.gamma = 0.5 * (g + g.T)
        self.m = g.shape[0]
        self._sigma_cache: dict[int, np.ndarray] = {}

    def anchor_indices(self, anchor: int) -> np.ndarray:
        """Station indices kept by ``sigma(anchor)``, in order."""
        return np.array([i for i in range(self.m) if i != anchor])

    def sigma(self, anchor: int) -> np.ndarray:
        if not 0 <= anchor < self.m:
            raise InputError(f"anchor {anchor} out of range for m={self.m}")
        cached = self._sigma_cache.get(anchor)
        if cached is not None:
            return cached
        idx = self.anchor_indices(anchor)
        g = self.gamma
        sig = 0.5 * (
            g[idx, anchor][:, None] + g[idx, anchor][None, :] - g[np.ix_(idx, idx)]
        )
        sig = 0.5 * (sig + sig.T)
        if sig.size:
            eigval, eigvec = np.linalg.eigh(sig)
            floor = -_PSD_RTOL * max(np.trace(sig), 1e-300)
            if eigval[0] < floor:
                raise KernelValidityError(
                    f"anchored covariance not PSD: min eigenvalue {eigval[0]:.3e} "
                    f"below tolerance {floor:.3e}"
                )
            if eigval[0] < 0.0:
                sig = (eigvec * np.clip(eigval, 0.0, None)) @ eigvec.T
                sig = 0.5 * (sig + sig.T)
        self._sigma_cache[anchor] = sig
        return sig

    def subset(self, indices) -> "HrStructure":
        idx = np.asarray(indices, dtype=int)
        return HrStructure(self.gamma[np.ix_(idx, idx)])


def hr_structure(
    params: KernelParams,
    net: RiverNetwork,
    stations: StationSet,
    geometry: NetworkGeometry | None = None,
) -> HrStructure:
    """Evaluate the kernel on a station set and wrap it for density work."""
    if len(stations) < 1:
        raise InputError("need at least one station")
    if geometry is None:
        geometry = NetworkGeometry.from_stations(net, stations)
    return HrStructure(kernel_matrix(params, geometry))


def extremal_coefficient(gamma_value):
    """Pairwise extremal coefficient ``2 Phi(sqrt(G)/2)`` in [1, 2]."""
    g = np.asarray(gamma_value, dtype=float)
    if np.any(g < 0):
        raise DomainError("kernel values must be nonnegative")
    return 2.0 * ndtr(np.sqrt(g) / 2.0)


def bivariate_cdf(gamma_value: float, x: float, y: float) -> float:
    """Joint distribution function of a dependent Frechet pair.

    ``gamma_value = 0`` degenerates to complete dependence and infinite
    values to independence.
    """
    if x <= 0.0 or y <= 0.0:
        raise DomainError("arguments must be positive")
    if gamma_value < 0.0:
        raise DomainError("kernel value must be nonnegative")
    if gamma_value == 0.0:
        return math.exp(-1.0 / min(x, y))
    if math.isinf(gamma_value):
        return math.exp(-1.0 / x - 1.0 / y)
    root = math.sqrt(gamma_value)
    lr = math.log(y / x)
    v = ndtr(root / 2.0 + lr / root) / x + ndtr(root / 2.0 - lr / root) / y
    return math.exp(-v)


# -- file formats -----------------------------------------------------------

_MODEL_KEYS = ("variant", "lambda_riv", "lambda_euc", "tau_km", "alpha", "beta_rad", "c")


def save_kernel_params(params: KernelParams, path, extra: dict | None = None) -> None:
    """Write a dependence-model file (JSON with the documented field names)."""
    doc = {
        "variant": params.variant.value,
        "lambda_riv": params.lambda_riv,
        "lambda_euc": params.lambda_euc,
        "tau_km": params.tau,
        "alpha": params.alpha,
        "beta_rad": params.beta,
        "c": params.c,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_kernel_params(path) -> tuple[KernelParams, dict]:
    """Read a dependence-model file; returns the params and any extra fields."""
    with open(path) as fh:
        doc = json.load(fh)
    missing = [k for k in _MODEL_KEYS if k not in doc]
    if missing:
        raise InputError(f"model file {path} lacks fields {missing}")
    try:
        params = KernelParams(
            variant=KernelVariant(doc["variant"]),
            lambda_riv=float(doc["lambda_riv"]),
            lambda_euc=float(doc["lambda_euc"]),
            tau=float(doc["tau_km"]),
            alpha=float(doc["alpha"]),
            beta=float(doc["beta_rad"]),
            c=float(doc["c"]),
        )
    except ValueError as exc:
        raise InputError(f"model file {path}: {exc}") from exc
    extra = {k: v for k, v in doc.items() if k not in _MODEL_KEYS}
    return params, extra


def save_stations(stations: StationSet, path) -> None:
    """Write a station/catchment file (CSV, one row per station)."""
    import pandas as pd

    rows = []
    for sid, summ in zip(stations.ids, stations.summaries):
        rows.append(
            {
                "station_id": sid,
                "segment_id": summ.location.segment,
                "offset_km": summ.location.offset,
                "hydro_x_km": summ.hydro_position[0],
                "hydro_y_km": summ.hydro_position[1],
                "altitude_volume_km2m": summ.altitude_volume,
                "area_km2": summ.area,
                "mean_altitude_m": summ.mean_altitude,
                "mean_slope": summ.mean_slope,
                "centroid_latitude_deg": summ.centroid_latitude,
            }
        )
    pd.DataFrame(rows).to_csv(path, index=False)


def load_stations(path) -> StationSet:
    """Read a station/catchment file written by :func:`save_stations`."""
    import pandas as pd

    try:
        df = pd.read_csv(path)
    except Exception as exc:
        raise InputError(f"cannot read station file {path}: {exc}") from exc
    needed = {
        "station_id",
        "segment_id",
        "offset_km",
        "hydro_x_km",
        "hydro_y_km",
        "altitude_volume_km2m",
        "area_km2",
        "mean_altitude_m",
        "mean_slope",
        "centroid_latitude_deg",
    }
    missing = needed - set(df.columns)
    if missing:
        raise InputError(f"station file {path} lacks columns {sorted(missing)}")
    ids, summaries = [], []
    for _, row in df.iterrows():
        ids.append(row["station_id"])
        summaries.append(
            CatchmentSummary(
                location=NetLocation(int(row["segment_id"]), float(row["offset_km"])),
                hydro_position=np.array([row["hydro_x_km"], row["hydro_y_km"]]),
                altitude_volume=float(row["altitude_volume_km2m"]),
                area=float(row["area_km2"]),
                mean_altitude=float(row["mean_altitude_m"]),
                mean_slope=float(row["mean_slope"]),
                centroid_latitude=float(row["centroid_latitude_deg"]),
            )
        )
    return StationSet(ids=tuple(ids), summaries=tuple(summaries))
