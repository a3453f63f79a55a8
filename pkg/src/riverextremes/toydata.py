"""Synthetic basin fixtures.

A handcrafted seven-segment, ten-station basin with known dependence
parameters and regional GEV margins lets the whole pipeline run without
external data; random dendritic basins support property tests. The daily
discharge generator overlays triangular storm pulses, whose peaks are
dependent draws from the network max-stable model, on a station baseflow.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

from .kernels import KernelParams, KernelVariant, StationSet, save_stations
from .margins import GevParams
from .network import CatchmentSummary, NetLocation, RiverNetwork, Segment, save_network
from .simulate import sample_hr, to_gev_margins
from .kernels import hr_structure

__all__ = [
    "toy_network",
    "toy_stations",
    "toy_kernel_params",
    "toy_regions",
    "toy_covariates",
    "toy_gev",
    "toy_panel_frame",
    "write_toy_basin",
    "random_basin",
]

TRUE_PARAMS = dict(
    lambda_riv=0.73, lambda_euc=1.93e-4, tau=839.0, alpha=1.75, beta=1.10, c=0.64
)
EVENTS_PER_SUMMER = 8
SUMMERS = 50


def toy_network() -> RiverNetwork:
    segs = [
        Segment(1, [(0, 0), (50, 10), (100, 20)], None, 1.0),
        Segment(2, [(100, 20), (160, 40), (220, 60)], 1, 0.7),
        Segment(3, [(100, 20), (125, -30), (150, -80)], 1, 0.3),
        Segment(4, [(220, 60), (280, 80), (340, 100)], 2, 0.55),
        Segment(5, [(220, 60), (240, 120), (260, 180)], 2, 0.45),
        Segment(6, [(340, 100), (385, 80), (430, 60)], 4, 0.6),
        Segment(7, [(340, 100), (365, 150), (390, 200)], 4, 0.4),
    ]
    return RiverNetwork(segs)


# (segment, offset, hydro position, area, mean altitude, mean slope)
_STATIONS = {
    "st01": (1, 20.0, (250.0, 70.0), 8000.0, 820.0, 0.12),
    "st02": (1, 90.0, (255.0, 78.0), 7400.0, 860.0, 0.13),
    "st03": (2, 30.0, (280.0, 88.0), 5200.0, 980.0, 0.15),
    "st04": (2, 110.0, (300.0, 97.0), 4300.0, 1050.0, 0.16),
    "st05": (3, 60.0, (135.0, -55.0), 900.0, 1800.0, 0.32),
    "st06": (4, 40.0, (345.0, 110.0), 2600.0, 1150.0, 0.18),
    "st07": (4, 115.0, (380.0, 118.0), 1900.0, 1300.0, 0.2),
    "st08": (5, 80.0, (255.0, 176.0), 1100.0, 900.0, 0.14),
    "st09": (6, 50.0, (420.0, 55.0), 800.0, 1500.0, 0.26),
    "st10": (7, 70.0, (385.0, 196.0), 700.0, 1050.0, 0.17),
}

_BASE_LATITUDE = 47.5
_KM_PER_DEG = 111.2


def toy_stations() -> StationSet:
    ids, summaries = [], []
    for sid, (seg, off, hydro, area, alt, slope) in _STATIONS.items():
        ids.append(sid)
        summaries.append(
            CatchmentSummary(
                location=NetLocation(seg, off),
                hydro_position=np.asarray(hydro, dtype=float),
                altitude_volume=area * alt,
                area=area,
                mean_altitude=alt,
                mean_slope=slope,
                centroid_latitude=_BASE_LATITUDE + hydro[1] / _KM_PER_DEG,
            )
        )
    return StationSet(ids=tuple(ids), summaries=tuple(summaries))


def toy_kernel_params(variant: KernelVariant = KernelVariant.FULL) -> KernelParams:
    return KernelParams(variant=variant, **TRUE_PARAMS).normalized()


def toy_regions() -> dict:
    return {
        sid: ("R1" if sid in ("st01", "st02", "st03", "st04", "st05") else "R2")
        for sid in _STATIONS
    }


_TRUE_ALPHA = {"R1": np.array([0.0, 0.45, 0.12, 0.0]), "R2": np.array([0.0, 0.42, 0.15, 0.0])}
_TRUE_BETA = {"R1": np.array([0.3, 0.45, 0.12, 0.0]), "R2": np.array([0.3, 0.42, 0.15, 0.0])}
_TRUE_XI = {"R1": 0.10, "R2": 0.25}


def toy_covariates(stations: StationSet | None = None) -> np.ndarray:
    stations = stations or toy_stations()
    return np.array([s.covariates() for s in stations.summaries])


def toy_gev() -> dict:
    """True per-station GEV laws implied by the regional coefficients."""
    stations = toy_stations()
    regions = toy_regions()
    out = {}
    for sid, summ in zip(stations.ids, stations.summaries):
        lp = np.log(summ.covariates())
        r = regions[sid]
        out[sid] = GevParams(
            loc=float(np.exp(_TRUE_BETA[r] @ lp)),
            scale=float(np.exp(_TRUE_ALPHA[r] @ lp)),
            shape=_TRUE_XI[r],
        )
    return out


_PULSE = np.array([0.25, 0.5, 0.8, 1.0, 0.7, 0.45, 0.3])


def toy_panel_frame(seed: int = 20_000) -> pd.DataFrame:
    """Daily summer discharges as a long table (station_id, date, value)."""
    rng = np.random.default_rng(seed)
    net = toy_network()
    stations = toy_stations()
    hr = hr_structure(toy_kernel_params(), net, stations)
    gev = toy_gev()
    m = len(stations)
    days = 92

    shapes = np.array([gev[s].shape for s in stations.ids])
    scales = np.array([gev[s].scale for s in stations.ids])
    locs = np.array([gev[s].loc for s in stations.ids])
    base = 0.35 * locs

    frames = []
    for year_idx in range(SUMMERS):
        year = 1960 + year_idx
        n_events = max(4, rng.poisson(EVENTS_PER_SUMMER))
        frechet = sample_hr(hr, n_events, seed=int(rng.integers(2**31)))
        peaks = to_gev_margins(frechet / EVENTS_PER_SUMMER, shapes, scales, locs)
        peaks = np.maximum(peaks, 1.2 * base[None, :])
        grid = base[None, :] * (1.0 + 0.08 * rng.standard_normal((days, m)))
        centres = rng.choice(np.arange(4, days - 4), size=n_events, replace=False)
        for ev in range(n_events):
            c = centres[ev]
            for off, frac in enumerate(_PULSE, start=-3):
                d = c + off
                if 0 <= d < days:
                    lvl = base + frac * (peaks[ev] - base)
                    grid[d] = np.maximum(grid[d], lvl)
        dates = pd.date_range(f"{year}-06-01", periods=days, freq="D")
        for j, sid in enumerate(stations.ids):
            frames.append(
                pd.DataFrame(
                    {
                        "station_id": sid,
                        "date": dates.strftime("%Y-%m-%d"),
                        "discharge_m3s": np.round(grid[:, j], 3),
                    }
                )
            )
    return pd.concat(frames, ignore_index=True)


def write_toy_basin(outdir, seed: int = 20_000) -> dict:
    """Write the bundled fixture files; returns the paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    net_path = out / "network.json"
    sta_path = out / "catchments.csv"
    dis_path = out / "discharges.csv"
    par_path = out / "true_params.json"
    save_network(toy_network(), net_path)
    save_stations(toy_stations(), sta_path)
    toy_panel_frame(seed).to_csv(dis_path, index=False)
    regions = toy_regions()
    gev = toy_gev()
    with open(par_path, "w") as fh:
        json.dump(
            {
                "kernel": {"variant": "full", **TRUE_PARAMS},
                "regions": regions,
                "gev": {
                    sid: {"loc": g.loc, "scale": g.scale, "shape": g.shape}
                    for sid, g in gev.items()
                },
                "seed": seed,
            },
            fh,
            indent=1,
        )
        fh.write("\n")
    return {
        "network": net_path,
        "catchments": sta_path,
        "discharges": dis_path,
        "true_params": par_path,
    }


def random_basin(n_segments: int, n_stations: int, seed: int = 0):
    """Random dendritic basin for property tests; returns (net, stations)."""
    rng = np.random.default_rng(seed)
    segs = []
    # each entry: (id, upstream end point, direction unit vector)
    tips = []

    def grow(seg_id, start, direction, downstream, weight):
        length = rng.uniform(30.0, 120.0)
        angle = math.atan2(direction[1], direction[0]) + rng.uniform(-0.5, 0.5)
        end = (
            start[0] + length * math.cos(angle),
            start[1] + length * math.sin(angle),
        )
        mid = (
            (start[0] + end[0]) / 2 + rng.uniform(-8, 8),
            (start[1] + end[1]) / 2 + rng.uniform(-8, 8),
        )
        segs.append(Segment(seg_id, [start, mid, end], downstream, weight))
        tips.append((seg_id, end, (math.cos(angle), math.sin(angle))))

    grow(1, (0.0, 0.0), (1.0, 0.2), None, 1.0)
    next_id = 2
    while next_id <= n_segments - 1:
        tip_idx = int(rng.integers(len(tips)))
        parent, point, direction = tips.pop(tip_idx)
        w = float(rng.uniform(0.15, 0.85))
        grow(next_id, point, (direction[0], direction[1] + 0.6), parent, w)
        grow(next_id + 1, point, (direction[0], direction[1] - 0.6), parent, 1.0 - w)
        next_id += 2
    net = RiverNetwork(segs)

    ids, summaries = [], []
    seg_ids = [s.id for s in net.segments]
    for i in range(n_stations):
        seg = net.segment(int(rng.choice(seg_ids)))
        off = float(rng.uniform(0.0, seg.arc_length))
        loc = NetLocation(seg.id, off)
        xy = net.point_at(loc)
        hydro = xy + rng.uniform(10.0, 80.0) * _unit(rng)
        area = float(rng.uniform(300.0, 9000.0))
        alt = float(rng.uniform(400.0, 2500.0))
        ids.append(f"s{i+1:02d}")
        summaries.append(
            CatchmentSummary(
                location=loc,
                hydro_position=hydro,
                altitude_volume=area * alt,
                area=area,
                mean_altitude=alt,
                mean_slope=float(rng.uniform(0.05, 0.4)),
                centroid_latitude=_BASE_LATITUDE + hydro[1] / _KM_PER_DEG,
            )
        )
    return net, StationSet(ids=tuple(ids), summaries=tuple(summaries))


def _unit(rng):
    a = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([math.cos(a), math.sin(a)])
