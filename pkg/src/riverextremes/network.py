"""Dendritic river network embedded in the plane.

The network is a finite collection of curve segments. Each segment is a
planar polyline ordered from its downstream end to its upstream end; a
location on the network is a ``(segment, offset)`` pair with the offset in
km measured from the downstream end. Every segment except the single root
drains into a downstream segment, and carries a junction weight: the
fraction of flow this branch contributes at the junction where it joins
its downstream segment. Weights of all branches meeting at a junction sum
to one.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError

__all__ = [
    "Segment",
    "NetLocation",
    "CatchmentSummary",
    "RiverNetwork",
    "FlowRelation",
    "flow_relation",
    "river_distance",
    "weight_product",
    "junction_weights_from_altitude",
    "catchment_summary",
    "snap_to_network",
    "load_network",
    "save_network",
]

_REL_TOL = 1e-9


def _polyline_length(polyline: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(polyline, axis=0).T)))


@dataclass(frozen=True)
class Segment:
    """One river segment: a polyline from downstream end to upstream end."""

    id: int
    polyline: np.ndarray            # (k, 2) planar coordinates, km
    downstream: int | None          # id of the receiving segment, None for root
    junction_weight: float = 1.0    # share of this branch at its downstream junction
    arc_length: float = field(default=0.0)

    def __post_init__(self):
        poly = np.asarray(self.polyline, dtype=float)
        if poly.ndim != 2 or poly.shape[0] < 2 or poly.shape[1] != 2:
            raise InputError(f"segment {self.id}: polyline must be (k>=2, 2)")
        object.__setattr__(self, "polyline", poly)
        length = _polyline_length(poly)
        if length <= 0.0:
            raise InputError(f"segment {self.id}: zero-length polyline")
        if self.arc_length:
            if abs(self.arc_length - length) > _REL_TOL * max(1.0, length):
                raise InputError(
                    f"segment {self.id}: declared arc length {self.arc_length} "
                    f"does not match polyline length {length}"
                )
        object.__setattr__(self, "arc_length", length)
        if not 0.0 < self.junction_weight <= 1.0:
            raise InputError(
                f"segment {self.id}: junction weight must lie in (0, 1]"
            )


@dataclass(frozen=True)
class NetLocation:
    """A point on the network: km offset from the downstream end of a segment."""

    segment: int
    offset: float

    def __post_init__(self):
        if self.offset < 0.0:
            raise InputError("offset must be nonnegative")


@dataclass(frozen=True)
class CatchmentSummary:
    """Summary of the sub-catchment draining through a network location."""

    location: NetLocation
    hydro_position: np.ndarray      # altitude-weighted centroid, km
    altitude_volume: float          # integrated altitude over the catchment, km^2 m
    area: float                     # km^2
    mean_altitude: float            # m
    mean_slope: float               # dimensionless
    centroid_latitude: float        # degrees

    def __post_init__(self):
        object.__setattr__(
            self, "hydro_position", np.asarray(self.hydro_position, dtype=float)
        )
        if self.altitude_volume <= 0.0:
            raise InputError("altitude volume must be positive")

    def covariates(self) -> np.ndarray:
        """Covariate vector (centroid latitude, area, mean altitude, mean slope)."""
        return np.array(
            [self.centroid_latitude, self.area, self.mean_altitude, self.mean_slope]
        )


class FlowRelation(enum.Enum):
    SAME_SEGMENT = "same_segment"
    CONNECTED_UPSTREAM = "connected_upstream"      # second location lies upstream
    CONNECTED_DOWNSTREAM = "connected_downstream"  # second location lies downstream
    UNCONNECTED = "unconnected"


class RiverNetwork:
    """Immutable dendritic network; all queries are pure.

    Construction validates the tree: exactly one root, no cycles, and the
    junction weights of the branches merging at each junction sum to one.
    """

    def __init__(self, segments):
        segs = list(segments)
        if not segs:
            raise InputError("network needs at least one segment")
        self._by_id = {}
        for s in segs:
            if s.id in self._by_id:
                raise InputError(f"duplicate segment id {s.id}")
            self._by_id[s.id] = s
        roots = [s.id for s in segs if s.downstream is None]
        if len(roots) != 1:
            raise InputError(f"expected exactly one root segment, found {len(roots)}")
        self.root = roots[0]
        for s in segs:
            if s.downstream is not None and s.downstream not in self._by_id:
                raise InputError(
                    f"segment {s.id} drains into unknown segment {s.downstream}"
                )

        # Downstream id chains; also detects cycles.
        self._downstream_sets: dict[int, frozenset[int]] = {}
        self._depth_base: dict[int, float] = {}
        for s in segs:
            chain = [s.id]
            seen = {s.id}
            cur = s
            while cur.downstream is not None:
                cur = self._by_id[cur.downstream]
                if cur.id in seen:
                    raise InputError(f"cycle through segment {cur.id}")
                chain.append(cur.id)
                seen.add(cur.id)
            self._downstream_sets[s.id] = frozenset(chain)
            self._depth_base[s.id] = sum(
                self._by_id[k].arc_length for k in chain[1:]
            )

        # Junction weights must sum to one over the branches joining each junction.
        merging: dict[int, list[Segment]] = {}
        for s in segs:
            if s.downstream is not None:
                merging.setdefault(s.downstream, []).append(s)
        for down, branches in merging.items():
            total = sum(b.junction_weight for b in branches)
            if abs(total - 1.0) > 1e-9 * len(branches):
                raise InputError(
                    f"junction into segment {down}: branch weights sum to {total}"
                )
        self.segments = tuple(sorted(segs, key=lambda s: s.id))

    def segment(self, seg_id: int) -> Segment:
        try:
            return self._by_id[seg_id]
        except KeyError:
            raise InputError(f"unknown segment id {seg_id}") from None

    def validate_location(self, loc: NetLocation) -> Segment:
        seg = self.segment(loc.segment)
        if not 0.0 <= loc.offset <= seg.arc_length * (1.0 + 1e-12):
            raise InputError(
                f"offset {loc.offset} outside segment {loc.segment} "
                f"of length {seg.arc_length}"
            )
        return seg

    def downstream_set(self, seg_id: int) -> frozenset[int]:
        """Ids of all segments water from ``seg_id`` passes through, inclusive."""
        self.segment(seg_id)
        return self._downstream_sets[seg_id]

    def depth(self, loc: NetLocation) -> float:
        """Arc-length distance from the network outlet to ``loc``."""
        self.validate_location(loc)
        return self._depth_base[loc.segment] + loc.offset

    def point_at(self, loc: NetLocation) -> np.ndarray:
        """Planar coordinates of a network location."""
        seg = self.validate_location(loc)
        poly = seg.polyline
        chords = np.hypot(*np.diff(poly, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(chords)])
        off = min(loc.offset, cum[-1])
        i = int(np.searchsorted(cum, off, side="right") - 1)
        i = min(i, len(chords) - 1)
        frac = 0.0 if chords[i] == 0.0 else (off - cum[i]) / chords[i]
        return poly[i] + frac * (poly[i + 1] - poly[i])


def flow_relation(net: RiverNetwork, s: NetLocation, t: NetLocation):
    """Classify the hydrological relation of ``t`` relative to ``s``.

    Returns ``(relation, between)`` where ``between`` is the set of segment
    ids strictly between the two locations: inclusive of the upstream
    location's segment, exclusive of the downstream one. It is empty for
    locations on one segment and for flow-unconnected pairs.
    """
    net.validate_location(s)
    net.validate_location(t)
    ds, dt = net.downstream_set(s.segment), net.downstream_set(t.segment)
    if s.segment == t.segment:
        return FlowRelation.SAME_SEGMENT, frozenset()
    if ds < dt:
        return FlowRelation.CONNECTED_UPSTREAM, frozenset(dt - ds)
    if dt < ds:
        return FlowRelation.CONNECTED_DOWNSTREAM, frozenset(ds - dt)
    return FlowRelation.UNCONNECTED, frozenset()


def river_distance(net: RiverNetwork, s: NetLocation, t: NetLocation) -> float:
    """Shortest distance along the network between two locations, km.

    Flow-unconnected pairs are routed through their common junction.
    """
    rel, _ = flow_relation(net, s, t)
    if rel is not FlowRelation.UNCONNECTED:
        return abs(net.depth(s) - net.depth(t))
    common = net.downstream_set(s.segment) & net.downstream_set(t.segment)
    top = max(common, key=lambda k: len(net.downstream_set(k)))
    junction_depth = net._depth_base[top] + net.segment(top).arc_length
    return (net.depth(s) - junction_depth) + (net.depth(t) - junction_depth)


def weight_product(net: RiverNetwork, s: NetLocation, t: NetLocation) -> float:
    """Product of sqrt junction weights over the segments between ``s`` and ``t``.

    Defined for flow-connected pairs only; equals one when the locations
    share a segment.
    """
    rel, between = flow_relation(net, s, t)
    if rel is FlowRelation.UNCONNECTED:
        raise DomainError("weight product undefined for flow-unconnected locations")
    prod = 1.0
    for k in between:
        prod *= np.sqrt(net.segment(k).junction_weight)
    return float(prod)


def junction_weights_from_altitude(volumes) -> np.ndarray:
    """Junction weights proportional to the branches' integrated altitudes."""
    vols = np.asarray(volumes, dtype=float)
    if vols.ndim != 1 or vols.size < 1:
        raise InputError("volumes must be a nonempty 1-d sequence")
    if np.any(vols <= 0.0) or not np.all(np.isfinite(vols)):
        raise InputError("altitude volumes must be positive and finite")
    return vols / vols.sum()


def catchment_summary(
    altitude: np.ndarray,
    cell_size_km: float,
    mask: np.ndarray,
    location: NetLocation,
    origin_km=(0.0, 0.0),
    origin_latitude_deg: float = 0.0,
    km_per_degree: float = 111.2,
) -> CatchmentSummary:
    """Summarise a gridded catchment: integrated altitude, weighted centroid,
    area, mean altitude and mean slope.

    ``altitude`` is a raster in metres with square cells of ``cell_size_km``;
    row r, column c has its cell centre at
    ``origin + cell_size * (c + 0.5, r + 0.5)``. ``mask`` selects the cells
    belonging to the catchment. Integrals are cell-centre Riemann sums.
    """
    alt = np.asarray(altitude, dtype=float)
    msk = np.asarray(mask, dtype=bool)
    if alt.shape != msk.shape or alt.ndim != 2:
        raise InputError("altitude and mask must be matching 2-d arrays")
    if cell_size_km <= 0.0:
        raise InputError("cell size must be positive")
    if not msk.any():
        raise InputError("catchment mask is empty")
    vals = alt[msk]
    if not np.all(np.isfinite(vals)):
        raise InputError("masked cells must have finite altitude")

    cell_area = cell_size_km**2
    volume = float(vals.sum() * cell_area)  # km^2 m
    if volume <= 0.0:
        raise InputError("integrated altitude must be positive")

    rows, cols = np.nonzero(msk)
    cx = origin_km[0] + cell_size_km * (cols + 0.5)
    cy = origin_km[1] + cell_size_km * (rows + 0.5)
    hydro = np.array(
        [np.sum(cx * vals) / vals.sum(), np.sum(cy * vals) / vals.sum()]
    )

    # Slope from central differences of the full raster, metres per metre.
    spacing = cell_size_km * 1000.0
    gy = np.gradient(alt, spacing, axis=0) if alt.shape[0] > 1 else np.zeros_like(alt)
    gx = np.gradient(alt, spacing, axis=1) if alt.shape[1] > 1 else np.zeros_like(alt)
    slope = float(np.mean(np.hypot(gx, gy)[msk]))

    return CatchmentSummary(
        location=location,
        hydro_position=hydro,
        altitude_volume=volume,
        area=float(msk.sum() * cell_area),
        mean_altitude=float(vals.mean()),
        mean_slope=slope,
        centroid_latitude=origin_latitude_deg + hydro[1] / km_per_degree,
    )


def snap_to_network(
    net: RiverNetwork, xy, max_distance_km: float = 0.1
) -> NetLocation:
    """Project planar coordinates onto the nearest point of the network.

    Raises :class:`InputError` when the nearest polyline point is farther
    than ``max_distance_km`` away.
    """
    p = np.asarray(xy, dtype=float)
    best = None
    best_d2 = np.inf
    for seg in net.segments:
        poly = seg.polyline
        a, b = poly[:-1], poly[1:]
        ab = b - a
        denom = np.sum(ab**2, axis=1)
        tpar = np.zeros(len(a))
        nz = denom > 0
        tpar[nz] = np.clip(np.sum((p - a[nz]) * ab[nz], axis=1) / denom[nz], 0, 1)
        proj = a + tpar[:, None] * ab
        d2 = np.sum((proj - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        if d2[i] < best_d2:
            best_d2 = d2[i]
            chords = np.hypot(*np.diff(poly, axis=0).T)
            cum = np.concatenate([[0.0], np.cumsum(chords)])
            best = NetLocation(seg.id, float(cum[i] + tpar[i] * chords[i]))
    if best is None or np.sqrt(best_d2) > max_distance_km:
        raise InputError(
            f"no network point within {max_distance_km} km of {tuple(p)}"
        )
    return best


def load_network(path) -> RiverNetwork:
    """Read a network topology file (JSON; see the repo README for fields)."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        segs = [
            Segment(
                id=int(rec["id"]),
                polyline=np.asarray(rec["polyline"], dtype=float),
                downstream=None if rec["downstream"] is None else int(rec["downstream"]),
                junction_weight=float(rec.get("junction_weight", 1.0)),
            )
            for rec in doc["segments"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed network file {path}: {exc}") from exc
    return RiverNetwork(segs)


def save_network(net: RiverNetwork, path) -> None:
    doc = {
        "segments": [
            {
                "id": s.id,
                "downstream": s.downstream,
                "junction_weight": s.junction_weight,
                "polyline": np.asarray(s.polyline).tolist(),
            }
            for s in net.segments
        ]
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
