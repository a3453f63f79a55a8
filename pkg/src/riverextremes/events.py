"""Multivariate flood events from daily series.

Independent events are extracted with rank-selected, nonoverlapping
windows inside each season block: the day with the highest within-series
rank across all stations seeds a window, the window maxima form the event,
and the window is removed before the next pick. Margins are moved to the
standard Pareto scale by the empirical rank transform.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import EstimationError, InputError

__all__ = [
    "DailyPanel",
    "EventMatrix",
    "read_discharges",
    "decluster",
    "to_pareto",
    "madogram_theta",
    "save_events",
    "load_events",
]


@dataclass(frozen=True)
class DailyPanel:
    """Daily discharges at several stations with season/year block labels."""

    values: np.ndarray          # (days, stations), NaN for missing
    dates: np.ndarray           # datetime64[D], strictly increasing
    blocks: np.ndarray          # int label per day; contiguous runs
    station_ids: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        blocks = np.asarray(self.blocks, dtype=int)
        if vals.ndim != 2 or len(dates) != vals.shape[0] or len(blocks) != vals.shape[0]:
            raise InputError("values, dates and blocks must align")
        if vals.shape[1] != len(tuple(self.station_ids)):
            raise InputError("station ids must match the value columns")
        if np.any(np.diff(dates.astype("int64")) <= 0):
            raise InputError("dates must be strictly increasing")
        seen = []
        for b in blocks:
            if not seen or seen[-1] != b:
                if b in seen:
                    raise InputError("block labels must form contiguous runs")
                seen.append(b)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "station_ids", tuple(self.station_ids))

    @property
    def n_blocks(self) -> int:
        return len(np.unique(self.blocks))

    def block_bounds(self):
        """(label, first row, last row) per block, in order."""
        out = []
        b = self.blocks
        start = 0
        for i in range(1, len(b) + 1):
            if i == len(b) or b[i] != b[start]:
                out.append((int(b[start]), start, i - 1))
                start = i
        return out


def read_discharges(path, season_months=(6, 7, 8)) -> DailyPanel:
    """Read a discharge file (station_id, date ISO-8601, discharge_m3s) and
    pivot the selected season months into a daily panel with yearly blocks."""
    try:
        df = pd.read_csv(path)
    except Exception as exc:
        raise InputError(f"cannot read discharge file {path}: {exc}") from exc
    needed = {"station_id", "date", "discharge_m3s"}
    if not needed <= set(df.columns):
        raise InputError(f"discharge file needs columns {sorted(needed)}")
    df["date"] = pd.to_datetime(df["date"])
    if season_months:
        df = df[df["date"].dt.month.isin(season_months)]
    if df.empty:
        raise InputError("no rows left after season filtering")
    wide = df.pivot_table(index="date", columns="station_id", values="discharge_m3s")
    wide = wide.sort_index()
    dates = wide.index.values.astype("datetime64[D]")
    years = wide.index.year.values
    return DailyPanel(
        values=wide.to_numpy(dtype=float),
        dates=dates,
        blocks=years,
        station_ids=tuple(wide.columns),
    )


@dataclass(frozen=True)
class EventMatrix:
    """Declustered events: raw values, optional Pareto view, window metadata."""

    raw: np.ndarray             # (events, stations)
    station_ids: tuple
    window_starts: np.ndarray   # row index into the source panel
    window_lengths: np.ndarray
    window_blocks: np.ndarray
    start_dates: np.ndarray | None = None
    n_blocks: int = 1
    window_days: int = 1        # requested window length p
    pareto: np.ndarray | None = None

    @property
    def n_events(self) -> int:
        return self.raw.shape[0]

    @property
    def events_per_block(self) -> float:
        return self.n_events / self.n_blocks


def decluster(panel: DailyPanel, window_days: int, seed: int = 0) -> EventMatrix:
    """Extract independent multivariate events from the panel.

    Observations are ranked within each series once; the available day with
    the highest rank across all series (ties broken uniformly with the
    seeded generator) is the centre of a window of ``window_days``, clipped
    at season-block edges and at already-used days. Window maxima per
    station form the event; the window is then removed. Extraction stops
    when no run of ``window_days`` consecutive unused days remains.
    """
    p = int(window_days)
    if p < 1:
        raise InputError("window length must be at least one day")
    vals = panel.values
    n_days, m = vals.shape
    for j in range(m):
        if not np.any(np.isfinite(vals[:, j])):
            raise InputError(f"station {panel.station_ids[j]} has no data")
    bounds = panel.block_bounds()
    for label, lo, hi in bounds:
        if hi - lo + 1 < p:
            raise InputError(f"block {label} is shorter than the window")

    ranks = np.full_like(vals, np.nan)
    for j in range(m):
        col = vals[:, j]
        ok = np.isfinite(col)
        ranks[ok, j] = rankdata(col[ok])
    with np.errstate(invalid="ignore"):
        score = np.where(np.any(np.isfinite(ranks), axis=1), np.nanmax(ranks, axis=1), -np.inf)

    block_of = {}
    for label, lo, hi in bounds:
        for i in range(lo, hi + 1):
            block_of[i] = (label, lo, hi)

    rng = np.random.default_rng(seed)
    available = np.ones(n_days, dtype=bool)
    half_left, half_right = (p - 1) // 2, p // 2

    def run_remains() -> bool:
        for _, lo, hi in bounds:
            run = 0
            for i in range(lo, hi + 1):
                run = run + 1 if available[i] else 0
                if run >= p:
                    return True
        return False

    rows, starts, lengths, blocks = [], [], [], []
    while run_remains():
        masked = np.where(available, score, -np.inf)
        top = masked.max()
        if top == -np.inf:
            break
        ties = np.nonzero(masked == top)[0]
        centre = int(ties[0] if len(ties) == 1 else rng.choice(ties))
        label, lo, hi = block_of[centre]
        left = max(lo, centre - half_left)
        right = min(hi, centre + half_right)
        while left < centre and not available[left]:
            left += 1
        while right > centre and not available[right]:
            right -= 1
        span = slice(left, right + 1)
        chunk = vals[span]
        finite = np.isfinite(chunk)
        ev = np.where(
            finite.any(axis=0),
            np.max(np.where(finite, chunk, -np.inf), axis=0),
            np.nan,
        )
        rows.append(ev)
        starts.append(left)
        lengths.append(right - left + 1)
        blocks.append(label)
        available[span] = False

    order = np.argsort(starts)
    starts_arr = np.asarray(starts)[order]
    return EventMatrix(
        raw=np.asarray(rows)[order],
        station_ids=panel.station_ids,
        window_starts=starts_arr,
        window_lengths=np.asarray(lengths)[order],
        window_blocks=np.asarray(blocks)[order],
        start_dates=panel.dates[starts_arr],
        n_blocks=panel.n_blocks,
        window_days=p,
    )


def to_pareto(events: EventMatrix) -> EventMatrix:
    """Attach the standard-Pareto view: per station, ``1/(1 - R/(n+1))``
    with average ranks for ties, missing entries ignored."""
    raw = events.raw
    out = np.full_like(raw, np.nan)
    for j in range(raw.shape[1]):
        col = raw[:, j]
        ok = np.isfinite(col)
        n = int(ok.sum())
        if n < 2:
            raise EstimationError(
                f"station {events.station_ids[j]}: need at least two events "
                "for the rank transform"
            )
        r = rankdata(col[ok])
        out[ok, j] = 1.0 / (1.0 - r / (n + 1.0))
    return replace(events, pareto=out)


def madogram_theta(x, y, min_pairs: int = 20) -> float:
    """Madogram estimate of the pairwise extremal coefficient, in [1, 2].

    Uses the empirical-CDF first-order madogram of the pair of (block
    maxima) series and the link ``theta = (1 + 2 nu)/(1 - 2 nu)``.
    """
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.shape != yv.shape:
        raise InputError("paired series must have equal length")
    ok = np.isfinite(xv) & np.isfinite(yv)
    k = int(ok.sum())
    if k < min_pairs:
        raise EstimationError(f"only {k} complete pairs, need {min_pairs}")
    fx = rankdata(xv[ok]) / (k + 1.0)
    fy = rankdata(yv[ok]) / (k + 1.0)
    nu = 0.5 * np.mean(np.abs(fx - fy))
    if nu >= 0.5:
        return 2.0
    return float(np.clip((1.0 + 2.0 * nu) / (1.0 - 2.0 * nu), 1.0, 2.0))


def save_events(events: EventMatrix, path) -> None:
    """Write the event table: window metadata plus raw and Pareto values."""
    doc = {
        "event": np.arange(events.n_events),
        "block": events.window_blocks,
        "window_start_row": events.window_starts,
        "window_length": events.window_lengths,
    }
    if events.start_dates is not None:
        doc["window_start_date"] = np.datetime_as_string(
            events.start_dates.astype("datetime64[D]")
        )
    df = pd.DataFrame(doc)
    for j, sid in enumerate(events.station_ids):
        df[f"raw_{sid}"] = events.raw[:, j]
    if events.pareto is not None:
        for j, sid in enumerate(events.station_ids):
            df[f"pareto_{sid}"] = events.pareto[:, j]
    df.attrs["n_blocks"] = events.n_blocks
    with open(path, "w") as fh:
        fh.write(f"# n_blocks={events.n_blocks} window_days={events.window_days}\n")
        df.to_csv(fh, index=False, lineterminator="\n")


def load_events(path) -> EventMatrix:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise InputError(f"event file {path} lacks its metadata line")
        meta = dict(tok.split("=") for tok in header[1:].split())
        df = pd.read_csv(fh)
    raw_cols = [c for c in df.columns if c.startswith("raw_")]
    par_cols = [c for c in df.columns if c.startswith("pareto_")]
    ids = tuple(c[len("raw_"):] for c in raw_cols)
    pareto = df[par_cols].to_numpy(dtype=float) if par_cols else None
    dates = None
    if "window_start_date" in df.columns:
        dates = df["window_start_date"].to_numpy(dtype="datetime64[D]")
    return EventMatrix(
        raw=df[raw_cols].to_numpy(dtype=float),
        station_ids=ids,
        window_starts=df["window_start_row"].to_numpy(dtype=int),
        window_lengths=df["window_length"].to_numpy(dtype=int),
        window_blocks=df["block"].to_numpy(dtype=int),
        start_dates=dates,
        n_blocks=int(meta.get("n_blocks", 1)),
        window_days=int(meta.get("window_days", 1)),
        pareto=pareto,
    )
