"""Price ingestion, multi-asset alignment and gradient observations.

Prices enter as per-asset OHLCV CSV files, are resampled onto a common time
grid and stacked into a :class:`Trajectory` (one row per time step, one column
per asset).  The potential gradient at interior states is estimated from the
trajectory's central second differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateRange,
    InsufficientOverlap,
    MissingColumn,
    NonMonotoneTimestamps,
    TooShort,
    UnknownAsset,
    UnparsableRow,
)

DEFAULT_SCHEMA = {
    "timestamp": "timestamp",
    "open": "open",
    "high": "high",
    "low": "low",
    "close": "close",
    "volume": "volume",
}

PRICE_FIELDS = ("close", "open", "mean")


def parse_time(text: str) -> float:
    """Parse ISO-8601 (UTC assumed when no offset) or integer Unix seconds."""
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text.lstrip("+-").isdigit():
        return float(int(text))
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_time(t: float) -> str:
    """Render Unix seconds as ISO-8601 UTC; sub-second values keep microseconds."""
    us = round(t * 1e6)
    secs, frac = divmod(us, 1_000_000)
    base = datetime.fromtimestamp(secs, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
    if frac:
        return f"{base}.{frac:06d}Z"
    return base + "Z"


def parse_duration(text: str | float | int) -> float:
    """Seconds from ``"300"``, ``"5min"``, ``"1h"``, ``"1d"``, ``"2w"`` style strings."""
    if isinstance(text, (int, float)):
        return float(text)
    s = text.strip().lower()
    units = [("min", 60.0), ("ms", 1e-3), ("s", 1.0), ("m", 60.0), ("h", 3600.0),
             ("d", 86400.0), ("w", 604800.0)]
    for suffix, mult in units:
        if s.endswith(suffix):
            return float(s[: -len(suffix)]) * mult
    return float(s)


@dataclass(frozen=True)
class PriceRecord:
    timestamp: float
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        vals = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValueError("prices must be finite and positive")
        if not (math.isfinite(self.volume) and self.volume >= 0):
            raise ValueError("volume must be finite and non-negative")
        if not (self.low <= self.open <= self.high and self.low <= self.close <= self.high):
            raise ValueError("OHLC bounds violated")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered state sequence.

    ``states`` is N x M; ``times`` holds Unix seconds of each row; ``norm`` is
    the per-asset ``(min, max)`` used for scaling, or ``None`` for raw prices.
    """

    states: np.ndarray
    dt: float
    assets: tuple[str, ...]
    times: np.ndarray = None
    norm: np.ndarray | None = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if states.ndim != 2:
            raise ValueError("states must be a 2-D array")
        n, m = states.shape
        if n < 3:
            raise TooShort(f"trajectory needs at least 3 states, got {n}")
        if not np.all(np.isfinite(states)):
            raise ValueError("states must be finite")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if len(self.assets) != m:
            raise ValueError(f"{len(self.assets)} asset labels for {m} columns")
        times = self.times
        if times is None:
            times = np.arange(n) * self.dt
        times = np.asarray(times, dtype=float)
        if times.shape != (n,):
            raise ValueError("times must have one entry per state")
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "assets", tuple(self.assets))
        if self.norm is not None:
            norm = np.asarray(self.norm, dtype=float).reshape(m, 2)
            object.__setattr__(self, "norm", _frozen(norm))

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[1]

    def column(self, asset: str) -> np.ndarray:
        try:
            return self.states[:, self.assets.index(asset)]
        except ValueError:
            raise UnknownAsset(f"unknown asset {asset!r}; have {list(self.assets)}") from None

    def select(self, assets: Sequence[str]) -> "Trajectory":
        idx = []
        for a in assets:
            if a not in self.assets:
                raise UnknownAsset(f"unknown asset {a!r}; have {list(self.assets)}")
            idx.append(self.assets.index(a))
        norm = None if self.norm is None else self.norm[idx]
        return Trajectory(self.states[:, idx], self.dt, tuple(assets), self.times, norm)

    def between(self, start: float | None = None, end: float | None = None) -> "Trajectory":
        """Rows with ``start <= t <= end``."""
        mask = np.ones(self.n, dtype=bool)
        if start is not None:
            mask &= self.times >= start
        if end is not None:
            mask &= self.times <= end
        return Trajectory(self.states[mask], self.dt, self.assets, self.times[mask], self.norm)

    def to_price(self, x: np.ndarray) -> np.ndarray:
        """Map states (or any array with M trailing entries) back to price units."""
        x = np.asarray(x, dtype=float)
        if self.norm is None:
            return x
        lo, hi = self.norm[:, 0], self.norm[:, 1]
        return lo + x * (hi - lo)

    def price_scale(self) -> np.ndarray:
        """Per-asset factor mapping this trajectory's units to price units."""
        if self.norm is None:
            return np.ones(self.m)
        return self.norm[:, 1] - self.norm[:, 0]


@dataclass(frozen=True)
class GradientObservations:
    """Interior states ``X`` paired with potential-gradient estimates ``Y``."""

    X: np.ndarray
    Y: np.ndarray
    noise_hint: float = field(default=0.0)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if X.shape != Y.shape:
            raise ValueError(f"X {X.shape} and Y {Y.shape} must match")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))


# --------------------------------------------------------------------------- io


def parse_csv(path, schema: Mapping[str, str] | None = None) -> list[PriceRecord]:
    """Read one asset's OHLCV export.

    ``schema`` maps the logical names ``timestamp, open, high, low, close,
    volume`` to the file's header names.
    """
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MissingColumn(f"{path}: empty file, no header row")
        header = [h.strip() for h in header]
        index = {}
        for key, name in cols.items():
            if name not in header:
                raise MissingColumn(f"{path}: column {name!r} ({key}) not in header {header}")
            index[key] = header.index(name)

        records: list[PriceRecord] = []
        prev = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                ts = parse_time(row[index["timestamp"]])
                rec = PriceRecord(
                    ts,
                    float(row[index["open"]]),
                    float(row[index["high"]]),
                    float(row[index["low"]]),
                    float(row[index["close"]]),
                    float(row[index["volume"]]),
                )
            except (ValueError, IndexError) as exc:
                raise UnparsableRow(lineno, str(exc)) from None
            if ts <= prev:
                raise NonMonotoneTimestamps(lineno)
            prev = ts
            records.append(rec)
    return records


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Timestamp column plus one column per asset, in trajectory units."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *traj.assets])
        for t, row in zip(traj.times, traj.states):
            w.writerow([format_time(t), *(repr(float(v)) for v in row)])


def read_trajectory_csv(path, dt: float | None = None) -> Trajectory:
    """Inverse of :func:`write_trajectory_csv`.  ``dt`` defaults to the median spacing."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2 or header[0].strip() != "timestamp":
            raise MissingColumn(f"{path}: expected header 'timestamp,<asset>,...'")
        times, rows = [], []
        prev = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = parse_time(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise UnparsableRow(lineno, str(exc)) from None
            if len(vals) != len(header) - 1 or not all(math.isfinite(v) for v in vals):
                raise UnparsableRow(lineno, "wrong number of values or non-finite value")
            if t <= prev:
                raise NonMonotoneTimestamps(lineno)
            prev = t
            times.append(t)
            rows.append(vals)
    if len(rows) < 3:
        raise TooShort(f"{path}: need at least 3 rows, got {len(rows)}")
    times = np.array(times)
    if dt is None:
        dt = float(np.median(np.diff(times)))
    return Trajectory(np.array(rows), dt, tuple(h.strip() for h in header[1:]), times)


# ------------------------------------------------------------------- alignment


def _bucket_values(records: Sequence[PriceRecord], field: str, interval: float):
    """Resample one asset onto its own grid of bucket-start times.

    Bucket ``[g, g + interval)``: close -> last close, open -> first open,
    mean -> mean of closes.  Empty buckets forward-fill the last known close.
    """
    ts = np.array([r.timestamp for r in records])
    closes = np.array([r.close for r in records])
    opens = np.array([r.open for r in records])
    b = np.floor(ts / interval + 1e-9).astype(np.int64)
    grid = np.arange(b[0], b[-1] + 1)
    out = np.empty(grid.size)
    # index ranges of each bucket in the sorted record list
    lo = np.searchsorted(b, grid, side="left")
    hi = np.searchsorted(b, grid, side="right")
    last_close = closes[0]
    for g, (a, z) in enumerate(zip(lo, hi)):
        if z > a:
            if field == "close":
                out[g] = closes[z - 1]
            elif field == "open":
                out[g] = opens[a]
            else:
                out[g] = closes[a:z].mean()
            last_close = closes[z - 1]
        else:
            out[g] = last_close
    return grid, out


def build_trajectory(
    series: Mapping[str, Sequence[PriceRecord]],
    field: str = "close",
    resample: float | None = None,
) -> Trajectory:
    """Align per-asset record lists on a common resampled grid.

    Timestamps of the result are the intersection of the per-asset bucket
    grids; column order follows the mapping's order.
    """
    if field not in PRICE_FIELDS:
        raise ValueError(f"field must be one of {PRICE_FIELDS}, got {field!r}")
    if not series:
        raise InsufficientOverlap("no input series")
    for name, recs in series.items():
        if len(recs) == 0:
            raise InsufficientOverlap(f"asset {name!r} has no records")
    if resample is None:
        first = next(iter(series.values()))
        if len(first) < 2:
            raise InsufficientOverlap("cannot infer sampling interval from one record")
        resample = float(np.median(np.diff([r.timestamp for r in first])))
    if resample <= 0:
        raise ValueError("resample interval must be positive")

    grids = {name: _bucket_values(recs, field, resample) for name, recs in series.items()}
    start = max(g[0][0] for g in grids.values())
    stop = min(g[0][-1] for g in grids.values())
    if stop - start + 1 < 3:
        raise InsufficientOverlap(
            f"assets overlap on {max(0, stop - start + 1)} resampled steps; need at least 3"
        )
    cols = []
    for name, (grid, vals) in grids.items():
        cols.append(vals[start - grid[0]: stop - grid[0] + 1])
    times = np.arange(start, stop + 1) * resample
    return Trajectory(np.column_stack(cols), resample, tuple(series), times)


def load_assets(
    paths: Mapping[str, str | Path],
    schema: Mapping[str, str] | None = None,
    field: str = "close",
    resample: float | None = None,
) -> Trajectory:
    series = {name: parse_csv(p, schema) for name, p in paths.items()}
    return build_trajectory(series, field=field, resample=resample)


# --------------------------------------------------------------- normalization


def normalize_minmax(traj: Trajectory) -> Trajectory:
    """Map every column to [0, 1] using its own window min and max."""
    if traj.norm is not None:
        traj = denormalize(traj)
    lo = traj.states.min(axis=0)
    hi = traj.states.max(axis=0)
    for name, a, b in zip(traj.assets, lo, hi):
        if not b > a:
            raise DegenerateRange(name)
    scaled = (traj.states - lo) / (hi - lo)
    return Trajectory(np.clip(scaled, 0.0, 1.0), traj.dt, traj.assets, traj.times,
                      np.column_stack([lo, hi]))


def denormalize(traj: Trajectory) -> Trajectory:
    if traj.norm is None:
        return traj
    return Trajectory(traj.to_price(traj.states), traj.dt, traj.assets, traj.times, None)


# -------------------------------------------------------- gradient observations


def estimate_gradient_observations(traj: Trajectory) -> GradientObservations:
    """Potential-gradient samples at interior states.

    Force is the negative potential gradient, so each interior state gets
    ``y_i = -(x_{i+1} - 2 x_i + x_{i-1}) / dt**2``.
    """
    x = traj.states
    if x.shape[0] < 3:
        raise TooShort("need at least 3 states for second differences")
    y = -(x[2:] - 2.0 * x[1:-1] + x[:-2]) / traj.dt**2
    # crude noise guess: half the per-column variance
    hint = float(0.5 * np.mean(np.var(y, axis=0))) if y.shape[0] > 1 else 0.0
    return GradientObservations(x[1:-1], y, hint)
