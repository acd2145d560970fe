"""Ingestion and alignment of the power and weather time series that feed
the market engine and the forecaster.

File formats:
    power.csv   header ``timestamp,value_w``
    weather.csv header ``timestamp,irradiance_wm2,air_temp_c,rel_humidity_pct,rainfall_mm``

Timestamps are ISO 8601, stored as UTC. All functions here are pure and
safe to call from any thread.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum

import numpy as np

POWER_HEADER = ["timestamp", "value_w"]
WEATHER_HEADER = ["timestamp", "irradiance_wm2", "air_temp_c", "rel_humidity_pct", "rainfall_mm"]


class DataError(Exception):
    """Base class for time-series ingestion failures."""


class MalformedRow(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NonMonotonicTimestamp(DataError):
    def __init__(self, line_no: int):
        super().__init__(f"line {line_no}: timestamp not strictly increasing")
        self.line_no = line_no


class NegativeValue(DataError):
    def __init__(self, line_no: int, value: float):
        super().__init__(f"line {line_no}: negative value {value}")
        self.line_no = line_no
        self.value = value


class EmptySeries(DataError):
    pass


class NoOverlap(DataError):
    pass


def parse_iso(text: str) -> datetime:
    """Parse an ISO 8601 timestamp; naive values are taken as UTC."""
    cleaned = text.strip()
    if cleaned.endswith("Z") or cleaned.endswith("z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_iso(dt: datetime) -> str:
    """Canonical second-precision UTC rendering, e.g. 2020-04-23T09:03:46Z."""
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class SeriesKind(str, Enum):
    GENERATION = "generation"
    CONSUMPTION = "consumption"


@dataclass(frozen=True)
class PowerSample:
    timestamp: datetime
    value_w: float

    def __post_init__(self):
        if self.value_w < 0:
            raise ValueError(f"power sample must be non-negative, got {self.value_w}")


@dataclass
class PowerSeries:
    node_id: str
    kind: SeriesKind
    samples: list[PowerSample]
    interval_s: float  # 0.0 when unknown (fewer than two samples)

    @property
    def start(self) -> datetime:
        if not self.samples:
            raise EmptySeries("series has no samples")
        return self.samples[0].timestamp

    @property
    def end(self) -> datetime:
        if not self.samples:
            raise EmptySeries("series has no samples")
        return self.samples[-1].timestamp

    def covers(self, ts: datetime) -> bool:
        return bool(self.samples) and self.start <= ts <= self.end

    def value_at(self, ts: datetime) -> float:
        """Value of the most recent sample at or before `ts` (step lookup)."""
        if not self.covers(ts):
            raise IndexError(f"{format_iso(ts)} outside series range")
        times = [s.timestamp for s in self.samples]
        i = bisect_left(times, ts)
        if i < len(times) and times[i] == ts:
            return self.samples[i].value_w
        return self.samples[i - 1].value_w


@dataclass(frozen=True)
class WeatherRecord:
    timestamp: datetime
    irradiance_wm2: float
    air_temp_c: float
    rel_humidity_pct: float
    rainfall_mm: float

    def __post_init__(self):
        if self.irradiance_wm2 < 0:
            raise ValueError("irradiance must be non-negative")
        if not 0 <= self.rel_humidity_pct <= 100:
            raise ValueError("relative humidity must be within [0, 100]")
        if self.rainfall_mm < 0:
            raise ValueError("rainfall must be non-negative")

    def features(self) -> list[float]:
        return [self.irradiance_wm2, self.air_temp_c, self.rel_humidity_pct, self.rainfall_mm]


@dataclass
class Dataset:
    """Joined feature matrix (n rows, 4 columns) and generation targets."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if len(self.features) != len(self.targets):
            raise ValueError("feature row count must equal target length")
        if not np.isfinite(self.features).all() or not np.isfinite(self.targets).all():
            raise ValueError("dataset must not contain missing or non-finite values")

    def __len__(self) -> int:
        return len(self.targets)


def _infer_interval(samples: list[PowerSample]) -> float:
    if len(samples) < 2:
        return 0.0
    diffs = Counter(
        (b.timestamp - a.timestamp).total_seconds() for a, b in zip(samples, samples[1:])
    )
    best = max(diffs.values())
    return min(d for d, n in diffs.items() if n == best)


def load_power_csv(path: str, node_id: str, kind: SeriesKind) -> PowerSeries:
    """Load a ``timestamp,value_w`` CSV into a strictly-increasing series."""
    samples: list[PowerSample] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != POWER_HEADER:
            raise MalformedRow(1, f"expected header {','.join(POWER_HEADER)}")
        prev: datetime | None = None
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise MalformedRow(line_no, f"expected 2 fields, got {len(row)}")
            try:
                ts = parse_iso(row[0])
            except ValueError:
                raise MalformedRow(line_no, f"bad timestamp {row[0]!r}") from None
            try:
                value = float(row[1])
            except ValueError:
                raise MalformedRow(line_no, f"bad value {row[1]!r}") from None
            if not math.isfinite(value):
                raise MalformedRow(line_no, f"non-finite value {row[1]!r}")
            if value < 0:
                raise NegativeValue(line_no, value)
            if prev is not None and ts <= prev:
                raise NonMonotonicTimestamp(line_no)
            prev = ts
            samples.append(PowerSample(ts, value))
    return PowerSeries(node_id=node_id, kind=SeriesKind(kind), samples=samples,
                       interval_s=_infer_interval(samples))


def write_power_csv(series: PowerSeries, path: str) -> None:
    """Write the canonical ``timestamp,value_w`` form, atomically."""
    _atomic_write(path, _power_csv_text(series))


def _power_csv_text(series: PowerSeries) -> str:
    lines = [",".join(POWER_HEADER)]
    lines += [f"{format_iso(s.timestamp)},{s.value_w:g}" for s in series.samples]
    return "\n".join(lines) + "\n"


def load_weather_csv(path: str) -> list[WeatherRecord]:
    """Load the five-column weather CSV; rows must be strictly increasing."""
    records: list[WeatherRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != WEATHER_HEADER:
            raise MalformedRow(1, f"expected header {','.join(WEATHER_HEADER)}")
        prev: datetime | None = None
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise MalformedRow(line_no, f"expected 5 fields, got {len(row)}")
            try:
                ts = parse_iso(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise MalformedRow(line_no, "unparseable row") from None
            if any(not math.isfinite(v) for v in values):
                raise MalformedRow(line_no, "non-finite value")
            irr, temp, hum, rain = values
            if irr < 0:
                raise NegativeValue(line_no, irr)
            if rain < 0:
                raise NegativeValue(line_no, rain)
            if not 0 <= hum <= 100:
                raise MalformedRow(line_no, f"humidity {hum} outside [0, 100]")
            if prev is not None and ts <= prev:
                raise NonMonotonicTimestamp(line_no)
            prev = ts
            records.append(WeatherRecord(ts, irr, temp, hum, rain))
    return records


def write_weather_csv(records: list[WeatherRecord], path: str) -> None:
    lines = [",".join(WEATHER_HEADER)]
    lines += [
        f"{format_iso(r.timestamp)},{r.irradiance_wm2:g},{r.air_temp_c:g},"
        f"{r.rel_humidity_pct:g},{r.rainfall_mm:g}"
        for r in records
    ]
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def resample(series: PowerSeries, interval_s: float) -> PowerSeries:
    """Project a series onto a uniform grid aligned to midnight UTC.

    Grid points inside gaps no wider than two intervals are linearly
    interpolated; wider gaps read as 0 W for generation (night-time) and
    hold the previous value for consumption.
    """
    if interval_s <= 0:
        raise ValueError("interval must be positive")
    if not series.samples:
        raise EmptySeries("cannot resample an empty series")

    first, last = series.start, series.end
    midnight = first.replace(hour=0, minute=0, second=0, microsecond=0)
    offset = (first - midnight).total_seconds()
    k0 = math.ceil(offset / interval_s - 1e-9)
    k1 = math.floor((last - midnight).total_seconds() / interval_s + 1e-9)

    times = [s.timestamp for s in series.samples]
    values = [s.value_w for s in series.samples]
    out: list[PowerSample] = []
    for k in range(k0, k1 + 1):
        ts = midnight + timedelta(seconds=k * interval_s)
        i = bisect_left(times, ts)
        if i < len(times) and times[i] == ts:
            out.append(PowerSample(ts, values[i]))
            continue
        lo, hi = i - 1, i
        gap = (times[hi] - times[lo]).total_seconds()
        if gap <= 2 * interval_s:
            frac = (ts - times[lo]).total_seconds() / gap
            out.append(PowerSample(ts, values[lo] + frac * (values[hi] - values[lo])))
        elif series.kind is SeriesKind.GENERATION:
            out.append(PowerSample(ts, 0.0))
        else:
            out.append(PowerSample(ts, values[lo]))
    return PowerSeries(node_id=series.node_id, kind=series.kind, samples=out,
                       interval_s=float(interval_s))


def build_dataset(weather: list[WeatherRecord], target: PowerSeries) -> tuple[Dataset, int]:
    """Join weather and generation rows on exact timestamps.

    Returns the dataset and the number of rows dropped for lacking a match
    on the other side.
    """
    by_ts = {s.timestamp: s.value_w for s in target.samples}
    matched = [(r, by_ts[r.timestamp]) for r in weather if r.timestamp in by_ts]
    if not matched:
        raise NoOverlap("weather and target series share no timestamps")
    dropped = (len(weather) - len(matched)) + (len(target.samples) - len(matched))
    features = np.array([r.features() for r, _ in matched], dtype=float)
    targets = np.array([v for _, v in matched], dtype=float)
    return Dataset(features=features, targets=targets), dropped
