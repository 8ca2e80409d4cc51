"""Trace ingestion: pagecounts-raw parsing, hourly disaggregation, synthetic workloads.

A :class:`TimeSeries` holds request counts *per interval*; ``series.rates``
gives the same data in requests per second.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
import os
import re
from calendar import timegm
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import CorruptInputError, DataError

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600
GZIP_MAGIC = b"\x1f\x8b"
_STAMP_RE = re.compile(r"(\d{8})-(\d{6})")


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled, non-negative request counts."""

    values: np.ndarray
    interval: float = 5.0
    start_epoch: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("a series needs at least one sample")
        if not self.interval > 0:
            raise ValueError(f"interval must be positive, got {self.interval}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("series values must be finite and non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "interval", float(self.interval))
        object.__setattr__(self, "start_epoch", float(self.start_epoch))

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.interval == other.interval
            and self.start_epoch == other.start_epoch
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @property
    def rates(self) -> np.ndarray:
        return self.values / self.interval

    @property
    def epochs(self) -> np.ndarray:
        return self.start_epoch + self.interval * np.arange(self.values.size)

    @property
    def end_epoch(self) -> float:
        return self.start_epoch + self.interval * self.values.size

    @property
    def duration(self) -> float:
        return self.interval * self.values.size

    def slice(self, start: int, stop: int | None = None) -> "TimeSeries":
        n = self.values.size
        start = start + n if start < 0 else start
        stop = n if stop is None else (stop + n if stop < 0 else stop)
        return TimeSeries(
            self.values[start:stop], self.interval, self.start_epoch + start * self.interval
        )

    def concat(self, other: "TimeSeries") -> "TimeSeries":
        if other.interval != self.interval or other.start_epoch != self.end_epoch:
            raise ValueError("series are not contiguous")
        return TimeSeries(np.concatenate([self.values, other.values]), self.interval, self.start_epoch)


@dataclass(frozen=True)
class HourlyCount:
    hour_index: int
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError(f"negative hourly count {self.count}")


@dataclass(frozen=True)
class DisaggregationParams:
    sigma: float = 1.0
    seed: int = 0
    consolidation: int = 5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.consolidation <= 0 or SECONDS_PER_HOUR % self.consolidation:
            raise ValueError("consolidation must be a positive divisor of 3600")


@dataclass
class PagecountStats:
    total: int = 0
    lines: int = 0
    malformed: int = 0


@dataclass
class IngestReport:
    files_read: list = field(default_factory=list)
    files_failed: list = field(default_factory=list)
    lines_total: int = 0
    lines_skipped: int = 0
    total_count: int = 0
    gap_hours: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "files_read": list(self.files_read),
            "files_failed": [{"file": f, "reason": r} for f, r in self.files_failed],
            "lines_total": self.lines_total,
            "lines_skipped": self.lines_skipped,
            "total_count": self.total_count,
            "gap_hours": list(self.gap_hours),
        }


# -- pagecounts parsing ------------------------------------------------------


def _open_binary(source) -> tuple[BinaryIO, bool]:
    """Return a readable binary stream, transparently gunzipping. Second item: caller must close."""
    if isinstance(source, (str, os.PathLike)):
        raw = open(source, "rb")
        owned = True
    else:
        raw = source
        owned = False
    if not hasattr(raw, "peek"):
        raw = io.BufferedReader(raw) if isinstance(raw, io.RawIOBase) else io.BufferedReader(io.BytesIO(raw.read()))
    if raw.peek(2)[:2] == GZIP_MAGIC:
        return gzip.GzipFile(fileobj=raw), True
    return raw, owned


def scan_pagecounts(source, project_code: str) -> PagecountStats:
    """Sum the ``count`` field of lines whose project equals ``project_code``.

    Lines are ``project title count bytes``. Blank lines are ignored; lines that
    do not have four fields with integer count/bytes are skipped and counted.
    """
    code = project_code.encode("utf-8")
    stats = PagecountStats()
    stream, owned = _open_binary(source)
    try:
        for line in stream:
            fields = line.split()
            if not fields:
                continue
            stats.lines += 1
            if len(fields) != 4 or not fields[2].isdigit() or not fields[3].isdigit():
                stats.malformed += 1
                continue
            if fields[0] == code:
                stats.total += int(fields[2])
    finally:
        if owned:
            stream.close()
    if stats.malformed * 2 > stats.lines:
        raise CorruptInputError(
            f"{stats.malformed} of {stats.lines} lines malformed"
        )
    return stats


def parse_pagecounts(source, project_code: str) -> int:
    """Total request count for ``project_code`` in one pagecounts file or stream."""
    return scan_pagecounts(source, project_code).total


def _file_epoch(name: str) -> int | None:
    m = _STAMP_RE.search(name)
    if m is None:
        return None
    d, t = m.groups()
    return timegm((int(d[:4]), int(d[4:6]), int(d[6:]), int(t[:2]), int(t[2:4]), int(t[4:]), 0, 0, 0))


def read_pagecounts_dir(
    directory, project_code: str, workers: int | None = None
) -> tuple[list[HourlyCount], float, IngestReport]:
    """Parse every file in ``directory`` (one per hour) into contiguous hourly counts.

    Files are ordered by name. Hour positions come from the ``YYYYMMDD-HHMMSS``
    stamp in the name when present, else from sorted order. Missing hours and
    unreadable or corrupt files become zero-count hours listed in
    ``report.gap_hours``. Returns ``(hourly, start_epoch, report)``.
    """
    paths = sorted(p for p in Path(directory).iterdir() if p.is_file())
    if not paths:
        raise DataError(f"no pagecounts files in {directory}")

    def work(path):
        try:
            return path, scan_pagecounts(path, project_code), None
        except (OSError, EOFError, CorruptInputError) as exc:
            return path, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(work, paths))

    epochs = [_file_epoch(p.name) for p in paths]
    if all(e is not None for e in epochs):
        start_epoch = min(epochs)
        positions = [(e - start_epoch) // SECONDS_PER_HOUR for e in epochs]
    else:
        start_epoch = 0
        positions = list(range(len(paths)))

    report = IngestReport()
    counts: dict[int, int] = {}
    for (path, stats, err), pos in zip(results, positions):
        if stats is None:
            report.files_failed.append((path.name, err))
            logger.warning("skipping %s: %s", path.name, err)
            continue
        report.files_read.append(path.name)
        report.lines_total += stats.lines
        report.lines_skipped += stats.malformed
        counts[pos] = counts.get(pos, 0) + stats.total
    if not counts:
        raise DataError(f"no readable pagecounts files in {directory}")

    n_hours = max(positions) + 1
    hourly = []
    for h in range(n_hours):
        if h not in counts:
            report.gap_hours.append(h)
        hourly.append(HourlyCount(h, counts.get(h, 0)))
    report.total_count = sum(counts.values())
    return hourly, float(start_epoch), report


def fill_gaps(hourly: Sequence[HourlyCount]) -> tuple[list[HourlyCount], list[int]]:
    """Insert zero-count hours where ``hour_index`` skips; return the filled list and the inserted indices."""
    if not hourly:
        return [], []
    by_hour = {}
    for h in hourly:
        if h.hour_index in by_hour:
            raise DataError(f"duplicate hour_index {h.hour_index}")
        by_hour[h.hour_index] = h
    lo, hi = min(by_hour), max(by_hour)
    gaps = [i for i in range(lo, hi + 1) if i not in by_hour]
    return [by_hour.get(i, HourlyCount(i, 0)) for i in range(lo, hi + 1)], gaps


# -- disaggregation ----------------------------------------------------------


def _hour_rng(seed: int, hour_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), hour_index]))


def apportion(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights`` (largest-remainder rule).

    Remainder ties go to the lower index, so the result is deterministic.
    """
    if total == 0:
        return np.zeros(weights.size, dtype=np.int64)
    share = weights / weights.sum() * total
    base = np.floor(share).astype(np.int64)
    residue = int(total - base.sum())
    if residue > 0:
        order = np.argsort(-(share - base), kind="stable")
        base[order[:residue]] += 1
    elif residue < 0:  # float overshoot, remove from the smallest remainders
        order = np.argsort(share - base, kind="stable")
        order = order[base[order] > 0]
        base[order[:-residue]] -= 1
    return base


def disaggregate(
    hourly: Sequence[HourlyCount], params: DisaggregationParams, start_epoch: float = 0.0
) -> TimeSeries:
    """Spread hourly counts over seconds with log-normal weights, then consolidate.

    Each hour's RNG is derived from ``(params.seed, hour_index)`` so results do
    not depend on evaluation order. Per-second counts are integers and the
    output total equals the input total exactly.
    """
    if not hourly:
        raise DataError("no hourly counts to disaggregate")
    idx = [h.hour_index for h in hourly]
    if any(b != a + 1 for a, b in zip(idx, idx[1:])):
        raise DataError("hourly counts must be contiguous; fill gaps first")
    block = params.consolidation
    per_hour = SECONDS_PER_HOUR // block
    out = np.empty(len(hourly) * per_hour, dtype=np.float64)
    for k, h in enumerate(hourly):
        weights = _hour_rng(params.seed, h.hour_index).lognormal(0.0, params.sigma, SECONDS_PER_HOUR)
        seconds = apportion(weights, int(h.count))
        out[k * per_hour:(k + 1) * per_hour] = seconds.reshape(per_hour, block).sum(axis=1)
    return TimeSeries(out, float(block), start_epoch + idx[0] * SECONDS_PER_HOUR)


# -- synthetic workloads and splitting -----------------------------------------


def synth_diurnal(
    days: float,
    base_rate: float,
    amplitude: float,
    noise_sigma: float,
    seed: int,
    interval: float = 5.0,
    start_epoch: float = 0.0,
) -> TimeSeries:
    """Daily sinusoid in req/s (trough at midnight, peak at noon) plus Gaussian noise, clipped at 0."""
    if not base_rate > amplitude >= 0:
        raise ValueError("need base_rate > amplitude >= 0")
    n = int(round(days * 86400 / interval))
    if n < 1:
        raise ValueError("series would be empty")
    t = start_epoch + interval * np.arange(n)
    rate = base_rate - amplitude * np.cos(2 * np.pi * (t % 86400) / 86400)
    if noise_sigma > 0:
        rate = rate + np.random.default_rng(seed).normal(0.0, noise_sigma, n)
    return TimeSeries(np.clip(rate, 0, None) * interval, interval, start_epoch)


def split_train_test(series: TimeSeries, train_fraction: float) -> tuple[TimeSeries, TimeSeries]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    cut = int(round(len(series) * train_fraction))
    if cut < 1 or cut >= len(series):
        raise ValueError(f"split of {len(series)} samples at {train_fraction} leaves an empty side")
    return series.slice(0, cut), series.slice(cut)


# -- CSV -----------------------------------------------------------------------


def fmt_number(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def write_series_csv(series: TimeSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "interval_s", "value"])
        step = fmt_number(series.interval)
        for epoch, value in zip(series.epochs, series.values):
            writer.writerow([fmt_number(epoch), step, fmt_number(value)])


def read_series_csv(path) -> TimeSeries:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: empty series file")
    try:
        epochs = [float(r["epoch"]) for r in rows]
        interval = float(rows[0]["interval_s"])
        values = [float(r["value"]) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad series CSV ({exc})") from exc
    expected = epochs[0] + interval * np.arange(len(epochs))
    if not np.allclose(epochs, expected, rtol=0, atol=1e-6 * interval):
        raise DataError(f"{path}: samples are not uniformly spaced")
    return TimeSeries(values, interval, epochs[0])
