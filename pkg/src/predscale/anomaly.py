"""Baseline profiles, divergence alarms and Markov-chain anomaly prediction.

All rates here are requests per second.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .trace import TimeSeries

SCHEMA_VERSION = 1
SECONDS_PER_DAY = 86400
ROW_TOL = 1e-9


def weekday_slot(epoch: float, slot_seconds: int) -> tuple[int, int]:
    """(day of week with Monday = 0, slot of day) for a UTC epoch."""
    day = math.floor(epoch / SECONDS_PER_DAY)
    return (day + 3) % 7, int((epoch - day * SECONDS_PER_DAY) // slot_seconds)


# -- baseline ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BaselineProfile:
    """Expected rate per (weekday, slot) cell.

    ``filled`` marks cells never observed in history. They borrow the pooled
    statistics of the same slot on other weekdays, or the global statistics
    when that slot was never seen at all.
    """

    slot_seconds: int
    mean: np.ndarray  # (7, slots)
    std: np.ndarray
    count: np.ndarray
    filled: np.ndarray
    global_mean: float
    global_std: float

    @property
    def slots_per_day(self) -> int:
        return SECONDS_PER_DAY // self.slot_seconds

    def cell(self, epoch: float) -> tuple[int, int]:
        return weekday_slot(epoch, self.slot_seconds)

    def expected(self, epoch: float) -> tuple[float, float]:
        day, slot = self.cell(epoch)
        return float(self.mean[day, slot]), float(self.std[day, slot])

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "baseline_profile",
            "slot_seconds": self.slot_seconds,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "count": self.count.tolist(),
            "filled": self.filled.tolist(),
            "global_mean": self.global_mean,
            "global_std": self.global_std,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BaselineProfile":
        if doc.get("schema") != SCHEMA_VERSION or doc.get("kind") != "baseline_profile":
            raise ValueError("not a version-1 baseline profile document")
        return cls(
            slot_seconds=int(doc["slot_seconds"]),
            mean=np.array(doc["mean"], dtype=np.float64),
            std=np.array(doc["std"], dtype=np.float64),
            count=np.array(doc["count"], dtype=np.int64),
            filled=np.array(doc["filled"], dtype=bool),
            global_mean=float(doc["global_mean"]),
            global_std=float(doc["global_std"]),
        )


def build_baseline(history: TimeSeries, slot_seconds: int = 300) -> BaselineProfile:
    if slot_seconds <= 0 or SECONDS_PER_DAY % slot_seconds:
        raise ValueError("slot_seconds must divide 86400")
    if history.duration < slot_seconds:
        raise DataError(f"history of {history.duration:g} s is shorter than one {slot_seconds} s slot")
    slots = SECONDS_PER_DAY // slot_seconds
    epochs = history.epochs
    rates = history.rates
    days = np.floor(epochs / SECONDS_PER_DAY)
    weekday = ((days + 3) % 7).astype(np.int64)
    slot = ((epochs - days * SECONDS_PER_DAY) // slot_seconds).astype(np.int64)
    flat = weekday * slots + slot

    size = 7 * slots
    count = np.bincount(flat, minlength=size)
    total = np.bincount(flat, weights=rates, minlength=size)
    seen = count > 0
    mean = np.zeros(size)
    mean[seen] = total[seen] / count[seen]
    sq = np.bincount(flat, weights=(rates - mean[flat]) ** 2, minlength=size)
    std = np.zeros(size)
    std[seen] = np.sqrt(sq[seen] / count[seen])

    g_mean = float(rates.mean())
    g_std = float(rates.std())
    # pooled per-slot statistics across weekdays, for unobserved cells
    s_count = np.bincount(slot, minlength=slots)
    s_mean = np.bincount(slot, weights=rates, minlength=slots) / np.maximum(s_count, 1)
    s_std = np.sqrt(np.bincount(slot, weights=(rates - s_mean[slot]) ** 2, minlength=slots)
                    / np.maximum(s_count, 1))
    fill_mean = np.where(s_count > 0, s_mean, g_mean)
    fill_std = np.where(s_count > 0, s_std, g_std)

    mean, std, count, seen = (a.reshape(7, slots) for a in (mean, std, count, seen))
    filled = ~seen
    mean = np.where(filled, fill_mean[None, :], mean)
    std = np.where(filled, fill_std[None, :], std)
    return BaselineProfile(slot_seconds, mean, std, count, filled, g_mean, g_std)


# -- detection ---------------------------------------------------------------------


@dataclass(frozen=True)
class Alarm:
    timestamp: float
    observed: float
    expected: float
    severity: float
    transiency: float
    direction: str

    def to_dict(self) -> dict:
        return {
            "ts": self.timestamp,
            "observed": self.observed,
            "expected": self.expected,
            "severity": self.severity,
            "transiency": self.transiency,
            "direction": self.direction,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "Alarm":
        return cls(doc["ts"], doc["observed"], doc["expected"], doc["severity"],
                   doc["transiency"], doc["direction"])


@dataclass
class Detector:
    """Streaming divergence detector for one stream (single writer).

    A sample is anomalous when it lies more than ``k`` standard deviations
    (floored at ``floor_std``) from its cell mean. Every sample at which a
    same-direction anomalous run has reached ``min_run`` emits an alarm.
    Transiency is the share of this cell's past runs that ended within one
    ``cycle_seconds`` provisioning cycle.
    """

    profile: BaselineProfile
    k: float = 3.0
    min_run: int = 2
    floor_std: float | None = None
    cycle_seconds: float = 300.0
    _run_dir: int = field(default=0, init=False)
    _run_len: int = field(default=0, init=False)
    _run_cell: tuple | None = field(default=None, init=False)
    _history: dict = field(default_factory=dict, init=False)

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if self.min_run < 1:
            raise ValueError("min_run must be >= 1")
        if self.floor_std is None:
            self.floor_std = max(1e-6 * self.profile.global_mean, 1e-12)

    def transiency(self, cell) -> float:
        total, short = self._history.get(cell, (0, 0))
        return short / total if total else 1.0

    def _close_run(self, interval: float):
        if self._run_len:
            total, short = self._history.get(self._run_cell, (0, 0))
            short += self._run_len * interval < self.cycle_seconds
            self._history[self._run_cell] = (total + 1, short)
        self._run_dir = 0
        self._run_len = 0
        self._run_cell = None

    def feed(self, epoch: float, rate: float, interval: float) -> Alarm | None:
        cell = self.profile.cell(epoch)
        mean = float(self.profile.mean[cell])
        scale = max(float(self.profile.std[cell]), self.floor_std)
        dev = rate - mean
        direction = 1 if dev > 0 else -1
        if abs(dev) <= self.k * scale:
            self._close_run(interval)
            return None
        if direction != self._run_dir:
            self._close_run(interval)
            self._run_dir = direction
            self._run_cell = cell
        self._run_len += 1
        if self._run_len < self.min_run:
            return None
        return Alarm(
            timestamp=float(epoch),
            observed=float(rate),
            expected=mean,
            severity=dev / scale,
            transiency=self.transiency(self._run_cell),
            direction="above" if direction > 0 else "below",
        )

    def run(self, series: TimeSeries) -> list[Alarm]:
        alarms = []
        for epoch, rate in zip(series.epochs, series.rates):
            alarm = self.feed(epoch, rate, series.interval)
            if alarm is not None:
                alarms.append(alarm)
        return alarms

    def flush(self, interval: float):
        """Close any open run so it counts towards transiency history."""
        self._close_run(interval)


def detect(
    observed: TimeSeries,
    profile: BaselineProfile,
    k: float = 3.0,
    min_run: int = 2,
    floor_std: float | None = None,
    cycle_seconds: float = 300.0,
    history: TimeSeries | None = None,
) -> list[Alarm]:
    """Alarms for ``observed``; ``history``, if given, only primes the transiency statistics."""
    det = Detector(profile, k, min_run, floor_std, cycle_seconds)
    if history is not None:
        det.run(history)
        det.flush(history.interval)
    return det.run(observed)


# -- Markov chains -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarkovChain:
    bin_edges: np.ndarray  # S + 1 ascending edges; outer edges are the history range
    transition: np.ndarray  # S x S row-stochastic
    anomalous_states: tuple = ()
    counts: np.ndarray | None = None

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        trans = np.asarray(self.transition, dtype=np.float64)
        s = trans.shape[0]
        if trans.shape != (s, s) or edges.shape != (s + 1,):
            raise ValueError("need S + 1 edges and an S x S transition matrix")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly ascending")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("transition matrix is not row-stochastic")
        if any(not 0 <= a < s for a in self.anomalous_states):
            raise ValueError("anomalous state index out of range")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "anomalous_states", tuple(sorted(set(int(a) for a in self.anomalous_states))))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def state_of(self, rate: float) -> int:
        """Bin index of ``rate``; rates outside the edges clamp to the end bins."""
        return int(np.searchsorted(self.bin_edges[1:-1], rate, side="right"))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "markov_chain",
            "bin_edges": self.bin_edges.tolist(),
            "transition": self.transition.tolist(),
            "anomalous_states": list(self.anomalous_states),
            "counts": None if self.counts is None else np.asarray(self.counts).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MarkovChain":
        if doc.get("schema") != SCHEMA_VERSION or doc.get("kind") != "markov_chain":
            raise ValueError("not a version-1 markov chain document")
        counts = doc.get("counts")
        return cls(np.array(doc["bin_edges"]), np.array(doc["transition"]),
                   tuple(doc["anomalous_states"]),
                   None if counts is None else np.array(counts))


@dataclass(frozen=True)
class AnomalyForecast:
    horizon_steps: int
    probability: float
    confidence: float


def _strictly_ascending(edges: np.ndarray) -> np.ndarray:
    edges = edges.copy()
    for i in range(1, edges.size):
        if edges[i] <= edges[i - 1]:
            edges[i] = np.nextafter(edges[i - 1], np.inf)
    return edges


def fit_markov(history, n_states: int, anomaly_quantile: float, smoothing: float = 1.0) -> MarkovChain:
    """Equal-count rate bins, transition counts between consecutive samples.

    Rows are normalised after adding ``smoothing`` to every count. A state is
    anomalous when it holds history samples above the ``anomaly_quantile``
    rate (for empty states: when its upper edge is above it).
    """
    if n_states < 2:
        raise ValueError("n_states must be >= 2")
    if not 0 < anomaly_quantile < 1:
        raise ValueError("anomaly_quantile must lie in (0, 1)")
    rates = history.rates if isinstance(history, TimeSeries) else np.asarray(history, dtype=np.float64)
    if rates.size < 2:
        raise DataError("need at least two samples to count transitions")
    edges = _strictly_ascending(np.quantile(rates, np.linspace(0.0, 1.0, n_states + 1)))
    states = np.searchsorted(edges[1:-1], rates, side="right")
    counts = np.zeros((n_states, n_states))
    np.add.at(counts, (states[:-1], states[1:]), 1.0)
    smoothed = counts + smoothing
    rows = smoothed.sum(axis=1, keepdims=True)
    trans = np.where(rows > 0, smoothed / np.where(rows > 0, rows, 1.0), 1.0 / n_states)

    threshold = np.quantile(rates, anomaly_quantile)
    anomalous = []
    for s in range(n_states):
        members = rates[states == s]
        top = members.max() if members.size else edges[s + 1]
        if top > threshold:
            anomalous.append(s)
    return MarkovChain(edges, trans, tuple(anomalous), counts)


def predict_anomaly(chain: MarkovChain, current_rate: float, horizon_steps: int) -> AnomalyForecast:
    """Probability of entering an anomalous state within the horizon, plus a confidence.

    Anomalous states are made absorbing, so the mass they hold after
    ``horizon_steps`` transitions is the first-passage probability. Confidence
    is one minus the normalised entropy of the current state's transition row.
    """
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    s = chain.state_of(current_rate)
    n = chain.n_states
    row = chain.transition[s]
    nz = row[row > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    confidence = 1.0 - entropy / math.log(n) if n > 1 else 1.0
    confidence = min(max(confidence, 0.0), 1.0)
    anomalous = list(chain.anomalous_states)
    if s in chain.anomalous_states:
        return AnomalyForecast(horizon_steps, 1.0, confidence)
    if not anomalous:
        return AnomalyForecast(horizon_steps, 0.0, confidence)
    absorbing = chain.transition.copy()
    absorbing[anomalous] = np.eye(n)[anomalous]
    dist = np.linalg.matrix_power(absorbing, horizon_steps)[s]
    prob = float(min(max(dist[anomalous].sum(), 0.0), 1.0))
    return AnomalyForecast(horizon_steps, prob, confidence)


def perturb_markov(chain: MarkovChain, boost: float, target_states: Iterable[int]) -> MarkovChain:
    """Add ``boost`` to every transition into ``target_states`` and renormalise rows."""
    if boost < 0:
        raise ValueError("boost must be non-negative")
    targets = sorted(set(int(t) for t in target_states))
    trans = chain.transition.copy()
    if boost and targets:
        trans[:, targets] += boost
        trans /= trans.sum(axis=1, keepdims=True)
    return MarkovChain(chain.bin_edges, trans, chain.anomalous_states)


def sample_markov(chain: MarkovChain, steps: int, seed: int, start_state: int = 0) -> np.ndarray:
    """Rates along a simulated path, drawn uniformly inside each visited bin."""
    rng = np.random.default_rng(seed)
    cum = np.cumsum(chain.transition, axis=1)
    states = np.empty(steps, dtype=np.int64)
    u_step = rng.random(steps)
    u_pos = rng.random(steps)
    s = start_state
    for i in range(steps):
        states[i] = s
        s = min(int(np.searchsorted(cum[s], u_step[i], side="right")), chain.n_states - 1)
    lo = chain.bin_edges[states]
    hi = chain.bin_edges[states + 1]
    return lo + u_pos * (hi - lo)


def alarms_to_jsonl(alarms: Sequence[Alarm]) -> str:
    return "".join(a.to_json() + "\n" for a in alarms)
