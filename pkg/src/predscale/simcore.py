"""Deterministic data-center replay of a request workload under a VM schedule.

Requests in an interval arrive evenly spaced and join the live VM with the
shortest queue (lowest index on ties). A request is admitted when
``queue_length * service_time + service_time <= response_target``, otherwise
rejected. Scale-ups become live ``vm_boot_delay`` after they are requested;
scale-downs act at once and the retired VMs drain their queues. The first
schedule entry (at or before the workload start) is pre-provisioned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DataError, ScheduleError
from .planner import ResourceRequirement
from .trace import TimeSeries, fmt_number

SCHEMA_VERSION = 1
_TIME_EPS = 1e-7  # seconds; float slack when comparing completion and arrival times


@dataclass(frozen=True)
class DataCenterSpec:
    host_count: int = 500
    cores_per_host: int = 8
    ram_per_host: float = 16.0
    storage_per_host: float = 1.0
    vm_fraction_of_host: float = 1 / 8

    def __post_init__(self):
        if min(self.host_count, self.cores_per_host, self.ram_per_host,
               self.storage_per_host, self.vm_fraction_of_host) <= 0:
            raise ValueError("data-center parameters must be positive")
        cores = self.vm_fraction_of_host * self.cores_per_host
        if abs(cores - round(cores)) > 1e-9 or round(cores) < 1:
            raise ValueError("vm_fraction_of_host * cores_per_host must be a positive integer")

    @property
    def cores_per_vm(self) -> int:
        return int(round(self.vm_fraction_of_host * self.cores_per_host))

    @property
    def ram_per_vm(self) -> float:
        return self.ram_per_host * self.vm_fraction_of_host

    @property
    def vms_per_host(self) -> int:
        return int(math.floor(1 / self.vm_fraction_of_host + 1e-9))

    @property
    def vm_capacity(self) -> int:
        return self.host_count * self.vms_per_host


@dataclass(frozen=True)
class SimPolicy:
    provisioning_period: float = 300.0
    plan_horizon: float = 300.0
    vm_boot_delay: float = 120.0
    service_time: float = 0.100
    response_target: float = 0.500

    def __post_init__(self):
        if not 0 <= self.vm_boot_delay <= self.provisioning_period:
            raise ValueError("vm_boot_delay must lie in [0, provisioning_period]")
        if not 0 < self.service_time <= self.response_target:
            raise ValueError("need 0 < service_time <= response_target")
        if self.plan_horizon <= 0:
            raise ValueError("plan_horizon must be positive")

    @property
    def queue_budget(self) -> int:
        """Largest queue length a new arrival may find and still meet the target."""
        return int(math.floor(self.response_target / self.service_time + 1e-9)) - 1


@dataclass(frozen=True)
class ProvisioningSchedule:
    entries: tuple  # ((request_time, target_vm_count), ...)

    def __post_init__(self):
        entries = tuple((float(t), int(n)) for t, n in self.entries)
        if any(b[0] <= a[0] for a, b in zip(entries, entries[1:])):
            raise ScheduleError("schedule times must be strictly increasing")
        if any(n < 0 for _, n in entries):
            raise ScheduleError("negative VM target")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def constant(cls, start: float, vms: int) -> "ProvisioningSchedule":
        return cls(((start, vms),))

    def shifted(self, delta: int) -> "ProvisioningSchedule":
        return ProvisioningSchedule(tuple((t, max(0, n + delta)) for t, n in self.entries))

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, "entries": [[t, n] for t, n in self.entries]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ProvisioningSchedule":
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError("not a version-1 schedule document")
        return cls(tuple((t, n) for t, n in doc["entries"]))


@dataclass(frozen=True, eq=False)
class SimMetrics:
    vm_hours: float
    served_requests: int
    rejected_requests: int
    interval_start: np.ndarray = field(repr=False)
    vm_seconds: np.ndarray = field(repr=False)
    served: np.ndarray = field(repr=False)
    rejected: np.ndarray = field(repr=False)
    service_time: float = 0.1
    normalized_vm_hours: float | None = None
    normalized_rejections: float | None = None
    constant_vms: int | None = None

    @property
    def offered_requests(self) -> int:
        return self.served_requests + self.rejected_requests

    @property
    def utilization(self) -> np.ndarray:
        busy = self.served * self.service_time
        return np.divide(busy, self.vm_seconds, out=np.zeros_like(self.vm_seconds), where=self.vm_seconds > 0)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "vm_hours": self.vm_hours,
            "served_requests": self.served_requests,
            "rejected_requests": self.rejected_requests,
            "offered_requests": self.offered_requests,
            "normalized_vm_hours": self.normalized_vm_hours,
            "normalized_rejections": self.normalized_rejections,
            "constant_vms": self.constant_vms,
        }

    def write_utilization_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "vms", "offered", "served", "rejected", "utilization"])
            interval = (self.interval_start[1] - self.interval_start[0]) if self.interval_start.size > 1 else 1.0
            for row in zip(self.interval_start, self.vm_seconds, self.served, self.rejected, self.utilization):
                epoch, vmsec, ok, rej, util = row
                w.writerow([fmt_number(epoch), f"{vmsec / interval:.6g}", int(ok + rej), int(ok), int(rej), f"{util:.6g}"])


def request_counts(workload: TimeSeries) -> np.ndarray:
    """Integer requests per interval; cumulative rounding keeps the running total."""
    cum = np.rint(np.cumsum(workload.values))
    return np.diff(np.concatenate([[0.0], cum])).astype(np.int64)


def _check(workload: TimeSeries, schedule: ProvisioningSchedule, dc: DataCenterSpec, policy: SimPolicy):
    ratio = policy.provisioning_period / workload.interval
    if abs(ratio - round(ratio)) > 1e-9:
        raise DataError("workload interval must divide the provisioning period")
    over = [n for _, n in schedule.entries if n > dc.vm_capacity]
    if over:
        raise ScheduleError(f"schedule asks for {max(over)} VMs; data center holds {dc.vm_capacity}")


def run(
    workload: TimeSeries,
    schedule: ProvisioningSchedule,
    dc: DataCenterSpec | None = None,
    policy: SimPolicy | None = None,
) -> SimMetrics:
    dc = dc or DataCenterSpec()
    policy = policy or SimPolicy()
    _check(workload, schedule, dc, policy)
    counts = request_counts(workload)
    times = np.array([t for t, _ in schedule.entries], dtype=np.float64)
    targets = np.array([n for _, n in schedule.entries], dtype=np.int64)
    served, rejected, vm_seconds, drain = kernels.simulate(
        counts, workload.interval, workload.start_epoch, times, targets,
        policy.vm_boot_delay, policy.service_time, policy.queue_budget, dc.vm_capacity, _TIME_EPS,
    )
    return SimMetrics(
        vm_hours=(float(vm_seconds.sum()) + drain) / 3600.0,
        served_requests=int(served.sum()),
        rejected_requests=int(rejected.sum()),
        interval_start=workload.epochs,
        vm_seconds=vm_seconds,
        served=served,
        rejected=rejected,
        service_time=policy.service_time,
    )


def static_baseline(
    workload: TimeSeries, dc: DataCenterSpec | None = None, policy: SimPolicy | None = None
) -> SimMetrics:
    """Fewest constant VMs that serve the whole workload without a rejection."""
    dc = dc or DataCenterSpec()
    policy = policy or SimPolicy()
    start = workload.start_epoch

    def attempt(vms):
        return run(workload, ProvisioningSchedule.constant(start, vms), dc, policy)

    if request_counts(workload).sum() == 0:
        return replace(attempt(0), constant_vms=0)
    full = attempt(dc.vm_capacity)
    if full.rejected_requests:
        peak = float(workload.rates.max())
        deficit = peak * policy.service_time - dc.vm_capacity * dc.cores_per_vm
        raise DataError(
            f"even {dc.vm_capacity} VMs reject {full.rejected_requests} requests "
            f"(peak {peak:.1f} req/s, deficit about {max(deficit, 0):.1f} VMs)"
        )
    guess = max(1, min(dc.vm_capacity, math.ceil(workload.rates.max() * policy.service_time - 1e-9)))
    # bracket lo (rejects) < hi (clean) by galloping from the closed-form guess, then bisect;
    # zero VMs always rejects a non-empty workload
    results = {dc.vm_capacity: full}
    lo, hi = 0, guess
    while True:
        results[hi] = attempt(hi)
        if results[hi].rejected_requests == 0:
            break
        lo, hi = hi, min(dc.vm_capacity, hi * 2)
    step = 1
    while hi - step > lo:
        cand = hi - step
        results[cand] = attempt(cand)
        if results[cand].rejected_requests:
            lo = cand
            break
        hi, step = cand, step * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        results[mid] = attempt(mid)
        if results[mid].rejected_requests:
            lo = mid
        else:
            hi = mid
    return replace(results[hi], constant_vms=hi)


def schedule_from_plans(plans: Sequence[ResourceRequirement], policy: SimPolicy | None = None) -> ProvisioningSchedule:
    """Turn per-window requirements into timed VM targets.

    The first window is pre-provisioned at its start. Scale-ups are requested
    ``vm_boot_delay`` ahead of their window; when that would not fall after the
    previous entry, they are folded into it. Scale-downs act at the boundary.
    """
    policy = policy or SimPolicy()
    if not plans:
        raise ScheduleError("no plans to schedule")
    plans = sorted(plans, key=lambda r: r.valid_from)
    for a, b in zip(plans, plans[1:]):
        if b.valid_from < a.valid_until - 1e-9:
            raise ScheduleError(f"windows overlap at {b.valid_from:g}")
        if b.valid_from > a.valid_until + 1e-9:
            raise ScheduleError(f"gap between windows at {a.valid_until:g}")
    entries = [[plans[0].valid_from, plans[0].vm_count]]
    current = plans[0].vm_count
    for req in plans[1:]:
        n = req.vm_count
        if n > current:
            at = req.valid_from - policy.vm_boot_delay
            if at <= entries[-1][0]:
                entries[-1][1] = max(entries[-1][1], n)
            else:
                entries.append([at, n])
        elif n < current:
            entries.append([req.valid_from, n])
        current = n
    return ProvisioningSchedule(tuple((t, n) for t, n in entries))


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    mse: float | None
    norm_vm_hours: float
    norm_rejections: float


def compare_models(
    metrics: Sequence[tuple[str, SimMetrics]],
    baseline: SimMetrics,
    mse: dict | None = None,
) -> list[ComparisonRow]:
    """Normalise VM-hours by the static baseline and rejections by the worst entry.

    When no entry rejects anything, every normalised rejection is 0.
    """
    if not metrics:
        raise ValueError("need at least one entry")
    mse = mse or {}
    worst = max(m.rejected_requests for _, m in metrics)
    rows = []
    for label, m in metrics:
        vm = m.vm_hours / baseline.vm_hours if baseline.vm_hours > 0 else 0.0
        rej = m.rejected_requests / worst if worst else 0.0
        rows.append(ComparisonRow(label, mse.get(label), vm, rej))
    return rows


def normalized(metrics: SimMetrics, row: ComparisonRow) -> SimMetrics:
    return replace(metrics, normalized_vm_hours=row.norm_vm_hours, normalized_rejections=row.norm_rejections)


def write_comparison_csv(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mse", "norm_vm_hours", "norm_rejections"])
        for r in rows:
            w.writerow([r.model, "" if r.mse is None else f"{r.mse:.5f}",
                        f"{r.norm_vm_hours:.4f}", f"{r.norm_rejections:.2f}"])
