"""Capacity sizing under a response-time QoS and cost-minimal offer selection."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Sequence

from .anomaly import Alarm
from .errors import DataError, InfeasibleError
from .trace import TimeSeries

SCHEMA_VERSION = 1
EXACT_SEARCH_LIMIT = 100_000
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class QosPolicy:
    service_time: float = 0.100
    response_target: float = 0.500
    cores_per_vm: int = 1

    def __post_init__(self):
        if not 0 < self.service_time <= self.response_target:
            raise ValueError("need 0 < service_time <= response_target")
        if self.cores_per_vm < 1:
            raise ValueError("cores_per_vm must be >= 1")


@dataclass(frozen=True)
class ResourceRequirement:
    vm_count: int
    cores_per_vm: int
    ram_per_vm: float
    valid_from: float
    valid_until: float

    def __post_init__(self):
        if self.vm_count < 0:
            raise ValueError("vm_count must be >= 0")
        if not self.valid_from < self.valid_until:
            raise ValueError("valid_from must precede valid_until")

    def to_dict(self) -> dict:
        return {
            "vm_count": self.vm_count,
            "cores_per_vm": self.cores_per_vm,
            "ram_per_vm": self.ram_per_vm,
            "valid_from": self.valid_from,
            "valid_until": self.valid_until,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ResourceRequirement":
        return cls(int(doc["vm_count"]), int(doc["cores_per_vm"]), float(doc["ram_per_vm"]),
                   float(doc["valid_from"]), float(doc["valid_until"]))


@dataclass(frozen=True)
class ProviderOffer:
    offer_id: str
    cores: int
    ram_gb: float
    price_per_hour: float
    boot_delay: float
    available_count: int

    def __post_init__(self):
        if self.price_per_hour < 0 or self.boot_delay < 0 or self.available_count < 0:
            raise ValueError(f"offer {self.offer_id}: negative price, boot delay or availability")

    def slots(self, req: ResourceRequirement) -> int:
        """How many requested VMs one instance of this offer can host."""
        by_cores = self.cores // req.cores_per_vm
        by_ram = math.floor(self.ram_gb / req.ram_per_vm) if req.ram_per_vm > 0 else by_cores
        return max(0, min(by_cores, by_ram))

    def to_dict(self) -> dict:
        return {
            "id": self.offer_id,
            "cores": self.cores,
            "ram_gb": self.ram_gb,
            "price_per_hour": self.price_per_hour,
            "boot_delay": self.boot_delay,
            "available_count": self.available_count,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProviderOffer":
        return cls(str(doc["id"]), int(doc["cores"]), float(doc["ram_gb"]),
                   float(doc["price_per_hour"]), float(doc["boot_delay"]), int(doc["available_count"]))


@dataclass(frozen=True)
class PlanItem:
    offer_id: str
    vm_count: int
    start_request_time: float


@dataclass(frozen=True)
class ProvisioningPlan:
    items: tuple
    total_hourly_cost: float
    optimal: bool = True

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "items": [
                {"offer_id": i.offer_id, "vm_count": i.vm_count, "start_request_time": i.start_request_time}
                for i in self.items
            ],
            "total_hourly_cost": self.total_hourly_cost,
            "optimal": self.optimal,
        }


def load_catalog(path) -> list[ProviderOffer]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise DataError(f"{path}: catalog must be a JSON array of offers")
    try:
        return [ProviderOffer.from_dict(o) for o in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad offer ({exc})") from exc


# -- sizing -------------------------------------------------------------------------


def required_vms(peak_rate: float, qos: QosPolicy, headroom: float = 1.0, min_vms: int | None = None) -> int:
    """VMs needed when one core serves ``1 / service_time`` requests per second."""
    if peak_rate < 0:
        raise ValueError("peak_rate must be non-negative")
    if headroom < 1:
        raise ValueError("headroom must be >= 1")
    if min_vms is None:
        min_vms = 1 if peak_rate > 0 else 0
    need = math.ceil(headroom * peak_rate * qos.service_time / qos.cores_per_vm - _CEIL_EPS)
    return max(need, min_vms, 0)


def plan_window(
    forecast: TimeSeries,
    qos: QosPolicy,
    alarms: Sequence[Alarm] = (),
    headroom: float = 1.0,
    ram_per_vm: float = 2.0,
    override_transiency: float = 0.5,
) -> ResourceRequirement:
    """Size the window for its peak forecast rate.

    An upward alarm that is unlikely to be transient (transiency below
    ``override_transiency``) replaces the forecast peak when its observed rate
    is higher.
    """
    if forecast is None or len(forecast) == 0:
        raise DataError("empty forecast")
    peak = float(forecast.rates.max())
    for alarm in alarms:
        if alarm.direction == "above" and alarm.transiency < override_transiency:
            peak = max(peak, alarm.observed)
    return ResourceRequirement(
        vm_count=required_vms(peak, qos, headroom),
        cores_per_vm=qos.cores_per_vm,
        ram_per_vm=ram_per_vm,
        valid_from=forecast.start_epoch,
        valid_until=forecast.end_epoch,
    )


# -- offer selection ----------------------------------------------------------------


def _plan_key(assign, offers):
    cost = sum(n * o.price_per_hour for n, o in zip(assign, offers))
    used = [o for n, o in zip(assign, offers) if n]
    slowest = max((o.boot_delay for o in used), default=0.0)
    return (round(cost, 9), slowest, tuple(sorted(o.offer_id for o in used)))


def select_offers(
    req: ResourceRequirement, catalog: Sequence[ProviderOffer], deadline_seconds: float
) -> ProvisioningPlan:
    """Cheapest set of instances whose VM slots cover ``req.vm_count``.

    An offer qualifies when one instance hosts at least one requested VM and it
    boots within ``deadline_seconds``. Small instances are solved by exhaustive
    enumeration; beyond ``EXACT_SEARCH_LIMIT`` combinations a greedy pass by
    price per slot is used and the plan is marked non-optimal. Equal costs
    prefer the faster-booting plan, then lexicographic offer ids.
    """
    if not catalog:
        raise DataError("empty offer catalog")
    if req.vm_count == 0:
        return ProvisioningPlan((), 0.0, True)
    fitting = [o for o in catalog if o.slots(req) >= 1]
    if not fitting:
        raise InfeasibleError("no offer meets the per-VM cores/RAM", "shape")
    offers = sorted((o for o in fitting if o.boot_delay <= deadline_seconds), key=lambda o: o.offer_id)
    if not offers:
        raise InfeasibleError(f"no qualifying offer boots within {deadline_seconds:g} s", "deadline")
    slots = [o.slots(req) for o in offers]
    capacity = sum(s * o.available_count for s, o in zip(slots, offers))
    if capacity < req.vm_count:
        raise InfeasibleError(
            f"available capacity of {capacity} VMs is below the required {req.vm_count}", "availability"
        )

    # instances of offer i worth considering: enough to cover the request alone
    limits = [min(o.available_count, -(-req.vm_count // s)) for o, s in zip(offers, slots)]
    combos = math.prod(n + 1 for n in limits)
    best = None
    if combos <= EXACT_SEARCH_LIMIT:
        for assign in itertools.product(*(range(n + 1) for n in limits)):
            if sum(a * s for a, s in zip(assign, slots)) < req.vm_count:
                continue
            key = _plan_key(assign, offers)
            if best is None or key < best[0]:
                best = (key, assign)
        optimal = True
    else:
        order = sorted(range(len(offers)),
                       key=lambda i: (offers[i].price_per_hour / slots[i], offers[i].boot_delay, offers[i].offer_id))
        assign = [0] * len(offers)
        left = req.vm_count
        for i in order:
            if left <= 0:
                break
            take = min(limits[i], -(-left // slots[i]))
            assign[i] = take
            left -= take * slots[i]
        best = (_plan_key(assign, offers), tuple(assign))
        optimal = False

    assign = best[1]
    items = tuple(
        PlanItem(o.offer_id, n, req.valid_from - o.boot_delay) for o, n in zip(offers, assign) if n
    )
    cost = sum(n * o.price_per_hour for n, o in zip(assign, offers))
    return ProvisioningPlan(items, cost, optimal)
