import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cheapest_assignment
from predscale.anomaly import Alarm
from predscale.errors import DataError, InfeasibleError
from predscale.planner import (
    ProviderOffer,
    QosPolicy,
    ResourceRequirement,
    load_catalog,
    plan_window,
    required_vms,
    select_offers,
)
from predscale.trace import TimeSeries

QOS = QosPolicy()


def req(n, cores=1, ram=2.0):
    return ResourceRequirement(n, cores, ram, 1000.0, 1300.0)


def test_required_vms_examples():
    assert required_vms(50, QOS) == 5
    assert required_vms(51, QOS) == 6
    assert required_vms(0, QOS) == 0
    assert required_vms(0.01, QOS) == 1
    assert required_vms(50, QOS, headroom=1.2) == 6
    assert required_vms(80, QosPolicy(cores_per_vm=2)) == 4


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e5), st.floats(0, 1e5))
def test_required_vms_monotone(a, b):
    lo, hi = sorted((a, b))
    assert required_vms(lo, QOS) <= required_vms(hi, QOS)


def test_plan_window_uses_peak_and_persistent_alarms():
    fc = TimeSeries([100.0, 250.0, 150.0], 5.0, 1000.0)  # peak 50 req/s
    assert plan_window(fc, QOS).vm_count == 5
    persistent = Alarm(990.0, 120.0, 40.0, 8.0, 0.1, "above")
    transient = Alarm(990.0, 300.0, 40.0, 8.0, 0.9, "above")
    below = Alarm(990.0, 300.0, 40.0, -8.0, 0.0, "below")
    assert plan_window(fc, QOS, [persistent]).vm_count == 12
    assert plan_window(fc, QOS, [transient, below]).vm_count == 5
    r = plan_window(fc, QOS)
    assert (r.valid_from, r.valid_until) == (1000.0, 1015.0)


def test_select_offers_example():
    catalog = [
        ProviderOffer("small", 2, 4.0, 0.10, 60, 10),
        ProviderOffer("big", 8, 16.0, 0.35, 60, 10),
        ProviderOffer("slow", 8, 16.0, 0.01, 900, 10),
    ]
    plan = select_offers(req(10), catalog, deadline_seconds=300)
    # 10 VMs: one big (8 slots) + one small (2 slots) = 0.45
    assert plan.total_hourly_cost == pytest.approx(0.45)
    assert {(i.offer_id, i.vm_count) for i in plan.items} == {("big", 1), ("small", 1)}
    assert all(i.start_request_time == 940.0 for i in plan.items)
    assert plan.optimal


def test_select_offers_tie_prefers_faster_boot():
    catalog = [ProviderOffer("a", 1, 2.0, 1.0, 100, 5), ProviderOffer("b", 1, 2.0, 1.0, 50, 5)]
    plan = select_offers(req(2), catalog, 300)
    assert [i.offer_id for i in plan.items] == ["b"]


def test_select_offers_infeasible_reasons():
    with pytest.raises(InfeasibleError) as e:
        select_offers(req(1, cores=4), [ProviderOffer("a", 2, 64.0, 1.0, 10, 5)], 300)
    assert e.value.constraint == "shape"
    with pytest.raises(InfeasibleError) as e:
        select_offers(req(1), [ProviderOffer("a", 2, 4.0, 1.0, 500, 5)], 300)
    assert e.value.constraint == "deadline"
    with pytest.raises(InfeasibleError) as e:
        select_offers(req(30), [ProviderOffer("a", 2, 4.0, 1.0, 10, 5)], 300)
    assert e.value.constraint == "availability" and e.value.exit_code == 3
    with pytest.raises(DataError):
        select_offers(req(1), [], 300)


def test_select_offers_zero_vms():
    plan = select_offers(req(0), [ProviderOffer("a", 2, 4.0, 1.0, 10, 5)], 300)
    assert plan.items == () and plan.total_hourly_cost == 0.0


def test_greedy_fallback_is_feasible():
    catalog = [ProviderOffer(f"o{i}", 1 + i, 4.0 * (1 + i), 0.1 * (1 + i) ** 0.9, 30, 400) for i in range(5)]
    plan = select_offers(req(1500), catalog, 300)
    assert not plan.optimal
    slots = {o.offer_id: o.slots(req(1)) for o in catalog}
    assert sum(slots[i.offer_id] * i.vm_count for i in plan.items) >= 1500


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_select_offers_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    catalog = [
        ProviderOffer(f"o{i}", int(rng.integers(1, 9)), float(rng.choice([1, 2, 4, 8, 16])),
                      round(float(rng.uniform(0.01, 1.0)), 3), float(rng.choice([30, 60, 120, 600])),
                      int(rng.integers(0, 6)))
        for i in range(int(rng.integers(1, 6)))
    ]
    r = req(int(rng.integers(1, 12)), cores=int(rng.integers(1, 3)), ram=float(rng.choice([1.0, 2.0])))
    best = cheapest_assignment(r.vm_count, r.cores_per_vm, r.ram_per_vm, catalog, 300)
    if best is None:
        with pytest.raises(InfeasibleError):
            select_offers(r, catalog, 300)
    else:
        assert select_offers(r, catalog, 300).total_hourly_cost == pytest.approx(best, abs=1e-9)


def test_load_catalog(tmp_path):
    p = tmp_path / "c.json"
    offer = ProviderOffer("a", 2, 4.0, 0.1, 60, 3)
    p.write_text(json.dumps([offer.to_dict()]))
    assert load_catalog(p) == [offer]
    p.write_text(json.dumps({"id": "a"}))
    with pytest.raises(DataError):
        load_catalog(p)
