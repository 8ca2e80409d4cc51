"""Independent reference computations used by the tests.

None of these call into the code paths they check.
"""

from collections import deque
from fractions import Fraction
import itertools

import numpy as np


def live_count_timeline(entries, t0, boot):
    """Exact ``[(time, live_vms)]`` change points implied by a schedule.

    Pending boots are tracked as a list of [ready, count]; decreases cancel the
    most recent pending boots before retiring live VMs.
    """
    t0 = Fraction(t0)
    boot = Fraction(boot)
    live = 0
    pending = []
    changes = []
    events = [(Fraction(t), n) for t, n in entries]

    def flush_boots(until):
        nonlocal live
        while pending and pending[0][0] <= until:
            ready, cnt = pending.pop(0)
            live += cnt
            changes.append((ready, live))

    for time, target in events:
        flush_boots(time)
        if time <= t0:
            live = target
            changes.append((t0, live))
            continue
        committed = live + sum(c for _, c in pending)
        if target > committed:
            pending.append([time + boot, target - committed])
        elif target < committed:
            excess = committed - target
            while excess and pending:
                take = min(excess, pending[-1][1])
                pending[-1][1] -= take
                excess -= take
                if pending[-1][1] == 0:
                    pending.pop()
            if excess:
                live -= excess
                changes.append((time, live))
    flush_boots(Fraction(10**12))
    return changes


def replay(counts, interval, t0, entries, boot, service, target):
    """Per-arrival replay in exact rational arithmetic.

    Returns ``(served, rejected, vm_hours)``.
    """
    interval = Fraction(interval)
    t0 = Fraction(t0)
    service = Fraction(service)
    target = Fraction(target)
    changes = live_count_timeline(entries, t0, boot)
    t_end = t0 + interval * len(counts)

    queues = []  # one deque of completion times per live VM, index order
    drain = Fraction(0)
    ci = 0
    served = rejected = 0

    def apply_changes(t):
        nonlocal ci, drain
        while ci < len(changes) and changes[ci][0] <= t:
            when, live = changes[ci]
            ci += 1
            while len(queues) < live:
                queues.append(deque())
            while len(queues) > live:
                q = queues.pop()
                if q and q[-1] > when:
                    drain += q[-1] - when

    for j, n in enumerate(counts):
        n = int(n)
        for i in range(n):
            t = t0 + j * interval + i * interval / n
            apply_changes(t)
            best = None
            for idx, q in enumerate(queues):
                while q and q[0] <= t:
                    q.popleft()
                if best is None or len(q) < len(queues[best]):
                    best = idx
            if best is None or len(queues[best]) * service + service > target:
                rejected += 1
                continue
            q = queues[best]
            start = q[-1] if q else t
            q.append(start + service)
            served += 1
    apply_changes(t_end)

    # VM-seconds: integral of the live count over [t0, t_end]
    area = Fraction(0)
    live, last = 0, t0
    for when, count in changes:
        when = min(max(when, t0), t_end)
        area += live * (when - last)
        live, last = count, when
    area += live * (t_end - last)
    return served, rejected, float((area + drain) / 3600)


def first_passage_by_paths(transition, start, anomalous, horizon):
    """P(hit an anomalous state within ``horizon`` steps) by enumerating all paths."""
    transition = np.asarray(transition, dtype=float)
    n = transition.shape[0]
    anomalous = set(anomalous)
    if start in anomalous:
        return 1.0
    total = 0.0
    for path in itertools.product(range(n), repeat=horizon):
        prob = 1.0
        prev = start
        for s in path:
            prob *= transition[prev, s]
            prev = s
        if any(s in anomalous for s in path):
            total += prob
    return total


def cheapest_assignment(vm_count, cores_per_vm, ram_per_vm, catalog, deadline):
    """Minimum cost over every instance-count assignment, or None when infeasible."""
    usable = []
    for o in catalog:
        if o.boot_delay > deadline:
            continue
        per = min(o.cores // cores_per_vm, int(o.ram_gb // ram_per_vm))
        if per >= 1:
            usable.append((o, per))
    best = None
    for counts in itertools.product(*(range(o.available_count + 1) for o, _ in usable)):
        if sum(c * per for c, (_, per) in zip(counts, usable)) < vm_count:
            continue
        cost = sum(c * o.price_per_hour for c, (o, _) in zip(counts, usable))
        if best is None or cost < best:
            best = cost
    return best


def simulate_arma(ar, ma, n, seed, burn=500, mean=0.0):
    """ARMA sample path with N(0, 1) innovations, plus-sign MA convention."""
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n + burn)
    x = np.zeros(n + burn)
    p, q = len(ar), len(ma)
    for t in range(n + burn):
        acc = e[t]
        for i in range(p):
            if t - 1 - i >= 0:
                acc += ar[i] * x[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                acc += ma[j] * e[t - 1 - j]
        x[t] = acc
    return x[burn:] + mean


def small_scenarios(count, seed=2024):
    """Random simulator instances with at most 3 VMs, 600 s and 30 req/s.

    Yields ``(counts, t0, entries)`` with integer per-5-second counts.
    """
    rng = np.random.default_rng(seed)
    for k in range(count):
        duration = int(rng.choice([60, 300, 600]))
        t0 = float(rng.choice([0.0, 1000.0, 86395.0]))
        n = duration // 5
        style = k % 4
        if style == 0:  # steady
            rates = np.full(n, int(rng.integers(1, 31)))
        elif style == 1:  # burst
            rates = rng.integers(0, 8, n)
            a = int(rng.integers(0, n))
            rates[a:a + int(rng.integers(1, 12))] = 30
        else:
            rates = rng.integers(0, 31, n)
        counts = (rates * 5).astype(np.int64)
        entries = [(t0 - float(rng.choice([0, 100])), int(rng.integers(0, 4)))]
        times = sorted(set(float(t0 + 5 * rng.integers(1, n) + rng.choice([0.0, 2.5]))
                           for _ in range(int(rng.integers(0, 5)))))
        entries += [(t, int(rng.integers(0, 4))) for t in times]
        yield counts, t0, entries
