"""Pure-Python kernels. Reference implementation for ``_kernels.pyx``; both must agree."""

import math

import numpy as np

BACKEND = "python"


def css_residuals(w, ar, ma):
    """Conditional one-step residuals of a zero-mean ARMA recursion.

    ``e[t] = w[t] - sum_i ar[i] w[t-1-i] - sum_j ma[j] e[t-1-j]`` for
    ``t >= max(p, q)``; earlier residuals are zero.
    """
    w = np.asarray(w, dtype=np.float64).tolist()
    ar = [float(a) for a in ar]
    ma = [float(b) for b in ma]
    p, q, n = len(ar), len(ma), len(w)
    m = max(p, q)
    e = [0.0] * n
    for t in range(m, n):
        acc = w[t]
        for i in range(p):
            acc -= ar[i] * w[t - 1 - i]
        for j in range(q):
            acc -= ma[j] * e[t - 1 - j]
        e[t] = acc
    return np.array(e, dtype=np.float64)


def css_residuals_jacobian(w, ar, ma):
    """Residuals plus their derivatives w.r.t. ``(ar..., ma...)``, shape ``(n, p+q)``."""
    w = np.asarray(w, dtype=np.float64).tolist()
    ar = [float(a) for a in ar]
    ma = [float(b) for b in ma]
    p, q, n = len(ar), len(ma), len(w)
    k = p + q
    m = max(p, q)
    e = [0.0] * n
    jac = [[0.0] * k for _ in range(n)]
    for t in range(m, n):
        acc = w[t]
        for i in range(p):
            acc -= ar[i] * w[t - 1 - i]
        for j in range(q):
            acc -= ma[j] * e[t - 1 - j]
        e[t] = acc
        row = jac[t]
        for c in range(k):
            d = -w[t - 1 - c] if c < p else -e[t - 1 - (c - p)]
            for j in range(q):
                d -= ma[j] * jac[t - 1 - j][c]
            row[c] = d
    return np.array(e, dtype=np.float64), np.array(jac, dtype=np.float64).reshape(n, k)


def simulate(counts, interval, t0, ev_times, ev_targets, boot_delay, service, budget, capacity, eps):
    """Replay per-interval request counts against a VM schedule.

    Arrivals are evenly spaced inside each interval and go to the live VM with
    the fewest requests in system (lowest index on ties); a request is rejected
    when that number exceeds ``budget``. Schedule entries at or before ``t0``
    are live immediately. Later increases become live ``boot_delay`` after the
    request; decreases cancel pending boots first, then retire the
    highest-index live VMs, which drain their queues.

    Returns ``(served, rejected, vm_seconds)`` per interval and the total drain
    seconds of retired VMs.
    """
    counts = np.asarray(counts, dtype=np.int64).tolist()
    ev_times = [float(x) for x in ev_times]
    ev_targets = [int(x) for x in ev_targets]
    n_int = len(counts)
    n_ev = len(ev_times)
    served = [0] * n_int
    rejected = [0] * n_int
    vm_seconds = [0.0] * n_int

    busy = [0.0] * capacity
    live = 0
    pending = []  # [ready_time, count], ready times non-decreasing
    k = 0
    last = t0
    bucket = 0
    drain = 0.0
    inf = math.inf

    def accrue(time):
        nonlocal last
        if time > last:
            vm_seconds[bucket] += live * (time - last)
            last = time

    def retire(n_remove, time):
        nonlocal live, drain
        for v in range(live - 1, live - 1 - n_remove, -1):
            if busy[v] > time:
                drain += busy[v] - time
        live -= n_remove

    def advance(t):
        nonlocal k, live
        while True:
            next_ev = ev_times[k] if k < n_ev else inf
            next_boot = pending[0][0] if pending else inf
            if next_boot <= next_ev:
                if next_boot > t:
                    return
                accrue(next_boot)
                for v in range(live, live + pending[0][1]):
                    busy[v] = next_boot
                live += pending[0][1]
                pending.pop(0)
            else:
                if next_ev > t:
                    return
                time = next_ev
                target = ev_targets[k]
                k += 1
                accrue(time)
                if time <= t0:
                    if target > live:
                        for v in range(live, target):
                            busy[v] = t0
                        live = target
                    elif target < live:
                        retire(live - target, t0)
                    continue
                committed = live + sum(c for _, c in pending)
                if target > committed:
                    pending.append([time + boot_delay, target - committed])
                elif target < committed:
                    excess = committed - target
                    while excess and pending:
                        take = min(excess, pending[-1][1])
                        pending[-1][1] -= take
                        excess -= take
                        if pending[-1][1] == 0:
                            pending.pop()
                    if excess:
                        retire(excess, time)

    for j in range(n_int):
        t_int = t0 + j * interval
        advance(t_int)
        accrue(t_int)
        bucket = j
        n = counts[j]
        if n <= 0:
            continue
        spacing = interval / n
        ok = 0
        for i in range(n):
            t = t_int + i * spacing
            advance(t)
            best = -1
            bestq = 0
            for v in range(live):
                b = busy[v]
                if b - t <= eps:
                    best = v
                    bestq = 0
                    break
                qv = math.ceil((b - t - eps) / service)
                if best < 0 or qv < bestq:
                    best = v
                    bestq = qv
            if best < 0 or bestq > budget:
                continue
            ok += 1
            busy[best] = (t if bestq == 0 else busy[best]) + service
        served[j] = ok
        rejected[j] = n - ok

    t_end = t0 + n_int * interval
    advance(t_end)
    accrue(t_end)
    return (
        np.array(served, dtype=np.int64),
        np.array(rejected, dtype=np.int64),
        np.array(vm_seconds, dtype=np.float64),
        drain,
    )
