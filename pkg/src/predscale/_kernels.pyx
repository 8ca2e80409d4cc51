# cython: language_level=3
"""Compiled kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, INFINITY

cnp.import_array()

BACKEND = "cython"


def css_residuals(w, ar, ma):
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] arv = np.ascontiguousarray(ar, dtype=np.float64)
    cdef double[::1] mav = np.ascontiguousarray(ma, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0], p = arv.shape[0], q = mav.shape[0]
    cdef Py_ssize_t m = p if p > q else q
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] e = out
    cdef Py_ssize_t t, i
    cdef double acc
    for t in range(m, n):
        acc = wv[t]
        for i in range(p):
            acc -= arv[i] * wv[t - 1 - i]
        for i in range(q):
            acc -= mav[i] * e[t - 1 - i]
        e[t] = acc
    return out


def css_residuals_jacobian(w, ar, ma):
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] arv = np.ascontiguousarray(ar, dtype=np.float64)
    cdef double[::1] mav = np.ascontiguousarray(ma, dtype=np.float64)
    cdef Py_ssize_t n = wv.shape[0], p = arv.shape[0], q = mav.shape[0]
    cdef Py_ssize_t k = p + q
    cdef Py_ssize_t m = p if p > q else q
    out_e = np.zeros(n, dtype=np.float64)
    out_j = np.zeros((n, k), dtype=np.float64)
    cdef double[::1] e = out_e
    cdef double[:, ::1] jac = out_j
    cdef Py_ssize_t t, i, c
    cdef double acc, d
    for t in range(m, n):
        acc = wv[t]
        for i in range(p):
            acc -= arv[i] * wv[t - 1 - i]
        for i in range(q):
            acc -= mav[i] * e[t - 1 - i]
        e[t] = acc
        for c in range(k):
            if c < p:
                d = -wv[t - 1 - c]
            else:
                d = -e[t - 1 - (c - p)]
            for i in range(q):
                d -= mav[i] * jac[t - 1 - i, c]
            jac[t, c] = d
    return out_e, out_j


cdef struct SimState:
    double* busy
    Py_ssize_t live
    double last
    double drain
    double* vm_seconds
    Py_ssize_t bucket


cdef inline void _accrue(SimState* s, double time) noexcept nogil:
    if time > s.last:
        s.vm_seconds[s.bucket] += s.live * (time - s.last)
        s.last = time


cdef inline void _retire(SimState* s, Py_ssize_t n_remove, double time) noexcept nogil:
    cdef Py_ssize_t v
    for v in range(s.live - n_remove, s.live):
        if s.busy[v] > time:
            s.drain += s.busy[v] - time
    s.live -= n_remove


def simulate(counts, double interval, double t0, ev_times, ev_targets,
             double boot_delay, double service, long budget, Py_ssize_t capacity, double eps):
    cdef cnp.int64_t[::1] cv = np.ascontiguousarray(counts, dtype=np.int64)
    cdef double[::1] evt = np.ascontiguousarray(ev_times, dtype=np.float64)
    cdef cnp.int64_t[::1] evg = np.ascontiguousarray(ev_targets, dtype=np.int64)
    cdef Py_ssize_t n_int = cv.shape[0], n_ev = evt.shape[0]

    served_a = np.zeros(n_int, dtype=np.int64)
    rejected_a = np.zeros(n_int, dtype=np.int64)
    vmsec_a = np.zeros(n_int, dtype=np.float64)
    busy_a = np.zeros(max(capacity, 1), dtype=np.float64)
    pend_ready_a = np.zeros(max(n_ev, 1), dtype=np.float64)
    pend_count_a = np.zeros(max(n_ev, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] served = served_a
    cdef cnp.int64_t[::1] rejected = rejected_a
    cdef double[::1] vmsec = vmsec_a
    cdef double[::1] busy = busy_a
    cdef double[::1] pend_ready = pend_ready_a
    cdef cnp.int64_t[::1] pend_count = pend_count_a

    cdef SimState s
    s.busy = &busy[0]
    s.live = 0
    s.last = t0
    s.drain = 0.0
    s.vm_seconds = &vmsec[0]
    s.bucket = 0

    cdef Py_ssize_t head = 0, tail = 0  # pending boots live in [head, tail)
    cdef Py_ssize_t k = 0, j, i, v, best, stage
    cdef long n, ok, bestq, qv, target, committed, excess, take
    cdef double t, t_int, spacing, next_ev, next_boot, time, b, t_end, limit

    t_end = t0 + n_int * interval
    with nogil:
        for stage in range(2 * n_int + 1):
            # even stages: event catch-up to an interval boundary (or the end);
            # odd stages: arrivals of interval stage // 2
            j = stage // 2
            if stage % 2 == 1:
                n = cv[j]
                if n <= 0:
                    continue
                t_int = t0 + j * interval
                spacing = interval / n
                ok = 0
            else:
                n = 1
                ok = 0
                spacing = 0.0
                t_int = t0 + j * interval if j < n_int else t_end
            for i in range(n):
                t = t_int + i * spacing
                # apply schedule entries and boot completions due by t
                while True:
                    next_ev = evt[k] if k < n_ev else INFINITY
                    next_boot = pend_ready[head] if head < tail else INFINITY
                    if next_boot <= next_ev:
                        if next_boot > t:
                            break
                        _accrue(&s, next_boot)
                        for v in range(s.live, s.live + pend_count[head]):
                            busy[v] = next_boot
                        s.live += pend_count[head]
                        head += 1
                    else:
                        if next_ev > t:
                            break
                        time = next_ev
                        target = evg[k]
                        k += 1
                        _accrue(&s, time)
                        if time <= t0:
                            if target > s.live:
                                for v in range(s.live, target):
                                    busy[v] = t0
                                s.live = target
                            elif target < s.live:
                                _retire(&s, s.live - target, t0)
                            continue
                        committed = s.live
                        for v in range(head, tail):
                            committed += pend_count[v]
                        if target > committed:
                            pend_ready[tail] = time + boot_delay
                            pend_count[tail] = target - committed
                            tail += 1
                        elif target < committed:
                            excess = committed - target
                            while excess > 0 and tail > head:
                                take = excess if excess < pend_count[tail - 1] else pend_count[tail - 1]
                                pend_count[tail - 1] -= take
                                excess -= take
                                if pend_count[tail - 1] == 0:
                                    tail -= 1
                            if excess > 0:
                                _retire(&s, excess, time)
                if stage % 2 == 0:
                    _accrue(&s, t)
                    if j < n_int:
                        s.bucket = j
                    continue
                best = -1
                bestq = 0
                for v in range(s.live):
                    b = busy[v]
                    if b - t <= eps:
                        best = v
                        bestq = 0
                        break
                    qv = <long>ceil((b - t - eps) / service)
                    if best < 0 or qv < bestq:
                        best = v
                        bestq = qv
                if best < 0 or bestq > budget:
                    continue
                ok += 1
                if bestq == 0:
                    busy[best] = t + service
                else:
                    busy[best] = busy[best] + service
            if stage % 2 == 1:
                served[j] = ok
                rejected[j] = n - ok
    return served_a, rejected_a, vmsec_a, s.drain
