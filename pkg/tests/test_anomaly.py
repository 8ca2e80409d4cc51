import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import first_passage_by_paths
from predscale.anomaly import (
    Alarm,
    BaselineProfile,
    Detector,
    MarkovChain,
    build_baseline,
    detect,
    fit_markov,
    perturb_markov,
    predict_anomaly,
    sample_markov,
    weekday_slot,
)
from predscale.trace import TimeSeries, synth_diurnal


def flat_history(days=7, rate=10.0, noise=1.0, seed=0, interval=60.0):
    rng = np.random.default_rng(seed)
    n = int(days * 86400 / interval)
    return TimeSeries(np.clip(rate + rng.normal(0, noise, n), 0, None) * interval, interval)


def test_weekday_slot():
    assert weekday_slot(0, 300) == (3, 0)  # 1970-01-01 was a Thursday
    assert weekday_slot(1409529600 + 3600, 300) == (0, 12)  # Monday 01:00


def test_baseline_cells_and_fill():
    hist = TimeSeries([60.0, 120.0, 180.0, 240.0, 300.0], 60.0, 0.0)
    prof = build_baseline(hist, slot_seconds=300)
    assert prof.expected(0) == (3.0, pytest.approx(np.std([1.0, 2.0, 3.0, 4.0, 5.0])))
    assert prof.count[3, 0] == 5 and not prof.filled[3, 0]
    # same slot on another weekday borrows the pooled slot, unseen slots the global stats
    assert prof.filled[4, 0] and prof.expected(86400) == prof.expected(0)
    assert prof.expected(600) == (pytest.approx(prof.global_mean), pytest.approx(prof.global_std))


def test_baseline_json_round_trip():
    prof = build_baseline(flat_history(days=2), 300)
    again = BaselineProfile.from_dict(json.loads(json.dumps(prof.to_dict())))
    for name in ("mean", "std", "count", "filled"):
        assert np.array_equal(getattr(again, name), getattr(prof, name))


def test_no_alarms_on_baseline_and_alarm_on_spike():
    hist = flat_history(days=7, seed=1)
    prof = build_baseline(hist, 300)
    quiet = flat_history(days=1, seed=2).slice(0, 1440)
    quiet = TimeSeries(quiet.values, 60.0, 7 * 86400.0)
    assert detect(quiet, prof, k=5) == []

    spiked = quiet.values.copy()
    spiked[100:105] *= 10
    alarms = detect(TimeSeries(spiked, 60.0, quiet.start_epoch), prof, k=5, min_run=2)
    assert [a.timestamp for a in alarms] == [quiet.epochs[i] for i in range(101, 105)]
    assert all(a.direction == "above" and a.severity > 5 for a in alarms)
    assert alarms[0].transiency == 1.0  # no run history for the cell


def test_min_run_and_direction_switch():
    prof = build_baseline(TimeSeries(np.full(10, 600.0), 60.0), 300)
    det = Detector(prof, k=3, min_run=2)
    seq = [10, 100, 0, 0, 100, 100, 10]
    out = [det.feed(60.0 * i, r, 60.0) for i, r in enumerate(seq)]
    assert [a is not None for a in out] == [False, False, False, True, False, True, False]
    assert out[3].direction == "below"


def test_transiency_counts_short_runs():
    prof = build_baseline(TimeSeries(np.full(5, 600.0), 60.0), 300)
    det = Detector(prof, k=3, min_run=1, cycle_seconds=300)
    for i, r in enumerate([100, 10, 100, 100, 100, 100, 100, 100, 10]):
        det.feed(0.0, r, 60.0)  # same cell every time
    # runs of length 1 (60 s, short) and 6 (360 s, long)
    assert det.transiency((3, 0)) == 0.5


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_detection_is_scale_invariant(c, seed):
    hist = flat_history(days=2, seed=seed, interval=300.0)
    rng = np.random.default_rng(seed + 1)
    obs = TimeSeries(np.clip(10 + rng.normal(0, 3, 200), 0, None) * 300.0, 300.0, 2 * 86400.0)
    base = detect(obs, build_baseline(hist, 300))
    scaled = detect(TimeSeries(obs.values * c, 300.0, obs.start_epoch),
                    build_baseline(TimeSeries(hist.values * c, 300.0), 300))
    assert [a.timestamp for a in scaled] == [a.timestamp for a in base]


def test_alarm_count_monotone_in_k():
    hist = flat_history(days=7, seed=4)
    prof = build_baseline(hist, 300)
    rng = np.random.default_rng(9)
    obs = TimeSeries(np.clip(10 + rng.standard_t(2, 3000), 0, None) * 60.0, 60.0, 7 * 86400.0)
    counts = [len(detect(obs, prof, k=k)) for k in (1.0, 1.5, 2.0, 3.0, 4.0, 6.0)]
    assert counts == sorted(counts, reverse=True)


def test_alarm_json_round_trip():
    a = Alarm(12.0, 5.5, 2.0, 3.5, 0.25, "above")
    assert set(a.to_dict()) == {"ts", "observed", "expected", "severity", "transiency", "direction"}
    assert Alarm.from_dict(json.loads(a.to_json())) == a


def test_fit_markov_is_row_stochastic_and_flags_top_state():
    rates = synth_diurnal(2, 100, 50, 5, seed=3, interval=60).rates
    chain = fit_markov(rates, 5, 0.95)
    assert np.allclose(chain.transition.sum(axis=1), 1.0, atol=1e-12)
    assert chain.anomalous_states == (4,)
    assert chain.state_of(-1e9) == 0 and chain.state_of(1e9) == 4


def test_fit_markov_constant_history_has_valid_edges():
    chain = fit_markov(np.full(50, 3.0), 4, 0.9)
    assert np.all(np.diff(chain.bin_edges) > 0)


def test_predict_anomaly_simple_chain():
    chain = MarkovChain(np.array([0.0, 1.0, 2.0]), np.array([[0.9, 0.1], [0.5, 0.5]]), (1,))
    f = predict_anomaly(chain, 0.5, 3)
    assert f.probability == pytest.approx(1 - 0.9**3, abs=1e-12)
    assert predict_anomaly(chain, 1.5, 3).probability == 1.0
    # uniform row has zero confidence
    assert predict_anomaly(chain, 1.5, 1).confidence == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_predict_anomaly_matches_path_enumeration(n, horizon, seed):
    rng = np.random.default_rng(seed)
    trans = rng.dirichlet(np.ones(n), size=n)
    anomalous = tuple(np.flatnonzero(rng.random(n) < 0.4))
    chain = MarkovChain(np.arange(n + 1.0), trans, anomalous)
    for s in range(n):
        got = predict_anomaly(chain, s + 0.5, horizon).probability
        assert got == pytest.approx(first_passage_by_paths(trans, s, anomalous, horizon), abs=1e-9)


def test_perturb_raises_anomaly_probability():
    rates = synth_diurnal(2, 100, 50, 5, seed=3, interval=60).rates
    chain = fit_markov(rates, 5, 0.95)
    hot = perturb_markov(chain, 0.5, chain.anomalous_states)
    assert np.allclose(hot.transition.sum(axis=1), 1.0, atol=1e-9)
    r = float(np.mean(chain.bin_edges[1:3]))
    assert predict_anomaly(hot, r, 10).probability > predict_anomaly(chain, r, 10).probability


def test_markov_round_trip_and_validation():
    chain = fit_markov(np.arange(100.0), 3, 0.9)
    again = MarkovChain.from_dict(json.loads(json.dumps(chain.to_dict())))
    assert np.array_equal(again.transition, chain.transition)
    assert again.anomalous_states == chain.anomalous_states
    with pytest.raises(ValueError):
        MarkovChain(np.array([0.0, 1.0, 2.0]), np.array([[0.5, 0.6], [0.5, 0.5]]))


def test_sample_markov_is_seeded_and_in_range():
    chain = fit_markov(np.arange(100.0), 4, 0.9)
    a = sample_markov(chain, 500, seed=7)
    assert np.array_equal(a, sample_markov(chain, 500, seed=7))
    assert a.min() >= chain.bin_edges[0] and a.max() <= chain.bin_edges[-1]
