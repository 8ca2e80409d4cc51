"""Pipeline stages behind the command-line subcommands.

Every stage writes its artifacts under the output directory so it can be
rerun on its own; all outputs are deterministic for a given config and seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import anomaly, planner, simcore, trace, tsmodel
from .config import ExperimentConfig, derive_seed
from .errors import DataError, PredscaleError
from .trace import TimeSeries

logger = logging.getLogger(__name__)

ALARMS_RAISED = 5  # cmd_detect exit code when at least one alarm fired


class StageError(PredscaleError):
    """Wraps a failure with the name of the stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.exit_code = getattr(cause, "exit_code", 4)


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def model_slug(order: tsmodel.ArimaOrder) -> str:
    return f"arima_{order.p}_{order.d}_{order.q}"


# -- ingest ---------------------------------------------------------------------


def load_series(cfg: ExperimentConfig) -> tuple[TimeSeries, dict | None]:
    """Workload series from the configured source, plus an ingestion report for traces."""
    t = cfg.raw["trace"]
    if t["source"] == "synthetic":
        s = t["synthetic"]
        series = trace.synth_diurnal(
            s["days"], s["base_rate"], s["amplitude"], s["noise_sigma"],
            derive_seed(cfg.seed, "trace"), s["interval"], s["start_epoch"],
        )
        return series, None
    hourly, start, report = trace.read_pagecounts_dir(t["directory"], t["project_code"])
    series = trace.disaggregate(hourly, cfg.disaggregation, start)
    doc = report.to_dict()
    doc["hours"] = len(hourly)
    doc["hourly_counts"] = [h.count for h in hourly]
    doc["samples"] = len(series)
    return series, doc


def cmd_ingest(cfg: ExperimentConfig) -> Path:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    with _stage("ingest"):
        series, report = load_series(cfg)
        path = out / "series.csv"
        trace.write_series_csv(series, path)
        if report is not None:
            write_json(out / "ingest_report.json", report)
    return path


# -- experiment -------------------------------------------------------------------


@dataclass
class ModelRun:
    order: tsmodel.ArimaOrder
    report: tsmodel.FitReport
    forecast: TimeSeries
    requirements: list
    schedule: simcore.ProvisioningSchedule
    metrics: simcore.SimMetrics


def _window_plans(
    cfg: ExperimentConfig,
    model: tsmodel.ArimaModel,
    series: TimeSeries,
    test_start: int,
    alarms: list,
) -> tuple[TimeSeries, list]:
    """Forecast and size every provisioning window of the test span.

    The window starting at ``W`` is planned at ``W - vm_boot_delay`` from the
    observations available then, looking ``vm_boot_delay + period`` ahead.
    """
    policy = cfg.sim_policy
    qos = cfg.qos
    det = cfg.raw["detection"]
    interval = series.interval
    period_steps = int(round(policy.provisioning_period / interval))
    lead_steps = int(round(policy.vm_boot_delay / interval))
    roller = tsmodel.RollingForecaster(model, series)
    o = model.order
    min_origin = o.p + o.d + max(o.p, o.q)

    pieces, reqs = [], []
    n = len(series)
    for w in range(test_start, n, period_steps):
        steps = min(period_steps, n - w)
        origin = max(w - lead_steps, min_origin)
        path = roller.forecast(origin, w - origin + steps)[-steps:]
        window = TimeSeries(path, interval, series.start_epoch + w * interval)
        decided = series.start_epoch + origin * interval
        active = [a for a in alarms if decided - policy.provisioning_period <= a.timestamp < decided]
        reqs.append(planner.plan_window(
            window, qos, active, cfg.raw["headroom"],
            ram_per_vm=cfg.datacenter.ram_per_vm,
            override_transiency=det["override_transiency"],
        ))
        pieces.append(path)
    fc = TimeSeries(np.concatenate(pieces), interval, series.start_epoch + test_start * interval)
    return fc, reqs


def cmd_experiment(cfg: ExperimentConfig) -> list[simcore.ComparisonRow]:
    """Fit the grid, replay the test span per model and the static baseline, write the table."""
    out = cfg.out
    for sub in ("models", "anomaly", "forecasts", "plans", "schedules", "metrics", "utilization"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    resolved = dict(cfg.raw)
    resolved.pop("out", None)
    write_json(out / "config.json", resolved)

    with _stage("ingest"):
        series, report = load_series(cfg)
        trace.write_series_csv(series, out / "series.csv")
        if report is not None:
            write_json(out / "ingest_report.json", report)

    with _stage("split"):
        train, test = trace.split_train_test(series, cfg.raw["train_fraction"])
        trace.write_series_csv(train, out / "train.csv")
        trace.write_series_csv(test, out / "test.csv")

    with _stage("fit"):
        ranked = tsmodel.grid_select(train, test, cfg.grid)
        for r in ranked:
            write_json(out / "models" / f"{model_slug(r.order)}.json", r.model.to_dict())
        write_json(out / "fit_reports.json", [r.to_dict() for r in ranked])

    alarms = []
    with _stage("detect"):
        det = cfg.raw["detection"]
        mk = cfg.raw["markov"]
        profile = anomaly.build_baseline(train, det["slot_seconds"])
        write_json(out / "anomaly" / "profile.json", profile.to_dict())
        chain = anomaly.fit_markov(train, mk["n_states"], mk["anomaly_quantile"])
        write_json(out / "anomaly" / "markov.json", chain.to_dict())
        if det["enabled"]:
            alarms = anomaly.detect(test, profile, det["k"], det["min_run"],
                                    cycle_seconds=cfg.sim_policy.provisioning_period, history=train)
        with open(out / "anomaly" / "alarms.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(anomaly.alarms_to_jsonl(alarms))
        outlook = []
        period_steps = int(round(cfg.sim_policy.provisioning_period / series.interval))
        rates = series.rates
        for w in range(0, len(test), period_steps):
            f = anomaly.predict_anomaly(chain, float(rates[len(train) + w - 1]), mk["horizon_steps"])
            outlook.append({"epoch": test.start_epoch + w * test.interval,
                            "probability": f.probability, "confidence": f.confidence})
        write_json(out / "anomaly" / "outlook.json", outlook)

    catalog = None
    if cfg.raw["catalog"] is not None:
        catalog = planner.load_catalog(cfg.raw["catalog"])

    runs = []
    for r in ranked:
        slug = model_slug(r.order)
        with _stage(f"plan:{slug}"):
            fc, reqs = _window_plans(cfg, r.model, series, len(train), alarms)
            trace.write_series_csv(fc, out / "forecasts" / f"{slug}.csv")
            write_json(out / "plans" / f"{slug}.json", [q.to_dict() for q in reqs])
            if catalog is not None:
                offers = [planner.select_offers(q, catalog, cfg.sim_policy.vm_boot_delay).to_dict()
                          for q in reqs]
                write_json(out / "plans" / f"{slug}_offers.json", offers)
            schedule = simcore.schedule_from_plans(reqs, cfg.sim_policy)
            write_json(out / "schedules" / f"{slug}.json", schedule.to_dict())
        with _stage(f"simulate:{slug}"):
            metrics = simcore.run(test, schedule, cfg.datacenter, cfg.sim_policy)
        runs.append(ModelRun(r.order, r, fc, reqs, schedule, metrics))

    with _stage("simulate:static"):
        static = simcore.static_baseline(test, cfg.datacenter, cfg.sim_policy)
        write_json(out / "metrics" / "static.json", static.to_dict())
        static.write_utilization_csv(out / "utilization" / "static.csv")

    with _stage("report"):
        labels = [r.order.label for r in runs]
        rows = simcore.compare_models(
            [(lab, run.metrics) for lab, run in zip(labels, runs)],
            static,
            {lab: run.report.holdout_mse for lab, run in zip(labels, runs)},
        )
        for run, row in zip(runs, rows):
            slug = model_slug(run.order)
            m = simcore.normalized(run.metrics, row)
            write_json(out / "metrics" / f"{slug}.json", m.to_dict())
            m.write_utilization_csv(out / "utilization" / f"{slug}.csv")
        simcore.write_comparison_csv(rows, out / "table.csv")
        write_json(out / "report.json", {
            "schema": 1,
            "static_vms": static.constant_vms,
            "static_vm_hours": static.vm_hours,
            "rows": [{"model": x.model, "mse": x.mse, "norm_vm_hours": x.norm_vm_hours,
                      "norm_rejections": x.norm_rejections} for x in rows],
        })
    return rows


def cmd_report(out_dir) -> list[simcore.ComparisonRow]:
    """Rebuild ``table.csv`` from the metric and fit artifacts of an experiment directory."""
    out = Path(out_dir)
    try:
        fits = read_json(out / "fit_reports.json")
        static = read_json(out / "metrics" / "static.json")
    except OSError as exc:
        raise DataError(f"{out} does not hold experiment artifacts: {exc}") from exc
    rows, entries = [], []
    for f in fits:
        order = tsmodel.ArimaOrder.parse(f["order"])
        m = read_json(out / "metrics" / f"{model_slug(order)}.json")
        entries.append((order.label, f["holdout_mse"], m))
    worst = max(m["rejected_requests"] for _, _, m in entries)
    for label, mse, m in entries:
        vm = m["vm_hours"] / static["vm_hours"] if static["vm_hours"] > 0 else 0.0
        rej = m["rejected_requests"] / worst if worst else 0.0
        rows.append(simcore.ComparisonRow(label, mse, vm, rej))
    simcore.write_comparison_csv(rows, out / "table.csv")
    return rows


# -- single-purpose subcommands ------------------------------------------------------


def training_span(cfg: ExperimentConfig) -> TimeSeries:
    series, _ = load_series(cfg)
    return trace.split_train_test(series, cfg.raw["train_fraction"])[0]


def cmd_detect(cfg: ExperimentConfig, stream_path, profile_path=None) -> tuple[list, int]:
    """Alarms for a stream file, written as JSON lines; returns them and the exit code."""
    det = cfg.raw["detection"]
    stream = trace.read_series_csv(stream_path)
    history = None
    if profile_path is not None:
        profile = anomaly.BaselineProfile.from_dict(read_json(profile_path))
    else:
        history = training_span(cfg)
        profile = anomaly.build_baseline(history, det["slot_seconds"])
    alarms = anomaly.detect(stream, profile, det["k"], det["min_run"],
                            cycle_seconds=cfg.sim_policy.provisioning_period, history=history)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "alarms.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(anomaly.alarms_to_jsonl(alarms))
    return alarms, (ALARMS_RAISED if alarms else 0)


def cmd_fit(cfg: ExperimentConfig, series_path=None, holdout_path=None) -> list[tsmodel.FitReport]:
    if series_path is None:
        series, _ = load_series(cfg)
        train, holdout = trace.split_train_test(series, cfg.raw["train_fraction"])
    else:
        train = trace.read_series_csv(series_path)
        holdout = trace.read_series_csv(holdout_path) if holdout_path else None
    if holdout is not None:
        reports = tsmodel.grid_select(train, holdout, cfg.grid)
    else:
        reports = [tsmodel.fit(train, o)[1] for o in cfg.grid]
    for r in reports:
        write_json(cfg.out / "models" / f"{model_slug(r.order)}.json", r.model.to_dict())
    write_json(cfg.out / "fit_reports.json", [r.to_dict() for r in reports])
    return reports


def cmd_forecast(cfg: ExperimentConfig, model_path, steps: int, series_path=None) -> Path:
    model = tsmodel.ArimaModel.from_dict(read_json(model_path))
    if series_path is not None:
        series = trace.read_series_csv(series_path)
        state = tsmodel.RollingForecaster(model, series).state_at(len(series))
        start, interval = series.end_epoch, series.interval
    else:
        state, start, interval = model, 0.0, 5.0
    values, clamped = tsmodel.forecast_detail(state, steps)
    path = cfg.out / f"forecast_{Path(model_path).stem}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.write_series_csv(TimeSeries(values, interval, start), path)
    if clamped:
        logger.warning("forecast clamped at zero")
    return path


def cmd_plan(cfg: ExperimentConfig, forecast_path, alarms_path=None, catalog_path=None) -> dict:
    fc = trace.read_series_csv(forecast_path)
    alarms = []
    if alarms_path is not None:
        with open(alarms_path, encoding="utf-8") as fh:
            alarms = [anomaly.Alarm.from_dict(json.loads(line)) for line in fh if line.strip()]
    req = planner.plan_window(fc, cfg.qos, alarms, cfg.raw["headroom"], ram_per_vm=cfg.datacenter.ram_per_vm,
                              override_transiency=cfg.raw["detection"]["override_transiency"])
    doc = {"schema": 1, "requirement": req.to_dict()}
    catalog_path = catalog_path or cfg.raw["catalog"]
    if catalog_path is not None:
        plan = planner.select_offers(req, planner.load_catalog(catalog_path), cfg.sim_policy.vm_boot_delay)
        doc["plan"] = plan.to_dict()
    write_json(cfg.out / "plan.json", doc)
    return doc


def cmd_simulate(cfg: ExperimentConfig, workload_path, schedule_path=None, vms=None) -> simcore.SimMetrics:
    workload = trace.read_series_csv(workload_path)
    if schedule_path is not None:
        schedule = simcore.ProvisioningSchedule.from_dict(read_json(schedule_path))
        metrics = simcore.run(workload, schedule, cfg.datacenter, cfg.sim_policy)
    elif vms is not None:
        schedule = simcore.ProvisioningSchedule.constant(workload.start_epoch, vms)
        metrics = simcore.run(workload, schedule, cfg.datacenter, cfg.sim_policy)
    else:
        metrics = simcore.static_baseline(workload, cfg.datacenter, cfg.sim_policy)
    write_json(cfg.out / "metrics.json", metrics.to_dict())
    metrics.write_utilization_csv(cfg.out / "utilization.csv")
    return metrics
