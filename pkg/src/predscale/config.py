"""Experiment configuration: a single JSON document merged over defaults.

Precedence is command-line flags > config file > defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import UsageError
from .planner import QosPolicy
from .simcore import DataCenterSpec, SimPolicy
from .trace import DisaggregationParams
from .tsmodel import ArimaOrder

DEFAULT_GRID = [[1, 1, 1], [1, 2, 1], [2, 1, 2], [2, 2, 2]]

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "trace": {
        "source": "synthetic",  # or "pagecounts"
        "directory": None,
        "project_code": "zh",
        "synthetic": {
            "days": 4,
            "base_rate": 100.0,
            "amplitude": 50.0,
            "noise_sigma": 5.0,
            "interval": 5.0,
            "start_epoch": 0.0,
        },
    },
    "disaggregation": {"sigma": 1.0, "consolidation": 5},
    "train_fraction": 0.75,
    "grid": DEFAULT_GRID,
    "headroom": 1.0,
    "qos": {"service_time": 0.1, "response_target": 0.5, "cores_per_vm": 1},
    "datacenter": {
        "host_count": 500,
        "cores_per_host": 8,
        "ram_per_host": 16.0,
        "storage_per_host": 1.0,
        "vm_fraction_of_host": 0.125,
    },
    "sim": {
        "provisioning_period": 300.0,
        "plan_horizon": 300.0,
        "vm_boot_delay": 120.0,
    },
    "detection": {
        "enabled": True,
        "k": 3.0,
        "min_run": 2,
        "slot_seconds": 300,
        "override_transiency": 0.5,
    },
    "markov": {"n_states": 5, "anomaly_quantile": 0.95, "horizon_steps": 60},
    "catalog": None,
}


def derive_seed(master: int, stage: str) -> int:
    """Stable 64-bit per-stage seed from the master seed and a stage name."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "ExperimentConfig":
        doc = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    doc = json.load(fh)
            except OSError as exc:
                raise UsageError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise UsageError("config must be a JSON object")
        merged = _merge(DEFAULTS, doc)
        merged = _merge(merged, {k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls(merged)
        cfg.validate()
        return cfg

    def validate(self):
        r = self.raw
        try:
            if not r["grid"]:
                raise UsageError("grid must list at least one order")
            self.grid
            self.qos
            self.datacenter
            self.sim_policy
            self.disaggregation
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from exc
        if r["trace"]["source"] not in ("synthetic", "pagecounts"):
            raise UsageError(f"unknown trace source {r['trace']['source']!r}")
        if r["trace"]["source"] == "pagecounts":
            d = r["trace"]["directory"]
            if not d or not Path(d).is_dir():
                raise UsageError(f"trace directory {d!r} does not exist")
        if r["catalog"] is not None and not Path(r["catalog"]).is_file():
            raise UsageError(f"catalog {r['catalog']!r} does not exist")
        if not 0 < r["train_fraction"] < 1:
            raise UsageError("train_fraction must lie in (0, 1)")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def grid(self) -> list[ArimaOrder]:
        return [ArimaOrder.parse(o) for o in self.raw["grid"]]

    @property
    def qos(self) -> QosPolicy:
        return QosPolicy(**self.raw["qos"])

    @property
    def datacenter(self) -> DataCenterSpec:
        return DataCenterSpec(**self.raw["datacenter"])

    @property
    def sim_policy(self) -> SimPolicy:
        q = self.raw["qos"]
        return SimPolicy(service_time=q["service_time"], response_target=q["response_target"],
                         **self.raw["sim"])

    @property
    def disaggregation(self) -> DisaggregationParams:
        d = self.raw["disaggregation"]
        return DisaggregationParams(sigma=d["sigma"], seed=derive_seed(self.seed, "disaggregate"),
                                    consolidation=d["consolidation"])

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"
