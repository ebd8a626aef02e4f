"""Experiment configuration: YAML schema, defaults and validation.

Keys carry their units where a unit applies. Every section is optional in
the file; missing keys take the defaults below. Unknown keys are rejected
so typos do not silently fall back to defaults.
"""

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .constants import RateSchedule, SystemConfig
from .errors import ConfigError
from .latency import TimingConfig
from .power_control import OptimizerSettings

POLICIES = ("optimized", "fixed", "per-iteration-mse")

DEFAULTS = {
    "system": {
        "num_devices": 10,
        "model_dim": 20,
        "noise_power_watts": 1.0,
        "max_power_tilde_watts": 5.0,
        "ave_power_tilde_watts": 1.0,
        "outer_iters": 50,
        "local_epochs": 5,
    },
    "data": {
        "samples_per_device": 1000,
        "minibatch_size": 500,
        "label_noise_coeff": 0.2,
        "ridge_coeff": 0.0,
        "model_bound_margin": 1.1,
        "test_samples": 2000,
    },
    # any key set here replaces the value estimated from the data
    "constants": {
        "smoothness": None,
        "pl_constant": None,
        "grad_divergence": None,
        "grad_variance_hat": None,
        "grad_bound": None,
        "model_bound": None,
    },
    "rate_schedule": {"offset_a": 10.0, "scale_beta": 1.0},
    "timing": {
        "symbols_per_block": 14,
        "slot_duration_s": 1e-3,
        "cycles_per_sample": 3000.0,
        "cpu_freq_hz": 5e9,
        "bandwidth_hz": 1e6,
        "quant_levels": 10,
        "norm_bits": 64,
    },
    "optimizer": {
        "convergence_tol": 1e-8,
        "max_alt_rounds": 200,
        "acceleration": "anderson",
    },
    "experiment": {
        "policies": list(POLICIES),
        "aggregation": "air",
        "seeds": [0],
        "output_dir": "out",
        "workers": 1,
    },
    "latency": {
        "target_gap": 20.0,
        "max_outer_iters": 200,
        "local_epochs_range": [2, 20],
        "device_sweep": [5, 10, 20],
        "search": "scan",
    },
    "bound": {
        "outer_iters": [10, 50],
        "local_epochs_range": [2, 20],
    },
}

# keys that do not change any numbers written to disk
_UNHASHED = {("experiment", "output_dir"), ("experiment", "workers")}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    source: str = "<defaults>"

    def __post_init__(self):
        self.system  # noqa: B018 - construct once to validate eagerly
        self.rate_schedule
        self.timing
        self.optimizer
        ex = self.raw["experiment"]
        if not ex["seeds"]:
            raise ConfigError("experiment.seeds must be nonempty")
        for s in ex["seeds"]:
            if int(s) != s or s < 0:
                raise ConfigError(f"seeds must be nonnegative integers, got {s!r}")
        bad = [p for p in ex["policies"] if p not in POLICIES]
        if bad or not ex["policies"]:
            raise ConfigError(f"experiment.policies must be a nonempty subset of {POLICIES}")
        if ex["aggregation"] not in ("air", "oma", "ideal"):
            raise ConfigError("experiment.aggregation must be air, oma or ideal")
        if int(ex["workers"]) < 1:
            raise ConfigError("experiment.workers must be >= 1")
        d = self.raw["data"]
        if d["minibatch_size"] > d["samples_per_device"]:
            raise ConfigError("data.minibatch_size exceeds data.samples_per_device")
        lat = self.raw["latency"]
        if not lat["target_gap"] > 0:
            raise ConfigError("latency.target_gap must be > 0")
        if lat["search"] not in ("scan", "bisection"):
            raise ConfigError("latency.search must be scan or bisection")
        for sec in ("latency", "bound"):
            lo, hi = self.raw[sec]["local_epochs_range"]
            if not 2 <= lo <= hi:
                raise ConfigError(f"{sec}.local_epochs_range must satisfy 2 <= lo <= hi")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls(_merge(DEFAULTS, data), str(path))

    @classmethod
    def from_dict(cls, data=None):
        return cls(_merge(DEFAULTS, data or {}))

    def with_overrides(self, overrides):
        return ExperimentConfig(_merge(self.raw, overrides), self.source)

    @property
    def sha256(self):
        hashed = copy.deepcopy(self.raw)
        for sec, key in _UNHASHED:
            hashed[sec].pop(key, None)
        blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def system_for(self, num_devices=None, outer_iters=None, local_epochs=None):
        s = self.raw["system"]
        return SystemConfig(
            num_devices=int(num_devices or s["num_devices"]),
            model_dim=int(s["model_dim"]),
            noise_power=float(s["noise_power_watts"]),
            max_power=s["max_power_tilde_watts"],
            ave_power=s["ave_power_tilde_watts"],
            outer_iters=int(outer_iters or s["outer_iters"]),
            local_epochs=int(local_epochs or s["local_epochs"]),
        )

    @property
    def system(self):
        return self.system_for()

    @property
    def rate_schedule(self):
        r = self.raw["rate_schedule"]
        return RateSchedule(float(r["offset_a"]), float(r["scale_beta"]))

    @property
    def timing(self):
        t = self.raw["timing"]
        return TimingConfig(
            symbols_per_block=int(t["symbols_per_block"]),
            slot_duration=float(t["slot_duration_s"]),
            cycles_per_sample=float(t["cycles_per_sample"]),
            cpu_freq=float(t["cpu_freq_hz"]),
            minibatch=int(self.raw["data"]["minibatch_size"]),
            bandwidth_hz=float(t["bandwidth_hz"]),
            quant_levels=t["quant_levels"],
            norm_bits=int(t["norm_bits"]),
        )

    @property
    def optimizer(self):
        o = self.raw["optimizer"]
        if o["acceleration"] not in (None, "none", "anderson"):
            raise ConfigError("optimizer.acceleration must be anderson or none")
        return OptimizerSettings(
            convergence_tol=float(o["convergence_tol"]),
            max_alt_rounds=int(o["max_alt_rounds"]),
        )

    @property
    def acceleration(self):
        acc = self.raw["optimizer"]["acceleration"]
        return None if acc in (None, "none") else acc

    @property
    def seeds(self):
        return [int(s) for s in self.raw["experiment"]["seeds"]]

    def section(self, name):
        return copy.deepcopy(self.raw[name])


def dump_defaults():
    """Default configuration as YAML text."""
    return yaml.safe_dump(DEFAULTS, sort_keys=False)
