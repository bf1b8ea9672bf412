"""Experiment configuration: TOML (or JSON) merged over documented defaults."""

from __future__ import annotations

import copy
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SCENARIOS = ("gas", "tracking", "random")
PLANNER_KINDS = ("fvi", "greedy", "rvi")

DEFAULTS_TOML = """\
# infoplan experiment configuration (all values shown are the defaults)

scenario = "random"     # gas | tracking | random
seed = 0                # base seed; every random draw derives from it
out = "results"         # output directory
workers = 1             # worker threads/processes; results do not depend on it
node_cap = 2000000      # abort a planner when a level would exceed this many nodes

# One table per planner. kind = fvi | greedy | rvi; epsilon may be inf.
[[planners]]
kind = "greedy"
T = 4

[[planners]]
kind = "rvi"
T = 4
epsilon = 0.05
delta = 0.0

[gas]
width = 20
height = 20
cell_size = 1.0             # m
prior_mean = 0.0            # ppm, every cell
prior_var = 400.0           # ppm^2
prior_length_scale = 0.0    # m; 0 keeps the prior diagonal
sensor_noise_var = 1.0
beam_max_range = 10.0       # m
start = [10, 10, 0.0]       # cell i, cell j, heading (rad)
field_seed = 0              # ground-truth sample for plotting only
engine = "lowrank"          # lowrank | dense

[tracking]
tau = 0.5                   # s
q = 0.2                     # (m/s^2)^2 / Hz
max_range = 15.0            # m
a0 = 0.1                    # range noise: a0 + a1 r (1 + a2 k), k = trees crossed
a1 = 0.05
a2 = 1.0
b0 = 0.02                   # bearing noise: b0 + b1 speed
b1 = 0.05
arena = [-60.0, 60.0, -60.0, 60.0]
tree_seed = 7
tree_min_dist = 8.0         # m, Poisson-disc spacing
tree_radius = 1.0           # m
sensor_start = [0.0, 0.0, 0.0]
target_start = [5.0, 2.0, 1.0, 0.5]
prior_cov = [1.0, 1.0, 0.25, 0.25]   # diagonal of the initial estimate covariance
T_max = 100
runs = 20

[random]
n_y = 2
n_controls = 3
dim = 1
step = 1.0
lambda_w_min = 0.1
modulation = 0.4
frequency = 1.0
T = 4                       # horizon of the verify sweep
instances = 100
tol = 1e-7                  # redundancy tolerance; bounds use eps + tol
epsilons = [0.0, 0.01, 0.05, 0.1]
deltas = [0.0]
"""


def _parse_inf(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return v


def defaults() -> dict:
    return tomllib.loads(DEFAULTS_TOML)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config field '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config field '{where}' must be a table")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class PlannerSpec:
    kind: str
    T: int
    epsilon: float = 0.0
    delta: float = 0.0

    @property
    def label(self) -> str:
        if self.kind == "rvi":
            return f"rvi(eps={self.epsilon:g},delta={self.delta:g})"
        return self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, "epsilon": self.epsilon, "delta": self.delta}


def _planner(i: int, raw: Any) -> PlannerSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"planners[{i}] must be a table")
    extra = set(raw) - {"kind", "T", "epsilon", "delta"}
    if extra:
        raise ConfigError(f"unknown config field 'planners[{i}].{sorted(extra)[0]}'")
    kind = raw.get("kind")
    if kind not in PLANNER_KINDS:
        raise ConfigError(f"planners[{i}].kind must be one of {PLANNER_KINDS}, got {kind!r}")
    T = raw.get("T")
    if not isinstance(T, int) or isinstance(T, bool) or T < 1:
        raise ConfigError(f"planners[{i}].T must be an integer >= 1, got {T!r}")
    eps = _parse_inf(raw.get("epsilon", 0.0))
    delta = raw.get("delta", 0.0)
    for name, v in (("epsilon", eps), ("delta", delta)):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v >= 0:
            raise ConfigError(f"planners[{i}].{name} must be a number >= 0, got {v!r}")
    if math.isinf(delta):
        raise ConfigError(f"planners[{i}].delta must be finite")
    return PlannerSpec(kind, T, float(eps), float(delta))


@dataclass
class ExperimentConfig:
    raw: dict

    @property
    def scenario(self) -> str:
        return self.raw["scenario"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def workers(self) -> int:
        return self.raw["workers"]

    @property
    def node_cap(self) -> int:
        return self.raw["node_cap"]

    @property
    def planners(self) -> list[PlannerSpec]:
        return [_planner(i, p) for i, p in enumerate(self.raw["planners"])]

    def section(self, name: str) -> dict:
        return self.raw[name]

    def echo(self) -> dict:
        """JSON-safe copy of the merged configuration."""
        return _json_safe(self.raw)


def _json_safe(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_safe(v) for v in x]
    return x


def _check_int(raw: dict, key: str, lo: int, where: str = "") -> None:
    v = raw[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < lo:
        raise ConfigError(f"config field '{where}{key}' must be an integer >= {lo}, got {v!r}")


def validate(raw: dict) -> ExperimentConfig:
    if raw["scenario"] not in SCENARIOS:
        raise ConfigError(f"config field 'scenario' must be one of {SCENARIOS}, got {raw['scenario']!r}")
    _check_int(raw, "seed", 0)
    _check_int(raw, "workers", 1)
    _check_int(raw, "node_cap", 1)
    if not isinstance(raw["planners"], list) or not raw["planners"]:
        raise ConfigError("config field 'planners' must list at least one planner")
    raw["random"]["epsilons"] = [_parse_inf(e) for e in raw["random"]["epsilons"]]
    for p in raw["planners"]:
        if isinstance(p, dict) and "epsilon" in p:
            p["epsilon"] = _parse_inf(p["epsilon"])
    cfg = ExperimentConfig(raw)
    cfg.planners  # validates every planner entry
    _check_int(raw["tracking"], "T_max", 1, "tracking.")
    _check_int(raw["tracking"], "runs", 1, "tracking.")
    _check_int(raw["random"], "instances", 1, "random.")
    _check_int(raw["random"], "T", 1, "random.")
    return cfg


def loads(text: str, fmt: str = "toml") -> ExperimentConfig:
    try:
        data = json.loads(text) if fmt == "json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {fmt.upper()} config: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a table/object at the top level")
    # a report.json carries its configuration under "config"
    if "config" in data and "schema" in data:
        data = data["config"]
    return validate(_merge(defaults(), data))


def load(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return validate(defaults())
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return loads(text, "json" if p.suffix.lower() == ".json" else "toml")
