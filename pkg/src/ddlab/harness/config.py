"""Experiment configuration: YAML files, defaults, dotted overrides and object construction."""

from __future__ import annotations

import copy
from typing import Any, Optional

import numpy as np
import yaml

from ..errors import CapacityError, DomainError, ModeError, UsageError
from ..evolve import Distribution
from ..metrics import IPMSpec, KernelDescriptor
from ..rates import RATE_KINDS, RateSpec, Schedule
from ..space import SequenceSpace

REQUIRED = ("vocab_size", "seq_len", "rate_kind")

DEFAULTS: dict = {
    "vocab_size": None,
    "seq_len": None,
    "rate_kind": None,
    "mask_token": None,
    "schedule": {"kind": "constant", "total": 3.0, "shape": 2.0, "horizon": 1.0, "params": None},
    "integrator": {"steps_per_unit_beta": 20},
    "perturbation": {"epsilon": 0.25, "mode": "multiplicative_uniform", "seed": 0},
    "data": {"kind": "random_simplex", "seed": 0, "concentration": 1.0, "weights": None, "state": None},
    "start": "prior",
    "metrics": ["tv", "per_position_tv", "kgram_tv", "w1_hamming", "mmd_delta", "mmd_hamming"],
    "suites": ["cor_tv"],
    "psi": {"count": 5, "seed": 0},
    "instances": 20,
    "trials": 100000,
    "coupling_seed": 0,
    "output_path": None,
}

METRIC_ALIASES = {
    "tv": IPMSpec("tv"),
    "per_position_tv": IPMSpec("per_position_tv", {"position": 1}),
    "kgram_tv": IPMSpec("kgram_tv", {"positions": (1, 2)}),
    "w1_hamming": IPMSpec("w1_hamming"),
    "mmd_delta": IPMSpec("mmd", {"kernel": KernelDescriptor("delta")}),
    "mmd_hamming": IPMSpec("mmd", {"kernel": KernelDescriptor("hamming_exponential", 1.0)}),
}


def deep_merge(base: dict, extra: Optional[dict]) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_file(path: str) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping")
    return data


def parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def set_path(cfg: dict, key: str, value: Any) -> dict:
    """Set a dotted ``key`` such as ``perturbation.epsilon``; the path must exist in the defaults.

    ``schedule.params.<name>`` is free-form.
    """
    parts = key.split(".")
    if len(parts) == 3 and parts[:2] == ["schedule", "params"]:
        params = cfg.setdefault("schedule", {}).get("params") or {}
        params[parts[2]] = value
        cfg["schedule"]["params"] = params
        return cfg
    node, ref = cfg, DEFAULTS
    for p in parts[:-1]:
        if not isinstance(ref.get(p), dict):
            raise UsageError(f"unknown config key {key!r}")
        ref = ref[p]
        node = node.setdefault(p, {})
    if parts[-1] not in ref:
        raise UsageError(f"unknown config key {key!r}")
    node[parts[-1]] = value
    return cfg


def get_path(cfg: dict, key: str) -> Any:
    node = cfg
    for p in key.split("."):
        if not isinstance(node, dict) or p not in node:
            raise UsageError(f"unknown config key {key!r}")
        node = node[p]
    return node


def apply_overrides(cfg: dict, pairs) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        set_path(cfg, key.strip(), parse_value(text.strip()))
    return cfg


def flatten(cfg: dict, prefix: str = "") -> dict:
    out = {}
    for k in sorted(cfg):
        v = cfg[k]
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, name + "."))
        elif isinstance(v, (list, tuple)):
            out[name] = ";".join(str(x) for x in v)
        else:
            out[name] = v
    return out


def resolve(*layers: Optional[dict]) -> dict:
    """Merge layers over the defaults and validate."""
    cfg = DEFAULTS
    for layer in layers:
        cfg = deep_merge(cfg, layer)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    missing = [k for k in REQUIRED if cfg.get(k) is None]
    if missing:
        raise UsageError(f"config is missing required fields {missing}")
    if cfg["rate_kind"] not in RATE_KINDS:
        raise UsageError(f"rate_kind must be one of {RATE_KINDS}")
    for k in ("vocab_size", "seq_len"):
        if not isinstance(cfg[k], int) or cfg[k] < 1:
            raise UsageError(f"{k} must be a positive integer")
    if cfg["rate_kind"] == "masked" and cfg["vocab_size"] < 2:
        raise UsageError("masked mode needs at least one non-mask token")
    if cfg["start"] not in ("prior", "exact"):
        raise UsageError("start must be 'prior' or 'exact'")
    for name in cfg["metrics"]:
        metric_spec(name)
    try:
        build_space(cfg)
        build_rate(cfg)
        build_data(cfg)
    except (DomainError, ModeError, CapacityError) as exc:
        raise UsageError(str(exc)) from exc


def build_space(cfg: dict) -> SequenceSpace:
    S, d = cfg["vocab_size"], cfg["seq_len"]
    if cfg["rate_kind"] == "masked":
        return SequenceSpace.masked(S, d, cfg.get("mask_token"))
    return SequenceSpace(S, d)


def build_schedule(cfg: dict) -> Schedule:
    sc = cfg["schedule"]
    if sc.get("params"):
        return Schedule(sc["kind"], sc["params"], float(sc["horizon"]))
    return Schedule.with_total(sc["kind"], float(sc["total"]), float(sc["horizon"]), float(sc["shape"]))


def build_rate(cfg: dict) -> RateSpec:
    return RateSpec(cfg["rate_kind"], build_schedule(cfg), build_space(cfg))


def admissible_states(space: SequenceSpace, masked: bool) -> np.ndarray:
    if masked:
        return np.flatnonzero(space.mask_counts == 0)
    return np.arange(space.state_count)


def build_data(cfg: dict) -> Distribution:
    space = build_space(cfg)
    masked = cfg["rate_kind"] == "masked"
    data = cfg["data"]
    kind = data.get("kind", "random_simplex")
    n = space.state_count
    if kind == "dirac":
        state = data.get("state") or [1] * space.seq_len
        w = np.zeros(n)
        w[space.encode(state)] = 1.0
    elif kind == "random_simplex":
        ok = admissible_states(space, masked)
        rng = np.random.default_rng(np.random.SeedSequence([int(data.get("seed", 0)), 0xDA7A]))
        w = np.zeros(n)
        w[ok] = rng.dirichlet(np.full(ok.size, float(data.get("concentration", 1.0))))
    elif kind == "explicit":
        w = np.asarray(data.get("weights") or [], dtype=float)
        if w.shape != (n,):
            raise UsageError(f"explicit data needs {n} weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise UsageError("explicit weights must be a probability vector")
    else:
        raise UsageError(f"unknown data kind {kind!r}")
    if masked and np.any(w[space.mask_counts > 0] > 0):
        raise UsageError("masked data must put zero mass on sequences containing the mask token")
    return Distribution(w)


def metric_spec(name) -> IPMSpec:
    if isinstance(name, dict):
        params = {k: v for k, v in name.items() if k != "kind"}
        kind = name.get("kind")
        if kind == "mmd" and isinstance(params.get("kernel"), dict):
            params["kernel"] = KernelDescriptor(**params["kernel"])
        if "positions" in params:
            params["positions"] = tuple(params["positions"])
        try:
            return IPMSpec(kind, params)
        except DomainError as exc:
            raise UsageError(str(exc)) from exc
    if name not in METRIC_ALIASES:
        raise UsageError(f"unknown metric {name!r}; choose from {sorted(METRIC_ALIASES)}")
    return METRIC_ALIASES[name]
