"""Run configuration files: strict JSON parsing with documented defaults.

Missing keys fall back to the package defaults; unknown keys are fatal and the
error names the offending key, so a typo like "lamda" can never silently run
with defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .engine import DecodeConfig, SamplingConfig
from .errors import ConfigError
from .monitor import TriggerConfig
from .optimizer import AdaptiveWeightConfig, ReflectionConfig


def _check_keys(data: dict, allowed, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"config section {where or '<root>'} must be an object")
    for key in data:
        if key not in allowed:
            path = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown config key: {path}")


def _num(data, key, default, where):
    v = data.get(key, default)
    if v is None:
        return default
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        path = f"{where}.{key}" if where else key
        raise ConfigError(f"config key {path} must be a finite number")
    return float(v)


def _int(data, key, default, where):
    v = data.get(key, default)
    if v is None:
        return default
    if isinstance(v, bool) or not isinstance(v, int):
        path = f"{where}.{key}" if where else key
        raise ConfigError(f"config key {path} must be an integer")
    return v


def _bool(data, key, default, where):
    v = data.get(key, default)
    if v is None:
        return default
    if not isinstance(v, bool):
        path = f"{where}.{key}" if where else key
        raise ConfigError(f"config key {path} must be true or false")
    return v


def _opt_num(data, key, where):
    v = data.get(key)
    if v is None:
        return None
    return _num(data, key, None, where)


def trigger_from_dict(data: dict, where: str = "trigger") -> TriggerConfig:
    _check_keys(data, {"window_size", "sensitivity", "temperature"}, where)
    return TriggerConfig(
        window_size=_int(data, "window_size", 25, where),
        sensitivity=_num(data, "sensitivity", 4.0, where),
        temperature=_num(data, "temperature", 0.6, where))


def reflection_from_dict(data: dict, where: str = "reflection") -> ReflectionConfig:
    _check_keys(data, {"entropy_weight", "steps", "learning_rate", "loss_temperature",
                       "ce_scope", "trust_radius", "reg_gamma", "backtracking",
                       "grad_clip", "adaptive"}, where)
    adaptive = None
    if data.get("adaptive") is not None:
        sub = data["adaptive"]
        sub_where = f"{where}.adaptive"
        _check_keys(sub, {"target", "rate", "min_weight", "max_weight"}, sub_where)
        for key in ("target", "rate", "min_weight", "max_weight"):
            if key not in sub:
                raise ConfigError(f"config key {sub_where}.{key} is required")
        adaptive = AdaptiveWeightConfig(
            target=_num(sub, "target", None, sub_where),
            rate=_num(sub, "rate", None, sub_where),
            min_weight=_num(sub, "min_weight", None, sub_where),
            max_weight=_num(sub, "max_weight", None, sub_where))
    scope = data.get("ce_scope", "full-prefix")
    if not isinstance(scope, str):
        raise ConfigError(f"config key {where}.ce_scope must be a string")
    grad_clip = data.get("grad_clip", 100.0)
    return ReflectionConfig(
        entropy_weight=_num(data, "entropy_weight", 0.05, where),
        steps=_int(data, "steps", 3, where),
        learning_rate=_num(data, "learning_rate", 0.01, where),
        loss_temperature=_num(data, "loss_temperature", 1.0, where),
        ce_scope=scope,
        trust_radius=_opt_num(data, "trust_radius", where),
        reg_gamma=_num(data, "reg_gamma", 0.0, where),
        backtracking=_bool(data, "backtracking", False, where),
        grad_clip=None if grad_clip is None else _num(data, "grad_clip", 100.0, where),
        adaptive=adaptive)


def sampling_from_dict(data: dict, where: str = "sampling") -> SamplingConfig:
    _check_keys(data, {"mode", "temperature", "top_p"}, where)
    mode = data.get("mode", "temperature")
    if not isinstance(mode, str):
        raise ConfigError(f"config key {where}.mode must be a string")
    return SamplingConfig(
        mode=mode,
        temperature=_num(data, "temperature", 0.6, where),
        top_p=_num(data, "top_p", 0.95, where))


_DECODE_KEYS = {"trigger", "reflection", "sampling", "max_tokens", "eos_token",
                "seed", "reflect"}


def decode_config_from_dict(data: dict, where: str = "") -> DecodeConfig:
    _check_keys(data, _DECODE_KEYS, where)
    sub = lambda name: data.get(name) or {}
    w = lambda name: f"{where}.{name}" if where else name
    eos = data.get("eos_token")
    if eos is not None and (isinstance(eos, bool) or not isinstance(eos, int)):
        raise ConfigError(f"config key {w('eos_token')} must be an integer or null")
    return DecodeConfig(
        trigger=trigger_from_dict(sub("trigger"), w("trigger")),
        reflection=reflection_from_dict(sub("reflection"), w("reflection")),
        sampling=sampling_from_dict(sub("sampling"), w("sampling")),
        max_tokens=_int(data, "max_tokens", 4096, where),
        eos_token=eos,
        seed=_int(data, "seed", 0, where),
        reflect=_bool(data, "reflect", True, where))


def decode_config_to_dict(cfg: DecodeConfig) -> dict:
    refl = cfg.reflection
    adaptive = None
    if refl.adaptive is not None:
        a = refl.adaptive
        adaptive = {"target": a.target, "rate": a.rate,
                    "min_weight": a.min_weight, "max_weight": a.max_weight}
    return {
        "trigger": {"window_size": cfg.trigger.window_size,
                    "sensitivity": cfg.trigger.sensitivity,
                    "temperature": cfg.trigger.temperature},
        "reflection": {"entropy_weight": refl.entropy_weight, "steps": refl.steps,
                       "learning_rate": refl.learning_rate,
                       "loss_temperature": refl.loss_temperature,
                       "ce_scope": refl.ce_scope, "trust_radius": refl.trust_radius,
                       "reg_gamma": refl.reg_gamma, "backtracking": refl.backtracking,
                       "grad_clip": refl.grad_clip, "adaptive": adaptive},
        "sampling": {"mode": cfg.sampling.mode,
                     "temperature": cfg.sampling.temperature,
                     "top_p": cfg.sampling.top_p},
        "max_tokens": cfg.max_tokens,
        "eos_token": cfg.eos_token,
        "seed": cfg.seed,
        "reflect": cfg.reflect,
    }


@dataclass
class RunConfig:
    """Decode settings plus benchmark-level wiring from one config file."""

    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    reflection: ReflectionConfig = field(default_factory=ReflectionConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    max_tokens: int = 4096
    eos_token: int | None = None
    seed: int | None = None  # None: the CLI draws one and records it
    reflect: bool = True
    backend: str | None = None
    corpus: str | None = None
    k: int = 5
    seeds: list[int] | None = None
    out: str | None = None

    def decode_config(self, seed: int, reflect: bool | None = None) -> DecodeConfig:
        return DecodeConfig(
            trigger=self.trigger, reflection=self.reflection, sampling=self.sampling,
            max_tokens=self.max_tokens, eos_token=self.eos_token, seed=seed,
            reflect=self.reflect if reflect is None else reflect)


_RUN_KEYS = _DECODE_KEYS | {"backend", "corpus", "k", "seeds", "out"}


def run_config_from_dict(data: dict) -> RunConfig:
    _check_keys(data, _RUN_KEYS, "")
    decode_part = {k: v for k, v in data.items() if k in _DECODE_KEYS}
    seed = decode_part.pop("seed", None)
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("config key seed must be a non-negative integer or null")
    base = decode_config_from_dict(decode_part)
    seeds = data.get("seeds")
    if seeds is not None:
        if (not isinstance(seeds, list) or not seeds
                or any(isinstance(s, bool) or not isinstance(s, int) for s in seeds)):
            raise ConfigError("config key seeds must be a non-empty list of integers")
        seeds = list(seeds)
    for key in ("backend", "corpus", "out"):
        v = data.get(key)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"config key {key} must be a string")
    return RunConfig(
        trigger=base.trigger, reflection=base.reflection, sampling=base.sampling,
        max_tokens=base.max_tokens, eos_token=base.eos_token, seed=seed,
        reflect=base.reflect, backend=data.get("backend"), corpus=data.get("corpus"),
        k=_int(data, "k", 5, ""), seeds=seeds, out=data.get("out"))


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return run_config_from_dict(data)
