"""INI experiment configuration: sections [cost], [domain], [task]."""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .cost_models import CostError, CostModel, cost_from_config

TASKS = ("mtw-sweep", "c-transform", "contact", "phibar", "solve-ot", "sphere-verify", "antenna-check")

# tasks that need a [cost] section
_NEEDS_COST = {"mtw-sweep", "c-transform", "contact", "phibar", "solve-ot"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str
    seed: int
    output: str
    cost: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    source_text: str = ""

    def model(self) -> CostModel:
        try:
            return cost_from_config(self.cost)
        except (CostError, ValueError) as exc:
            raise ConfigError(f"[cost]: {exc}") from exc

    def threads(self) -> int:
        raw = self.options.get("threads")
        if raw is None:
            return os.cpu_count() or 1
        return max(1, self.get_int("threads"))

    # typed accessors over [task] then [domain]
    def _raw(self, key):
        if key in self.options:
            return self.options[key]
        return self.domain.get(key)

    def has(self, key) -> bool:
        return self._raw(key) is not None

    def get_str(self, key, default=None):
        v = self._raw(key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return default
        return v

    def get_float(self, key, default=None) -> float:
        v = self._raw(key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return float(default)
        try:
            return _parse_float(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: not a number: {v!r}") from exc

    def get_int(self, key, default=None) -> int:
        v = self._raw(key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return int(default)
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {v!r}") from exc

    def get_bool(self, key, default: bool = False) -> bool:
        v = self._raw(key)
        if v is None:
            return default
        low = v.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: not a boolean: {v!r}")

    def get_vector(self, key, default=None) -> np.ndarray:
        v = self._raw(key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return np.asarray(default, dtype=float)
        try:
            return np.array([_parse_float(t) for t in v.replace(";", ",").split(",") if t.strip()])
        except ValueError as exc:
            raise ConfigError(f"{key}: not a vector: {v!r}") from exc

    def get_list(self, key, default=None) -> list[float]:
        return [float(t) for t in self.get_vector(key, default)]

    def echo(self) -> dict:
        return {"task": self.task, "seed": self.seed, "output": self.output,
                "cost": dict(self.cost), "domain": dict(self.domain), "task_options": dict(self.options)}


def _parse_float(text: str) -> float:
    t = text.strip().lower()
    table = {"pi": math.pi, "inf": math.inf, "+inf": math.inf, "-inf": -math.inf}
    if t in table:
        return table[t]
    if t.endswith("*pi"):
        return float(t[:-3]) * math.pi
    if t.startswith("pi/"):
        return math.pi / float(t[3:])
    return float(t)


def parse_config(text: str, task: str | None = None, seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    """Parse INI text.  ``task``, ``seed`` and ``output`` override the file."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse failure: {exc}") from exc
    opts = dict(cp["task"]) if cp.has_section("task") else {}
    name = task or opts.pop("name", None)
    opts.pop("name", None)
    if name is None:
        raise ConfigError("no task named ([task] name = ... or a subcommand)")
    if name not in TASKS:
        raise ConfigError(f"unknown task {name!r}")
    if seed is None:
        try:
            seed = int(opts.pop("seed", "0"))
        except ValueError as exc:
            raise ConfigError("seed must be an integer") from exc
    else:
        opts.pop("seed", None)
    out = output or opts.pop("output", None)
    opts.pop("output", None)
    if out is None:
        raise ConfigError("no output directory (--out or [task] output)")
    cost = dict(cp["cost"]) if cp.has_section("cost") else {}
    if name in _NEEDS_COST and not cost:
        raise ConfigError(f"task {name} needs a [cost] section")
    dom = dict(cp["domain"]) if cp.has_section("domain") else {}
    cfg = ExperimentConfig(name, seed, out, cost, dom, opts, text)
    if cost:
        cfg.model()
    return cfg


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, **overrides)
