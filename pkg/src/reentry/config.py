"""Versioned JSON documents for configurations, runs and sweeps."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .coupling import KernelError, kernel_from_dict
from .fields import FieldParams
from .graphs import GraphError, WeightedGraph
from .scenarios import SCENARIOS, k3p3_equilibrium, scenario
from .state import ArchitectureConfig, ConfigError, StateVector

VERSION = 1

TOP_KEYS = {"version", "scenario", "overrides", "architecture", "params", "run", "certificates"}
RUN_KEYS = {"steps", "record_every", "seed", "initial", "inputs"}
CERTIFICATES = ("small_gain", "strengthened", "radial", "crossgain", "assumptions")
DEFAULT_CERTIFICATES = ("small_gain", "crossgain", "assumptions")


def _unknown(where: str, data: dict, allowed: set):
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def config_to_dict(cfg: ArchitectureConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, WeightedGraph):
            v = v.to_dict()
        elif f.name == "kernel":
            v = v.to_dict()
        elif isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, float) and math.isinf(v):
            v = None
        out[f.name] = v
    return out


def config_from_dict(data: dict) -> ArchitectureConfig:
    known = {f.name for f in fields(ArchitectureConfig)}
    _unknown("architecture", data, known)
    d = dict(data)
    try:
        d["G_L"] = WeightedGraph.from_dict(d["G_L"])
        d["G_R"] = WeightedGraph.from_dict(d["G_R"])
        d["kernel"] = kernel_from_dict(d["kernel"])
    except KeyError as exc:
        raise ConfigError(f"architecture: missing key {exc}") from None
    except (GraphError, KernelError, TypeError) as exc:
        raise ConfigError(f"architecture: {exc}") from None
    if d.get("C_K_bound", 0) is None:
        d["C_K_bound"] = np.inf
    if "policy_sizes" in d:
        d["policy_sizes"] = tuple(d["policy_sizes"])
    try:
        return ArchitectureConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"architecture: {exc}") from None


def params_from_dict(data: dict) -> FieldParams:
    try:
        return FieldParams.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"params: {exc}") from None


@dataclass
class RunSpec:
    steps: int = 1000
    record_every: int = 1
    seed: int = 0
    initial: str = "uniform"          # uniform | random | equilibrium
    inputs: dict = field(default_factory=lambda: {"kind": "zero"})


@dataclass
class Document:
    """A parsed configuration document."""

    cfg: ArchitectureConfig
    params: FieldParams
    run: RunSpec
    certificates: tuple
    scenario: str | None = None
    overrides: dict = field(default_factory=dict)

    def equilibrium(self) -> StateVector | None:
        """Known equilibrium of the built-in scenarios (None for user configs)."""
        if self.scenario is not None:
            return k3p3_equilibrium(self.cfg, self.params)
        return None

    def rebuild(self, **overrides) -> "Document":
        """Same document with changed scenario parameters (delays work for any config)."""
        tau = overrides.pop("tau", None)
        if tau is not None:
            overrides["tau_RL"] = overrides["tau_LR"] = tau
        if self.scenario is None:
            delay = {k: overrides.pop(k) for k in ("tau_RL", "tau_LR") if k in overrides}
            if overrides:
                raise ConfigError(f"parameters {sorted(overrides)} can only be swept on a named scenario")
            return Document(self.cfg.with_(**delay), self.params, self.run, self.certificates)
        merged = {**self.overrides, **_expand(overrides)}
        cfg, params = scenario(self.scenario, **merged)
        return Document(cfg, params, self.run, self.certificates, self.scenario, merged)

    def to_dict(self, full: bool = True) -> dict:
        doc = {"version": VERSION}
        if self.scenario is not None and not full:
            doc["scenario"] = self.scenario
            doc["overrides"] = self.overrides
        else:
            doc["architecture"] = config_to_dict(self.cfg)
            doc["params"] = self.params.to_dict()
        doc["run"] = {"steps": self.run.steps, "record_every": self.run.record_every, "seed": self.run.seed,
                      "initial": self.run.initial, "inputs": self.run.inputs}
        doc["certificates"] = list(self.certificates)
        return doc


# sweep names that set a pair of scenario parameters
_PAIRS = {
    "sigma": ("sigma_alpha", "sigma_beta"),
    "delta": ("delta_Q", "delta_W"),
    "alpha": ("alpha_H", "alpha_X"),
    "tau": ("tau_RL", "tau_LR"),
}


def _expand(overrides: dict) -> dict:
    out = {}
    for k, v in overrides.items():
        for name in _PAIRS.get(k, (k,)):
            out[name] = v
    return out


def parse_document(data: dict) -> Document:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    _unknown("top level", data, TOP_KEYS)
    if data.get("version") != VERSION:
        raise ConfigError(f"version: expected {VERSION}, got {data.get('version')!r}")
    run_data = data.get("run", {})
    _unknown("run", run_data, RUN_KEYS)
    run = RunSpec(**run_data)
    if run.initial not in ("uniform", "random", "equilibrium"):
        raise ConfigError(f"run.initial: unknown value {run.initial!r}")
    if not isinstance(run.steps, int) or run.steps < 0:
        raise ConfigError("run.steps: expected a nonnegative integer")
    if not isinstance(run.record_every, int) or run.record_every < 1:
        raise ConfigError("run.record_every: expected a positive integer")
    certs = tuple(data.get("certificates", DEFAULT_CERTIFICATES))
    bad = set(certs) - set(CERTIFICATES)
    if bad:
        raise ConfigError(f"certificates: unknown names {sorted(bad)}")
    if "scenario" in data:
        if "architecture" in data or "params" in data:
            raise ConfigError("top level: give either a scenario or an explicit architecture, not both")
        name = str(data["scenario"]).split("/")[-1]
        overrides = _expand(data.get("overrides", {}))
        try:
            cfg, params = scenario(name, **overrides)
        except TypeError as exc:
            raise ConfigError(f"overrides: {exc}") from None
        return Document(cfg, params, run, certs, name, overrides)
    if "overrides" in data:
        raise ConfigError("overrides: only valid together with a scenario")
    if "architecture" not in data:
        raise ConfigError("top level: need a scenario or an architecture")
    cfg = config_from_dict(data["architecture"])
    params = params_from_dict(data.get("params", {}))
    return Document(cfg, params, run, certs)


def load_document(source: str) -> Document:
    """Read a document from a path, or build one from a scenario name."""
    path = Path(source)
    if not path.exists():
        name = source.split("/")[-1]
        if name in SCENARIOS and (source == name or source.startswith("scenarios/")):
            return parse_document({"version": VERSION, "scenario": name})
        raise ConfigError(f"{source}: no such file or scenario")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_document(data)
