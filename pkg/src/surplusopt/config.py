"""Experiment configuration: JSON parsing, validation and materialization."""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import graph as graphs
from .exceptions import ConfigurationError
from .objective import ObjectiveFamily, centralized_optimum
from .protocol import (ProtocolParams, StepSchedule, SwarmState, build_system_matrix,
                       check_params, check_spectral_guard)

MODES = ("run", "verify", "check", "compare")
DEFAULT_TOLERANCES = {"tol_c": 1e-3, "tol_y": 1e-3, "tol_q": 1e-3, "guard": 1e6}
_FIELDS = ("graph", "objective", "dim", "T", "epsilon", "schedule", "k_max", "record_stride",
           "seed", "mode", "output_dir", "tolerances", "initial", "surplus_enabled")
_REQUIRED = ("graph", "objective", "dim", "T")


class ConfigParseError(ConfigurationError):
    def __init__(self, message):
        super().__init__(message, "parse")


class Setup(NamedTuple):
    graph: graphs.WeightedDigraph
    family: ObjectiveFamily
    params: ProtocolParams
    B: graphs.SurplusMatrix
    M: object
    initial_state: SwarmState
    oracle: object


@dataclass(frozen=True)
class SimConfig:
    """Fully resolved experiment description.

    ``epsilon`` and ``schedule`` are always materialized numbers, so the JSON
    echo of a config reproduces it exactly.
    """

    graph: dict
    objective: dict
    dim: int
    T: float
    epsilon: float
    schedule: dict = field(default_factory=lambda: {"kind": "harmonic", "alpha0": 1.0, "exponent": 1.0})
    k_max: int = 10_000
    record_stride: int = 100
    seed: int = 0
    mode: str = "run"
    output_dir: str | None = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    initial: dict = field(default_factory=lambda: {"box": [-5.0, 5.0]})
    surplus_enabled: bool = True

    def to_dict(self):
        return asdict(self)

    def build_graph(self):
        spec = dict(self.graph)
        kind = spec.pop("kind")
        n = spec.pop("n", None)
        seed = spec.pop("seed", self.seed)
        return graphs.generate(kind, n, spec, seed=seed)

    def build_family(self):
        spec = self.objective
        kind = spec["kind"]
        s = self.dim
        cs = [np.asarray(c, dtype=float).reshape(s) for c in spec["c"]]
        if kind == "quadratic":
            Qs = [np.asarray(Q, dtype=float).reshape(s, s) for Q in spec["Q"]]
            return ObjectiveFamily.quadratic(Qs, cs)
        if kind == "quartic":
            return ObjectiveFamily.quartic(cs)
        raise ConfigParseError(f"objective.kind: unsupported objective kind {kind!r}")

    def build_params(self, surplus_enabled=None):
        enabled = self.surplus_enabled if surplus_enabled is None else surplus_enabled
        return ProtocolParams(self.T, self.epsilon, StepSchedule(**self.schedule), enabled)

    def build_initial_state(self, n):
        spec = self.initial
        s = self.dim
        if "r" in spec:
            r = np.asarray(spec["r"], dtype=float).reshape(n, s)
            q = np.asarray(spec.get("q", np.zeros((n, s))), dtype=float).reshape(n, s)
            y = np.asarray(spec.get("y", np.zeros((n, s))), dtype=float).reshape(n, s)
            return SwarmState(r, q, y, 0)
        low, high = spec.get("box", [-5.0, 5.0])
        rng = np.random.default_rng(self.seed)
        return SwarmState.initial(rng.uniform(low, high, size=(n, s)))

    def materialize(self, surplus_enabled=None):
        g = self.build_graph()
        family = self.build_family()
        params = self.build_params(surplus_enabled)
        B = graphs.build_surplus_matrix(g)
        M = build_system_matrix(g, B, params)
        return Setup(g, family, params, B, M, self.build_initial_state(g.n), centralized_optimum(family))


def _require(cond, message):
    if not cond:
        raise ConfigParseError(message)


def _number(d, key, kind=float, where=None):
    name = where or key
    v = d[key]
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), f"{name}: expected a number, got {v!r}")
    if kind is int:
        _require(float(v).is_integer(), f"{name}: expected an integer, got {v!r}")
        return int(v)
    return float(v)


def validate(config):
    """Run every precondition check without stepping; returns the materialized setup pieces.

    Raises ``ConfigurationError`` naming the violated condition.
    """
    g = config.build_graph()
    if not graphs.validate_strong_connectivity(g):
        raise ConfigurationError(
            "strong connectivity assumption violated: the communication graph is not strongly connected",
            "strong_connectivity")
    try:
        family = config.build_family()
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"objective assumption violated: {exc}", "objective") from None
    if family.n != g.n:
        raise ConfigurationError(
            f"objective lists {family.n} agents but the graph has {g.n}", "objective")
    params = config.build_params()
    check_params(g, params)
    B = graphs.build_surplus_matrix(g)
    M = build_system_matrix(g, B, replace(params, surplus_enabled=True))
    rho = check_spectral_guard(M)
    return g, family, params, B, M, rho


def from_dict(data, base_dir=None):
    """Build and validate a :class:`SimConfig` from parsed JSON."""
    _require(isinstance(data, dict), "config: top level must be a JSON object")
    unknown = sorted(set(data) - set(_FIELDS))
    _require(not unknown, f"config: unknown field(s) {', '.join(unknown)}")
    for key in _REQUIRED:
        _require(key in data, f"{key}: required field missing")

    gspec = dict(data["graph"]) if isinstance(data["graph"], dict) else None
    _require(gspec is not None and "kind" in gspec, "graph: expected an object with a 'kind'")
    if gspec["kind"] == "from_edge_list" and "path" in gspec:
        p = Path(gspec["path"])
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        gspec["path"] = str(p.resolve())
    ospec = data["objective"]
    _require(isinstance(ospec, dict) and "kind" in ospec and "c" in ospec,
             "objective: expected an object with 'kind' and 'c'")

    dim = _number(data, "dim", int)
    _require(dim >= 1, "dim: must be at least 1")
    T = _number(data, "T")

    sched = dict({"kind": "harmonic", "alpha0": 1.0, "exponent": 1.0}, **data.get("schedule", {}))
    sched = {"kind": str(sched["kind"]), "alpha0": float(sched["alpha0"]), "exponent": float(sched["exponent"])}
    StepSchedule(**sched)

    tol = dict(DEFAULT_TOLERANCES)
    for k, v in data.get("tolerances", {}).items():
        _require(k in DEFAULT_TOLERANCES, f"tolerances.{k}: unknown tolerance")
        tol[k] = float(v)

    mode = data.get("mode", "run")
    _require(mode in MODES, f"mode: expected one of {', '.join(MODES)}, got {mode!r}")
    k_max = _number(data, "k_max", int) if "k_max" in data else 10_000
    stride = _number(data, "record_stride", int) if "record_stride" in data else 100
    _require(k_max >= 0, "k_max: must be nonnegative")
    _require(stride >= 1, "record_stride: must be positive")
    seed = _number(data, "seed", int) if "seed" in data else 0
    initial = data.get("initial", {"box": [-5.0, 5.0]})
    _require(isinstance(initial, dict), "initial: expected an object")

    eps_raw = data.get("epsilon", "auto")
    provisional = SimConfig(gspec, ospec, dim, T, 0.0, sched, k_max, stride, seed, mode,
                            data.get("output_dir"), tol, initial, bool(data.get("surplus_enabled", True)))
    try:
        g = provisional.build_graph()
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigParseError(f"graph: {exc}") from None
    eps_max = graphs.max_epsilon(g, T)
    if eps_raw == "auto":
        eps = 0.5 * eps_max
    else:
        _require(isinstance(eps_raw, (int, float)) and not isinstance(eps_raw, bool),
                 f"epsilon: expected a number or 'auto', got {eps_raw!r}")
        eps = float(eps_raw)
    config = replace(provisional, epsilon=eps)
    validate(config)
    return config


def parse_config(path, **overrides):
    """Read, override and validate a JSON config file.

    ``overrides`` replace top-level fields (``seed``, ``k_max``, ``mode``,
    ``output_dir``) before validation. JSON syntax errors report line and column.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(data, dict):
        data.update({k: v for k, v in overrides.items() if v is not None})
    return from_dict(data, base_dir=path.parent)


def dump_config(config):
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
