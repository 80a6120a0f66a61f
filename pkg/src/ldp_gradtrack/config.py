"""JSON run configuration: schema validation, object construction, and the
semantic checks that gate every simulation.

A config is a single archivable JSON file.  Loading it builds the weight
matrices, stream problem, and schedules, then rejects the run unless the
weight validator and the noise/stepsize compatibility validator both pass.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .dp_noise import NoiseSchedule, StepsizeSchedule, validate_compat
from .graph_topology import (DirectedWeights, build_random_strongly_connected,
                             build_ring, validate_weights)
from .online_problem import StreamProblem

OUT_DIR_ENV = "LDP_GRADTRACK_OUT"

_NUM = {"type": "number"}
_INT = {"type": "integer"}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["graph", "problem", "stepsize", "noise", "rounds"],
    "additionalProperties": False,
    "properties": {
        "graph": {
            "type": "object",
            "oneOf": [
                {
                    "required": ["topology", "m"],
                    "properties": {
                        "topology": {"enum": ["ring", "random"]},
                        "m": {"type": "integer", "minimum": 1},
                        "weight": {"type": "number", "exclusiveMinimum": 0,
                                   "exclusiveMaximum": 1},
                        "density": {"type": "number", "exclusiveMinimum": 0,
                                    "maximum": 1},
                        "seed": _INT,
                    },
                    "additionalProperties": False,
                },
                {
                    "required": ["R", "C"],
                    "properties": {
                        "R": {"type": "array", "items": {"type": "array", "items": _NUM}},
                        "C": {"type": "array", "items": {"type": "array", "items": _NUM}},
                    },
                    "additionalProperties": False,
                },
            ],
        },
        "problem": {
            "type": "object",
            "required": ["loss", "seed"],
            "additionalProperties": False,
            "properties": {
                "loss": {"enum": ["quadratic", "logistic_l2"]},
                "dim": {"type": "integer", "minimum": 1},
                "reg": {"type": "number", "minimum": 0},
                "clip_l1": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "dataset_path": {"type": ["string", "null"]},
                "seed": _INT,
                "hetero_spread": {"type": "number", "minimum": 0},
                "stream_std": {"type": "number", "minimum": 0},
            },
        },
        "noise": {
            "type": "object",
            "required": ["sigma0_zeta", "varsigma_zeta", "sigma0_theta", "varsigma_theta"],
            "additionalProperties": False,
            "properties": {
                "sigma0_zeta": {"type": "number", "minimum": 0},
                "varsigma_zeta": {"type": ["number", "string"]},
                "sigma0_theta": {"type": "number", "minimum": 0},
                "varsigma_theta": {"type": ["number", "string"]},
            },
        },
        "stepsize": {
            "type": "object",
            "required": ["lambda0", "v"],
            "additionalProperties": False,
            "properties": {"lambda0": {"type": "number", "exclusiveMinimum": 0},
                           "v": _NUM},
        },
        "algorithm": {"enum": ["ldp_gradtrack", "pushpull_noisy"]},
        "rounds": {"type": "integer", "minimum": 0},
        "record_every": {"type": "integer", "minimum": 1},
        "repetitions": {"type": "integer", "minimum": 1},
        "seed": _INT,
        "theta0": {"enum": ["zeros", "gaussian"]},
        "out_dir": {"type": "string"},
        "surrogate_size": {"type": "integer", "minimum": 100},
    },
}

_VARSIGMA_FORM = re.compile(r"^\s*([0-9.]+)\s*\+\s*([0-9.]+)\s*i\s*$")


class ConfigError(Exception):
    """A configuration failed parsing, schema, or semantic validation."""

    def __init__(self, message: str, details: list[str] | None = None):
        super().__init__(message)
        self.details = details or []


@dataclass
class RunConfig:
    """Fully constructed and validated run description."""

    raw: dict
    weights: DirectedWeights
    problem: StreamProblem
    step: StepsizeSchedule
    schedules: list[tuple[NoiseSchedule, NoiseSchedule]]
    algorithm: str = "ldp_gradtrack"
    rounds: int = 1000
    record_every: int = 1
    repetitions: int = 1
    seed: int = 0
    theta0: str = "zeros"
    out_dir: Path | None = None
    surrogate_size: int = 1_000_000


def expand_varsigma(spec, m: int) -> list[float]:
    """Per-agent decay exponents from a number or an "a+bi" string.

    The string form assigns agent i (zero-based) the exponent a + b*i, which
    keeps the largest exponent strictly below a + b*m.
    """
    if isinstance(spec, (int, float)):
        return [float(spec)] * m
    match = _VARSIGMA_FORM.match(spec)
    if not match:
        raise ConfigError(
            f'cannot parse varsigma spec {spec!r}: expected a number or "a+bi"')
    base, coef = float(match.group(1)), float(match.group(2))
    return [base + coef * i for i in range(m)]


def _build_weights(graph: dict) -> DirectedWeights:
    if "R" in graph:
        R = np.asarray(graph["R"], dtype=float)
        C = np.asarray(graph["C"], dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape != C.shape:
            raise ConfigError(f"explicit R/C must be equal square matrices, "
                              f"got {R.shape} and {C.shape}")
        return DirectedWeights(m=R.shape[0], R=R, C=C)
    if graph["topology"] == "ring":
        return build_ring(graph["m"], graph.get("weight", 0.3))
    return build_random_strongly_connected(graph["m"], graph.get("density", 0.5),
                                           graph.get("seed", 0))


def _build_problem(spec: dict, m: int) -> StreamProblem:
    loss = spec["loss"]
    dataset_path = spec.get("dataset_path")
    if dataset_path:
        if loss != "logistic_l2":
            raise ConfigError("dataset_path requires the logistic_l2 loss")
        if dataset_path.startswith("bundled:"):
            dataset_path = Path(__file__).parent / "data" / dataset_path[len("bundled:"):]
        return StreamProblem.from_dataset(dataset_path, m=m, seed=spec["seed"],
                                          reg=spec.get("reg", 1e-3),
                                          clip_l1=spec.get("clip_l1"))
    if "dim" not in spec:
        raise ConfigError("problem.dim is required for synthetic streams")
    return StreamProblem(loss=loss, dim=spec["dim"], m=m, seed=spec["seed"],
                         reg=spec.get("reg", 0.0), clip_l1=spec.get("clip_l1"),
                         hetero_spread=spec.get("hetero_spread", 1.0),
                         stream_std=spec.get("stream_std", 1.0))


def build_config(raw: dict) -> RunConfig:
    """Construct and semantically validate a RunConfig from a parsed dict."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise ConfigError(f"config field {path}: {exc.message}") from exc

    weights = _build_weights(raw["graph"])
    graph_report = validate_weights(weights)
    problem = _build_problem(raw["problem"], weights.m)

    noise = raw["noise"]
    vz = expand_varsigma(noise["varsigma_zeta"], weights.m)
    vt = expand_varsigma(noise["varsigma_theta"], weights.m)
    schedules = [(NoiseSchedule(noise["sigma0_zeta"], vz[i]),
                  NoiseSchedule(noise["sigma0_theta"], vt[i]))
                 for i in range(weights.m)]
    step = StepsizeSchedule(raw["stepsize"]["lambda0"], raw["stepsize"]["v"])
    compat_report = validate_compat(schedules, step)

    violations = graph_report + compat_report
    if violations:
        raise ConfigError("config failed semantic validation", details=violations)

    out_dir = raw.get("out_dir") or os.environ.get(OUT_DIR_ENV)
    return RunConfig(
        raw=raw,
        weights=weights,
        problem=problem,
        step=step,
        schedules=schedules,
        algorithm=raw.get("algorithm", "ldp_gradtrack"),
        rounds=raw["rounds"],
        record_every=raw.get("record_every", 1),
        repetitions=raw.get("repetitions", 1),
        seed=raw.get("seed", 0),
        theta0=raw.get("theta0", "zeros"),
        out_dir=Path(out_dir) if out_dir else None,
        surrogate_size=raw.get("surrogate_size", 1_000_000),
    )


def load_config(path) -> RunConfig:
    """Load, parse, and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON (line {exc.lineno}, column {exc.colno}): "
            f"{exc.msg}") from exc
    return build_config(raw)


def bundled_config_path(name: str) -> Path:
    """Path of a packaged example config (e.g. "quadratic_ring10.json")."""
    here = Path(__file__).parent / "configs" / name
    if not here.exists():
        available = sorted(p.name for p in (Path(__file__).parent / "configs").glob("*.json"))
        raise FileNotFoundError(f"no bundled config {name!r}; available: {available}")
    return here
