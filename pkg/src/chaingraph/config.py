"""Run configuration: JSON schema, (de)serialization and named presets.

A configuration is plain JSON.  :func:`parse_config` validates it against
:data:`CONFIG_SCHEMA` and builds a :class:`RunConfig`; :func:`config_to_dict`
is its inverse.  Region and system presets cover every built-in example.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import jsonschema
import numpy as np

from .boxmap import SamplingConfig
from .geometry import Box, Grid, boxes_in_ball
from .systems import (
    KIND_ALIASES,
    SYSTEMS,
    DiscreteMap,
    IntegratorConfig,
    PoincareReturn,
    SectionConfig,
    SystemInputError,
    SystemSpec,
    TimeTMap,
)

OUTPUT_KINDS = ("json", "dot", "boxlist")
TRAPPING_MODES = ("required", "report")


class ConfigError(ValueError):
    """Configuration rejected; ``pointer`` is a JSON pointer to the offending value."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"
        self.reason = message


_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "region", "initial_depth", "max_depth", "outputs"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"type": "string"},
                "params": {"type": "object", "additionalProperties": _num},
                "step": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode"],
                    "properties": {
                        "mode": {"enum": ["discrete", "time_T", "poincare"]},
                        "T": {"type": "number", "exclusiveMinimum": 0},
                        "period": {"type": ["number", "null"], "exclusiveMinimum": 0},
                        "coord": {"type": "integer", "minimum": 0},
                        "value": _num,
                        "direction": {"enum": [-1, 1]},
                        "max_time": {"type": "number", "exclusiveMinimum": 0},
                        "tol": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "projection": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            },
        },
        "region": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lo", "hi"],
                    "properties": {
                        "lo": _vec,
                        "hi": _vec,
                        "ball": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["center", "radius"],
                            "properties": {"center": _vec, "radius": {"type": "number", "exclusiveMinimum": 0}},
                        },
                    },
                },
            ]
        },
        "initial_depth": {"type": "integer", "minimum": 0, "maximum": 30},
        "max_depth": {"type": "integer", "minimum": 0, "maximum": 30},
        "refinement_rounds": {"type": "integer", "minimum": 0},
        "sampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "extra": {"type": "integer", "minimum": 0},
                "bloat": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "chunk_points": {"type": "integer", "minimum": 1},
                "max_edges": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "trapping": {"enum": list(TRAPPING_MODES)},
        "oracle_enabled": {"type": "boolean"},
        "oracle_pairs": {"type": "integer", "minimum": 1},
        "classify_edges": {"type": "boolean"},
        "merge_touching": {"type": "boolean"},
        "classify_budget": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "compare_T": {"type": ["array", "null"], "items": {"type": "number", "exclusiveMinimum": 0},
                      "minItems": 2, "maxItems": 2},
        "outputs": {"type": "array", "items": {"enum": list(OUTPUT_KINDS)}, "minItems": 1, "uniqueItems": True},
    },
}


@dataclass(frozen=True)
class RegionBox:
    """Explicit region: an axis-aligned box, optionally cut down to the cells meeting a ball."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    ball_center: tuple[float, ...] | None = None
    ball_radius: float | None = None


@dataclass(frozen=True)
class RunConfig:
    """Everything :func:`chaingraph.pipeline.run` needs.

    Depths are per dimension: ``initial_depth`` bisects every axis that many
    times.  Refinement runs ``refinement_rounds`` prune-and-bisect rounds but
    never past ``max_depth``.
    """

    system: SystemSpec
    region: RegionBox | str
    initial_depth: int
    max_depth: int
    refinement_rounds: int = 0
    sampling: SamplingConfig = SamplingConfig()
    oracle_enabled: bool = False
    outputs: tuple[str, ...] = ("json",)
    name: str = "run"
    trapping: str = "required"
    oracle_pairs: int = 500
    classify_edges: bool = False
    classify_budget: tuple[int, int] = (10_000, 1_000)
    compare_T: tuple[float, float] | None = None
    merge_touching: bool = True

    def __post_init__(self):
        if self.initial_depth > self.max_depth:
            raise ConfigError("initial_depth exceeds max_depth", "/initial_depth")
        if not self.outputs:
            raise ConfigError("at least one output is required", "/outputs")
        if self.trapping not in TRAPPING_MODES:
            raise ConfigError(f"unknown trapping mode {self.trapping!r}", "/trapping")

    @property
    def final_depth(self) -> int:
        return min(self.initial_depth + self.refinement_rounds, self.max_depth)


# -- serialization ---------------------------------------------------------------------


def _step_to_dict(step) -> dict:
    if isinstance(step, DiscreteMap):
        return {"mode": "discrete"}
    if isinstance(step, TimeTMap):
        return {"mode": "time_T", "T": step.T}
    s = step.section
    return {"mode": "poincare", "period": s.period, "coord": s.coord, "value": s.value,
            "direction": s.direction, "max_time": s.max_time, "tol": s.tol}


def _step_from_dict(d: dict):
    mode = d["mode"]
    if mode == "discrete":
        return DiscreteMap()
    if mode == "time_T":
        if "T" not in d:
            raise ConfigError("time_T step needs T", "/system/step/T")
        return TimeTMap(float(d["T"]))
    keys = ("period", "coord", "value", "direction", "max_time", "tol")
    return PoincareReturn(SectionConfig(**{k: d[k] for k in keys if k in d}))


def system_to_dict(spec: SystemSpec) -> dict:
    canonical = {v: k for k, v in KIND_ALIASES.items()}
    return {
        "kind": canonical.get(spec.kind, spec.kind),
        "params": {k: float(v) for k, v in sorted(spec.params.items())},
        "step": _step_to_dict(spec.step),
        "dt": spec.integrator.dt,
        "projection": list(spec.projection) if spec.projection is not None else None,
    }


def system_from_dict(d: dict) -> SystemSpec:
    step = _step_from_dict(d["step"]) if d.get("step") else None
    proj = d.get("projection")
    try:
        return SystemSpec(d["kind"], d.get("params", {}), step, IntegratorConfig(d.get("dt")),
                          tuple(proj) if proj is not None else None)
    except SystemInputError as exc:
        raise ConfigError(str(exc), "/system") from exc


def config_to_dict(cfg: RunConfig) -> dict:
    if isinstance(cfg.region, str):
        region = cfg.region
    else:
        region = {"lo": list(cfg.region.lo), "hi": list(cfg.region.hi)}
        if cfg.region.ball_center is not None:
            region["ball"] = {"center": list(cfg.region.ball_center), "radius": cfg.region.ball_radius}
    s = cfg.sampling
    return {
        "name": cfg.name,
        "system": system_to_dict(cfg.system),
        "region": region,
        "initial_depth": cfg.initial_depth,
        "max_depth": cfg.max_depth,
        "refinement_rounds": cfg.refinement_rounds,
        "sampling": {"extra": s.extra, "bloat": s.bloat, "seed": s.seed, "chunk_points": s.chunk_points,
                     "max_edges": s.max_edges},
        "trapping": cfg.trapping,
        "oracle_enabled": cfg.oracle_enabled,
        "oracle_pairs": cfg.oracle_pairs,
        "classify_edges": cfg.classify_edges,
        "classify_budget": list(cfg.classify_budget),
        "compare_T": list(cfg.compare_T) if cfg.compare_T is not None else None,
        "merge_touching": cfg.merge_touching,
        "outputs": list(cfg.outputs),
    }


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def parse_config(data: dict | str) -> RunConfig:
    """Validate a JSON document (text or already decoded) and build a :class:`RunConfig`."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))
    region = data["region"]
    if isinstance(region, dict):
        lo, hi = tuple(map(float, region["lo"])), tuple(map(float, region["hi"]))
        if len(lo) != len(hi):
            raise ConfigError("lo and hi differ in length", "/region")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ConfigError("region needs lo < hi in every dimension", "/region")
        ball = region.get("ball")
        region = RegionBox(lo, hi, tuple(map(float, ball["center"])) if ball else None,
                           float(ball["radius"]) if ball else None)
        if ball and len(region.ball_center) != len(lo):
            raise ConfigError("ball centre has the wrong dimension", "/region/ball/center")
    elif region not in REGION_PRESETS:
        raise ConfigError(f"unknown region preset {region!r}", "/region")
    s = data.get("sampling", {})
    sampling = SamplingConfig(extra=s.get("extra", 0), bloat=float(s.get("bloat", 1.0)), seed=s.get("seed", 0),
                              chunk_points=s.get("chunk_points", 400_000), max_edges=s.get("max_edges"))
    cmp = data.get("compare_T")
    cfg = RunConfig(
        system=system_from_dict(data["system"]),
        region=region,
        initial_depth=data["initial_depth"],
        max_depth=data["max_depth"],
        refinement_rounds=data.get("refinement_rounds", 0),
        sampling=sampling,
        oracle_enabled=data.get("oracle_enabled", False),
        outputs=tuple(data["outputs"]),
        name=data.get("name", "run"),
        trapping=data.get("trapping", "required"),
        oracle_pairs=data.get("oracle_pairs", 500),
        classify_edges=data.get("classify_edges", False),
        classify_budget=tuple(data.get("classify_budget", (10_000, 1_000))),
        compare_T=tuple(float(t) for t in cmp) if cmp else None,
        merge_touching=data.get("merge_touching", True),
    )
    if not isinstance(cfg.region, str) and len(cfg.region.lo) != cfg.system.dim:
        raise ConfigError(f"region is {len(cfg.region.lo)}-d but the system acts on {cfg.system.dim}-d states",
                          "/region")
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2)


# -- regions ---------------------------------------------------------------------------


def _lorenz_ball(spec: SystemSpec) -> RegionBox:
    # The sphere |X - (0, 0, sigma + r)| = R0 is absorbing for b >= 2.  Image hulls
    # of the time-1 map at coarse depths overshoot a snug ball, so use a ball about
    # (0, 0, r - 1) holding that sphere with 50% to spare, and never below radius 80.
    p = spec.params
    sigma, b, r = p["sigma"], p["b"], p["r"]
    c = sigma + r
    r0 = b * c / (2 * math.sqrt(b - 1)) if b >= 2 else c
    center = (0.0, 0.0, r - 1.0)
    radius = max(80.0, 1.5 * (r0 + abs(c - center[2])))
    return RegionBox(tuple(x - radius for x in center), tuple(x + radius for x in center), center, radius)


REGION_PRESETS = {
    "unit-interval": lambda spec: RegionBox((0.0,), (1.0,)),
    "cubic-window": lambda spec: RegionBox((-2.0,), (2.0,)),
    "weak-edge-window": lambda spec: RegionBox((-0.5,), (2.5,)),
    "lorenz-ball": _lorenz_ball,
    "lorenz-section-window": lambda spec: RegionBox((-20.0, -20.0), (20.0, 20.0)),
    "pendulum-cylinder": lambda spec: RegionBox((-math.pi, -6.0), (math.pi, 6.0)),
    "circle": lambda spec: RegionBox((0.0,), (2 * math.pi,)),
    "sin-pi-over-x-window": lambda spec: RegionBox((-1.0,), (1.0,)),
    "constant-mode-window": lambda spec: RegionBox((-2.0,), (2.0,)),
}


def resolve_region(region: RegionBox | str, spec: SystemSpec) -> RegionBox:
    if isinstance(region, str):
        if region not in REGION_PRESETS:
            raise ConfigError(f"unknown region preset {region!r}", "/region")
        return REGION_PRESETS[region](spec)
    return region


def region_grid(region: RegionBox, spec: SystemSpec, depth: int) -> tuple[Grid, np.ndarray]:
    """Grid over the region's bounding box and the region's cells on it."""
    if len(region.lo) != spec.dim:
        raise ConfigError(f"region is {len(region.lo)}-d but the system acts on {spec.dim}-d states", "/region")
    grid = Grid(Box(region.lo, region.hi), (depth,) * spec.dim, spec.periodic)
    if region.ball_center is None:
        return grid, np.arange(grid.n_boxes, dtype=np.int64)
    return grid, boxes_in_ball(grid, region.ball_center, region.ball_radius)


# -- presets ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    """A named example system with its region and resolution defaults.

    ``initial_depth`` is where coarse-to-fine refinement starts; ``--depth``
    on the command line sets the final depth.
    """

    kind: str
    params: dict
    region: str
    initial_depth: int
    step: dict | None = None
    dt: float | None = None
    projection: tuple[int, ...] | None = None
    sampling: dict = field(default_factory=dict)
    trapping: str = "required"
    classify_edges: bool = False
    description: str = ""
    step_for: Callable[[dict], dict] | None = None  # step derived from the parameters


PRESETS = {
    "logistic": Preset("LogisticMap", {"a": 3.2}, "unit-interval", 12,
                       description="logistic map a*x*(1-x) on [0, 1]"),
    "cubic-ode": Preset("Polynomial1DFlow", {"c1": 1.0, "c3": -1.0}, "cubic-window", 12,
                        step={"mode": "time_T", "T": 1.0}, classify_edges=True,
                        description="time-1 map of x' = x(1 - x^2)"),
    "weak-edge-ode": Preset("Polynomial1DFlow", {"c1": 4.0, "c2": -12.0, "c3": 13.0, "c4": -6.0, "c5": 1.0}, "weak-edge-window", 13,
                            step={"mode": "time_T", "T": 1.0}, dt=0.02, trapping="report", classify_edges=True,
                            description="time-1 map of x' = x(x-1)^2(x-2)^2"),
    "lorenz": Preset("LorenzFlow", {"sigma": 10.0, "b": 8.0 / 3.0, "r": 28.0}, "lorenz-ball", 5,
                     step={"mode": "time_T", "T": 1.0}, sampling={"max_edges": 60_000_000},
                     description="time-1 map of the Lorenz flow on an absorbing ball"),
    "lorenz-section": Preset("LorenzFlow", {"sigma": 10.0, "b": 8.0 / 3.0, "r": 17.5}, "lorenz-section-window", 5,
                             step={"mode": "poincare", "coord": 2, "value": 16.5, "direction": -1,
                                   "max_time": 20.0},
                             sampling={"bloat": 0.0, "max_edges": 60_000_000}, trapping="report",
                             description="return map of the Lorenz flow to z = 16.5 (downward crossings)"),
    "pendulum": Preset("PendulumPoincare", {"gamma": 0.2, "rho": 2.0}, "pendulum-cylinder", 5,
                       step={"mode": "poincare", "period": 2 * math.pi}, dt=0.01,
                       sampling={"bloat": 0.0, "max_edges": 80_000_000},
                       description="stroboscopic map of the forced damped pendulum"),
    "circle-rotation": Preset("CircleRotationFlow", {"omega": 0.25}, "circle", 10,
                              step={"mode": "time_T", "T": 1.0}, description="rigid rotation of the circle"),
    "sin-pi-over-x": Preset("SinPiOverXFlow", {}, "sin-pi-over-x-window", 12,
                            step={"mode": "time_T", "T": 1.0}, trapping="report",
                            description="time-1 map of x' = x sin(pi/x)"),
    "chafee-infante": Preset("ChafeeInfanteGalerkin", {"lambda": 0.5, "N": 8}, "constant-mode-window", 12,
                             step_for=lambda p: {"mode": "time_T", "T": 2.0 / p["lambda"]}, dt=0.02,
                             projection=(0,), classify_edges=True,
                             description="Galerkin truncation restricted to the constant mode"),
    "identity": Preset("IdentityMap", {"dim": 1}, "unit-interval", 8, description="the identity map"),
}

# Keys that ``preset_config`` accepts besides system parameters.
PRESET_OPTIONS = ("map", "bloat", "seed", "max_edges", "extra", "oracle", "classify", "initial_depth",
                  "rounds", "dt", "trapping", "merge")


def _parse_map(text: str, preset: Preset) -> dict:
    if text == "discrete":
        return {"mode": "discrete"}
    if text.startswith("time-"):
        try:
            return {"mode": "time_T", "T": float(text[5:])}
        except ValueError as exc:
            raise ConfigError(f"bad time-T map {text!r}", "/system/step") from exc
    if text == "poincare":
        return dict(preset.step or {"mode": "poincare"})
    raise ConfigError(f"unknown map {text!r}; use discrete, time-<T> or poincare", "/system/step")


def preset_config(name: str, depth: int | None = None, overrides: dict | None = None,
                  outputs=("json", "dot", "boxlist")) -> RunConfig:
    """Configuration for a named preset.

    ``overrides`` maps system parameter names (e.g. ``a``, ``r``, ``lambda``)
    or one of :data:`PRESET_OPTIONS` to values.  ``depth`` is the final
    per-dimension depth; presets that start coarser refine up to it.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}", "/preset")
    pre = PRESETS[name]
    overrides = dict(overrides or {})
    params = dict(pre.params)
    step = dict(pre.step) if pre.step else None
    sampling = dict(pre.sampling)
    opts = {}
    for key, value in overrides.items():
        if key == "map":
            step = _parse_map(str(value), pre)
        elif key in ("bloat",):
            sampling["bloat"] = float(value)
        elif key in ("seed", "max_edges", "extra"):
            sampling[key] = int(float(value))
        elif key in PRESET_OPTIONS:
            opts[key] = value
        else:
            try:
                params[key] = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"parameter {key} needs a number, got {value!r}", f"/system/params/{key}") from exc
    if pre.step_for is not None and "map" not in overrides:
        step = pre.step_for(params)
    final = int(depth) if depth is not None else pre.initial_depth
    initial = min(int(opts.get("initial_depth", pre.initial_depth)), final)
    rounds = int(opts.get("rounds", final - initial))
    doc = {
        "name": name,
        "system": {"kind": pre.kind, "params": params, "step": step,
                   "dt": float(opts["dt"]) if "dt" in opts else pre.dt,
                   "projection": list(pre.projection) if pre.projection else None},
        "region": pre.region,
        "initial_depth": initial,
        "max_depth": final,
        "refinement_rounds": rounds,
        "sampling": sampling,
        "trapping": str(opts.get("trapping", pre.trapping)),
        "oracle_enabled": _flag(opts.get("oracle", False)),
        "classify_edges": _flag(opts.get("classify", pre.classify_edges)),
        "merge_touching": _flag(opts.get("merge", True)),
        "outputs": list(outputs),
    }
    if doc["system"]["step"] is None:
        del doc["system"]["step"]
    return parse_config(doc)


def _flag(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).lower() in ("1", "true", "yes", "on")


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **changes)


def known_kinds() -> list[str]:
    return sorted(set(SYSTEMS) | set(KIND_ALIASES))
