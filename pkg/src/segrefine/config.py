"""Declarative pipeline configuration with strict JSON parsing.

Unknown keys are rejected rather than ignored, so typos fail loudly;
missing keys take the published defaults. Parameter constraints of the
downstream stages are enforced here, at parse time.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .diffusion import DiffusionParams
from .errors import ConstraintViolation, UnknownKey
from .tv_fusion import SolverParams


@dataclass(frozen=True)
class GraphParams:
    k: int = 30
    tau: float = 0.07

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class SuperpixelParams:
    scale: float = 100.0
    min_size: int = 50
    sigma: float = 0.8
    w_in: float = 1.0
    w_cross: float = 0.10

    def __post_init__(self):
        if self.scale <= 0 or self.min_size < 1 or self.sigma < 0:
            raise ValueError("need scale > 0, min_size >= 1, sigma >= 0")
        if self.w_in <= 0 or self.w_cross <= 0:
            raise ValueError("edge weights must be positive")


@dataclass(frozen=True)
class EvalParams:
    ignore_index: int | None = 255

    def __post_init__(self):
        if self.ignore_index is not None and self.ignore_index < 0:
            raise ValueError("ignore_index must be a non-negative label or null")


@dataclass(frozen=True)
class PipelineConfig:
    lambda1: float = 1.0
    graph: GraphParams = field(default_factory=GraphParams)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    cscp: SolverParams = field(default_factory=SolverParams)
    superpixel: SuperpixelParams = field(default_factory=SuperpixelParams)
    eval: EvalParams = field(default_factory=EvalParams)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "graph": GraphParams,
    "diffusion": DiffusionParams,
    "cscp": SolverParams,
    "superpixel": SuperpixelParams,
    "eval": EvalParams,
}

_INT_FIELDS = {"k", "steps", "max_iters", "min_size", "ignore_index"}


def config_from_dict(data: dict) -> PipelineConfig:
    """Build a config from a parsed JSON object, validating everything."""
    if not isinstance(data, dict):
        raise ConstraintViolation(f"config root must be an object, got {type(data).__name__}")
    allowed_top = set(_SECTIONS) | {"lambda1"}
    for key in data:
        if key not in allowed_top:
            raise UnknownKey(f"unknown config key '{key}'")
    kwargs = {}
    if "lambda1" in data:
        kwargs["lambda1"] = _number(data["lambda1"], "lambda1")
    for section, cls in _SECTIONS.items():
        if section not in data:
            continue
        body = data[section]
        if not isinstance(body, dict):
            raise ConstraintViolation(f"'{section}' must be an object")
        names = set(cls.__dataclass_fields__)
        for key in body:
            if key not in names:
                raise UnknownKey(f"unknown config key '{section}.{key}'")
        values = {}
        for key, raw in body.items():
            if key == "ignore_index" and raw is None:
                values[key] = None
            elif key in _INT_FIELDS:
                values[key] = _integer(raw, f"{section}.{key}")
            else:
                values[key] = _number(raw, f"{section}.{key}")
        try:
            kwargs[section] = cls(**values)
        except ValueError as exc:
            raise ConstraintViolation(str(exc)) from exc
    return PipelineConfig(**kwargs)


def parse_config(path) -> PipelineConfig:
    """Read a JSON config file; {} yields all defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConstraintViolation(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def _number(raw, where: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConstraintViolation(f"'{where}' must be a number, got {raw!r}")
    return float(raw)


def _integer(raw, where: str) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConstraintViolation(f"'{where}' must be an integer, got {raw!r}")
    return raw
