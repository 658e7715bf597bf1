"""Typed hyperparameter spaces and the numeric encoding shared by every stage.

A configuration is a plain ``dict`` mapping parameter name to a raw value
(float, int or category label). The *encoded* form is a float vector with
one entry per parameter: log10 of the value for log-scaled numerics, the
value itself for other numerics, and the ordinal index for categoricals.
The *unit* form rescales encoded values into ``[0, 1]`` per dimension and is
what the optimizer and the synthetic surfaces work in.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from metashap.errors import ValidationError

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)

Config = Dict[str, Any]


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    bounds: Optional[Tuple[float, float]] = None
    categories: Optional[Tuple[str, ...]] = None
    default: Any = None
    log_scale: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"parameter {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if self.categories is None or len(self.categories) < 2:
                raise ValidationError(f"parameter {self.name!r}: need at least 2 categories")
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
            if len(set(self.categories)) != len(self.categories):
                raise ValidationError(f"parameter {self.name!r}: duplicate categories")
            if self.log_scale:
                raise ValidationError(f"parameter {self.name!r}: log_scale is numeric-only")
            if self.default is None:
                object.__setattr__(self, "default", self.categories[0])
        else:
            if self.bounds is None:
                raise ValidationError(f"parameter {self.name!r}: numeric kinds need bounds")
            lo, hi = float(self.bounds[0]), float(self.bounds[1])
            if not lo < hi:
                raise ValidationError(f"parameter {self.name!r}: need lo < hi, got {lo}, {hi}")
            if self.log_scale and lo <= 0:
                raise ValidationError(f"parameter {self.name!r}: log_scale needs lo > 0")
            object.__setattr__(self, "bounds", (lo, hi))
            if self.default is None:
                mid = math.sqrt(lo * hi) if self.log_scale else 0.5 * (lo + hi)
                object.__setattr__(self, "default", mid)
            if self.kind == INTEGER:
                object.__setattr__(self, "default", int(round(self.default)))
            else:
                object.__setattr__(self, "default", float(self.default))
        self.validate(self.default)

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    def validate(self, value: Any) -> None:
        if self.kind == CATEGORICAL:
            if str(value) not in self.categories:
                raise ValidationError(f"parameter {self.name!r}: unknown category {value!r}")
            return
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            raise ValidationError(f"parameter {self.name!r}: expected a number, got {value!r}")
        v = float(value)
        lo, hi = self.bounds
        if not (lo <= v <= hi) or math.isnan(v):
            raise ValidationError(f"parameter {self.name!r}: value {v} outside [{lo}, {hi}]")
        if self.kind == INTEGER and v != round(v):
            raise ValidationError(f"parameter {self.name!r}: expected an integer, got {value!r}")

    @property
    def encoded_bounds(self) -> Tuple[float, float]:
        """Bounds of the encoded coordinate."""
        if self.kind == CATEGORICAL:
            return 0.0, float(len(self.categories) - 1)
        lo, hi = self.bounds
        if self.log_scale:
            return math.log10(lo), math.log10(hi)
        return lo, hi

    def encode(self, value: Any) -> float:
        self.validate(value)
        if self.kind == CATEGORICAL:
            return float(self.categories.index(str(value)))
        if self.log_scale:
            return math.log10(float(value))
        return float(value)

    def decode(self, x: float) -> Any:
        """Map an encoded coordinate back to a raw value, snapping into the domain."""
        lo, hi = self.encoded_bounds
        x = min(max(float(x), lo), hi)
        if self.kind == CATEGORICAL:
            return self.categories[int(round(x))]
        if self.kind == INTEGER:
            v = 10.0**x if self.log_scale else x
            return int(min(max(round(v), math.ceil(self.bounds[0])), math.floor(self.bounds[1])))
        if self.log_scale:
            # 15 significant digits recovers decimal literals exactly after log10/pow
            v = float(f"{10.0 ** x:.15g}")
            return min(max(v, self.bounds[0]), self.bounds[1])
        return x

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"name": self.name, "kind": self.kind, "default": self.default}
        if self.kind == CATEGORICAL:
            d["categories"] = list(self.categories)
        else:
            d["bounds"] = [self.bounds[0], self.bounds[1]]
            d["log_scale"] = self.log_scale
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ParamSpec":
        try:
            return cls(
                name=str(d["name"]),
                kind=str(d["kind"]),
                bounds=tuple(d["bounds"]) if d.get("bounds") is not None else None,
                categories=tuple(d["categories"]) if d.get("categories") is not None else None,
                default=d.get("default"),
                log_scale=bool(d.get("log_scale", False)),
            )
        except KeyError as exc:
            raise ValidationError(f"parameter spec missing field {exc}") from None


@dataclass(frozen=True)
class HyperparameterSpace:
    params: Tuple[ParamSpec, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(self.params))
        if len(self.params) < 1:
            raise ValidationError("a hyperparameter space needs at least one parameter")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate parameter names in {names}")

    @property
    def k(self) -> int:
        return len(self.params)

    @property
    def names(self) -> List[str]:
        return [p.name for p in self.params]

    def __getitem__(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def validate_config(self, config: Mapping[str, Any]) -> None:
        keys, names = set(config), set(self.names)
        if keys != names:
            missing, extra = sorted(names - keys), sorted(keys - names)
            raise ValidationError(f"config keys mismatch: missing={missing} extra={extra}")
        for p in self.params:
            p.validate(config[p.name])

    def default_config(self) -> Config:
        return {p.name: p.default for p in self.params}

    def encoded_bounds(self) -> np.ndarray:
        """``(k, 2)`` array of encoded lower/upper bounds."""
        return np.array([p.encoded_bounds for p in self.params], dtype=float)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_list(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_list(self) -> List[Dict[str, Any]]:
        return [p.to_dict() for p in self.params]

    @classmethod
    def from_list(cls, items: Sequence[Mapping[str, Any]]) -> "HyperparameterSpace":
        return cls(tuple(ParamSpec.from_dict(d) for d in items))


def encode(config: Mapping[str, Any], space: HyperparameterSpace) -> np.ndarray:
    """Encode a raw configuration into a length-k float vector."""
    space.validate_config(config)
    return np.array([p.encode(config[p.name]) for p in space.params], dtype=float)


def decode(x: Sequence[float], space: HyperparameterSpace) -> Config:
    x = np.asarray(x, dtype=float)
    if x.shape != (space.k,):
        raise ValidationError(f"expected an encoded vector of length {space.k}, got shape {x.shape}")
    return {p.name: p.decode(v) for p, v in zip(space.params, x)}


def to_unit(x_encoded: np.ndarray, space: HyperparameterSpace) -> np.ndarray:
    """Rescale encoded vectors (``(k,)`` or ``(n, k)``) into the unit cube."""
    b = space.encoded_bounds()
    return (np.asarray(x_encoded, dtype=float) - b[:, 0]) / (b[:, 1] - b[:, 0])


def from_unit(u: np.ndarray, space: HyperparameterSpace) -> np.ndarray:
    b = space.encoded_bounds()
    return b[:, 0] + np.clip(np.asarray(u, dtype=float), 0.0, 1.0) * (b[:, 1] - b[:, 0])


def snap_unit(u: np.ndarray, space: HyperparameterSpace) -> np.ndarray:
    """Round unit-cube points onto the representable grid (integers, category indices)."""
    u = np.atleast_2d(np.clip(np.asarray(u, dtype=float), 0.0, 1.0)).copy()
    enc = from_unit(u, space)
    for j, p in enumerate(space.params):
        if p.kind == CATEGORICAL:
            enc[:, j] = np.round(enc[:, j])
        elif p.kind == INTEGER:
            if p.log_scale:
                vals = np.clip(np.round(10.0 ** enc[:, j]), math.ceil(p.bounds[0]), math.floor(p.bounds[1]))
                enc[:, j] = np.log10(vals)
            else:
                enc[:, j] = np.clip(np.round(enc[:, j]), math.ceil(p.bounds[0]), math.floor(p.bounds[1]))
    return to_unit(enc, space)
