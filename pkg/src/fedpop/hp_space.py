"""Hyperparameter search spaces: specs, vectors, sampling and Δ-ball draws.

Continuous entries are stored in *sampling scale*: ``log(value)`` when the
spec is log-scaled, the raw value otherwise. Discrete entries are stored as
an integer index into the HP's ordered value list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

__all__ = [
    "ContinuousUniform",
    "DiscreteOrdered",
    "HyperparamSpec",
    "HPVector",
    "SearchSpace",
    "sample",
    "distance",
    "sample_in_ball",
    "round_half_up",
    "default_search_space",
]


def round_half_up(x: float) -> int:
    """Nearest integer, halves rounded up (the ``⌊x⌉`` used by Evo)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ContinuousUniform:
    low: float
    high: float
    log_scale: bool = False

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValueError(f"low ({self.low}) must be < high ({self.high})")
        if self.log_scale and self.low <= 0:
            raise ValueError("log_scale requires low > 0")

    @property
    def bounds(self) -> tuple[float, float]:
        """Bounds in sampling scale."""
        if self.log_scale:
            return math.log(self.low), math.log(self.high)
        return float(self.low), float(self.high)


@dataclass(frozen=True)
class DiscreteOrdered:
    values: tuple[Any, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) < 2:
            raise ValueError("DiscreteOrdered needs at least 2 values")
        if len(set(self.values)) != len(self.values):
            raise ValueError("DiscreteOrdered values must be distinct")

    @property
    def n(self) -> int:
        """Largest valid index."""
        return len(self.values) - 1


@dataclass(frozen=True)
class HyperparamSpec:
    name: str
    kind: ContinuousUniform | DiscreteOrdered
    delta_fraction: float = 0.1

    def __post_init__(self) -> None:
        if not (0.0 < self.delta_fraction <= 1.0):
            raise ValueError(f"{self.name}: delta_fraction must be in (0, 1]")

    @property
    def is_continuous(self) -> bool:
        return isinstance(self.kind, ContinuousUniform)

    def draw(self, rng: np.random.Generator) -> float | int:
        """One draw from the HP's original distribution."""
        if isinstance(self.kind, ContinuousUniform):
            lo, hi = self.kind.bounds
            return float(rng.uniform(lo, hi))
        return int(rng.integers(0, self.kind.n + 1))

    def natural(self, entry: float | int) -> Any:
        """Convert a stored entry to the value the trainer consumes."""
        if isinstance(self.kind, ContinuousUniform):
            return math.exp(entry) if self.kind.log_scale else float(entry)
        return self.kind.values[int(entry)]

    def encode(self, value: Any) -> float | int:
        """Inverse of :meth:`natural`."""
        if isinstance(self.kind, ContinuousUniform):
            return math.log(value) if self.kind.log_scale else float(value)
        return self.kind.values.index(value)

    def validate_entry(self, entry: float | int) -> None:
        if isinstance(self.kind, ContinuousUniform):
            lo, hi = self.kind.bounds
            if not (lo <= entry <= hi):
                raise ValueError(f"{self.name}: {entry} outside [{lo}, {hi}]")
        elif int(entry) != entry or not (0 <= entry <= self.kind.n):
            raise ValueError(f"{self.name}: index {entry} out of range")


@dataclass(frozen=True)
class HPVector:
    """Concrete hyperparameter draw conforming to one spec list."""

    values: tuple[float | int, ...]
    specs: tuple[HyperparamSpec, ...] = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "specs", tuple(self.specs))
        if len(self.values) != len(self.specs):
            raise ValueError(
                f"HPVector has {len(self.values)} entries for {len(self.specs)} specs"
            )
        for spec, v in zip(self.specs, self.values):
            spec.validate_entry(v)

    def as_dict(self) -> dict[str, Any]:
        """Natural-unit values keyed by HP name."""
        return {s.name: s.natural(v) for s, v in zip(self.specs, self.values)}

    def replace(self, values: Sequence[float | int]) -> HPVector:
        return HPVector(tuple(values), self.specs)


@dataclass(frozen=True)
class SearchSpace:
    server_specs: tuple[HyperparamSpec, ...]
    client_specs: tuple[HyperparamSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "server_specs", tuple(self.server_specs))
        object.__setattr__(self, "client_specs", tuple(self.client_specs))
        for label, specs in (("server", self.server_specs), ("client", self.client_specs)):
            names = [s.name for s in specs]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {label} HP names: {names}")


def sample(space_part: Sequence[HyperparamSpec], rng: np.random.Generator) -> HPVector:
    """Draw every entry independently from its spec's distribution."""
    specs = tuple(space_part)
    return HPVector(tuple(s.draw(rng) for s in specs), specs)


def _check_same_space(a: HPVector, b: HPVector) -> None:
    if a.specs is not b.specs and a.specs != b.specs:
        raise ValueError("HP vectors conform to different spec lists")


def distance(a: HPVector, b: HPVector) -> float:
    """Euclidean norm of range-normalized coordinate differences.

    Every coordinate contributes a value in [0, 1], so continuous and
    discrete HPs are commensurable.
    """
    _check_same_space(a, b)
    diffs = []
    for spec, x, y in zip(a.specs, a.values, b.values):
        if isinstance(spec.kind, ContinuousUniform):
            lo, hi = spec.kind.bounds
            diffs.append((x - y) / (hi - lo))
        else:
            diffs.append((x - y) / spec.kind.n)
    # hypot rescales internally, so tiny differences do not underflow to 0.
    return math.hypot(*diffs)


def ball_radius(spec: HyperparamSpec) -> float | int:
    """Per-coordinate Δ radius (sampling scale, or index steps)."""
    if isinstance(spec.kind, ContinuousUniform):
        lo, hi = spec.kind.bounds
        return spec.delta_fraction * (hi - lo)
    return round_half_up(spec.delta_fraction * spec.kind.n)


def clip_to_ball(vector: HPVector, center: HPVector) -> HPVector:
    """Project each coordinate into the Δ-ball box around ``center``."""
    _check_same_space(vector, center)
    out = []
    for spec, v, c in zip(vector.specs, vector.values, center.values):
        r = ball_radius(spec)
        if isinstance(spec.kind, ContinuousUniform):
            lo, hi = spec.kind.bounds
            out.append(float(min(max(v, c - r, lo), c + r, hi)))
        else:
            out.append(int(min(max(v, c - r, 0), c + r, spec.kind.n)))
    return vector.replace(out)


def in_ball(vector: HPVector, center: HPVector, tol: float = 1e-12) -> bool:
    for spec, v, c in zip(vector.specs, vector.values, center.values):
        if abs(v - c) > ball_radius(spec) + tol:
            return False
    return True


def sample_in_ball(center: HPVector, rng: np.random.Generator) -> HPVector:
    """Uniform draw from the clipped per-coordinate box around ``center``."""
    out = []
    for spec, c in zip(center.specs, center.values):
        r = ball_radius(spec)
        if isinstance(spec.kind, ContinuousUniform):
            lo, hi = spec.kind.bounds
            out.append(float(rng.uniform(max(c - r, lo), min(c + r, hi))))
        else:
            lo_i, hi_i = max(int(c) - r, 0), min(int(c) + r, spec.kind.n)
            out.append(int(rng.integers(lo_i, hi_i + 1)))
    return center.replace(out)


SCHEDULERS = ("constant", "step", "cosine")


def default_search_space(delta_fraction: float = 0.1) -> SearchSpace:
    """Desk-scale defaults; three server HPs and seven client HPs."""
    d = delta_fraction
    server = (
        HyperparamSpec("learning_rate", ContinuousUniform(0.1, 2.0, log_scale=True), d),
        HyperparamSpec("scheduler", DiscreteOrdered(SCHEDULERS), d),
        HyperparamSpec("momentum", ContinuousUniform(0.0, 0.9), d),
    )
    client = (
        HyperparamSpec("learning_rate", ContinuousUniform(1e-3, 1.0, log_scale=True), d),
        HyperparamSpec("scheduler", DiscreteOrdered(SCHEDULERS), d),
        HyperparamSpec("momentum", ContinuousUniform(0.0, 0.9), d),
        HyperparamSpec("weight_decay", ContinuousUniform(1e-5, 1e-2, log_scale=True), d),
        HyperparamSpec("local_epochs", DiscreteOrdered((1, 2, 3, 4, 5)), d),
        HyperparamSpec("batch_size", DiscreteOrdered((8, 16, 32, 64)), d),
        HyperparamSpec("dropout", ContinuousUniform(0.0, 0.5), d),
    )
    return SearchSpace(server, client)
