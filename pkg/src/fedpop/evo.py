"""Evolutionary perturbation of HP-vectors with cosine-annealed intensity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hp_space import ContinuousUniform, HPVector, HyperparamSpec, round_half_up

__all__ = ["EvoParams", "anneal", "perturb_value", "evo", "discrete_step"]


@dataclass(frozen=True)
class EvoParams:
    epsilon0: float = 0.1
    p_re0: float = 0.1
    anneal_horizon: int = 1

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon0 < 1.0):
            raise ValueError("epsilon0 must be in (0, 1)")
        if not (0.0 <= self.p_re0 <= 1.0):
            raise ValueError("p_re0 must be in [0, 1]")
        if self.anneal_horizon < 1:
            raise ValueError("anneal_horizon must be >= 1")


def _half_cosine(x0: float, t: int, horizon: int) -> float:
    t = min(max(t, 0), horizon)
    if t == horizon:
        return 0.0
    return x0 * 0.5 * (1.0 + math.cos(math.pi * t / horizon))


def anneal(params: EvoParams, round: int) -> tuple[float, float]:
    """``(epsilon, p_re)`` after ``round`` rounds; rounds past the horizon clamp."""
    return (
        _half_cosine(params.epsilon0, round, params.anneal_horizon),
        _half_cosine(params.p_re0, round, params.anneal_horizon),
    )


def discrete_step(epsilon: float, n: int) -> int:
    if epsilon <= 0.0:
        return 0
    return max(1, round_half_up(epsilon * n))


def perturb_value(
    spec: HyperparamSpec,
    value: float | int,
    epsilon: float,
    p_re: float,
    rng: np.random.Generator,
) -> float | int:
    """Perturb one entry.

    With probability ``p_re`` the entry is redrawn from the HP's original
    distribution. Otherwise a continuous entry moves uniformly within
    ``±(high - low) * epsilon`` (clipped to the bounds) and a discrete entry
    at index ``i`` picks uniformly from ``{i - step, i, i + step}`` restricted
    to valid indices.
    """
    # The resampling coin is always flipped so the stream layout does not
    # depend on p_re.
    if rng.random() < p_re:
        return spec.draw(rng)
    if isinstance(spec.kind, ContinuousUniform):
        lo, hi = spec.kind.bounds
        delta = (hi - lo) * epsilon
        if delta == 0.0:
            return value
        return float(rng.uniform(max(value - delta, lo), min(value + delta, hi)))
    step = discrete_step(epsilon, spec.kind.n)
    if step == 0:
        return value
    i = int(value)
    choices = [j for j in (i - step, i, i + step) if 0 <= j <= spec.kind.n]
    return choices[int(rng.integers(len(choices)))]


def evo(
    vector: HPVector, epsilon: float, p_re: float, rng: np.random.Generator
) -> HPVector:
    """Coordinate-wise :func:`perturb_value`."""
    return vector.replace(
        [perturb_value(s, v, epsilon, p_re, rng) for s, v in zip(vector.specs, vector.values)]
    )
