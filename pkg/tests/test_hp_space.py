import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ForcedRng
from fedpop.hp_space import (
    ContinuousUniform,
    DiscreteOrdered,
    HPVector,
    HyperparamSpec,
    SearchSpace,
    default_search_space,
    distance,
    in_ball,
    sample,
    sample_in_ball,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        ContinuousUniform(1.0, 1.0)
    with pytest.raises(ValueError):
        ContinuousUniform(0.0, 1.0, log_scale=True)
    with pytest.raises(ValueError):
        DiscreteOrdered((1,))
    with pytest.raises(ValueError):
        HyperparamSpec("x", ContinuousUniform(0, 1), delta_fraction=0.0)
    with pytest.raises(ValueError):
        HyperparamSpec("x", ContinuousUniform(0, 1), delta_fraction=1.5)
    s = HyperparamSpec("x", ContinuousUniform(0, 1))
    with pytest.raises(ValueError):
        SearchSpace((s, s), ())


def test_default_space_roles():
    space = default_search_space()
    assert [s.name for s in space.server_specs] == ["learning_rate", "scheduler", "momentum"]
    assert len(space.client_specs) == 7
    assert {s.name for s in space.client_specs} == {
        "learning_rate", "scheduler", "momentum", "weight_decay",
        "local_epochs", "batch_size", "dropout",
    }


def test_hpvector_rejects_out_of_range(unit_spec):
    with pytest.raises(ValueError):
        HPVector((1.5,), (unit_spec,))
    with pytest.raises(ValueError):
        HPVector((0.5, 0.5), (unit_spec,))
    d = HyperparamSpec("b", DiscreteOrdered((1, 2, 3)))
    with pytest.raises(ValueError):
        HPVector((3,), (d,))


def test_sample_forced_draws(unit_spec):
    assert sample([unit_spec], ForcedRng(unit=0.42)).values == (0.42,)
    d = HyperparamSpec("bs", DiscreteOrdered((16, 32, 64)))
    v = sample([d], ForcedRng(index=2))
    assert v.values == (2,)
    assert v.as_dict() == {"bs": 64}


def test_sample_log_uniform(rng):
    spec = HyperparamSpec("lr", ContinuousUniform(1e-4, 1e-1, log_scale=True))
    vals = np.array([spec.natural(sample([spec], rng).values[0]) for _ in range(10_000)])
    low = np.mean((vals >= 1e-4) & (vals < 1e-3))
    high = np.mean((vals >= 1e-2) & (vals <= 1e-1))
    assert abs(low - high) <= 0.03
    assert vals.min() >= 1e-4 and vals.max() <= 1e-1


def test_natural_roundtrip_and_monotone():
    spec = HyperparamSpec("lr", ContinuousUniform(1e-3, 1.0, log_scale=True))
    entries = np.linspace(*spec.kind.bounds, 50)
    nat = [spec.natural(e) for e in entries]
    assert all(b > a for a, b in zip(nat, nat[1:]))
    assert spec.encode(nat[7]) == pytest.approx(entries[7])


def test_distance_examples(mixed_specs):
    a = HPVector((math.log(1e-3), 0.3, 2, 1), mixed_specs)
    assert distance(a, a) == 0.0

    s1 = (HyperparamSpec("x", ContinuousUniform(0, 1)), HyperparamSpec("y", ContinuousUniform(0, 1)))
    assert distance(HPVector((0.0, 0.3), s1), HPVector((1.0, 0.3), s1)) == pytest.approx(1.0)
    assert distance(HPVector((0.0, 0.0), s1), HPVector((0.5, 0.5), s1)) == pytest.approx(math.sqrt(0.5))

    other = tuple(HyperparamSpec(s.name + "_", s.kind) for s in mixed_specs)
    with pytest.raises(ValueError):
        distance(a, HPVector(a.values, other))


@st.composite
def vectors(draw, specs, n=1):
    out = []
    for _ in range(n):
        vals = []
        for s in specs:
            if isinstance(s.kind, ContinuousUniform):
                lo, hi = s.kind.bounds
                vals.append(draw(st.floats(lo, hi, allow_nan=False)))
            else:
                vals.append(draw(st.integers(0, s.kind.n)))
        out.append(HPVector(tuple(vals), specs))
    return out


SPECS = (
    HyperparamSpec("lr", ContinuousUniform(1e-4, 1e-1, log_scale=True), 0.1),
    HyperparamSpec("mom", ContinuousUniform(0.0, 0.9), 0.2),
    HyperparamSpec("bs", DiscreteOrdered((8, 16, 32, 64, 128)), 0.25),
)


@given(vectors(SPECS, n=3))
@settings(max_examples=300, deadline=None)
def test_distance_is_metric(vs):
    a, b, c = vs
    assert distance(a, b) >= 0
    assert distance(a, b) == pytest.approx(distance(b, a))
    assert (distance(a, b) == 0) == (a.values == b.values)
    assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12


def test_ball_interval_continuous(unit_spec, rng):
    center = HPVector((0.5,), (unit_spec,))
    xs = [sample_in_ball(center, rng).values[0] for _ in range(2000)]
    assert min(xs) >= 0.4 and max(xs) <= 0.6


def test_ball_clamped_discrete(rng):
    spec = HyperparamSpec("d", DiscreteOrdered((0, 1, 2, 3, 4)), 0.25)
    center = HPVector((0,), (spec,))
    seen = {sample_in_ball(center, rng).values[0] for _ in range(500)}
    assert seen == {0, 1}


def test_ball_near_boundary(unit_spec, rng):
    center = HPVector((0.95,), (unit_spec,))
    xs = np.array([sample_in_ball(center, rng).values[0] for _ in range(10_000)])
    assert xs.min() >= 0.85
    assert xs.max() <= 1.0


@given(vectors(SPECS, n=1), st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_ball_output_valid_and_inside(vs, seed):
    center = vs[0]
    out = sample_in_ball(center, np.random.default_rng(seed))
    # Construction validates bounds; check the box as well.
    HPVector(out.values, out.specs)
    assert in_ball(out, center)
