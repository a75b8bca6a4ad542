import math

import numpy as np
import pytest
from scipy import stats

from fedpop.evo import EvoParams, anneal, discrete_step, evo, perturb_value
from fedpop.hp_space import (
    ContinuousUniform,
    DiscreteOrdered,
    HPVector,
    HyperparamSpec,
    default_search_space,
    sample,
)


def test_params_validation():
    for bad in (dict(epsilon0=0.0), dict(epsilon0=1.0), dict(p_re0=1.5), dict(anneal_horizon=0)):
        with pytest.raises(ValueError):
            EvoParams(**{**dict(epsilon0=0.1, p_re0=0.1, anneal_horizon=10), **bad})


@pytest.mark.parametrize("r, expected", [(0, 0.1), (50, 0.05), (100, 0.0), (250, 0.0)])
def test_anneal_closed_form(r, expected):
    eps, p_re = anneal(EvoParams(0.1, 0.1, 100), r)
    assert eps == pytest.approx(expected, abs=1e-12)
    assert p_re == pytest.approx(expected, abs=1e-12)


def test_anneal_monotone():
    p = EvoParams(0.3, 0.7, 37)
    vals = [anneal(p, r) for r in range(38)]
    assert all(b[0] <= a[0] and b[1] <= a[1] for a, b in zip(vals, vals[1:]))


def test_discrete_step():
    assert discrete_step(0.0, 10) == 0
    assert discrete_step(0.1, 10) == 1
    assert discrete_step(0.01, 10) == 1
    assert discrete_step(0.25, 10) == 3  # 2.5 rounds half up


def test_continuous_within_ball(rng):
    spec = HyperparamSpec("x", ContinuousUniform(0, 1))
    xs = [perturb_value(spec, 0.5, 0.1, 0.0, rng) for _ in range(10_000)]
    assert min(xs) >= 0.4 and max(xs) <= 0.6


def test_discrete_three_way_uniform(rng):
    spec = HyperparamSpec("d", DiscreteOrdered(tuple(range(11))))
    xs = np.array([perturb_value(spec, 5, 0.1, 0.0, rng) for _ in range(10_000)])
    assert set(np.unique(xs)) == {4, 5, 6}
    for v in (4, 5, 6):
        assert abs(np.mean(xs == v) - 1 / 3) <= 0.02


def test_discrete_boundary_drops_invalid(rng):
    spec = HyperparamSpec("d", DiscreteOrdered(tuple(range(11))))
    xs = {perturb_value(spec, 0, 0.1, 0.0, rng) for _ in range(500)}
    assert xs == {0, 1}


@pytest.mark.parametrize(
    "spec, value",
    [
        (HyperparamSpec("x", ContinuousUniform(0, 1)), 0.3),
        (HyperparamSpec("lr", ContinuousUniform(1e-3, 1, log_scale=True)), math.log(0.01)),
        (HyperparamSpec("d", DiscreteOrdered((1, 2, 3, 4, 5))), 2),
    ],
)
def test_full_resample_matches_prior(spec, value):
    rng_a = np.random.default_rng(1)
    rng_b = np.random.default_rng(2)
    out = np.array([perturb_value(spec, value, 0.1, 1.0, rng_a) for _ in range(10_000)], dtype=float)
    ref = np.array([sample([spec], rng_b).values[0] for _ in range(10_000)], dtype=float)
    if spec.is_continuous:
        assert stats.ks_2samp(out, ref).statistic < 0.05
    else:
        # KS on a discrete support: compare CDFs on the index grid.
        cdf = lambda a: np.array([np.mean(a <= k) for k in range(spec.kind.n + 1)])
        assert np.max(np.abs(cdf(out) - cdf(ref))) < 0.05


def test_evo_identity_at_zero(rng):
    specs = default_search_space().client_specs
    v = sample(specs, rng)
    assert evo(v, 0.0, 0.0, rng).values == v.values


def test_evo_bounded_by_ball(rng):
    specs = default_search_space().client_specs
    for _ in range(500):
        v = sample(specs, rng)
        out = evo(v, 0.1, 0.0, rng)
        for s, a, b in zip(specs, v.values, out.values):
            if s.is_continuous:
                lo, hi = s.kind.bounds
                assert abs(a - b) <= 0.1 * (hi - lo) + 1e-12
            else:
                assert abs(a - b) <= discrete_step(0.1, s.kind.n)


def _outside_mass(spec, value, eps):
    """Prior mass outside the admissible perturbation set."""
    if spec.is_continuous:
        lo, hi = spec.kind.bounds
        d = (hi - lo) * eps
        return 1.0 - (min(value + d, hi) - max(value - d, lo)) / (hi - lo)
    step = discrete_step(eps, spec.kind.n)
    admissible = {j for j in (value - step, value, value + step) if 0 <= j <= spec.kind.n}
    return 1.0 - len(admissible) / (spec.kind.n + 1)


def _outside(spec, value, out, eps):
    if spec.is_continuous:
        lo, hi = spec.kind.bounds
        return abs(out - value) > (hi - lo) * eps + 1e-12
    return abs(out - value) not in (0, discrete_step(eps, spec.kind.n))


def test_resample_rate_per_coordinate():
    rng = np.random.default_rng(7)
    specs = default_search_space().client_specs
    center = sample(specs, np.random.default_rng(3))
    eps, p_re, trials = 0.1, 0.1, 10_000
    hits = np.zeros(len(specs))
    for _ in range(trials):
        out = evo(center, eps, p_re, rng)
        hits += [_outside(s, a, b, eps) for s, a, b in zip(specs, center.values, out.values)]
    expected = np.array([p_re * _outside_mass(s, v, eps) for s, v in zip(specs, center.values)])
    np.testing.assert_allclose(hits / trials, expected, atol=0.03)


def test_evo_deterministic():
    specs = default_search_space().client_specs
    v = sample(specs, np.random.default_rng(0))
    a = evo(v, 0.1, 0.3, np.random.default_rng(99))
    b = evo(v, 0.1, 0.3, np.random.default_rng(99))
    assert a == b
    assert isinstance(a, HPVector)
