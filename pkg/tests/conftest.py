import numpy as np
import pytest

from fedpop.hp_space import ContinuousUniform, DiscreteOrdered, HyperparamSpec


class ForcedRng:
    """Stands in for a Generator and returns scripted unit draws."""

    def __init__(self, unit=0.0, index=0):
        self.unit = unit
        self.index = index

    def uniform(self, low, high):
        return low + self.unit * (high - low)

    def integers(self, low, high=None):
        return self.index

    def random(self):
        return self.unit


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_spec():
    return HyperparamSpec("x", ContinuousUniform(0.0, 1.0), 0.1)


@pytest.fixture
def mixed_specs():
    return (
        HyperparamSpec("lr", ContinuousUniform(1e-4, 1e-1, log_scale=True), 0.1),
        HyperparamSpec("mom", ContinuousUniform(0.0, 0.9), 0.2),
        HyperparamSpec("bs", DiscreteOrdered((8, 16, 32, 64, 128)), 0.25),
        HyperparamSpec("sched", DiscreteOrdered(("constant", "step", "cosine")), 0.5),
    )


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Records ``criterion -> (passed, detail)`` for the end-of-run summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
