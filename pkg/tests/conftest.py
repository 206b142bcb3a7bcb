import numpy as np
import pytest

from corrdyn.dynamics import (
    FlowSolver,
    GaussianMixture,
    GaussianPair,
    GaussianTriple,
    HarmonicPair,
    PhaseConfiguration,
    PotentialFamily,
)
from corrdyn.hierarchy import CorrelationSequence, EvaluationContext


def random_configuration(n, batch=8, seed=0, nu=1, scale=1.0):
    rng = np.random.default_rng(seed)
    return PhaseConfiguration(
        tuple(range(1, n + 1)),
        scale * rng.standard_normal((batch, n, nu)),
        scale * rng.standard_normal((batch, n, nu)),
    )


@pytest.fixture
def harmonic_pot():
    return PotentialFamily.build(HarmonicPair(1.0))


@pytest.fixture
def gaussian_pot():
    return PotentialFamily.build(GaussianPair(1.0, 1.0))


@pytest.fixture
def triple_pot():
    return PotentialFamily.build(HarmonicPair(0.5), GaussianTriple(0.4, 1.2))


@pytest.fixture
def zero_pot():
    return PotentialFamily.zero()


@pytest.fixture
def solver():
    return FlowSolver(step=1e-3)


@pytest.fixture
def harmonic_ctx(harmonic_pot, solver):
    return EvaluationContext(harmonic_pot, solver)


@pytest.fixture
def zero_ctx(zero_pot, solver):
    return EvaluationContext(zero_pot, solver)


def gaussian_sequence(max_arity, nu=1, seed=5):
    """Deterministic smooth correlation sequence with every arity up to max."""
    rng = np.random.default_rng(seed)
    functions = {}
    for a in range(1, max_arity + 1):
        functions[a] = GaussianMixture(
            a,
            nu,
            [1.0, -0.4 * rng.uniform(0.5, 1.0)],
            rng.uniform(-0.5, 0.5, (2, nu)),
            rng.uniform(-0.5, 0.5, (2, nu)),
            rng.uniform(0.9, 1.3, 2),
            rng.uniform(0.9, 1.3, 2),
        )
    return CorrelationSequence(functions)
