import numpy as np
import pytest

from vbnn.model import NetworkParams, NetworkShape, PriorConfig

# Network shapes used across the suite: the smallest legal network and the
# synthetic benchmark size.
TOY_SHAPE = NetworkShape(p=1, k=1)
BENCH_SHAPE = NetworkShape(p=2, k=3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def random_theta(rng):
    def make(shape: NetworkShape, scale: float = 1.0) -> NetworkParams:
        return NetworkParams(
            beta0=float(rng.normal(0, scale)),
            beta=rng.normal(0, scale, shape.k),
            gamma0=rng.normal(0, scale, shape.k),
            gamma=rng.normal(0, scale, (shape.k, shape.p)),
        )

    return make


@pytest.fixture
def standard_prior():
    def make(shape: NetworkShape) -> PriorConfig:
        return PriorConfig.standard(shape.K)

    return make
