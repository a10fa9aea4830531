import numpy as np
import pytest

from tnnmg_plasticity.assembly import BlockSystem
from tnnmg_plasticity.kernels import warmup
from tnnmg_plasticity.mesh import benchmark_hierarchy
from tnnmg_plasticity.model import BENCHMARK_PARAMS, TRESCA, VON_MISES, DissipationKind, MaterialParams

KINDS = [DissipationKind(VON_MISES, False), DissipationKind(TRESCA, False),
         DissipationKind(VON_MISES, True), DissipationKind(TRESCA, True)]
ISO_PARAMS = MaterialParams(lam=1e7, mu=6.5e6, sigma_c=450.0, k1=3e6, k2=3e6)


def kind_id(kind):
    return f"{kind.variant}-{'iso' if kind.isotropic else 'kin'}"


def params_for(kind):
    return ISO_PARAMS if kind.isotropic else BENCHMARK_PARAMS


@pytest.fixture(scope="session", autouse=True)
def _compiled():
    warmup()


@pytest.fixture(scope="session")
def hierarchies():
    cache = {}

    def get(level):
        if level not in cache:
            cache[level] = benchmark_hierarchy(level)
        return cache[level]
    return get


@pytest.fixture(scope="session")
def systems(hierarchies):
    cache = {}

    def get(level, kind=KINDS[0]):
        key = (level, kind)
        if key not in cache:
            cache[key] = BlockSystem(hierarchies(level).finest, params_for(kind), kind)
        return cache[key]
    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
