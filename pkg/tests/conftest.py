import numpy as np
import pytest

from latticehall.lattice import LatticeSpec
from latticehall.manybody import HoppingSet, InteractionSet, build_basis
from latticehall.models import HamiltonianSpec, hofstadter, hofstadter_hubbard


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", help="skip tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--skip-slow"):
        skip = pytest.mark.skip(reason="--skip-slow given")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_hh():
    """Interacting 4x2 model at flux 1/4, two particles."""
    return hofstadter_hubbard(4, 2, (1, 4), V_nn=2.0, N=2)


@pytest.fixture(scope="session")
def free_3x3():
    return hofstadter(3, 3, (1, 3), N=3)


def random_model(spec: LatticeSpec, N: int, seed: int, V: float = 1.0) -> HamiltonianSpec:
    """Random complex nearest-neighbour hoppings plus random density couplings."""
    r = np.random.default_rng(seed)
    pairs = {}
    for x in spec.sites():
        for d in ((1, 0), (0, 1)):
            y = ((x[0] + d[0]) % spec.L1, (x[1] + d[1]) % spec.L2)
            if y != x and (y, x) not in pairs and (x, y) not in pairs:
                pairs[(y, x)] = complex(r.normal(), r.normal())
    hops = HoppingSet.from_pairs(spec, pairs)
    terms = [((i,), float(r.normal())) for i in range(spec.n_sites)]
    terms += [((i, (i + 1) % spec.n_sites), V * float(r.uniform())) for i in range(spec.n_sites)]
    return HamiltonianSpec(spec, hops, InteractionSet(tuple(terms)), N, "random")
