import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from npiv.kde import DensityModel, KernelSpec
from npiv.numerics import Grid1D, Grid3
from npiv.operators import IvProblem
from npiv.simulation import Scenario, generate_sample

settings.register_profile("npiv", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("npiv")


@pytest.fixture(scope="session")
def scn():
    return Scenario()


@pytest.fixture(scope="session")
def small_sample(scn):
    return generate_sample(scn, 200, 5)


@pytest.fixture(scope="session")
def small_grid(scn):
    return scn.grid(14)


@pytest.fixture(scope="session")
def small_model(small_sample):
    return DensityModel(small_sample, KernelSpec(), 0.12)


@pytest.fixture(scope="session")
def kde_problems(small_model, small_grid):
    return {kind: IvProblem.from_density_model(kind, small_model, small_grid) for kind in ("IND", "QUANT", "CE")}


@pytest.fixture(scope="session")
def phi_true_small(scn, small_grid):
    return scn.phi_true(small_grid.gx.nodes)
