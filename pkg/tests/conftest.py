"""Shared fixtures.

The coefficient table is session-scoped: n_max=24 with moderate panel counts
keeps every derived scalar accurate to ~1e-7 for Fock levels 0..3 while
building in well under a second.
"""

import numpy as np
import pytest

from msgate.hilbert import FockCutoff
from msgate.ideal import DimensionlessGateParams
from msgate.magnus import QuadratureSpec, compute_coefficient_table
from msgate.oracle import IntegratorConfig


@pytest.fixture(scope="session")
def table():
    return compute_coefficient_table(
        n_max=24, quad=QuadratureSpec(panels_1d=2**12, panels_2d=2**8)
    )


@pytest.fixture(scope="session")
def derived(table):
    return table.derived()


@pytest.fixture(scope="session")
def calibrated_params():
    return DimensionlessGateParams()


@pytest.fixture(scope="session")
def oracle_cutoff():
    return FockCutoff(32)


@pytest.fixture(scope="session")
def fast_integrator():
    # 4096 RK4 steps puts the integrator error near 1e-10 for one loop at
    # this cutoff -- far below every tolerance used against it.
    return IntegratorConfig(steps_per_gate=4096)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
