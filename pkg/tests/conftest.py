import os

# pin BLAS threading before numpy loads anywhere: reproducibility tests
# compare artifact bytes across runs
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

from contragp import synthesis, systems
from contragp.kernels import Kernel


@pytest.fixture(scope="session")
def oscillator():
    return systems.oscillator()


@pytest.fixture(scope="session")
def control_box():
    return systems.Box.make([-2.0, -2.0], [2.0, 2.0])


@pytest.fixture(scope="session")
def control_points(control_box):
    return systems.grid_points(control_box, 7)


@pytest.fixture(scope="session")
def osc_two_step(oscillator, control_points):
    """Analytic-model two-step synthesis at the benchmark normalization."""
    return synthesis.run_synthesis(oscillator, Kernel(dim=2), control_points,
                                   mode="two-step", rho=10.0)


@pytest.fixture(scope="session")
def osc_joint(oscillator, control_points):
    return synthesis.run_synthesis(oscillator, Kernel(dim=2), control_points,
                                   mode="joint", rho=10.0)
