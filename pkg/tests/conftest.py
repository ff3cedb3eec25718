"""Shared grids, bases and noise models.

The eigensolves are the expensive part of the suite, so bases are built once
per session.
"""

import numpy as np
import pytest

from katolab.diagnostics import SweepSetup
from katolab.euler import solve_euler
from katolab.grid import build_domain
from katolab.noise import build_noise_model
from katolab.sde import SdeConfig
from katolab.spectral import build_basis


@pytest.fixture(scope="session")
def domain8():
    return build_domain(8)


@pytest.fixture(scope="session")
def domain16():
    return build_domain(16)


@pytest.fixture(scope="session")
def basis8(domain8):
    return build_basis(domain8, 16)


@pytest.fixture(scope="session")
def basis16(domain16):
    return build_basis(domain16, 32)


@pytest.fixture(scope="session")
def transport8(basis8):
    return build_noise_model(basis8, "transport_stratonovich", n_noise=4, a0=0.5)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Every test gets its own basis and Euler cache directory."""
    monkeypatch.setenv("KATOLAB_CACHE", str(tmp_path / "cache"))


@pytest.fixture(scope="session")
def sweep_setup(basis8, transport8):
    """A cheap ensemble: four paths of ten steps on the 8x8 grid."""
    u0 = basis8.velocity([1.0, 0.5, 0.25])
    euler = solve_euler(basis8.domain, u0, T=0.1, dt=0.0025)
    sde = SdeConfig(nu=0.1, dt=0.01, T=0.1, n_galerkin=8, M=100.0, seed=0)
    return SweepSetup(basis8, transport8, euler, u0, sde, c_tildes=(1.0, 2.0), n_test_fields=4, n_paths=4)
