"""katolab: stochastic Navier-Stokes in a box, measured against the Kato criterion.

As the viscosity nu goes to zero, does the solution of the noisy
Navier-Stokes equations in the unit square with no-slip walls approach the
smooth Euler solution? Kato's criterion ties the answer to the energy
dissipated in a boundary strip of width proportional to nu. This package
provides tools to:

1. Build the discrete Stokes eigenbasis on a staggered grid
2. Construct and audit transport, SALT, additive and multiplicative noise
3. Integrate the Galerkin SDE over seeded ensembles
4. Solve the Euler reference and build the Kato boundary corrector
5. Sweep nu (and the noise scaling mu = nu^alpha) and report the criterion
   quantities with slopes and trend checks

Example:
    >>> import katolab
    >>>
    >>> domain = katolab.build_domain(16)
    >>> basis = katolab.build_basis(domain, n_modes=32)
    >>> model = katolab.build_noise_model(basis, "transport_stratonovich", n_noise=8)
    >>>
    >>> u0 = basis.velocity([1.0, 0.5, 0.25])
    >>> euler = katolab.solve_euler(domain, u0, T=0.5, dt=0.00125)
    >>> setup = katolab.SweepSetup(basis, model, euler, u0, katolab.SdeConfig(nu=0.1))
    >>>
    >>> sweep = katolab.run_nu_sweep(setup, [0.1, 0.05, 0.025, 0.0125])
    >>> sweep.frame().head()
"""

from katolab.errors import (
    KatolabError,
    ConfigError,
    ResolutionError,
    SolverError,
    IntegrationError,
)
from katolab.grid import Domain, VectorGridField, build_domain, boundary_strip, gradient_energy
from katolab.spectral import SpectralBasis, VelocityField, build_basis, leray_project, norms
from katolab.noise import NoiseKind, NoiseModel, build_noise_model, audit_assumptions, normalize_amplitudes
from katolab.sde import SdeConfig, TrajectoryRecord, simulate, step, stopping_step
from katolab.euler import EulerSolution, solve_euler, build_corrector, corrector_ladder
from katolab.diagnostics import (
    SweepSetup,
    SweepResult,
    ensemble_estimate,
    run_nu_sweep,
    run_alpha_sweep,
)
from katolab.report import DiagnosticsReport, assemble_report
from katolab.config import ExperimentConfig, parse_config

__version__ = "0.1.0"

__all__ = [
    # Errors
    "KatolabError",
    "ConfigError",
    "ResolutionError",
    "SolverError",
    "IntegrationError",
    # Grid
    "Domain",
    "VectorGridField",
    "build_domain",
    "boundary_strip",
    "gradient_energy",
    # Stokes basis
    "SpectralBasis",
    "VelocityField",
    "build_basis",
    "leray_project",
    "norms",
    # Noise
    "NoiseKind",
    "NoiseModel",
    "build_noise_model",
    "audit_assumptions",
    "normalize_amplitudes",
    # SDE
    "SdeConfig",
    "TrajectoryRecord",
    "simulate",
    "step",
    "stopping_step",
    # Euler reference
    "EulerSolution",
    "solve_euler",
    "build_corrector",
    "corrector_ladder",
    # Sweeps and report
    "SweepSetup",
    "SweepResult",
    "ensemble_estimate",
    "run_nu_sweep",
    "run_alpha_sweep",
    "DiagnosticsReport",
    "assemble_report",
    # Configuration
    "ExperimentConfig",
    "parse_config",
]
