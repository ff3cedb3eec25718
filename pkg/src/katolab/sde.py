"""Galerkin SDE in Stokes-coefficient space.

The projected equation for the first ``n`` coefficients ``U`` reads::

    dU = (-nu Lambda U - P_n L_u u + mu/2 P_n sum_i Q_i^2 u) dt - mu^(1/2) sum_i B_i U dW_i

with ``B_i[k, j] = <G_i a_j, a_k>``. The correction applies ``Q_i^2`` on the
full grid before projecting; ``sum_i B_i^2`` is the conversion term of the
truncated system and is used only to check the Stratonovich scheme. The
Stokes part is integrated exactly per coefficient (exponential
Euler-Maruyama); the stochastic integrand is taken at the left point.

Example:
    >>> cfg = SdeConfig(nu=0.05, dt=0.005, T=0.5, seed=3)
    >>> record = simulate(cfg, model, u0)
    >>> record.energy_frame().tail(1)
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from katolab.errors import ConfigError, IntegrationError
from katolab.noise import CORRECTED_KINDS, GalerkinNoise, NoiseModel, advect_packed, galerkin_noise
from katolab.spectral import SpectralBasis, VelocityField

logger = logging.getLogger(__name__)

SCHEMES = ("exponential_euler_maruyama",)

# Largest allowed dt * ||u0||_1
CFL_LIMIT = 0.5


@dataclass(frozen=True)
class SdeConfig:
    """Parameters of one SDE run.

    Attributes:
        nu: Viscosity, 0 < nu < 1
        mu: Noise scale on the stochastic integral (None means mu = nu)
        n_galerkin: Active modes n (None means every basis mode)
        dt: Time step
        T: Horizon, a whole number of steps
        M: Stopping threshold, > 1
        seed: Seed of the Brownian stream
        truncate: Zero the state after the stopping time
        nonlinear: Include the advection term (off for the linear test mode)
        scheme: Time integrator
    """
    nu: float
    mu: Optional[float] = None
    n_galerkin: Optional[int] = None
    dt: float = 0.005
    T: float = 0.5
    M: float = 100.0
    seed: int = 0
    truncate: bool = False
    nonlinear: bool = True
    scheme: str = "exponential_euler_maruyama"

    def __post_init__(self):
        errors = []
        if not 0 < self.nu < 1:
            errors.append(f"nu must satisfy 0 < nu < 1, got {self.nu}")
        if self.mu is not None and not self.mu > 0:
            errors.append(f"mu must be positive, got {self.mu}")
        if not self.dt > 0:
            errors.append(f"dt must be positive, got {self.dt}")
        if not self.T >= 0:
            errors.append(f"T must be non-negative, got {self.T}")
        elif self.dt > 0 and abs(round(self.T / self.dt) * self.dt - self.T) > 1e-9 * max(self.T, 1.0):
            errors.append(f"T={self.T} is not a whole number of steps of dt={self.dt}")
        if not self.M > 1:
            errors.append(f"M must exceed 1, got {self.M}")
        if self.n_galerkin is not None and self.n_galerkin < 1:
            errors.append(f"n_galerkin must be positive, got {self.n_galerkin}")
        if self.seed < 0:
            errors.append(f"seed must be non-negative, got {self.seed}")
        if self.scheme not in SCHEMES:
            errors.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if errors:
            raise ConfigError(errors)

    @property
    def noise_scale(self) -> float:
        return self.nu if self.mu is None else self.mu

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class BrownianStream:
    """Independent N(0, dt) increments per noise mode from PCG64(seed)."""
    seed: int
    n_modes: int
    dt: float

    def __post_init__(self):
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def increments(self, n_steps: int) -> np.ndarray:
        """Next ``n_steps`` rows of increments, shape (n_steps, n_modes)."""
        return np.sqrt(self.dt) * self._rng.standard_normal((n_steps, self.n_modes))


def brownian_digest(increments: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(increments, dtype=float).tobytes()).hexdigest()


def coarsen(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments (same path, coarser dt)."""
    n, k = increments.shape
    if n % factor:
        raise ValueError(f"{n} increments do not split into blocks of {factor}")
    return increments.reshape(n // factor, factor, k).sum(axis=1)


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One SDE path.

    Attributes:
        times: Time grid
        coeff_history: Coefficients per time, shape (n_t, n)
        energy_history: Per time: ||u||^2, ||u||_1^2 and the running
            trapezoid integral of ||u||_1^2
        stop_step: Index of the first time the stopping functional reaches
            M + ||u0||^2 (None if never)
        stop_hit: Time of ``stop_step``
        seed: Brownian seed
        brownian_digest: sha256 of the increments
        nu: Viscosity of the run
        mu: Noise scale of the run
        truncated: Whether the state was zeroed after the stopping time
        increments: Brownian increments, shape (n_steps, K), if kept
    """
    times: np.ndarray
    coeff_history: np.ndarray
    energy_history: np.ndarray
    stop_step: Optional[int]
    stop_hit: Optional[float]
    seed: int
    brownian_digest: str
    nu: float
    mu: float
    truncated: bool = False
    increments: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_galerkin(self) -> int:
        return self.coeff_history.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def checksum(self) -> str:
        """sha256 of times, coefficients and Brownian digest."""
        m = hashlib.sha256()
        m.update(np.ascontiguousarray(self.times).tobytes())
        m.update(np.ascontiguousarray(self.coeff_history).tobytes())
        m.update(self.brownian_digest.encode())
        return m.hexdigest()

    def energy_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "time": self.times,
            "l2_sq": self.energy_history[:, 0],
            "h1_sq": self.energy_history[:, 1],
            "dissipation": self.energy_history[:, 2],
        })

    def velocity(self, basis: SpectralBasis, k: int) -> VelocityField:
        return basis.velocity(self.coeff_history[k])


class _System(NamedTuple):
    basis: SpectralBasis
    n: int
    lam: np.ndarray
    fields: np.ndarray
    noise: Optional[GalerkinNoise]


def _system(basis: SpectralBasis, model: Optional[NoiseModel], n: Optional[int]) -> _System:
    n = basis.n_modes if n is None else n
    if not 1 <= n <= basis.n_modes:
        raise ValueError(f"n_galerkin must be between 1 and {basis.n_modes}, got {n}")
    noise = None
    if model is not None:
        if model.basis is not basis and model.basis.digest != basis.digest:
            raise ValueError("noise model and state live on different bases")
        noise = galerkin_noise(model, n)
    return _System(basis, n, basis.eigenvalues[:n], basis.fields[:n], noise)


def _nonlinear(sys: _System, U: np.ndarray) -> np.ndarray:
    """Coefficients of ``-P_n L_u u``."""
    domain = sys.basis.domain
    u = U @ sys.fields
    return -domain.h ** 2 * (advect_packed(domain, u, u) @ sys.fields.T)


def _correction_matrix(sys: _System, correction: Optional[str]) -> Optional[np.ndarray]:
    if correction is None or sys.noise is None:
        return None
    if correction == "truncated":
        return sys.noise.truncated_correction
    return sys.noise.correction


def _drift(sys: _System, U: np.ndarray, mu: float, nonlinear: bool, correction: Optional[str] = "full") -> np.ndarray:
    out = _nonlinear(sys, U) if nonlinear else np.zeros_like(U)
    matrix = _correction_matrix(sys, correction)
    if matrix is not None:
        out = out + 0.5 * mu * (matrix @ U)
    return out


def _noise_term(sys: _System, U: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """``sum_i dW_i B_i U`` (or the additive forcing) in coefficients."""
    if sys.noise is None or len(dW) == 0:
        return np.zeros_like(U)
    if sys.noise.vectors is not None:
        return dW @ sys.noise.vectors
    return np.tensordot(dW, sys.noise.matrices, axes=1) @ U


def _n_noise(model: Optional[NoiseModel]) -> int:
    return 0 if model is None else model.n_noise


def _check_increments(model: Optional[NoiseModel], dW: np.ndarray) -> None:
    if np.shape(dW)[-1] != _n_noise(model):
        raise ValueError(f"expected {_n_noise(model)} increments per step, got {np.shape(dW)[-1]}")


def _em_step(
    sys: _System, cfg: SdeConfig, U: np.ndarray, dW: np.ndarray, decay: np.ndarray, correction: str = "full"
) -> np.ndarray:
    mu = cfg.noise_scale
    incr = U + cfg.dt * _drift(sys, U, mu, cfg.nonlinear, correction)
    if sys.noise is not None:
        incr = incr - np.sqrt(mu) * _noise_term(sys, U, dW)
    return decay * incr


def _truncated_em_step(sys: _System, cfg: SdeConfig, U: np.ndarray, dW: np.ndarray, decay: np.ndarray) -> np.ndarray:
    """Ito step of the truncated Stratonovich system, correction ``sum_i B_i^2``."""
    return _em_step(sys, cfg, U, dW, decay, correction="truncated")


def _heun_step(sys: _System, cfg: SdeConfig, U: np.ndarray, dW: np.ndarray, decay: np.ndarray) -> np.ndarray:
    """Stratonovich step: Euler drift, trapezoidal noise from an Euler predictor."""
    sigma = np.sqrt(cfg.noise_scale)
    base = U + cfg.dt * _drift(sys, U, cfg.noise_scale, cfg.nonlinear, correction=None)
    pred = base - sigma * _noise_term(sys, U, dW)
    return decay * (base - sigma * _noise_term(sys, 0.5 * (U + pred), dW))


def drift(cfg: SdeConfig, model: Optional[NoiseModel], u: VelocityField) -> np.ndarray:
    """Coefficients of ``-P_n P L_u u + (mu/2) P_n sum_i Q_i^2 u``.

    The Stokes term is excluded; the stepper applies it exactly.

    Args:
        cfg: Run parameters (nu, mu, n_galerkin, nonlinear)
        model: Noise model, or None for no noise
        u: State in the n-mode span

    Returns:
        Vector of length n_galerkin
    """
    sys = _system(u.basis, model, cfg.n_galerkin)
    return _drift(sys, u.coeffs[: sys.n], cfg.noise_scale, cfg.nonlinear)


def step(cfg: SdeConfig, model: Optional[NoiseModel], u: VelocityField, dW: np.ndarray) -> VelocityField:
    """One exponential Euler-Maruyama step.

    Args:
        cfg: Run parameters
        model: Noise model, or None
        u: Current state
        dW: Increments, one per noise mode

    Returns:
        Next state in the n-mode span

    Raises:
        IntegrationError: the new state is not finite
    """
    dW = np.asarray(dW, dtype=float)
    _check_increments(model, dW)
    sys = _system(u.basis, model, cfg.n_galerkin)
    decay = np.exp(-cfg.nu * sys.lam * cfg.dt)
    U = _em_step(sys, cfg, u.coeffs[: sys.n], dW, decay)
    if not np.all(np.isfinite(U)):
        raise IntegrationError("non-finite state after one step", step=1)
    return u.basis.velocity(U)


def _energy_row(lam: np.ndarray, U: np.ndarray):
    return float(U @ U), float(lam @ (U * U))


def recompute_energy_history(lam: np.ndarray, times: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Energy functionals of a coefficient history, row by row."""
    out = np.zeros((len(times), 3))
    integral = 0.0
    for k in range(len(times)):
        e, h1 = _energy_row(lam[: coeffs.shape[1]], coeffs[k])
        if k:
            integral += 0.5 * (times[k] - times[k - 1]) * (out[k - 1, 1] + h1)
        out[k] = (e, h1, integral)
    return out


def stopping_step(energy_history: np.ndarray, M: float, e0: float) -> Optional[int]:
    """First index where sup-so-far ||u||^2 + int ||u||_1^2 reaches M + e0.

    Args:
        energy_history: Rows (||u||^2, ||u||_1^2, running integral)
        M: Threshold above the initial energy
        e0: ||u0||^2

    Returns:
        Step index, or None when the threshold is never reached
    """
    functional = np.maximum.accumulate(energy_history[:, 0]) + energy_history[:, 2]
    hits = np.flatnonzero(functional >= M + e0)
    return int(hits[0]) if len(hits) else None


def _check_cfl(cfg: SdeConfig, lam: np.ndarray, U0: np.ndarray) -> None:
    h1 = float(np.sqrt(lam @ (U0 * U0)))
    if h1 > 0 and cfg.dt * h1 > CFL_LIMIT:
        raise ConfigError([
            f"dt={cfg.dt} violates dt <= {CFL_LIMIT}/||u0||_1 = {CFL_LIMIT / h1:.4g}"
        ])


def simulate(
    cfg: SdeConfig,
    model: Optional[NoiseModel],
    u0: VelocityField,
    progress: bool = False,
    keep_increments: bool = True,
) -> TrajectoryRecord:
    """Integrate one path to T.

    The stopping time is monitored on every step. With ``cfg.truncate`` the
    state is set to zero after it; otherwise integration continues and the
    hit is only recorded.

    Args:
        cfg: Run parameters
        model: Noise model, or None for the deterministic equation
        u0: Initial state (its first n_galerkin coefficients are used)
        progress: Show a progress bar over steps
        keep_increments: Store the Brownian increments on the record

    Returns:
        TrajectoryRecord

    Raises:
        ConfigError: dt breaks the CFL-type bound
        IntegrationError: a non-finite state; ``record`` holds the path so far
    """
    sys = _system(u0.basis, model, cfg.n_galerkin)
    U = u0.coeffs[: sys.n].copy()
    _check_cfl(cfg, sys.lam, U)

    n_steps = cfg.n_steps
    times = cfg.dt * np.arange(n_steps + 1)
    dW = BrownianStream(cfg.seed, _n_noise(model), cfg.dt).increments(n_steps)
    digest = brownian_digest(dW)
    decay = np.exp(-cfg.nu * sys.lam * cfg.dt)

    coeffs = np.zeros((n_steps + 1, sys.n))
    coeffs[0] = U
    e0 = _energy_row(sys.lam, U)[0]
    threshold = cfg.M + e0
    sup, integral, h1_prev = e0, 0.0, _energy_row(sys.lam, U)[1]
    stop = None

    def partial(k: int) -> TrajectoryRecord:
        return _record(cfg, sys, times[: k + 1], coeffs[: k + 1], e0, digest, dW if keep_increments else None)

    steps = range(n_steps)
    if progress:
        steps = tqdm(steps, desc=f"path seed={cfg.seed}", leave=False)
    for k in steps:
        U = _em_step(sys, cfg, U, dW[k], decay)
        if not np.all(np.isfinite(U)):
            raise IntegrationError(
                f"non-finite state at step {k + 1} (nu={cfg.nu}, seed={cfg.seed})",
                step=k + 1,
                record=partial(k),
            )
        coeffs[k + 1] = U
        e, h1 = _energy_row(sys.lam, U)
        integral += 0.5 * (times[k + 1] - times[k]) * (h1_prev + h1)
        h1_prev = h1
        sup = max(sup, e)
        if stop is None and sup + integral >= threshold:
            stop = k + 1
            logger.debug("seed %d: stopping time reached at step %d", cfg.seed, stop)
            if cfg.truncate:
                break

    return _record(cfg, sys, times, coeffs, e0, digest, dW if keep_increments else None)


def _record(cfg, sys, times, coeffs, e0, digest, increments) -> TrajectoryRecord:
    energy = recompute_energy_history(sys.lam, times, coeffs)
    stop = stopping_step(energy, cfg.M, e0)
    return TrajectoryRecord(
        times=times,
        coeff_history=coeffs,
        energy_history=energy,
        stop_step=stop,
        stop_hit=None if stop is None else float(times[stop]),
        seed=cfg.seed,
        brownian_digest=digest,
        nu=cfg.nu,
        mu=cfg.noise_scale,
        truncated=cfg.truncate,
        increments=increments,
    )


def weak_residual(
    traj: TrajectoryRecord,
    model: Optional[NoiseModel],
    cfg: SdeConfig,
    phi: VelocityField,
) -> np.ndarray:
    """Defect of the weak formulation along a stored path.

    Evaluates ``<u_t, phi>`` against ``<u_0, phi>`` plus left-point sums of
    the drift, Stokes, correction and stochastic terms using the stored
    increments.

    Args:
        traj: Path with increments
        model: Noise model used for the path
        cfg: Run parameters used for the path
        phi: Test field in the basis span

    Returns:
        Defect per stored time (zero at t = 0)
    """
    sys = _system(phi.basis, model, traj.n_galerkin)
    if traj.increments is None and model is not None and model.n_noise:
        raise ValueError("trajectory has no stored increments")
    p = phi.coeffs[: sys.n]
    mu = traj.mu
    lhs = traj.coeff_history @ p
    rhs = np.empty_like(lhs)
    rhs[0] = lhs[0]
    acc = lhs[0]
    for k in range(len(traj.times) - 1):
        U = traj.coeff_history[k]
        dt = traj.times[k + 1] - traj.times[k]
        term = _drift(sys, U, mu, cfg.nonlinear) @ p - traj.nu * (sys.lam * U) @ p
        acc = acc + dt * term
        if sys.noise is not None and traj.increments is not None:
            acc = acc - np.sqrt(mu) * (_noise_term(sys, U, traj.increments[k]) @ p)
        rhs[k + 1] = acc
    return lhs - rhs


class RefinementReport(NamedTuple):
    """Discrepancy per time step and its fitted log-log slope."""
    dts: np.ndarray
    errors: np.ndarray
    slope: float


def _log_slope(dts: np.ndarray, errors: np.ndarray) -> float:
    mask = errors > 0
    if mask.sum() < 2:
        return float("nan")
    return float(stats.linregress(np.log(dts[mask]), np.log(errors[mask])).slope)


def _terminal(sys, cfg, U0, dW, stepper) -> np.ndarray:
    decay = np.exp(-cfg.nu * sys.lam * cfg.dt)
    U = U0.copy()
    for k in range(len(dW)):
        U = stepper(sys, cfg, U, dW[k], decay)
    return U


def stratonovich_consistency(
    cfg: SdeConfig,
    model: NoiseModel,
    u0: VelocityField,
    seed: Optional[int] = None,
    n_paths: int = 8,
    refinements: int = 4,
) -> RefinementReport:
    """Compare the Ito scheme of the truncated system with a Stratonovich scheme.

    The Ito side uses the ``sum_i B_i^2`` conversion term, so the two agree
    in the limit of small steps for any Galerkin dimension.

    Both run on the same Brownian path, generated at the finest step and
    summed to each coarser one. ``cfg.dt`` is the coarsest step.

    Returns:
        Mean-square terminal discrepancy per step size and the fitted slope
    """
    if model.kind not in CORRECTED_KINDS:
        raise ValueError(f"Stratonovich consistency needs transport noise with Q_i != 0, got {model.kind.value}")
    seed = cfg.seed if seed is None else seed
    sys = _system(u0.basis, model, cfg.n_galerkin)
    U0 = u0.coeffs[: sys.n]
    finest = 2 ** (refinements - 1)
    dts = cfg.dt / 2.0 ** np.arange(refinements)
    errors = np.zeros(refinements)
    for r in range(n_paths):
        fine = BrownianStream(seed + r, model.n_noise, cfg.dt / finest).increments(cfg.n_steps * finest)
        for level in range(refinements):
            level_cfg = replace(cfg, dt=dts[level])
            dW = coarsen(fine, 2 ** (refinements - 1 - level))
            ito = _terminal(sys, level_cfg, U0, dW, _truncated_em_step)
            strat = _terminal(sys, level_cfg, U0, dW, _heun_step)
            errors[level] += np.sum((ito - strat) ** 2)
    errors /= n_paths
    return RefinementReport(dts, errors, _log_slope(dts, errors))


def strong_self_convergence(
    cfg: SdeConfig,
    model: Optional[NoiseModel],
    u0: VelocityField,
    seed: Optional[int] = None,
    n_paths: int = 4,
    levels: int = 4,
) -> RefinementReport:
    """Strong order from successive refinements on common Brownian paths.

    Runs dt, dt/2, ... dt/2^(levels-1); the error at level l is the RMS over
    paths of the terminal difference between levels l and l + 1.
    """
    seed = cfg.seed if seed is None else seed
    sys = _system(u0.basis, model, cfg.n_galerkin)
    U0 = u0.coeffs[: sys.n]
    finest = 2 ** (levels - 1)
    dts = cfg.dt / 2.0 ** np.arange(levels)
    sq = np.zeros(levels - 1)
    for r in range(n_paths):
        fine = BrownianStream(seed + r, _n_noise(model), cfg.dt / finest).increments(cfg.n_steps * finest)
        terminal = []
        for level in range(levels):
            dW = coarsen(fine, 2 ** (levels - 1 - level))
            terminal.append(_terminal(sys, replace(cfg, dt=dts[level]), U0, dW, _em_step))
        for level in range(levels - 1):
            sq[level] += np.sum((terminal[level] - terminal[level + 1]) ** 2)
    errors = np.sqrt(sq / n_paths)
    return RefinementReport(dts[:-1], errors, _log_slope(dts[:-1], errors))


class GbmCheck(NamedTuple):
    exact: float
    ito: float
    heun: float

    @property
    def ito_error(self) -> float:
        return abs(self.ito - self.exact)

    @property
    def heun_error(self) -> float:
        return abs(self.heun - self.exact)


def scalar_gbm_check(sigma: float, x0: float = 1.0, T: float = 1.0, dt: float = 1e-3, seed: int = 0) -> GbmCheck:
    """Scalar ``dX = sigma X o dW`` against its closed form ``x0 exp(sigma W_T)``.

    Runs the corrected Ito Euler scheme and the Stratonovich predictor-
    trapezoid scheme on one path.
    """
    n = int(round(T / dt))
    dW = BrownianStream(seed, 1, dt).increments(n)[:, 0]
    ito = heun = x0
    for w in dW:
        ito = ito + 0.5 * sigma ** 2 * ito * dt + sigma * ito * w
        pred = heun + sigma * heun * w
        heun = heun + 0.5 * sigma * (heun + pred) * w
    return GbmCheck(exact=float(x0 * np.exp(sigma * dW.sum())), ito=float(ito), heun=float(heun))
