"""Deterministic Euler reference solution and the Kato boundary corrector.

The Euler solver advances the node vorticity ``omega = C^T u`` with classical
RK4, recovering the stream function from ``C^T C psi = omega`` (psi = 0 on the
wall) at every stage. The same skew-symmetric advection as the SDE is used,
so the semi-discrete energy is conserved exactly.

The corrector is ``v = curl(theta(d / w) psi)`` with the cutoff profile
``theta(s) = (1 - s)^3 (1 + 3 s)`` on [0, 1] and zero beyond.

Example:
    >>> sol = solve_euler(domain, u0, T=0.5, dt=0.00125)
    >>> cor = build_corrector(sol, nu=0.05, c_tilde=1.0)
    >>> time_derivative_norm(cor).max()
"""

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse.linalg as spla
from scipy import stats
from tqdm import tqdm

from katolab.errors import ResolutionError, SolverError
from katolab.grid import Domain, VectorGridField, _check_same_grid, boundary_strip, gradient_energy, gradient_samples
from katolab.noise import advect_packed
from katolab.spectral import VelocityField, curl_matrix, sobolev_norm, stream_to_nodes

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.5
ENERGY_DRIFT_LIMIT = 1e-5
BAND_LIMIT = 1e-8
HORIZON_GROWTH = 10.0

Cutoff = Callable[[np.ndarray], np.ndarray]


@lru_cache(maxsize=8)
def _stream_solver(nx: int):
    C = curl_matrix(Domain(nx))
    return spla.splu((C.T @ C).tocsc())


@dataclass(frozen=True, eq=False)
class EulerSolution:
    """Stored Euler trajectory.

    Attributes:
        domain: Grid of the solve
        times: Stored times
        stream_history: Interior stream function per time
        velocity_history: Packed velocity curl(psi) per time
        initial_energy: ||u0||^2
        energy_history: ||u_t||^2 per time
        gradient_history: Max absolute velocity gradient per time
        horizon_suspect: Gradient grew beyond 10x its initial value
    """
    domain: Domain
    times: np.ndarray
    stream_history: np.ndarray
    velocity_history: np.ndarray
    initial_energy: float
    energy_history: np.ndarray
    gradient_history: np.ndarray
    horizon_suspect: bool = False

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_times > 1 else 0.0

    @property
    def energy_defect(self) -> float:
        """Max relative deviation of ||u_t||^2 from ||u0||^2."""
        if self.initial_energy == 0:
            return 0.0
        return float(np.max(np.abs(self.energy_history - self.initial_energy)) / self.initial_energy)

    def velocity(self, k: int) -> VectorGridField:
        return VectorGridField.from_packed(self.domain, self.velocity_history[k])

    def interpolate(self, times: np.ndarray) -> np.ndarray:
        """Packed velocity linearly interpolated to ``times``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        end = self.times[-1]
        if np.any(times < -1e-12) or np.any(times > end + 1e-9 * max(end, 1.0)):
            raise ValueError(f"times outside the Euler horizon [0, {end}]")
        if self.n_times == 1:
            return np.repeat(self.velocity_history[:1], len(times), axis=0)
        k = np.clip(np.searchsorted(self.times, times, side="right") - 1, 0, self.n_times - 2)
        w = np.clip((times - self.times[k]) / (self.times[k + 1] - self.times[k]), 0.0, 1.0)
        return (1.0 - w)[:, None] * self.velocity_history[k] + w[:, None] * self.velocity_history[k + 1]

    @cached_property
    def digest(self) -> str:
        m = hashlib.sha256()
        m.update(f"nx={self.domain.nx};".encode())
        m.update(np.ascontiguousarray(self.times).tobytes())
        m.update(np.ascontiguousarray(self.stream_history).tobytes())
        return m.hexdigest()


def _band_limited(u0: VelocityField) -> bool:
    c2 = u0.coeffs ** 2
    total = c2.sum()
    top = c2[len(c2) - len(c2) // 4:].sum()
    return total == 0 or top <= BAND_LIMIT * total


def _max_gradient(domain: Domain, packed: np.ndarray) -> float:
    u, v = domain.unpack(packed)
    return float(gradient_samples(domain, u, v, boundary="free").max_abs())


def solve_euler(
    domain: Domain,
    u0: Union[VelocityField, VectorGridField],
    T: float,
    dt: float,
    progress: bool = False,
) -> EulerSolution:
    """Integrate the incompressible Euler equations with impermeable walls.

    Args:
        domain: Grid
        u0: Initial velocity; a VelocityField must be band-limited (top
            quarter of its coefficient energy at most 1e-8 of the total),
            a grid field is projected onto the divergence-free subspace
        T: Horizon
        dt: Time step, a whole fraction of T
        progress: Show a progress bar over steps

    Returns:
        EulerSolution with every step stored

    Raises:
        ValueError: u0 is not band-limited or T/dt is not whole
        SolverError: CFL violation or energy drift beyond 1e-5
    """
    if isinstance(u0, VelocityField) and not _band_limited(u0):
        raise ValueError("Euler initial data must be band-limited (top-quarter modes carry energy)")
    _check_same_grid(domain, u0.domain)
    packed0 = u0.packed
    if not dt > 0 or T < 0:
        raise ValueError(f"need dt > 0 and T >= 0, got dt={dt}, T={T}")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not a whole number of steps of dt={dt}")

    h = domain.h
    C = curl_matrix(domain)
    lu = _stream_solver(domain.nx)

    def tendency(omega: np.ndarray) -> np.ndarray:
        u = C @ lu.solve(omega)
        return -(C.T @ advect_packed(domain, u, u))

    omega = C.T @ packed0
    psi = lu.solve(omega)
    vel = C @ psi
    e0 = float(domain.inner(vel, vel))
    g0 = _max_gradient(domain, vel)

    times = dt * np.arange(n_steps + 1)
    streams = np.zeros((n_steps + 1, domain.n_stream))
    velocities = np.zeros((n_steps + 1, domain.n_velocity))
    energy = np.zeros(n_steps + 1)
    gradient = np.zeros(n_steps + 1)
    streams[0], velocities[0], energy[0], gradient[0] = psi, vel, e0, g0

    steps = range(n_steps)
    if progress:
        steps = tqdm(steps, desc="euler", leave=False)
    for k in steps:
        cfl = np.max(np.abs(vel)) * dt / h
        if cfl > CFL_LIMIT:
            raise SolverError(
                f"Euler CFL number {cfl:.3f} above {CFL_LIMIT} at step {k}",
                diagnostics={"step": k, "cfl": float(cfl), "dt": dt, "h": h},
            )
        k1 = tendency(omega)
        k2 = tendency(omega + 0.5 * dt * k1)
        k3 = tendency(omega + 0.5 * dt * k2)
        k4 = tendency(omega + dt * k3)
        omega = omega + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        psi = lu.solve(omega)
        vel = C @ psi
        e = float(domain.inner(vel, vel))
        if e0 > 0 and abs(e - e0) / e0 > ENERGY_DRIFT_LIMIT:
            raise SolverError(
                f"Euler energy drift {abs(e - e0) / e0:.2e} above {ENERGY_DRIFT_LIMIT:g} at step {k + 1}",
                diagnostics={"step": k + 1, "energy": e, "initial_energy": e0},
            )
        streams[k + 1], velocities[k + 1], energy[k + 1] = psi, vel, e
        gradient[k + 1] = _max_gradient(domain, vel)

    suspect = bool(g0 > 0 and np.max(gradient) > HORIZON_GROWTH * g0)
    if suspect:
        logger.warning(
            "Euler gradient grew %.1fx over [0, %g]; horizon suspect",
            np.max(gradient) / g0, T,
        )
    logger.info("Euler solved on nx=%d, %d steps, energy defect %.2e", domain.nx, n_steps,
                np.max(np.abs(energy - e0)) / e0 if e0 else 0.0)
    return EulerSolution(
        domain=domain,
        times=times,
        stream_history=streams,
        velocity_history=velocities,
        initial_energy=e0,
        energy_history=energy,
        gradient_history=gradient,
        horizon_suspect=suspect,
    )


def cutoff_profile(s: np.ndarray) -> np.ndarray:
    """theta(s) = (1 - s)^3 (1 + 3 s) on [0, 1], zero beyond."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return (1.0 - s) ** 3 * (1.0 + 3.0 * s)


@dataclass(frozen=True, eq=False)
class Corrector:
    """Boundary-layer corrector along an Euler solution.

    Attributes:
        domain: Grid
        nu: Viscosity
        c_tilde: Strip constant
        nominal_width: c_tilde * nu
        effective_width: Width after the h/2 clamp
        times: Euler times
        theta: Cutoff evaluated on the interior nodes
        v_history: Packed corrector per time
    """
    domain: Domain
    nu: float
    c_tilde: float
    nominal_width: float
    effective_width: float
    times: np.ndarray
    theta: np.ndarray
    v_history: np.ndarray

    def velocity(self, k: int) -> VectorGridField:
        return VectorGridField.from_packed(self.domain, self.v_history[k])

    @cached_property
    def face_distance(self) -> np.ndarray:
        """Packed distance of each interior face to the wall."""
        d = []
        for x, y in (self.domain.u_coordinates, self.domain.v_coordinates):
            d.append(np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y)))
        return self.domain.pack(*d)

    def outside_support(self) -> float:
        """Max |v| on faces at least half a cell beyond the effective strip."""
        outside = self.face_distance >= self.effective_width + 0.5 * self.domain.h
        if not outside.any():
            return 0.0
        return float(np.max(np.abs(self.v_history[:, outside])))

    def trace_defect(self, sol: EulerSolution) -> float:
        """Max difference to the Euler velocity on the faces next to the wall."""
        near = self.face_distance <= 0.5 * self.domain.h + 1e-12
        return float(np.max(np.abs(self.v_history[:, near] - sol.velocity_history[:, near])))


def build_corrector(
    sol: EulerSolution,
    nu: float,
    c_tilde: float = 1.0,
    cutoff: Optional[Cutoff] = None,
) -> Corrector:
    """Build ``v_t = curl(theta(d / w) psi_t)`` for every stored Euler time.

    Args:
        sol: Euler solution
        nu: Viscosity
        c_tilde: Strip constant, the nominal width is c_tilde * nu
        cutoff: Profile replacing the default ``cutoff_profile``

    Returns:
        Corrector, divergence-free with the Euler wall trace

    Raises:
        ResolutionError: the effective strip is thinner than one cell
    """
    domain = sol.domain
    strip = boundary_strip(domain, c_tilde * nu)
    w = strip.effective_width
    if w < domain.h:
        raise ResolutionError(
            f"strip width {w:.3g} is below one cell (h={domain.h:.3g}); "
            f"use nx >= {int(np.ceil(1.0 / w))} for nu={nu}, c_tilde={c_tilde}"
        )
    profile = cutoff_profile if cutoff is None else cutoff
    theta = np.asarray(profile(domain.node_distance[1:-1, 1:-1] / w), dtype=float).ravel()
    C = curl_matrix(domain)
    v_history = (C @ (theta * sol.stream_history).T).T
    return Corrector(
        domain=domain,
        nu=float(nu),
        c_tilde=float(c_tilde),
        nominal_width=strip.nominal_width,
        effective_width=w,
        times=sol.times,
        theta=theta,
        v_history=v_history,
    )


class PairingReport(NamedTuple):
    """``<L_f f, v_t>`` per time with the bound ``nu ||grad f||^2`` on the strip."""
    pairing: np.ndarray
    bound: float
    ratio: np.ndarray


def corrector_pairing(cor: Corrector, f: Union[VelocityField, VectorGridField]) -> PairingReport:
    """Pair the corrector with ``L_f f`` and report the ratio to its bound.

    Args:
        cor: Corrector
        f: Field in the basis span

    Returns:
        PairingReport; the ratio is 0 where both sides vanish
    """
    _check_same_grid(cor.domain, f.domain)
    domain = cor.domain
    packed = f.packed
    adv = advect_packed(domain, packed, packed)
    pairing = domain.h ** 2 * (cor.v_history @ adv)
    u, v = domain.unpack(packed)
    strip = boundary_strip(domain, cor.effective_width)
    bound = float(cor.nu * gradient_energy(domain, u, v, strip=strip, boundary="no_slip"))
    if bound > 0:
        ratio = np.abs(pairing) / bound
    else:
        ratio = np.where(pairing == 0, 0.0, np.inf)
    return PairingReport(pairing, bound, ratio)


def time_derivative_norm(cor: Corrector) -> np.ndarray:
    """``||d v / dt||`` per stored time by central differences.

    Raises:
        ValueError: fewer than two stored times
    """
    if len(cor.times) < 2:
        raise ValueError("time derivative needs at least two stored times")
    edge = 2 if len(cor.times) >= 3 else 1
    dv = np.gradient(cor.v_history, cor.times, axis=0, edge_order=edge)
    return np.sqrt(cor.domain.inner(dv, dv))


def corrector_norms(cor: Corrector) -> dict:
    """Sup over time of ||v||, ||dv/dt|| and ||v||_{W^{1,2}}."""
    v = cor.v_history
    return {
        "sup_v": float(np.max(np.sqrt(cor.domain.inner(v, v)))),
        "sup_dt_v": float(np.max(time_derivative_norm(cor))),
        "sup_w12": float(np.max(sobolev_norm(cor.domain, v, boundary="free"))),
    }


class CorrectorLadder(NamedTuple):
    """Corrector estimates along a viscosity ladder with log-log slopes."""
    table: pd.DataFrame
    slopes: dict


def corrector_ladder(
    sol: EulerSolution,
    nus: Sequence[float],
    c_tilde: float = 1.0,
    cutoff: Optional[Cutoff] = None,
) -> CorrectorLadder:
    """Measure the corrector estimates for each nu and fit power laws.

    Args:
        sol: Euler solution shared by every rung
        nus: Viscosity ladder
        c_tilde: Strip constant
        cutoff: Optional replacement profile

    Returns:
        CorrectorLadder; slopes are NaN when a column has fewer than two
        positive entries
    """
    rows = []
    for nu in nus:
        cor = build_corrector(sol, nu, c_tilde, cutoff)
        rows.append({"nu": float(nu), "effective_width": cor.effective_width, **corrector_norms(cor)})
    table = pd.DataFrame(rows)
    slopes = {}
    for col in ("sup_v", "sup_dt_v", "sup_w12"):
        ok = table[col] > 0
        if ok.sum() >= 2:
            fit = stats.linregress(np.log(table.loc[ok, "nu"]), np.log(table.loc[ok, col]))
            slopes[col] = float(fit.slope)
        else:
            slopes[col] = float("nan")
    return CorrectorLadder(table, slopes)
