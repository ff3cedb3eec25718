"""Advection operator, noise families and the empirical assumption audit.

Noise kinds:
- additive: fixed divergence-free fields, independent of the state
- multiplicative: ``amplitude_i * u``
- transport_ito: ``P L_xi u`` with no Ito correction
- transport_stratonovich: ``P L_xi u`` with the correction ``P Q_i^2``
- salt: ``B_i u = L_xi u + T_xi u`` with ``Q_i = B_i`` left unprojected

The discrete advection ``L_f g`` is the skew-symmetric average of the
advective and divergence forms on the staggered grid, so that
``<L_f g, h> = -<g, L_f h>`` holds to rounding for every pair of fields.

Example:
    >>> model = build_noise_model(basis, "transport_stratonovich", n_noise=4)
    >>> audit = audit_assumptions(model, samples=50, seed=0)
    >>> audit.sum_k <= 1
"""

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import nnls
from tqdm import tqdm

from katolab.grid import Domain, VectorGridField, _check_same_grid
from katolab.spectral import SpectralBasis, VelocityField, leray_packed, sobolev_norm

logger = logging.getLogger(__name__)


class NoiseKind(Enum):
    """Noise families."""

    ADDITIVE = "additive"  # state-independent forcing
    MULTIPLICATIVE = "multiplicative"  # linear scaling of the state
    TRANSPORT_ITO = "transport_ito"  # projected transport, Q_i = 0
    TRANSPORT_STRATONOVICH = "transport_stratonovich"  # projected transport, Q_i = P G_i
    SALT = "salt"  # Lie transport, Q_i = B_i without projection


# Kinds whose Ito correction is switched on
CORRECTED_KINDS = {NoiseKind.TRANSPORT_STRATONOVICH, NoiseKind.SALT}

# Kinds driven by correlation fields xi_i
TRANSPORT_KINDS = {
    NoiseKind.TRANSPORT_ITO,
    NoiseKind.TRANSPORT_STRATONOVICH,
    NoiseKind.SALT,
}

# Number of low modes mixed into each additive forcing field
ADDITIVE_SPAN = 8


def parse_kind(kind: Union[str, NoiseKind]) -> NoiseKind:
    if isinstance(kind, NoiseKind):
        return kind
    try:
        return NoiseKind(str(kind).lower())
    except ValueError:
        raise ValueError(
            f"unknown noise kind {kind!r}; expected one of {[k.value for k in NoiseKind]}"
        ) from None


def _zero_pad(a: np.ndarray, axis: int, before: bool) -> np.ndarray:
    shape = list(a.shape)
    shape[axis] = 1
    z = np.zeros(shape)
    return np.concatenate([z, a] if before else [a, z], axis=axis)


def skew_advect(
    domain: Domain,
    pu: np.ndarray,
    pv: np.ndarray,
    gu: np.ndarray,
    gv: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Skew-symmetric discrete ``L_p g`` on the staggered grid.

    Each face control volume receives ``sum F_f g_nb / (2h)`` over its four
    neighbours, with the face transport velocity ``F_f`` averaged from ``p``.
    Neighbours outside the domain count as zero; the transport velocity
    through a wall vanishes for impermeable ``p``. Leading axes are a batch.
    """
    h = domain.h
    ou = np.zeros(np.broadcast_shapes(pu.shape, gu.shape))
    ov = np.zeros(np.broadcast_shapes(pv.shape, gv.shape))

    fe = pu[..., 1:-1, :] + pu[..., 2:, :]
    fw = pu[..., :-2, :] + pu[..., 1:-1, :]
    pv_avg = pv[..., :-1, :] + pv[..., 1:, :]
    fn = pv_avg[..., 1:]
    fs = pv_avg[..., :-1]
    g = gu[..., 1:-1, :]
    north = _zero_pad(g[..., 1:], -1, before=False)
    south = _zero_pad(g[..., :-1], -1, before=True)
    ou[..., 1:-1, :] = (
        fe * gu[..., 2:, :] - fw * gu[..., :-2, :] + fn * north - fs * south
    ) / (4.0 * h)

    pu_avg = pu[..., :, :-1] + pu[..., :, 1:]
    fe = pu_avg[..., 1:, :]
    fw = pu_avg[..., :-1, :]
    fn = pv[..., :, 1:-1] + pv[..., :, 2:]
    fs = pv[..., :, :-2] + pv[..., :, 1:-1]
    g = gv[..., :, 1:-1]
    east = _zero_pad(g[..., 1:, :], -2, before=False)
    west = _zero_pad(g[..., :-1, :], -2, before=True)
    ov[..., :, 1:-1] = (
        fe * east - fw * west + fn * gv[..., :, 2:] - fs * gv[..., :, :-2]
    ) / (4.0 * h)
    return ou, ov


def advect_packed(domain: Domain, p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``L_p g`` on packed vectors (broadcast over leading axes)."""
    pu, pv = domain.unpack(p)
    gu, gv = domain.unpack(g)
    return domain.pack(*skew_advect(domain, pu, pv, gu, gv))


def _as_grid(f: Union[VelocityField, VectorGridField]) -> VectorGridField:
    return f.grid if isinstance(f, VelocityField) else f


def advect(
    f: Union[VelocityField, VectorGridField],
    g: Union[VelocityField, VectorGridField],
) -> VectorGridField:
    """Discrete ``L_f g = (f . grad) g`` in skew-symmetric form.

    Args:
        f: Transporting velocity
        g: Transported velocity

    Returns:
        Grid field with zero wall faces
    """
    fg, gg = _as_grid(f), _as_grid(g)
    _check_same_grid(fg.domain, gg.domain)
    u, v = skew_advect(fg.domain, fg.u, fg.v, gg.u, gg.v)
    return VectorGridField(fg.domain, u, v)


def _cell_jacobian(domain: Domain, xi: np.ndarray) -> np.ndarray:
    """Cell-centred ``J[a][b] = d_a xi^b`` with odd ghosts across the walls."""
    h = domain.h
    xu, xv = domain.unpack(xi)
    cx = 0.5 * (xu[..., 1:, :] + xu[..., :-1, :])
    cy = 0.5 * (xv[..., :, 1:] + xv[..., :, :-1])
    dxx = np.diff(xu, axis=-2) / h
    dyy = np.diff(xv, axis=-1) / h
    px = np.concatenate([-cx[..., :, :1], cx, -cx[..., :, -1:]], axis=-1)
    dyx = (px[..., :, 2:] - px[..., :, :-2]) / (2.0 * h)
    py = np.concatenate([-cy[..., :1, :], cy, -cy[..., -1:, :]], axis=-2)
    dxy = (py[..., 2:, :] - py[..., :-2, :]) / (2.0 * h)
    return np.stack([np.stack([dxx, dxy]), np.stack([dyx, dyy])])


def _to_cells(domain: Domain, f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    fu, fv = domain.unpack(f)
    return 0.5 * (fu[..., 1:, :] + fu[..., :-1, :]), 0.5 * (fv[..., :, 1:] + fv[..., :, :-1])


def _to_faces(domain: Domain, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    lead = cx.shape[:-2]
    u = np.zeros(lead + domain.u_shape)
    v = np.zeros(lead + domain.v_shape)
    u[..., 1:-1, :] = 0.5 * (cx[..., :-1, :] + cx[..., 1:, :])
    v[..., :, 1:-1] = 0.5 * (cy[..., :, :-1] + cy[..., :, 1:])
    return domain.pack(u, v)


def stretch_packed(domain: Domain, xi: np.ndarray, f: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """SALT stretching ``(T_xi f)^a = sum_b f^b d_a xi^b`` and its transpose.

    Both act pointwise at cell centres between face-to-cell averaging and
    its transpose, so ``adjoint=True`` is the exact discrete adjoint.
    """
    J = _cell_jacobian(domain, xi)
    if adjoint:
        J = J.transpose(1, 0, *range(2, J.ndim))
    fx, fy = _to_cells(domain, f)
    tx = J[0][0] * fx + J[0][1] * fy
    ty = J[1][0] * fx + J[1][1] * fy
    return _to_faces(domain, tx, ty)


def discrete_w2inf(domain: Domain, vec: np.ndarray) -> float:
    """Grid sup-norm of values plus first and second differences."""
    h = domain.h
    total = 0.0
    for comp in domain.unpack(vec):
        first = max(np.max(np.abs(np.diff(comp, axis=a))) / h for a in (0, 1))
        second = max(np.max(np.abs(np.diff(comp, n=2, axis=a))) / h ** 2 for a in (0, 1))
        total = max(total, np.max(np.abs(comp)) + first + second)
    return float(total)


@dataclass(frozen=True, eq=False)
class CorrelationFields:
    """Transport correlation fields ``xi_i = amplitude_i * a_i``.

    Attributes:
        basis: Basis the fields are drawn from
        amplitudes: Per-mode scale factors
        xi: Packed fields, one per row
    """
    basis: SpectralBasis
    amplitudes: np.ndarray
    xi: np.ndarray

    @property
    def n_noise(self) -> int:
        return len(self.amplitudes)

    def field(self, i: int) -> VelocityField:
        coeffs = np.zeros(self.basis.n_modes)
        coeffs[i] = self.amplitudes[i]
        return VelocityField(self.basis, coeffs)

    def w2inf_norms(self) -> np.ndarray:
        return np.array([discrete_w2inf(self.basis.domain, x) for x in self.xi])

    @property
    def summability(self) -> float:
        """sum_i ||xi_i||^2 in the discrete W^{2,inf} sense."""
        return float(np.sum(self.w2inf_norms() ** 2))


def mode_amplitudes(n_noise: int, a0: float, decay: float) -> np.ndarray:
    """``a0 * i^(-decay)`` for i = 1..n_noise."""
    return a0 * np.arange(1, n_noise + 1, dtype=float) ** (-decay)


def build_correlations(basis: SpectralBasis, n_noise: int, a0: float = 0.5, decay: float = 2.0) -> CorrelationFields:
    if n_noise > basis.n_modes:
        raise ValueError(f"n_noise={n_noise} exceeds the {basis.n_modes} basis modes")
    amplitudes = mode_amplitudes(n_noise, a0, decay)
    xi = amplitudes[:, None] * basis.fields[:n_noise]
    return CorrelationFields(basis, amplitudes, xi)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """A truncated family of noise operators.

    Attributes:
        kind: Noise family
        basis: Basis the operators act on
        amplitudes: Per-mode amplitudes
        correlations: xi_i for the transport kinds
        additive: Packed forcing fields for the additive kind
        seed: Seed of the additive field draw
    """
    kind: NoiseKind
    basis: SpectralBasis
    amplitudes: np.ndarray
    correlations: Optional[CorrelationFields] = None
    additive: Optional[np.ndarray] = None
    seed: int = 0
    _galerkin_cache: Dict[int, "GalerkinNoise"] = field(default_factory=dict, repr=False)
    _galerkin_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.kind in TRANSPORT_KINDS and self.correlations is None:
            raise ValueError(f"{self.kind.value} noise needs correlation fields")
        if self.kind == NoiseKind.ADDITIVE and self.additive is None:
            raise ValueError("additive noise needs forcing fields")

    @property
    def n_noise(self) -> int:
        return len(self.amplitudes)

    @property
    def domain(self) -> Domain:
        return self.basis.domain

    @property
    def ito_correction_enabled(self) -> bool:
        return self.kind in CORRECTED_KINDS

    def scaled(self, factor: float) -> "NoiseModel":
        """Same family with every amplitude multiplied by ``factor``."""
        correlations = None
        if self.correlations is not None:
            c = self.correlations
            correlations = CorrelationFields(c.basis, factor * c.amplitudes, factor * c.xi)
        additive = None if self.additive is None else factor * self.additive
        return NoiseModel(
            kind=self.kind,
            basis=self.basis,
            amplitudes=factor * self.amplitudes,
            correlations=correlations,
            additive=additive,
            seed=self.seed,
        )

    def _check_mode(self, i: int) -> None:
        if not 0 <= i < self.n_noise:
            raise IndexError(f"noise mode {i} out of range for {self.n_noise} modes")

    def g_packed(self, i: int, f: np.ndarray) -> np.ndarray:
        """``G_i f`` on packed fields (batch over leading axes)."""
        self._check_mode(i)
        domain = self.domain
        if self.kind == NoiseKind.ADDITIVE:
            return np.broadcast_to(self.additive[i], np.shape(f)).copy()
        if self.kind == NoiseKind.MULTIPLICATIVE:
            return self.amplitudes[i] * np.asarray(f)
        xi = self.correlations.xi[i]
        out = advect_packed(domain, xi, f)
        if self.kind == NoiseKind.SALT:
            return out + stretch_packed(domain, xi, f)
        return leray_packed(domain, out)

    def q_packed(self, i: int, f: np.ndarray) -> np.ndarray:
        """``Q_i f``; zero for the uncorrected kinds."""
        if not self.ito_correction_enabled:
            return np.zeros_like(np.asarray(f, dtype=float))
        return self.g_packed(i, f)

    def adjoint_parts(self, i: int, f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """``(A_i f, Ahat_i f)`` with ``Q_i^* = A_i + Ahat_i``.

        ``A_i = -L_xi`` preserves supports up to the one-cell stencil. For
        transport ``Ahat_i = L_xi (I - P)`` sees only the gradient part of
        ``f``: it vanishes on divergence-free fields but is a first-order
        operator in general. For SALT ``Ahat_i = T_xi^*`` is zeroth order and
        bounded on L2.
        """
        self._check_mode(i)
        if not self.ito_correction_enabled:
            raise ValueError(f"{self.kind.value} noise has Q_i = 0 and no adjoint")
        domain = self.domain
        xi = self.correlations.xi[i]
        f = np.asarray(f, dtype=float)
        support = -advect_packed(domain, xi, f)
        if self.kind == NoiseKind.SALT:
            remainder = stretch_packed(domain, xi, f, adjoint=True)
        else:
            remainder = advect_packed(domain, xi, f - leray_packed(domain, f))
        return support, remainder

    def adjoint_packed(self, i: int, f: np.ndarray) -> np.ndarray:
        support, remainder = self.adjoint_parts(i, f)
        return support + remainder


def build_noise_model(
    basis: SpectralBasis,
    kind: Union[str, NoiseKind],
    n_noise: int = 8,
    a0: float = 0.5,
    decay: float = 2.0,
    seed: int = 0,
) -> NoiseModel:
    """Construct a noise model on a basis.

    Args:
        basis: Stokes eigenbasis
        kind: Noise family name or NoiseKind
        n_noise: Truncation K of the cylindrical Brownian motion
        a0: Leading amplitude
        decay: Amplitudes are a0 * i^(-decay)
        seed: Seed for the additive forcing fields

    Returns:
        NoiseModel

    Example:
        >>> model = build_noise_model(basis, "salt", n_noise=8)
        >>> model.ito_correction_enabled
        True
    """
    kind = parse_kind(kind)
    if n_noise < 0 or n_noise > basis.n_modes:
        raise ValueError(f"n_noise must be between 0 and {basis.n_modes}, got {n_noise}")
    amplitudes = mode_amplitudes(n_noise, a0, decay)
    correlations = None
    additive = None
    if kind in TRANSPORT_KINDS:
        correlations = build_correlations(basis, n_noise, a0, decay)
    elif kind == NoiseKind.ADDITIVE:
        rng = np.random.Generator(np.random.PCG64(seed))
        span = min(ADDITIVE_SPAN, basis.n_modes)
        mix = rng.standard_normal((n_noise, span))
        mix /= np.linalg.norm(mix, axis=1, keepdims=True)
        additive = amplitudes[:, None] * (mix @ basis.fields[:span])
    return NoiseModel(
        kind=kind,
        basis=basis,
        amplitudes=amplitudes,
        correlations=correlations,
        additive=additive,
        seed=seed,
    )


def apply_noise_mode(model: NoiseModel, i: int, u: VelocityField) -> VelocityField:
    """``P G_i u`` expressed in the basis span.

    Args:
        model: Noise model
        i: Zero-based noise mode
        u: State

    Returns:
        VelocityField with coefficients <G_i u, a_k>
    """
    g = model.g_packed(i, u.packed)
    return VelocityField(model.basis, model.basis.coefficients(g))


def ito_correction(model: NoiseModel, u: VelocityField) -> VelocityField:
    """``sum_i P Q_i (Q_i u)`` over the retained modes, in the basis span."""
    if not model.ito_correction_enabled:
        raise ValueError(f"{model.kind.value} noise has no Ito correction")
    return VelocityField(model.basis, model.basis.coefficients(_correction_packed(model, u.packed)))


def apply_adjoint(
    model: NoiseModel,
    i: int,
    f: Union[VelocityField, VectorGridField],
) -> VectorGridField:
    """``Q_i^* f`` on the grid, exact discrete adjoint of ``Q_i``."""
    grid = _as_grid(f)
    return VectorGridField.from_packed(grid.domain, model.adjoint_packed(i, grid.packed))


def adjoint_split(
    model: NoiseModel,
    i: int,
    f: Union[VelocityField, VectorGridField],
) -> Tuple[VectorGridField, VectorGridField]:
    """Support-preserving part and remainder of ``Q_i^* f``."""
    grid = _as_grid(f)
    a, ahat = model.adjoint_parts(i, grid.packed)
    return (
        VectorGridField.from_packed(grid.domain, a),
        VectorGridField.from_packed(grid.domain, ahat),
    )


class GalerkinNoise(NamedTuple):
    """Noise restricted to the first n modes.

    ``matrices[i, k, j] = <G_i a_j, a_k>`` for the linear kinds and
    ``vectors`` holds the forcing coefficients for additive noise. When the
    Ito correction is on, ``correction[k, j] = <sum_i Q_i Q_i a_j, a_k>``
    applies the full-space ``Q_i^2`` before projecting onto the n-mode span,
    and ``truncated_correction`` is ``sum_i B_i^2``, the conversion term of
    the truncated Stratonovich system.
    """
    matrices: Optional[np.ndarray]
    vectors: Optional[np.ndarray]
    correction: Optional[np.ndarray] = None
    truncated_correction: Optional[np.ndarray] = None


def _correction_packed(model: NoiseModel, f: np.ndarray) -> np.ndarray:
    """``sum_i Q_i (Q_i f)`` on packed fields (batch over leading axes)."""
    total = np.zeros(np.shape(f), dtype=float)
    for i in range(model.n_noise):
        total += model.q_packed(i, model.q_packed(i, f))
    return total


def _build_galerkin(model: NoiseModel, n: int) -> GalerkinNoise:
    basis = model.basis
    if model.kind == NoiseKind.ADDITIVE:
        return GalerkinNoise(None, basis.coefficients(model.additive)[:, :n])
    fields = basis.fields[:n]
    matrices = np.empty((model.n_noise, n, n))
    for i in range(model.n_noise):
        matrices[i] = basis.coefficients(model.g_packed(i, fields))[:, :n].T
    if not model.ito_correction_enabled:
        return GalerkinNoise(matrices, None)
    correction = basis.coefficients(_correction_packed(model, fields))[:, :n].T
    truncated = np.einsum("ikl,ilj->kj", matrices, matrices)
    return GalerkinNoise(matrices, None, correction, truncated)


def galerkin_noise(model: NoiseModel, n: int) -> GalerkinNoise:
    """Galerkin matrices of a model on the n-mode span (cached on the model)."""
    with model._galerkin_lock:
        if n not in model._galerkin_cache:
            model._galerkin_cache[n] = _build_galerkin(model, n)
        return model._galerkin_cache[n]


def quadratic_form_tensor(basis: SpectralBasis, n: int) -> np.ndarray:
    """Dense ``N[k, j, l] = <L_{a_j} a_l, a_k>`` on the first n modes."""
    domain = basis.domain
    fields = basis.fields[:n]
    out = np.empty((n, n, n))
    for j in range(n):
        coeffs = basis.coefficients(advect_packed(domain, fields[j], fields))[:, :n]
        out[:, j, :] = coeffs.T
    return out


# Audit ------------------------------------------------------------------

# Relative size below which an audited left side counts as rounding
ROUNDING = 1e-9

# Inequalities checked for every kind; the Q-dependent ones only when Q_i != 0
ASSUMPTIONS = {
    "growth": "||G f||^2 <= c (1 + ||f||_W12^2)",
    "lipschitz": "||G f - G g||^2 <= c (1 + ||f||_W12^2 + ||g||_W12^2) ||f - g||_W12^2",
    "pairing_growth": "<G f, f>^2 <= c (1 + ||f||^4)",
    "pairing_cross": "<G f, g>^2 <= c (1 + ||f||^2 + ||g||^2) ||g||_W12^2",
    "pairing_lipschitz": "<G f - G g, phi>^2 <= c (1 + ||phi||_2^2) ||f - g||^2",
    "monotone": "<G f - G g, f - g>^2 <= c K(f, g) ||f - g||^4",
    "energy": "<Q^2 phi, phi> + ||G phi||^2 <= c (1 + ||phi||^2) + k ||phi||_1^2",
    "adjoint_energy": "<Q d, Q^* d> + ||G f - G g||^2 <= c K(f, g) ||d||^2 + k ||d||_W12^2",
    "q_regularity": "||Q phi||_W12^2 <= c ||phi||_2^2",
    "adjoint_growth": "||Q^* f||^2 <= c ||f||_W12^2",
    "adjoint_split": "||Ahat f||^2 <= c ||f||^2",
}

Q_ASSUMPTIONS = {"q_regularity", "adjoint_growth", "adjoint_split"}
TWO_CONSTANT = {"energy", "adjoint_energy"}


@dataclass
class AssumptionAudit:
    """Fitted constants of the noise assumptions.

    Attributes:
        kind: Audited noise family
        samples: Training samples (the same number is held out)
        seed: Sample generator seed
        records: One row per (assumption, mode) with columns constant, k,
            worst_sample, worst_ratio, violations
        neutrality: Per-mode ``|<Q^2 phi, phi> + ||Q phi||^2|`` maxima over
            unit-norm samples (corrected kinds only)
        safety: Factor applied to the fitted constants
    """
    kind: NoiseKind
    samples: int
    seed: int
    records: pd.DataFrame
    neutrality: Optional[np.ndarray] = None
    safety: float = 2.0

    @property
    def sum_k(self) -> float:
        """sum_i k_i, with k_i the larger of the two two-constant fits."""
        two = self.records[self.records["assumption"].isin(TWO_CONSTANT)]
        if two.empty:
            return 0.0
        return float(two.groupby("mode")["k"].max().sum())

    @property
    def sum_c(self) -> pd.Series:
        return self.records.groupby("assumption")["constant"].sum()

    @property
    def violations(self) -> int:
        return int(self.records["violations"].sum())

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.sum_k <= 1.0

    def admissible(self, nu: float, mu: float) -> bool:
        """Relaxed summability sum_k <= (nu / mu)^(1/2) for scaled noise."""
        return self.sum_k <= np.sqrt(nu / mu)

    def summary(self) -> pd.DataFrame:
        """One row per assumption: summed constants and held-out violations."""
        return self.records.groupby("assumption").agg(
            sum_c=("constant", "sum"),
            sum_k=("k", "sum"),
            violations=("violations", "sum"),
        )

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "samples": self.samples,
            "seed": self.seed,
            "sum_k": self.sum_k,
            "violations": self.violations,
            "passed": self.passed,
            "sum_c": {k: float(v) for k, v in self.sum_c.items()},
        }
        if self.neutrality is not None:
            out["neutrality"] = [float(x) for x in self.neutrality]
        return out


def _fit_one(lhs, mag, x, train, safety):
    b = np.where(lhs[train] > ROUNDING * mag[train], lhs[train], 0.0)
    ratios = b / x[train]
    worst = int(np.argmax(ratios))
    c = safety * float(ratios[worst])
    return c, np.nan, worst, float(ratios[worst])


def _fit_two(lhs, mag, x, y, train, safety):
    b = np.where(lhs[train] > ROUNDING * mag[train], lhs[train], 0.0)
    if not np.any(b > 0):
        return 0.0, 0.0, 0, 0.0
    A = np.column_stack([x[train], y[train]])
    (c, k), _ = nnls(A, b)
    excess = (b - c * x[train] - k * y[train]) / x[train]
    worst = int(np.argmax(excess))
    c += max(0.0, float(excess[worst]))
    return safety * c, safety * k, worst, float(b[worst] / (c * x[train][worst] + k * y[train][worst]))


def _violations(lhs, mag, bound, held):
    over = lhs[held] - bound[held] * (1.0 + ROUNDING)
    return int(np.sum(over > ROUNDING * mag[held]))


def audit_assumptions(
    model: NoiseModel,
    samples: int = 200,
    seed: int = 0,
    safety: float = 2.0,
    progress: bool = False,
) -> AssumptionAudit:
    """Empirically fit and check the noise assumptions (p = q = 2).

    Draws ``2 * samples`` random triples (f, g, phi) in the basis span with
    log-uniform scales in [0.1, 10]. Constants are fitted on the first half,
    inflated by ``safety`` and checked on the held-out second half.

    Args:
        model: Noise model to audit
        samples: Training samples, at least 10
        seed: Sample generator seed
        safety: Multiplier on fitted constants
        progress: Show a progress bar over noise modes

    Returns:
        AssumptionAudit; failures are recorded, never raised
    """
    if samples < 10:
        raise ValueError(f"audit needs at least 10 samples, got {samples}")
    basis = model.basis
    domain = basis.domain
    lam = basis.eigenvalues
    h2 = domain.h ** 2
    rng = np.random.Generator(np.random.PCG64(seed))
    total = 2 * samples

    def draw():
        c = rng.standard_normal((total, basis.n_modes))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        return c * 10.0 ** rng.uniform(-1.0, 1.0, size=(total, 1))

    cf, cg, cp = draw(), draw(), draw()
    F, G, P = basis.reconstruct(cf), basis.reconstruct(cg), basis.reconstruct(cp)
    D = F - G
    cd = cf - cg

    def sq(a):
        return h2 * np.sum(a * a, axis=-1)

    def dot(a, b):
        return h2 * np.sum(a * b, axis=-1)

    nf2, ng2, np2, nd2 = (np.sum(c * c, axis=1) for c in (cf, cg, cp, cd))
    wf2, wg2, wd2 = (np.sum((1.0 + lam) * c * c, axis=1) for c in (cf, cg, cd))
    p1 = np.sum(lam * cp * cp, axis=1)
    p2 = np.sum((1.0 + lam) ** 2 * cp * cp, axis=1)
    kfg = 1.0 + nf2 + ng2 + wf2 + wg2

    train = np.arange(samples)
    held = np.arange(samples, total)
    unit_p = P / np.sqrt(np.maximum(np.sum(cp * cp, axis=1), 1e-300))[:, None]

    rows: List[dict] = []
    neutrality = [] if model.ito_correction_enabled else None
    modes = range(model.n_noise)
    if progress:
        modes = tqdm(modes, desc=f"audit {model.kind.value}")
    for i in modes:
        GF, GG, GP = model.g_packed(i, F), model.g_packed(i, G), model.g_packed(i, P)
        dG = GF - GG
        gf2, gp2, dg2 = sq(GF), sq(GP), sq(dG)

        checks = {
            "growth": (gf2, gf2, 1.0 + wf2, None),
            "lipschitz": (dg2, dg2, (1.0 + wf2 + wg2) * wd2, None),
            "pairing_growth": (dot(GF, F) ** 2, gf2 * nf2, 1.0 + nf2 ** 2, None),
            "pairing_cross": (dot(GF, G) ** 2, gf2 * ng2, (1.0 + nf2 + ng2) * wg2, None),
            "pairing_lipschitz": (dot(dG, P) ** 2, dg2 * np2, (1.0 + p2) * nd2, None),
            "monotone": (dot(dG, D) ** 2, dg2 * nd2, kfg * nd2 ** 2, None),
        }
        if model.ito_correction_enabled:
            QP = GP
            qq = dot(model.q_packed(i, QP), P)
            qd_adj = dot(dG, model.adjoint_packed(i, D))
            checks["energy"] = (qq + gp2, np.abs(qq) + gp2, 1.0 + np2, p1)
            checks["adjoint_energy"] = (qd_adj + dg2, np.abs(qd_adj) + dg2, kfg * nd2, wd2)
            qp_grad = sobolev_norm(domain, QP) ** 2
            checks["q_regularity"] = (qp_grad, qp_grad, p2, None)
            adj = sq(model.adjoint_packed(i, F))
            checks["adjoint_growth"] = (adj, adj, wf2, None)
            ahat = sq(model.adjoint_parts(i, F)[1])
            checks["adjoint_split"] = (ahat, ahat, nf2, None)

            QU = model.q_packed(i, unit_p)
            neutrality.append(float(np.max(np.abs(dot(model.q_packed(i, QU), unit_p) + sq(QU)))))
        else:
            checks["energy"] = (gp2, gp2, 1.0 + np2, p1)
            checks["adjoint_energy"] = (dg2, dg2, kfg * nd2, wd2)

        for name, (lhs, mag, x, y) in checks.items():
            if y is None:
                c, k, worst, ratio = _fit_one(lhs, mag, x, train, safety)
                bound = c * x
            else:
                c, k, worst, ratio = _fit_two(lhs, mag, x, y, train, safety)
                bound = c * x + k * y
            rows.append({
                "assumption": name,
                "mode": i,
                "constant": c,
                "k": k,
                "worst_sample": worst,
                "worst_ratio": ratio,
                "violations": _violations(lhs, mag, bound, held),
            })

    records = pd.DataFrame(
        rows,
        columns=["assumption", "mode", "constant", "k", "worst_sample", "worst_ratio", "violations"],
    )
    audit = AssumptionAudit(
        kind=model.kind,
        samples=samples,
        seed=seed,
        records=records,
        neutrality=None if neutrality is None else np.array(neutrality),
        safety=safety,
    )
    logger.info(
        "audit %s: sum_k=%.3g, %d held-out violations",
        model.kind.value, audit.sum_k, audit.violations,
    )
    return audit


def normalize_amplitudes(model: NoiseModel, audit: AssumptionAudit, target: float = 0.5) -> NoiseModel:
    """Rescale amplitudes so the audited sum of k_i drops to ``target``.

    The k_i scale with the square of the amplitudes for every linear kind,
    so one rescaling by sqrt(target / sum_k) suffices.
    """
    if audit.sum_k <= target:
        return model
    factor = float(np.sqrt(target / audit.sum_k))
    logger.info("rescaling %s amplitudes by %.4f (sum_k %.3g -> %.3g)",
                model.kind.value, factor, audit.sum_k, target)
    return model.scaled(factor)
