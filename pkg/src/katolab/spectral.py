"""Discrete Leray projector, Stokes eigenbasis and the norm family.

The discretely divergence-free subspace of the MAC grid is exactly the range
of the discrete curl of node stream functions vanishing on the wall. The
Stokes eigenproblem is therefore solved densely in stream-function
coordinates, which makes it a symmetric-definite generalized problem::

    K x = lambda M x,   K = <grad C x, grad C y>,   M = <C x, C y>

Eigenfields come out mass-orthonormal, discretely divergence-free and zero on
the wall faces.

Example:
    >>> domain = build_domain(16)
    >>> basis = build_basis(domain, 10)
    >>> round(norms(basis.mode(0)).l2, 12)
    1.0
"""

import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from katolab.errors import ConfigError, SolverError
from katolab.grid import (
    BoundaryStrip,
    Domain,
    VectorGridField,
    _check_same_grid,
    gradient_energy,
    gradient_samples,
    laplacian,
)

logger = logging.getLogger(__name__)

BASIS_FORMAT_VERSION = 1

# Relative residual above which a pressure solve is rejected
LERAY_TOLERANCE = 1e-12


@lru_cache(maxsize=8)
def _curl_matrix(nx: int) -> sp.csr_matrix:
    n = nx
    h = 1.0 / n
    m = n - 1
    n_u = (n - 1) * n

    rows, cols, vals = [], [], []

    # u(i, j) = (psi(i, j+1) - psi(i, j)) / h on interior x-faces
    i, j = np.meshgrid(np.arange(1, n), np.arange(n), indexing="ij")
    row = (i - 1) * n + j
    up = j + 1 <= n - 1
    rows.append(row[up]); cols.append(((i - 1) * m + j)[up]); vals.append(np.full(up.sum(), 1.0 / h))
    lo = j >= 1
    rows.append(row[lo]); cols.append(((i - 1) * m + j - 1)[lo]); vals.append(np.full(lo.sum(), -1.0 / h))

    # v(i, j) = -(psi(i+1, j) - psi(i, j)) / h on interior y-faces
    i, j = np.meshgrid(np.arange(n), np.arange(1, n), indexing="ij")
    row = n_u + i * m + (j - 1)
    right = i + 1 <= n - 1
    rows.append(row[right]); cols.append((i * m + j - 1)[right]); vals.append(np.full(right.sum(), -1.0 / h))
    left = i >= 1
    rows.append(row[left]); cols.append(((i - 1) * m + j - 1)[left]); vals.append(np.full(left.sum(), 1.0 / h))

    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_u + n * (n - 1), m * m),
    ).tocsr()


@lru_cache(maxsize=8)
def _divergence_matrix(nx: int) -> sp.csr_matrix:
    n = nx
    h = 1.0 / n
    n_u = (n - 1) * n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cell = i * n + j

    rows, cols, vals = [], [], []
    east = i + 1 <= n - 1
    rows.append(cell[east]); cols.append((i * n + j)[east]); vals.append(np.full(east.sum(), 1.0 / h))
    west = i >= 1
    rows.append(cell[west]); cols.append(((i - 1) * n + j)[west]); vals.append(np.full(west.sum(), -1.0 / h))
    north = j + 1 <= n - 1
    rows.append(cell[north]); cols.append((n_u + i * (n - 1) + j)[north]); vals.append(np.full(north.sum(), 1.0 / h))
    south = j >= 1
    rows.append(cell[south]); cols.append((n_u + i * (n - 1) + j - 1)[south]); vals.append(np.full(south.sum(), -1.0 / h))

    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n_u + n * (n - 1)),
    ).tocsr()


def curl_matrix(domain: Domain) -> sp.csr_matrix:
    """Sparse map from interior stream-function nodes to packed velocity."""
    return _curl_matrix(domain.nx)


def divergence_matrix(domain: Domain) -> sp.csr_matrix:
    """Sparse map from packed velocity to cell divergence."""
    return _divergence_matrix(domain.nx)


def stream_to_nodes(domain: Domain, stream: np.ndarray) -> np.ndarray:
    """Embed interior stream-function values into full node arrays (zero on the wall)."""
    lead = stream.shape[:-1]
    m = domain.nx - 1
    psi = np.zeros(lead + domain.node_shape)
    psi[..., 1:-1, 1:-1] = stream.reshape(lead + (m, m))
    return psi


class _LerayFactor:
    """Pinned pressure Poisson factorization for one grid."""

    def __init__(self, nx: int):
        D = _divergence_matrix(nx)
        K = (D @ D.T).tolil()
        # DD^T annihilates constants; pin the first cell
        K[0, :] = 0.0
        K[0, 0] = 1.0
        self.D = D
        self.K = K.tocsc()
        self.lu = spla.splu(self.K)

    def project(self, vec: np.ndarray) -> np.ndarray:
        flat = np.atleast_2d(vec)
        rhs = self.D @ flat.T
        rhs[0, :] = 0.0
        q = self.lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0:
            residual = np.linalg.norm(self.K @ q - rhs) / scale
            if not residual <= LERAY_TOLERANCE:
                raise SolverError(
                    f"pressure Poisson residual {residual:.3e} above {LERAY_TOLERANCE:g}",
                    diagnostics={"residual": float(residual)},
                )
        out = flat - (self.D.T @ q).T
        return out.reshape(np.shape(vec))


@lru_cache(maxsize=8)
def _leray_factor(nx: int) -> _LerayFactor:
    return _LerayFactor(nx)


def leray_packed(domain: Domain, vec: np.ndarray) -> np.ndarray:
    """Leray projection of packed velocities; leading axes are a batch."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim > 2:
        flat = vec.reshape(-1, vec.shape[-1])
        return _leray_factor(domain.nx).project(flat).reshape(vec.shape)
    return _leray_factor(domain.nx).project(vec)


def leray_project(field: VectorGridField) -> VectorGridField:
    """Orthogonal projection onto discretely divergence-free fields.

    Subtracts the discrete gradient of the pressure that solves the pinned
    Poisson problem ``D D^T q = D f``. Wall-normal faces are not unknowns and
    stay zero.

    Args:
        field: Velocity on the staggered grid

    Returns:
        Divergence-free field, idempotent and self-adjoint in the discrete
        L2 inner product
    """
    domain = field.domain
    return VectorGridField.from_packed(domain, leray_packed(domain, field.packed))


def stokes_apply(field: VectorGridField) -> VectorGridField:
    """Discrete Stokes operator ``A_h f = P(-Laplacian f)``."""
    lu, lv = laplacian(field.domain, field.u, field.v)
    return leray_project(VectorGridField(field.domain, -lu, -lv))


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Leading discrete Stokes eigenpairs on one grid.

    Attributes:
        domain: Grid of the eigenfields
        eigenvalues: lambda_1 <= ... <= lambda_n
        fields: Packed eigenfields, one per row
        stream: Interior stream functions of the eigenfields, one per row
    """
    domain: Domain
    eigenvalues: np.ndarray
    fields: np.ndarray
    stream: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @cached_property
    def digest(self) -> str:
        """sha256 of (nx, eigenvalues, eigenfields)."""
        m = hashlib.sha256()
        m.update(f"nx={self.domain.nx};n={self.n_modes};".encode())
        m.update(np.ascontiguousarray(self.eigenvalues).tobytes())
        m.update(np.ascontiguousarray(self.fields).tobytes())
        return m.hexdigest()

    def coefficients(self, vec: np.ndarray) -> np.ndarray:
        """Coefficients <f, a_k> of packed fields (batch over leading axes)."""
        return self.domain.h ** 2 * (np.asarray(vec) @ self.fields.T)

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        """Packed sum of coeffs_k a_k; shorter coefficient vectors use the leading modes."""
        coeffs = np.asarray(coeffs, dtype=float)
        return coeffs @ self.fields[: coeffs.shape[-1]]

    def mode(self, k: int) -> "VelocityField":
        """Eigenfield a_{k+1} as a VelocityField (``k`` is zero-based)."""
        if not 0 <= k < self.n_modes:
            raise IndexError(f"mode index {k} out of range for {self.n_modes} modes")
        coeffs = np.zeros(self.n_modes)
        coeffs[k] = 1.0
        return VelocityField(self, coeffs)

    def velocity(self, coeffs: np.ndarray) -> "VelocityField":
        coeffs = np.asarray(coeffs, dtype=float)
        if len(coeffs) > self.n_modes:
            raise ValueError(f"{len(coeffs)} coefficients for {self.n_modes} modes")
        full = np.zeros(self.n_modes)
        full[: len(coeffs)] = coeffs
        return VelocityField(self, full)

    def zero(self) -> "VelocityField":
        return VelocityField(self, np.zeros(self.n_modes))


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Divergence-free velocity carried by its eigenbasis coefficients.

    The grid values are reconstructed from the coefficients on first access,
    so the two carriers agree by construction.
    """
    basis: SpectralBasis
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.basis.n_modes,):
            raise ValueError(
                f"expected {self.basis.n_modes} coefficients, got shape {coeffs.shape}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("velocity coefficients contain NaN or Inf")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_grid(cls, basis: SpectralBasis, field: VectorGridField) -> "VelocityField":
        """L2 projection of a grid field onto the basis span."""
        _check_same_grid(basis.domain, field.domain)
        return cls(basis, basis.coefficients(field.packed))

    @property
    def domain(self) -> Domain:
        return self.basis.domain

    @property
    def basis_id(self) -> str:
        return self.basis.digest

    @cached_property
    def packed(self) -> np.ndarray:
        return self.basis.reconstruct(self.coeffs)

    @cached_property
    def grid(self) -> VectorGridField:
        return VectorGridField.from_packed(self.domain, self.packed)

    def _check(self, other: "VelocityField") -> None:
        if other.basis is not self.basis and other.basis.digest != self.basis.digest:
            raise ValueError("velocity fields live on different bases")

    def __add__(self, other: "VelocityField") -> "VelocityField":
        self._check(other)
        return VelocityField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        self._check(other)
        return VelocityField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "VelocityField":
        return VelocityField(self.basis, scalar * self.coeffs)

    __rmul__ = __mul__

    def inner(self, other: "VelocityField") -> float:
        self._check(other)
        return float(self.coeffs @ other.coeffs)


FieldLike = Union[VelocityField, VectorGridField]


def build_basis(domain: Domain, n_modes: int) -> SpectralBasis:
    """Solve the discrete Stokes eigenproblem for the ``n_modes`` lowest modes.

    Args:
        domain: Grid to solve on
        n_modes: Number of eigenpairs, at most (nx - 1)^2

    Returns:
        SpectralBasis with ascending eigenvalues and sign-fixed eigenfields

    Raises:
        ConfigError: n_modes outside [1, (nx - 1)^2]
        SolverError: the dense eigensolver failed
    """
    if isinstance(n_modes, bool) or not 1 <= n_modes <= domain.n_stream:
        raise ConfigError([
            f"n_modes must be between 1 and {domain.n_stream} "
            f"(divergence-free subspace on nx={domain.nx}), got {n_modes}"
        ])
    h2 = domain.h ** 2
    Cd = curl_matrix(domain).toarray()

    u, v = domain.unpack(Cd.T)
    g = gradient_samples(domain, u, v, boundary="no_slip")
    wc = np.sqrt(domain.full_cell_weights)
    wn = np.sqrt(domain.full_node_weights)
    n_cols = Cd.shape[1]
    A = np.concatenate(
        [
            (wc * g.dudx).reshape(n_cols, -1),
            (wc * g.dvdy).reshape(n_cols, -1),
            (wn * g.dudy).reshape(n_cols, -1),
            (wn * g.dvdx).reshape(n_cols, -1),
        ],
        axis=1,
    )
    K = h2 * (A @ A.T)
    M = h2 * (Cd.T @ Cd)

    logger.info("solving Stokes eigenproblem on nx=%d for %d modes", domain.nx, n_modes)
    try:
        vals, vecs = scipy.linalg.eigh(K, M, subset_by_index=[0, n_modes - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"Stokes eigensolve failed on nx={domain.nx}: {exc}") from exc

    for k in range(n_modes):
        col = vecs[:, k]
        first = np.flatnonzero(np.abs(col) > 1e-10 * np.max(np.abs(col)))[0]
        if col[first] < 0:
            vecs[:, k] = -col

    fields = (Cd @ vecs).T
    defect = np.max(np.abs(h2 * fields @ fields.T - np.eye(n_modes)))
    logger.debug("eigenbasis orthonormality defect %.2e", defect)
    return SpectralBasis(
        domain=domain,
        eigenvalues=np.ascontiguousarray(vals),
        fields=np.ascontiguousarray(fields),
        stream=np.ascontiguousarray(vecs.T),
    )


def project_n(field: VelocityField, n: int) -> VelocityField:
    """Galerkin projection onto the first ``n`` eigenfields.

    Args:
        field: Velocity in the basis span
        n: Number of modes kept, 0 <= n <= n_modes

    Returns:
        Field with coefficients beyond ``n`` set to zero
    """
    if not 0 <= n <= field.basis.n_modes:
        raise ValueError(f"n must be between 0 and {field.basis.n_modes}, got {n}")
    coeffs = field.coeffs.copy()
    coeffs[n:] = 0.0
    return VelocityField(field.basis, coeffs)


class NormReport(NamedTuple):
    """Norms of one field.

    ``l2`` is ||f||, ``h1`` the spectral ||f||_1 = (sum lambda_k f_k^2)^(1/2),
    ``w12`` the grid Sobolev norm and ``strip_grad`` the gradient norm on a
    strip (None without a strip).
    """
    l2: float
    h1: float
    w12: float
    strip_grad: Optional[float] = None


def sobolev_norm(domain: Domain, packed: np.ndarray, boundary: str = "no_slip") -> np.ndarray:
    """Grid W^{1,2} norm of packed fields (batch over leading axes)."""
    u, v = domain.unpack(packed)
    l2 = domain.inner(packed, packed)
    return np.sqrt(l2 + gradient_energy(domain, u, v, boundary=boundary))


def norms(field: FieldLike, strip: Optional[BoundaryStrip] = None, basis: Optional[SpectralBasis] = None) -> NormReport:
    """Norm family of a velocity.

    Args:
        field: A VelocityField, or a grid field together with ``basis`` for
            the spectral norms
        strip: Optional strip for ``strip_grad``
        basis: Basis used to expand a grid field

    Returns:
        NormReport
    """
    if isinstance(field, VectorGridField):
        if basis is None:
            raise ValueError("a basis is required for the spectral norms of a grid field")
        field = VelocityField.from_grid(basis, field)
    domain = field.domain
    l2 = float(np.sqrt(field.coeffs @ field.coeffs))
    h1 = float(np.sqrt(field.basis.eigenvalues @ field.coeffs ** 2))
    grid = field.grid
    grad = float(gradient_energy(domain, grid.u, grid.v))
    w12 = float(np.sqrt(grid.inner(grid) + grad))
    strip_grad = None
    if strip is not None:
        strip_grad = float(np.sqrt(gradient_energy(domain, grid.u, grid.v, strip=strip)))
    return NormReport(l2=l2, h1=h1, w12=w12, strip_grad=strip_grad)


def random_velocity(
    basis: SpectralBasis,
    rng: np.random.Generator,
    n: Optional[int] = None,
    scale: float = 1.0,
) -> VelocityField:
    """Unit-norm random field in the span of the first ``n`` modes, times ``scale``."""
    n = basis.n_modes if n is None else n
    coeffs = np.zeros(basis.n_modes)
    coeffs[:n] = rng.standard_normal(n)
    coeffs *= scale / np.linalg.norm(coeffs)
    return VelocityField(basis, coeffs)


def l4_norm(field: FieldLike) -> float:
    """L4 norm of the cell-centre interpolant of a velocity."""
    g = field.grid if isinstance(field, VelocityField) else field
    uc = 0.5 * (g.u[1:] + g.u[:-1])
    vc = 0.5 * (g.v[:, 1:] + g.v[:, :-1])
    return float((g.domain.h ** 2 * np.sum((uc ** 2 + vc ** 2) ** 2)) ** 0.25)


def gagliardo_nirenberg_constant(basis: SpectralBasis, samples: int = 100, seed: int = 0) -> np.ndarray:
    """Ratios ||f||_{L4} / (||f||^(1/2) ||f||_1^(1/2)) over random fields.

    Args:
        basis: Basis to sample in
        samples: Number of random fields
        seed: Generator seed

    Returns:
        One ratio per sample; the maximum is the empirical constant
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    ratios = np.empty(samples)
    for s in range(samples):
        f = random_velocity(basis, rng)
        r = norms(f)
        ratios[s] = l4_norm(f) / np.sqrt(r.l2 * r.h1)
    return ratios
