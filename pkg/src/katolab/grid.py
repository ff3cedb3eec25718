"""Staggered-grid discretization of the unit square.

The domain is the unit square with no-slip walls on all four sides,
discretized by a MAC grid with ``nx`` square cells per axis:

- cell centres carry scalars, shape ``(nx, nx)``
- x-velocity ``u`` lives on vertical faces, shape ``(nx + 1, nx)``
- y-velocity ``v`` lives on horizontal faces, shape ``(nx, nx + 1)``
- the stream function lives on cell nodes, shape ``(nx + 1, nx + 1)``

Arrays are indexed ``[i, j]`` with ``i`` along x and ``j`` along y. Velocity
values on the wall faces (``u[0]``, ``u[-1]``, ``v[:, 0]``, ``v[:, -1]``) are
the wall-normal components and are zero for every field this package builds,
so the "packed" representation used by the linear algebra keeps interior
faces only.

Example:
    >>> domain = build_domain(16)
    >>> strip = boundary_strip(domain, 0.25)
    >>> integrate(ScalarGridField(domain, np.ones((16, 16))), strip)
    0.75
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Tuple

import numpy as np

from katolab.errors import ConfigError

logger = logging.getLogger(__name__)

MIN_NX = 8

# Wall treatment for the tangential gradient rows
BOUNDARY_MODES = {
    "no_slip": "reflected ghost value, exact for fields vanishing on the wall",
    "free": "linear extrapolation of the interior one-sided gradients",
}


@dataclass(frozen=True, eq=False)
class Domain:
    """Unit square split into ``nx`` by ``nx`` square cells.

    Attributes:
        nx: Cells per axis (even, at least 8)
    """
    nx: int
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if isinstance(self.nx, bool) or not isinstance(self.nx, (int, np.integer)):
            raise ConfigError([f"nx must be an integer, got {self.nx!r}"])
        if self.nx < MIN_NX or self.nx % 2:
            raise ConfigError([f"nx must be even and >= {MIN_NX}, got {self.nx}"])
        if self.width != 1.0 or self.height != 1.0:
            raise ConfigError(["only the unit square is supported"])
        object.__setattr__(self, "nx", int(self.nx))

    @property
    def ny(self) -> int:
        return self.nx

    @property
    def h(self) -> float:
        """Cell size."""
        return 1.0 / self.nx

    @property
    def n_cells(self) -> int:
        return self.nx * self.nx

    @property
    def n_u(self) -> int:
        """Interior x-velocity faces."""
        return (self.nx - 1) * self.nx

    @property
    def n_v(self) -> int:
        """Interior y-velocity faces."""
        return self.nx * (self.nx - 1)

    @property
    def n_velocity(self) -> int:
        """Length of a packed velocity vector."""
        return self.n_u + self.n_v

    @property
    def n_stream(self) -> int:
        """Interior nodes carrying stream-function unknowns."""
        return (self.nx - 1) ** 2

    @property
    def u_shape(self) -> Tuple[int, int]:
        return (self.nx + 1, self.nx)

    @property
    def v_shape(self) -> Tuple[int, int]:
        return (self.nx, self.nx + 1)

    @property
    def node_shape(self) -> Tuple[int, int]:
        return (self.nx + 1, self.nx + 1)

    @cached_property
    def cell_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(x, y) of cell centres."""
        c = (np.arange(self.nx) + 0.5) * self.h
        return np.meshgrid(c, c, indexing="ij")

    @cached_property
    def node_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(x, y) of cell nodes."""
        n = np.arange(self.nx + 1) * self.h
        return np.meshgrid(n, n, indexing="ij")

    @cached_property
    def u_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(x, y) of the x-velocity faces."""
        return np.meshgrid(
            np.arange(self.nx + 1) * self.h,
            (np.arange(self.nx) + 0.5) * self.h,
            indexing="ij",
        )

    @cached_property
    def v_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(x, y) of the y-velocity faces."""
        return np.meshgrid(
            (np.arange(self.nx) + 0.5) * self.h,
            np.arange(self.nx + 1) * self.h,
            indexing="ij",
        )

    @cached_property
    def distance(self) -> np.ndarray:
        """Distance from each cell centre to the nearest wall."""
        x, y = self.cell_coordinates
        return np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))

    @cached_property
    def node_distance(self) -> np.ndarray:
        """Distance from each node to the nearest wall (0 on the boundary)."""
        x, y = self.node_coordinates
        return np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))

    @cached_property
    def full_cell_weights(self) -> np.ndarray:
        return _strip_weights(self, 0.5)[0]

    @cached_property
    def full_node_weights(self) -> np.ndarray:
        return _strip_weights(self, 0.5)[1]

    def pack(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Flatten interior faces into one vector; leading axes are kept."""
        lead = u.shape[:-2]
        return np.concatenate(
            [
                u[..., 1:-1, :].reshape(lead + (self.n_u,)),
                v[..., :, 1:-1].reshape(lead + (self.n_v,)),
            ],
            axis=-1,
        )

    def unpack(self, vec: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Inverse of :meth:`pack`; wall faces come back as zeros."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape[-1] != self.n_velocity:
            raise ValueError(
                f"packed velocity has length {vec.shape[-1]}, "
                f"expected {self.n_velocity} for nx={self.nx}"
            )
        lead = vec.shape[:-1]
        n = self.nx
        u = np.zeros(lead + self.u_shape)
        v = np.zeros(lead + self.v_shape)
        u[..., 1:-1, :] = vec[..., : self.n_u].reshape(lead + (n - 1, n))
        v[..., :, 1:-1] = vec[..., self.n_u:].reshape(lead + (n, n - 1))
        return u, v

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Discrete L2 inner product of packed vectors."""
        return self.h ** 2 * np.sum(a * b, axis=-1)


def build_domain(nx: int) -> Domain:
    """Create a domain with ``nx`` cells per axis.

    Args:
        nx: Even cell count, at least 8

    Returns:
        Domain with h = 1/nx

    Example:
        >>> build_domain(8).h
        0.125
    """
    return Domain(nx)


@dataclass(frozen=True, eq=False)
class ScalarGridField:
    """Cell-centred scalar values."""
    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.domain.nx, self.domain.nx):
            raise ValueError(
                f"scalar field has shape {values.shape}, "
                f"expected {(self.domain.nx, self.domain.nx)}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar field contains NaN or Inf")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class VectorGridField:
    """Face-centred velocity components on the staggered grid.

    Attributes:
        domain: Grid the values live on
        u: x-velocity on vertical faces, shape (nx + 1, nx)
        v: y-velocity on horizontal faces, shape (nx, nx + 1)
    """
    domain: Domain
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.shape != self.domain.u_shape or v.shape != self.domain.v_shape:
            raise ValueError(
                f"vector field components have shapes {u.shape}, {v.shape}; "
                f"expected {self.domain.u_shape}, {self.domain.v_shape}"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("vector field contains NaN or Inf")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_packed(cls, domain: Domain, vec: np.ndarray) -> "VectorGridField":
        u, v = domain.unpack(vec)
        return cls(domain, u, v)

    @classmethod
    def zeros(cls, domain: Domain) -> "VectorGridField":
        return cls(domain, np.zeros(domain.u_shape), np.zeros(domain.v_shape))

    @property
    def packed(self) -> np.ndarray:
        return self.domain.pack(self.u, self.v)

    def divergence(self) -> np.ndarray:
        """Discrete divergence per cell."""
        h = self.domain.h
        return (self.u[1:] - self.u[:-1]) / h + (self.v[:, 1:] - self.v[:, :-1]) / h

    def inner(self, other: "VectorGridField") -> float:
        _check_same_grid(self.domain, other.domain)
        return float(self.domain.inner(self.packed, other.packed))

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def _combine(self, other: "VectorGridField", sign: float) -> "VectorGridField":
        _check_same_grid(self.domain, other.domain)
        return VectorGridField(self.domain, self.u + sign * other.u, self.v + sign * other.v)

    def __add__(self, other: "VectorGridField") -> "VectorGridField":
        return self._combine(other, 1.0)

    def __sub__(self, other: "VectorGridField") -> "VectorGridField":
        return self._combine(other, -1.0)

    def __mul__(self, scalar: float) -> "VectorGridField":
        return VectorGridField(self.domain, scalar * self.u, scalar * self.v)

    __rmul__ = __mul__


def _check_same_grid(a: Domain, b: Domain) -> None:
    if a.nx != b.nx:
        raise ValueError(f"grid mismatch: nx={a.nx} vs nx={b.nx}")


def curl(domain: Domain, psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Velocity (u, v) = (d psi/dy, -d psi/dx) from node values of psi.

    Leading axes of ``psi`` are treated as a batch.
    """
    h = domain.h
    return np.diff(psi, axis=-1) / h, -np.diff(psi, axis=-2) / h


def laplacian(domain: Domain, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Five-point vector Laplacian with no-slip ghost values.

    Tangential ghosts across a wall take the negated interior value; wall
    faces of the result are zero.
    """
    h2 = domain.h ** 2
    lu = np.zeros_like(u)
    lv = np.zeros_like(v)

    up = np.concatenate([-u[..., :, :1], u, -u[..., :, -1:]], axis=-1)
    lu[..., 1:-1, :] = (
        u[..., 2:, :] + u[..., :-2, :] - 2.0 * u[..., 1:-1, :]
        + up[..., 1:-1, 2:] + up[..., 1:-1, :-2] - 2.0 * u[..., 1:-1, :]
    ) / h2

    vp = np.concatenate([-v[..., :1, :], v, -v[..., -1:, :]], axis=-2)
    lv[..., :, 1:-1] = (
        v[..., :, 2:] + v[..., :, :-2] - 2.0 * v[..., :, 1:-1]
        + vp[..., 2:, 1:-1] + vp[..., :-2, 1:-1] - 2.0 * v[..., :, 1:-1]
    ) / h2
    return lu, lv


class GradientSamples(NamedTuple):
    """Velocity gradient sampled where each difference is centred.

    ``dudx``/``dvdy`` sit at cell centres, ``dudy``/``dvdx`` at nodes.
    """
    dudx: np.ndarray
    dvdy: np.ndarray
    dudy: np.ndarray
    dvdx: np.ndarray

    def max_abs(self) -> np.ndarray:
        return np.maximum.reduce([
            np.max(np.abs(part), axis=(-2, -1)) for part in self
        ])


def gradient_samples(
    domain: Domain,
    u: np.ndarray,
    v: np.ndarray,
    boundary: str = "no_slip",
) -> GradientSamples:
    """Finite-difference gradient of a face-centred velocity.

    Args:
        domain: Grid of the velocity
        u: x-velocity, shape (..., nx + 1, nx)
        v: y-velocity, shape (..., nx, nx + 1)
        boundary: Wall-row treatment, a key of ``BOUNDARY_MODES``

    Returns:
        GradientSamples with matching leading axes
    """
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {list(BOUNDARY_MODES)}, got {boundary!r}")
    h = domain.h
    dudx = np.diff(u, axis=-2) / h
    dvdy = np.diff(v, axis=-1) / h

    mid_u = np.diff(u, axis=-1) / h
    mid_v = np.diff(v, axis=-2) / h
    if boundary == "no_slip":
        lo_u, hi_u = 2.0 * u[..., :, :1] / h, -2.0 * u[..., :, -1:] / h
        lo_v, hi_v = 2.0 * v[..., :1, :] / h, -2.0 * v[..., -1:, :] / h
    else:
        lo_u = 2.0 * mid_u[..., :, :1] - mid_u[..., :, 1:2]
        hi_u = 2.0 * mid_u[..., :, -1:] - mid_u[..., :, -2:-1]
        lo_v = 2.0 * mid_v[..., :1, :] - mid_v[..., 1:2, :]
        hi_v = 2.0 * mid_v[..., -1:, :] - mid_v[..., -2:-1, :]
    dudy = np.concatenate([lo_u, mid_u, hi_u], axis=-1)
    dvdx = np.concatenate([lo_v, mid_v, hi_v], axis=-2)
    return GradientSamples(dudx, dvdy, dudy, dvdx)


def gradient_energy(
    domain: Domain,
    u: np.ndarray,
    v: np.ndarray,
    strip: Optional["BoundaryStrip"] = None,
    boundary: str = "no_slip",
) -> np.ndarray:
    """Weighted sum of squared velocity gradients.

    Without a strip this is the full-domain ``||grad f||^2``; with one it is
    ``||grad f||^2`` restricted to the strip. Both use the same integrand and
    the full-domain weights dominate every strip's, so the strip value never
    exceeds the full one.
    """
    g = gradient_samples(domain, u, v, boundary=boundary)
    if strip is None:
        wc, wn = domain.full_cell_weights, domain.full_node_weights
    else:
        _check_same_grid(domain, strip.domain)
        wc, wn = strip.cell_weights, strip.node_weights
    cells = np.sum(wc * (g.dudx ** 2 + g.dvdy ** 2), axis=(-2, -1))
    nodes = np.sum(wn * (g.dudy ** 2 + g.dvdx ** 2), axis=(-2, -1))
    return domain.h ** 2 * (cells + nodes)


@dataclass(frozen=True, eq=False)
class BoundaryStrip:
    """Cells and nodes within ``effective_width`` of the wall.

    Attributes:
        domain: Grid the weights live on
        nominal_width: Requested width (c_tilde * nu)
        effective_width: Width actually used, never below h/2
        cell_weights: Fraction of each cell inside the strip
        node_weights: Fraction of each node's control volume inside the
            strip (the full-domain node weights are 1/2 on edges, 1/4 at
            corners)
    """
    domain: Domain
    nominal_width: float
    effective_width: float
    cell_weights: np.ndarray
    node_weights: np.ndarray

    @property
    def clamped(self) -> bool:
        return self.effective_width > self.nominal_width

    @property
    def area(self) -> float:
        """Exact area of the strip of effective width."""
        inner = max(1.0 - 2.0 * self.effective_width, 0.0)
        return 1.0 - inner ** 2

    @property
    def weighted_area(self) -> float:
        return float(self.domain.h ** 2 * np.sum(self.cell_weights))

    def dilated(self, cells: int = 1) -> "BoundaryStrip":
        """Strip widened by whole cells (support of one-cell stencils)."""
        return boundary_strip(self.domain, self.effective_width + cells * self.domain.h)


def _overlap(lo: np.ndarray, hi: np.ndarray, w: float) -> np.ndarray:
    """Length of [lo, hi] inside the inner interval [w, 1 - w]."""
    return np.maximum(np.minimum(hi, 1.0 - w) - np.maximum(lo, w), 0.0)


def _strip_weights(domain: Domain, w: float) -> Tuple[np.ndarray, np.ndarray]:
    h = domain.h
    n = domain.nx

    edges = np.arange(n) * h
    ox = _overlap(edges, edges + h, w)
    cells = np.clip(1.0 - np.outer(ox, ox) / h ** 2, 0.0, 1.0)

    nodes = np.arange(n + 1) * h
    frac = np.ones(n + 1)
    frac[[0, -1]] = 0.5
    onx = _overlap(np.maximum(nodes - h / 2, 0.0), np.minimum(nodes + h / 2, 1.0), w)
    node_w = np.clip(np.outer(frac, frac) - np.outer(onx, onx) / h ** 2, 0.0, 1.0)
    return cells, node_w


def boundary_strip(domain: Domain, width: float) -> BoundaryStrip:
    """Partial-cell weights of the strip of points within ``width`` of the wall.

    Widths below h/2 would leave the strip unresolved; they are clamped to
    h/2 and the clamp is logged.

    Args:
        domain: Grid to weight
        width: Strip width, typically c_tilde * nu

    Returns:
        BoundaryStrip whose cell weights sum (times h^2) to the strip area

    Example:
        >>> boundary_strip(build_domain(16), 0.25).area
        0.75
    """
    if not width > 0:
        raise ValueError(f"strip width must be positive, got {width}")
    effective = max(float(width), domain.h / 2)
    if effective > width:
        logger.warning(
            "strip width %.3g below h/2 on nx=%d; clamped to %.3g",
            width, domain.nx, effective,
        )
    cells, nodes = _strip_weights(domain, min(effective, 0.5))
    return BoundaryStrip(domain, float(width), effective, cells, nodes)


def integrate(field: ScalarGridField, strip: Optional[BoundaryStrip] = None) -> float:
    """Midpoint-rule integral over the domain or over a strip.

    Args:
        field: Cell-centred values
        strip: Optional strip whose cell weights multiply the values

    Returns:
        sum(values * weights) * h^2
    """
    domain = field.domain
    weights = domain.full_cell_weights
    if strip is not None:
        _check_same_grid(domain, strip.domain)
        weights = strip.cell_weights
    return float(domain.h ** 2 * np.sum(field.values * weights))
