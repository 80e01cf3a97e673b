"""Periodic Cartesian grids, field containers and finite-difference stencils.

All stencils are second order and periodic.  A field on a ``Grid`` is an
array whose trailing axes equal ``grid.shape``; any leading axes (spinor
component, vector index) are carried along untouched.

The vector potential is stored on links: ``A[a][i]`` is the mean of the
``a`` component along the edge from ``x_i`` to ``x_i + h e_a``.  This is the
usual lattice-gauge convention and it makes the covariant stencils exactly
gauge covariant on the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DomainError, StructuralError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid in 1, 2 or 3 dimensions.

    Nodes sit at ``origin + i*h`` with ``h = extent/points``.  The default
    origin centres the box on zero, which the rotation code relies on.
    """

    points: tuple[int, ...]
    extents: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    boundary: str = "periodic"

    def __post_init__(self):
        points = tuple(int(n) for n in np.atleast_1d(self.points))
        extents = tuple(float(e) for e in np.atleast_1d(self.extents))
        if not 1 <= len(points) <= 3:
            raise StructuralError(f"grid dimension must be 1, 2 or 3, got {len(points)}")
        if len(extents) != len(points):
            raise StructuralError("points and extents must have the same length")
        if any(n <= 0 for n in points):
            raise StructuralError(f"points must be positive, got {points}")
        if any(not np.isfinite(e) or e <= 0 for e in extents):
            raise StructuralError(f"extents must be positive, got {extents}")
        if self.boundary != "periodic":
            raise StructuralError(f"only periodic boundaries are supported, got {self.boundary!r}")
        if self.origin is None:
            origin = tuple(-e / 2 for e in extents)
        else:
            origin = tuple(float(o) for o in np.atleast_1d(self.origin))
            if len(origin) != len(points):
                raise StructuralError("origin must have one entry per axis")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extents, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.points))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates broadcast to the full grid shape (``ij`` indexing)."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def wavenumbers(self, axis: int) -> np.ndarray:
        """Angular wavenumbers of the discrete Fourier modes along ``axis``."""
        return 2 * np.pi * np.fft.fftfreq(self.points[axis], d=self.spacing[axis])

    def check_field(self, values: np.ndarray, leading: int | None = None) -> None:
        values = np.asarray(values)
        if values.ndim < self.dim or values.shape[values.ndim - self.dim:] != self.shape:
            raise StructuralError(f"field of shape {values.shape} does not live on grid {self.shape}")
        if leading is not None and values.ndim - self.dim != leading:
            raise StructuralError(f"expected {leading} leading axes, got shape {values.shape}")


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SpinorField:
    """Two-component wave function ``values[k]`` with ``k = 0`` for ``+``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, complex)
        if values.shape != (2, *self.grid.shape):
            raise StructuralError(
                f"spinor values must have shape {(2, *self.grid.shape)}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("spinor field contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> SpinorField:
        return cls(grid, np.zeros((2, *grid.shape), complex))

    @classmethod
    def uniform(cls, grid: Grid, spinor: Sequence[complex]) -> SpinorField:
        """Spatially constant spinor, normalised over the box."""
        c = np.asarray(spinor, complex)
        c = c / np.linalg.norm(c)
        values = c.reshape(2, *([1] * grid.dim)) * np.ones(grid.shape) / np.sqrt(grid.volume)
        return cls(grid, values)

    @classmethod
    def gaussian(
        cls,
        grid: Grid,
        center: Sequence[float] | float = 0.0,
        width: Sequence[float] | float = 1.0,
        momentum: Sequence[float] | float = 0.0,
        spinor: Sequence[complex] = (1.0, 0.0),
        hbar: float = 1.0,
    ) -> SpinorField:
        """Normalised Gaussian packet times a constant spinor.

        ``width`` is the standard deviation of ``|psi|^2`` along each axis.
        """
        center = np.broadcast_to(np.asarray(center, float), (grid.dim,))
        width = np.broadcast_to(np.asarray(width, float), (grid.dim,))
        momentum = np.broadcast_to(np.asarray(momentum, float), (grid.dim,))
        if np.any(width <= 0):
            raise DomainError("packet width must be positive")
        phase = np.zeros(grid.shape)
        env = np.zeros(grid.shape)
        for x, c, s, p in zip(grid.coords, center, width, momentum):
            env -= (x - c) ** 2 / (4 * s**2)
            phase += p * x / hbar
        amp = np.exp(env + 1j * phase)
        amp /= np.sqrt(integrate(grid, np.abs(amp) ** 2))
        c = np.asarray(spinor, complex)
        c = c / np.linalg.norm(c)
        return cls(grid, c.reshape(2, *([1] * grid.dim)) * amp)

    def with_values(self, values) -> SpinorField:
        return SpinorField(self.grid, values)

    @property
    def density(self) -> np.ndarray:
        """Marginal spatial density ``rho_x = |psi_+|^2 + |psi_-|^2``."""
        return np.sum(np.abs(self.values) ** 2, axis=0)

    def norm(self) -> float:
        """Total probability ``<psi|psi>`` (not its square root)."""
        return float(integrate(self.grid, np.abs(self.values) ** 2))

    def normalized(self) -> SpinorField:
        n = self.norm()
        if n <= 0:
            raise DomainError("cannot normalise the zero field")
        return self.with_values(self.values / np.sqrt(n))

    def __add__(self, other: SpinorField) -> SpinorField:
        _same_grid(self.grid, other.grid)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: SpinorField) -> SpinorField:
        _same_grid(self.grid, other.grid)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar) -> SpinorField:
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class GaugeField:
    """External potentials on a grid.

    ``A0`` is the scalar potential at nodes, ``A`` the vector potential on
    links (one component per grid axis) and ``B`` the magnetic field at
    nodes, always three components since the Pauli coupling uses all of
    them.  With ``consistent=True`` the discrete curl of ``A`` must match
    ``B`` to within ``curl_tol`` (absolute).
    """

    grid: Grid
    A0: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    consistent: bool = False
    curl_tol: float = 1e-2

    def __post_init__(self):
        g = self.grid
        A0 = np.zeros(g.shape) if self.A0 is None else np.broadcast_to(self.A0, g.shape)
        A = np.zeros((g.dim, *g.shape)) if self.A is None else np.asarray(self.A, float)
        B = np.zeros((3, *g.shape)) if self.B is None else np.asarray(self.B, float)
        if A.shape != (g.dim, *g.shape):
            raise StructuralError(f"A must have shape {(g.dim, *g.shape)}, got {A.shape}")
        if B.shape != (3, *g.shape):
            raise StructuralError(f"B must have shape {(3, *g.shape)}, got {B.shape}")
        object.__setattr__(self, "A0", _frozen(A0, float))
        object.__setattr__(self, "A", _frozen(A, float))
        object.__setattr__(self, "B", _frozen(B, float))
        if self.consistent:
            err = float(np.max(np.abs(curl(g, self.A) - self.B)))
            if err > self.curl_tol:
                raise StructuralError(f"curl(A) differs from B by {err:.3g} > {self.curl_tol}")

    @classmethod
    def zeros(cls, grid: Grid) -> GaugeField:
        return cls(grid)

    @classmethod
    def uniform(cls, grid: Grid, A0: float = 0.0, A=None, B=None) -> GaugeField:
        A = np.zeros(grid.dim) if A is None else np.asarray(A, float)
        B = np.zeros(3) if B is None else np.asarray(B, float)
        ones = np.ones(grid.shape)
        return cls(
            grid,
            A0=A0 * ones,
            A=A.reshape(grid.dim, *([1] * grid.dim)) * ones,
            B=B.reshape(3, *([1] * grid.dim)) * ones,
        )

    @property
    def is_trivial_vector_potential(self) -> bool:
        return not np.any(self.A)

    def node_vector_potential(self) -> np.ndarray:
        """``A`` averaged from the two links meeting at each node."""
        return np.stack([0.5 * (self.A[a] + np.roll(self.A[a], 1, axis=a)) for a in range(self.grid.dim)])


@dataclass(frozen=True)
class EdParams:
    """Physical and sampling constants.

    ``beta = q/c`` in units with ``c = 1``, so the charge is ``beta`` too.
    ``eta`` defaults to ``hbar``.
    """

    m: float = 1.0
    hbar: float = 1.0
    eta: float | None = None
    beta: float = 1.0
    dt: float = 0.01

    def __post_init__(self):
        if self.eta is None:
            object.__setattr__(self, "eta", self.hbar)
        for name in ("m", "hbar", "eta", "dt"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise DomainError(f"{name} must be strictly positive, got {v}")
        if not np.isfinite(self.beta):
            raise DomainError(f"beta must be finite, got {self.beta}")

    def stability_ratio(self, grid: Grid) -> float:
        """``m h^2 / (hbar dt)`` on the coarsest axis."""
        h = max(grid.spacing)
        return self.m * h**2 / (self.hbar * self.dt)

    def check_stability(self, grid: Grid) -> bool:
        ratio = self.stability_ratio(grid)
        if ratio <= 1:
            log.warning(
                "m h^2/(hbar dt) = %.3g <= 1: Crank-Nicolson stays stable but short waves lose accuracy",
                ratio,
            )
            return False
        return True


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise StructuralError("fields live on different grids")


def _spatial_axis(grid: Grid, values: np.ndarray, axis: int) -> int:
    if not 0 <= axis < grid.dim:
        raise StructuralError(f"axis {axis} out of range for a {grid.dim}-D grid")
    grid.check_field(values)
    return np.ndim(values) - grid.dim + axis


def integrate(grid: Grid, values) -> complex | float:
    """Midpoint quadrature: the sum of all entries times the cell volume.

    Leading (component) axes are summed as well.
    """
    if isinstance(values, SpinorField):
        _same_grid(grid, values.grid)
        values = values.values
    grid.check_field(values)
    return np.sum(values) * grid.cell_volume


def gradient(grid: Grid, values, axis: int) -> np.ndarray:
    """Central difference ``(f[i+1] - f[i-1]) / 2h`` along ``axis``."""
    values = np.asarray(values)
    ax = _spatial_axis(grid, values, axis)
    h = grid.spacing[axis]
    return (np.roll(values, -1, axis=ax) - np.roll(values, 1, axis=ax)) / (2 * h)


def second_difference(grid: Grid, values, axis: int) -> np.ndarray:
    """Three-point ``(f[i+1] - 2 f[i] + f[i-1]) / h^2`` along ``axis``."""
    values = np.asarray(values)
    ax = _spatial_axis(grid, values, axis)
    h = grid.spacing[axis]
    return (np.roll(values, -1, axis=ax) - 2 * values + np.roll(values, 1, axis=ax)) / h**2


def laplacian(grid: Grid, values) -> np.ndarray:
    return sum(second_difference(grid, values, a) for a in range(grid.dim))


def divergence(grid: Grid, vector) -> np.ndarray:
    """Central-difference divergence of a ``(dim, *shape)`` vector field."""
    vector = np.asarray(vector)
    grid.check_field(vector, leading=1)
    return sum(gradient(grid, vector[a], a) for a in range(grid.dim))


def curl(grid: Grid, A) -> np.ndarray:
    """Three-component curl of a link vector potential.

    Missing components of ``A`` and derivatives along absent axes are zero.
    """
    A = np.asarray(A, float)
    nodes = [0.5 * (A[a] + np.roll(A[a], 1, axis=a)) for a in range(grid.dim)]
    comps = nodes + [np.zeros(grid.shape)] * (3 - grid.dim)

    def d(f, axis):
        return gradient(grid, f, axis) if axis < grid.dim else np.zeros(grid.shape)

    return np.stack([
        d(comps[2], 1) - d(comps[1], 2),
        d(comps[0], 2) - d(comps[2], 0),
        d(comps[1], 0) - d(comps[0], 1),
    ])


def link_phases(grid: Grid, A, beta: float, hbar: float) -> np.ndarray:
    """Parallel transporters ``U_a[i] = exp(-i beta h_a A_a[i] / hbar)``."""
    A = np.asarray(A, float)
    h = np.asarray(grid.spacing).reshape(grid.dim, *([1] * grid.dim))
    return np.exp(-1j * beta * h * A / hbar)


def _shift_forward(values, U_a, ax):
    # U_a[i] * f[i+1]
    return U_a * np.roll(values, -1, axis=ax)


def _shift_backward(values, U_a, ax):
    # conj(U_a[i-1]) * f[i-1]
    return np.roll(np.conj(U_a) * values, 1, axis=ax)


def covariant_derivative(psi: SpinorField, gauge: GaugeField, params: EdParams, axis: int) -> SpinorField:
    """Central covariant difference ``[U psi(i+1) - U* psi(i-1)] / 2h``.

    Reduces to :func:`gradient` for ``A = 0`` and approximates
    ``d_a psi - (i beta/hbar) A_a psi`` to second order.  It transforms as
    ``psi`` does under :func:`gauge_transform`, exactly.
    """
    _same_grid(psi.grid, gauge.grid)
    grid = psi.grid
    ax = _spatial_axis(grid, psi.values, axis)
    if gauge.is_trivial_vector_potential:
        return psi.with_values(gradient(grid, psi.values, axis))
    U = link_phases(grid, gauge.A[axis : axis + 1], params.beta, params.hbar)[0]
    fwd = _shift_forward(psi.values, U, ax)
    bwd = _shift_backward(psi.values, U, ax)
    return psi.with_values((fwd - bwd) / (2 * grid.spacing[axis]))


def covariant_laplacian(grid: Grid, values: np.ndarray, U: np.ndarray | None) -> np.ndarray:
    """Sum over axes of ``[U psi(i+1) - 2 psi + U* psi(i-1)] / h^2``.

    ``U`` are the link phases from :func:`link_phases` or ``None`` for a
    vanishing vector potential.  ``values`` may carry leading axes.
    """
    if U is None:
        return laplacian(grid, values)
    out = np.zeros_like(values, dtype=complex)
    lead = np.ndim(values) - grid.dim
    for a, h in enumerate(grid.spacing):
        ax = lead + a
        out += (_shift_forward(values, U[a], ax) - 2 * values + _shift_backward(values, U[a], ax)) / h**2
    return out


def gauge_transform(psi: SpinorField, gauge: GaugeField, chi, params: EdParams) -> tuple[SpinorField, GaugeField]:
    """Apply ``psi -> exp(i beta chi/hbar) psi`` and ``A -> A + grad chi``.

    The gradient of ``chi`` is taken on links (forward difference), which is
    the form under which the covariant stencils are exactly covariant.
    """
    grid = psi.grid
    chi = np.asarray(chi, float)
    grid.check_field(chi, leading=0)
    dchi = np.stack([(np.roll(chi, -1, axis=a) - chi) / h for a, h in enumerate(grid.spacing)])
    new_psi = psi.with_values(psi.values * np.exp(1j * params.beta * chi / params.hbar))
    new_gauge = GaugeField(grid, A0=gauge.A0, A=gauge.A + dchi, B=gauge.B)
    return new_psi, new_gauge
