"""The Pauli Hamiltonian, its Crank-Nicolson time step and epistemic observables.

The Hamiltonian acting on a two-component field is

    H psi = -(hbar^2 / 2m) D_a D_a psi + V0 psi + V_a sigma^a psi

with the covariant Laplacian taken from link phases of the vector
potential.  The kernel is local in ``x`` and Hermitian for real ``V0`` and
``V_a``, so Crank-Nicolson steps are unitary up to the linear-solve
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import _solver
from .errors import StructuralError
from .grid import (
    EdParams,
    GaugeField,
    Grid,
    SpinorField,
    covariant_laplacian,
    divergence,
    gradient,
    integrate,
    link_phases,
)

KINETIC = ("local", "spectral")

SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


@dataclass(frozen=True, eq=False)
class PotentialKernel:
    """Local Hermitian kernel ``V0 * 1 + V_a sigma^a`` at every node."""

    V0: np.ndarray
    Vvec: np.ndarray

    def __post_init__(self):
        V0 = np.array(self.V0, float)
        Vvec = np.array(self.Vvec, float)
        if Vvec.shape != (3, *V0.shape):
            raise StructuralError(f"Vvec must have shape {(3, *V0.shape)}, got {Vvec.shape}")
        V0.flags.writeable = False
        Vvec.flags.writeable = False
        object.__setattr__(self, "V0", V0)
        object.__setattr__(self, "Vvec", Vvec)

    @classmethod
    def zeros(cls, grid: Grid) -> PotentialKernel:
        return cls(np.zeros(grid.shape), np.zeros((3, *grid.shape)))

    @classmethod
    def uniform(cls, grid: Grid, V0: float = 0.0, Vvec=(0.0, 0.0, 0.0)) -> PotentialKernel:
        ones = np.ones(grid.shape)
        Vvec = np.asarray(Vvec, float).reshape(3, *([1] * grid.dim))
        return cls(V0 * ones, Vvec * ones)

    def __add__(self, other: PotentialKernel) -> PotentialKernel:
        return PotentialKernel(self.V0 + other.V0, self.Vvec + other.Vvec)

    def matrix(self) -> np.ndarray:
        """The 2x2 kernel at every node, shape ``(2, 2, *grid)``."""
        return self.V0 * np.eye(2).reshape(2, 2, *([1] * self.V0.ndim)) + np.einsum(
            "akl,a...->kl...", SIGMA, self.Vvec
        )


def pauli_coupling_from_B(params: EdParams, B) -> PotentialKernel:
    """Point-particle magnetic coupling ``V_a = -(hbar beta / 2m) B_a``.

    ``B`` is a ``(3, *grid)`` array or a :class:`GaugeField`.  The returned
    kernel has ``V0 = 0``; the electric term enters via
    :meth:`HamiltonianSpec.point_particle`.
    """
    if isinstance(B, GaugeField):
        B = B.B
    B = np.asarray(B, float)
    return PotentialKernel(np.zeros(B.shape[1:]), -params.hbar * params.beta / (2 * params.m) * B)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Everything needed to apply ``H``.

    ``potential`` is either a :class:`PotentialKernel` or a callable
    ``t -> PotentialKernel`` for time-dependent problems.  ``kinetic`` picks
    the 3-point covariant Laplacian (``'local'``) or the FFT Laplacian
    (``'spectral'``, zero vector potential only), which commutes with
    rotations of localized fields.
    """

    params: EdParams
    gauge: GaugeField
    potential: PotentialKernel | Callable[[float], PotentialKernel]
    kinetic: str = "local"

    def __post_init__(self):
        if self.kinetic not in KINETIC:
            raise StructuralError(f"kinetic must be one of {KINETIC}, got {self.kinetic!r}")
        if self.kinetic == "spectral" and not self.gauge.is_trivial_vector_potential:
            raise StructuralError("the spectral kinetic term requires a zero vector potential")
        if not callable(self.potential):
            self._check(self.potential)

    @classmethod
    def point_particle(cls, params: EdParams, gauge: GaugeField, V0=None,
                       kinetic: str = "local") -> HamiltonianSpec:
        """Kernel for a point charge: ``V0 + beta A0`` and the Pauli ``B`` coupling."""
        grid = gauge.grid
        extra = np.zeros(grid.shape) if V0 is None else np.broadcast_to(V0, grid.shape)
        kernel = PotentialKernel(extra + params.beta * gauge.A0, np.zeros((3, *grid.shape)))
        return cls(params, gauge, kernel + pauli_coupling_from_B(params, gauge.B), kinetic)

    @classmethod
    def free(cls, params: EdParams, grid: Grid, kinetic: str = "local") -> HamiltonianSpec:
        return cls(params, GaugeField.zeros(grid), PotentialKernel.zeros(grid), kinetic)

    @property
    def grid(self) -> Grid:
        return self.gauge.grid

    @property
    def time_dependent(self) -> bool:
        return callable(self.potential)

    def _check(self, kernel: PotentialKernel) -> None:
        if kernel.V0.shape != self.grid.shape:
            raise StructuralError(f"potential shape {kernel.V0.shape} does not match grid {self.grid.shape}")

    def at(self, t: float = 0.0) -> PotentialKernel:
        if not callable(self.potential):
            return self.potential
        kernel = self.potential(t)
        self._check(kernel)
        return kernel

    def with_potential(self, potential) -> HamiltonianSpec:
        return HamiltonianSpec(self.params, self.gauge, potential, self.kinetic)


def _links(spec: HamiltonianSpec):
    if spec.gauge.is_trivial_vector_potential:
        return None
    return link_phases(spec.grid, spec.gauge.A, spec.params.beta, spec.params.hbar)


def _local(kernel: PotentialKernel, values: np.ndarray) -> np.ndarray:
    V1, V2, V3 = kernel.Vvec
    up, dn = values[0], values[1]
    return np.stack([
        kernel.V0 * up + V3 * up + (V1 - 1j * V2) * dn,
        kernel.V0 * dn - V3 * dn + (V1 + 1j * V2) * up,
    ])


def _k_squared(grid: Grid) -> np.ndarray:
    k2 = np.zeros(grid.shape)
    for a in range(grid.dim):
        k = grid.wavenumbers(a)
        k2 = k2 + (k**2).reshape([-1 if b == a else 1 for b in range(grid.dim)])
    return k2


def _operator(spec: HamiltonianSpec, kernel: PotentialKernel):
    grid = spec.grid
    coef = -spec.params.hbar**2 / (2 * spec.params.m)
    if spec.kinetic == "spectral":
        k2 = _k_squared(grid)
        axes = tuple(range(1, grid.dim + 1))

        def apply(values):
            lap = np.fft.ifftn(-k2 * np.fft.fftn(values, axes=axes), axes=axes)
            return coef * lap + _local(kernel, values)

        return apply

    U = _links(spec)

    def apply(values):
        return coef * covariant_laplacian(grid, values, U) + _local(kernel, values)

    return apply


def _diagonal(spec: HamiltonianSpec, kernel: PotentialKernel) -> np.ndarray:
    p = spec.params
    if spec.kinetic == "spectral":
        kin = p.hbar**2 / (2 * p.m) * float(_k_squared(spec.grid).mean())
    else:
        kin = p.hbar**2 / (2 * p.m) * sum(2 / h**2 for h in spec.grid.spacing)
    return np.stack([kin + kernel.V0 + kernel.Vvec[2], kin + kernel.V0 - kernel.Vvec[2]])


def _check_psi(spec: HamiltonianSpec, psi: SpinorField) -> None:
    if psi.grid != spec.grid:
        raise StructuralError("wave function and Hamiltonian live on different grids")


def apply_hamiltonian(spec: HamiltonianSpec, psi: SpinorField, t: float = 0.0) -> SpinorField:
    _check_psi(spec, psi)
    return psi.with_values(_operator(spec, spec.at(t))(psi.values))


def step(
    spec: HamiltonianSpec,
    psi: SpinorField,
    dt: float | None = None,
    t: float = 0.0,
    tol: float = _solver.DEFAULT_TOL,
    maxiter: int = _solver.DEFAULT_MAXITER,
) -> SpinorField:
    """One Crank-Nicolson step of length ``dt`` (default ``params.dt``).

    Time-dependent potentials are evaluated at ``t + dt/2``.  Negative
    ``dt`` gives the exact inverse of the forward step.  A spatially
    uniform ``V_a`` commutes with the rest of ``H``; it is split off and
    applied as its exact SU(2) exponential, so it cannot leak into the
    marginal density through the Crank-Nicolson phase error.
    """
    _check_psi(spec, psi)
    dt = spec.params.dt if dt is None else dt
    if dt == 0:
        return psi
    kernel = spec.at(t + dt / 2)
    kernel, spin = _split_uniform_spin(kernel)
    out = _solver.crank_nicolson(
        _operator(spec, kernel), psi.values, dt, spec.params.hbar,
        diag=_diagonal(spec, kernel), tol=tol, maxiter=maxiter,
    )
    if spin is not None:
        out = np.einsum("kl,l...->k...", _spin_propagator(spin, dt, spec.params.hbar), out)
    return psi.with_values(out)


def _split_uniform_spin(kernel: PotentialKernel) -> tuple[PotentialKernel, np.ndarray | None]:
    flat = kernel.Vvec.reshape(3, -1)
    if not np.any(flat) or np.any(flat != flat[:, :1]):
        return kernel, None
    return PotentialKernel(kernel.V0, np.zeros_like(kernel.Vvec)), flat[:, 0].copy()


def _spin_propagator(v: np.ndarray, dt: float, hbar: float) -> np.ndarray:
    """``exp(-i dt v.sigma / hbar)`` in closed form."""
    mag = float(np.linalg.norm(v))
    angle = mag * dt / hbar
    n_sigma = np.einsum("a,akl->kl", v / mag, SIGMA)
    return np.cos(angle) * np.eye(2) - 1j * np.sin(angle) * n_sigma


def evolve(spec: HamiltonianSpec, psi: SpinorField, steps: int, dt: float | None = None,
           t0: float = 0.0) -> Iterator[tuple[float, SpinorField]]:
    """Yield ``(t, psi)`` after each of ``steps`` Crank-Nicolson steps."""
    dt = spec.params.dt if dt is None else dt
    t = t0
    for _ in range(steps):
        psi = step(spec, psi, dt, t)
        t += dt
        yield t, psi


def expectation(psi: SpinorField, values: np.ndarray) -> complex:
    """``<psi|phi>`` for ``phi = values``, typically an operator applied to ``psi``."""
    return integrate(psi.grid, np.conj(psi.values) * values)


def energy(spec: HamiltonianSpec, psi: SpinorField, t: float = 0.0) -> float:
    """``<psi|H|psi>``; the imaginary part vanishes by Hermiticity."""
    return float(np.real(expectation(psi, apply_hamiltonian(spec, psi, t).values)))


def position_moments(psi: SpinorField) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each coordinate under ``rho_x``.

    Uses plain node coordinates, so the packet should stay clear of the
    periodic seam.
    """
    rho = psi.density
    norm = integrate(psi.grid, rho)
    means = np.array([integrate(psi.grid, x * rho) / norm for x in psi.grid.coords])
    var = np.array([integrate(psi.grid, (x - mu) ** 2 * rho) / norm for x, mu in zip(psi.grid.coords, means)])
    return np.real(means), np.real(var)


def momentum(psi: SpinorField, hbar: float = 1.0) -> np.ndarray:
    """Canonical momentum ``<(hbar/i) d_a>`` with central differences."""
    return np.array([
        np.real(expectation(psi, hbar / 1j * gradient(psi.grid, psi.values, a)))
        for a in range(psi.grid.dim)
    ])


@dataclass(frozen=True)
class ContinuityResidual:
    field: np.ndarray
    l1: float


def probability_current(psi: SpinorField, gauge: GaugeField, params: EdParams) -> np.ndarray:
    """``rho_x v`` with the current velocity of the entropic sampler."""
    from .sampler import current_velocity

    return current_velocity(psi, gauge, params) * psi.density


def density_rate(before: SpinorField, after: SpinorField, spacing: float) -> np.ndarray:
    """Centred estimate of ``d rho_x / dt`` from snapshots ``spacing`` apart."""
    return (after.density - before.density) / spacing


def continuity_residual(spec: HamiltonianSpec, psi: SpinorField, dt: float | None = None,
                        t: float = 0.0, tol: float = _solver.DEFAULT_TOL) -> ContinuityResidual:
    """Residual of ``d_t rho_x + d_a(v^a rho_x) = 0`` at ``psi``.

    ``d_t rho_x`` comes from half steps of ``+-dt/2`` around ``psi``; the flux
    uses the current velocity of the ontic sector.
    """
    dt = spec.params.dt if dt is None else dt
    before = step(spec, psi, -dt / 2, t, tol=tol)
    after = step(spec, psi, dt / 2, t, tol=tol)
    res = density_rate(before, after, dt) + divergence(psi.grid, probability_current(psi, spec.gauge, spec.params))
    return ContinuityResidual(res, float(integrate(psi.grid, np.abs(res))))
