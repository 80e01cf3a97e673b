"""Canonical coordinates and the Kähler geometry of the epistemic phase space.

A point has real coordinates ``(rho_k, xi_k)`` or complex coordinates

    Psi^mu = (psi_+, i hbar psi_+^*, psi_-, i hbar psi_-^*)

at every node.  Tensors act through constant 4x4 blocks times
``delta(x, x')``, discretised as a Kronecker delta over the cell volume, so
a double quadrature over ``x`` and ``x'`` collapses to a single weighted
sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _solver
from .errors import ContractError, DomainError, StructuralError
from .grid import Grid, SpinorField, integrate

OMEGA = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=complex)
METRIC = -1j * np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
METRIC_INV = 1j * np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
J = np.diag([1j, -1j, 1j, -1j])


@dataclass(frozen=True, eq=False)
class DensityPhasePair:
    """Joint density ``rho[k]`` and its conjugate phase ``xi[k]`` (k = 0 is ``+``)."""

    grid: Grid
    rho: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        shape = (2, *self.grid.shape)
        rho = np.array(self.rho, float)
        xi = np.array(self.xi, float)
        if rho.shape != shape or xi.shape != shape:
            raise StructuralError(f"rho and xi must have shape {shape}")
        rho.flags.writeable = False
        xi.flags.writeable = False
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "xi", xi)

    @property
    def marginal_density(self) -> np.ndarray:
        return self.rho.sum(axis=0)

    @property
    def mean_phase(self) -> np.ndarray:
        """``xi_x = (xi_+ + xi_-)/2``, the momentum conjugate to ``rho_x``."""
        return 0.5 * self.xi.sum(axis=0)


def to_wavefunction(dp: DensityPhasePair, hbar: float = 1.0) -> SpinorField:
    if np.any(dp.rho < 0):
        raise DomainError("rho must be non-negative")
    return SpinorField(dp.grid, np.sqrt(dp.rho) * np.exp(1j * dp.xi / hbar))


def from_wavefunction(psi: SpinorField, hbar: float = 1.0) -> DensityPhasePair:
    """``rho = |psi|^2`` and ``xi = hbar arg psi``, with ``xi = 0`` where ``psi = 0``."""
    rho = np.abs(psi.values) ** 2
    xi = np.where(psi.values != 0, hbar * np.angle(psi.values), 0.0)
    return DensityPhasePair(psi.grid, rho, xi)


@dataclass(frozen=True, eq=False)
class PhaseSpaceTangent:
    """Tangent vector stored as the two perturbation fields ``d psi`` and ``d(i hbar psi^*)``.

    Each has shape ``(2, *grid)``.  Tangents to the real manifold satisfy
    ``dpsi_conj = i hbar conj(dpsi)``; :meth:`real` builds those.  Keeping
    the second field independent allows the coordinate basis vectors.
    """

    grid: Grid
    dpsi: np.ndarray
    dpsi_conj: np.ndarray

    def __post_init__(self):
        shape = (2, *self.grid.shape)
        a = np.array(self.dpsi, complex)
        b = np.array(self.dpsi_conj, complex)
        if a.shape != shape or b.shape != shape:
            raise StructuralError(f"tangent fields must have shape {shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DomainError("tangent contains NaN or Inf")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "dpsi", a)
        object.__setattr__(self, "dpsi_conj", b)

    @classmethod
    def real(cls, grid: Grid, dpsi, hbar: float = 1.0) -> PhaseSpaceTangent:
        dpsi = np.asarray(dpsi, complex)
        return cls(grid, dpsi, 1j * hbar * np.conj(dpsi))

    @classmethod
    def from_state(cls, psi: SpinorField, hbar: float = 1.0) -> PhaseSpaceTangent:
        """The coordinates ``Psi^mu`` of a state read as a vector."""
        return cls.real(psi.grid, psi.values, hbar)

    @classmethod
    def basis(cls, grid: Grid, mu: int, index) -> PhaseSpaceTangent:
        """Coordinate vector ``d/dPsi^{mu x_p}``: a discrete delta at node ``index``."""
        comps = np.zeros((4, *grid.shape), complex)
        comps[(mu, *np.atleast_1d(index))] = 1.0 / grid.cell_volume
        return cls.from_components(grid, comps)

    @classmethod
    def from_components(cls, grid: Grid, comps) -> PhaseSpaceTangent:
        comps = np.asarray(comps, complex)
        return cls(grid, comps[[0, 2]], comps[[1, 3]])

    def components(self) -> np.ndarray:
        """``(4, *grid)`` array ordered as ``Psi^mu``."""
        return np.stack([self.dpsi[0], self.dpsi_conj[0], self.dpsi[1], self.dpsi_conj[1]])

    def is_real(self, hbar: float = 1.0, atol: float = 1e-12) -> bool:
        return np.allclose(self.dpsi_conj, 1j * hbar * np.conj(self.dpsi), atol=atol)


def _check_pair(v1: PhaseSpaceTangent, v2: PhaseSpaceTangent) -> Grid:
    if v1.grid != v2.grid:
        raise StructuralError("tangents live on different grids")
    return v1.grid


def _real_if_close(z: complex, scale: float) -> complex | float:
    if abs(z.imag) <= 1e-12 * max(scale, 1e-300):
        return float(z.real)
    return complex(z)


def _contract(block: np.ndarray, v1: PhaseSpaceTangent, v2: PhaseSpaceTangent) -> complex | float:
    grid = _check_pair(v1, v2)
    a, b = v1.components(), v2.components()
    value = complex(integrate(grid, np.einsum("mn,m...,n...->...", block, a, b)))
    scale = float(integrate(grid, np.abs(a).sum(axis=0) * np.abs(b).sum(axis=0)).real)
    return _real_if_close(value, scale)


def symplectic_form(v1: PhaseSpaceTangent, v2: PhaseSpaceTangent):
    """``Omega(v1, v2)``; real for real tangents, antisymmetric."""
    return _contract(OMEGA, v1, v2)


def metric(v1: PhaseSpaceTangent, v2: PhaseSpaceTangent):
    """``G(v1, v2)``; equals ``2 hbar Re int sum dpsi1 dpsi2^*`` for real tangents."""
    return _contract(METRIC, v1, v2)


def complex_structure(v: PhaseSpaceTangent) -> PhaseSpaceTangent:
    """``J v``: multiplies ``d psi`` by ``i`` and ``d(i hbar psi^*)`` by ``-i``."""
    return PhaseSpaceTangent(v.grid, 1j * v.dpsi, -1j * v.dpsi_conj)


def inner_product(psi1: SpinorField, psi2: SpinorField) -> complex:
    """``<Psi1|Psi2> = int sum_k psi1^* psi2``."""
    if psi1.grid != psi2.grid:
        raise StructuralError("states live on different grids")
    return complex(integrate(psi1.grid, np.conj(psi1.values) * psi2.values))


def geometric_inner_product(psi1: SpinorField, psi2: SpinorField, hbar: float = 1.0) -> complex:
    """``(1/2hbar) (G + i Omega)`` evaluated on the coordinates of the two states."""
    v1 = PhaseSpaceTangent.from_state(psi1, hbar)
    v2 = PhaseSpaceTangent.from_state(psi2, hbar)
    return complex(metric(v1, v2) + 1j * symplectic_form(v1, v2)) / (2 * hbar)


@dataclass(frozen=True, eq=False)
class FunctionalGradient:
    """A functional given by ``dF/drho_k`` and ``dF/dxi_k`` fields, each ``(2, *grid)``."""

    grid: Grid
    d_rho: np.ndarray | None
    d_xi: np.ndarray | None

    @classmethod
    def point_density(cls, grid: Grid, k: int, index) -> FunctionalGradient:
        """``F = rho_k`` at node ``index`` (k = 0 for ``+``)."""
        d = np.zeros((2, *grid.shape))
        d[(k, *np.atleast_1d(index))] = 1.0 / grid.cell_volume
        return cls(grid, d, np.zeros_like(d))

    @classmethod
    def point_phase(cls, grid: Grid, k: int, index) -> FunctionalGradient:
        d = np.zeros((2, *grid.shape))
        d[(k, *np.atleast_1d(index))] = 1.0 / grid.cell_volume
        return cls(grid, np.zeros_like(d), d)

    @classmethod
    def marginal_density(cls, grid: Grid, index) -> FunctionalGradient:
        """``F = rho_x = rho_+ + rho_-`` at node ``index``."""
        d = np.zeros((2, *grid.shape))
        d[(slice(None), *np.atleast_1d(index))] = 1.0 / grid.cell_volume
        return cls(grid, d, np.zeros_like(d))

    @classmethod
    def mean_phase(cls, grid: Grid, index) -> FunctionalGradient:
        """``F = xi_x = (xi_+ + xi_-)/2`` at node ``index``."""
        d = np.zeros((2, *grid.shape))
        d[(slice(None), *np.atleast_1d(index))] = 0.5 / grid.cell_volume
        return cls(grid, np.zeros_like(d), d)


def poisson_bracket(F: FunctionalGradient, G: FunctionalGradient) -> float:
    """``{F, G} = int sum_k (dF/drho dG/dxi - dF/dxi dG/drho)``."""
    for f in (F, G):
        if f.d_rho is None or f.d_xi is None:
            raise StructuralError("Poisson bracket needs both d/drho and d/dxi gradient fields")
    if F.grid != G.grid:
        raise StructuralError("functionals live on different grids")
    shape = (2, *F.grid.shape)
    for arr in (F.d_rho, F.d_xi, G.d_rho, G.d_xi):
        if np.shape(arr) != shape:
            raise StructuralError(f"gradient fields must have shape {shape}")
    return float(integrate(F.grid, F.d_rho * G.d_xi - F.d_xi * G.d_rho))


# -- Hamilton-Killing flows -------------------------------------------------

def e_hamiltonian(apply_h: Callable[[np.ndarray], np.ndarray], psi: SpinorField) -> complex:
    """The bilinear functional ``int sum psi^* (H psi)``."""
    return complex(integrate(psi.grid, np.conj(psi.values) * apply_h(psi.values)))


def hamilton_flow(apply_h: Callable[[np.ndarray], np.ndarray], psi: SpinorField,
                  hbar: float = 1.0) -> np.ndarray:
    """``d psi / d tau = dH/d(i hbar psi^*) = (H psi) / (i hbar)``."""
    return apply_h(psi.values) / (1j * hbar)


def _as_operator(hamiltonian):
    """Return ``(apply, diag, hbar)`` for a HamiltonianSpec or a bare callable."""
    from .pauli import HamiltonianSpec, _diagonal, _operator

    if isinstance(hamiltonian, HamiltonianSpec):
        kernel = hamiltonian.at(0.0)
        return _operator(hamiltonian, kernel), _diagonal(hamiltonian, kernel), hamiltonian.params.hbar
    if callable(hamiltonian):
        return hamiltonian, None, None
    raise ContractError("hamiltonian must be a HamiltonianSpec or a callable on spinor arrays")


def superposition_defect(apply_h, grid: Grid, seed: int = 12345) -> float:
    """Relative failure of ``H(a x + b y) = a H x + b H y`` on random fields."""
    rng = np.random.default_rng(seed)
    shape = (2, *grid.shape)
    x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    y = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    a, b = 0.7 - 0.3j, -1.1 + 0.4j
    lhs = apply_h(a * x + b * y)
    rhs = a * apply_h(x) + b * apply_h(y)
    scale = np.linalg.norm(rhs) + np.linalg.norm(lhs)
    return float(np.linalg.norm(lhs - rhs) / scale) if scale else 0.0


@dataclass
class HKFlowReport:
    omega_drift: float
    metric_drift: float
    norm_drift: float
    steps: int
    tol: float

    @property
    def contract_violation(self) -> bool:
        return max(self.omega_drift, self.metric_drift) > self.tol

    def to_dict(self) -> dict:
        return {"omega_drift": self.omega_drift, "metric_drift": self.metric_drift, "steps": self.steps}


def hk_flow_check(hamiltonian, psi: SpinorField, tangents: tuple[PhaseSpaceTangent, PhaseSpaceTangent],
                  dt: float, steps: int = 1, hbar: float | None = None, tol: float = 1e-10,
                  solver_tol: float = 1e-13) -> HKFlowReport:
    """Push ``psi`` and two tangents along Crank-Nicolson steps and measure Omega, G drift.

    The flow is linear, so tangents move with the same propagator ``U``:
    ``d psi -> U d psi`` and ``d(i hbar psi^*) -> conj(U) d(i hbar psi^*)``.
    All five fields go through one block solve per step.  The default
    ``solver_tol`` sits below the usual 1e-12 because residual errors add
    up over many steps.  A non-linear ``hamiltonian`` raises
    :class:`ContractError`; a non-Hermitian one shows up as drift and sets
    ``contract_violation``.
    """
    apply_h, diag, spec_hbar = _as_operator(hamiltonian)
    hbar = spec_hbar if hbar is None else hbar
    hbar = 1.0 if hbar is None else hbar
    defect = superposition_defect(apply_h, psi.grid)
    if defect > 1e-10:
        raise ContractError(f"hamiltonian is not linear (superposition defect {defect:.3g})")

    v1, v2 = tangents
    omega0, g0 = symplectic_form(v1, v2), metric(v1, v2)
    n0 = psi.norm()

    def apply_block(X):
        return np.stack([apply_h(x) for x in X])

    # rows: psi, d psi (x2), conj of d(i hbar psi^*) (x2); all evolve with U
    block = np.stack([psi.values, v1.dpsi, v2.dpsi, np.conj(v1.dpsi_conj), np.conj(v2.dpsi_conj)]).astype(complex)
    block_diag = None if diag is None else np.broadcast_to(diag, block.shape)
    for _ in range(steps):
        block = _solver.crank_nicolson(apply_block, block, dt, hbar, diag=block_diag, tol=solver_tol)
    state, a1, a2 = block[0], block[1], block[2]
    b1, b2 = np.conj(block[3]), np.conj(block[4])
    grid = psi.grid
    w1, w2 = PhaseSpaceTangent(grid, a1, b1), PhaseSpaceTangent(grid, a2, b2)
    return HKFlowReport(
        omega_drift=float(abs(symplectic_form(w1, w2) - omega0)),
        metric_drift=float(abs(metric(w1, w2) - g0)),
        norm_drift=float(abs(psi.with_values(state).norm() - n0)),
        steps=steps,
        tol=tol,
    )
