"""Ontic sector: drift fields, the short-step Gaussian kernel and walker ensembles.

A walker at ``x`` moves in one step of entropic time ``dt`` by

    dx = b(x) dt + w,    <w> = 0,    <w_a w_b> = (eta/m) dt delta_ab

where ``b`` is the drift velocity built from the current wave function.
Walkers never feed back on the wave function.

Random numbers come from counter-based Philox streams keyed by the seed and
addressed by (step, chunk of walkers), so the paths do not depend on how
many threads draw them.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ContractError, DomainError, StructuralError
from .grid import EdParams, GaugeField, Grid, SpinorField, divergence, gradient, integrate

log = logging.getLogger(__name__)

DEAD_ZONE = 1e-12
CHUNK = 1 << 15

# stream tags stored in the Philox counter
_TAG_STEP = 0
_TAG_K = 1
_TAG_INIT = 2


def live_mask(psi: SpinorField, floor: float = DEAD_ZONE) -> np.ndarray:
    """Nodes where ``rho_x`` is large enough for phase gradients to mean anything."""
    rho = psi.density
    return rho >= floor * rho.max()


def conditional_probabilities(psi: SpinorField) -> np.ndarray:
    """``rho_{k|x}``, with 1/2 each where ``rho_x`` vanishes."""
    rho_k = np.abs(psi.values) ** 2
    rho = rho_k.sum(axis=0)
    out = np.full_like(rho_k, 0.5)
    nz = rho > 0
    out[:, nz] = rho_k[:, nz] / rho[nz]
    return out


def _phase_gradient_sum(psi: SpinorField, hbar: float, live: np.ndarray) -> np.ndarray:
    # sum_k rho_{k|x} d xi_k = hbar sum_k Im(psi_k^* d psi_k) / rho_x
    grid = psi.grid
    rho = np.where(live, psi.density, 1.0)
    out = np.empty((grid.dim, *grid.shape))
    for a in range(grid.dim):
        flux = np.imag(np.conj(psi.values) * gradient(grid, psi.values, a)).sum(axis=0)
        out[a] = np.where(live, hbar * flux / rho, 0.0)
    return out


def _log_density_gradient(psi: SpinorField, live: np.ndarray) -> np.ndarray:
    # d log rho taken as (d rho)/rho so that rho * d log rho is exactly d rho
    grid = psi.grid
    rho = psi.density
    safe = np.where(live, rho, 1.0)
    return np.stack([np.where(live, gradient(grid, rho, a) / safe, 0.0) for a in range(grid.dim)])


def effective_phase_gradient(psi: SpinorField, params: EdParams) -> np.ndarray:
    """k-averaged drift-potential gradient ``sum_k rho_{k|x} d phi_k``.

    With ``xi_k = phi_k - (eta/2) log rho_x`` this is
    ``sum_k rho_{k|x} d xi_k + (eta/2) d log rho_x``.  Zero in dead zones.
    """
    live = live_mask(psi)
    if not live.all():
        log.debug("effective phase gradient: %d dead-zone nodes set to 0", int((~live).sum()))
    return _phase_gradient_sum(psi, params.hbar, live) + 0.5 * params.eta * _log_density_gradient(psi, live)


def drift_velocity(psi: SpinorField, gauge: GaugeField, params: EdParams) -> np.ndarray:
    """Expected displacement per unit time, ``(grad_phi_bar - beta A) / m``."""
    live = live_mask(psi)
    grad_phi = effective_phase_gradient(psi, params)
    return np.where(live, (grad_phi - params.beta * gauge.node_vector_potential()) / params.m, 0.0)


def osmotic_velocity(psi: SpinorField, params: EdParams) -> np.ndarray:
    return params.eta / (2 * params.m) * _log_density_gradient(psi, live_mask(psi))


def current_velocity(psi: SpinorField, gauge: GaugeField, params: EdParams) -> np.ndarray:
    """Velocity of the probability flow, ``b - (eta/2m) d log rho_x``."""
    return drift_velocity(psi, gauge, params) - osmotic_velocity(psi, params)


def interpolate(grid: Grid, field: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of node values at ``positions`` (N x dim)."""
    idx = ((positions - np.asarray(grid.origin)) / np.asarray(grid.spacing)).T
    return ndimage.map_coordinates(field, idx, order=1, mode="grid-wrap")


def wrap(grid: Grid, positions: np.ndarray) -> np.ndarray:
    lo = np.asarray(grid.origin)
    return lo + np.mod(positions - lo, np.asarray(grid.extents))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EDPAULI_THREADS", "1")))
    except ValueError:
        return 1


def _stream(seed: int, tag: int, step: int, chunk: int) -> np.random.Generator:
    key = np.uint64(seed % (1 << 64))
    return np.random.Generator(np.random.Philox(key=key, counter=[0, tag, chunk, step]))


def _draw(seed: int, tag: int, step: int, n: int, fn) -> np.ndarray:
    """Concatenate ``fn(rng, size)`` over fixed walker chunks."""
    chunks = [(c, min(CHUNK, n - c * CHUNK)) for c in range((n + CHUNK - 1) // CHUNK)]

    def one(item):
        c, size = item
        return fn(_stream(seed, tag, step, c), size)

    workers = min(_threads(), len(chunks)) or 1
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, chunks))
    else:
        parts = [one(item) for item in chunks]
    return np.concatenate(parts) if parts else np.empty((0,))


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """N walkers on a periodic grid.

    ``displacement`` holds the unwrapped move of the last step (zeros
    initially); ``step_index`` addresses the random stream of the next step.
    """

    grid: Grid
    positions: np.ndarray
    seed: int = 0
    k_labels: np.ndarray | None = None
    time: float = 0.0
    step_index: int = 0
    displacement: np.ndarray | None = None

    def __post_init__(self):
        pos = np.array(self.positions, float).reshape(-1, self.grid.dim)
        pos = wrap(self.grid, pos)
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        if self.displacement is None:
            object.__setattr__(self, "displacement", np.zeros_like(pos))
        if self.k_labels is not None:
            k = np.asarray(self.k_labels, int)
            if k.shape != (len(pos),) or not np.all(np.isin(k, (-1, 1))):
                raise StructuralError("k_labels must be N values in {+1, -1}")
            object.__setattr__(self, "k_labels", k)

    @property
    def N(self) -> int:
        return len(self.positions)

    @classmethod
    def from_density(cls, grid: Grid, rho: np.ndarray, N: int, seed: int = 0,
                     k_labels: bool = False) -> TrajectoryEnsemble:
        """Draw ``N`` walkers from a node density, uniformly within each cell."""
        if N <= 0:
            raise DomainError("ensemble needs at least one walker")
        w = np.clip(np.asarray(rho, float).ravel(), 0, None)
        if w.sum() <= 0:
            raise DomainError("density has no mass")
        w = w / w.sum()
        u = _draw(seed, _TAG_INIT, 0, N, lambda rng, n: rng.random((n, 1 + grid.dim)))
        cells = np.searchsorted(np.cumsum(w), u[:, 0], side="right")
        cells = np.minimum(cells, w.size - 1)
        idx = np.stack(np.unravel_index(cells, grid.shape), axis=1)
        pos = np.asarray(grid.origin) + (idx + u[:, 1:] - 0.5) * np.asarray(grid.spacing)
        k = np.ones(N, int) if k_labels else None
        return cls(grid, pos, seed=seed, k_labels=k)


@dataclass(frozen=True)
class StepMoments:
    mean: np.ndarray
    cov: np.ndarray


def step_moments(ensemble: TrajectoryEnsemble) -> StepMoments:
    """Sample mean and covariance of the last step's displacements."""
    d = ensemble.displacement
    return StepMoments(d.mean(axis=0), np.atleast_2d(np.cov(d, rowvar=False)))


def sample_step(ensemble: TrajectoryEnsemble, psi: SpinorField, gauge: GaugeField,
                params: EdParams) -> TrajectoryEnsemble:
    """Move every walker by ``b(x) dt`` plus Gaussian noise of variance ``(eta/m) dt``.

    ``psi`` is the epistemic state at the current instant.  Walkers sitting
    in dead zones see zero drift and take a pure-noise step.
    """
    grid = ensemble.grid
    if psi.grid != grid or gauge.grid != grid:
        raise StructuralError("ensemble, wave function and gauge field must share a grid")
    b = drift_velocity(psi, gauge, params)
    drift = np.stack([interpolate(grid, b[a], ensemble.positions) for a in range(grid.dim)], axis=1)
    dim = grid.dim
    noise = _draw(ensemble.seed, _TAG_STEP, ensemble.step_index, ensemble.N,
                  lambda rng, n: rng.standard_normal((n, dim)))
    dx = drift * params.dt + np.sqrt(params.eta * params.dt / params.m) * noise
    return replace(
        ensemble,
        positions=ensemble.positions + dx,
        time=ensemble.time + params.dt,
        step_index=ensemble.step_index + 1,
        displacement=dx,
    )


def resample_k(ensemble: TrajectoryEnsemble, psi: SpinorField) -> TrajectoryEnsemble:
    """Redraw each walker's ``k`` from ``rho_{k|x}`` at its position.

    A visual aid only: positions are left untouched and no transition
    mechanism for ``k`` is implied.
    """
    if ensemble.k_labels is None:
        raise ContractError("resample_k needs an ensemble created with k_labels enabled")
    grid = ensemble.grid
    rho_k = np.abs(psi.values) ** 2
    up = interpolate(grid, rho_k[0], ensemble.positions)
    total = up + interpolate(grid, rho_k[1], ensemble.positions)
    p_up = np.full(ensemble.N, 0.5)
    nz = total > 0
    p_up[nz] = np.clip(up[nz] / total[nz], 0.0, 1.0)
    u = _draw(ensemble.seed, _TAG_K, ensemble.step_index, ensemble.N, lambda rng, n: rng.random(n))
    return replace(ensemble, k_labels=np.where(u < p_up, 1, -1))


def density_estimate(ensemble: TrajectoryEnsemble, grid: Grid | None = None,
                     bandwidth: float | None = None) -> np.ndarray:
    """Cell-count histogram normalised to unit integral.

    Cells are centred on grid nodes.  ``bandwidth`` (length units) adds a
    periodic Gaussian smoothing.
    """
    grid = ensemble.grid if grid is None else grid
    if ensemble.N == 0:
        raise DomainError("empty ensemble")
    idx = np.rint((ensemble.positions - np.asarray(grid.origin)) / np.asarray(grid.spacing)).astype(int)
    idx %= np.asarray(grid.shape)
    flat = np.ravel_multi_index(idx.T, grid.shape)
    counts = np.bincount(flat, minlength=grid.size).reshape(grid.shape).astype(float)
    rho = counts / (ensemble.N * grid.cell_volume)
    if bandwidth:
        sigma = [bandwidth / h for h in grid.spacing]
        rho = ndimage.gaussian_filter(rho, sigma, mode="wrap")
    return rho


def l1_distance(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    return float(integrate(grid, np.abs(np.asarray(f) - np.asarray(g))))


@dataclass(frozen=True)
class FokkerPlanckResidual:
    field: np.ndarray
    l1: float


def fokker_planck_residual(snapshots, gauge: GaugeField, params: EdParams,
                           spacing: float) -> FokkerPlanckResidual:
    """Residual of ``d_t rho = -d_a(b^a rho) + (eta/2m) d_a d_a rho``.

    ``snapshots`` are three solver states ``spacing`` apart in time; drift
    and diffusion are evaluated at the middle one.  The diffusion term uses
    the same central stencil as the drift, which makes this residual agree
    with the continuity form to rounding error.
    """
    before, mid, after = snapshots
    grid = mid.grid
    rho = mid.density
    b = drift_velocity(mid, gauge, params)
    diffusion = divergence(grid, np.stack([gradient(grid, rho, a) for a in range(grid.dim)]))
    res = (after.density - before.density) / (2 * spacing) + divergence(grid, b * rho) \
        - params.eta / (2 * params.m) * diffusion
    return FokkerPlanckResidual(res, float(integrate(grid, np.abs(res))))
