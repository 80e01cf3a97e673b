from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edpauli.errors import ContractError, DomainError, StructuralError
from edpauli.grid import EdParams, GaugeField, Grid, SpinorField, gradient, integrate
from edpauli.pauli import HamiltonianSpec, PotentialKernel, continuity_residual, step
from edpauli.sampler import (
    TrajectoryEnsemble,
    conditional_probabilities,
    current_velocity,
    density_estimate,
    drift_velocity,
    effective_phase_gradient,
    fokker_planck_residual,
    l1_distance,
    live_mask,
    osmotic_velocity,
    resample_k,
    sample_step,
    step_moments,
)

GRID = Grid((64,), (8.0,))
GRID2 = Grid((16, 12), (4.0, 3.0))


def plane_wave(grid, mode, spinor=(1, 0)):
    k = 2 * np.pi * mode / grid.extents[0]
    c = np.asarray(spinor, complex).reshape(2, 1)
    return SpinorField(grid, c * np.exp(1j * k * grid.coords[0])), k


def real_gaussian(grid, params):
    return SpinorField.gaussian(grid, 0.3, 0.9, 0.0, (0.6, 0.8), params.hbar)


def random_psi(grid, rng):
    shape = (2, *grid.shape)
    # keep amplitudes away from zero so every node is live
    amp = 0.5 + rng.random(shape)
    return SpinorField(grid, amp * np.exp(1j * rng.uniform(0, 2 * np.pi, shape)))


class TestVelocities:
    def test_plane_wave_phase_gradient(self):
        params = EdParams(hbar=0.7, eta=2.0)
        psi, k = plane_wave(GRID, 3)
        h = GRID.spacing[0]
        g = effective_phase_gradient(psi, params)
        assert np.allclose(g[0], params.hbar * np.sin(k * h) / h, rtol=1e-12, atol=0)
        # continuum momentum up to the O(h^2) stencil error
        assert np.allclose(g[0], params.hbar * k, rtol=(k * h) ** 2 / 6 * 1.01)

    def test_real_gaussian_phase_gradient(self):
        params = EdParams(eta=1.7)
        psi = real_gaussian(GRID, params)
        rho = psi.density
        expected = 0.5 * params.eta * gradient(GRID, rho, 0) / rho
        assert np.allclose(effective_phase_gradient(psi, params)[0], expected, atol=1e-12)

    def test_opposite_phases_cancel(self):
        k = 2 * np.pi * 2 / GRID.extents[0]
        x = GRID.coords[0]
        psi = SpinorField(GRID, np.stack([np.exp(1j * k * x), np.exp(-1j * k * x)]) / np.sqrt(2))
        assert np.max(np.abs(effective_phase_gradient(psi, EdParams()))) < 1e-12

    def test_plane_wave_velocities(self):
        params = EdParams(m=1.6, hbar=0.9)
        psi, k = plane_wave(GRID, 2, (0.6, 0.8))
        h = GRID.spacing[0]
        p = params.hbar * np.sin(k * h) / h
        gauge = GaugeField.zeros(GRID)
        assert np.allclose(drift_velocity(psi, gauge, params), p / params.m, rtol=1e-12)
        assert np.allclose(current_velocity(psi, gauge, params), p / params.m, rtol=1e-12)

    def test_real_gaussian_velocities(self):
        params = EdParams(m=0.8, eta=1.3)
        psi = real_gaussian(GRID, params)
        gauge = GaugeField.zeros(GRID)
        b = drift_velocity(psi, gauge, params)
        assert np.allclose(b, osmotic_velocity(psi, params), atol=1e-12)
        assert np.max(np.abs(current_velocity(psi, gauge, params))) < 1e-12

    def test_uniform_A(self):
        params = EdParams(m=2.0, beta=0.5)
        A0 = 0.8
        psi = SpinorField.uniform(GRID2, (1, 1j))
        b = drift_velocity(psi, GaugeField.uniform(GRID2, A=[A0, 0.0]), params)
        assert np.allclose(b[0], -params.beta * A0 / params.m, atol=1e-14)
        assert np.allclose(b[1], 0, atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([GRID, GRID2]))
    def test_two_formula_current(self, seed, grid):
        rng = np.random.default_rng(seed)
        params = EdParams(m=1.3, hbar=0.8, eta=2.1, beta=0.6)
        psi = random_psi(grid, rng)
        gauge = GaugeField(grid, A=rng.normal(size=(grid.dim, *grid.shape)))
        v = current_velocity(psi, gauge, params)
        # independent route: per-component phase gradients, then the k-average
        rho_k = np.abs(psi.values) ** 2
        cond = rho_k / rho_k.sum(axis=0)
        A_node = gauge.node_vector_potential()
        for a in range(grid.dim):
            dxi = params.hbar * np.imag(np.conj(psi.values) * gradient(grid, psi.values, a)) / rho_k
            expected = ((cond * dxi).sum(axis=0) - params.beta * A_node[a]) / params.m
            assert np.max(np.abs(v[a] - expected)) < 1e-10

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
    def test_eta_invariance(self, seed, eta):
        rng = np.random.default_rng(seed)
        psi = random_psi(GRID2, rng)
        gauge = GaugeField(GRID2, A=rng.normal(size=(2, *GRID2.shape)))
        v1 = current_velocity(psi, gauge, EdParams(eta=eta))
        v10 = current_velocity(psi, gauge, EdParams(eta=10 * eta))
        assert np.max(np.abs(v1 - v10)) < 1e-12 * (1 + np.max(np.abs(v1)))

    def test_dead_zone(self):
        v = np.zeros((2, 64), complex)
        v[0, 20:40] = 1.0
        psi = SpinorField(GRID, v)
        live = live_mask(psi)
        assert live[25] and not live[5]
        b = drift_velocity(psi, GaugeField.zeros(GRID), EdParams())
        assert np.all(np.isfinite(b)) and np.all(b[:, ~live] == 0)

    def test_conditional_probabilities(self):
        v = np.zeros((2, 64), complex)
        v[0, :10] = 0.6
        v[1, :10] = 0.8
        p = conditional_probabilities(SpinorField(GRID, v))
        assert np.allclose(p[:, :10], [[0.36], [0.64]])
        assert np.allclose(p[:, 10:], 0.5)


def ensemble(grid, N, seed=0, **kw):
    return TrajectoryEnsemble.from_density(grid, np.ones(grid.shape), N, seed, **kw)


class TestSampleStep:
    def test_zero_drift_covariance(self):
        params = EdParams(m=1.5, eta=0.9, dt=0.01)
        psi = SpinorField.uniform(GRID2, (1, 0))
        N = 10**6
        ens = sample_step(ensemble(GRID2, N, seed=11), psi, GaugeField.zeros(GRID2), params)
        mom = step_moments(ens)
        s2 = params.eta * params.dt / params.m
        se_var = s2 * np.sqrt(2 / N)
        assert np.all(np.abs(np.diag(mom.cov) - s2) < 3 * se_var)
        assert abs(mom.cov[0, 1]) < 3 * s2 / np.sqrt(N)
        assert np.all(np.abs(mom.mean) < 3 * np.sqrt(s2 / N))
        assert np.allclose(mom.cov, mom.cov.T)
        assert np.all(np.linalg.eigvalsh(mom.cov) >= 0)

    def test_uniform_drift_mean(self):
        params = EdParams(m=1.2, eta=0.5, dt=0.02)
        psi, _ = plane_wave(GRID, 3)
        b = drift_velocity(psi, GaugeField.zeros(GRID), params)[0, 0]
        N = 200_000
        ens = sample_step(ensemble(GRID, N, seed=5), psi, GaugeField.zeros(GRID), params)
        mom = step_moments(ens)
        se = np.sqrt(params.eta * params.dt / params.m / N)
        assert abs(mom.mean[0] - b * params.dt) < 3 * se

    def test_dt_scaling(self):
        psi, _ = plane_wave(GRID, 2)
        gauge = GaugeField.zeros(GRID)
        start = ensemble(GRID, 50_000, seed=9)
        full = step_moments(sample_step(start, psi, gauge, EdParams(dt=0.02)))
        half = step_moments(sample_step(start, psi, gauge, EdParams(dt=0.01)))
        # the same normal draws feed both steps: the variance ratio is exact,
        # the means differ only through (sqrt(2) - 2) s_half * mean(noise)
        s_half = np.sqrt(0.01)
        se = (2 - np.sqrt(2)) * s_half / np.sqrt(50_000)
        assert abs(full.mean[0] - 2 * half.mean[0]) < 3 * se
        assert full.cov[0, 0] / half.cov[0, 0] == pytest.approx(2, rel=1e-12)

    def test_wrapped_and_advanced(self):
        params = EdParams(dt=0.5, eta=4.0)
        psi, _ = plane_wave(GRID, 5)
        ens = sample_step(ensemble(GRID, 5000, seed=1), psi, GaugeField.zeros(GRID), params)
        lo = GRID.origin[0]
        assert np.all((ens.positions >= lo) & (ens.positions < lo + GRID.extents[0]))
        assert ens.time == 0.5 and ens.step_index == 1

    def test_deterministic(self):
        psi = SpinorField.gaussian(GRID, 0.0, 1.0, 0.7)
        gauge = GaugeField.zeros(GRID)
        runs = []
        for _ in range(2):
            ens = TrajectoryEnsemble.from_density(GRID, psi.density, 70_000, seed=42)
            for _ in range(3):
                ens = sample_step(ens, psi, gauge, EdParams())
            runs.append(ens.positions.copy())
        assert np.array_equal(runs[0], runs[1])

    def test_thread_count_does_not_change_paths(self, monkeypatch):
        psi = SpinorField.gaussian(GRID, 0.0, 1.0, 0.7)
        gauge = GaugeField.zeros(GRID)
        out = []
        for threads in ("1", "4"):
            monkeypatch.setenv("EDPAULI_THREADS", threads)
            ens = TrajectoryEnsemble.from_density(GRID, psi.density, 100_000, seed=7)
            out.append(sample_step(ens, psi, gauge, EdParams()).positions.copy())
        assert np.array_equal(out[0], out[1])

    def test_seed_matters(self):
        psi = SpinorField.uniform(GRID, (1, 0))
        a = sample_step(ensemble(GRID, 100, seed=1), psi, GaugeField.zeros(GRID), EdParams())
        b = sample_step(ensemble(GRID, 100, seed=2), psi, GaugeField.zeros(GRID), EdParams())
        assert not np.array_equal(a.positions, b.positions)

    def test_grid_mismatch(self):
        with pytest.raises(StructuralError):
            sample_step(ensemble(GRID, 10), SpinorField.uniform(GRID2, (1, 0)), GaugeField.zeros(GRID), EdParams())

    def test_empty_density(self):
        with pytest.raises(DomainError):
            TrajectoryEnsemble.from_density(GRID, np.zeros(GRID.shape), 10)
        with pytest.raises(DomainError):
            TrajectoryEnsemble.from_density(GRID, np.ones(GRID.shape), 0)


class TestResampleK:
    def test_pure_up(self):
        ens = resample_k(ensemble(GRID, 1000, k_labels=True), SpinorField.uniform(GRID, (1, 0)))
        assert np.all(ens.k_labels == 1)

    def test_equal_superposition(self):
        N = 100_000
        ens = resample_k(ensemble(GRID, N, seed=3, k_labels=True), SpinorField.uniform(GRID, (1, 1)))
        frac = np.mean(ens.k_labels == 1)
        assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / N)

    def test_disjoint_support(self):
        v = np.zeros((2, 64), complex)
        v[0, :32] = 1.0
        v[1, 32:] = 1.0
        psi = SpinorField(GRID, v)
        x = np.linspace(-3.5, -0.5, 50)
        x = np.concatenate([x, -x])
        ens = resample_k(TrajectoryEnsemble(GRID, x[:, None], k_labels=np.ones(100, int)), psi)
        assert np.all(ens.k_labels[:50] == 1) and np.all(ens.k_labels[50:] == -1)

    def test_positions_untouched(self):
        ens = ensemble(GRID, 100, k_labels=True)
        out = resample_k(ens, SpinorField.uniform(GRID, (1, 1)))
        assert np.array_equal(ens.positions, out.positions)

    def test_requires_labels(self):
        with pytest.raises(ContractError):
            resample_k(ensemble(GRID, 10), SpinorField.uniform(GRID, (1, 0)))

    def test_label_validation(self):
        with pytest.raises(StructuralError):
            TrajectoryEnsemble(GRID, np.zeros((3, 1)), k_labels=[1, 0, -1])


class TestDensityEstimate:
    def test_single_cell(self):
        ens = TrajectoryEnsemble(GRID2, np.zeros((500, 2)))
        rho = density_estimate(ens)
        i0 = tuple(int(round(-o / h)) for o, h in zip(GRID2.origin, GRID2.spacing))
        assert rho[i0] == pytest.approx(1 / GRID2.cell_volume)
        assert np.count_nonzero(rho) == 1

    def test_uniform(self):
        N = 200_000
        rho = density_estimate(ensemble(GRID, N, seed=4))
        flat = 1 / GRID.volume
        se = np.sqrt(flat / (N * GRID.cell_volume))
        assert np.max(np.abs(rho - flat)) < 5 * se
        assert integrate(GRID, rho) == pytest.approx(1, rel=1e-12)

    def test_gaussian_samples(self):
        g = Grid((128,), (20.0,))
        rng = np.random.default_rng(0)
        ens = TrajectoryEnsemble(g, rng.normal(0.5, 1.2, size=(100_000, 1)))
        x = g.coords[0]
        exact = np.exp(-((x - 0.5) ** 2) / (2 * 1.2**2)) / np.sqrt(2 * np.pi * 1.2**2)
        assert l1_distance(g, density_estimate(ens), exact) < 0.02

    def test_smoothing_keeps_mass(self):
        rho = density_estimate(ensemble(GRID2, 1000, seed=2), bandwidth=0.3)
        assert integrate(GRID2, rho) == pytest.approx(1, rel=1e-12)


def packet(n, L=20.0):
    g = Grid((n,), (L,))
    return g, SpinorField.gaussian(g, -1.0, 1.0, 1.0, (0.6, 0.8))


class TestFokkerPlanck:
    def test_stationary(self):
        g = Grid((64,), (8.0,))
        psi, _ = plane_wave(g, 2, (0.6, 0.8))
        H = HamiltonianSpec.free(EdParams(), g)
        snaps = (step(H, psi, -0.005), psi, step(H, psi, 0.005))
        assert fokker_planck_residual(snaps, H.gauge, H.params, 0.005).l1 < 1e-8

    @pytest.mark.parametrize("A0", [0.0, 0.4])
    def test_equals_continuity(self, A0):
        g, psi = packet(128)
        params = EdParams(dt=0.01, eta=2.5, beta=0.8)
        H = HamiltonianSpec(params, GaugeField.uniform(g, A=[A0]), PotentialKernel.zeros(g))
        snaps = (step(H, psi, -0.005), psi, step(H, psi, 0.005))
        fp = fokker_planck_residual(snaps, H.gauge, params, 0.005)
        cont = continuity_residual(H, psi)
        assert abs(fp.l1 - cont.l1) < 1e-10
        assert np.max(np.abs(fp.field - cont.field)) < 1e-10

    def test_second_order(self):
        res = []
        for n, dt in [(64, 0.02), (128, 0.01), (256, 0.005)]:
            g, psi = packet(n)
            H = HamiltonianSpec.free(EdParams(dt=dt), g)
            snaps = (step(H, psi, -dt / 2), psi, step(H, psi, dt / 2))
            res.append(fokker_planck_residual(snaps, H.gauge, H.params, dt / 2).l1)
        assert all(3.0 < res[i] / res[i + 1] < 5.0 for i in range(2)), res


def co_evolve(eta, N, steps, seed, n=128):
    g, psi = packet(n)
    params = EdParams(dt=0.005, eta=eta)
    H = HamiltonianSpec.free(params, g)
    ens = TrajectoryEnsemble.from_density(g, psi.density, N, seed)
    worst = 0.0
    for _ in range(steps):
        ens = sample_step(ens, psi, H.gauge, params)
        psi = step(H, psi)
        worst = max(worst, l1_distance(g, density_estimate(ens), psi.density))
    return g, worst, density_estimate(ens), psi.density


class TestEnsemble:
    def test_tracks_density(self):
        _, worst, _, _ = co_evolve(1.0, 50_000, 100, seed=1)
        assert worst < 0.04

    def test_eta_invariant_marginal(self):
        g, w1, d1, rho = co_evolve(1.0, 50_000, 100, seed=1)
        _, w10, d10, _ = co_evolve(10.0, 50_000, 100, seed=2)
        _, _, d1b, _ = co_evolve(1.0, 50_000, 100, seed=3)
        assert w1 < 0.04 and w10 < 0.04
        noise = l1_distance(g, d1, d1b)
        # eta and 10 eta differ by no more than two independent eta runs, up to 50% slack
        assert l1_distance(g, d1, d10) < 1.5 * noise
