from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edpauli.errors import NumericalError, StructuralError
from edpauli.grid import EdParams, GaugeField, Grid, SpinorField, integrate
from edpauli.pauli import (
    HamiltonianSpec,
    PotentialKernel,
    apply_hamiltonian,
    continuity_residual,
    energy,
    evolve,
    expectation,
    momentum,
    pauli_coupling_from_B,
    position_moments,
    step,
)
from edpauli.sampler import fokker_planck_residual

GRID = Grid((48,), (8.0,))
GRID2 = Grid((12, 10), (3.0, 2.5))


def random_psi(grid, rng):
    shape = (2, *grid.shape)
    return SpinorField(grid, rng.normal(size=shape) + 1j * rng.normal(size=shape))


def random_spec(grid, rng, params=None):
    params = params or EdParams(m=1.4, hbar=0.9, beta=0.7)
    A = rng.normal(size=(grid.dim, *grid.shape))
    kernel = PotentialKernel(rng.normal(size=grid.shape), rng.normal(size=(3, *grid.shape)))
    return HamiltonianSpec(params, GaugeField(grid, A=A), kernel)


class TestApplyHamiltonian:
    @pytest.mark.parametrize("mode", [1, 4, 11])
    def test_discrete_dispersion(self, mode):
        params = EdParams(hbar=1.2, m=0.8)
        H = HamiltonianSpec.free(params, GRID)
        k = 2 * np.pi * mode / GRID.extents[0]
        h = GRID.spacing[0]
        psi = SpinorField(GRID, np.stack([np.exp(1j * k * GRID.coords[0]), np.zeros(48)]))
        E = params.hbar**2 / (2 * params.m) * (2 - 2 * np.cos(k * h)) / h**2
        assert np.max(np.abs(apply_hamiltonian(H, psi).values - E * psi.values)) < 1e-12
        assert energy(H, psi.normalized()) == pytest.approx(E, rel=1e-12)

    def test_V0_constant(self):
        c0 = 2.5
        H = HamiltonianSpec.free(EdParams(), GRID).with_potential(PotentialKernel.uniform(GRID, c0))
        psi = SpinorField.uniform(GRID, (1, 0))
        assert np.allclose(apply_hamiltonian(H, psi).values, c0 * psi.values, atol=1e-13)
        assert energy(H, psi) == pytest.approx(c0, rel=1e-13)

    @pytest.mark.parametrize("spinor, sign", [((1, 0), 1), ((0, 1), -1)])
    def test_sigma3_eigenstates(self, spinor, sign):
        v = 0.7
        H = HamiltonianSpec.free(EdParams(), GRID).with_potential(PotentialKernel.uniform(GRID, 0, (0, 0, v)))
        psi = SpinorField.uniform(GRID, spinor)
        assert np.allclose(apply_hamiltonian(H, psi).values, sign * v * psi.values, atol=1e-13)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([GRID, GRID2]))
    def test_hermitian(self, seed, grid):
        rng = np.random.default_rng(seed)
        H = random_spec(grid, rng)
        p1, p2 = random_psi(grid, rng), random_psi(grid, rng)
        lhs = expectation(p1, apply_hamiltonian(H, p2).values)
        rhs = np.conj(expectation(p2, apply_hamiltonian(H, p1).values))
        assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))
        assert abs(np.imag(expectation(p1, apply_hamiltonian(H, p1).values))) < 1e-10 * (1 + abs(lhs))

    def test_linear(self):
        rng = np.random.default_rng(0)
        H = random_spec(GRID2, rng)
        p1, p2 = random_psi(GRID2, rng), random_psi(GRID2, rng)
        a, b = 0.3 - 1.1j, 2.0
        lhs = apply_hamiltonian(H, p1 * a + p2 * b).values
        rhs = a * apply_hamiltonian(H, p1).values + b * apply_hamiltonian(H, p2).values
        assert np.max(np.abs(lhs - rhs)) < 1e-11

    def test_grid_mismatch(self):
        H = HamiltonianSpec.free(EdParams(), GRID)
        with pytest.raises(StructuralError):
            apply_hamiltonian(H, SpinorField.uniform(GRID2, (1, 0)))

    def test_potential_shape(self):
        with pytest.raises(StructuralError):
            HamiltonianSpec(EdParams(), GaugeField.zeros(GRID), PotentialKernel.zeros(GRID2))

    def test_spectral_needs_trivial_A(self):
        with pytest.raises(StructuralError):
            HamiltonianSpec(EdParams(), GaugeField.uniform(GRID, A=[0.2]), PotentialKernel.zeros(GRID), "spectral")

    @pytest.mark.parametrize("mode", [1, 5, 20])
    def test_spectral_dispersion(self, mode):
        H = HamiltonianSpec.free(EdParams(), GRID, kinetic="spectral")
        k = 2 * np.pi * mode / GRID.extents[0]
        psi = SpinorField(GRID, np.stack([np.exp(1j * k * GRID.coords[0]), np.zeros(48)]))
        assert np.max(np.abs(apply_hamiltonian(H, psi).values - 0.5 * k**2 * psi.values)) < 1e-11


class TestPauliCoupling:
    def test_zero_field(self):
        k = pauli_coupling_from_B(EdParams(), np.zeros((3, *GRID.shape)))
        assert not np.any(k.Vvec) and not np.any(k.V0)

    def test_reduced_units(self):
        B0 = 1.7
        k = pauli_coupling_from_B(EdParams(), GaugeField.uniform(GRID, B=[0, 0, B0]))
        assert np.allclose(k.Vvec[2], -B0 / 2) and not np.any(k.Vvec[:2])

    def test_aligned_moment_is_lower(self):
        params = EdParams(hbar=1.3, m=0.9, beta=0.6)
        B0 = 2.0
        H = HamiltonianSpec.point_particle(params, GaugeField.uniform(GRID, B=[0, 0, B0]))
        E_up = energy(H, SpinorField.uniform(GRID, (1, 0)))
        assert E_up == pytest.approx(-params.hbar * params.beta * B0 / (2 * params.m), rel=1e-12)
        assert energy(H, SpinorField.uniform(GRID, (0, 1))) == pytest.approx(-E_up, rel=1e-12)


class TestStep:
    def test_zero_hamiltonian(self):
        H = HamiltonianSpec.free(EdParams(), GRID)
        psi = SpinorField.uniform(GRID, (0.6, 0.8j))
        assert np.allclose(step(H, psi).values, psi.values, atol=1e-15)
        assert step(H, psi, dt=0.0) is psi

    def test_norm_and_energy_1000_steps(self):
        g = Grid((128,), (20.0,))
        params = EdParams(dt=0.01)
        H = HamiltonianSpec.free(params, g)
        psi = SpinorField.gaussian(g, -2.0, 1.0, 1.5, (1, 1j))
        E0 = energy(H, psi)
        for _, psi in evolve(H, psi, 1000):
            pass
        assert abs(1 - psi.norm()) < 1e-10
        assert abs(energy(H, psi) - E0) / abs(E0) < 1e-8

    def test_norm_general_spec(self):
        rng = np.random.default_rng(2)
        H = random_spec(GRID2, rng, EdParams(dt=0.02))
        psi = random_psi(GRID2, rng).normalized()
        for _, psi in evolve(H, psi, 200):
            pass
        assert abs(1 - psi.norm()) < 1e-10

    def test_linear(self):
        rng = np.random.default_rng(3)
        H = random_spec(GRID, rng, EdParams(dt=0.05))
        p1, p2 = random_psi(GRID, rng), random_psi(GRID, rng)
        a, b = 1.5j, -0.4
        lhs = step(H, p1 * a + p2 * b).values
        rhs = a * step(H, p1).values + b * step(H, p2).values
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * np.max(np.abs(rhs))

    def test_negative_dt_inverts(self):
        rng = np.random.default_rng(4)
        H = random_spec(GRID, rng, EdParams(dt=0.05))
        psi = random_psi(GRID, rng)
        back = step(H, step(H, psi), dt=-0.05)
        assert np.max(np.abs(back.values - psi.values)) < 1e-10

    def test_time_dependent_midpoint(self):
        seen = []

        def potential(t):
            seen.append(t)
            return PotentialKernel.uniform(GRID, np.sin(t))

        H = HamiltonianSpec.free(EdParams(), GRID).with_potential(potential)
        assert H.time_dependent
        step(H, SpinorField.uniform(GRID, (1, 0)), dt=0.1, t=1.0)
        assert seen == [pytest.approx(1.05)]

    def test_solver_failure(self):
        rng = np.random.default_rng(5)
        H = random_spec(Grid((64,), (4.0,)), rng, EdParams(dt=1.0))
        with pytest.raises(NumericalError) as info:
            step(H, random_psi(H.grid, rng), maxiter=1, tol=1e-15)
        assert info.value.residual > 1e-15

    def test_free_packet_variance(self):
        g = Grid((512,), (24.0,))
        params = EdParams(dt=0.005)
        H = HamiltonianSpec.free(params, g)
        s0 = 1.0
        psi = SpinorField.gaussian(g, 0.0, s0, 0.0)
        worst = 0.0
        for n, (t, psi) in enumerate(evolve(H, psi, 700)):
            if n % 50 == 49:
                _, var = position_moments(psi)
                exact = s0**2 + (t / (2 * s0)) ** 2
                worst = max(worst, abs(var[0] / exact - 1))
        assert worst < 1e-3
        assert np.sqrt(var[0]) / s0 > 2

    def test_larmor_closed_form(self):
        params = EdParams(dt=0.01)
        B0 = 1.0
        H = HamiltonianSpec.point_particle(params, GaugeField.uniform(GRID, B=[0, 0, B0]))
        psi = SpinorField.uniform(GRID, (1, 1))
        omega = params.beta * B0 / params.m
        for t, psi in evolve(H, psi, 300):
            up, dn = psi.values[0, 0], psi.values[1, 0]
            s1 = 2 * np.real(np.conj(up) * dn) * GRID.volume
            s2 = 2 * np.imag(np.conj(up) * dn) * GRID.volume
            assert abs(s1 - np.cos(omega * t)) < 1e-10
            assert abs(s2 + np.sin(omega * t)) < 1e-10

    def test_momentum_of_plane_wave(self):
        k = 2 * np.pi * 3 / GRID.extents[0]
        psi = SpinorField(GRID, np.stack([np.exp(1j * k * GRID.coords[0]), np.zeros(48)])).normalized()
        h = GRID.spacing[0]
        assert momentum(psi, 1.0)[0] == pytest.approx(np.sin(k * h) / h, rel=1e-12)


class TestMarginalIndependence:
    def test_uniform_Vvec_leaves_rho_x(self):
        g = Grid((128,), (20.0,))
        x = g.coords[0]
        v = np.stack([np.exp(-((x + 1) ** 2)) * np.exp(1j * x), 0.7 * np.exp(-((x - 2) ** 2) / 2)])
        psi = SpinorField(g, v).normalized()
        H0 = HamiltonianSpec.free(EdParams(dt=0.01), g)
        H1 = H0.with_potential(PotentialKernel.uniform(g, 0.0, (0.3, -0.2, 0.5)))
        a = b = psi
        worst = 0.0
        for _ in range(200):
            a, b = step(H0, a), step(H1, b)
            worst = max(worst, np.max(np.abs(a.density - b.density)))
        assert worst < 1e-9
        # the spinor itself does change
        assert np.max(np.abs(a.values - b.values)) > 1e-2


def moving_packet(n, L=20.0):
    g = Grid((n,), (L,))
    return g, SpinorField.gaussian(g, -1.0, 1.0, 1.0, (1, 0))


class TestContinuity:
    def test_stationary_eigenstate(self):
        g = Grid((64,), (12.0,))
        params = EdParams(dt=0.01)
        x = g.coords[0]
        h = g.spacing[0]
        V = 0.5 * x**2
        lap = (np.diag(-2 * np.ones(64)) + np.diag(np.ones(63), 1) + np.diag(np.ones(63), -1)) / h**2
        lap[0, -1] = lap[-1, 0] = 1 / h**2
        _, vecs = np.linalg.eigh(-0.5 * lap + np.diag(V))
        ground = vecs[:, 0] / np.sqrt(h)
        psi = SpinorField(g, np.stack([0.6 * ground, 0.8 * ground]))
        H = HamiltonianSpec.free(params, g).with_potential(PotentialKernel(V, np.zeros((3, 64))))
        assert continuity_residual(H, psi).l1 < 1e-8

    def test_second_order(self):
        res = []
        for n, dt in [(64, 0.02), (128, 0.01), (256, 0.005)]:
            g, psi = moving_packet(n)
            H = HamiltonianSpec.free(EdParams(dt=dt), g)
            res.append(continuity_residual(H, psi).l1)
        ratios = [res[0] / res[1], res[1] / res[2]]
        assert all(3.0 < r < 5.0 for r in ratios), (res, ratios)

    def test_uniform_B_unchanged(self):
        g, _ = moving_packet(128)
        psi = SpinorField.gaussian(g, -1.0, 1.0, 1.0, (1, 1))
        params = EdParams(dt=0.01)
        free = continuity_residual(HamiltonianSpec.free(params, g), psi)
        with_B = continuity_residual(HamiltonianSpec.point_particle(params, GaugeField.uniform(g, B=[0, 0, 2.0])), psi)
        assert np.max(np.abs(free.field - with_B.field)) < 1e-9

    def test_matches_fokker_planck(self):
        g, psi = moving_packet(128)
        params = EdParams(dt=0.01, eta=0.37)
        H = HamiltonianSpec.free(params, g)
        cont = continuity_residual(H, psi)
        snaps = (step(H, psi, -0.005), psi, step(H, psi, 0.005))
        fp = fokker_planck_residual(snaps, H.gauge, params, 0.005)
        assert np.max(np.abs(fp.field - cont.field)) < 1e-10
        assert abs(fp.l1 - cont.l1) < 1e-10

    def test_integrates_to_zero(self):
        g, psi = moving_packet(128)
        r = continuity_residual(HamiltonianSpec.free(EdParams(), g), psi)
        assert abs(integrate(g, r.field)) < 1e-10
