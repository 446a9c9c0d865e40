"""Riesz potential, Strang integrator, initial data and scaling."""

import math

import numpy as np
import pytest
from scipy import integrate

from hartree.dynamics import (
    IntegratorBreakdown,
    SimConfig,
    StrangStepper,
    evolve,
    hartree_nonlinearity,
    make_initial_data,
    riesz_constant,
    riesz_potential,
    scale_field,
    step_strang,
)
from hartree.imethod import energy, mass
from hartree.spectral import ComplexField, GridSpec, field_from_function, plane_wave, sobolev_norm

from oracles import RIESZ_C3_QUADRATURE, riesz_direct


def rel(a, b):
    return np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b))


def density(grid, fn):
    return field_from_function(grid, lambda *x: fn(*x) + 0j)


class TestRieszConstant:
    def test_against_kernel_quadrature(self):
        assert riesz_constant(3) == pytest.approx(RIESZ_C3_QUADRATURE, rel=1e-9)

    @pytest.mark.parametrize("n", [3, 4, 5, 6])
    def test_gaussian_pairing(self, n):
        # <|x|^-2, e^{-|x|^2/2}> computed in x and in xi fixes c_n
        radial = integrate.quad(lambda r: r ** (n - 3) * math.exp(-r * r / 2), 0, np.inf)[0]
        assert riesz_constant(n) == pytest.approx((2 * math.pi) ** (n / 2) * radial, rel=1e-10)

    def test_low_dimension_rejected(self):
        with pytest.raises(ValueError):
            riesz_constant(2)


class TestRieszPotential:
    def test_constant_density_gives_zero(self):
        g = GridSpec(3, 8, 4.0)
        V = riesz_potential(density(g, lambda x, y, z: 2.0 + 0 * x))
        assert np.abs(V.values).max() < 1e-12

    def test_single_cosine(self):
        g = GridSpec(3, 16, 2 * math.pi)
        rho = density(g, lambda x, y, z: 1 + 0.3 * np.cos(2 * x + y))
        V = riesz_potential(rho)
        expect = riesz_constant(3) / math.sqrt(5) * 0.3 * np.cos(2 * g.coords()[0] + g.coords()[1])
        assert np.abs(V.values - expect).max() < 1e-12

    def test_matches_direct_sum_small_grid(self):
        g = GridSpec(3, 8, 6.0)
        rng = np.random.default_rng(5)
        rho = ComplexField(g, rng.random(g.shape))
        V = riesz_potential(rho).values
        ref = riesz_direct(rho.values, g)
        assert np.abs(V - ref).max() / np.abs(ref).max() < 1e-8

    def test_rejects_complex_density(self):
        g = GridSpec(3, 8, 1.0)
        with pytest.raises(ValueError, match="imaginary residue"):
            riesz_potential(ComplexField(g, np.full(g.shape, 1 + 1e-3j)))

    def test_rejects_low_dimension(self):
        with pytest.raises(ValueError):
            riesz_potential(ComplexField(GridSpec(2, 8, 1.0), np.ones((8, 8))))

    def test_nonlinearity_sign(self):
        g = GridSpec(3, 16, 8.0)
        phi = make_initial_data(g, "gaussian")
        plus = hartree_nonlinearity(phi, 1.0).values
        minus = hartree_nonlinearity(phi, -1.0).values
        assert np.abs(plus + minus).max() < 1e-14


class TestSimConfig:
    def test_horizon_must_be_multiple(self):
        with pytest.raises(ValueError, match="integer multiple"):
            SimConfig(1, GridSpec(3, 8, 8.0), 0.3, 1.0)

    def test_sign(self):
        with pytest.raises(ValueError):
            SimConfig(2, GridSpec(3, 8, 8.0), 0.1, 1.0)

    def test_phase_wrap(self):
        with pytest.raises(ValueError, match="2\\*pi"):
            SimConfig(1, GridSpec(3, 64, 1.0), 0.1, 1.0)

    def test_steps(self):
        assert SimConfig(1, GridSpec(3, 8, 8.0), 0.01, 0.5).steps == 50


class TestIntegrator:
    g = GridSpec(3, 16, 8.0)

    def test_plane_wave_dispersion(self):
        mode = (1, 2, 0)
        pw = plane_wave(self.g, mode, 0.7)
        xi2 = (2 * math.pi / self.g.L) ** 2 * 5
        for mu in (-1, 0, 1):
            cfg = SimConfig(mu, self.g, 0.01, 0.5)
            out = evolve(cfg, pw, keep_states=False).final
            assert rel(out.values, pw.values * np.exp(-0.5j * xi2 * 0.5)) < 1e-12

    def test_gauge_covariance(self):
        phi = make_initial_data(self.g, "gaussian", {"boost": [0.5, 0, 0]})
        cfg = SimConfig(1, self.g, 0.01, 0.3)
        a = evolve(cfg, phi, keep_states=False).final
        b = evolve(cfg, phi * np.exp(0.7j), keep_states=False).final
        assert rel(b.values, a.values * np.exp(0.7j)) < 1e-12

    def test_time_reversal(self):
        phi = make_initial_data(self.g, "gaussian", {"boost": [0.3, -0.2, 0.1]})
        cfg = SimConfig(1, self.g, 0.01, 0.5)
        fwd = evolve(cfg, phi, keep_states=False).final
        back = evolve(cfg, ComplexField(self.g, np.conj(fwd.values)), keep_states=False).final
        assert rel(np.conj(back.values), phi.values) < 1e-12

    def test_mass_conserved(self):
        phi = make_initial_data(self.g, "gaussian", {"amplitude": 1.5})
        traj = evolve(SimConfig(1, self.g, 0.01, 0.5, sample_every=5), phi, {"m": lambda s, t, f: mass(f)})
        m = np.array(traj.column("m"))
        assert np.abs(m - m[0]).max() / m[0] < 1e-12

    def test_energy_second_order(self):
        phi = make_initial_data(self.g, "gaussian", {"boost": [0.5, 0, 0]})
        drifts = []
        for dt in (0.02, 0.01):
            traj = evolve(SimConfig(1, self.g, dt, 0.4, sample_every=int(0.04 / dt)), phi,
                          {"E": lambda s, t, f: energy(f).total}, keep_states=False)
            E = np.array(traj.column("E"))
            drifts.append(np.abs(E - E[0]).max())
        assert 3 <= drifts[0] / drifts[1] <= 5

    def test_step_strang_matches_stepper(self):
        phi = make_initial_data(self.g, "gaussian")
        one = step_strang(phi, 0.01, 1.0)
        two = StrangStepper(self.g, 0.01, 1.0).advance(phi.values, 1)
        assert rel(one.values, two) < 1e-14

    def test_sampling_and_final_step(self):
        phi = make_initial_data(self.g, "gaussian")
        traj = evolve(SimConfig(1, self.g, 0.01, 0.25, sample_every=10), phi)
        assert traj.steps == [0, 10, 20, 25]
        assert traj.times[-1] == pytest.approx(0.25)
        assert len(traj.states) == 4

    def test_split_run_is_bitwise(self):
        phi = make_initial_data(self.g, "gaussian", {"boost": [0.4, 0, 0]})
        cfg = SimConfig(1, self.g, 0.01, 0.4, sample_every=10)
        whole = evolve(cfg, phi, keep_states=False).final
        half = evolve(cfg, phi, keep_states=False, stop_step=20).final
        rest = evolve(cfg, half, keep_states=False, start_step=20).final
        assert np.array_equal(whole.values, rest.values)

    def test_grid_mismatch(self):
        phi = make_initial_data(GridSpec(3, 8, 8.0), "gaussian")
        with pytest.raises(ValueError):
            evolve(SimConfig(1, self.g, 0.01, 0.1), phi)


class TestBreakdown:
    g = GridSpec(3, 32, 16.0)

    def test_focusing_collapse_aborts(self):
        phi = make_initial_data(self.g, "gaussian", {"amplitude": 5.0})
        with pytest.raises(IntegratorBreakdown, match="integrator breakdown") as info:
            evolve(SimConfig(-1, self.g, 0.01, 1.0), phi, keep_states=False)
        assert info.value.step > 0
        assert info.value.trajectory.steps == [0]

    def test_same_data_defocusing_survives(self):
        phi = make_initial_data(self.g, "gaussian", {"amplitude": 5.0})
        traj = evolve(SimConfig(1, self.g, 0.01, 0.2), phi, keep_states=False)
        assert traj.steps[-1] == 20

    def test_mass_reference_mismatch_aborts(self):
        phi = make_initial_data(self.g, "gaussian")
        with pytest.raises(IntegratorBreakdown, match="mass drift"):
            evolve(SimConfig(1, self.g, 0.01, 0.1), phi, mass_ref=1.01 * mass(phi))


class TestInitialData:
    g = GridSpec(3, 32, 16.0)

    def test_gaussian_mass(self):
        phi = make_initial_data(self.g, "gaussian", {"amplitude": 2.0, "sigma": 1.2})
        assert mass(phi) == pytest.approx(4 * math.pi**1.5 * 1.2**3, rel=1e-10)

    def test_rough_target_norm(self):
        phi = make_initial_data(self.g, "rough_Hs", {"s": 0.6, "target": 3.0}, seed=2)
        assert sobolev_norm(phi, 0.6) == pytest.approx(3.0, rel=1e-12)

    def test_rough_seeded(self):
        a = make_initial_data(self.g, "rough_Hs", {"s": 0.6}, seed=2)
        b = make_initial_data(self.g, "rough_Hs", {"s": 0.6}, seed=2)
        c = make_initial_data(self.g, "rough_Hs", {"s": 0.6}, seed=3)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_rough_data_not_smoother(self):
        # |phi|_{H^{s+1/2}} / |phi|_{H^s} keeps growing as resolution increases
        ratios = []
        for M in (16, 32, 64):
            phi = make_initial_data(GridSpec(3, M, 16.0), "rough_Hs", {"s": 0.8}, seed=0)
            ratios.append(sobolev_norm(phi, 1.3) / sobolev_norm(phi, 0.8))
        assert ratios[0] < ratios[1] < ratios[2]
        assert ratios[2] / ratios[1] > 1.2

    def test_unknown_parameter(self):
        with pytest.raises(ValueError, match="unknown parameters"):
            make_initial_data(self.g, "gaussian", {"width": 1.0})

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_initial_data(self.g, "soliton")


class TestScaling:
    def test_linear_flow_exact(self):
        g = GridSpec(3, 32, 16.0)
        phi = make_initial_data(g, "gaussian", {"sigma": 1.0, "boost": [0.5, 0, 0]})
        big = scale_field(phi, 2.0)
        assert big.grid == GridSpec(3, 64, 32.0)
        assert mass(big) == pytest.approx(mass(phi), rel=1e-12)
        a = evolve(SimConfig(0, g, 0.01, 0.2), phi, keep_states=False).final
        b = evolve(SimConfig(0, big.grid, 0.04, 0.8), big, keep_states=False).final
        assert rel(b.values, scale_field(a, 2.0).values) < 1e-12

    def test_same_grid_resample_preserves_mass(self):
        g = GridSpec(3, 64, 32.0)
        phi = make_initial_data(g, "gaussian", {"sigma": 2.0})
        small = scale_field(phi, 0.5, matched=False)
        assert mass(small) == pytest.approx(mass(phi), rel=1e-9)
        back = scale_field(small, 2.0, matched=False)
        assert rel(back.values, phi.values) < 1e-8  # sigma=1 aliasing at h=0.5 is ~e^{-2 pi^2}

    def test_escape_detected(self):
        g = GridSpec(3, 16, 8.0)
        phi = make_initial_data(g, "gaussian", {"sigma": 1.0})
        with pytest.raises(ValueError, match="escapes the box"):
            scale_field(phi, 4.0, matched=False)

    def test_nondyadic_matched_rejected(self):
        phi = make_initial_data(GridSpec(3, 16, 8.0), "gaussian")
        with pytest.raises(ValueError, match="dyadic"):
            scale_field(phi, 3.0, matched=True)
