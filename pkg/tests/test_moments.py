"""Moment engine: raw alpha moments, distortion moments, system indices."""

import math

import numpy as np
import pytest
from scipy import integrate, special

from harmfilt.fundamental_pf import solve_power_flow
from harmfilt.grid_model import AlphaDistribution
from harmfilt.harmonic_matrix import InjectionBasis, build_injection_basis
from harmfilt.moments import (
    AlphaMoments,
    alpha_moments,
    build_alpha_moments,
    distortion_stats,
    expected_vihd2,
    sihd_stats,
    sthd_stats,
    var_vihd2,
    vthd2_stats,
)
from harmfilt.scenario import BASE_SCENARIO


def synthetic_basis(u_cols: np.ndarray, theta_cols: np.ndarray, harmonics=(5,)):
    """Hand-built injection basis; injectors occupy the first columns."""
    n_rows, n_inj = u_cols.shape
    n = max(n_rows, n_inj)
    u = np.zeros((n, n))
    th = np.zeros((n, n))
    u[:n_rows, :n_inj] = u_cols
    th[:n_rows, :n_inj] = theta_cols
    return InjectionBasis(
        scenario_id="synthetic",
        u={h: u for h in harmonics},
        theta={h: th for h in harmonics},
        injector_idx=np.arange(n_inj),
        i1_mag=np.zeros(n),
    )


def moments_for(mu2, mu4, n):
    m2 = np.zeros(n)
    m4 = np.zeros(n)
    m2[: len(mu2)] = mu2
    m4[: len(mu4)] = mu4
    return AlphaMoments(mu2=m2, mu4=m4)


class TestAlphaMoments:
    def test_deterministic_point_mass(self):
        d = AlphaDistribution(mean=0.02, sd=0.0, support_max=0.08)
        mu2, mu4 = alpha_moments(d)
        assert mu2 == pytest.approx(0.02**2)
        assert mu4 == pytest.approx(0.02**4)

    def test_uniform_beta11(self):
        # beta(1,1) on [0,1]: mean 1/2, sd sqrt(1/12): raw moments 1/3, 1/5
        d = AlphaDistribution(mean=0.5, sd=math.sqrt(1.0 / 12.0), support_max=1.0)
        a, b = d.beta_shape()
        assert (a, b) == (pytest.approx(1.0), pytest.approx(1.0))
        mu2, mu4 = alpha_moments(d)
        assert mu2 == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert mu4 == pytest.approx(1.0 / 5.0, rel=1e-12)

    def test_catalog_row_vs_sampling_oracle(self):
        # Isc/IL < 20 row at h=5: mean 1.00%, sd 0.53%, support 2x2.0%
        d = AlphaDistribution(mean=0.0100, sd=0.0053, support_max=0.04)
        mu2, mu4 = alpha_moments(d)
        a, b = d.beta_shape()
        rng = np.random.default_rng(11)
        x = d.support_max * rng.beta(a, b, size=10**7)
        assert mu2 == pytest.approx(np.mean(x**2), rel=1e-3)
        assert mu4 == pytest.approx(np.mean(x**4), rel=1e-3)

    def test_jensen_guard(self):
        with pytest.raises(ValueError):
            AlphaMoments(mu2=np.array([1.0]), mu4=np.array([0.5]))


class TestExpectedVihd2:
    def test_single_injector(self):
        u = np.array([[0.3]])
        basis = synthetic_basis(u, np.zeros((1, 1)))
        mom = moments_for([0.02], [0.0008], 1)
        ev = expected_vihd2(basis, mom, 5)
        assert ev[0] == pytest.approx(0.3**2 * 0.02)

    def test_zero_u_gives_zero(self):
        basis = synthetic_basis(np.zeros((3, 2)), np.zeros((3, 2)))
        mom = moments_for([0.1, 0.1], [0.02, 0.02], 3)
        assert np.all(expected_vihd2(basis, mom, 5) == 0.0)


class TestVarVihd2:
    def test_deterministic_single_injector_zero_variance(self):
        a = 0.015
        u = np.array([[0.4]])
        basis = synthetic_basis(u, np.zeros((1, 1)))
        mom = moments_for([a**2], [a**4], 1)
        var, clamped = var_vihd2(basis, mom, 5)
        assert abs(var[0]) < 1e-14

    def test_two_equal_injectors_analytic(self):
        """Var[V^2] = 2 u^4 a^4 for two equal deterministic injectors."""
        u_val, a = 0.25, 0.02
        u = np.array([[u_val, u_val]])
        th = np.array([[0.3, 1.1]])
        basis = synthetic_basis(u, th)
        mom = moments_for([a**2] * 2, [a**4] * 2, 2)
        var, _ = var_vihd2(basis, mom, 5)
        assert var[0] == pytest.approx(2 * u_val**4 * a**4, rel=1e-12)

    def test_two_equal_injectors_quadrature_oracle(self):
        """Cross-check by direct integration over the phase difference.

        V^2 = u^2 a^2 (2 + 2 cos(d + phi1 - phi2)); integrating over the
        uniform phases gives E and Var independently of the engine."""
        u_val, a, d = 0.25, 0.02, 0.8

        def v2(phi):
            return (u_val * a) ** 2 * (2.0 + 2.0 * np.cos(d + phi))

        mean, _ = integrate.quad(lambda p: v2(p) / (2 * np.pi), 0, 2 * np.pi)
        second, _ = integrate.quad(lambda p: v2(p) ** 2 / (2 * np.pi), 0, 2 * np.pi)
        var_oracle = second - mean**2

        u = np.array([[u_val, u_val]])
        th = np.array([[0.0, -d]])
        basis = synthetic_basis(u, th)
        mom = moments_for([a**2] * 2, [a**4] * 2, 2)
        ev = expected_vihd2(basis, mom, 5)
        var, _ = var_vihd2(basis, mom, 5)
        assert ev[0] == pytest.approx(mean, rel=1e-10)
        assert var[0] == pytest.approx(var_oracle, rel=1e-10)

    def test_beta_alpha_monte_carlo_oracle(self):
        """Random-alpha case against a direct sampling estimate."""
        rng = np.random.default_rng(5)
        u = rng.uniform(0.05, 0.3, size=(3, 2))
        th = rng.uniform(0, 2 * np.pi, size=(3, 2))
        dist = AlphaDistribution(mean=0.02, sd=0.008, support_max=0.06)
        mu2, mu4 = alpha_moments(dist)
        basis = synthetic_basis(u, th)
        mom = moments_for([mu2] * 2, [mu4] * 2, 3)

        a, b = dist.beta_shape()
        n = 400_000
        alpha = dist.support_max * rng.beta(a, b, size=(n, 2))
        phi = rng.uniform(0, 2 * np.pi, size=(n, 2))
        uc = u * np.exp(1j * th)
        v2 = np.abs((alpha * np.exp(1j * phi)) @ uc.T) ** 2
        ev = expected_vihd2(basis, mom, 5)
        var, _ = var_vihd2(basis, mom, 5)
        assert np.allclose(ev, v2.mean(axis=0), rtol=7e-3)
        assert np.allclose(var, v2.var(axis=0), rtol=3e-2)


class TestAggregation:
    def test_vthd2_single_harmonic_passthrough(self):
        m = {5: np.array([1.0, 2.0])}
        v = {5: np.array([0.1, 0.2])}
        mean, var = vthd2_stats(m, v)
        assert np.all(mean == m[5]) and np.all(var == v[5])

    def test_vthd2_equal_harmonics_double(self):
        m = {5: np.array([1.0]), 7: np.array([1.0])}
        v = {5: np.array([0.3]), 7: np.array([0.3])}
        mean, var = vthd2_stats(m, v)
        assert mean[0] == 2.0 and var[0] == 0.6

    def test_sthd_passthrough_and_double(self):
        assert sthd_stats({5: (1.0, 0.5)}) == (1.0, 0.5)
        assert sthd_stats({5: (1.0, 0.5), 7: (1.0, 0.5)}) == (2.0, 1.0)

    def test_sihd_equals_mean_of_expected_vihd2(self, five_bus_study):
        pf = solve_power_flow(five_bus_study)
        basis = build_injection_basis(five_bus_study, BASE_SCENARIO, pf)
        for h in five_bus_study.harmonics:
            mom = build_alpha_moments(five_bus_study, h)
            ev = expected_vihd2(basis, mom, h)
            e_s, _, _ = sihd_stats(basis, mom, h)
            assert e_s == pytest.approx(float(np.mean(ev)), rel=1e-12)

    def test_single_bus_single_injector_sihd(self):
        # N = 1: the index is the squared distortion itself
        u = np.array([[0.3]])
        basis = synthetic_basis(u, np.zeros((1, 1)))
        mom = moments_for([4e-4], [3e-7], 1)
        ev = expected_vihd2(basis, mom, 5)
        var, _ = var_vihd2(basis, mom, 5)
        e_s, v_s, _ = sihd_stats(basis, mom, 5)
        assert e_s == pytest.approx(ev[0], rel=1e-12)
        assert v_s == pytest.approx(var[0], rel=1e-9)

    def test_silent_second_bus_scales_index(self):
        # S averages over buses: a zero row halves E and quarters Var
        u = np.array([[0.3, 0.11], [0.0, 0.0]])
        th = np.array([[0.2, 1.7], [0.0, 0.0]])
        basis = synthetic_basis(u, th)
        mom = moments_for([4e-4, 5e-4], [3e-7, 4e-7], 2)
        ev = expected_vihd2(basis, mom, 5)
        var, _ = var_vihd2(basis, mom, 5)
        e_s, v_s, _ = sihd_stats(basis, mom, 5)
        assert e_s == pytest.approx(ev[0] / 2.0, rel=1e-12)
        assert v_s == pytest.approx(var[0] / 4.0, rel=1e-9)


class TestProperties:
    def test_scaling_property(self):
        """Scaling all alphas by c scales E by c^2 and Var by c^4."""
        rng = np.random.default_rng(8)
        u = rng.uniform(0.05, 0.3, size=(4, 3))
        th = rng.uniform(0, 2 * np.pi, size=(4, 3))
        basis = synthetic_basis(u, th)
        base = AlphaDistribution(mean=0.01, sd=0.004, support_max=0.05)
        c = 2.5
        scaled = AlphaDistribution(mean=c * 0.01, sd=c * 0.004, support_max=c * 0.05)
        m1 = alpha_moments(base)
        m2 = alpha_moments(scaled)
        mom1 = moments_for([m1[0]] * 3, [m1[1]] * 3, 4)
        mom2 = moments_for([m2[0]] * 3, [m2[1]] * 3, 4)
        ev1 = expected_vihd2(basis, mom1, 5)
        ev2 = expected_vihd2(basis, mom2, 5)
        var1, _ = var_vihd2(basis, mom1, 5)
        var2, _ = var_vihd2(basis, mom2, 5)
        assert np.allclose(ev2, c**2 * ev1, rtol=1e-10)
        assert np.allclose(var2, c**4 * var1, rtol=1e-10)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        u = rng.uniform(0.05, 0.3, size=(3, 3))
        th = rng.uniform(0, 2 * np.pi, size=(3, 3))
        mu2 = rng.uniform(1e-4, 4e-4, size=3)
        mu4 = 2.2 * mu2**2
        perm = np.array([2, 0, 1])

        basis = synthetic_basis(u, th)
        mom = AlphaMoments(mu2=mu2, mu4=mu4)
        ev = expected_vihd2(basis, mom, 5)
        var, _ = var_vihd2(basis, mom, 5)

        basis_p = synthetic_basis(u[perm][:, perm], th[perm][:, perm])
        mom_p = AlphaMoments(mu2=mu2[perm], mu4=mu4[perm])
        ev_p = expected_vihd2(basis_p, mom_p, 5)
        var_p, _ = var_vihd2(basis_p, mom_p, 5)
        assert np.allclose(ev_p, ev[perm], rtol=1e-12)
        assert np.allclose(var_p, var[perm], rtol=1e-12)

    def test_index_nonnegative_terms(self, five_bus_study):
        pf = solve_power_flow(five_bus_study)
        basis = build_injection_basis(five_bus_study, BASE_SCENARIO, pf)
        stats = distortion_stats(five_bus_study, basis)
        assert all(v[0] >= 0 for v in stats.s_ihd.values())
        assert stats.e_sthd == pytest.approx(
            sum(v[0] for v in stats.s_ihd.values())
        )
        assert np.all(stats.mean_thd2 == sum(stats.mean_ihd2.values()))
