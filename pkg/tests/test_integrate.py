import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksop.integrate import (
    BdfConfig,
    IntegrationError,
    KsSystem,
    LinearSystem,
    bdf_step,
    complex_jacobian,
    integrate_full,
    integrate_packed,
    ks_jacobian,
    nordsieck_start,
    rk4_integrate,
)
from ksop.spectral import ModeState, SpectralParams, energy, pack, rhs_array, unpack

from .conftest import random_state


def fd_jacobian(y, params, h=1e-6):
    f = lambda x: pack(rhs_array(unpack(x, params), params), params)
    J = np.empty((len(y), len(y)))
    for i in range(len(y)):
        e = np.zeros(len(y))
        e[i] = h
        J[:, i] = (f(y + e) - f(y - e)) / (2 * h)
    return J


class TestConfig:
    def test_defaults(self):
        cfg = BdfConfig()
        assert cfg.tol == 1e-7
        assert cfg.newton_tol_value == pytest.approx(1e-8)

    @pytest.mark.parametrize("kw", [dict(tol=0), dict(max_order=6), dict(dt_init=1.0, dt_max=0.1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BdfConfig(**kw)


class TestJacobian:
    def test_zero_state_is_diagonal_of_rates(self, params):
        J = ks_jacobian(np.zeros(params.N, dtype=complex), params)
        rates = params.linear_rates[params.index(params.positive)]
        np.testing.assert_allclose(J, np.diag(np.concatenate([rates, rates])), atol=0)

    def test_matches_finite_differences(self, params, rng):
        for _ in range(3):
            u = random_state(rng, params)
            J = ks_jacobian(u, params)
            Jfd = fd_jacobian(pack(u, params), params)
            assert np.max(np.abs(J - Jfd)) <= 1e-5 * np.max(np.abs(Jfd))

    def test_mode_one_couples_to_two(self, params):
        eps = 1e-3
        u = np.zeros(params.N, dtype=complex)
        u[params.index(1)] = u[params.index(-1)] = eps
        Jc = complex_jacobian(u, params)
        assert Jc[params.index(2), params.index(1)] == pytest.approx(-2j * eps)


class TestBdfStep:
    def test_stiff_scalar(self):
        lam = -1e6
        cfg = BdfConfig(tol=1e-7, dt_init=1e-9, dt_min=1e-14)
        sys = LinearSystem([[lam]])
        ns = nordsieck_start(np.array([1.0]), 0.0, cfg.dt_init, sys)
        y0 = 1.0
        for _ in range(60):
            t_prev, y_prev = ns.t, ns.y[0]
            ns, ok, est = bdf_step(ns, cfg, sys)
            if ok:
                # mixed tolerance: atol (= tol) plus tol * |y|
                exact = math.exp(lam * (ns.t - t_prev)) * y_prev
                assert abs(ns.y[0] - exact) <= cfg.tol * (1.0 + abs(y0))
        assert ns.t > 0

    def test_ks_error_estimate_within_tolerance(self, params, rng):
        cfg = BdfConfig()
        sys = KsSystem(params)
        ns = nordsieck_start(pack(random_state(rng, params), params), 0.0, 1e-4, sys)
        n_ok = 0
        while n_ok < 50:
            ns, ok, est = bdf_step(ns, cfg, sys)
            if ok:
                n_ok += 1
                assert est <= cfg.tol

    def test_fixed_step_is_backward_euler(self):
        A = np.array([[-3.0, 1.0], [0.5, -20.0]])
        h = 0.01
        cfg = BdfConfig(dt_init=h, dt_min=h, dt_max=h, newton_tol=1e-15)
        sys = LinearSystem(A)
        y = np.array([1.0, -2.0])
        ns = nordsieck_start(y, 0.0, h, sys)
        for _ in range(20):
            ns, ok, _ = bdf_step(ns, cfg, sys)
            assert ok and ns.order == 1
            y = np.linalg.solve(np.eye(2) - h * A, y)
            np.testing.assert_allclose(ns.y, y, rtol=1e-13, atol=1e-15)

    def test_raises_below_dt_min(self, params):
        cfg = BdfConfig(tol=1e-14, atol=1e-30, dt_init=1e-3, dt_min=1e-3, dt_max=1e-3)
        u = 5 * random_state(np.random.default_rng(0), params)
        with pytest.raises(IntegrationError):
            integrate_full(ModeState(u), 1.0, cfg, params, 0.5)


class TestIntegrateFull:
    def test_linear_regime_growth(self, params):
        u = np.zeros(params.N, dtype=complex)
        for k in range(1, 6):
            u[params.index(k)] = 1e-8 * (1 + 0.5j)
            u[params.index(-k)] = 1e-8 * (1 - 0.5j)
        # absolute tolerance scaled to the 1e-8 amplitude
        traj = integrate_full(ModeState(u), 0.1, BdfConfig(atol=1e-15), params, 0.1)
        for k in range(1, 6):
            rate = k**2 - params.nu * k**4
            ratio = abs(traj.coeffs[-1][params.index(k)]) / abs(u[params.index(k)])
            assert ratio == pytest.approx(math.exp(rate * 0.1), rel=1e-4)

    def test_energy_stays_bounded(self, params):
        from ksop.ensemble import draw_uniform_ic

        traj = integrate_full(draw_uniform_ic(3, params), 5.0, BdfConfig(), params, 0.1)
        e = energy(traj.coeffs)
        assert np.all(np.isfinite(e)) and e.max() < 1e3

    def test_tolerance_insensitivity(self, params):
        from ksop.ensemble import draw_uniform_ic

        ic = draw_uniform_ic(11, params)
        a = integrate_full(ic, 1.0, BdfConfig(tol=1e-7), params, 1.0).coeffs[-1]
        b = integrate_full(ic, 1.0, BdfConfig(tol=1e-10), params, 1.0).coeffs[-1]
        assert np.max(np.abs(a - b)) <= 1e-4

    def test_output_grid_and_reality(self, params, rng):
        traj = integrate_full(ModeState(random_state(rng, params)), 0.5, BdfConfig(), params, 0.05)
        assert len(traj.times) == 11
        k = params.positive
        np.testing.assert_array_equal(traj.coeffs[:, params.index(-k)], np.conj(traj.coeffs[:, params.index(k)]))

    def test_rejects_empty_interval(self, params):
        with pytest.raises(ValueError):
            integrate_full(ModeState(np.zeros(params.N, dtype=complex)), 0.0, BdfConfig(), params, 0.1)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(min_value=-50.0, max_value=-0.1), st.floats(min_value=0.1, max_value=2.0))
    def test_scalar_decay_property(self, lam, t_end):
        out, _ = integrate_packed(np.array([1.0]), 0.0, t_end, BdfConfig(tol=1e-9, atol=1e-12), LinearSystem([[lam]]), [t_end])
        assert out[-1, 0] == pytest.approx(math.exp(lam * t_end), rel=1e-5, abs=1e-9)


class TestRk4:
    def test_exponential(self):
        ys = rk4_integrate(lambda y: -y, np.array([1.0]), 0.0, 1e-3, 1000, every=1000)
        assert ys[-1, 0] == pytest.approx(math.exp(-1.0), rel=1e-12)
