import time
from dataclasses import replace

import numpy as np
import pytest

from ksop.gaussian import Partition
from ksop.integrate import BdfConfig, IntegrationError, integrate_full
from ksop.markov import MarkovianModel
from ksop.memory import zero_kernel
from ksop.noise import AutocorrTable, ComponentWeights, NoiseModel, build_noise_model
from ksop.reduced import (
    DeltaKernel,
    HistoryBuffer,
    MemoryQuadrature,
    ReducedRunConfig,
    memory_integral,
    quadrature_weights,
    read_trajectory_csv,
    run_delta_realization,
    run_galerkin,
    run_op_realization,
    run_reduced,
    write_trajectory_csv,
)
from ksop.spectral import ModeState

from .test_gaussian import toy_density

SET1_IC = np.array([1, 1, 1, 0, 0, 1, 1, 1, 0, 0], dtype=complex)


@pytest.fixture
def set1(params):
    return Partition((1, 2, 3, 4, 5), params)


@pytest.fixture
def mm(params, set1):
    return MarkovianModel.build(toy_density(params, seed=2), set1)


def ou_noise(p, dt=0.01, scale=0.05):
    lags = dt * np.arange(100)
    tables = [AutocorrTable(k, dt, np.stack([scale * np.exp(-8 * lags)] * 2), 1000, np.zeros(2))
              for k in p.unresolved_positive]
    return build_noise_model(tables, dt)


def zero_noise(p, g, dt=0.01):
    z = ComponentWeights(np.empty(0), np.empty(0), np.zeros(3), 1, 0)
    return NoiseModel(dt, {k: (z, z) for k in p.unresolved_positive}, {k: complex(g.mu[g.pos(k)]) for k in p.unresolved_positive})


def const_kernel(p, value, t0=1.0, ds=0.01):
    k = zero_kernel(p, t0, ds)
    k.K[:] = value
    return k


class TestQuadrature:
    def test_weights_integrate_polynomials(self):
        x = np.linspace(0, 1, 11)
        w = quadrature_weights(11, 0.1, "simpson")
        assert np.dot(w, x**3) == pytest.approx(0.25, abs=1e-14)
        w = quadrature_weights(12, 0.1, "simpson")  # odd interval count
        assert np.dot(w, np.ones(12)) == pytest.approx(1.1)
        assert np.dot(quadrature_weights(11, 0.1, "trapezoid"), x) == pytest.approx(0.5)

    def test_history_ring_order(self):
        h = HistoryBuffer(3, 1, 1)
        for v in range(5):
            h.push(np.array([[v]]))
        assert len(h) == 3
        np.testing.assert_array_equal(h.window().ravel(), [2, 3, 4])
        np.testing.assert_array_equal(h.window(2).ravel(), [3, 4])

    def test_zero_kernel(self, set1):
        h = HistoryBuffer(101, 2, 10)
        for _ in range(50):
            h.push(np.ones((2, 10)))
        out = memory_integral(h, zero_kernel(set1, 0.1, 0.01), 0.049, "trapezoid", 1e-3)
        assert np.all(out == 0)

    @pytest.mark.parametrize("n_hist,t", [(50, 0.049), (300, 0.299)])
    def test_constant_kernel_constant_history(self, set1, n_hist, t):
        dt, t0, c = 1e-3, 0.1, 0.7 - 0.2j
        K = const_kernel(set1, 2.0, t0)
        h = HistoryBuffer(int(t0 / dt) + 1, 1, 10)
        for _ in range(n_hist):
            h.push(np.full((1, 10), c))
        out = memory_integral(h, K, t, "trapezoid", dt)
        np.testing.assert_allclose(out, 2.0 * 10 * c * min(t, t0), rtol=1e-12)

    def test_simpson_against_refined_trapezoid(self, set1):
        t0, ds = 0.5, 1e-4
        K = zero_kernel(set1, t0, ds)
        K.K[:] = (np.exp(-2 * K.grid) * np.cos(3 * K.grid))[:, None, None] * np.linspace(1, 2, 10)
        phi = lambda t: np.sin(3 * t) + 0.5j * np.cos(t)
        t = 0.8

        def integral(dt, rule):
            n = int(round(t / dt)) + 1
            h = HistoryBuffer(int(round(t0 / dt)) + 1, 1, 10)
            for i in range(n):
                h.push(np.full((1, 10), phi(i * dt)))
            return memory_integral(h, K, t, rule, dt)

        ref = integral(1e-4, "trapezoid")
        got = integral(1e-3, "simpson")
        assert np.max(np.abs(got - ref)) <= 1e-6 * np.max(np.abs(ref))

    def test_delta_equals_short_memory_for_constant_history(self, set1):
        dt, t0 = 1e-3, 0.2
        K = const_kernel(set1, -1.5 + 0.5j, t0)
        mq = MemoryQuadrature(K, dt, t0, "trapezoid")
        dk = DeltaKernel(K, t0)
        phi = np.full((1, 10), 0.3 + 0.1j)
        h = HistoryBuffer(mq.L + 1, 1, 10)
        h.push(phi)
        for n in range(400):
            t = n * dt
            for c in (0.0, 0.5, 1.0):
                np.testing.assert_allclose(mq.integral(h, c, t + c * dt, phi), phi @ dk(t + c * dt).T, rtol=1e-11, atol=1e-15)
            h.push(phi)


class TestRuns:
    def test_zero_ic_galerkin(self, mm):
        out = run_galerkin(np.zeros(10), ReducedRunConfig(t_end=0.5), mm)
        assert np.all(out.coeffs == 0)

    def test_galerkin_all_resolved_matches_full(self, params):
        p = Partition(tuple(range(1, 12)), params)
        mm = MarkovianModel.build(toy_density(params), p)
        rng = np.random.default_rng(3)
        v = rng.uniform(-1, 1, 11) + 1j * rng.uniform(-1, 1, 11)
        ic = np.concatenate([v, v.conj()])
        # dt = 1e-3 leaves a 1e-4 RK4 error on the stiffest modes; a finer step meets 1e-5
        red = run_galerkin(ic, ReducedRunConfig(dt=2.5e-4, t_end=1.0, sample_dt=0.5), mm)
        full = integrate_full(ModeState(p.embed(ic)), 1.0, BdfConfig(tol=1e-11, atol=1e-13), params, 0.5)
        assert np.max(np.abs(red.coeffs[0, -1] - full.coeffs[-1])) <= 1e-5

    def test_galerkin_deterministic(self, mm):
        a = run_galerkin(SET1_IC, ReducedRunConfig(t_end=0.3), mm)
        b = run_galerkin(SET1_IC, ReducedRunConfig(t_end=0.3), mm)
        np.testing.assert_array_equal(a.coeffs, b.coeffs)

    def test_term_isolation(self, mm, set1):
        cfg = ReducedRunConfig(t_end=0.3)
        nm0 = zero_noise(set1, mm.density)
        op = run_op_realization(SET1_IC, mm, zero_kernel(set1, 1.0), nm0, cfg)
        mk = run_reduced(SET1_IC, mm, None, None, replace(cfg, variant="markovian"))
        np.testing.assert_array_equal(op.coeffs, mk.coeffs)
        dl = run_delta_realization(SET1_IC, mm, zero_kernel(set1, 1.0), nm0, cfg)
        np.testing.assert_array_equal(dl.coeffs, mk.coeffs)

    def test_markovian_differs_from_galerkin(self, mm):
        cfg = ReducedRunConfig(t_end=0.3)
        a = run_galerkin(SET1_IC, cfg, mm)
        b = run_reduced(SET1_IC, mm, None, None, replace(cfg, variant="markovian"))
        assert np.max(np.abs(a.coeffs - b.coeffs)) > 1e-3

    def test_zero_kernel_delta_matches_noise_only(self, mm, set1):
        cfg = ReducedRunConfig(t_end=0.3, seed=5)
        nm = ou_noise(set1)
        a = run_delta_realization(SET1_IC, mm, zero_kernel(set1), nm, cfg, 2)
        b = run_reduced(SET1_IC, mm, None, nm, replace(cfg, variant="delta"), (2,))
        np.testing.assert_array_equal(a.coeffs, b.coeffs)

    def test_realization_seed_determinism(self, mm, set1):
        cfg = ReducedRunConfig(t_end=0.3, seed=5)
        K = const_kernel(set1, -0.5, 0.2)
        nm = ou_noise(set1)
        a = run_op_realization(SET1_IC, mm, K, nm, cfg, 3)
        b = run_op_realization(SET1_IC, mm, K, nm, cfg, 3)
        c = run_op_realization(SET1_IC, mm, K, nm, cfg, 4)
        np.testing.assert_array_equal(a.coeffs, b.coeffs)
        assert not np.array_equal(a.coeffs, c.coeffs)

    def test_batch_equals_individual_runs(self, mm, set1):
        cfg = ReducedRunConfig(t_end=0.2, seed=1)
        K = const_kernel(set1, -0.5, 0.1)
        nm = ou_noise(set1)
        batch = run_reduced(SET1_IC, mm, K, nm, cfg, (0, 1, 2))
        for i in range(3):
            one = run_reduced(SET1_IC, mm, K, nm, cfg, (i,))
            np.testing.assert_allclose(batch.coeffs[i], one.coeffs[0], rtol=1e-13, atol=1e-14)

    def test_identical_seeds_average_equals_member(self, mm, set1):
        cfg = ReducedRunConfig(t_end=0.2, seed=1)
        out = run_reduced(SET1_IC, mm, const_kernel(set1, -0.5, 0.1), ou_noise(set1), cfg, (7, 7))
        np.testing.assert_allclose(out.mean(), out.coeffs[0], rtol=1e-15)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blow_up_raises(self, mm, set1):
        K = const_kernel(set1, 1e4, 0.1)
        with pytest.raises(IntegrationError):
            run_op_realization(SET1_IC, mm, K, None, ReducedRunConfig(t_end=1.0))

    def test_delta_is_faster(self, mm, set1):
        cfg = ReducedRunConfig(t_end=1.5, t0=1.0)
        K = const_kernel(set1, -0.1, 1.0)
        nm = ou_noise(set1)
        reals = tuple(range(10))
        t = time.perf_counter()
        run_reduced(SET1_IC, mm, K, nm, replace(cfg, variant="short-memory"), reals)
        slow = time.perf_counter() - t
        t = time.perf_counter()
        run_reduced(SET1_IC, mm, K, nm, replace(cfg, variant="delta"), reals)
        fast = time.perf_counter() - t
        print(f"short-memory {slow:.2f}s, delta {fast:.2f}s")
        assert slow > 2 * fast

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ReducedRunConfig(variant="exact")
        with pytest.raises(ValueError):
            ReducedRunConfig(dt=1e-3, sample_dt=0.0015)

    def test_csv_roundtrip(self, mm, set1, params, tmp_path):
        out = run_galerkin(SET1_IC, ReducedRunConfig(t_end=0.2), mm)
        write_trajectory_csv(tmp_path / "t.csv", out.times, out.coeffs, params, set1.resolved_wavenumbers, out.realizations, out.meta)
        times, coeffs, reals = read_trajectory_csv(tmp_path / "t.csv", params)
        np.testing.assert_array_equal(times, out.times)
        np.testing.assert_array_equal(coeffs, out.coeffs)
