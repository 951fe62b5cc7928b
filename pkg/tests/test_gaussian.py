import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksop.ensemble import SampleSet
from ksop.gaussian import (
    DegenerateDensityError,
    DiagonalGaussian,
    Partition,
    condition,
    conditional_affine,
    conditional_covariance,
    fit_diagonal_gaussian,
    n_pairings,
    sample_conditional,
    wick_moment,
)
from ksop.spectral import SpectralParams
from ksop.streams import stream


def toy_density(params, seed=0):
    rng = np.random.default_rng(seed)
    h = len(params.positive)
    mu = 0.3 * (rng.normal(size=h) + 1j * rng.normal(size=h))
    a = rng.uniform(0.05, 2.0, size=h)
    return DiagonalGaussian.from_positive(mu, a, params)


@pytest.fixture
def g(params):
    return toy_density(params)


@pytest.fixture
def set1(params):
    return Partition((1, 2, 3, 4, 5), params)


class TestFit:
    def test_two_samples(self, params):
        u = np.zeros((2, params.N), dtype=complex)
        k1 = params.index(1)
        u[:, k1] = [0.0, 2.0]
        u[:, params.index(-1)] = u[:, k1]
        rng = np.random.default_rng(0)
        for k in range(2, 12):
            v = rng.normal(size=2) + 1j * rng.normal(size=2)
            u[:, params.index(k)] = v
            u[:, params.index(-k)] = v.conj()
        g = fit_diagonal_gaussian(u, params)
        assert g.mu[0] == 1.0
        assert g.a[0] == 1.0

    def test_all_equal_is_degenerate(self, params):
        u = np.ones((5, params.N), dtype=complex)
        with pytest.raises(DegenerateDensityError):
            fit_diagonal_gaussian(u, params)

    def test_consistency(self, params, g):
        n = 20_000
        s = g.sample(stream(0, "test"), n)
        fit = fit_diagonal_gaussian(SampleSet(s, 0, 0), params)
        assert np.all(np.abs(fit.mu - g.mu) <= 5 * np.sqrt(g.a / n))
        assert np.all(np.abs(fit.a - g.a) <= 5 * g.a / np.sqrt(n))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 60))
    def test_order_invariant(self, seed, n):
        params = SpectralParams()
        u = toy_density(params, seed % 7).sample(np.random.default_rng(seed), n)
        perm = np.random.default_rng(seed + 1).permutation(n)
        a, b = fit_diagonal_gaussian(u, params), fit_diagonal_gaussian(u[perm], params)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.a, b.a)

    def test_conjugate_layout(self, params, g):
        h = g.half
        np.testing.assert_array_equal(g.mu[h:], g.mu[:h].conj())
        np.testing.assert_array_equal(g.a[h:], g.a[:h])
        assert g.pos(3) == 2 and g.pos(-3) == h + 2

    def test_csv_roundtrip(self, params, g, tmp_path):
        g.write_csv(tmp_path / "d.csv")
        back = DiagonalGaussian.read_csv(tmp_path / "d.csv", params)
        np.testing.assert_array_equal(back.mu, g.mu)
        np.testing.assert_array_equal(back.a, g.a)

    def test_logpdf_normalised_in_one_mode(self):
        p = SpectralParams(N=4)
        g = DiagonalGaussian.from_positive([0.2 + 0.1j], [0.7], p)
        x = np.linspace(-6, 6, 401)
        X, Y = np.meshgrid(x, x)
        u = np.zeros(X.shape + (4,), dtype=complex)
        u[..., p.index(1)] = X + 1j * Y
        dens = np.exp(g.logpdf(u))
        assert np.trapezoid(np.trapezoid(dens, x), x) == pytest.approx(1.0, rel=1e-6)


class TestPartition:
    def test_indices(self, params, set1):
        assert set1.m == 10
        assert set1.unresolved_positive == (6, 7, 8, 9, 10, 11)
        np.testing.assert_array_equal(set1.resolved_idx, [0, 1, 2, 3, 4, 11, 12, 13, 14, 15])

    def test_must_be_conjugate_closed(self, params):
        with pytest.raises(ValueError):
            Partition.from_wavenumbers([1, -1, 2], params)

    def test_everything_resolved(self, params):
        p = Partition(tuple(range(1, 12)), params)
        assert p.m == params.n and len(p.unresolved_idx) == 0

    def test_restrict_embed(self, params, set1, rng):
        v = rng.normal(size=10) + 1j * rng.normal(size=10)
        np.testing.assert_array_equal(set1.restrict(set1.embed(v)), v)


class TestConditional:
    def test_diagonal_closed_form(self, params, g, set1):
        ca = conditional_affine(g, set1)
        cv = conditional_covariance(g, set1)
        r, u = set1.resolved_idx, set1.unresolved_idx
        np.testing.assert_array_equal(ca.Qmat[r], np.eye(set1.m))
        assert np.all(ca.Qmat[u] == 0)
        assert np.all(ca.c[r] == 0)
        np.testing.assert_array_equal(ca.c[u], g.mu[u])
        np.testing.assert_array_equal(np.diag(cv.V)[u], g.a[u])
        assert np.all(cv.V[r] == 0) and np.all(cv.V[:, r] == 0)

    def test_one_resolved_mode(self, params, g):
        p = Partition((3,), params)
        ca = conditional_affine(g, p)
        i = p.resolved_idx[0]
        assert ca.Qmat[i, 0] == 1
        mask = np.ones_like(ca.Qmat, dtype=bool)
        mask[p.resolved_idx[0], 0] = False
        mask[p.resolved_idx[1], 1] = False
        assert np.all(ca.Qmat[mask] == 0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(-0.95, 0.95), st.floats(-np.pi, np.pi),
           st.complex_numbers(max_magnitude=2), st.complex_numbers(max_magnitude=2), st.complex_numbers(max_magnitude=2))
    def test_schur_complement_2x2(self, a11, a22, r, phase, m1, m2, x1):
        c12 = r * np.sqrt(a11 * a22) * np.exp(1j * phase)
        C = np.array([[a11, c12], [np.conj(c12), a22]])
        mu = np.array([m1, m2])
        Q, c, V = condition(mu, C, [0])
        # E[u2 | u1 = x1] = m2 + conj(c12) / a11 (x1 - m1)
        mean2 = (Q @ [x1] + c)[1]
        assert mean2 == pytest.approx(m2 + np.conj(c12) / a11 * (x1 - m1), abs=1e-12)
        assert V[1, 1].real == pytest.approx(a22 - abs(c12) ** 2 / a11, abs=1e-12)
        assert abs(V[0, 0]) < 1e-12

    def test_all_resolved_gives_zero_covariance(self):
        V = condition(np.zeros(3), np.diag([1.0, 2.0, 3.0]), [0, 1, 2])[2]
        assert np.all(np.abs(V) < 1e-15)


class TestSampleConditional:
    def test_resolved_values_exact(self, params, g, set1, rng):
        vals = rng.normal(size=5) + 1j * rng.normal(size=5)
        vals = np.concatenate([vals, vals.conj()])
        out = sample_conditional(g, set1, vals, 3, size=50)
        np.testing.assert_array_equal(set1.restrict(out), np.broadcast_to(vals, (50, 10)))

    def test_no_unresolved_modes_returns_input(self, params, g, rng):
        p = Partition(tuple(range(1, 12)), params)
        v = rng.normal(size=11) + 1j * rng.normal(size=11)
        vals = np.concatenate([v, v.conj()])
        out = sample_conditional(g, p, vals, 0)
        np.testing.assert_array_equal(p.restrict(out.coeffs), vals)

    def test_moments(self, params, g, set1):
        n = 10_000
        out = sample_conditional(g, set1, np.ones(10), 5, size=n)
        for k in set1.unresolved_positive:
            w = out[:, params.index(k)]
            i = g.pos(k)
            assert abs(w.mean() - g.mu[i]) <= 5 * np.sqrt(g.a[i] / n)
            assert abs(np.mean(np.abs(w - g.mu[i]) ** 2) - g.a[i]) <= 5 / np.sqrt(n) * g.a[i]

    def test_deterministic(self, params, g, set1):
        a = sample_conditional(g, set1, np.ones(10), 8, size=4)
        b = sample_conditional(g, set1, np.ones(10), 8, size=4)
        np.testing.assert_array_equal(a, b)


class TestWick:
    def test_odd_is_zero(self, params, g, set1):
        i = set1.unresolved_idx[0]
        assert wick_moment(g, set1, np.ones(10), [(i, False), (i, True), (i, False)]) == 0

    def test_second_moment(self, params, g, set1):
        i = set1.unresolved_idx[2]
        assert wick_moment(g, set1, np.ones(10), [(i, False), (i, True)]) == pytest.approx(g.a[i])

    def test_pair_without_conjugate_vanishes(self, params, g, set1):
        i = set1.unresolved_idx[0]
        assert wick_moment(g, set1, np.ones(10), [(i, False), (i, False)]) == 0

    def test_fourth_moment_closed_form(self, params, g, set1):
        i = set1.unresolved_idx[1]
        m = wick_moment(g, set1, np.ones(10), [(i, False), (i, True), (i, False), (i, True)])
        assert m == pytest.approx(2 * g.a[i] ** 2, rel=1e-14)

    def test_pairing_counts(self):
        assert [n_pairings(P) for P in (1, 2, 4, 6, 8)] == [0, 1, 3, 15, 105]


class TestGeneralPath:
    def test_diagonal_C_through_solver_matches_closed_form(self, params, g, set1):
        a = conditional_affine(g, set1)
        b = conditional_affine(g, set1, C=g.cov)
        np.testing.assert_allclose(b.Qmat, a.Qmat, atol=1e-12)
        np.testing.assert_allclose(b.c, a.c, atol=1e-12)
        np.testing.assert_allclose(conditional_covariance(g, set1, C=g.cov).V, conditional_covariance(g, set1).V, atol=1e-12)
