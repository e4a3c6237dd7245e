import math

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from wchaos.basis import (GaussianCoordinates, TestDirection, TimeBasis,
                          hermite, hermite_table, path_from_coords,
                          s_coefficient_recovery, s_transform_scalar,
                          stoch_exp_coeff, xi_alpha, xi_alpha_batch)
from wchaos.multiindex import (EMPTY, MultiIndex, SupportError,
                               TruncationSpec, enumerate_indices)
from wchaos.oracle import QuadratureSpec, gh_expectation


class TestHermite:
    def test_values(self):
        assert hermite(2, 2.0) == 3.0      # H_2 = x^2 - 1
        assert hermite(0, 7.5) == 1.0
        assert hermite(3, 2.0) == 2.0      # H_3 = x^3 - 3x

    def test_table_matches_recurrence(self):
        x = np.linspace(-3, 3, 11)
        tab = hermite_table(8, x)
        for d in range(9):
            assert np.allclose(tab[d], hermite(d, x))

    def test_degree_cap(self):
        with pytest.raises(ValueError):
            hermite(201, 0.0)


class TestTimeBasis:
    def test_gram_identity(self):
        # orthonormal to 1e-12 under Gauss-Legendre of degree >= 2n
        T, n = 2.0, 8
        tb = TimeBasis(T, n)
        xs, ws = leggauss(5 * n)  # trig integrands need ~2.5 nodes per half-period
        t = (xs + 1) * T / 2
        w = ws * T / 2
        G = np.array([[np.sum(w * tb.eval_m(i, t) * tb.eval_m(j, t))
                       for j in range(1, n + 1)] for i in range(1, n + 1)])
        assert np.abs(G - np.eye(n)).max() < 1e-12

    def test_integrals(self):
        tb = TimeBasis(2.0, 4)
        assert tb.integral_M(1, 0, 2.0) == pytest.approx(math.sqrt(2.0), rel=1e-14)
        assert tb.integral_M(2, 0, 2.0) == pytest.approx(0.0, abs=1e-14)

    def test_step_weights_telescope(self):
        # product-quadrature weights integrate m_i exactly against P = 1
        tb = TimeBasis(1.5, 6)
        tg = np.linspace(0, 1.5, 77)
        WL, WR = tb.step_weights(tg)
        for i in range(1, 7):
            assert WL[i - 1].sum() + WR[i - 1].sum() == pytest.approx(
                tb.integral_M(i, 0, 1.5), abs=1e-13)

    def test_step_weights_linear_exact(self):
        # and exactly against P(t) = t
        tb = TimeBasis(1.0, 5)
        tg = np.linspace(0, 1, 41)
        WL, WR = tb.step_weights(tg)
        for i in (1, 3, 5):
            approx = float(WL[i - 1] @ tg[:-1] + WR[i - 1] @ tg[1:])
            exact = tb._integral_s_m(i, 0.0, 1.0)
            assert approx == pytest.approx(exact, abs=1e-13)

    def test_out_of_range(self):
        tb = TimeBasis(1.0, 3)
        with pytest.raises(ValueError):
            tb.eval_m(4, 0.5)
        with pytest.raises(ValueError):
            tb.eval_m(1, 1.5)


class TestCoordinates:
    def test_reproducible_and_extendable(self):
        a = GaussianCoordinates.sample(5, 3, 2)
        b = GaussianCoordinates.sample(5, 5, 4)
        assert np.allclose(a.xi, b.xi[:3, :2])

    def test_batch_prefix_stable(self):
        b1 = GaussianCoordinates.sample_batch(5, 3, 2, 4)
        b2 = GaussianCoordinates.sample_batch(5, 3, 2, 10)
        assert np.allclose(b1, b2[:4])

    def test_batch_is_standard_normal(self):
        b = GaussianCoordinates.sample_batch(17, 4, 2, 40000)
        assert abs(b.mean()) < 0.02
        assert abs(b.var() - 1.0) < 0.02


class TestXiAlpha:
    def test_empty_is_one(self):
        coords = GaussianCoordinates.sample(1, 2, 2)
        assert xi_alpha(EMPTY, coords) == 1.0

    def test_hermite_normalization(self):
        coords = GaussianCoordinates(np.array([[0.0], [1.3]]))
        a = MultiIndex.make({(2, 1): 2})
        assert xi_alpha(a, coords) == pytest.approx((1.3**2 - 1) / math.sqrt(2))

    def test_support_error(self):
        coords = GaussianCoordinates.sample(1, 2, 1)
        with pytest.raises(SupportError):
            xi_alpha(MultiIndex.make({(3, 1): 1}), coords)

    def test_orthonormality_quadrature(self):
        # E xi_a xi_b = delta_ab to 1e-12 for orders <= 3 over 2x2 slots
        idx = enumerate_indices(TruncationSpec(3, 2, 2))
        qspec = QuadratureSpec(((1, 1), (1, 2), (2, 1), (2, 2)), nodes=5)

        def ev(vals, a):
            c = np.zeros((2, 2))
            for (i, k), v in vals.items():
                c[i - 1, k - 1] = v
            return xi_alpha(a, GaussianCoordinates(c))

        rng = np.random.default_rng(3)
        for ia, ib in rng.choice(len(idx), size=(40, 2)):
            a, b = idx[ia], idx[ib]
            want = 1.0 if a == b else 0.0
            got = gh_expectation(lambda v: ev(v, a) * ev(v, b), qspec)
            assert got == pytest.approx(want, abs=1e-12)

    def test_batch_matches_scalar(self):
        idx = enumerate_indices(TruncationSpec(3, 2, 2))
        batch = GaussianCoordinates.sample_batch(9, 2, 2, 7)
        mat = xi_alpha_batch(idx, batch)
        for s in range(7):
            coords = GaussianCoordinates(batch[s])
            for j, a in enumerate(idx):
                assert mat[s, j] == pytest.approx(xi_alpha(a, coords), rel=1e-12)


class TestPathReconstruction:
    def test_zero_at_origin(self):
        coords = GaussianCoordinates.sample(2, 8, 2)
        tb = TimeBasis(1.0, 8)
        assert path_from_coords(coords, tb, 1, 0.0) == 0.0
        assert path_from_coords(coords, tb, 2, 0.0) == 0.0

    def test_terminal_value_exact(self):
        # only the constant mode integrates to nonzero over [0, T]
        T = 2.5
        coords = GaussianCoordinates.sample(4, 16, 1)
        tb = TimeBasis(T, 16)
        assert path_from_coords(coords, tb, 1, T) == pytest.approx(
            math.sqrt(T) * coords.xi[0, 0], rel=1e-12)

    def test_empirical_covariance(self):
        # E w(s) w(t) -> min(s, t) within 3 standard errors at n = 64
        T, n, nsamp = 1.0, 64, 10000
        tb = TimeBasis(T, n)
        batch = GaussianCoordinates.sample_batch(11, n, 1, nsamp)[:, :, 0]
        ts = np.array([0.3, 0.7])
        M = np.array([[tb.antiderivative_M(i, t) for t in ts] for i in range(1, n + 1)])
        W = batch @ M  # (nsamp, 2)
        cov = (W[:, 0] * W[:, 1]).mean()
        se = (W[:, 0] * W[:, 1]).std() / math.sqrt(nsamp)
        # finite-n covariance is sum_i M_i(s) M_i(t); it approximates min(s,t)
        finite_n = float(M[:, 0] @ M[:, 1])
        assert abs(cov - finite_n) < 3 * se
        assert abs(finite_n - 0.3) < 2.0 / n

    def test_variance_at_terminal(self):
        T, n, nsamp = 1.0, 8, 30000
        tb = TimeBasis(T, n)
        batch = GaussianCoordinates.sample_batch(13, n, 1, nsamp)[:, :, 0]
        wT = batch[:, 0] * tb.antiderivative_M(1, T)
        assert abs(np.var(wT) - T) < 3 * T * math.sqrt(2.0 / nsamp)


class TestStochasticExponential:
    def test_empty(self):
        h = TestDirection.from_entries(2, 1, {(1, 1): 0.5})
        assert stoch_exp_coeff(h, EMPTY) == 1.0

    def test_single_slot_value(self):
        h = TestDirection.from_entries(1, 1, {(1, 1): 0.5})
        a = MultiIndex.make({(1, 1): 2})
        assert stoch_exp_coeff(h, a) == pytest.approx(0.25 / math.sqrt(2))

    def test_norm_is_exponential(self):
        # sum over the single-slot tail: ||E(h)||^2 = exp(sum h^2)
        h = TestDirection.from_entries(1, 1, {(1, 1): 0.3})
        s = sum(stoch_exp_coeff(h, MultiIndex.make({(1, 1): n})) ** 2 for n in range(41))
        assert s == pytest.approx(math.exp(0.09), abs=1e-10)


class TestScalarSTransform:
    def test_constant(self):
        h = TestDirection.from_entries(2, 2, {(1, 1): 0.4, (2, 2): -0.2})
        assert s_transform_scalar({EMPTY: 3.5}, h) == 3.5

    def test_exponential_series(self):
        # S of the stochastic-exponential coefficients of g at h = exp(sum g h)
        g = TestDirection.from_entries(2, 1, {(1, 1): 0.5, (2, 1): -0.3})
        h = TestDirection.from_entries(2, 1, {(1, 1): 0.2, (2, 1): 0.1})
        idx = enumerate_indices(TruncationSpec(25, 2, 1))
        coeffs = {a: stoch_exp_coeff(g, a) for a in idx}
        want = math.exp(0.5 * 0.2 + (-0.3) * 0.1)
        assert s_transform_scalar(coeffs, h) == pytest.approx(want, rel=1e-12)

    def test_coefficient_recovery_by_differentiation(self):
        coeffs = {EMPTY: 1.0,
                  MultiIndex.make({(1, 1): 1}): 0.7,
                  MultiIndex.make({(2, 1): 1}): -0.4,
                  MultiIndex.make({(1, 1): 2}): 0.25,
                  MultiIndex.make({(1, 1): 1, (2, 1): 1}): 0.6}

        def s_func(h):
            return s_transform_scalar(coeffs, h)

        for a, want in coeffs.items():
            got = s_coefficient_recovery(s_func, a, 2, 1, step=1e-3)
            assert got == pytest.approx(want, abs=5e-6)
