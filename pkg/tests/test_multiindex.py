import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wchaos.multiindex import (EMPTY, IncompleteTripleError, InvalidMuError,
                               MultiIndex, TruncationSpec, c_coeff,
                               enumerate_indices, is_complete, product_expand,
                               psi, psi_exact_sq, psi_log)


def mi(d):
    return MultiIndex.make(d)


E = mi({(1, 1): 1})
E2 = E.scale(2)


# strategy: small sparse indices over a 3x2 slot grid
slot = st.tuples(st.integers(1, 3), st.integers(1, 2))
small_index = st.dictionaries(slot, st.integers(1, 3), max_size=4).map(MultiIndex.make)


class TestOrderFactorial:
    def test_empty(self):
        assert EMPTY.order == 0
        assert EMPTY.factorial() == 1

    def test_paper_example(self):
        # four nonzero entries, |alpha| = 10, alpha! = 1! 3! 2! 4! = 288
        a = mi({(2, 1): 1, (4, 1): 3, (1, 2): 2, (5, 2): 4})
        assert a.order == 10
        assert a.factorial() == 288

    def test_single_slot(self):
        assert mi({(1, 1): 5}).order == 5
        assert mi({(1, 1): 4}).factorial() == 24

    @given(small_index)
    def test_log_factorial_matches_exact(self, a):
        assert math.isclose(a.log_factorial(), math.log(a.factorial()), rel_tol=1e-12)


class TestRaiseLower:
    def test_lower(self):
        assert mi({(1, 1): 2}).lowered(1, 1) == mi({(1, 1): 1})
        assert mi({(1, 1): 1}).lowered(1, 1) == EMPTY

    def test_lower_absent_is_identity(self):
        # max(alpha - 1, 0) on an absent entry leaves alpha unchanged
        a = mi({(1, 1): 1})
        assert a.lowered(2, 1) == a

    def test_raise(self):
        assert EMPTY.raised(3, 2) == mi({(3, 2): 1})
        assert mi({(3, 2): 1}).raised(3, 2) == mi({(3, 2): 2})

    @given(small_index, slot)
    def test_raise_lower_roundtrip(self, a, s):
        i, k = s
        assert a.raised(i, k).lowered(i, k) == a

    @given(small_index, slot)
    def test_lower_raise_roundtrip_when_present(self, a, s):
        i, k = s
        if a.exponent(i, k) >= 1:
            assert a.lowered(i, k).raised(i, k) == a


class TestCharacteristicSet:
    def test_paper_example(self):
        # entries read off the displayed array (rows k, columns i)
        a = mi({(1, 2): 1, (2, 1): 1, (6, 2): 1, (2, 2): 2, (4, 1): 2, (5, 1): 3})
        assert a.characteristic_set() == (
            (1, 2), (2, 1), (2, 2), (2, 2), (4, 1), (4, 1),
            (5, 1), (5, 1), (5, 1), (6, 2))

    def test_empty(self):
        assert EMPTY.characteristic_set() == ()

    def test_repeats(self):
        assert mi({(2, 3): 2}).characteristic_set() == ((2, 3), (2, 3))

    @given(small_index)
    def test_roundtrip_and_length(self, a):
        ks = a.characteristic_set()
        assert len(ks) == a.order
        assert MultiIndex.from_characteristic_set(ks) == a


class TestEnumeration:
    @pytest.mark.parametrize("N,n,r,card", [(2, 1, 2, 6), (0, 3, 2, 1), (3, 2, 1, 10)])
    def test_cardinality(self, N, n, r, card):
        spec = TruncationSpec(N, n, r)
        idx = enumerate_indices(spec)
        assert len(idx) == card == spec.cardinality()

    def test_bounds_and_uniqueness(self):
        spec = TruncationSpec(3, 3, 2)
        idx = enumerate_indices(spec)
        assert len(set(idx)) == len(idx)
        for a in idx:
            assert a.order <= 3
            assert a.max_i() <= 3 and a.max_k() <= 2

    def test_order_stable(self):
        spec = TruncationSpec(3, 2, 2)
        assert enumerate_indices(spec) == enumerate_indices(spec)

    def test_levels_ascending(self):
        orders = [a.order for a in enumerate_indices(TruncationSpec(4, 2, 1))]
        assert orders == sorted(orders)

    def test_support_restriction(self):
        idx = enumerate_indices(TruncationSpec(3, 5, 1), support_modes=(1,))
        assert len(idx) == 4  # 0..3 powers of the first mode
        assert all(a.max_i() <= 1 for a in idx)


class TestCompleteTriples:
    def test_unit_pair(self):
        assert is_complete(E, E, EMPTY)
        assert is_complete(E, E, E2)
        assert not is_complete(E, E, E)  # odd entry
        assert is_complete(EMPTY, EMPTY, EMPTY)

    @given(small_index, small_index, small_index)
    def test_permutation_invariance(self, a, b, c):
        flag = is_complete(a, b, c)
        assert flag == is_complete(b, a, c) == is_complete(c, b, a)


class TestPsi:
    def test_collapse(self):
        for a in (EMPTY, E, mi({(2, 1): 2, (1, 2): 1})):
            assert psi(a, EMPTY, a) == pytest.approx(1.0, abs=1e-14)

    def test_unit_values(self):
        assert psi(E, E, E2) == pytest.approx(math.sqrt(2), rel=1e-14)
        assert psi(E, E, EMPTY) == pytest.approx(1.0, abs=1e-14)

    def test_incomplete_raises(self):
        with pytest.raises(IncompleteTripleError):
            psi(E, E, E)

    @given(small_index, small_index)
    @settings(max_examples=60)
    def test_permutation_invariance(self, a, b):
        # build a complete third index from the product expansion
        for c, _ in product_expand(a, b):
            v = psi_log(a, b, c)
            assert psi_log(b, a, c) == pytest.approx(v, abs=1e-10)
            assert psi_log(c, b, a) == pytest.approx(v, abs=1e-10)
            break

    def test_exact_integer_oracle_up_to_order_12(self):
        # log-space path against exact rational Psi^2 on dense triples
        a = mi({(1, 1): 4, (2, 1): 2})
        b = mi({(1, 1): 2, (2, 1): 4})
        for c, _ in product_expand(a, b):
            want = psi_exact_sq(a, b, c)
            assert (a + b + c).order <= 24
            got = psi(a, b, c) ** 2
            assert got == pytest.approx(float(want), rel=1e-11)


class TestCCoeff:
    def test_trivial(self):
        g = mi({(2, 1): 3})
        assert c_coeff(g, EMPTY, EMPTY) == 1.0

    def test_unit_values(self):
        assert c_coeff(E, E, EMPTY) == pytest.approx(math.sqrt(2), rel=1e-14)
        assert c_coeff(E, E, E) == 1.0

    def test_invalid_mu(self):
        with pytest.raises(InvalidMuError):
            c_coeff(E, E, E2)

    @given(small_index, small_index)
    @settings(max_examples=60)
    def test_matches_psi(self, g, b):
        # C(gamma, beta, mu) = Psi(gamma, beta, gamma + beta - 2 mu)
        for mu_p, coeff in product_expand(g, b):
            assert coeff == pytest.approx(psi(g, b, mu_p), rel=1e-11)


class TestProductExpand:
    def test_unit_square(self):
        got = dict(product_expand(E, E))
        assert got[E2] == pytest.approx(math.sqrt(2), rel=1e-14)
        assert got[EMPTY] == pytest.approx(1.0)

    def test_multiply_by_one(self):
        b = mi({(2, 1): 2})
        assert product_expand(EMPTY, b) == [(b, 1.0)]

    def test_h2_times_h1(self):
        # xi_2 xi_1 = sqrt(3) xi_3 + sqrt(2) xi_1  (normalized H_2 H_1 = H_3 + 2 H_1)
        got = dict(product_expand(E2, E))
        assert got[E.scale(3)] == pytest.approx(math.sqrt(3), rel=1e-14)
        assert got[E] == pytest.approx(math.sqrt(2), rel=1e-14)

    @given(small_index, small_index)
    @settings(max_examples=40, deadline=None)
    def test_pointwise_reconstruction(self, g, b):
        # evaluate both sides of the product formula at a fixed coordinate draw
        from wchaos.basis import GaussianCoordinates, xi_alpha

        coords = GaussianCoordinates.sample(123, 3, 2)
        lhs = xi_alpha(g, coords) * xi_alpha(b, coords)
        rhs = sum(c * xi_alpha(m, coords) for m, c in product_expand(g, b))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


class TestTripleExpectationOracle:
    def test_against_quadrature(self):
        # E xi_a xi_b xi_c equals Psi on complete triples and 0 otherwise
        from wchaos.basis import GaussianCoordinates, xi_alpha
        from wchaos.oracle import QuadratureSpec, gh_expectation

        spec = TruncationSpec(3, 2, 2)
        idx = enumerate_indices(spec)
        qspec = QuadratureSpec(((1, 1), (1, 2), (2, 1), (2, 2)), nodes=6)

        def ev(vals, a):
            coords = np.zeros((2, 2))
            for (i, k), v in vals.items():
                coords[i - 1, k - 1] = v
            return xi_alpha(a, GaussianCoordinates(coords))

        rng = np.random.default_rng(0)
        picks = rng.choice(len(idx), size=(30, 3))
        for ia, ib, ic in picks:
            a, b, c = idx[ia], idx[ib], idx[ic]
            want = psi(a, b, c) if is_complete(a, b, c) else 0.0
            got = gh_expectation(lambda v: ev(v, a) * ev(v, b) * ev(v, c), qspec)
            assert got == pytest.approx(want, abs=1e-10)

    def test_fourth_moment_kernel(self):
        # contracted double expansion against quadrature for order <= 3 over 2 slots
        from wchaos.basis import GaussianCoordinates, xi_alpha
        from wchaos.oracle import QuadratureSpec, gh_expectation

        spec = TruncationSpec(3, 2, 1)
        idx = enumerate_indices(spec)
        qspec = QuadratureSpec(((1, 1), (2, 1)), nodes=8)

        def ev(vals, a):
            coords = np.zeros((2, 1))
            for (i, k), v in vals.items():
                coords[i - 1, k - 1] = v
            return xi_alpha(a, GaussianCoordinates(coords))

        rng = np.random.default_rng(1)
        picks = rng.choice(len(idx), size=(12, 4))
        for ia, ib, ic, idd in picks:
            a, b, c, d = idx[ia], idx[ib], idx[ic], idx[idd]
            left = dict(product_expand(a, b))
            right = dict(product_expand(c, d))
            want = sum(v * right.get(rho, 0.0) for rho, v in left.items())
            got = gh_expectation(
                lambda v: ev(v, a) * ev(v, b) * ev(v, c) * ev(v, d), qspec)
            assert got == pytest.approx(want, abs=1e-9)
