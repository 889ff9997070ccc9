import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmpar.multiindex import (
    CompositionTable,
    add,
    basis,
    check_index,
    enumerate_indices,
    evaluate_monomials,
    index_order,
    indices_up_to,
    multiply_series,
    scalar_power_coefficients,
    subtract,
    unit,
    vector_power_coefficients,
    zero,
)


def brute_force_power(series_by_coord, power_index, dim, order):
    """Expand ``prod_i W_i(p)^{n_i}`` by repeated dense polynomial multiplication."""
    out = {zero(dim): 1.0 + 0j}
    for i, ni in enumerate(power_index):
        for _ in range(ni):
            nxt = {}
            for ma, ca in out.items():
                for mb, cb in series_by_coord[i].items():
                    h = tuple(x + y for x, y in zip(ma, mb))
                    if sum(h) <= order:
                        nxt[h] = nxt.get(h, 0) + ca * cb
            out = nxt
    return {k: v for k, v in out.items() if v != 0}


class TestEnumeration:
    def test_order3_dim2_listing(self):
        assert enumerate_indices(3, 2) == ((3, 0), (2, 1), (1, 2), (0, 3))

    def test_zero_order_single_index(self):
        assert enumerate_indices(0, 5) == ((0, 0, 0, 0, 0),)

    def test_order2_dim3_matches_brute_force(self):
        brute = {t for t in itertools.product(range(3), repeat=3) if sum(t) == 2}
        got = enumerate_indices(2, 3)
        assert len(got) == 6
        assert set(got) == brute

    def test_graded_reverse_lexicographic(self):
        got = enumerate_indices(2, 3)
        assert got == ((2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1), (0, 0, 2))

    @pytest.mark.parametrize("order", range(0, 11))
    @pytest.mark.parametrize("dim", range(1, 6))
    def test_count_is_binomial(self, order, dim):
        assert len(enumerate_indices(order, dim)) == comb(order + dim - 1, dim - 1)

    def test_stable_and_duplicate_free(self):
        a, b = enumerate_indices(6, 4), enumerate_indices(6, 4)
        assert a == b
        assert len(set(a)) == len(a)

    def test_indices_up_to_is_graded(self):
        idx = indices_up_to(3, 2, min_order=1)
        assert [sum(m) for m in idx] == sorted(sum(m) for m in idx)
        assert len(idx) == 2 + 3 + 4

    def test_basis_position(self):
        b = basis(3, 2)
        assert len(b) == 4
        assert b.position((1, 2)) == 2


class TestIndexAlgebra:
    def test_negative_entry_rejected(self):
        with pytest.raises(ValueError):
            check_index((1, -1))

    def test_subtract_rejects_negative_result(self):
        with pytest.raises(ValueError):
            subtract((1, 0), (0, 1))

    def test_add_subtract_roundtrip(self):
        assert subtract(add((1, 2), (3, 0)), (3, 0)) == (1, 2)

    def test_unit_and_order(self):
        assert unit(1, 3) == (0, 1, 0)
        assert index_order((2, 0, 3)) == 5


class TestScalarPowers:
    def test_power_one_reproduces_series(self):
        series = {(1, 0): 2.0, (0, 1): -1.0, (2, 1): 0.5j}
        H = scalar_power_coefficients(series, None, 1, 4, dimension=2)
        assert {k: v for k, v in H.items() if v != 0} == series

    def test_power_zero_is_unit(self):
        H = scalar_power_coefficients({(1, 0): 3.0}, None, 0, 4, dimension=2)
        assert H == {(0, 0): 1.0}

    def test_square_of_sum(self):
        H = scalar_power_coefficients({(1, 0): 1.0, (0, 1): 1.0}, None, 2, 2, dimension=2)
        assert H[(2, 0)] == pytest.approx(1.0)
        assert H[(1, 1)] == pytest.approx(2.0)
        assert H[(0, 2)] == pytest.approx(1.0)

    def test_constant_term_rejected(self):
        with pytest.raises(ValueError):
            scalar_power_coefficients({(0, 0): 1.0, (1, 0): 1.0}, None, 2, 3, dimension=2)

    def test_table_power_one_has_no_constant(self):
        table = CompositionTable({(1, 0): 1.0}, 2, 3)
        assert table.power(1).get((0, 0), 0) == 0


class TestVectorPowers:
    def test_unit_power_selects_coordinate(self):
        series = {(1, 0): np.array([1.0, 2.0]), (1, 1): np.array([0.0, 3.0])}
        H = vector_power_coefficients(series, (0, 1), 3, dimension=2)
        assert {k: v for k, v in H.items() if v != 0} == {(1, 0): 2.0, (1, 1): 3.0}

    def test_zero_power_is_unit(self):
        series = {(1, 0): np.array([1.0, 2.0])}
        assert vector_power_coefficients(series, (0, 0), 3, dimension=2) == {(0, 0): 1.0}

    def test_identity_series_monomial(self):
        series = {(1, 0): np.array([1.0, 0.0]), (0, 1): np.array([0.0, 1.0])}
        H = vector_power_coefficients(series, (1, 2), 5, dimension=2)
        assert {k: v for k, v in H.items() if abs(v) > 0} == {(1, 2): 1.0}


def random_cubic_series(rng, dim, coords):
    series = {}
    for m in indices_up_to(3, dim, min_order=1):
        if rng.random() < 0.7:
            series[m] = rng.standard_normal(coords) + 1j * rng.standard_normal(coords)
    if not series:
        series[unit(0, dim)] = np.ones(coords, dtype=complex)
    return series


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(1, 3), coords=st.integers(1, 4),
       order=st.integers(1, 6), data=st.data())
def test_vector_power_matches_brute_force(seed, dim, coords, order, data):
    rng = np.random.default_rng(seed)
    series = random_cubic_series(rng, dim, coords)
    power = tuple(data.draw(st.lists(st.integers(0, 2), min_size=coords, max_size=coords)))
    by_coord = [{m: complex(v[i]) for m, v in series.items() if v[i] != 0} for i in range(coords)]
    expected = brute_force_power(by_coord, power, dim, order)
    got = vector_power_coefficients(series, power, order, dimension=dim)
    scale = max([abs(v) for v in expected.values()] + [1.0])
    for h in set(expected) | set(got):
        assert abs(got.get(h, 0) - expected.get(h, 0)) <= 1e-12 * scale


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(1, 3))
def test_product_matches_pointwise_evaluation(seed, dim):
    rng = np.random.default_rng(seed)
    a = {m: complex(rng.standard_normal()) for m in indices_up_to(2, dim, min_order=1)}
    b = {m: complex(rng.standard_normal()) for m in indices_up_to(2, dim, min_order=1)}
    prod = multiply_series(a, b, 4)
    p = rng.standard_normal(dim)

    def ev(s):
        keys = list(s)
        return np.dot(evaluate_monomials(keys, p), [s[k] for k in keys])

    assert ev(prod) == pytest.approx(ev(a) * ev(b), rel=1e-12, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(order=st.integers(0, 8), dim=st.integers(1, 4))
def test_enumeration_entries_sum_to_order(order, dim):
    idx = enumerate_indices(order, dim)
    assert all(sum(m) == order and len(m) == dim and min(m) >= 0 for m in idx)
