import itertools
import json
from pathlib import Path

import numpy as np
import pytest

from twostage.multiindex import (
    degree,
    enumerate_index_set,
    holder_order,
    index_set_size,
    monomial_eval,
    monomial_matrix,
)

GOLDEN = Path(__file__).parent / "golden" / "index_sets.json"


@pytest.mark.parametrize("alpha, expected", [(3, 2), (2.5, 2), (2.0001, 2), (4, 3), (0.5, 0), (1, 0)])
def test_holder_order(alpha, expected):
    assert holder_order(alpha) == expected


@pytest.mark.parametrize("alpha", [0, -1.0])
def test_holder_order_rejects_nonpositive(alpha):
    with pytest.raises(ValueError):
        holder_order(alpha)


def test_enumerate_small_cases():
    assert enumerate_index_set(2, 1).indices == ((0,), (1,), (2,))
    assert enumerate_index_set(0, 3).indices == ((0, 0, 0),)
    assert enumerate_index_set(2, 2).indices == ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0))


def test_golden_enumerations():
    golden = json.loads(GOLDEN.read_text())
    for key, expected in golden.items():
        r, d = map(int, key.split(","))
        assert [list(i) for i in enumerate_index_set(r, d)] == expected, key


@pytest.mark.parametrize("r, d, size", [(2, 2, 6), (5, 1, 6), (0, 7, 1), (2, 3, 10), (3, 4, 35)])
def test_index_set_size(r, d, size):
    assert index_set_size(r, d) == size


def test_size_identity_exhaustive():
    for r in range(7):
        for d in range(1, 5):
            iset = enumerate_index_set(r, d)
            assert len(iset) == index_set_size(r, d)
            brute = sum(1 for t in itertools.product(range(r + 1), repeat=d) if sum(t) <= r)
            assert len(iset) == brute


def test_enumeration_order():
    for r in range(7):
        for d in range(1, 5):
            idx = enumerate_index_set(r, d).indices
            assert idx[0] == (0,) * d
            for a, b in zip(idx, idx[1:]):
                assert degree(a) <= degree(b)
                if degree(a) == degree(b):
                    assert a < b


def test_position_roundtrip():
    iset = enumerate_index_set(3, 3)
    for k, i in enumerate(iset):
        assert iset.position(i) == k
    assert (1, 1, 1) in iset
    assert (2, 2, 0) not in iset


@pytest.mark.parametrize("r, d", [(-1, 2), (2, 0)])
def test_bad_precondition(r, d):
    with pytest.raises(ValueError):
        enumerate_index_set(r, d)
    with pytest.raises(ValueError):
        index_set_size(r, d)


def test_monomial_eval():
    assert monomial_eval((2, 3), (1, 2)) == 18
    assert monomial_eval((0.0, -5.0), (0, 0)) == 1
    assert monomial_eval((0.5, -1), (0, 3)) == -1
    with pytest.raises(ValueError):
        monomial_eval((1.0, 2.0), (1,))


def test_monomial_matrix_matches_scalar():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-2, 2, size=(20, 3))
    iset = enumerate_index_set(3, 3)
    Z = monomial_matrix(pts, iset)
    for k, x in enumerate(pts):
        for j, i in enumerate(iset):
            assert Z[k, j] == pytest.approx(monomial_eval(x, i), rel=1e-14, abs=1e-15)
    assert np.all(Z[:, 0] == 1.0)


def test_monomial_difference_bound():
    # |x^i - y^i| <= ||x - y|| * sum_{k=1}^{|i|} ||x||^{|i|-k} ||y||^{k-1}
    rng = np.random.default_rng(20240601)
    draws = 0
    for d in range(1, 5):
        pool = [i for i in enumerate_index_set(6, d) if degree(i) >= 1]
        for _ in range(2600):
            x = rng.uniform(-2, 2, d)
            y = rng.uniform(-2, 2, d)
            i = pool[rng.integers(len(pool))]
            m = degree(i)
            nx, ny = np.linalg.norm(x), np.linalg.norm(y)
            bound = np.linalg.norm(x - y) * sum(nx ** (m - k) * ny ** (k - 1) for k in range(1, m + 1))
            lhs = abs(monomial_eval(x, i) - monomial_eval(y, i))
            assert lhs <= bound * (1 + 1e-12) + 1e-14
            draws += 1
    assert draws >= 10_000
