import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from loe_attack.permutation import Permutation, permute_weight, random_permutation, shuffle


def perms(max_h=12):
    return st.integers(1, max_h).flatmap(lambda h: st.permutations(list(range(h)))).map(Permutation)


def test_rejects_non_bijection():
    with pytest.raises(ValueError):
        Permutation([0, 0, 1])
    with pytest.raises(ValueError):
        Permutation([1, 2, 3])


def test_identity_shuffle():
    x = np.array([4.0, 5.0, 6.0])
    np.testing.assert_array_equal(shuffle(x, Permutation.identity(3)), x)


def test_cycle_example():
    np.testing.assert_array_equal(shuffle(np.array([1, 2, 3]), Permutation([1, 2, 0])), [3, 1, 2])


def test_length_mismatch():
    with pytest.raises(ValueError):
        shuffle(np.zeros(4), Permutation.identity(3))


@settings(max_examples=100, deadline=None)
@given(perms())
def test_inverse_laws(p):
    x = np.arange(len(p), dtype=float) * 1.5 - 2
    np.testing.assert_array_equal(shuffle(shuffle(x, p), p.inverse()), x)
    assert p.then(p.inverse()) == Permutation.identity(len(p))
    assert p.inverse().then(p) == Permutation.identity(len(p))


@settings(max_examples=100, deadline=None)
@given(perms(8), st.data())
def test_matches_matrix_product(p, data):
    q = Permutation(data.draw(st.permutations(list(range(len(p))))))
    x = np.random.default_rng(len(p)).normal(size=(3, len(p)))
    np.testing.assert_array_equal(p.apply(x), x @ p.matrix())
    np.testing.assert_array_equal(p.then(q).matrix(), p.matrix() @ q.matrix())
    np.testing.assert_array_equal(p.inverse().matrix(), p.matrix().T)


def test_permute_weight_is_equivariant(rng):
    W = rng.normal(size=(5, 7))
    pin, pout = Permutation.random(5, rng), Permutation.random(7, rng)
    x = rng.normal(size=5)
    np.testing.assert_allclose(pin.apply(x) @ permute_weight(W, pin, pout), pout.apply(x @ W), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(permute_weight(W, pin, pout), pin.matrix().T @ W @ pout.matrix())


def test_random_h1_is_identity(rng):
    assert random_permutation(1, rng) == Permutation.identity(1)


def test_random_same_seed_same_permutation():
    a = random_permutation(20, np.random.default_rng(7))
    b = random_permutation(20, np.random.default_rng(7))
    assert a == b


def test_random_uniform_chi_square():
    rng = np.random.default_rng(99)
    h, n = 5, 100_000
    counts = np.zeros((h, h))
    full = {}
    for _ in range(n):
        s = random_permutation(h, rng).sigma
        counts[np.arange(h), s] += 1
        full[tuple(s)] = full.get(tuple(s), 0) + 1
    # each element lands in each position with probability 1/h
    for i in range(h):
        assert stats.chisquare(counts[i]).pvalue > 0.01
    # and all h! permutations are equally likely
    obs = np.array([full.get(k, 0) for k in sorted(full)])
    assert len(obs) == math.factorial(h)
    assert stats.chisquare(obs).pvalue > 0.01
