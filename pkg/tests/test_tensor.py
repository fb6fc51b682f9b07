import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gru_ntm.tensor import (
    NonFiniteError,
    Rng,
    ShapeError,
    concat,
    elementwise,
    matmul,
    rng_permutation,
)
from oracles import matmul_loops


def test_matmul_identity():
    a = [[1.0, 2.0], [3.0, 4.0]]
    np.testing.assert_array_equal(matmul(np.eye(2), a), a)


def test_matmul_dot():
    np.testing.assert_array_equal(matmul([[1, 2]], [[3], [4]]), [[11.0]])


@pytest.mark.parametrize("shape", [(5, 7, 3), (1, 1, 1), (4, 9, 6), (8, 2, 5)])
def test_matmul_matches_triple_loop(rng, shape):
    m, k, n = shape
    a = rng.uniform((m, k), -2, 2)
    b = rng.uniform((k, n), -2, 2)
    expected = np.array(matmul_loops(a.tolist(), b.tolist()))
    np.testing.assert_allclose(matmul(a, b), expected, rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_identity_exact(rng):
    a = rng.normal((4, 6))
    assert np.array_equal(matmul(np.eye(4), a), a)
    assert np.array_equal(matmul(a, np.eye(6)), a)


def test_elementwise_values():
    assert elementwise("sigmoid", 0.0) == 0.5
    np.testing.assert_array_equal(elementwise("relu", [-1, 0, 2]), [0, 0, 2])
    assert elementwise("tanh", 1.0) == pytest.approx(0.7615941559557649, abs=1e-15)
    np.testing.assert_array_equal(elementwise("add", [1, 2], [3, 4]), [4, 6])
    np.testing.assert_array_equal(elementwise("mul", [1, 2], 3), [3, 6])


def test_elementwise_errors():
    with pytest.raises(ShapeError):
        elementwise("add", [1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        elementwise("log", [1.0, 0.0])
    with pytest.raises(NonFiniteError):
        elementwise("exp", [1000.0])


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=20))
def test_sigmoid_tanh_ranges(xs):
    s = elementwise("sigmoid", xs)
    t = elementwise("tanh", xs)
    assert np.all((s >= 0) & (s <= 1))
    assert np.all((t >= -1) & (t <= 1))
    # strict bounds hold wherever float64 can still represent them
    small = np.abs(xs) < 30
    assert np.all((s[small] > 0) & (s[small] < 1))
    small = np.abs(xs) < 15
    assert np.all(np.abs(t[small]) < 1)


def test_concat():
    np.testing.assert_array_equal(concat([1, 2], [3]), [1, 2, 3])
    np.testing.assert_array_equal(concat(np.zeros(0), [4.0, 5.0]), [4, 5])
    a = np.arange(4.0).reshape(2, 2)
    b = np.arange(10.0, 16.0).reshape(2, 3)
    out = concat(a, b, axis=1)
    assert out.shape == (2, 5)
    np.testing.assert_array_equal(out, [[0, 1, 10, 11, 12], [2, 3, 13, 14, 15]])
    with pytest.raises(ShapeError):
        concat(np.ones((2, 2)), np.ones((3, 2)), axis=1)


def test_permutation_edges():
    assert rng_permutation(Rng(1), 0) == []
    assert rng_permutation(Rng(1), 1) == [0]


@given(st.integers(0, 10_000), st.integers(0, 200))
@settings(max_examples=50)
def test_permutation_is_deterministic_permutation(seed, n):
    p1 = rng_permutation(Rng(seed), n)
    p2 = rng_permutation(Rng(seed), n)
    assert p1 == p2
    assert sorted(p1) == list(range(n))


def test_rng_streams_independent_and_frozen():
    a = Rng(7).uniform(5)
    assert np.array_equal(a, Rng(7).uniform(5))
    assert not np.array_equal(a, Rng(7, stream=1).uniform(5))
    assert not np.array_equal(a, Rng(8).uniform(5))
    assert np.all((a >= 0) & (a < 1))


def test_rng_normal_moments():
    z = Rng(3).normal(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1) < 0.01


def test_rng_below_uniformity():
    r = Rng(5)
    counts = np.bincount([r.below(3) for _ in range(30_000)], minlength=3)
    assert np.all(np.abs(counts - 10_000) < 400)


def test_ops_deterministic(rng):
    a, b = rng.normal((6, 5)), rng.normal((5, 4))
    assert np.array_equal(matmul(a, b), matmul(a, b))
    assert np.array_equal(elementwise("tanh", a), elementwise("tanh", a))
