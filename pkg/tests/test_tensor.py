import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobbnet.tensor import Shape2D, ShapeError, Tensor, conv_output_shape, conv_output_size, matmul, new


def placements(size, kernel, stride, pad):
    """Count kernel start positions on a padded axis by walking it."""
    padded = size + 2 * pad
    return sum(1 for start in range(0, padded - kernel + 1, stride))


def test_new_2x2():
    t = new([2, 2], [1, 2, 3, 4])
    assert t.shape == (2, 2)
    assert t[1, 0] == 3.0


def test_new_length_mismatch_names_both_lengths():
    with pytest.raises(ShapeError, match=r"2 .*3"):
        new([3], [0, 0])


def test_new_scalar_like():
    t = new([1, 1, 1], [5])
    assert t[0, 0, 0] == 5.0


def test_new_copies_data():
    data = np.array([1.0, 2.0])
    t = new([2], data)
    data[0] = 99
    assert t[0] == 1.0
    with pytest.raises(ValueError):
        t.array[0] = 3


@pytest.mark.parametrize("shape", [[], [0], [2, -1]])
def test_bad_shapes(shape):
    with pytest.raises(ShapeError):
        Tensor(shape, [])


def test_row_major_readback():
    rng = np.random.default_rng(3)
    shape = (2, 3, 4)
    data = rng.normal(size=24)
    t = new(shape, data)
    for flat, idx in enumerate(itertools.product(*map(range, shape))):
        assert t[idx] == data[flat]


def test_matmul_identity():
    m = new([3, 2], [1, 2, 3, 4, 5, 6])
    assert matmul(Tensor.from_array(np.eye(3)), m) == m


def test_matmul_hand():
    out = matmul(new([2, 2], [1, 2, 3, 4]), new([2, 1], [1, 1]))
    assert out.array.tolist() == [[3.0], [7.0]]


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    expected = [[sum(a[i, k] * b[k, j] for k in range(7)) for j in range(3)] for i in range(5)]
    np.testing.assert_allclose(matmul(Tensor.from_array(a), Tensor.from_array(b)).array, expected,
                               rtol=1e-12)


def test_matmul_inner_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor.zeros([2, 3]), Tensor.zeros([2, 3]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5),
       st.integers(0, 2**31))
def test_matmul_associative(m, n, p, q, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Tensor.from_array(rng.uniform(-1, 1, s)) for s in [(m, n), (n, p), (p, q)])
    left = matmul(matmul(a, b), c).array
    right = matmul(a, matmul(b, c)).array
    np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-12)


def test_conv_output_worked_demo():
    assert conv_output_size(5, 3, 2, 1) == 3


def test_conv_output_same_padding():
    assert conv_output_shape(Shape2D(28, 28), 3, 1, 1) == Shape2D(28, 28)


def test_conv_output_full_kernel():
    assert conv_output_size(7, 7, 1, 0) == 1


def test_conv_output_kernel_too_large():
    with pytest.raises(ShapeError):
        conv_output_size(3, 7, 1, 1)


def test_conv_output_non_divisible_rejected():
    with pytest.raises(ShapeError, match="divide"):
        conv_output_size(6, 3, 2, 0)


def test_conv_output_matches_placement_count_exhaustively():
    checked = 0
    for h in range(1, 65):
        for n in range(1, 10):
            for s in range(1, 5):
                for p in range(0, 5):
                    span = h - n + 2 * p
                    if span < 0 or span % s:
                        continue
                    assert conv_output_size(h, n, s, p) == placements(h, n, s, p)
                    checked += 1
    assert checked > 1000


def test_elementwise_plumbing():
    a = new([2], [1, 2])
    b = new([2], [3, 5])
    assert (a + b).array.tolist() == [4, 7]
    assert (b - a).array.tolist() == [2, 3]
    assert (a * b).array.tolist() == [3, 10]
    assert a.scale(2).array.tolist() == [2, 4]
    assert Tensor.ones([2, 2]).reshape([4]).array.tolist() == [1, 1, 1, 1]
    with pytest.raises(ShapeError):
        a + new([3], [1, 2, 3])


def test_shape2d_parse():
    assert Shape2D.parse("128x64") == Shape2D(128, 64)
    with pytest.raises(ShapeError):
        Shape2D.parse("128")
