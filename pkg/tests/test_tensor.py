import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chestnet.tensor import (
    Tensor,
    add,
    elementwise,
    matmul,
    max0,
    mean_axis,
    reshape,
    scale,
    sub,
    sum_axis,
    tensor_new,
    transpose2d,
)

from oracles import matmul_loops, normwise_error


def test_new_zeros():
    t = tensor_new([2, 2])
    assert t.tolist() == [[0, 0], [0, 0]]
    assert t.dtype == np.float32


def test_new_explicit_data():
    t = tensor_new([3], "data", data=[1, 2, 3])
    assert t.tolist() == [1, 2, 3]


def test_new_seeded_uniform_is_reproducible():
    a = tensor_new([2, 2], "uniform", low=-1, high=1, seed=42)
    b = tensor_new([2, 2], "uniform", low=-1, high=1, seed=42)
    assert a.equal(b)
    assert np.all(np.abs(np.asarray(a)) <= 1)


@pytest.mark.parametrize("shape", [[0], [2, -1], []])
def test_new_rejects_bad_dimensions(shape):
    with pytest.raises(ValueError):
        tensor_new(shape)


def test_new_rejects_data_length_mismatch():
    with pytest.raises(ValueError):
        tensor_new([2, 2], "data", data=[1, 2, 3])


def test_tensor_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        np.asarray(t)[0] = 5


def test_strides_and_offset():
    t = tensor_new([2, 3, 4])
    assert t.strides == (12, 4, 1)
    assert t.offset((1, 2, 3)) == 23
    flat = tensor_new([2, 3], "data", data=np.arange(6))
    assert flat.data[flat.offset((1, 0))] == 3


def test_elementwise_examples():
    assert max0(Tensor([-1, 0, 2.5])).tolist() == [0, 0, 2.5]
    assert add(Tensor([1, 2]), Tensor([3, 4])).tolist() == [4, 6]
    assert scale(Tensor([2, 4]), 0.5).tolist() == [1, 2]
    assert elementwise("sub", Tensor([3, 4]), Tensor([1, 1])).tolist() == [2, 3]
    assert elementwise("mul", Tensor([3, 4]), 2).tolist() == [6, 8]
    assert elementwise("max0", Tensor([-3, 4])).tolist() == [0, 4]


def test_elementwise_shape_mismatch():
    with pytest.raises(ValueError):
        sub(Tensor([1, 2]), Tensor([1, 2, 3]))


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    m = Tensor([[1, 2], [3, 4]])
    assert matmul(eye, m).tolist() == [[1, 2], [3, 4]]
    assert matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).tolist() == [[11]]


def test_matmul_inner_mismatch():
    with pytest.raises(ValueError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_matches_triple_loop(rng):
    a = rng.uniform(-1, 1, (5, 7))
    b = rng.uniform(-1, 1, (7, 3))
    got = matmul(Tensor(a), Tensor(b))
    assert normwise_error(got, matmul_loops(a.astype(np.float32), b.astype(np.float32))) <= 1e-6


def test_reshape_transpose_reductions():
    t = tensor_new([2, 3], "data", data=range(6))
    assert reshape(t, [6]).tolist() == list(range(6))
    assert transpose2d(Tensor([[1, 2], [3, 4]])).tolist() == [[1, 3], [2, 4]]
    assert sum_axis(Tensor([[1, 2], [3, 4]]), 0).tolist() == [4, 6]
    assert mean_axis(Tensor([[1, 2], [3, 4]]), 1).tolist() == [1.5, 3.5]
    with pytest.raises(ValueError):
        reshape(t, [4])
    with pytest.raises(ValueError):
        sum_axis(t, 2)


def test_precision_modes():
    assert tensor_new([2], dtype=np.float64).dtype == np.float64
    with pytest.raises(TypeError):
        tensor_new([2], dtype=np.int32)


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4)


@given(shapes, st.integers(0, 2**31 - 1))
def test_reshape_round_trip_is_bit_exact(shape, seed):
    x = tensor_new(shape, "uniform", seed=seed)
    back = reshape(reshape(x, [x.size]), shape)
    assert back.equal(x)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_double_transpose_is_identity(m, n, seed):
    x = tensor_new([m, n], "uniform", seed=seed)
    assert transpose2d(transpose2d(x)).equal(x)


@given(st.integers(0, 2**31 - 1))
def test_integer_matmul_is_associative(seed):
    r = np.random.default_rng(seed)
    a, b, c = (Tensor(r.integers(-8, 9, size=s)) for s in [(3, 4), (4, 5), (5, 2)])
    assert matmul(matmul(a, b), c).equal(matmul(a, matmul(b, c)))


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_matmul_8x8x8_against_oracle(seed):
    r = np.random.default_rng(seed)
    a = r.uniform(-1, 1, (8, 8)).astype(np.float32)
    b = r.uniform(-1, 1, (8, 8)).astype(np.float32)
    assert normwise_error(matmul(Tensor(a), Tensor(b)), matmul_loops(a, b)) <= 1e-6


def test_ops_keep_values_finite(rng):
    x = Tensor(rng.uniform(-1e3, 1e3, (4, 4)))
    for out in (add(x, x), sub(x, x), max0(x), scale(x, 3.0), matmul(x, x)):
        assert np.isfinite(np.asarray(out)).all()
