import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emoface.autodiff import (Adam, AdamState, Tensor, adam_step, concat, cross_entropy, dumps_tensors,
                              exp, gather, getitem, layer_norm, load_tensors, loads_tensors, log,
                              log_softmax, matmul, mean, no_grad, reshape, save_tensors, sigmoid,
                              softmax, square, stack, tanh, transpose, tsum)
from emoface.autodiff.gradcheck import max_relative_error
from emoface.errors import DimensionError, FormatError, NumericError


# -- matmul ------------------------------------------------------------------------

def test_matmul_identity_and_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), a).data, a.data)
    out = matmul(a, Tensor([[5.0, 6.0], [7.0, 8.0]]))
    assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_zero_and_shape_error():
    z = matmul(Tensor(np.zeros((3, 2))), Tensor(np.random.default_rng(0).normal(size=(2, 4))))
    assert np.array_equal(z.data, np.zeros((3, 4)))
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def _loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = sum(a[i, k] * b[k, j] for k in range(a.shape[1]))
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_matmul_matches_loop(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, _loop_matmul(a, b), rtol=1e-12, atol=1e-12)


# -- softmax -----------------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor([1.0, 1.0])).data, [0.5, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-15)
    big = softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [0.5, 0.5], atol=1e-15)


def test_softmax_nan_raises():
    with pytest.raises(NumericError):
        softmax(Tensor([0.0, np.nan]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(x, c):
    p = softmax(Tensor(x)).data
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(softmax(Tensor(x + c)).data, p, atol=1e-12)


def test_log_softmax_consistent():
    x = np.random.default_rng(1).normal(size=(3, 5))
    np.testing.assert_allclose(np.exp(log_softmax(Tensor(x)).data), softmax(Tensor(x)).data, atol=1e-14)


# -- gather ------------------------------------------------------------------------

def test_gather_identity_and_pad():
    x = np.random.default_rng(2).normal(size=(4, 3))
    assert np.array_equal(gather(Tensor(x), [0, 1, 2, 3]).data, x)
    assert np.array_equal(gather(Tensor(x), [4], pad_marker=4).data, np.zeros((1, 3)))


def test_gather_repeated_index_accumulates():
    x = Tensor(np.random.default_rng(3).normal(size=(4, 3)), requires_grad=True)
    tsum(gather(x, [2, 2])).backward()
    expected = np.zeros((4, 3))
    expected[2] = 2.0
    assert np.array_equal(x.grad, expected)
    # the same by central differences
    err = max_relative_error(lambda a: gather(a, [2, 2, 0]), [Tensor(x.data)])
    assert err < 1e-4


def test_gather_out_of_range():
    assert np.array_equal(gather(Tensor(np.ones((3, 2))), [3]).data, np.zeros((1, 2)))   # default PAD == V
    with pytest.raises(IndexError):
        gather(Tensor(np.ones((3, 2))), [4])
    with pytest.raises(IndexError):
        gather(Tensor(np.ones((3, 2))), [-1])
    with pytest.raises(IndexError):
        gather(Tensor(np.ones((3, 2))), [5], pad_marker=3)


# -- backward ------------------------------------------------------------------------

def test_sum_of_squares_gradient():
    x = Tensor(np.random.default_rng(4).normal(size=(3, 4)), requires_grad=True)
    tsum(square(x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=0)


def test_constant_gets_no_grad():
    c = Tensor(np.ones(3))
    x = Tensor(np.arange(3.0), requires_grad=True)
    tsum(c * x).backward()
    assert c.grad is None
    assert np.array_equal(x.grad, np.ones(3))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = tsum(x * 3.0)
    assert not y.requires_grad


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x
    tsum(y + y * 3.0).backward()
    np.testing.assert_allclose(x.grad, 8 * x.data)


def test_log_of_nonpositive_raises():
    with pytest.raises(NumericError):
        log(Tensor([1.0, 0.0]))


def _chain(a, b, c):
    return tanh(matmul(matmul(a, b), c))


@pytest.mark.parametrize("seed", range(100))
def test_matmul_chain_gradcheck(seed):
    rng = np.random.default_rng(seed)
    ins = [Tensor(rng.normal(size=(3, 3))) for _ in range(3)]
    assert max_relative_error(_chain, ins, seed=seed) < 1e-4


OPS = {
    "exp": lambda a: exp(a * 0.3),
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": lambda a: softmax(a, axis=-1),
    "log_softmax": lambda a: log_softmax(a, axis=0),
    "mean_axis": lambda a: mean(a, axis=1, keepdims=True),
    "transpose": lambda a: transpose(a) * Tensor(np.arange(12.0).reshape(4, 3)),
    "reshape": lambda a: reshape(a, (2, 6)) * Tensor(np.arange(12.0).reshape(2, 6)),
    "getitem": lambda a: getitem(a, (slice(1, 3), [0, 0, 2])),
    "concat": lambda a: concat([a, square(a)], axis=1),
    "stack": lambda a: stack([a, a * 2.0], axis=0),
    "broadcast_mul": lambda a: a * getitem(a, slice(0, 1)),
    "div": lambda a: a / (square(a) + 1.0),
    "layer_norm": lambda a: layer_norm(a, Tensor(np.linspace(0.5, 1.5, 4)), Tensor(np.linspace(-1, 1, 4))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradcheck(name):
    x = Tensor(np.random.default_rng(7).normal(size=(3, 4)))
    assert max_relative_error(OPS[name], [x]) < 1e-4


def test_cross_entropy_value_and_grad():
    logits = np.random.default_rng(5).normal(size=(2, 4))
    ce = cross_entropy(Tensor(logits), [1, 3]).data
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert abs(ce - -np.mean(np.log(p[[0, 1], [1, 3]]))) < 1e-12
    assert max_relative_error(lambda a: cross_entropy(a, [1, 3]), [Tensor(logits)]) < 1e-4


# -- Adam ----------------------------------------------------------------------------

def test_adam_first_step_magnitude():
    p = np.zeros((3, 2))
    state = AdamState.for_shapes([p.shape], lr=1e-4)
    adam_step([p], [np.ones_like(p)], state)
    assert np.all((np.abs(p) >= 0.99e-4) & (np.abs(p) <= 1e-4))
    assert np.all(p < 0)


def test_adam_zero_gradient_and_determinism():
    p = np.arange(4.0)
    state = AdamState.for_shapes([p.shape])
    adam_step([p], [np.zeros(4)], state)
    assert np.array_equal(p, np.arange(4.0))
    g = np.random.default_rng(0).normal(size=4)
    outs = []
    for _ in range(2):
        q = np.arange(4.0)
        s = AdamState.for_shapes([q.shape])
        adam_step([q], [g], s)
        adam_step([q], [g], s)
        outs.append(q)
    assert np.array_equal(outs[0], outs[1])


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step([np.zeros(3)], [np.zeros(4)], AdamState.for_shapes([(3,)]))


def test_adam_class_minimises_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        tsum(square(x)).backward()
        opt.step()
    assert np.abs(x.data).max() < 1e-2


# -- checkpoint container ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.normal(size=(2, 3)), "b/c": np.array(7.0), "empty": np.zeros((0, 4))}
    path = tmp_path / "x.emfc"
    save_tensors(path, tensors)
    back = load_tensors(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert np.array_equal(back[k], tensors[k])
    assert dumps_tensors(back) == path.read_bytes()


@pytest.mark.parametrize("cut", [0, 3, 7, 11, 20, -1])
def test_checkpoint_truncation_is_format_error(cut):
    data = dumps_tensors({"w": np.ones((2, 2))})
    with pytest.raises(FormatError):
        loads_tensors(data[:cut])


def test_checkpoint_bad_magic_and_version():
    data = bytearray(dumps_tensors({"w": np.ones(2)}))
    with pytest.raises(FormatError, match="magic"):
        loads_tensors(b"XXXX" + bytes(data[4:]))
    data[4] = 9
    with pytest.raises(FormatError, match="version"):
        loads_tensors(bytes(data))
