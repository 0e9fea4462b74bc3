"""Autodiff core: forward values against numpy, gradients against central
finite differences, and the shape/finiteness contracts."""

import numpy as np
import pytest

from diffdrive import tensor as T
from diffdrive.errors import DimensionError, NumericError, UsageError
from diffdrive.tensor import Tensor


def numeric_grad(build_loss, arrays, which, h=1e-5):
    """Central-difference gradient of build_loss(arrays) w.r.t. arrays[which]."""
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[which])
    flat = base[which].reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = build_loss([a.copy() for a in base])
        flat[i] = orig - h
        lo = build_loss([a.copy() for a in base])
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return g


def check_grads(build_graph, shapes, rng, atol=1e-7, rtol=1e-4):
    """build_graph(tensors) -> scalar Tensor; compares autodiff grads with
    finite differences for every input."""
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_graph(tensors)
    loss.backward()

    def loss_value(arrs):
        with T.no_grad():
            return build_graph([Tensor(a) for a in arrs]).item()

    for i, t in enumerate(tensors):
        want = numeric_grad(loss_value, arrays, i)
        got = t.grad
        assert got is not None, f"input {i} got no gradient"
        np.testing.assert_allclose(got, want, rtol=rtol, atol=atol,
                                   err_msg=f"input {i}")


# -- forward values ----------------------------------------------------------


def test_arithmetic_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4)) + 2.0
    ta, tb = Tensor(a), Tensor(b)
    np.testing.assert_array_equal((ta + tb).data, a + b)
    np.testing.assert_array_equal((ta - tb).data, a - b)
    np.testing.assert_array_equal((ta * tb).data, a * b)
    np.testing.assert_array_equal((ta / tb).data, a / b)
    np.testing.assert_array_equal((-ta).data, -a)
    np.testing.assert_array_equal((ta + 1.5).data, a + 1.5)
    np.testing.assert_array_equal((2.0 * ta).data, 2.0 * a)
    np.testing.assert_array_equal((1.0 / tb).data, 1.0 / b)


def test_matmul_matches_numpy():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 3))
    b = rng.standard_normal((3, 7))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, a @ b)
    c = rng.standard_normal((2, 5, 3))
    np.testing.assert_allclose((Tensor(c) @ Tensor(b)).data, c @ b)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 9)) * 30.0  # large logits must not overflow
    p = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), np.ones(6), atol=1e-12)
    assert (p >= 0).all()


def test_layer_norm_moments_and_constant_row():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 16))
    y = T.layer_norm(Tensor(x)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)
    flat = T.layer_norm(Tensor(np.full((2, 8), 3.7))).data
    np.testing.assert_array_equal(flat, np.zeros((2, 8)))


def test_gelu_reference_points():
    # x * Phi(x) at a few hand values
    x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    y = T.gelu(Tensor(x)).data
    from scipy.stats import norm
    np.testing.assert_allclose(y, x * norm.cdf(x), atol=1e-12)


def test_embedding_and_gather():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    out = T.embedding(table, np.array([[0, 2], [3, 3]]))
    assert out.shape == (2, 2, 3)
    np.testing.assert_array_equal(out.data[0, 1], [6.0, 7.0, 8.0])

    x = Tensor(np.arange(10.0).reshape(2, 5))
    picked = T.gather_last(x, np.array([[0, 4], [1, 1]]))
    np.testing.assert_array_equal(picked.data, [[0.0, 4.0], [6.0, 6.0]])


def test_scatter_rows_places_and_sums():
    a = Tensor(np.ones((3, 2)))
    out = T.scatter_rows(a, np.array([0, 2, 0]), 4)
    np.testing.assert_array_equal(out.data, [[2, 2], [0, 0], [1, 1], [0, 0]])


# -- gradients against finite differences -----------------------------------


def test_grad_elementwise_chain():
    rng = np.random.default_rng(10)
    for trial in range(5):
        check_grads(
            lambda ts: T.tsum(ts[0] * ts[1] + ts[0] / (ts[1] * ts[1] + 3.0)),
            [(3, 4), (3, 4)], rng)


def test_grad_leading_broadcast():
    rng = np.random.default_rng(11)
    check_grads(lambda ts: T.tsum(ts[0] * ts[1]), [(2, 3, 4), (4,)], rng)
    check_grads(lambda ts: T.tsum(ts[0] + ts[1]), [(3, 4), (2, 3, 4)], rng)
    check_grads(lambda ts: T.tsum(ts[0] / (ts[1] * 0.1 + 2.0)), [(5, 2), (2,)], rng)


def test_grad_matmul():
    rng = np.random.default_rng(12)
    check_grads(lambda ts: T.tsum(ts[0] @ ts[1]), [(4, 3), (3, 5)], rng)
    check_grads(lambda ts: T.tsum(ts[0] @ ts[1]), [(2, 4, 3), (3, 5)], rng)
    check_grads(lambda ts: T.tsum(ts[0] @ ts[1]), [(2, 4, 3), (2, 3, 5)], rng)
    check_grads(lambda ts: T.tsum(ts[0] @ ts[1]), [(3,), (3, 5)], rng)


def test_grad_softmax_layernorm_gelu():
    rng = np.random.default_rng(13)
    w = rng.standard_normal((6, 1))
    w2 = rng.standard_normal((4, 6))
    check_grads(lambda ts: T.tsum(T.softmax(ts[0]) @ Tensor(w)), [(4, 6)], rng)
    check_grads(lambda ts: T.tsum(T.layer_norm(ts[0]) * Tensor(w2)), [(4, 6)], rng)
    check_grads(lambda ts: T.tsum(T.gelu(ts[0])), [(5, 3)], rng)


def test_grad_reductions_and_shapes():
    rng = np.random.default_rng(14)
    w1 = rng.standard_normal((2, 1))
    w2 = rng.standard_normal((3, 4))
    check_grads(lambda ts: T.tsum(T.tmean(ts[0], axis=1) * Tensor(np.arange(1.0, 4.0))),
                [(2, 5, 3)], rng)
    check_grads(lambda ts: T.tsum(T.tmean(ts[0], axis=(0, 2), keepdims=True)), [(2, 5, 3)], rng)
    check_grads(lambda ts: T.tsum(T.reshape(ts[0], (6, 2)) @ Tensor(w1)), [(3, 4)], rng)
    check_grads(lambda ts: T.tsum(T.transpose(ts[0], (1, 0, 2)) * 2.0), [(2, 3, 4)], rng)
    check_grads(lambda ts: T.tsum(T.broadcast_to(ts[0], (5, 3, 4))), [(3, 4)], rng)
    check_grads(lambda ts: T.tsum(T.broadcast_to(ts[0], (3, 4)) * Tensor(w2)), [(3, 1)], rng)


def test_grad_concat_slice():
    rng = np.random.default_rng(15)
    w1 = rng.standard_normal((2, 7))
    w2 = rng.standard_normal((4, 2))
    check_grads(lambda ts: T.tsum(T.concat([ts[0], ts[1]], axis=1) * Tensor(w1)),
                [(2, 3), (2, 4)], rng)
    check_grads(lambda ts: T.tsum(T.slice_axis(ts[0], 1, 1, 3) * Tensor(w2)),
                [(4, 5)], rng)


def test_grad_lookup_ops():
    rng = np.random.default_rng(16)
    idx = np.array([0, 2, 2, 1])
    w = rng.standard_normal((4, 3))
    w5 = rng.standard_normal((5, 3))
    w32 = rng.standard_normal((3, 2))
    check_grads(lambda ts: T.tsum(T.embedding(ts[0], idx) * Tensor(w)), [(3, 3)], rng)
    check_grads(lambda ts: T.tsum(T.index_rows(ts[0], idx) * Tensor(w)), [(3, 3)], rng)
    check_grads(lambda ts: T.tsum(T.scatter_rows(ts[0], idx, 5) * Tensor(w5)), [(4, 3)], rng)
    gi = np.array([[0, 2], [1, 1], [2, 0]])
    check_grads(lambda ts: T.tsum(T.gather_last(ts[0], gi) * Tensor(w32)), [(3, 4)], rng)


def test_grad_log_clamp():
    rng = np.random.default_rng(17)
    arrays = [np.abs(rng.standard_normal((3, 4))) + 0.5]
    tensors = [Tensor(arrays[0].copy(), requires_grad=True)]
    loss = T.tsum(T.tlog(tensors[0]))
    loss.backward()
    np.testing.assert_allclose(tensors[0].grad, 1.0 / arrays[0], rtol=1e-12)

    # clamp gradient is 0 below the floor, 1 above
    x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    T.tsum(T.clamp_min(x, 0.0)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0])


def test_grad_dropout_mask():
    rng = np.random.default_rng(18)
    mask = T.make_dropout_mask(rng, (4, 6), 0.5)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    T.tsum(T.dropout(x, mask)).backward()
    np.testing.assert_array_equal(x.grad, mask)
    np.testing.assert_array_equal(T.make_dropout_mask(rng, (3,), 0.0), np.ones(3))
    np.testing.assert_array_equal(T.make_dropout_mask(rng, (3,), 1.0), np.zeros(3))
    # inverted masks keep the expectation near 1
    big = T.make_dropout_mask(rng, (20000,), 0.3)
    assert abs(big.mean() - 1.0) < 0.02


def test_grad_shared_input_accumulates_paths():
    rng = np.random.default_rng(19)
    check_grads(lambda ts: T.tsum(ts[0] * ts[0] + T.gelu(ts[0])), [(3, 3)], rng)


# -- contracts ---------------------------------------------------------------


def test_backward_nonscalar_rejected():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(UsageError):
        (x * 2.0).backward()


def test_repeated_backward_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    loss = T.tsum(x * x)
    loss.backward()
    first = x.grad.copy()
    loss2 = T.tsum(x * x)
    loss2.backward()
    np.testing.assert_allclose(x.grad, 2.0 * first)


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.tsum(x * 2.0)
    assert not y.requires_grad
    with pytest.raises(UsageError):
        # backward on a scalar with no graph is fine, but grads stay empty;
        # the usage error here is from requesting item() on a 3-vector
        (x * 1.0).item()


def test_shape_mismatch_rejected():
    a = Tensor(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        a + Tensor(np.ones((3, 2)))
    with pytest.raises(DimensionError):
        a * Tensor(np.ones((2,)))  # suffix (3,) would conform, (2,) must not
    with pytest.raises(DimensionError):
        a @ Tensor(np.ones((2, 2)))
    with pytest.raises(DimensionError):
        T.broadcast_to(a, (2, 5))


def test_nonfinite_results_raise():
    zero = Tensor(np.zeros(3))
    one = Tensor(np.ones(3))
    with pytest.raises(NumericError):
        one / zero
    with pytest.raises(NumericError):
        T.tlog(zero)
    with pytest.raises(NumericError):
        Tensor(np.array([np.nan]))
    big = Tensor(np.full(2, 1e308))
    with pytest.raises(NumericError):
        big * big


def test_grad_flag_propagation():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3))
    assert (a + b).requires_grad
    assert not (b * b).requires_grad
    c = b * b
    c.name = "c"
    assert c._backward is None  # constant subgraphs record nothing
