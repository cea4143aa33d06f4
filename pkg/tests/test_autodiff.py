import numpy as np
import pytest

from nlnde import autodiff as ad

from _gradcheck import finite_difference, relative_error


def _param(rng, shape, name="p"):
    return ad.parameter(rng.standard_normal(shape), name)


def _check(build_loss, params, tol=1e-7):
    """build_loss() -> Tensor scalar reading params' .value in place."""
    loss = build_loss()
    ad.zero_grads(params)
    ad.backward(loss)
    for p in params:
        fd = finite_difference(lambda: build_loss().item(), [p.value])[0]
        an = p.grad if p.grad is not None else np.zeros_like(p.value)
        assert relative_error(fd, an) < tol, p.name


def test_add_mul_broadcast_gradients():
    rng = np.random.default_rng(0)
    a = _param(rng, (3, 4), "a")
    b = _param(rng, (4,), "b")
    c = _param(rng, (3, 1), "c")
    _check(lambda: ((a + b) * c).sum(), [a, b, c])


def test_matmul_tanh_sigmoid_chain():
    rng = np.random.default_rng(1)
    x = _param(rng, (5, 3), "x")
    w = _param(rng, (3, 2), "w")
    _check(lambda: ad.sigmoid(ad.tanh(x @ w)).sum(), [x, w])


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        ad.matmul(ad.constant(np.ones(3)), ad.constant(np.ones((3, 2))))


def test_div_log_exp_gradients():
    rng = np.random.default_rng(2)
    a = ad.parameter(rng.random((4,)) + 0.5, "a")
    b = ad.parameter(rng.random((4,)) + 0.5, "b")
    _check(lambda: (ad.log(a / b) + ad.exp(b * 0.3)).sum(), [a, b])


def test_logsumexp_matches_reference_and_grad():
    rng = np.random.default_rng(3)
    x = _param(rng, (4, 6), "x")
    out = ad.logsumexp(x, axis=1)
    ref = np.log(np.exp(x.value).sum(axis=1))
    np.testing.assert_allclose(out.value, ref, atol=1e-12)
    _check(lambda: ad.logsumexp(x, axis=1).sum(), [x])


def test_logsumexp_keepdims_and_neg_inf_row():
    x = ad.constant(np.array([[-np.inf, -np.inf], [0.0, 1.0]]))
    out = ad.logsumexp(x, axis=1, keepdims=True)
    assert out.value.shape == (2, 1)
    assert out.value[0, 0] == -np.inf
    assert np.isfinite(out.value[1, 0])


def test_softmax_rows_sum_to_one_and_grad():
    rng = np.random.default_rng(4)
    x = _param(rng, (3, 5), "x")
    s = ad.softmax(x, axis=1)
    np.testing.assert_allclose(s.value.sum(axis=1), 1.0, atol=1e-12)
    w = ad.constant(rng.standard_normal((3, 5)))
    _check(lambda: (ad.softmax(x, axis=1) * w).sum(), [x])


def test_sum_axis_keepdims_grad():
    rng = np.random.default_rng(5)
    x = _param(rng, (2, 3, 4), "x")
    _check(lambda: (x.sum(axis=1) * x.sum(axis=(0, 2), keepdims=True).sum()).sum(), [x])


def test_mean_matches_manual_scale():
    x = ad.parameter(np.arange(6, dtype=float).reshape(2, 3), "x")
    m = x.mean(axis=1)
    np.testing.assert_allclose(m.value, x.value.mean(axis=1))
    _check(lambda: x.mean().reshape(()), [x])


def test_concat_stack_getitem_grads():
    rng = np.random.default_rng(6)
    a = _param(rng, (2, 3), "a")
    b = _param(rng, (2, 2), "b")

    def loss():
        cat = ad.concat([a, b], axis=1)
        stk = ad.stack([cat[0, :], cat[1, :]], axis=0)
        return (stk[:, 1:4] * stk[:, 1:4]).sum()

    _check(loss, [a, b])


def test_take_rows_accumulates_repeats():
    emb = ad.parameter(np.eye(3), "emb")
    idx = np.array([0, 1, 1, 2, 1])
    out = ad.take_rows(emb, idx)
    loss = out.sum()
    ad.backward(loss)
    np.testing.assert_allclose(emb.grad, np.array([[1.0], [3.0], [1.0]]) * np.ones(3))


def test_take_flat_gather_and_grad():
    rng = np.random.default_rng(7)
    x = _param(rng, (3, 4), "x")
    idx = np.array([[0, 5], [11, 5]])
    out = ad.take_flat(x, idx)
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out.value.ravel(), x.value.ravel()[idx.ravel()])
    _check(lambda: (ad.take_flat(x, idx) * ad.take_flat(x, idx)).sum(), [x])


def test_reshape_transpose_where_grads():
    rng = np.random.default_rng(8)
    x = _param(rng, (2, 6), "x")
    mask = np.array([[True, False, True], [False, True, False], [True, True, False], [False, False, True]])

    def loss():
        y = x.reshape(4, 3)
        z = ad.where(mask, y, ad.transpose(y.reshape(3, 4)))
        return (z * z).sum()

    _check(loss, [x])


def test_backward_reuses_node_once():
    # diamond graph: y enters the loss twice; gradient must count both paths
    x = ad.parameter(np.array([2.0]), "x")
    y = x * 3.0
    loss = (y * y).sum()
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [36.0])


def test_constants_collect_no_graph():
    c = ad.constant(np.ones(3))
    out = c * 2.0 + 1.0
    assert not out.requires_grad
    ad.backward(out.sum())  # no-op, must not raise


def test_float64_everywhere():
    t = ad.constant(np.float32(1.5))
    assert t.value.dtype == np.float64
    assert (t * 2).value.dtype == np.float64
