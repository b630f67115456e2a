import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from jitcast import autograd as ag
from jitcast.autograd import Tensor


def grad_check(build, *arrays, tol=1e-6):
    """Compare tape gradients of ``sum(build(*tensors) * w)`` with central differences."""
    params = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    probe = np.random.default_rng(0).normal(size=np.shape(build(*[Tensor(a) for a in arrays]).data))

    def loss():
        return ag.tsum(build(*params) * probe)

    ag.backward(loss())
    for p in params:
        num = ag.numerical_gradient(lambda: float(loss().data), p)
        np.testing.assert_allclose(p.grad, num, rtol=tol, atol=tol)


floats = st.floats(-3, 3, allow_nan=False)
mat = hnp.arrays(np.float64, (3, 4), elements=floats)


@given(mat, mat)
def test_elementwise_grads(a, b):
    grad_check(lambda x, y: x * y + x - y, a, b)
    grad_check(lambda x, y: x / (ag.square(y) + 1.0), a, b)


@given(mat)
def test_unary_grads(a):
    a = np.where(np.abs(a) < 1e-3, 0.5, a)  # keep away from the kinks of relu/abs
    grad_check(ag.relu, a)
    grad_check(ag.absolute, a)
    grad_check(lambda x: -ag.square(x), a)


def test_broadcast_grad_is_reduced():
    rng = np.random.default_rng(1)
    grad_check(lambda x, b: x + b, rng.normal(size=(2, 3, 4)), rng.normal(size=(4,)))
    grad_check(lambda x, b: x * b, rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 1)))


def test_reduction_and_shape_grads():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 4))
    grad_check(lambda t: ag.tsum(t, axis=1), x)
    grad_check(lambda t: ag.mean(t, axis=(0, 2), keepdims=True), x)
    grad_check(lambda t: ag.reshape(t, (6, 4)), x)
    grad_check(lambda t: ag.transpose(t, (2, 0, 1)), x)
    grad_check(lambda t: t[:, 1:, ::2], x)
    grad_check(lambda t: t[np.array([0, 0, 1])], x)  # repeated index accumulates
    grad_check(lambda a, b: ag.concat([a, b], axis=1), x, rng.normal(size=(2, 5, 4)))


def test_matmul_grads_and_shape_error():
    rng = np.random.default_rng(3)
    grad_check(ag.matmul, rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))
    grad_check(ag.matmul, rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)))
    grad_check(ag.matmul, rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5)))
    with pytest.raises(ag.ShapeError, match="matmul shape mismatch"):
        ag.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 4))))


def test_softmax_matches_formula_and_grad():
    x = np.random.default_rng(4).normal(size=(3, 5)) * 4
    out = ag.softmax(Tensor(x)).data
    e = np.exp(x - x.max(axis=1, keepdims=True))
    np.testing.assert_allclose(out, e / e.sum(axis=1, keepdims=True), rtol=1e-14)
    grad_check(ag.softmax, x)
    mask = np.zeros((3, 5), dtype=bool)
    mask[:, 3:] = True
    grad_check(lambda t: ag.softmax(t, mask=mask), x)


def test_softmax_is_shift_invariant_and_stable():
    x = np.array([[1000.0, 1001.0, 999.0]])
    np.testing.assert_allclose(ag.softmax(Tensor(x)).data, ag.softmax(Tensor(x - 1000)).data, rtol=1e-15)


def test_softmax_rejects_bad_input():
    with pytest.raises(ValueError):
        ag.softmax(Tensor(np.array([[1.0, np.nan]])))
    with pytest.raises(ValueError):
        ag.softmax(Tensor(np.ones((1, 2))), mask=np.ones((1, 2), dtype=bool))


def test_layer_norm_normalizes_and_grads():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 4, 6)) * 3 + 1
    out = ag.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)
    grad_check(ag.layer_norm, x, rng.normal(size=6), rng.normal(size=6), tol=1e-5)


def test_gradients_accumulate_over_shared_use():
    x = Tensor(np.array([2.0]), requires_grad=True)
    ag.backward(ag.tsum(x * x + x * 3.0))
    assert x.grad[0] == pytest.approx(7.0)
    ag.backward(ag.tsum(x * 1.0))
    assert x.grad[0] == pytest.approx(8.0)


def test_backward_errors_and_no_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ag.GradientError):
        ag.backward(Tensor(np.array(1.0)))
    with pytest.raises(ag.GradientError):
        ag.backward(x * 2.0)
    with ag.no_grad():
        y = ag.tsum(x * 2.0)
    assert not y.requires_grad
    with pytest.raises(ag.GradientError):
        ag.backward(y)


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    ag.backward(y)
    assert x.grad == pytest.approx(1.0)


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float Adam, written from the textbook recurrences."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1**t), v / (1 - b2**t)
        theta = theta - lr * mh / (vh**0.5 + eps)
        trace.append(theta)
    return trace


def test_adam_matches_reference_trace():
    grads = [0.5, -1.0, 2.0, 0.0, 3e-3, -7.0]
    p = Tensor(np.array([1.5]), requires_grad=True)
    state = ag.AdamState.for_params([p])
    got = []
    for g in grads:
        ag.adam_step([p], [np.array([g])], state, lr=0.01)
        got.append(p.data[0])
    np.testing.assert_allclose(got, reference_adam(1.5, grads, 0.01), rtol=0, atol=1e-15)
    assert state.step_count == len(grads)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([0.0, 0.0]))
    ag.adam_step([p], [np.array([3.0, -0.2])], ag.AdamState.for_params([p]), lr=1e-3)
    np.testing.assert_allclose(p.data, [-1e-3, 1e-3], rtol=1e-7)


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([4.0, -3.0]), requires_grad=True)
    opt = ag.Adam([p], lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        ag.backward(ag.tsum(ag.square(p - np.array([1.0, 2.0]))))
        opt.step()
    np.testing.assert_allclose(p.data, [1.0, 2.0], atol=1e-3)


def test_adam_rejects_nan_gradient_without_touching_params():
    p = Tensor(np.array([1.0]))
    state = ag.AdamState.for_params([p])
    with pytest.raises(ag.OptimizerError):
        ag.adam_step([p], [np.array([np.nan])], state, lr=0.1)
    assert p.data[0] == 1.0 and state.step_count == 0
    with pytest.raises(ag.ShapeError):
        ag.adam_step([p], [np.ones(2)], state, lr=0.1)
