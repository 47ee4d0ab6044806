import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from poolbias import autodiff as ad
from poolbias.errors import InvalidArgument

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def _check(build, *shapes, seed=0, tol=1e-6):
    """Gradient of sum(build(*xs) * R) against central differences."""
    rng = np.random.default_rng(seed)
    xs = [ad.Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    out_shape = build(*xs).shape
    r = rng.normal(size=out_shape)

    def f():
        return float((build(*xs).value * r).sum())

    fd = ad.finite_diff_grad(f, xs, h=1e-6)
    for x in xs:
        x.zero_grad()
    y = build(*xs)
    # project to a scalar through a fixed weighting
    ad.backward(ad.dot(ad.reshape(y, (y.value.size, 1)), ad.constant(r.reshape(-1, 1))))
    for x, g in zip(xs, fd):
        assert np.max(np.abs(x.grad - g)) < tol * max(1.0, np.max(np.abs(g)))


@pytest.mark.parametrize("build,shapes", [
    (ad.matmul, [(3, 4), (4, 2)]),
    (ad.add, [(3, 2), (3, 2)]),
    (ad.sub, [(3, 2), (3, 2)]),
    (lambda a: ad.scale(a, -1.7), [(2, 3)]),
    (ad.hadamard, [(3, 2), (3, 2)]),
    (ad.transpose, [(2, 3)]),
    (lambda a: ad.reshape(a, (3, 2)), [(6, 1)]),
    (lambda a: ad.column(a, 1), [(4, 3)]),
    (ad.row_sum, [(5, 3)]),
    (ad.row_mean, [(5, 3)]),
    (ad.row_max, [(5, 3)]),
    (ad.dot, [(4, 1), (4, 1)]),
    (ad.sigmoid, [(4, 2)]),
    (ad.relu, [(4, 2)]),
    (lambda a: ad.leaky_relu(a, 0.2), [(4, 2)]),
    (lambda a: ad.softmax_beta(a, 0.7), [(5, 1)]),
    (lambda x, s: ad.softmax_pool(x, s, 0.7), [(5, 3), (5, 1)]),
    (ad.log1p_exp, [(3, 1)]),
    (ad.outer_add, [(3, 1), (4, 1)]),
    (lambda a: ad.masked_softmax_rows(a, np.eye(3) + np.eye(3, k=1) > 0), [(3, 3)]),
])
def test_primitive_gradients(build, shapes):
    _check(build, *shapes)


def test_sigmoid_dot_at_zero():
    # d sigma(w.v)/dw at w = 0 is sigma'(0) v = v / 4
    v = np.array([1.0, -2.0, 0.5])
    w = ad.Tensor(np.zeros(3), requires_grad=True)
    ad.backward(ad.sigmoid(ad.dot(w, ad.constant(v))))
    assert np.allclose(w.grad[:, 0], 0.25 * v, atol=0, rtol=0)


def test_reused_node_accumulates():
    x = ad.Tensor([[2.0]], requires_grad=True)
    y = ad.hadamard(x, x)  # x^2
    ad.backward(ad.add(y, x))
    assert x.grad[0, 0] == 5.0


def test_backward_twice_doubles_leaf_grad():
    x = ad.Tensor([[1.0], [2.0]], requires_grad=True)
    loss = ad.dot(x, ad.constant([[3.0], [4.0]]))
    ad.backward(loss)
    ad.backward(loss)
    assert x.grad[:, 0].tolist() == [6.0, 8.0]


def test_constants_do_not_record():
    out = ad.matmul(ad.constant(np.eye(2)), ad.constant(np.ones((2, 1))))
    assert not out.requires_grad and out.is_leaf


def test_errors():
    with pytest.raises(InvalidArgument):
        ad.backward(ad.Tensor(np.ones((2, 1)), requires_grad=True))
    with pytest.raises(InvalidArgument):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(InvalidArgument):
        ad.softmax_beta(np.ones((3, 1)), 0.0)
    with pytest.raises(InvalidArgument):
        ad.masked_softmax_rows(np.ones((2, 2)), np.array([[1, 0], [0, 0]]))
    with pytest.raises(InvalidArgument):
        ad.Tensor(np.ones((2, 2, 2)))


def test_row_max_tie_goes_to_first_row():
    x = ad.Tensor([[1.0], [1.0], [0.0]], requires_grad=True)
    ad.backward(ad.row_sum(ad.row_max(x)))
    assert x.grad[:, 0].tolist() == [1.0, 0.0, 0.0]


def test_log1p_exp_is_stable():
    out = ad.log1p_exp(ad.constant([[800.0], [-800.0]])).value[:, 0]
    assert out[0] == 800.0 and out[1] == 0.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 1), elements=finite), st.floats(0.05, 50))
def test_softmax_beta_properties(scores, beta):
    alpha = ad.softmax_beta(scores, beta).value[:, 0]
    assert np.all(alpha > 0)
    assert abs(alpha.sum() - 1.0) < 1e-12
    # shifting all scores leaves the weights unchanged
    shifted = ad.softmax_beta(scores + 7.5, beta).value[:, 0]
    assert np.allclose(alpha, shifted, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (7, 3), elements=st.integers(0, 9).map(float)), st.floats(0.05, 50))
def test_softmax_pool_with_equal_scores_is_the_exact_mean(x, beta):
    out = ad.softmax_pool(x, np.full((7, 1), 2.5), beta).value[:, 0]
    assert np.array_equal(out, x.mean(axis=0))


def test_softmax_pool_matches_weighted_sum():
    rng = np.random.default_rng(3)
    x, s = rng.normal(size=(6, 4)), rng.normal(size=(6, 1))
    alpha = ad.softmax_beta(s, 1.3).value
    assert np.allclose(ad.softmax_pool(x, s, 1.3).value, x.T @ alpha, atol=1e-14)


def test_softmax_temperature_limits():
    s = np.array([[3.0], [1.0], [0.0], [2.0]])
    sharp = ad.softmax_beta(s, 1e-3).value[:, 0]
    flat = ad.softmax_beta(s, 1e6).value[:, 0]
    assert np.allclose(sharp, [1, 0, 0, 0], atol=1e-12)
    assert np.allclose(flat, 0.25, atol=1e-5)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (3, 1), elements=finite))
def test_composed_expression_matches_finite_differences(m, v):
    a = ad.Tensor(m, requires_grad=True)
    b = ad.Tensor(v, requires_grad=True)

    def build():
        h = ad.sigmoid(ad.matmul(a, b))
        return ad.log1p_exp(ad.dot(h, ad.softmax_beta(h, 2.0)))

    fd = ad.finite_diff_grad(lambda: build().item(), [a, b], h=1e-6)
    ad.backward(build())
    assert np.allclose(a.grad, fd[0], atol=1e-7)
    assert np.allclose(b.grad, fd[1], atol=1e-7)
