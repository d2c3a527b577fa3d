import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srforecast import autodiff as ad

from conftest import analytic_grad, numeric_grad, rel_err


def test_norm_last_axis():
    assert np.allclose(ad.norm(ad.constant([[3.0, 4.0]])).value, [5.0])


def test_exp_of_zero():
    assert np.array_equal(ad.exp(ad.constant(np.zeros((2, 3)))).value, np.ones((2, 3)))


@pytest.mark.parametrize("x, expected", [(2.0, 1.0), (-2.0, -1.0)])
def test_abs_backward(x, expected):
    assert analytic_grad(lambda p: ad.sum(ad.absolute(p)), np.array([x]))[0] == expected


def test_sum_of_squares_grad():
    g = analytic_grad(lambda w: ad.sum(w * w), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(g, [2.0, 4.0, 6.0])


def test_norm_grad_is_unit_vector():
    g = analytic_grad(lambda w: ad.norm(w), np.array([3.0, 4.0]))
    assert np.allclose(g, [0.6, 0.8], rtol=0, atol=1e-15)


def test_norm_at_zero_has_zero_subgradient():
    g = analytic_grad(lambda w: ad.norm(w), np.zeros(3))
    assert np.array_equal(g, np.zeros(3))


def test_backward_rejects_non_scalar():
    p = ad.parameter(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        (p * 2.0).backward()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 5))))
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        ad.add(ad.constant(np.ones(2)), ad.constant(np.ones(3)))


def test_repeated_backward_accumulates():
    p = ad.parameter(np.array([1.0, 2.0]))
    loss = ad.sum(p * p)
    loss.backward()
    loss.backward()
    assert np.array_equal(p.grad, [4.0, 8.0])
    ad.zero_grad([p])
    assert p.grad is None


def test_two_layer_mlp_matches_finite_differences(rng):
    x = rng.standard_normal((4, 3))
    W1 = rng.standard_normal((3, 5))
    W2 = rng.standard_normal((5, 1))

    def build(w):
        h = ad.leaky_relu(ad.matmul(ad.constant(x), w), 0.01)
        return ad.sum(ad.matmul(h, ad.constant(W2)))

    def f(w):
        return build(ad.constant(w)).item()

    assert rel_err(analytic_grad(build, W1), numeric_grad(f, W1)) < 1e-4


OPS = {
    "add": lambda a, b: ad.sum((a + b) * b),
    "subtract": lambda a, b: ad.sum((a - b) * (a - b)),
    "multiply": lambda a, b: ad.sum(a * b * a),
    "matmul": lambda a, b: ad.sum(ad.matmul(a, ad.swapaxes(b, 0, 1)) ** 2.0),
    "concatenate": lambda a, b: ad.sum(ad.concatenate([a, b * a], axis=0) ** 2.0),
    "exp": lambda a, b: ad.sum(ad.exp(a) * b),
    "power": lambda a, b: ad.sum(ad.power(ad.absolute(a) + 0.5, 1.7) * b),
    "abs": lambda a, b: ad.sum(ad.absolute(a) * b),
    "leaky_relu": lambda a, b: ad.sum(ad.leaky_relu(a, 0.01) * b),
    "mean": lambda a, b: ad.mean(ad.mean(a * b, axis=0) ** 2.0),
    "norm": lambda a, b: ad.sum(ad.norm(a) * ad.sum(b, axis=-1)),
    "sigmoid_log": lambda a, b: ad.sum(ad.log(ad.sigmoid(a)) * b),
    "broadcast": lambda a, b: ad.sum((a + ad.sum(b, axis=0)) ** 2.0),
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_op_gradients_match_finite_differences(name, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((3, 4))
    # stay away from the kinks of |x| and leaky_relu
    a = np.where(np.abs(a) < 0.05, 0.3, a)
    b = r.standard_normal((3, 4))
    op = OPS[name]
    g = analytic_grad(lambda p: op(p, ad.constant(b)), a)
    num = numeric_grad(lambda v: op(ad.constant(v), ad.constant(b)).item(), a)
    assert rel_err(g, num) < 1e-4


def test_backward_is_deterministic(rng):
    x = rng.standard_normal((6, 4))

    def grads():
        p = ad.parameter(x)
        ad.sum(ad.norm(ad.leaky_relu(p, 0.01) * p) ** 1.5).backward()
        return p.grad

    assert np.array_equal(grads(), grads())


def test_gradient_linearity(rng):
    x = rng.standard_normal(5)
    f = lambda p: ad.sum(ad.exp(p) * p)
    g = lambda p: ad.norm(p * p)
    a, b = 2.5, -0.7
    combined = analytic_grad(lambda p: f(p) * a + g(p) * b, x)
    separate = a * analytic_grad(f, x) + b * analytic_grad(g, x)
    assert np.allclose(combined, separate, rtol=0, atol=1e-12)


def test_getitem_and_repeat_grads(rng):
    x = rng.standard_normal((4, 3))
    build = lambda p: ad.sum(ad.repeat(p[1:3], 2, axis=0) ** 2.0)
    num = numeric_grad(lambda v: build(ad.constant(v)).item(), x)
    assert rel_err(analytic_grad(build, x), num) < 1e-6


def test_clip_blocks_gradient_outside():
    g = analytic_grad(lambda p: ad.sum(ad.clip(p, 0.0, 1.0)), np.array([-1.0, 0.5, 2.0]))
    assert np.array_equal(g, [0.0, 1.0, 0.0])
