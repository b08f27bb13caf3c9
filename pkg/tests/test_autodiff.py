import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltw2 import autodiff as ad
from helpers import fd_grad, grad_of, rel_err

RNG = np.random.default_rng(1234)

# (name, fn on Vars, input generator)
UNARY = [
    ("neg", ad.neg, lambda: RNG.normal(size=(3, 2))),
    ("scale", lambda x: ad.scale(x, -1.7), lambda: RNG.normal(size=(4,))),
    ("square", ad.square, lambda: RNG.normal(size=(3, 2))),
    ("power", lambda x: ad.power(x, 3.0), lambda: RNG.uniform(0.5, 2.0, size=(3,))),
    ("relu", ad.relu, lambda: RNG.normal(size=(5,)) + np.sign(RNG.normal(size=5)) * 0.1),
    ("abs", ad.abs, lambda: RNG.normal(size=(5,)) + np.sign(RNG.normal(size=5)) * 0.1),
    ("sqrt", ad.sqrt, lambda: RNG.uniform(0.3, 3.0, size=(4,))),
    ("exp", ad.exp, lambda: RNG.normal(size=(2, 3))),
    ("log", ad.log, lambda: RNG.uniform(0.3, 3.0, size=(4,))),
    ("softplus", ad.softplus, lambda: RNG.normal(size=(4,)) * 3),
    ("sum_axis", lambda x: ad.sum(x, axis=0), lambda: RNG.normal(size=(3, 4))),
    ("mean_axis", lambda x: ad.mean(x, axis=1), lambda: RNG.normal(size=(3, 4))),
    ("getitem_basic", lambda x: ad.getitem(x, (slice(None), 1)), lambda: RNG.normal(size=(3, 4))),
    ("getitem_fancy", lambda x: ad.getitem(x, np.array([2, 0, 2])), lambda: RNG.normal(size=(3, 2))),
    ("gather", lambda x: ad.gather(x, np.array([1, 1, 0])), lambda: RNG.normal(size=(2, 3))),
    ("reshape", lambda x: ad.reshape(x, (2, -1)), lambda: RNG.normal(size=(3, 2))),
]

BINARY = [
    ("add", ad.add, (3, 2), (2,)),
    ("sub", ad.sub, (3, 1), (3, 4)),
    ("mul", ad.mul, (3, 2), (3, 2)),
    ("div", ad.div, (2, 3), (3,)),
    ("matmul", ad.matmul, (3, 4), (4, 2)),
    ("matvec", ad.matvec, (5, 3, 4), (5, 4)),
]


def _scalarize(fn):
    # weighted sum makes every output entry matter
    def out(*xs):
        y = fn(*xs)
        w = np.cos(np.arange(np.size(ad.value_of(y))) + 0.3).reshape(np.shape(ad.value_of(y)))
        return ad.sum(ad.mul(y, w))
    return out


@pytest.mark.parametrize("name,fn,gen", UNARY, ids=[u[0] for u in UNARY])
def test_unary_primitive_matches_finite_differences(name, fn, gen):
    for _ in range(5):
        x = gen()
        f = _scalarize(fn)
        assert rel_err(grad_of(f, x), fd_grad(f, x)) < 1e-6


@pytest.mark.parametrize("name,fn,sa,sb", BINARY, ids=[b[0] for b in BINARY])
def test_binary_primitive_matches_finite_differences(name, fn, sa, sb):
    for _ in range(5):
        a = RNG.normal(size=sa)
        b = RNG.uniform(0.5, 2.0, size=sb) if name == "div" else RNG.normal(size=sb)
        f = _scalarize(fn)
        assert rel_err(grad_of(f, a, b), fd_grad(f, a, b)) < 1e-6


def test_concat_and_stack_route_gradients_to_each_part():
    a, b = RNG.normal(size=(2, 3)), RNG.normal(size=(1, 3))
    f = _scalarize(lambda x, y: ad.concat([x, y], axis=0))
    assert rel_err(grad_of(f, a, b), fd_grad(f, a, b)) < 1e-6
    c = RNG.normal(size=(2, 3))
    g = _scalarize(lambda x, y: ad.stack([x, ad.square(y)], axis=1))
    assert rel_err(grad_of(g, a, c), fd_grad(g, a, c)) < 1e-6


def test_operators_and_numpy_mixing():
    a = RNG.normal(size=(2, 3))
    b = RNG.normal(size=(3,))
    w = RNG.normal(size=(3, 2))

    def f(x):
        return ad.sum((b * x - 2.0) / (1.5 + x ** 2)) + ad.sum(x @ w) + ad.sum(1.0 - x)

    assert rel_err(grad_of(f, a), fd_grad(f, a)) < 1e-6


def test_custom_record_primitive():
    x = RNG.normal(size=4)

    def cube_sum(v):
        val = np.sum(ad.value_of(v) ** 3)
        return ad.record(np.asarray(val), [v], lambda g: (3 * g * ad.value_of(v) ** 2,))

    (g,) = grad_of(cube_sum, x)
    np.testing.assert_allclose(g, 3 * x ** 2, rtol=1e-14)


def test_forward_only_evaluation_returns_plain_arrays():
    out = ad.add(np.ones(2), np.ones(2))
    assert isinstance(out, np.ndarray) and not isinstance(out, ad.Var)
    np.testing.assert_array_equal(ad.relu(np.array([-1.0, 2.0])), [0.0, 2.0])


def test_unreachable_leaf_gets_zero_gradient():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    y = tape.leaf(np.ones(2))
    gx, gy = ad.backward(ad.sum(ad.square(x)))
    np.testing.assert_array_equal(gx, 2 * np.ones(3))
    np.testing.assert_array_equal(gy, np.zeros(2))


def test_backward_needs_scalar_root():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.square(x))


def test_shape_mismatch_raises():
    tape = ad.Tape()
    with pytest.raises(ad.ShapeError):
        ad.add(tape.leaf(np.ones(3)), np.ones(4))
    with pytest.raises(ad.ShapeError):
        ad.matmul(tape.leaf(np.ones((2, 3))), np.ones((2, 3)))


def test_domain_errors():
    tape = ad.Tape()
    with pytest.raises(ValueError):
        ad.log(tape.leaf(np.array([1.0, 0.0])))
    with pytest.raises(ValueError):
        ad.sqrt(tape.leaf(np.array([-1.0])))


def test_nonsmooth_conventions():
    (g,) = grad_of(lambda x: ad.sum(ad.relu(x) + ad.abs(x) + ad.sqrt(x)), np.zeros(3))
    np.testing.assert_array_equal(g, np.zeros(3))


def test_shared_subexpression_accumulates():
    (g,) = grad_of(lambda x: ad.sum(ad.mul(x, x) + x), np.array([2.0]))
    np.testing.assert_allclose(g, [5.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(-2, 2))
def test_linearity_of_backward(xs, c):
    x = np.array(xs)
    (g1,) = grad_of(lambda v: ad.sum(ad.square(v)), x)
    (g2,) = grad_of(lambda v: ad.scale(ad.sum(ad.square(v)), c), x)
    np.testing.assert_allclose(g2, c * g1, rtol=1e-12, atol=1e-12)
