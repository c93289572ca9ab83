import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sympoc.autodiff import (
    PRIMITIVES,
    DualVector,
    ShapeError,
    Tape,
    TapeError,
    TapeFunction,
    finite_difference_gradient,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_elementwise_examples():
    t = Tape()
    a, b = t.constant([1.0, 2.0]), t.constant([3.0, 4.0])
    assert np.array_equal(t.push("add", [a, b]).value, [4.0, 6.0])
    assert np.array_equal(t.push("relu", [t.constant([-1.0, 0.0, 2.0])]).value, [0.0, 0.0, 2.0])
    assert t.push("square-norm", [t.constant([3.0, 4.0])]).value == 25.0
    assert t.push("dot", [a, b]).value == 11.0
    assert np.array_equal(t.push("min-with-zero", [t.constant([-2.0, 3.0])]).value, [-2.0, 0.0])
    assert np.array_equal(t.push("max-with-zero", [t.constant([-2.0, 3.0])]).value, [0.0, 3.0])


def test_backward_examples():
    t = Tape()
    x = t.parameter([3.0, 4.0])
    out = t.push("scale", [t.push("square-norm", [x])], 0.5)
    assert np.allclose(t.backward(out, [x])[x], [3.0, 4.0])

    t = Tape()
    x = t.parameter(2.0)
    assert t.backward(t.push("log", [x]), [x])[x] == pytest.approx(0.5)

    t = Tape()
    x = t.parameter([-1.0])
    out = t.push("sum", [t.push("relu", [x])])
    assert t.backward(out, [x])[x][0] == 0.0


def test_relu_derivative_at_zero_is_zero():
    t = Tape()
    x = t.parameter([0.0])
    out = t.push("sum", [t.push("relu", [x])])
    assert t.backward(out, [x])[x][0] == 0.0


def test_unused_seed_gets_zeros():
    t = Tape()
    x, y = t.parameter([1.0, 2.0]), t.parameter([[1.0, 2.0, 3.0]])
    out = t.push("square-norm", [x])
    g = t.backward(out, [x, y])
    assert np.array_equal(g[y], np.zeros((1, 3)))


def test_nonscalar_output_rejected():
    t = Tape()
    x = t.parameter([1.0, 2.0])
    with pytest.raises(TapeError):
        t.backward(t.push("relu", [x]), [x])


def test_shape_mismatch_rejected():
    t = Tape()
    with pytest.raises(ShapeError):
        t.push("add", [t.constant([1.0, 2.0]), t.constant([1.0, 2.0, 3.0])])
    with pytest.raises(ShapeError):
        t.push("matvec", [t.constant(np.ones((2, 3))), t.constant(np.ones(2))])
    with pytest.raises(ShapeError):
        t.push("dot", [t.constant([1.0]), t.constant([1.0, 2.0])])


def test_unknown_kind_and_foreign_handle():
    t1, t2 = Tape(), Tape()
    with pytest.raises(ValueError):
        t1.push("cosine", [])
    x = t2.constant([1.0])
    with pytest.raises(TapeError):
        t1.push("relu", [x])


def test_required_primitive_set():
    required = {"constant", "parameter", "add", "subtract", "scale", "hadamard", "matvec",
                "matvec-transpose", "relu", "sigmoid", "log", "square-norm", "dot", "sum",
                "max-with-zero", "min-with-zero", "affine-combination"}
    assert required <= set(PRIMITIVES)


def test_finite_difference_examples():
    g = finite_difference_gradient(lambda x: 0.5 * float(x @ x), [3.0, 4.0])
    assert np.allclose(g, [3.0, 4.0], atol=1e-8)
    g = finite_difference_gradient(lambda x: float(np.log(x[0])), [2.0])
    assert abs(g[0] - 0.5) < 1e-9
    assert np.array_equal(finite_difference_gradient(lambda x: 1.0, [1.0, 2.0]), [0.0, 0.0])
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, [1.0], step=0.0)


def _smooth_graph(t, K, x, w):
    """A scalar built from every smooth primitive."""
    Kn, xn, wn = t.parameter(K), t.parameter(x), t.parameter(w)
    z = t.push("matvec", [Kn, xn])
    s = t.push("sigmoid", [z])
    y = t.push("matvec-transpose", [Kn, t.push("hadamard", [s, wn])])
    lg = t.push("log", [t.push("affine-combination", [t.push("square-norm", [y])], ([1.0], 1.0))])
    d = t.push("dot", [y, xn])
    diff = t.push("subtract", [xn, t.push("scale", [y], 0.3)])
    tot = t.push("affine-combination", [lg, d, t.push("sum", [diff])], ([1.0, 0.5, -0.2], 0.0))
    return tot, (Kn, xn, wn)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    K, x, w = rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=4)

    def f_of(idx):
        def f(v):
            args = [K, x, w]
            args[idx] = v
            return float(_smooth_graph(Tape(), *args)[0].value)
        return f

    t = Tape()
    out, leaves = _smooth_graph(t, K, x, w)
    grads = t.backward(out, leaves)
    for idx, (leaf, point) in enumerate(zip(leaves, (K, x, w))):
        fd = finite_difference_gradient(f_of(idx), point)
        err = np.max(np.abs(grads[leaf] - fd)) / max(1.0, np.max(np.abs(fd)))
        assert err < 1e-5


@settings(max_examples=50, deadline=None)
@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite))
def test_relu_gradient_away_from_kinks(x, w):
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    t = Tape()
    xn = t.parameter(x)
    out = t.push("dot", [t.push("relu", [xn]), t.constant(w)])
    g = t.backward(out, [xn])[xn]
    fd = finite_difference_gradient(lambda v: float(np.maximum(v, 0) @ w), x, step=1e-5)
    assert np.allclose(g, fd, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_linearity_of_reverse_accumulation(x, c):
    t = Tape()
    xn = t.parameter(x)
    l1 = t.push("square-norm", [t.push("sigmoid", [xn])])
    l2 = t.push("dot", [xn, t.constant(c)])
    both = t.push("add", [l1, l2])
    g = t.backward(both, [xn])[xn]
    g1 = t.backward(l1, [xn])[xn]
    g2 = t.backward(l2, [xn])[xn]
    assert np.allclose(g, g1 + g2, rtol=1e-12, atol=1e-12)


def test_replay_bit_identical():
    rng = np.random.default_rng(3)
    t = Tape()
    _smooth_graph(t, rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=4))
    before = [r.value for r in t.nodes]
    after = t.replay()
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_broadcast_gradients_sum_back():
    t = Tape()
    a = t.parameter(np.ones((3, 2)))
    b = t.parameter([1.0, 2.0])
    out = t.push("sum", [t.push("hadamard", [a, b])])
    g = t.backward(out, [a, b])
    assert np.array_equal(g[b], [3.0, 3.0])
    assert np.array_equal(g[a], np.tile([1.0, 2.0], (3, 1)))


def test_take_gradient_accumulates_repeats():
    t = Tape()
    x = t.parameter([[1.0, 2.0], [3.0, 4.0]])
    rows = t.push("take", [x], (np.array([0, 0, 1]), 0))
    g = t.backward(t.push("sum", [rows]), [x])[x]
    assert np.array_equal(g, [[2.0, 2.0], [1.0, 1.0]])


class _Cube(TapeFunction):
    def forward(self, x):
        return x**3

    def vjp(self, g, x):
        return (3.0 * x**2 * g,)


def test_custom_function_node():
    t = Tape()
    x = t.parameter([1.0, -2.0])
    out = t.push("sum", [t.function(_Cube(), x)])
    assert np.allclose(t.backward(out, [x])[x], [3.0, 12.0])


def test_dual_vector_shape_check():
    t = Tape()
    DualVector(t.constant([1.0, 2.0]), None)
    with pytest.raises(ShapeError):
        DualVector(t.constant([1.0, 2.0]), t.constant([1.0]))
