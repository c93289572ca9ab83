import numpy as np
import pytest
from scipy.optimize import rosen, rosen_der

from sympoc.optim import AdamState, adam_step, clip_by_global_norm, lbfgs_minimize


def test_adam_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(AdamState(), {"w": np.zeros(2)}, p)
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_lr_in_sign_direction():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    adam_step(AdamState(lr=0.01), {"w": np.array([5.0, -0.2, 1e-3])}, p)
    assert np.allclose(p["w"], [0.99, -1.99, 2.99], atol=1e-6)


def test_adam_on_parabola():
    state, p = AdamState(lr=0.1), {"x": np.array([1.0])}
    trace = []
    for _ in range(100):
        adam_step(state, {"x": p["x"].copy()}, p)
        trace.append(abs(p["x"][0]))
    assert trace[-1] < 0.1
    assert all(b <= a for a, b in zip(trace[:10], trace[1:10]))


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"w": np.zeros(3)}, {"w": np.zeros(2)})


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(g, 1.0) == 5.0
    assert np.allclose([g["a"][0], g["b"][0]], [0.6, 0.8])
    g = {"a": np.array([0.3])}
    clip_by_global_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_lbfgs_quadratic_10d():
    rng = np.random.default_rng(0)
    Q = rng.normal(size=(10, 10))
    A = Q @ Q.T + np.eye(10)
    b = rng.normal(size=10)
    res = lbfgs_minimize(lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b), np.zeros(10), max_iters=50,
                         grad_tol=1e-8)
    assert res.converged and res.iterations <= 50
    assert np.max(np.abs(res.grad)) < 1e-8
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-7)


def test_lbfgs_rosenbrock():
    res = lbfgs_minimize(lambda x: (rosen(x), rosen_der(x)), [-1.2, 1.0], max_iters=200, grad_tol=1e-12)
    assert res.f < 1e-10
    assert res.iterations <= 200


def test_lbfgs_already_optimal():
    res = lbfgs_minimize(lambda x: (float(x @ x), 2 * x), np.zeros(3))
    assert res.iterations == 0 and res.converged


def test_lbfgs_nonfinite_start():
    with pytest.raises(ValueError):
        lbfgs_minimize(lambda x: (np.inf, x), np.ones(2))


def test_lbfgs_stops_on_stagnation_at_a_kink():
    # 1 + |x| + |y| has no zero gradient and its value plateaus at the kink
    res = lbfgs_minimize(lambda x: (1.0 + float(np.sum(np.abs(x))), np.sign(x)), [1.3, -0.7],
                         max_iters=500, grad_tol=1e-12)
    assert not res.converged and res.message in ("no further decrease", "line search failed")
    assert res.iterations < 500
    assert res.f - 1.0 < 1e-6


def test_lbfgs_callback_sees_every_iteration():
    seen = []
    lbfgs_minimize(lambda x: (rosen(x), rosen_der(x)), [-1.2, 1.0], max_iters=20,
                   callback=lambda it, x, f: seen.append(it))
    assert seen == list(range(1, len(seen) + 1)) and len(seen) == 20
