import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sympoc.autodiff import Tape, finite_difference_gradient
from sympoc.constraints import Ball, Capsule, ConstraintSet
from sympoc.dynamics import (
    BarrierConfig,
    GradP,
    GradX,
    HamiltonianSpec,
    barrier_value_grad,
    beta,
    beta_prime,
    beta_second,
    hamiltonian_capped,
    hamiltonian_eval,
)

A = 0.004


def test_barrier_examples():
    cfg = BarrierConfig()
    assert barrier_value_grad(cfg, [1.0])[0] == 0.0
    assert barrier_value_grad(cfg, [0.004])[0] == pytest.approx(5.521461, abs=1e-6)
    assert barrier_value_grad(cfg, [0.0])[0] == pytest.approx(7.021461, abs=1e-6)


def test_barrier_config_validation():
    with pytest.raises(ValueError):
        BarrierConfig(a=0.0)
    with pytest.raises(ValueError):
        BarrierConfig(eps=-1.0)


def test_barrier_c1_at_switch_point():
    quad = -np.log(A) + 0.5 * (((A - 2 * A) / A) ** 2 - 1.0)
    assert abs(quad - (-np.log(A))) < 1e-12
    assert abs((A - 2 * A) / A**2 - (-1.0 / A)) < 1e-12
    below, above = np.nextafter(A, 0.0), np.nextafter(A, 1.0)
    assert abs(beta(below, A) - beta(above, A)) < 1e-9
    assert abs(beta_prime(below, A) - beta_prime(above, A)) < 1e-6 * (1.0 / A)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.05, 3.0))
def test_barrier_derivative_matches_fd(x):
    if abs(x - A) < 1e-4:
        x += 1e-3
    h = 1e-7 if x < 0.05 else 1e-5
    fd = (beta(x + h, A) - beta(x - h, A)) / (2 * h)
    assert abs(beta_prime(x, A) - fd) <= 1e-5 * max(1.0, abs(fd))
    fd2 = (beta_prime(x + h, A) - beta_prime(x - h, A)) / (2 * h)
    assert abs(beta_second(x, A) - fd2) <= 1e-4 * max(1.0, abs(fd2))


@settings(max_examples=100, deadline=None)
@given(st.floats(-1.0, 5.0), st.floats(-1.0, 5.0))
def test_barrier_convex_and_decreasing(x, y):
    if x == y:
        return
    lo, hi = min(x, y), max(x, y)
    if hi - lo > 1e-9:
        assert beta(hi, A) < beta(lo, A)
    assert beta(hi, A) <= beta(lo, A)
    mid = 0.5 * (lo + hi)
    assert beta(mid, A) <= 0.5 * (beta(lo, A) + beta(hi, A)) + 1e-12


def test_barrier_vanishes_along_schedule():
    vals = []
    for k in range(1, 8):
        a = 10.0 ** (-k)
        eps = a**1.5  # eps log a -> 0 and a^2 / eps -> 0
        vals.append(eps * beta(0.5, a))
    assert all(abs(v) < abs(u) for u, v in zip(vals, vals[1:]))
    assert abs(vals[-1]) < 1e-10


def test_capped_hamiltonian_examples():
    v, g = hamiltonian_capped(np.array([6.0, 8.0]), 25.0)
    assert v == pytest.approx(50.0) and np.allclose(g, [6.0, 8.0])
    v, g = hamiltonian_capped(np.array([30.0, 40.0]), 25.0)
    assert v == pytest.approx(937.5) and np.allclose(g, [15.0, 20.0])
    v, g = hamiltonian_capped(np.zeros(2), 25.0)
    assert v == 0.0 and np.array_equal(g, np.zeros(2))
    with pytest.raises(ValueError):
        hamiltonian_capped(np.zeros(2), 0.0)


def test_capped_hamiltonian_c1_at_cap():
    C = 25.0
    p = np.array([15.0, 20.0])  # |p| = C
    inner = 0.5 * float(p @ p)
    outer = C * 25.0 - 0.5 * C**2
    assert abs(inner - outer) < 1e-12
    v, g = hamiltonian_capped(p, C)
    assert abs(v - 0.5 * C**2) < 1e-12 and np.allclose(g, p, atol=1e-12)
    pout = p * (1 + 1e-12)
    assert np.allclose(hamiltonian_capped(pout, C)[1], p, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_capped_hamiltonian_grad_fd(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(scale=30.0, size=4)
    g = hamiltonian_capped(p, 25.0, 2)[1]
    fd = finite_difference_gradient(lambda q: float(hamiltonian_capped(q, 25.0, 2)[0]), p)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-5)


def _spec(kind):
    cset = ConstraintSet([Ball([0.0, 0.0], 0.5), Capsule([1.0, 1.0], [2.0, 1.0], 0.2)], 0.1, 2, 2)
    if kind == "latent-augmented":
        return HamiltonianSpec(kind, 25.0, 2, BarrierConfig(), cset, original_dim=4)
    return HamiltonianSpec(kind, 25.0, 2, BarrierConfig(), cset)


@pytest.mark.parametrize("kind", ["penalized", "latent-augmented"])
def test_hamiltonian_grads_fd(kind):
    spec = _spec(kind)
    n = 4 if kind == "penalized" else 8
    rng = np.random.default_rng(2)
    x = np.concatenate([[1.5, -1.0, -1.2, 2.0], rng.normal(size=n - 4)])
    p = rng.normal(scale=10.0, size=n)
    _, gx, gp = hamiltonian_eval(spec, x, p)
    fdx = finite_difference_gradient(lambda z: float(hamiltonian_eval(spec, z, p)[0]), x, 1e-6)
    fdp = finite_difference_gradient(lambda z: float(hamiltonian_eval(spec, x, z)[0]), p, 1e-6)
    assert np.allclose(gx, fdx, rtol=1e-5, atol=1e-7)
    assert np.allclose(gp, fdp, rtol=1e-5, atol=1e-7)
    if kind == "latent-augmented":
        assert np.array_equal(gx[4:], np.zeros(4))


def test_penalized_far_inside_matches_log_sum():
    spec = _spec("penalized")
    x = np.array([3.0, -3.0, -3.0, 3.0])
    p = np.array([1.0, 2.0, 3.0, 4.0])
    h = spec.constraint.values(x)
    assert np.all(h > 1.0)
    val = hamiltonian_eval(spec, x, p)[0]
    assert val == pytest.approx(15.0 - 0.0004 * np.sum(-np.log(h)), rel=1e-14)


def test_latent_with_zero_p2_reduces():
    lat, pen = _spec("latent-augmented"), _spec("penalized")
    x = np.array([1.5, -1.0, -1.2, 2.0])
    p = np.array([1.0, -2.0, 0.5, 3.0])
    v1 = hamiltonian_eval(lat, np.concatenate([x, [9.0, 9.0, 9.0, 9.0]]), np.concatenate([p, np.zeros(4)]))[0]
    v2 = hamiltonian_eval(pen, x, p)[0]
    assert v1 == pytest.approx(v2, rel=1e-15)


def test_spec_validation():
    with pytest.raises(ValueError):
        HamiltonianSpec("quantum")
    with pytest.raises(ValueError):
        HamiltonianSpec("penalized")
    with pytest.raises(ValueError):
        HamiltonianSpec("capped-kinetic", speed_cap=0.0)


@pytest.mark.parametrize("kind", ["capped-kinetic", "penalized", "latent-augmented"])
def test_tape_functions_vjp_fd(kind):
    spec = HamiltonianSpec("capped-kinetic", 25.0, 2) if kind == "capped-kinetic" else _spec(kind)
    n = 8 if kind == "latent-augmented" else 4
    rng = np.random.default_rng(5)
    x = np.concatenate([[1.5, -1.0, -1.2, 2.0], rng.normal(size=n - 4)])[None]
    p = rng.normal(scale=20.0, size=(1, n))
    w = rng.normal(size=(1, n))
    fns = [GradP(spec)] + ([] if kind == "capped-kinetic" else [GradX(spec)])
    for fn, point in zip(fns, (p, x)):
        t = Tape()
        z = t.parameter(point)
        out = t.push("dot", [t.function(fn, z), t.constant(w)])
        g = t.backward(out, [z])[z]
        fd = finite_difference_gradient(lambda v: float(np.sum(fn.forward(v) * w)), point, 1e-6)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-6)
