"""Adam and L-BFGS minimizers over numpy arrays."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np
from scipy.optimize import line_search


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, grads: Dict[str, np.ndarray], params: Dict[str, np.ndarray]) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str = ""


class _Cached:
    """Memoize the last objective evaluation so f and grad share one call."""

    def __init__(self, fun):
        self.fun = fun
        self.x = None
        self.fg = None
        self.calls = 0

    def __call__(self, x):
        if self.x is None or not np.array_equal(x, self.x):
            self.x = np.array(x, copy=True)
            self.fg = self.fun(self.x)
            self.calls += 1
        return self.fg

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def lbfgs_minimize(fun: Callable[[np.ndarray], Tuple[float, np.ndarray]], x0, max_iters: int = 1000,
                   grad_tol: float = 1e-9, memory: int = 10, c1: float = 1e-4, c2: float = 0.9,
                   callback=None, ftol: float = 1e-13, stall_limit: int = 3) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) by L-BFGS.

    Directions come from the two-loop recursion over the last ``memory``
    curvature pairs; steps satisfy the strong Wolfe conditions, or Armijo
    when the curvature test cannot be met.  A step that lowers neither the
    value (relative decrease below ``ftol``) nor the best gradient norm
    counts as a stall and drops the curvature memory; ``stall_limit``
    consecutive stalls end the run unconverged.
    """
    cached = _Cached(fun)
    x = np.array(x0, dtype=float).reshape(-1)
    f, g = cached(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    pairs: deque = deque(maxlen=memory)
    it = stalls = 0
    best_g = float(np.max(np.abs(g)))
    while True:
        if np.max(np.abs(g)) < grad_tol:
            return LbfgsResult(x, f, g, it, True, "gradient tolerance reached")
        if it >= max_iters:
            return LbfgsResult(x, f, g, it, False, "iteration limit reached")

        d = _two_loop(g, pairs)
        if not pairs or g @ d >= 0:
            pairs.clear()
            d = -g * min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
        alpha = _approximate_wolfe(cached, x, f, g, d, c1, c2)
        if alpha is None:
            alpha = _wolfe(cached, x, f, g, d, c1, c2)
        if alpha is None:
            # kinks in the objective defeat the curvature test; settle for Armijo
            alpha = _backtrack(cached, x, f, g, d, 1.0, c1)
        if alpha is None and pairs:
            pairs.clear()
            d = -g * min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
            alpha = _backtrack(cached, x, f, g, d, 1.0, c1)
        if alpha is None:
            return LbfgsResult(x, f, g, it, False, "line search failed")
        x_new = x + alpha * d
        f_new, g_new = cached(x_new)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        gnorm = float(np.max(np.abs(g_new)))
        small = f - f_new <= ftol * max(abs(f), abs(f_new)) and gnorm >= best_g
        best_g = min(best_g, gnorm)
        x, f, g = x_new, f_new, g_new
        it += 1
        if callback is not None:
            callback(it, x, f)
        if small:
            stalls += 1
            pairs.clear()
            if stalls >= stall_limit:
                return LbfgsResult(x, f, g, it, False, "no further decrease")
        else:
            stalls = 0


def _wolfe(cached, x, f, g, d, c1, c2):
    with warnings.catch_warnings():
        # a failed search returns None, which the caller handles; the warning is noise
        warnings.simplefilter("ignore")
        alpha = line_search(cached.f, cached.g, x, d, gfk=g, old_fval=f, c1=c1, c2=c2,
                            amax=1e10, maxiter=15)[0]
    return alpha


def _approximate_wolfe(cached, x, f, g, d, c1, c2, eps=1e-10):
    """Accept the unit step when values differ only at roundoff level.

    Near a minimizer value differences drown in rounding error and the
    Armijo test becomes noise; the derivative-based test still works.
    """
    fa, ga = cached(x + d)
    if not np.isfinite(fa) or abs(fa - f) > eps * abs(f):
        return None
    slope, slope_a = float(g @ d), float(ga @ d)
    if c2 * slope <= slope_a <= (2.0 * c1 - 1.0) * slope:
        return 1.0
    return None


def _backtrack(cached, x, f, g, d, alpha, c1, shrink=0.5, tries=40):
    slope = float(g @ d)
    for _ in range(tries):
        fa = cached.f(x + alpha * d)
        if np.isfinite(fa) and fa <= f + c1 * alpha * slope:
            return alpha
        alpha *= shrink
    return None


def _two_loop(g: np.ndarray, pairs) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q
