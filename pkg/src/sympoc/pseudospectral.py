"""Pseudospectral refinement on Chebyshev-Gauss-Lobatto nodes.

States at the nodes are the decision variables; the derivative is ``D X`` and
the energy ``sum_k w_k |(D X)_k|^2 / 2`` uses Clenshaw-Curtis weights.  The
two boundary rows are fixed and eliminated.  Inequalities ``h >= 0`` are
imposed at the interior nodes, at the midpoints between consecutive nodes and
at every time of the uniform output grid (the last two through the
interpolant), and ``C_v^2 - |(D X)_k|^2 >= 0`` per agent at the nodes.  The
extra check points keep the returned trajectory feasible between nodes and
stop agents from passing through each other there.  Everything is handled by an augmented Lagrangian with
L-BFGS inner solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import BarycentricInterpolator
from scipy.linalg import cholesky, solve_triangular

from .constraints import ConstraintSet
from .optim import lbfgs_minimize
from .scenarios import Scenario
from .training import Trajectory


@dataclass
class CollocationGrid:
    order: int
    T: float
    nodes: np.ndarray
    weights: np.ndarray
    D: np.ndarray

    def interpolate(self, values, times) -> np.ndarray:
        """Barycentric evaluation of the node interpolant at ``times``."""
        return BarycentricInterpolator(self.nodes, np.asarray(values, dtype=float), axis=0)(times)

    def interpolation_matrix(self, times) -> np.ndarray:
        return self.interpolate(np.eye(self.order + 1), times)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])


def cgl_nodes(N: int) -> np.ndarray:
    """CGL points on [-1, 1] in ascending order."""
    return -np.cos(np.pi * np.arange(N + 1) / N)


def cgl_differentiation(N: int) -> np.ndarray:
    tau = cgl_nodes(N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(N + 1)
    dX = tau[:, None] - tau[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    # diagonal from the negative row sum keeps D applied to constants at zero
    D -= np.diag(D.sum(axis=1))
    return D


def clenshaw_curtis_weights(N: int) -> np.ndarray:
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    v = np.ones(N - 1)
    inner = theta[1:N]
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k**2 - 1)
        v -= np.cos(N * inner) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k**2 - 1)
    w[1:N] = 2.0 * v / N
    return w


def cgl_grid(N_c: int, T: float = 1.0) -> CollocationGrid:
    if N_c < 2:
        raise ValueError("collocation order must be at least 2")
    if T <= 0:
        raise ValueError("horizon T must be positive")
    nodes = 0.5 * T * (cgl_nodes(N_c) + 1.0)
    return CollocationGrid(N_c, T, nodes, 0.5 * T * clenshaw_curtis_weights(N_c),
                           (2.0 / T) * cgl_differentiation(N_c))


@dataclass
class NlpProblem:
    grid: CollocationGrid
    X0: np.ndarray           # initial guess at the nodes, (N_c + 1, n)
    x0: np.ndarray
    xT: np.ndarray
    cset: ConstraintSet
    speed_cap: Optional[float]
    agent_dim: int
    N_out: int = 100
    check: Optional[np.ndarray] = None   # rows mapping X to the constrained points

    def __post_init__(self):
        if self.check is None:
            k = self.grid.order + 1
            extra = np.concatenate([self.grid.midpoints, self.output_times[1:-1]])
            self.check = np.vstack([np.eye(k)[1:-1], self.grid.interpolation_matrix(extra)])

    @property
    def output_times(self) -> np.ndarray:
        return np.linspace(0.0, self.grid.T, self.N_out + 1)

    @property
    def n(self) -> int:
        return self.X0.shape[1]

    def full(self, z) -> np.ndarray:
        X = np.empty_like(self.X0)
        X[0], X[-1] = self.x0, self.xT
        X[1:-1] = np.asarray(z).reshape(len(X) - 2, self.n)
        return X

    def objective(self, X) -> float:
        V = self.grid.D @ X
        return 0.5 * float(self.grid.weights @ np.sum(V * V, axis=1))

    def constraints(self, X):
        """(h at the check points, speed margins at every node)."""
        h = self.cset.values(self.check @ X) if self.cset.size else np.zeros((len(self.check), 0))
        if self.speed_cap is None:
            return h, np.zeros((len(X), 0))
        V = (self.grid.D @ X).reshape(len(X), -1, self.agent_dim)
        return h, self.speed_cap**2 - np.sum(V * V, axis=-1)


def transcribe(scenario: Scenario, init: Trajectory, grid: Optional[CollocationGrid] = None,
               speed_cap: bool = True, N_out: int = 100) -> NlpProblem:
    """Sample ``init`` at the nodes (linear interpolation) and pin the ends."""
    grid = cgl_grid(scenario.N_c, scenario.T) if grid is None else grid
    if init.states.shape[1] != scenario.n:
        raise ValueError(f"trajectory has dimension {init.states.shape[1]}, scenario needs {scenario.n}")
    if init.times[0] > 0.0 or init.times[-1] < grid.T * (1 - 1e-12):
        raise ValueError(f"initial trajectory covers [{init.times[0]}, {init.times[-1]}], "
                         f"refinement needs [0, {grid.T}]")
    X = np.column_stack([np.interp(grid.nodes, init.times, init.states[:, j]) for j in range(scenario.n)])
    return NlpProblem(grid, X, scenario.x0.copy(), scenario.xT.copy(), scenario.constraint_set(),
                      scenario.C_v if speed_cap else None, scenario.m, N_out)


def linear_trajectory(x0, xT, T: float = 1.0, samples: int = 2) -> Trajectory:
    """x(t) = x0 + t (xT - x0) / T."""
    x0 = np.asarray(x0, dtype=float)
    xT = np.asarray(xT, dtype=float)
    t = np.linspace(0.0, T, samples)
    v = (xT - x0) / T
    return Trajectory(t, x0 + t[:, None] * v, np.tile(v, (samples, 1)))


@dataclass
class RefineTolerances:
    constraint: float = 1e-8
    grad: float = 1e-5
    max_outer: int = 40
    inner_iters: int = 500
    rho0: float = 10.0
    rho_factor: float = 4.0
    rho_cap: float = 1e6
    theta: float = 0.25
    patience: int = 4    # rounds at the penalty cap without a better violation before giving up


@dataclass
class RefineStats:
    min_constraint: float        # over the nodes and all check points
    dense_min_constraint: float  # over the returned output grid
    max_speed_violation: float
    cost: float
    iterations: int
    outer_iterations: int
    converged: bool
    message: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _al_value_grad(nlp: NlpProblem, X, mu_h, mu_v, rho):
    grid = nlp.grid
    V = grid.D @ X
    wV = grid.weights[:, None] * V
    f = 0.5 * float(np.sum(wV * V))
    gV = wV
    gX = np.zeros_like(X)
    h, s = nlp.constraints(X)
    if h.size:
        m = np.maximum(0.0, mu_h - rho * h)
        f += float(np.sum(m * m - mu_h * mu_h)) / (2.0 * rho)
        gX -= nlp.check.T @ nlp.cset.vjp(nlp.check @ X, m)
    if s.size:
        m = np.maximum(0.0, mu_v - rho * s)
        f += float(np.sum(m * m - mu_v * mu_v)) / (2.0 * rho)
        Vb = V.reshape(len(X), -1, nlp.agent_dim)
        gV = gV + (2.0 * m[..., None] * Vb).reshape(V.shape)
    gX += grid.D.T @ gV
    return f, gX[1:-1].reshape(-1)


def _violation(h, s) -> float:
    worst = 0.0
    for c in (h, s):
        if c.size:
            worst = max(worst, float(-np.min(c)))
    return max(worst, 0.0)


def min_constraint(nlp: NlpProblem, X) -> float:
    """Smallest h over all nodes (ends included) and the check points."""
    if not nlp.cset.size:
        return 0.0
    return float(min(np.min(nlp.cset.values(X)), np.min(nlp.cset.values(nlp.check @ X))))


def solve_refine(nlp: NlpProblem, tol: Optional[RefineTolerances] = None):
    """Augmented-Lagrangian solve; returns (densified Trajectory, RefineStats).

    Stops as converged once the violation is below ``tol.constraint`` and the
    inner gradient below ``tol.grad``.  Gives up (converged False) after
    ``max_outer`` rounds, or after ``patience`` rounds at the penalty cap
    without a smaller violation.
    """
    tol = RefineTolerances() if tol is None else tol
    X = nlp.X0.copy()
    X[0], X[-1] = nlp.x0, nlp.xT
    h, s = nlp.constraints(X)
    mu_h, mu_v = np.zeros_like(h), np.zeros_like(s)
    rho = tol.rho0
    total = 0
    prev_viol = _violation(h, s)
    best_viol, stale = np.inf, 0
    converged = False
    message = "outer iteration limit reached"
    outer = 0
    # The energy Hessian in the interior rows is the constant A = D_i^T W D_i,
    # badly conditioned (~N_c^4).  With A = L L^T and X_i = L^{-T} Y the energy
    # becomes |Y|^2 / 2 plus a linear term, which L-BFGS handles well.
    Di = nlp.grid.D[:, 1:-1]
    L = cholesky(Di.T @ (nlp.grid.weights[:, None] * Di), lower=True)
    shape = (len(X) - 2, nlp.n)

    def to_x(y):
        return solve_triangular(L, y.reshape(shape), trans="T", lower=True)

    def fun(y):
        f, g = _al_value_grad(nlp, nlp.full(to_x(y)), mu_h, mu_v, rho)
        return f, solve_triangular(L, g.reshape(shape), lower=True).reshape(-1)

    for outer in range(1, tol.max_outer + 1):
        res = lbfgs_minimize(fun, (L.T @ X[1:-1]).reshape(-1), max_iters=tol.inner_iters,
                             grad_tol=tol.grad)
        total += res.iterations
        X = nlp.full(to_x(res.x))
        h, s = nlp.constraints(X)
        viol = _violation(h, s)
        if viol < tol.constraint and np.max(np.abs(res.grad)) < tol.grad:
            converged, message = True, "converged"
            break
        if viol < 0.5 * best_viol or viol < tol.constraint:
            best_viol, stale = min(viol, best_viol), 0
        elif rho >= tol.rho_cap:
            stale += 1
            if stale >= tol.patience:
                message = "no progress on the constraint violation"
                break
        mu_h = np.maximum(0.0, mu_h - rho * h)
        mu_v = np.maximum(0.0, mu_v - rho * s)
        if viol > tol.constraint and viol > tol.theta * prev_viol:
            rho = min(tol.rho_cap, rho * tol.rho_factor)
        prev_viol = viol

    traj = densify(nlp.grid, X, nlp.N_out)
    dense = nlp.cset.values(traj.states) if nlp.cset.size else np.zeros(1)
    stats = RefineStats(
        min_constraint=min_constraint(nlp, X),
        dense_min_constraint=float(np.min(dense)),
        max_speed_violation=float(max(0.0, -np.min(s))) if s.size else 0.0,
        cost=nlp.objective(X),
        iterations=total,
        outer_iterations=outer,
        converged=converged,
        message=message,
    )
    return traj, stats


def densify(grid: CollocationGrid, X, N_out: int = 100) -> Trajectory:
    times = np.linspace(0.0, grid.T, N_out + 1)
    states = grid.interpolate(X, times)
    vel = grid.interpolate(grid.D @ X, times)
    # pin the ends to the node values; the interpolant reproduces them up to rounding
    states[0], states[-1] = X[0], X[-1]
    return Trajectory(times, states, vel)
