"""Hamiltonians for minimum-energy planning and the C^1 log barrier.

The barrier is ``beta_a(x) = -log x`` for ``x > a`` and the quadratic
``-log a + ((x - 2a)^2 / a^2 - 1) / 2`` below, so it is finite everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .autodiff import Node, Tape, TapeFunction
from .constraints import ConstraintSet


@dataclass(frozen=True)
class BarrierConfig:
    a: float = 0.004
    eps: float = 0.0004

    def __post_init__(self):
        if self.a <= 0 or self.eps <= 0:
            raise ValueError("barrier switch point a and weight eps must be positive")


def beta(x, a: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inner = np.maximum(x, a)  # keeps log() finite on the quadratic branch
    quad = -np.log(a) + 0.5 * (((x - 2.0 * a) / a) ** 2 - 1.0)
    return np.where(x > a, -np.log(inner), quad)


def beta_prime(x, a: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x > a, -1.0 / np.maximum(x, a), (x - 2.0 * a) / a**2)


def beta_second(x, a: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x > a, 1.0 / np.maximum(x, a) ** 2, 1.0 / a**2)


def barrier_value_grad(cfg: BarrierConfig, x) -> Tuple[float, np.ndarray]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.sum(beta(x, cfg.a))), beta_prime(x, cfg.a)


def _agent_blocks(p: np.ndarray, agent_dim: int) -> np.ndarray:
    if p.shape[-1] % agent_dim:
        raise ValueError(f"momentum length {p.shape[-1]} is not a multiple of {agent_dim}")
    return p.reshape(p.shape[:-1] + (-1, agent_dim))


def hamiltonian_capped(p, C_v: float, agent_dim: Optional[int] = None):
    """Kinetic Hamiltonian of 0.5|v|^2 with per-agent speed cap C_v.

    Returns (value, grad_p); batched over leading axes of ``p``.
    """
    if C_v <= 0:
        raise ValueError("speed cap C_v must be positive")
    p = np.asarray(p, dtype=float)
    agent_dim = p.shape[-1] if agent_dim is None else agent_dim
    P = _agent_blocks(p, agent_dim)
    r = np.linalg.norm(P, axis=-1)
    inside = r <= C_v
    val = np.where(inside, 0.5 * r**2, C_v * r - 0.5 * C_v**2)
    scale = np.where(inside, 1.0, C_v / np.where(inside, 1.0, r))
    return val.sum(axis=-1), (P * scale[..., None]).reshape(p.shape)


def _capped_hvp(p, v, C_v, agent_dim):
    P = _agent_blocks(p, agent_dim)
    V = _agent_blocks(v, agent_dim)
    r = np.linalg.norm(P, axis=-1, keepdims=True)
    inside = r <= C_v
    rs = np.where(inside, 1.0, r)
    proj = np.sum(P * V, axis=-1, keepdims=True)
    outer = C_v * (V / rs - P * proj / rs**3)
    return np.where(inside, V, outer).reshape(p.shape)


@dataclass
class HamiltonianSpec:
    """Which Hamiltonian drives the latent dynamics.

    ``kind`` is ``capped-kinetic``, ``penalized`` or ``latent-augmented``.  For
    the latent kind the first ``original_dim`` coordinates are physical and the
    remaining ones carry ``0.5 |p2|^2``.
    """

    kind: str
    speed_cap: float = 25.0
    agent_dim: int = 2
    barrier: Optional[BarrierConfig] = None
    constraint: Optional[ConstraintSet] = None
    original_dim: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("capped-kinetic", "penalized", "latent-augmented"):
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}")
        if self.speed_cap <= 0:
            raise ValueError("speed cap must be positive")
        if self.kind != "capped-kinetic" and (self.barrier is None or self.constraint is None):
            raise ValueError(f"{self.kind} Hamiltonian needs a barrier and a constraint set")
        if self.kind == "latent-augmented" and self.original_dim is None:
            raise ValueError("latent-augmented Hamiltonian needs original_dim")

    def physical_dim(self, n: int) -> int:
        return self.original_dim if self.kind == "latent-augmented" else n


def _penalty(spec: HamiltonianSpec, x1):
    """eps * beta(h(x1)) and its gradient."""
    h = spec.constraint.values(x1)
    a, eps = spec.barrier.a, spec.barrier.eps
    val = eps * np.sum(beta(h, a), axis=-1)
    grad = eps * spec.constraint.vjp(x1, beta_prime(h, a))
    return val, grad


def hamiltonian_eval(spec: HamiltonianSpec, x, p):
    """Value and gradients (value, grad_x, grad_p), batched over leading axes."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != p.shape:
        raise ValueError("x and p must have the same shape")
    n = x.shape[-1]
    n1 = spec.physical_dim(n)
    val, gp1 = hamiltonian_capped(p[..., :n1], spec.speed_cap, spec.agent_dim)
    grad_x = np.zeros_like(x)
    grad_p = np.zeros_like(p)
    grad_p[..., :n1] = gp1
    if spec.kind != "capped-kinetic":
        pen, gpen = _penalty(spec, x[..., :n1])
        val = val - pen
        grad_x[..., :n1] = -gpen
    if spec.kind == "latent-augmented":
        val = val + 0.5 * np.sum(p[..., n1:] ** 2, axis=-1)
        grad_p[..., n1:] = p[..., n1:]
    return val, grad_x, grad_p


# ---------------------------------------------------------------- tape level

class GradP(TapeFunction):
    """p -> grad_p H; cotangents via the (symmetric) Hessian in p."""

    def __init__(self, spec: HamiltonianSpec):
        self.spec = spec

    def forward(self, p):
        n1 = self.spec.physical_dim(p.shape[-1])
        out = p.copy()
        out[..., :n1] = hamiltonian_capped(p[..., :n1], self.spec.speed_cap, self.spec.agent_dim)[1]
        return out

    def vjp(self, g, p):
        n1 = self.spec.physical_dim(p.shape[-1])
        out = g.copy()
        out[..., :n1] = _capped_hvp(p[..., :n1], g[..., :n1], self.spec.speed_cap, self.spec.agent_dim)
        return (out,)


class GradX(TapeFunction):
    """x -> grad_x H for the penalized kinds; cotangents via the Hessian in x."""

    def __init__(self, spec: HamiltonianSpec):
        self.spec = spec

    def forward(self, x):
        n1 = self.spec.physical_dim(x.shape[-1])
        out = np.zeros_like(x)
        out[..., :n1] = -_penalty(self.spec, x[..., :n1])[1]
        return out

    def vjp(self, g, x):
        spec = self.spec
        n1 = spec.physical_dim(x.shape[-1])
        x1, g1 = x[..., :n1], g[..., :n1]
        cs, a, eps = spec.constraint, spec.barrier.a, spec.barrier.eps
        h = cs.values(x1)
        # Hessian of eps*beta(h(x)) = eps (J^T diag(beta'') J + sum_k beta'_k Hess h_k)
        hv = cs.vjp(x1, beta_second(h, a) * cs.jvp(x1, g1)) + cs.hvp(x1, beta_prime(h, a), g1)
        out = np.zeros_like(x)
        out[..., :n1] = -eps * hv
        return (out,)


class ConstraintValues(TapeFunction):
    """x -> h(x) on the physical block."""

    def __init__(self, cset: ConstraintSet, n1: int):
        self.cset = cset
        self.n1 = n1

    def forward(self, x):
        return self.cset.values(x[..., :self.n1])

    def vjp(self, g, x):
        out = np.zeros_like(x)
        out[..., :self.n1] = self.cset.vjp(x[..., :self.n1], g)
        return (out,)


class BarrierSum(TapeFunction):
    """v -> sum(beta_a(v))."""

    def __init__(self, a: float):
        self.a = a

    def forward(self, v):
        return np.asarray(np.sum(beta(v, self.a)))

    def vjp(self, g, v):
        return (g * beta_prime(v, self.a),)


def grad_p_node(tape: Tape, spec: HamiltonianSpec, p: Node) -> Node:
    return tape.function(GradP(spec), p)


def grad_x_node(tape: Tape, spec: HamiltonianSpec, x: Node) -> Optional[Node]:
    """None when the Hamiltonian does not depend on x."""
    if spec.kind == "capped-kinetic":
        return None
    return tape.function(GradX(spec), x)
