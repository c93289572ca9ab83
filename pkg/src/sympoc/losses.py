"""Training objectives for SympOCnet and augmented-Lagrangian multipliers.

Every loss is built on an autodiff tape from a batched *rollout*: for each
case k and each time in ``[0, s_1, ..., s_N]`` the latent point
``(y0_k + s u_k, q0_k)`` is pushed through the net together with the tangent
``(u_k, 0)``, which yields ``x(s)``, ``p(s)`` and their time derivatives.

Arrays for the latent lines and multipliers carry a leading case axis so
that one shared net can be trained against several boundary conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import DualVector, Node, Tape
from .constraints import ConstraintSet
from .dynamics import (
    BarrierConfig,
    BarrierSum,
    ConstraintValues,
    HamiltonianSpec,
    grad_p_node,
    grad_x_node,
)
from .sympnet import BoundNet, LatentLine, SympNet, bind, forward_with_tangent, sympnet_forward

LOSS_KINDS = ("base", "log", "quad", "aug")


@dataclass
class LossConfig:
    kind: str = "aug"
    lam: float = 600.0
    lam_tilde: float = 200.0
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    T: float = 1.0
    N: int = 40

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.lam <= 0 or self.lam_tilde <= 0:
            raise ValueError("loss weights must be positive")
        if self.N < 2:
            raise ValueError("need at least two sample times")

    @property
    def sample_times(self) -> np.ndarray:
        """s_j = j T / N for j = 1..N."""
        return self.T * np.arange(1, self.N + 1) / self.N


@dataclass
class MultiplierState:
    mu: np.ndarray    # (K, N, dim_h)
    lam1: np.ndarray  # (K, n)
    lam2: np.ndarray  # (K, n)
    rho1: float = 1.0
    rho2: float = 1.0

    @classmethod
    def zeros(cls, cases: int, N: int, dim_h: int, n: int, rho1: float = 1.0, rho2: float = 1.0):
        return cls(np.zeros((cases, N, dim_h)), np.zeros((cases, n)), np.zeros((cases, n)), rho1, rho2)

    def copy(self) -> "MultiplierState":
        return MultiplierState(self.mu.copy(), self.lam1.copy(), self.lam2.copy(), self.rho1, self.rho2)


@dataclass
class LatentLines:
    """K latent lines stacked row-wise."""

    y0: np.ndarray
    u: np.ndarray
    q0: np.ndarray

    @classmethod
    def stack(cls, lines: Sequence[LatentLine]) -> "LatentLines":
        return cls(np.array([l.y0 for l in lines]), np.array([l.u for l in lines]),
                   np.array([l.q0 for l in lines]))

    @classmethod
    def straight(cls, x0s, xTs, T: float) -> "LatentLines":
        x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
        xTs = np.atleast_2d(np.asarray(xTs, dtype=float))
        return cls(x0s.copy(), (xTs - x0s) / T, np.zeros_like(x0s))

    def __len__(self) -> int:
        return self.y0.shape[0]

    def line(self, k: int) -> LatentLine:
        return LatentLine(self.y0[k], self.u[k], self.q0[k])

    def parameters(self) -> dict:
        return {"y0": self.y0, "u": self.u, "q0": self.q0}

    def copy(self) -> "LatentLines":
        return LatentLines(self.y0.copy(), self.u.copy(), self.q0.copy())


@dataclass
class Rollout:
    x: Node
    p: Node
    dx: Node
    dp: Node
    cases: int
    N: int

    @property
    def start_rows(self) -> np.ndarray:
        return np.arange(self.cases) * (self.N + 1)

    @property
    def end_rows(self) -> np.ndarray:
        return self.start_rows + self.N

    @property
    def sample_rows(self) -> np.ndarray:
        """Rows for s_1..s_N, case-major."""
        return (self.start_rows[:, None] + np.arange(1, self.N + 1)).reshape(-1)


def rollout(tape: Tape, net: BoundNet, y0: Node, u: Node, q0: Node, cfg: LossConfig) -> Rollout:
    cases = y0.shape[0]
    times = np.concatenate([[0.0], cfg.sample_times])
    rows = np.repeat(np.arange(cases), len(times))
    s = tape.constant(np.tile(times, cases)[:, None])
    U = tape.push("take", [u], (rows, 0))
    Y = tape.push("add", [tape.push("take", [y0], (rows, 0)), tape.push("hadamard", [s, U])])
    Q = tape.push("take", [q0], (rows, 0))
    xd, pd = forward_with_tangent(tape, net, DualVector(Y, U), DualVector(Q, None))
    return Rollout(xd.value, pd.value, xd.tangent, pd.tangent, cases, cfg.N)


def _rows(tape: Tape, node: Node, rows: np.ndarray) -> Node:
    return tape.push("take", [node], (rows, 0))


def residual_loss(tape: Tape, roll: Rollout, H: HamiltonianSpec) -> Node:
    """Squared Hamiltonian-ODE residuals summed over the sample times."""
    rows = roll.sample_rows
    X, P = _rows(tape, roll.x, rows), _rows(tape, roll.p, rows)
    dX, dP = _rows(tape, roll.dx, rows), _rows(tape, roll.dp, rows)
    r1 = tape.push("subtract", [dX, grad_p_node(tape, H, P)])
    gx = grad_x_node(tape, H, X)
    r2 = dP if gx is None else tape.push("add", [dP, gx])
    return tape.push("add", [tape.push("square-norm", [r1]), tape.push("square-norm", [r2])])


def boundary_gaps(tape: Tape, roll: Rollout, x0: np.ndarray, xT: np.ndarray) -> Tuple[Node, Node]:
    """(x0 - x(0), xT - x(T)) per case."""
    X0 = _rows(tape, roll.x, roll.start_rows)
    XT = _rows(tape, roll.x, roll.end_rows)
    return (tape.push("subtract", [tape.constant(x0), X0]),
            tape.push("subtract", [tape.constant(xT), XT]))


def boundary_loss(tape: Tape, roll: Rollout, x0, xT) -> Node:
    g0, gT = boundary_gaps(tape, roll, np.atleast_2d(x0), np.atleast_2d(xT))
    return tape.push("add", [tape.push("square-norm", [g0]), tape.push("square-norm", [gT])])


def total_loss(tape: Tape, cfg: LossConfig, roll: Rollout, H: HamiltonianSpec,
               cset: Optional[ConstraintSet], x0, xT,
               mult: Optional[MultiplierState] = None) -> Tuple[Node, Dict[str, Node]]:
    """The selected objective and its named terms.

    ``x0``/``xT`` are (K, n) boundary states for the full (possibly latent
    augmented) coordinates.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    xT = np.atleast_2d(np.asarray(xT, dtype=float))
    terms: Dict[str, Node] = {}
    terms["res"] = residual_loss(tape, roll, H)
    g0, gT = boundary_gaps(tape, roll, x0, xT)
    bd = tape.push("add", [tape.push("square-norm", [g0]), tape.push("square-norm", [gT])])
    terms["bd"] = tape.push("scale", [bd], cfg.lam)

    hv = None
    if cfg.kind != "base" and cset is not None and cset.size:
        X = _rows(tape, roll.x, roll.sample_rows)
        n1 = cset.state_dim
        hv = tape.function(ConstraintValues(cset, n1), X)

    if cfg.kind == "log":
        eps, a = cfg.barrier.eps, cfg.barrier.a
        if hv is not None:
            terms["penalty"] = tape.push("scale", [tape.function(BarrierSum(a), hv)],
                                         cfg.lam_tilde * eps / cfg.N)
        parts = []
        for g in (g0, gT):
            parts.append(tape.function(BarrierSum(a), g))
            parts.append(tape.function(BarrierSum(a), tape.push("scale", [g], -1.0)))
        terms["bd_penalty"] = tape.push("affine-combination", parts, ([eps] * 4, 0.0))
    elif cfg.kind == "quad":
        if hv is not None:
            terms["penalty"] = tape.push(
                "scale", [tape.push("square-norm", [tape.push("min-with-zero", [hv])])],
                cfg.lam_tilde / cfg.N)
    elif cfg.kind == "aug":
        if mult is None:
            raise ValueError("augmented-Lagrangian loss needs a MultiplierState")
        if hv is not None:
            mu = mult.mu.reshape(-1, mult.mu.shape[-1])
            shifted = tape.push("subtract", [tape.constant(mu), tape.push("scale", [hv], mult.rho1)])
            terms["lagrange_h"] = tape.push(
                "scale", [tape.push("square-norm", [tape.push("max-with-zero", [shifted])])],
                0.5 / mult.rho1)
        b0 = tape.push("subtract", [tape.constant(mult.lam1), tape.push("scale", [g0], mult.rho2)])
        bT = tape.push("subtract", [tape.constant(mult.lam2), tape.push("scale", [gT], mult.rho2)])
        terms["lagrange_bd"] = tape.push(
            "affine-combination",
            [tape.push("square-norm", [b0]), tape.push("square-norm", [bT])],
            ([0.5 / mult.rho2, 0.5 / mult.rho2], 0.0))

    names = list(terms)
    total = tape.push("affine-combination", [terms[k] for k in names], ([1.0] * len(names), 0.0))
    return total, terms


@dataclass
class LossEvaluation:
    value: float
    grads: Dict[str, np.ndarray]
    terms: Dict[str, float]


def evaluate(cfg: LossConfig, net: SympNet, lines: LatentLines, H: HamiltonianSpec,
             cset: Optional[ConstraintSet], x0s, xTs, mult: Optional[MultiplierState] = None,
             train_net: bool = True, train_lines: bool = True) -> LossEvaluation:
    """Build the loss on a fresh tape and return value, gradients and terms."""
    tape = Tape()
    bound = bind(tape, net, trainable=train_net)
    push = tape.parameter if train_lines else tape.constant
    y0, u, q0 = push(lines.y0), push(lines.u), push(lines.q0)
    roll = rollout(tape, bound, y0, u, q0, cfg)
    total, terms = total_loss(tape, cfg, roll, H, cset, x0s, xTs, mult)
    seeds = {}
    if train_net:
        seeds.update(bound.leaves)
    if train_lines:
        seeds.update({"y0": y0, "u": u, "q0": q0})
    grads = tape.backward(total, list(seeds.values())) if seeds else {}
    return LossEvaluation(
        float(total.value),
        {name: grads[node] for name, node in seeds.items()},
        {name: float(node.value) for name, node in terms.items()},
    )


def latent_states(net: SympNet, lines: LatentLines, times) -> Tuple[np.ndarray, np.ndarray]:
    """phi(y0 + s u, q0) for every case and time: arrays (K, len(times), n)."""
    times = np.asarray(times, dtype=float)
    Y = lines.y0[:, None, :] + times[None, :, None] * lines.u[:, None, :]
    Q = np.broadcast_to(lines.q0[:, None, :], Y.shape)
    return sympnet_forward(net, Y, Q)


def update_multipliers(mult: MultiplierState, net: SympNet, lines: LatentLines,
                       cset: Optional[ConstraintSet], x0s, xTs, cfg: LossConfig) -> MultiplierState:
    """One augmented-Lagrangian multiplier step (returns a new state)."""
    x0s = np.atleast_2d(x0s)
    xTs = np.atleast_2d(xTs)
    X, _ = latent_states(net, lines, np.concatenate([[0.0], cfg.sample_times]))
    out = mult.copy()
    if cset is not None and cset.size:
        h = cset.values(X[:, 1:, :cset.state_dim])
        out.mu = np.maximum(0.0, mult.mu - mult.rho1 * h)
    out.lam1 = mult.lam1 - mult.rho2 * (x0s - X[:, 0])
    out.lam2 = mult.lam2 - mult.rho2 * (xTs - X[:, -1])
    return out


def violations(net: SympNet, lines: LatentLines, cset: Optional[ConstraintSet], x0s, xTs,
               cfg: LossConfig) -> Tuple[float, float]:
    """(max constraint violation, max boundary error) at the sample times."""
    X, _ = latent_states(net, lines, np.concatenate([[0.0], cfg.sample_times]))
    hviol = 0.0
    if cset is not None and cset.size:
        hviol = float(max(0.0, -np.min(cset.values(X[:, 1:, :cset.state_dim]))))
    bviol = float(max(np.max(np.abs(np.atleast_2d(x0s) - X[:, 0])),
                      np.max(np.abs(np.atleast_2d(xTs) - X[:, -1]))))
    return hviol, bviol


def autotune_rho(history: List[Tuple[float, float]], mult: MultiplierState,
                 theta: float = 0.25, factor: float = 2.0, cap: float = 1e6,
                 tol: float = 1e-4) -> MultiplierState:
    """Grow rho1/rho2 when the matching violation stalls.

    ``history`` holds (constraint violation, boundary error) per completed
    outer iteration.  A penalty grows when the latest violation exceeds
    ``theta`` times the previous one and is still above ``tol``.
    """
    if len(history) < 2:
        return mult
    (h_prev, b_prev), (h_now, b_now) = history[-2], history[-1]
    out = mult.copy()
    if h_now > tol and h_now > theta * h_prev:
        out.rho1 = min(cap, mult.rho1 * factor)
    if b_now > tol and b_now > theta * b_prev:
        out.rho2 = min(cap, mult.rho2 * factor)
    return out
