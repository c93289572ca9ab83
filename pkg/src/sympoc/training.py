"""Training loops: single-case SympOCnet, offline multi-case, online adaptation.

The net starts at the identity map (all ``a`` zero) and every latent line at
the straight segment between its boundary states, so the boundary loss is
zero at iteration 0.  With latent augmentation the state gains ``latent``
extra coordinates pinned to zero at both ends.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .losses import (
    LatentLines,
    LossConfig,
    MultiplierState,
    autotune_rho,
    evaluate,
    update_multipliers,
    violations,
)
from .optim import AdamState, adam_step, clip_by_global_norm, lbfgs_minimize
from .scenarios import Scenario
from .sympnet import LatentLine, SympNet, load_net, save_net, sympnet_forward, tangent_numpy


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 20000
    loss: Optional[LossConfig] = None   # None: take it from the scenario
    lr: float = 1e-3
    clip: float = 1e4
    outer_steps: int = 500
    latent: Optional[int] = None        # None: take it from the scenario
    seed: int = 0
    repeats: int = 1
    rho_cap: float = 1e6
    log_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.outer_steps < 1:
            raise ValueError("outer_steps must be at least 1")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    velocities: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("a trajectory needs at least two times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if self.states.ndim != 2 or self.states.shape[0] != len(self.times):
            raise ValueError("states must have one row per time")
        if self.velocities is not None and self.velocities.shape != self.states.shape:
            raise ValueError("velocities must match the shape of states")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass
class TrainResult:
    net: SympNet
    lines: LatentLines
    history: List[float]
    mult: MultiplierState
    latent: int = 0
    iterations: int = 0
    terms: Dict[str, float] = field(default_factory=dict)

    @property
    def line(self) -> LatentLine:
        return self.lines.line(0)


def augment(x, latent: int) -> np.ndarray:
    """Append ``latent`` zero coordinates to every row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([x, np.zeros((x.shape[0], latent))])


def _resolve(scenario: Scenario, cfg: TrainConfig) -> Tuple[LossConfig, int]:
    loss = cfg.loss if cfg.loss is not None else scenario.loss_config()
    latent = scenario.latent if cfg.latent is None else cfg.latent
    return loss, latent


def _train(scenario: Scenario, x0s, xTs, cfg: TrainConfig) -> TrainResult:
    loss, latent = _resolve(scenario, cfg)
    H = scenario.hamiltonian(latent)
    cset = scenario.constraint_set()
    x0s, xTs = augment(x0s, latent), augment(xTs, latent)
    K, dim = x0s.shape
    rng = np.random.default_rng(cfg.seed)
    net = SympNet.init(dim, scenario.layers, scenario.width, scenario.activation, rng)
    lines = LatentLines.straight(x0s, xTs, loss.T)
    mult = MultiplierState.zeros(K, loss.N, cset.size, dim, scenario.rho, scenario.rho)
    params = dict(net.parameters())
    params.update(lines.parameters())
    adam = AdamState(lr=cfg.lr)
    history: List[float] = []
    viol_history: List[Tuple[float, float]] = []
    ev = None
    for it in range(cfg.iterations):
        ev = evaluate(loss, net, lines, H, cset, x0s, xTs, mult)
        if not math.isfinite(ev.value):
            bad = [k for k, v in ev.terms.items() if not math.isfinite(v)]
            raise TrainingError(f"loss became non-finite at iteration {it} (terms: {', '.join(bad) or 'total'})")
        history.append(ev.value)
        clip_by_global_norm(ev.grads, cfg.clip)
        adam_step(adam, ev.grads, params)
        if loss.kind == "aug" and (it + 1) % cfg.outer_steps == 0:
            mult = update_multipliers(mult, net, lines, cset, x0s, xTs, loss)
            viol_history.append(violations(net, lines, cset, x0s, xTs, loss))
            mult = autotune_rho(viol_history, mult, cap=cfg.rho_cap)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            print(f"iter {it + 1}: loss {ev.value:.6g} " +
                  " ".join(f"{k}={v:.3g}" for k, v in ev.terms.items()), flush=True)
    return TrainResult(net, lines, history, mult, latent, cfg.iterations, ev.terms if ev else {})


def train_sympocnet(scenario: Scenario, cfg: TrainConfig) -> TrainResult:
    """Train one net and one latent line for the scenario's boundary states."""
    return _train(scenario, scenario.x0[None], scenario.xT[None], cfg)


def offline_train(scenario: Scenario, x0s, cfg: TrainConfig, xTs=None) -> TrainResult:
    """Train one shared net against K sampled initial states.

    Terminal states default to the scenario's ``xT`` for every case.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[0] < 1 or x0s.shape[1] != scenario.n:
        raise ValueError(f"initial states must have shape (K, {scenario.n})")
    xTs = np.tile(scenario.xT, (len(x0s), 1)) if xTs is None else np.atleast_2d(xTs)
    return _train(scenario, x0s, xTs, cfg)


def sample_initial_states(x0, K: int, rng: np.random.Generator, half_width: float = 1.0) -> np.ndarray:
    """K draws uniform in the box x0 +- half_width (per coordinate)."""
    x0 = np.asarray(x0, dtype=float)
    return x0 + rng.uniform(-half_width, half_width, size=(K, x0.size))


@dataclass
class OnlineResult:
    lines: LatentLines
    value: float
    iterations: int
    converged: bool
    checksum_before: str
    checksum_after: str


def online_adapt(net: SympNet, offline: TrainResult, offline_x0s, x0s, xTs, scenario: Scenario,
                 cfg: TrainConfig, iterations: int = 1000) -> OnlineResult:
    """Fit latent lines for new boundary states with the net frozen.

    Each case starts from the offline line whose initial state is nearest.
    All cases are fitted jointly with equal weights.
    """
    loss, _ = _resolve(scenario, cfg)
    latent = offline.latent
    H = scenario.hamiltonian(latent)
    cset = scenario.constraint_set()
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    xTs = np.atleast_2d(np.asarray(xTs, dtype=float))
    nearest = np.argmin(np.linalg.norm(x0s[:, None] - np.atleast_2d(offline_x0s)[None], axis=-1), axis=1)
    lines = LatentLines(offline.lines.y0[nearest].copy(), offline.lines.u[nearest].copy(),
                        offline.lines.q0[nearest].copy())
    X0, XT = augment(x0s, latent), augment(xTs, latent)
    mult = MultiplierState.zeros(len(x0s), loss.N, cset.size, X0.shape[1],
                                 offline.mult.rho1, offline.mult.rho2)
    if loss.kind == "aug":
        mult.mu = offline.mult.mu[nearest].copy()
    before = net.checksum()
    shape = lines.y0.shape
    size = lines.y0.size

    def unpack(z):
        return LatentLines(z[:size].reshape(shape), z[size:2 * size].reshape(shape), z[2 * size:].reshape(shape))

    def fun(z):
        ev = evaluate(loss, net, unpack(z), H, cset, X0, XT, mult, train_net=False)
        g = np.concatenate([ev.grads["y0"].ravel(), ev.grads["u"].ravel(), ev.grads["q0"].ravel()])
        return ev.value, g

    z0 = np.concatenate([lines.y0.ravel(), lines.u.ravel(), lines.q0.ravel()])
    res = lbfgs_minimize(fun, z0, max_iters=iterations, grad_tol=1e-10)
    return OnlineResult(unpack(res.x), res.f, res.iterations, res.converged, before, net.checksum())


def extract_trajectory(net: SympNet, line: LatentLine, N_out: int = 100, T: float = 1.0,
                       physical_dim: Optional[int] = None) -> Trajectory:
    """x(s) = phi_1(y0 + s u, q0) on N_out + 1 uniform times, with exact dx/ds."""
    times = np.linspace(0.0, T, N_out + 1)
    Y = line.y0[None] + times[:, None] * line.u[None]
    Q = np.broadcast_to(line.q0, Y.shape).copy()
    x, _, tx, _ = tangent_numpy(net, Y, Q, np.broadcast_to(line.u, Y.shape).copy())
    n = x.shape[1] if physical_dim is None else physical_dim
    return Trajectory(times, x[:, :n], tx[:, :n])


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(result: TrainResult, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_net(result.net, d / "net.json")
    side = {
        "latent": result.latent,
        "iterations": result.iterations,
        "lines": {k: v.tolist() for k, v in result.lines.parameters().items()},
        "multipliers": {
            "mu": result.mult.mu.tolist(),
            "lam1": result.mult.lam1.tolist(),
            "lam2": result.mult.lam2.tolist(),
            "rho1": result.mult.rho1,
            "rho2": result.mult.rho2,
        },
        "history_tail": result.history[-10:],
    }
    (d / "state.json").write_text(json.dumps(side))


def load_checkpoint(directory) -> TrainResult:
    d = Path(directory)
    net = load_net(d / "net.json")
    side = json.loads((d / "state.json").read_text())
    L = side["lines"]
    lines = LatentLines(np.array(L["y0"], dtype=float), np.array(L["u"], dtype=float),
                        np.array(L["q0"], dtype=float))
    m = side["multipliers"]
    mu = np.array(m["mu"], dtype=float)
    if mu.ndim != 3:
        mu = mu.reshape(len(lines), -1, 0)
    mult = MultiplierState(mu, np.array(m["lam1"], dtype=float), np.array(m["lam2"], dtype=float),
                           float(m["rho1"]), float(m["rho2"]))
    return TrainResult(net, lines, list(side.get("history_tail", [])), mult, int(side["latent"]),
                       int(side["iterations"]))
