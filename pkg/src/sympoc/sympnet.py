"""G-SympNet: alternating up/low gradient modules with an exact inverse.

A layer acting on phase-space coordinates ``(x, p)`` is one of::

    up:  (x, p) -> (x, p + sigma_hat(x))
    low: (x, p) -> (x + sigma_hat(p), p)

with ``sigma_hat(z) = K^T (a * act(K z + b))``.  Each module is a shear by the
gradient of a scalar potential, so any composition is symplectic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import DualVector, Node, ShapeError, Tape

CHECKPOINT_VERSION = 1


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class GLayer:
    kind: str
    K: np.ndarray
    a: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.kind not in ("up", "low"):
            raise ValueError(f"layer kind must be 'up' or 'low', got {self.kind!r}")
        if self.K.ndim != 2 or self.K.shape[0] < 1:
            raise ShapeError(f"K must be an l x n matrix with l >= 1, got {self.K.shape}")
        l = self.K.shape[0]
        if self.a.shape != (l,) or self.b.shape != (l,):
            raise ShapeError(f"a and b must have length {l}")
        if self.activation not in ("relu", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def width(self) -> int:
        return self.K.shape[0]

    @property
    def half_dim(self) -> int:
        return self.K.shape[1]


@dataclass
class SympNet:
    layers: List[GLayer]
    half_dim: int

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.half_dim != self.half_dim:
                raise ShapeError(f"layer {i} acts on dimension {layer.half_dim}, expected {self.half_dim}")

    @classmethod
    def init(cls, half_dim: int, layers: int = 6, width: int = 60, activation: str = "relu",
             rng: Optional[np.random.Generator] = None, scale: float = 0.0) -> "SympNet":
        """Random K, zero b, and ``a`` drawn with std ``scale`` (0 gives the identity map)."""
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(half_dim)
        out = []
        for i in range(layers):
            K = rng.uniform(-bound, bound, size=(width, half_dim))
            a = scale * rng.standard_normal(width) if scale else np.zeros(width)
            out.append(GLayer("up" if i % 2 == 0 else "low", K, a, np.zeros(width), activation))
        return cls(out, half_dim)

    def parameters(self) -> dict:
        """Named views of every trainable array (mutating them mutates the net)."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"K{i}"] = layer.K
            params[f"a{i}"] = layer.a
            params[f"b{i}"] = layer.b
        return params

    def copy(self) -> "SympNet":
        return SympNet([GLayer(l.kind, l.K.copy(), l.a.copy(), l.b.copy(), l.activation)
                        for l in self.layers], self.half_dim)

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for layer in self.layers:
            for arr in (layer.K, layer.a, layer.b):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class LatentLine:
    y0: np.ndarray
    u: np.ndarray
    q0: np.ndarray

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.q0 = np.asarray(self.q0, dtype=float)
        if not (self.y0.shape == self.u.shape == self.q0.shape) or self.y0.ndim != 1:
            raise ShapeError("y0, u and q0 must be vectors of equal length")

    @classmethod
    def straight(cls, x0, xT, T: float = 1.0) -> "LatentLine":
        x0 = np.asarray(x0, dtype=float)
        xT = np.asarray(xT, dtype=float)
        return cls(x0.copy(), (xT - x0) / T, np.zeros_like(x0))

    def copy(self) -> "LatentLine":
        return LatentLine(self.y0.copy(), self.u.copy(), self.q0.copy())


def _check_dim(layer_or_net, z: np.ndarray) -> None:
    n = layer_or_net.half_dim
    if z.shape[-1] != n:
        raise ShapeError(f"expected last dimension {n}, got {z.shape}")


def sigma_hat(layer: GLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_dim(layer, x)
    return (layer.a * _act(layer.activation, x @ layer.K.T + layer.b)) @ layer.K


def layer_forward(layer: GLayer, x, p) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if layer.kind == "up":
        return x, p + sigma_hat(layer, x)
    return x + sigma_hat(layer, p), p


def layer_inverse(layer: GLayer, x, p) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if layer.kind == "up":
        return x, p - sigma_hat(layer, x)
    return x - sigma_hat(layer, p), p


def sympnet_forward(net: SympNet, y, q) -> Tuple[np.ndarray, np.ndarray]:
    x, p = np.asarray(y, dtype=float), np.asarray(q, dtype=float)
    _check_dim(net, x)
    _check_dim(net, p)
    for layer in net.layers:
        x, p = layer_forward(layer, x, p)
    return x, p


def sympnet_inverse(net: SympNet, x, p) -> Tuple[np.ndarray, np.ndarray]:
    y, q = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
    _check_dim(net, y)
    _check_dim(net, q)
    for layer in reversed(net.layers):
        y, q = layer_inverse(layer, y, q)
    return y, q


# ---------------------------------------------------------------- tape level

@dataclass
class BoundLayer:
    kind: str
    activation: str
    K: Node
    a: Node
    b: Node


@dataclass
class BoundNet:
    """A SympNet whose arrays live on a tape (as parameters or constants)."""

    layers: List[BoundLayer]
    half_dim: int
    leaves: dict = field(default_factory=dict)


def bind(tape: Tape, net: SympNet, trainable: bool = True) -> BoundNet:
    push = tape.parameter if trainable else tape.constant
    layers, leaves = [], {}
    for i, layer in enumerate(net.layers):
        K, a, b = push(layer.K), push(layer.a), push(layer.b)
        leaves.update({f"K{i}": K, f"a{i}": a, f"b{i}": b})
        layers.append(BoundLayer(layer.kind, layer.activation, K, a, b))
    return BoundNet(layers, net.half_dim, leaves)


def _shear(tape: Tape, layer: BoundLayer, z: Node, dz: Optional[Node]) -> Tuple[Node, Optional[Node]]:
    """sigma_hat(z) and its directional derivative along dz."""
    pre = tape.push("add", [tape.push("matvec", [layer.K, z]), layer.b])
    act = tape.push(layer.activation, [pre])
    val = tape.push("matvec-transpose", [layer.K, tape.push("hadamard", [layer.a, act])])
    if dz is None:
        return val, None
    if layer.activation == "relu":
        slope = tape.push("step", [pre])
    else:
        # sigmoid' = s (1 - s)
        slope = tape.push("hadamard", [act, tape.push("affine-combination", [act], ([-1.0], 1.0))])
    kdz = tape.push("matvec", [layer.K, dz])
    inner = tape.push("hadamard", [tape.push("hadamard", [layer.a, slope]), kdz])
    return val, tape.push("matvec-transpose", [layer.K, inner])


def _add_tangent(tape: Tape, t: Optional[Node], dt: Optional[Node]) -> Optional[Node]:
    if dt is None:
        return t
    if t is None:
        return dt
    return tape.push("add", [t, dt])


def forward_with_tangent(tape: Tape, net: BoundNet, y: DualVector, q: DualVector) -> Tuple[DualVector, DualVector]:
    """Push values and tangents through the net as tape primitives.

    Returns duals for ``(x, p) = phi(y, q)`` whose tangent slots hold the
    directional derivative of the net along ``(dy, dq)``.
    """
    for d in (y, q):
        if d.value.shape[-1] != net.half_dim:
            raise ShapeError(f"expected last dimension {net.half_dim}, got {d.value.shape}")
    x, dx, p, dp = y.value, y.tangent, q.value, q.tangent
    for layer in net.layers:
        if layer.kind == "up":
            s, ds = _shear(tape, layer, x, dx)
            p = tape.push("add", [p, s])
            dp = _add_tangent(tape, dp, ds)
        else:
            s, ds = _shear(tape, layer, p, dp)
            x = tape.push("add", [x, s])
            dx = _add_tangent(tape, dx, ds)
    return DualVector(x, dx), DualVector(p, dp)


def forward_nodes(tape: Tape, net: BoundNet, y: Node, q: Node) -> Tuple[Node, Node]:
    xd, pd = forward_with_tangent(tape, net, DualVector(y, None), DualVector(q, None))
    return xd.value, pd.value


def tangent_numpy(net: SympNet, y, q, dy, dq=None):
    """Evaluate forward_with_tangent without keeping the tape."""
    tape = Tape()
    bound = bind(tape, net, trainable=False)
    dq_node = None if dq is None else tape.constant(dq)
    xd, pd = forward_with_tangent(tape, bound, DualVector(tape.constant(y), tape.constant(dy)),
                                  DualVector(tape.constant(q), dq_node))
    zeros = np.zeros_like(np.asarray(y, dtype=float))
    tx = zeros if xd.tangent is None else xd.tangent.value
    tp = zeros if pd.tangent is None else pd.tangent.value
    return xd.value.value, pd.value.value, tx, tp


def dense_jacobian(net: SympNet, z) -> np.ndarray:
    """Full 2n x 2n Jacobian of the net at z, one basis tangent per row of a batch."""
    z = np.asarray(z, dtype=float)
    n = net.half_dim
    if z.shape != (2 * n,):
        raise ShapeError(f"expected a point of length {2 * n}")
    eye = np.eye(2 * n)
    Y = np.tile(z[:n], (2 * n, 1))
    Q = np.tile(z[n:], (2 * n, 1))
    _, _, tx, tp = tangent_numpy(net, Y, Q, eye[:, :n], eye[:, n:])
    # row k holds the image of basis vector k, i.e. column k of the Jacobian
    return np.hstack([tx, tp]).T


def symplectic_form(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


# ---------------------------------------------------------------- checkpoints

def net_to_dict(net: SympNet) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "half_dim": net.half_dim,
        "layer_count": len(net.layers),
        "layers": [
            {
                "kind": layer.kind,
                "width": layer.width,
                "activation": layer.activation,
                "K": layer.K.reshape(-1).tolist(),
                "a": layer.a.tolist(),
                "b": layer.b.tolist(),
            }
            for layer in net.layers
        ],
    }


def net_from_dict(data: dict) -> SympNet:
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    n = int(data["half_dim"])
    layers = []
    for rec in data["layers"]:
        l = int(rec["width"])
        K = np.array(rec["K"], dtype=float).reshape(l, n)
        layers.append(GLayer(rec["kind"], K, rec["a"], rec["b"], rec.get("activation", "relu")))
    if len(layers) != int(data["layer_count"]):
        raise ValueError("layer_count does not match the stored layers")
    return SympNet(layers, n)


def save_net(net: SympNet, path) -> None:
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(net_to_dict(net)))


def load_net(path) -> SympNet:
    return net_from_dict(json.loads(Path(path).read_text()))
