"""Tape-based reverse-mode differentiation over dense numpy arrays.

Values are numpy arrays (scalars, vectors, or row batches).  Every node on a
:class:`Tape` caches its value when it is recorded, so the forward pass is
eager and ``backward`` is a single reverse sweep.

Binary elementwise primitives follow numpy broadcasting; gradients are summed
back to the input shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _relu_fwd(vals, payload):
    return np.maximum(vals[0], 0.0)


def _relu_vjp(g, vals, out, payload):
    # derivative at 0 is taken as 0
    return (g * (vals[0] > 0.0),)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _matvec_fwd(vals, payload):
    K, x = vals
    if K.ndim != 2 or x.shape[-1] != K.shape[1]:
        raise ShapeError(f"matvec: matrix {K.shape} cannot act on {x.shape}")
    return x @ K.T


def _matvec_vjp(g, vals, out, payload):
    K, x = vals
    gK = np.atleast_2d(g).T @ np.atleast_2d(x) if x.ndim > 1 else np.outer(g, x)
    return gK, g @ K


def _matvecT_fwd(vals, payload):
    K, x = vals
    if K.ndim != 2 or x.shape[-1] != K.shape[0]:
        raise ShapeError(f"matvec-transpose: matrix {K.shape} cannot act on {x.shape}")
    return x @ K


def _matvecT_vjp(g, vals, out, payload):
    K, x = vals
    gK = np.atleast_2d(x).T @ np.atleast_2d(g) if x.ndim > 1 else np.outer(x, g)
    return gK, g @ K.T


def _binary(fn):
    def fwd(vals, payload, _fn=fn):
        _check_broadcast(vals[0], vals[1], _fn.__name__)
        return _fn(vals[0], vals[1])
    return fwd


def _add_vjp(g, vals, out, payload):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)


def _sub_vjp(g, vals, out, payload):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)


def _mul_vjp(g, vals, out, payload):
    a, b = vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _dot_fwd(vals, payload):
    a, b = vals
    if a.shape != b.shape:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape}")
    return np.asarray(np.sum(a * b))


def _sum_fwd(vals, payload):
    axis = payload
    return np.sum(vals[0], axis=axis)


def _sum_vjp(g, vals, out, payload):
    x = vals[0]
    if payload is None:
        return (np.broadcast_to(g, x.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, payload), x.shape).copy(),)


def _affine_fwd(vals, payload):
    coeffs, const = payload
    if len(coeffs) != len(vals):
        raise ShapeError("affine-combination: one coefficient per input required")
    out = const
    for c, v in zip(coeffs, vals):
        out = out + c * v
    return np.asarray(out, dtype=float)


def _affine_vjp(g, vals, out, payload):
    coeffs, _ = payload
    return tuple(_unbroadcast(c * g, v.shape) for c, v in zip(coeffs, vals))


def _take_fwd(vals, payload):
    index, axis = payload
    return np.take(vals[0], index, axis=axis)


def _take_vjp(g, vals, out, payload):
    index, axis = payload
    x = vals[0]
    gx = np.zeros_like(x)
    if axis == 0:
        np.add.at(gx, index, g)
    else:
        gm = np.moveaxis(gx, axis, 0)
        np.add.at(gm, index, np.moveaxis(g, axis, 0))
    return (gx,)


def _function_fwd(vals, payload):
    return payload.forward(*vals)


def _function_vjp(g, vals, out, payload):
    return tuple(payload.vjp(g, *vals))


# kind -> (forward, vjp); vjp returns one gradient per input (None means zero)
PRIMITIVES: Dict[str, tuple] = {
    "constant": (None, None),
    "parameter": (None, None),
    "add": (_binary(np.add), _add_vjp),
    "subtract": (_binary(np.subtract), _sub_vjp),
    "scale": (lambda v, c: c * v[0], lambda g, v, o, c: (c * g,)),
    "hadamard": (_binary(np.multiply), _mul_vjp),
    "matvec": (_matvec_fwd, _matvec_vjp),
    "matvec-transpose": (_matvecT_fwd, _matvecT_vjp),
    "relu": (_relu_fwd, _relu_vjp),
    "step": (lambda v, p: (v[0] > 0.0).astype(float), lambda g, v, o, p: (None,)),
    "sigmoid": (lambda v, p: _sigmoid(v[0]), lambda g, v, o, p: (g * o * (1.0 - o),)),
    "log": (lambda v, p: np.log(v[0]), lambda g, v, o, p: (g / v[0],)),
    "square-norm": (lambda v, p: np.asarray(np.sum(v[0] * v[0])), lambda g, v, o, p: (2.0 * g * v[0],)),
    "dot": (_dot_fwd, lambda g, v, o, p: (g * v[1], g * v[0])),
    "sum": (_sum_fwd, _sum_vjp),
    "max-with-zero": (lambda v, p: np.maximum(v[0], 0.0), lambda g, v, o, p: (g * (v[0] > 0.0),)),
    "min-with-zero": (lambda v, p: np.minimum(v[0], 0.0), lambda g, v, o, p: (g * (v[0] < 0.0),)),
    "affine-combination": (_affine_fwd, _affine_vjp),
    "take": (_take_fwd, _take_vjp),
    "reshape": (lambda v, s: v[0].reshape(s), lambda g, v, o, s: (g.reshape(v[0].shape),)),
    "function": (_function_fwd, _function_vjp),
}


class TapeFunction:
    """Base class for a custom differentiable primitive.

    Subclasses implement ``forward(*values)`` and ``vjp(g, *values)``, the
    latter returning one cotangent per input.
    """

    def forward(self, *values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, g: np.ndarray, *values: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


@dataclass
class _Record:
    kind: str
    inputs: tuple
    payload: Any
    value: np.ndarray


class Node:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape.push("add", [self, self._lift(other)])

    def __radd__(self, other):
        return self.tape.push("add", [self._lift(other), self])

    def __sub__(self, other):
        return self.tape.push("subtract", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.tape.push("subtract", [self._lift(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.push("scale", [self], float(other))
        return self.tape.push("hadamard", [self, self._lift(other)])

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.push("scale", [self], -1.0)

    def __getitem__(self, index):
        # row selection only
        return self.tape.push("take", [self], (np.asarray(index), 0))

    def __repr__(self) -> str:
        return f"Node({self.index}, kind={self.tape.nodes[self.index].kind}, shape={self.shape})"


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self) -> None:
        self.nodes: List[_Record] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _check(self, handle: Node) -> int:
        if not isinstance(handle, Node) or handle.tape is not self:
            raise TapeError("node handle belongs to a different tape")
        return handle.index

    def constant(self, value) -> Node:
        return self.push("constant", [], np.array(value, dtype=float))

    def parameter(self, value) -> Node:
        return self.push("parameter", [], np.array(value, dtype=float))

    def push(self, kind: str, inputs: Sequence[Node] = (), payload: Any = None) -> Node:
        if kind not in PRIMITIVES:
            raise ValueError(f"unknown primitive kind {kind!r}")
        idx = tuple(self._check(h) for h in inputs)
        if kind in ("constant", "parameter"):
            value = np.array(payload, dtype=float)
        else:
            fwd = PRIMITIVES[kind][0]
            value = fwd([self.nodes[i].value for i in idx], payload)
        self.nodes.append(_Record(kind, idx, payload, value))
        return Node(self, len(self.nodes) - 1)

    def function(self, fn: TapeFunction, *inputs: Node) -> Node:
        return self.push("function", inputs, fn)

    def backward(self, output: Node, seeds: Iterable[Node]) -> Dict[Node, np.ndarray]:
        """Gradients of a scalar output with respect to each seed node."""
        out = self._check(output)
        if self.nodes[out].value.size != 1:
            raise TapeError(f"backward needs a scalar output, got shape {self.nodes[out].value.shape}")
        seeds = list(seeds)
        for s in seeds:
            self._check(s)
        grads: List[Optional[np.ndarray]] = [None] * (out + 1)
        grads[out] = np.ones_like(self.nodes[out].value)
        for i in range(out, -1, -1):
            g = grads[i]
            rec = self.nodes[i]
            if g is None or not rec.inputs:
                continue
            vjp = PRIMITIVES[rec.kind][1]
            in_vals = [self.nodes[j].value for j in rec.inputs]
            for j, gj in zip(rec.inputs, vjp(g, in_vals, rec.value, rec.payload)):
                if gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        result = {}
        for s in seeds:
            g = grads[s.index] if s.index <= out else None
            result[s] = np.zeros_like(s.value) if g is None else np.asarray(g, dtype=float)
        return result

    def replay(self) -> List[np.ndarray]:
        """Recompute every node from its recorded inputs and payloads."""
        values: List[np.ndarray] = []
        for rec in self.nodes:
            if rec.kind in ("constant", "parameter"):
                values.append(np.array(rec.payload, dtype=float))
            else:
                values.append(PRIMITIVES[rec.kind][0]([values[j] for j in rec.inputs], rec.payload))
        return values


@dataclass
class DualVector:
    """A value node paired with its tangent node (``None`` means zero tangent)."""

    value: Node
    tangent: Optional[Node]

    def __post_init__(self):
        if self.tangent is not None and self.tangent.shape != self.value.shape:
            raise ShapeError(f"tangent shape {self.tangent.shape} != value shape {self.value.shape}")


def finite_difference_gradient(f: Callable[[np.ndarray], float], point, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad
