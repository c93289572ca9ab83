"""State constraints h = (h1, h2) for multi-agent path planning.

``h1`` stacks per-agent obstacle margins (agents outer, obstacles inner) and
``h2`` holds one entry per unordered agent pair, pair (i, j) with i < j at
1-based index ``i + (j-1)(j-2)/2``.  A negative component means a collision.

Every obstacle component depends on a single agent's position, so each
obstacle reports values, gradients and Hessians with respect to that position;
:class:`ConstraintSet` assembles those into batched Jacobian products.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import sparse


class Obstacle:
    """Per-agent obstacle margin(s) d(x) for x in R^m."""

    n_components = 1

    def local(self, P: np.ndarray, C_d: float):
        """Return (values, grads, hessians) for positions P of shape (..., m).

        Shapes: (..., c), (..., c, m), (..., c, m, m) or None when the
        Hessian vanishes.
        """
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class Capsule(Obstacle):
    A: np.ndarray
    B: np.ndarray
    C_o: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.C_o <= 0:
            raise ValueError("capsule radius C_o must be positive")

    def local(self, P, C_d):
        e = self.B - self.A
        ee = float(e @ e)
        rel = P - self.A
        if ee == 0.0:
            t = np.zeros(P.shape[:-1])
        else:
            t = np.clip(rel @ e / ee, 0.0, 1.0)
        diff = rel - t[..., None] * e
        val = np.sum(diff * diff, axis=-1) - (self.C_o + C_d) ** 2
        m = P.shape[-1]
        hess = np.broadcast_to(2.0 * np.eye(m), P.shape[:-1] + (m, m)).copy()
        if ee > 0.0:
            interior = (t > 0.0) & (t < 1.0)
            hess[interior] -= 2.0 * np.outer(e, e) / ee
        return val[..., None], 2.0 * diff[..., None, :], hess[..., None, :, :]

    def to_dict(self):
        return {"type": "capsule", "A": self.A.tolist(), "B": self.B.tolist(), "C_o": self.C_o}


@dataclass
class Ball(Obstacle):
    center: np.ndarray
    C_o: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.C_o <= 0:
            raise ValueError("ball radius C_o must be positive")

    def local(self, P, C_d):
        diff = P - self.center
        val = np.sum(diff * diff, axis=-1) - (self.C_o + C_d) ** 2
        m = P.shape[-1]
        hess = np.broadcast_to(2.0 * np.eye(m), P.shape[:-1] + (1, m, m))
        return val[..., None], 2.0 * diff[..., None, :], hess

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "C_o": self.C_o}


@dataclass
class Room2D(Obstacle):
    C_r: float
    n_components = 4

    def __post_init__(self):
        if self.C_r <= 0:
            raise ValueError("room half-width C_r must be positive")

    def local(self, P, C_d):
        if P.shape[-1] != 2:
            raise ValueError("room walls need a planar space (m = 2)")
        x1, x2 = P[..., 0], P[..., 1]
        r = self.C_r
        val = np.stack([x1 + r, r - x1, x2 + r, r - x2], axis=-1)
        G = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        return val, np.broadcast_to(G, P.shape[:-1] + (4, 2)), None

    def to_dict(self):
        return {"type": "room2d", "C_r": self.C_r}


@dataclass
class Box3D(Obstacle):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (3,) or self.upper.shape != (3,):
            raise ValueError("box corners must be 3-vectors")
        if np.any(self.lower >= self.upper):
            raise ValueError("box corners must satisfy lower < upper componentwise")

    @classmethod
    def from_corners(cls, c):
        """From the flat tuple (C11, C12, C21, C22, C31, C32)."""
        c = np.asarray(c, dtype=float)
        return cls(c[0::2], c[1::2])

    def local(self, P, C_d):
        if P.shape[-1] != 3:
            raise ValueError("box obstacles need m = 3")
        margins = np.concatenate([self.lower - C_d - P, P - self.upper - C_d], axis=-1)
        k = np.argmax(margins, axis=-1)  # first index wins ties
        val = np.take_along_axis(margins, k[..., None], axis=-1)
        faces = np.vstack([-np.eye(3), np.eye(3)])
        return val, faces[k][..., None, :], None

    def to_dict(self):
        corners = np.empty(6)
        corners[0::2], corners[1::2] = self.lower, self.upper
        return {"type": "box3d", "corners": corners.tolist()}


def obstacle_from_dict(rec: dict) -> Obstacle:
    kind = rec.get("type")
    try:
        if kind == "capsule":
            return Capsule(rec["A"], rec["B"], float(rec["C_o"]))
        if kind == "ball":
            return Ball(rec["center"], float(rec["C_o"]))
        if kind == "room2d":
            return Room2D(float(rec["C_r"]))
        if kind == "box3d":
            return Box3D.from_corners(rec["corners"])
    except KeyError as exc:
        raise ValueError(f"obstacle of type {kind!r} is missing field {exc.args[0]!r}") from None
    raise ValueError(f"obstacles.type: unknown obstacle variant {kind!r}")


# ------------------------------------------------------------ scalar helpers

def capsule_constraint(A, B, C_o, C_d, x) -> float:
    return float(Capsule(A, B, C_o).local(np.asarray(x, float), C_d)[0][0])


def ball_constraint(z, C_o, C_d, x) -> float:
    return float(Ball(z, C_o).local(np.asarray(x, float), C_d)[0][0])


def room_walls2d(C_r, x) -> np.ndarray:
    return Room2D(C_r).local(np.asarray(x, float), 0.0)[0]


def box3d_constraint(corners, C_d, x) -> float:
    return float(Box3D.from_corners(corners).local(np.asarray(x, float), C_d)[0][0])


def pair_indices(M: int) -> Tuple[np.ndarray, np.ndarray]:
    """0-based (i, j) arrays ordered by k = i + (j-1)(j-2)/2 (1-based formula)."""
    I, J = [], []
    for j in range(1, M):
        for i in range(j):
            I.append(i)
            J.append(j)
    return np.array(I, dtype=int), np.array(J, dtype=int)


def pair_index(i: int, j: int) -> int:
    """1-based constraint index for the 1-based pair i < j."""
    if not 1 <= i < j:
        raise ValueError("need 1 <= i < j")
    return i + (j - 1) * (j - 2) // 2


def pairwise_collision(xs, C_d) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    I, J = pair_indices(xs.shape[0])
    d = xs[I] - xs[J]
    return np.sum(d * d, axis=-1) - (2.0 * C_d) ** 2


# ------------------------------------------------------------ assembled set

@dataclass
class ConstraintSet:
    obstacles: Sequence[Obstacle]
    agent_radius: float
    agent_count: int
    space_dim: int

    def __post_init__(self):
        self.obstacles = list(self.obstacles)
        self._I, self._J = pair_indices(self.agent_count)
        self._S = _pair_scatter_matrix(self.agent_count, self._I, self._J)
        self.n_obstacle_components = sum(o.n_components for o in self.obstacles)

    @property
    def state_dim(self) -> int:
        return self.agent_count * self.space_dim

    @property
    def size(self) -> int:
        return self.agent_count * self.n_obstacle_components + len(self._I)

    def _agents(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state has length {x.shape[-1]}, expected {self.state_dim}")
        return x.reshape(x.shape[:-1] + (self.agent_count, self.space_dim))

    def _local(self, P):
        vals, grads, hess = [], [], []
        for o in self.obstacles:
            v, g, h = o.local(P, self.agent_radius)
            vals.append(v)
            grads.append(g)
            hess.append(h)
        return vals, grads, hess

    def values(self, x) -> np.ndarray:
        P = self._agents(x)
        parts = []
        if self.obstacles:
            vals, _, _ = self._local(P)
            parts.append(np.concatenate(vals, axis=-1).reshape(P.shape[:-2] + (-1,)))
        if len(self._I):
            d = P[..., self._I, :] - P[..., self._J, :]
            parts.append(np.sum(d * d, axis=-1) - (2.0 * self.agent_radius) ** 2)
        if not parts:
            return np.zeros(P.shape[:-2] + (0,))
        return np.concatenate(parts, axis=-1)

    def _split(self, w):
        n1 = self.agent_count * self.n_obstacle_components
        W1 = w[..., :n1].reshape(w.shape[:-1] + (self.agent_count, self.n_obstacle_components))
        return W1, w[..., n1:]

    def vjp(self, x, w) -> np.ndarray:
        """(dh/dx)^T w, batched over leading axes."""
        P = self._agents(x)
        w = np.asarray(w, dtype=float)
        W1, W2 = self._split(w)
        out = np.zeros_like(P)
        if self.obstacles:
            _, grads, _ = self._local(P)
            G = np.concatenate(grads, axis=-2)  # (..., M, c, m)
            out += np.einsum("...ac,...acm->...am", W1, G)
        if len(self._I):
            d = 2.0 * (P[..., self._I, :] - P[..., self._J, :]) * W2[..., None]
            _scatter_pairs(out, d, self._S)
        return out.reshape(np.shape(x))

    def jvp(self, x, v) -> np.ndarray:
        """(dh/dx) v."""
        P = self._agents(x)
        V = self._agents(v)
        parts = []
        if self.obstacles:
            _, grads, _ = self._local(P)
            G = np.concatenate(grads, axis=-2)
            parts.append(np.einsum("...acm,...am->...ac", G, V).reshape(P.shape[:-2] + (-1,)))
        if len(self._I):
            d = P[..., self._I, :] - P[..., self._J, :]
            dv = V[..., self._I, :] - V[..., self._J, :]
            parts.append(2.0 * np.sum(d * dv, axis=-1))
        return np.concatenate(parts, axis=-1)

    def hvp(self, x, w, v) -> np.ndarray:
        """Second derivative of <w, h(x)> applied to v."""
        P = self._agents(x)
        V = self._agents(v)
        w = np.asarray(w, dtype=float)
        W1, W2 = self._split(w)
        out = np.zeros_like(P)
        if self.obstacles:
            _, _, hess = self._local(P)
            offset = 0
            for o, H in zip(self.obstacles, hess):
                c = o.n_components
                if H is not None:
                    out += np.einsum("...ac,...acmk,...ak->...am", W1[..., offset:offset + c], H, V)
                offset += c
        if len(self._I):
            dv = 2.0 * (V[..., self._I, :] - V[..., self._J, :]) * W2[..., None]
            _scatter_pairs(out, dv, self._S)
        return out.reshape(np.shape(x))


def _pair_scatter_matrix(M, I, J):
    k = np.arange(len(I))
    rows = np.concatenate([I, J])
    cols = np.concatenate([k, k])
    data = np.concatenate([np.ones(len(I)), -np.ones(len(I))])
    return sparse.csr_matrix((data, (rows, cols)), shape=(M, len(I)))


def _scatter_pairs(out, d, S):
    """out[i] += d_k and out[j] -= d_k for every pair k = (i, j)."""
    dm = np.moveaxis(d, -2, 0)
    res = S @ dm.reshape(dm.shape[0], -1)
    out += np.moveaxis(np.asarray(res).reshape((S.shape[0],) + dm.shape[1:]), 0, -2)


def assemble_h(cset: ConstraintSet, x):
    """Values of h at x and the callback v -> (dh/dx)^T v."""
    x = np.asarray(x, dtype=float)
    return cset.values(x), (lambda v: cset.vjp(x, v))
