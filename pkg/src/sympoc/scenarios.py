"""Scenario files and the built-in planning problems.

A scenario is one JSON object.  Required fields are ``M``, ``m``, ``C_d`` and
``x0``; everything else has a default.  ``xT`` may be omitted when
``"xT_is_minus_x0": true``.  ``C_d_constraint`` is the inflated radius used in
the constraint function (safe zone); metrics always use ``C_d``.

Geometry for the four-drone capsules and the room layouts is not printed in
the source experiments; the values here are stand-ins and marked as such in
``notes``.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .constraints import Ball, Box3D, Capsule, ConstraintSet, Obstacle, Room2D, obstacle_from_dict
from .dynamics import BarrierConfig, HamiltonianSpec
from .losses import LOSS_KINDS, LossConfig


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    M: int
    m: int
    C_d: float
    x0: np.ndarray
    xT: np.ndarray
    obstacles: List[Obstacle] = field(default_factory=list)
    C_d_constraint: Optional[float] = None
    C_v: float = 25.0
    T: float = 1.0
    loss: str = "aug"
    lam: float = 600.0
    lam_tilde: float = 200.0
    eps: float = 0.0004
    a: float = 0.004
    rho: float = 1.0
    layers: int = 6
    width: int = 60
    activation: str = "relu"
    latent: int = 0
    N: int = 40
    N_c: int = 30
    seed: int = 0
    repeats: int = 1
    iterations: int = 20000
    notes: str = ""

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.xT = np.asarray(self.xT, dtype=float)
        self.validate()

    def validate(self) -> None:
        n = self.M * self.m
        if self.M < 1 or self.m < 1:
            raise ScenarioError("M and m must be positive")
        if self.x0.shape != (n,):
            raise ScenarioError(f"x0: expected length M*m = {n}, got {self.x0.size}")
        if self.xT.shape != (n,):
            raise ScenarioError(f"xT: expected length M*m = {n}, got {self.xT.size}")
        if self.C_d < 0:
            raise ScenarioError("C_d: must be nonnegative")
        if self.C_d_constraint is not None and self.C_d_constraint < self.C_d:
            raise ScenarioError("C_d_constraint: must be at least C_d")
        if self.C_v <= 0:
            raise ScenarioError("C_v: must be positive")
        if self.T <= 0:
            raise ScenarioError("T: must be positive")
        if self.loss not in LOSS_KINDS:
            raise ScenarioError(f"loss: must be one of {LOSS_KINDS}")
        if self.activation not in ("relu", "sigmoid"):
            raise ScenarioError("activation: must be relu or sigmoid")
        if self.latent < 0:
            raise ScenarioError("latent: must be nonnegative")
        for o in self.obstacles:
            if isinstance(o, Room2D) and self.m != 2:
                raise ScenarioError("obstacles: room2d needs m = 2")
            if isinstance(o, Box3D) and self.m != 3:
                raise ScenarioError("obstacles: box3d needs m = 3")

    @property
    def n(self) -> int:
        return self.M * self.m

    @property
    def constraint_radius(self) -> float:
        return self.C_d if self.C_d_constraint is None else self.C_d_constraint

    def constraint_set(self) -> ConstraintSet:
        return ConstraintSet(self.obstacles, self.constraint_radius, self.M, self.m)

    def barrier(self) -> BarrierConfig:
        return BarrierConfig(self.a, self.eps)

    def loss_config(self, kind: Optional[str] = None) -> LossConfig:
        return LossConfig(kind or self.loss, self.lam, self.lam_tilde, self.barrier(), self.T, self.N)

    def hamiltonian(self, latent: Optional[int] = None) -> HamiltonianSpec:
        latent = self.latent if latent is None else latent
        cset = self.constraint_set()
        if latent:
            return HamiltonianSpec("latent-augmented", self.C_v, self.m, self.barrier(), cset, self.n)
        if cset.size:
            return HamiltonianSpec("penalized", self.C_v, self.m, self.barrier(), cset)
        return HamiltonianSpec("capped-kinetic", self.C_v, self.m)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("obstacles", "x0", "xT")}
        d["x0"] = self.x0.tolist()
        d["xT"] = self.xT.tolist()
        d["obstacles"] = [o.to_dict() for o in self.obstacles]
        return d


_FIELDS = {f for f in Scenario.__dataclass_fields__}
_NUMERIC = {"C_d", "C_d_constraint", "C_v", "T", "lam", "lam_tilde", "eps", "a", "rho"}
_INTEGER = {"M", "m", "layers", "width", "latent", "N", "N_c", "seed", "repeats", "iterations"}


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(data) - _FIELDS - {"xT_is_minus_x0"}
    if unknown:
        raise ScenarioError(f"{sorted(unknown)[0]}: unknown field")
    for key in ("M", "m", "C_d", "x0"):
        if key not in data:
            raise ScenarioError(f"{key}: required field missing")
    kw = dict(data)
    minus = kw.pop("xT_is_minus_x0", False)
    for key in _NUMERIC & set(kw):
        if kw[key] is not None and not isinstance(kw[key], (int, float)):
            raise ScenarioError(f"{key}: expected a number")
    for key in _INTEGER & set(kw):
        if not isinstance(kw[key], int) or isinstance(kw[key], bool):
            raise ScenarioError(f"{key}: expected an integer")
    if minus:
        kw["xT"] = [-v for v in kw["x0"]]
    elif "xT" not in kw:
        raise ScenarioError("xT: required unless xT_is_minus_x0 is true")
    obstacles = []
    for i, rec in enumerate(kw.pop("obstacles", [])):
        try:
            obstacles.append(obstacle_from_dict(rec))
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"obstacles[{i}]: {exc}") from None
    kw.setdefault("name", "scenario")
    try:
        return Scenario(obstacles=obstacles, **kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from None


# ------------------------------------------------------------ builtins

def four_drones_capsules() -> Scenario:
    x0 = [-2, -2, 2, -2, 2, 2, -2, 2]
    xT = [2, 2, -2, 2, -2, -2, 2, -2]
    caps = [Capsule([-2.2, 0.0], [-1.2, 0.0], 0.25), Capsule([1.2, 0.0], [2.2, 0.0], 0.25)]
    return Scenario("four-drones-capsules", 4, 2, 0.5, x0, xT, caps,
                    notes="capsule endpoints/radii and C_d=0.5 are stand-ins; C_d inferred from the "
                          "-1.00 minimal constraint of the straight-line initialization")


def ring_positions(M: int, radius: float, phase: float = 0.0) -> np.ndarray:
    ang = phase + 2.0 * np.pi * np.arange(M) / M
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1).reshape(-1)


def room(M: int, C_d: float = 0.3, C_d_constraint: Optional[float] = None,
         obstacles: Optional[list] = None, radius: float = 4.0, width: int = 200) -> Scenario:
    x0 = ring_positions(M, radius, phase=np.pi / M)
    obs = [Room2D(5.0)] + list(obstacles or [])
    return Scenario(f"room-{M}", M, 2, C_d, x0, -x0, obs, C_d_constraint=C_d_constraint, width=width,
                    notes="ring placement of the initial positions is a stand-in layout")


def room_128_balls() -> Scenario:
    balls = [Ball([c1, c2], 0.6) for c1 in (-2.0, 2.0) for c2 in (-2.0, 2.0)]
    s = room(128, C_d=0.075, C_d_constraint=0.1, obstacles=balls, radius=4.5)
    s.name = "room-128-balls"
    s.notes += "; ball centers and radii are stand-ins"
    return s


def room_256() -> Scenario:
    s = room(256, C_d=0.09, C_d_constraint=0.1, radius=4.5)
    s.name = "room-256"
    return s


def swarm_3d(M: int = 100) -> Scenario:
    side = int(np.ceil(np.sqrt(M)))
    cols = np.linspace(-3.0, 5.0, side)
    rows = np.linspace(1.0, 6.0, side)
    grid = np.array([[c, r] for r in rows for c in cols])[:M]
    start = np.column_stack([grid[:, 0], np.full(M, -4.0), grid[:, 1]])
    goal = np.column_stack([grid[::-1, 0], np.full(M, 4.0), grid[:, 1]])
    boxes = [Box3D.from_corners([-1.8, 1.8, -0.3, 0.3, 0.2, 6.8]),
             Box3D.from_corners([2.2, 3.8, -0.8, 0.8, 0.2, 3.8])]
    return Scenario("swarm-3d", M, 3, 0.18, start.reshape(-1), goal.reshape(-1), boxes,
                    C_d_constraint=0.2, width=200,
                    notes="initial/terminal grids are stand-ins; box corners are the published ones")


def circle2d() -> Scenario:
    return Scenario("circle2d", 1, 2, 0.0, [0.0, 0.0], [0.0, 1.0], [Ball([0.0, 0.5], 0.2)])


def single_agent_free() -> Scenario:
    return Scenario("single-free", 1, 2, 0.0, [-2.0, -2.0], [2.0, 2.0])


BUILTINS = {
    "four-drones-capsules": four_drones_capsules,
    "room-128-balls": room_128_balls,
    "room-256": room_256,
    "swarm-3d": swarm_3d,
    "circle2d": circle2d,
    "single-free": single_agent_free,
}


def builtin(name: str) -> Scenario:
    if name in BUILTINS:
        return BUILTINS[name]()
    match = re.fullmatch(r"room-(\d+)", name)
    if match:
        return room(int(match.group(1)))
    raise ScenarioError(f"unknown builtin scenario {name!r}")


def load_scenario(path_or_name) -> Scenario:
    p = Path(str(path_or_name))
    if p.suffix == ".json" or p.exists():
        try:
            data = json.loads(p.read_text())
        except FileNotFoundError:
            raise ScenarioError(f"scenario file {p} not found") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{p}: invalid JSON ({exc})") from None
        return scenario_from_dict(data)
    return builtin(str(path_or_name))
