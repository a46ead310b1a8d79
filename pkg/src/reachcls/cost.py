"""Implicit surface functions and the trajectory cost functionals.

Surfaces follow the signed-distance convention: negative inside the set they
describe, zero on its boundary, positive outside. A reach-avoid cost pairs a
target surface l with an optional constraint surface g (g <= 0 means the
constraint is satisfied); a max-tracking cost tracks the running maximum of l.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError

Array = np.ndarray

REACH_AVOID = "reach_avoid"
MAX_TRACKING = "max_tracking"


class Surface:
    """Base class; subclasses implement values() over (B, n) state batches."""

    projection: Optional[tuple]

    def _project(self, states: Array) -> Array:
        if self.projection is None:
            return states
        return states[..., list(self.projection)]

    def values(self, states: Array) -> Array:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _as_proj(projection) -> Optional[tuple]:
    return None if projection is None else tuple(int(i) for i in projection)


@dataclass(frozen=True)
class BoxSurface(Surface):
    """Axis-aligned box, exact Euclidean signed distance."""

    center: tuple
    half_widths: tuple
    projection: Optional[tuple] = None

    def values(self, states: Array) -> Array:
        x = self._project(np.asarray(states, dtype=float))
        q = np.abs(x - np.asarray(self.center)) - np.asarray(self.half_widths)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def to_dict(self) -> dict:
        d = {"type": "box", "center": list(self.center), "half_widths": list(self.half_widths)}
        if self.projection is not None:
            d["projection"] = list(self.projection)
        return d


@dataclass(frozen=True)
class SphereSurface(Surface):
    center: tuple
    radius: float
    projection: Optional[tuple] = None

    def values(self, states: Array) -> Array:
        x = self._project(np.asarray(states, dtype=float))
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def to_dict(self) -> dict:
        d = {"type": "sphere", "center": list(self.center), "radius": self.radius}
        if self.projection is not None:
            d["projection"] = list(self.projection)
        return d


@dataclass(frozen=True)
class BoundsComplementSurface(Surface):
    """Complement of the box [lo, hi]: negated box distance, positive inside.

    Used for obstacles inside an intersection constraint, or for marking
    everything outside given bounds as a region of interest.
    """

    lo: tuple
    hi: tuple
    projection: Optional[tuple] = None

    def _box(self) -> BoxSurface:
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return BoxSurface(tuple((lo + hi) / 2.0), tuple((hi - lo) / 2.0), self.projection)

    def values(self, states: Array) -> Array:
        return -self._box().values(states)

    def to_dict(self) -> dict:
        d = {"type": "bounds_complement", "lo": list(self.lo), "hi": list(self.hi)}
        if self.projection is not None:
            d["projection"] = list(self.projection)
        return d


@dataclass(frozen=True)
class HalfspaceSurface(Surface):
    """normal . x - offset; a true signed distance when the normal is unit length."""

    normal: tuple
    offset: float = 0.0
    projection: Optional[tuple] = None

    def values(self, states: Array) -> Array:
        x = self._project(np.asarray(states, dtype=float))
        return x @ np.asarray(self.normal) - self.offset

    def to_dict(self) -> dict:
        d = {"type": "halfspace", "normal": list(self.normal), "offset": self.offset}
        if self.projection is not None:
            d["projection"] = list(self.projection)
        return d


@dataclass(frozen=True)
class UnionSurface(Surface):
    """Union of member sets: pointwise min of member values."""

    members: tuple
    projection = None

    def values(self, states: Array) -> Array:
        vals = [m.values(states) for m in self.members]
        return np.minimum.reduce(vals)

    def to_dict(self) -> dict:
        return {"type": "union", "members": [m.to_dict() for m in self.members]}


@dataclass(frozen=True)
class IntersectionSurface(Surface):
    """Intersection of member sets: pointwise max of member values."""

    members: tuple
    projection = None

    def values(self, states: Array) -> Array:
        vals = [m.values(states) for m in self.members]
        return np.maximum.reduce(vals)

    def to_dict(self) -> dict:
        return {"type": "intersection", "members": [m.to_dict() for m in self.members]}


def surface_from_dict(d: dict) -> Surface:
    """Build a surface from its config-JSON form."""
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigError("surface must be an object with a 'type' field")
    kind = d["type"]
    proj = _as_proj(d.get("projection"))
    try:
        if kind == "box":
            return BoxSurface(tuple(d["center"]), tuple(d["half_widths"]), proj)
        if kind == "sphere":
            return SphereSurface(tuple(d["center"]), float(d["radius"]), proj)
        if kind == "bounds_complement":
            return BoundsComplementSurface(tuple(d["lo"]), tuple(d["hi"]), proj)
        if kind == "halfspace":
            return HalfspaceSurface(tuple(d["normal"]), float(d.get("offset", 0.0)), proj)
        if kind == "union":
            return UnionSurface(tuple(surface_from_dict(m) for m in d["members"]))
        if kind == "intersection":
            return IntersectionSurface(tuple(surface_from_dict(m) for m in d["members"]))
    except KeyError as exc:
        raise ConfigError(f"surface type {kind!r} is missing field {exc}") from None
    raise ConfigError(f"unknown surface type {kind!r}")


def eval_surface(surf: Surface, s) -> float:
    """Signed distance of a single state."""
    s = np.asarray(s, dtype=float)
    if not np.isfinite(s).all():
        raise ValueError("state must be finite")
    return float(surf.values(s[None, :])[0])


@dataclass(frozen=True)
class CostSpec:
    """Target surface, optional constraint surface, and the cost mode."""

    target: Surface
    constraint: Optional[Surface] = None
    mode: str = REACH_AVOID

    def __post_init__(self):
        if self.mode not in (REACH_AVOID, MAX_TRACKING):
            raise ConfigError(f"unknown cost mode {self.mode!r}")
        if self.mode == MAX_TRACKING and self.constraint is not None:
            raise ConfigError("max_tracking mode takes no constraint surface")

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "target": self.target.to_dict()}
        if self.constraint is not None:
            d["constraint"] = self.constraint.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CostSpec":
        constraint = d.get("constraint")
        return cls(target=surface_from_dict(d["target"]),
                   constraint=surface_from_dict(constraint) if constraint else None,
                   mode=d.get("mode", REACH_AVOID))


class RunningCost:
    """Incremental cost over a batch of trajectories visited state by state.

    Reach-avoid: value = min over visited of max(l, running max of g).
    Max-tracking: value = running max of l. Shared by rollouts and the
    trajectory-level functions below so there is a single cost definition.
    """

    def __init__(self, spec: CostSpec, first_states: Array):
        self.spec = spec
        l0 = spec.target.values(first_states)
        if spec.mode == MAX_TRACKING:
            self._value = l0.copy()
            self._run_g = None
        else:
            if spec.constraint is not None:
                self._run_g = spec.constraint.values(first_states)
                self._value = np.maximum(l0, self._run_g)
            else:
                self._run_g = None
                self._value = l0.copy()

    def update(self, states: Array) -> None:
        l = self.spec.target.values(states)
        if self.spec.mode == MAX_TRACKING:
            np.maximum(self._value, l, out=self._value)
        else:
            if self._run_g is not None:
                np.maximum(self._run_g, self.spec.constraint.values(states), out=self._run_g)
                np.minimum(self._value, np.maximum(l, self._run_g), out=self._value)
            else:
                np.minimum(self._value, l, out=self._value)

    def value(self) -> Array:
        return self._value


def _traj_states(traj) -> Array:
    states = getattr(traj, "states", traj)
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] < 1:
        raise ValueError("trajectory must be a non-empty (T, n) state array")
    return states


def reach_avoid_cost(traj, target: Surface, constraint: Optional[Surface] = None) -> float:
    """Discrete reach-avoid cost: min over samples of max(l, running max of g)."""
    states = _traj_states(traj)
    acc = RunningCost(CostSpec(target, constraint, REACH_AVOID), states[0:1])
    for i in range(1, states.shape[0]):
        acc.update(states[i:i + 1])
    return float(acc.value()[0])


def max_tracking_cost(traj, target: Surface) -> float:
    """Discrete max-tracking cost: max over samples of l."""
    states = _traj_states(traj)
    acc = RunningCost(CostSpec(target, None, MAX_TRACKING), states[0:1])
    for i in range(1, states.shape[0]):
        acc.update(states[i:i + 1])
    return float(acc.value()[0])
