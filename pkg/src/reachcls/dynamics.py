"""Control/disturbance-affine dynamics and the built-in benchmark models.

A model evaluates ds/dt = drift(s) + control_columns(s) @ u + disturbance_columns(s) @ d.
All evaluators are pure, vectorized over a leading batch axis, and immutable after
construction, so models are safe to share across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

Array = np.ndarray


def _freeze(a: Array) -> Array:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class IntervalBounds:
    """Per-dimension interval endpoints, lo[i] <= hi[i]."""

    lo: Array
    hi: Array

    def __post_init__(self):
        object.__setattr__(self, "lo", _freeze(np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", _freeze(np.atleast_1d(self.hi)))
        if self.lo.ndim != 1 or self.hi.ndim != 1 or self.lo.shape != self.hi.shape:
            raise ValueError("bounds lo/hi must be 1-D vectors of equal length")
        if not (np.isfinite(self.lo).all() and np.isfinite(self.hi).all()):
            raise ValueError("bounds must be finite")
        if np.any(self.lo > self.hi):
            raise ValueError("bounds require lo[i] <= hi[i] for all i")

    @classmethod
    def symmetric(cls, radii) -> "IntervalBounds":
        r = np.atleast_1d(np.asarray(radii, dtype=float))
        return cls(-r, r)

    @classmethod
    def empty(cls) -> "IntervalBounds":
        return cls(np.zeros(0), np.zeros(0))

    @property
    def size(self) -> int:
        return self.lo.shape[0]

    @property
    def widths(self) -> Array:
        return self.hi - self.lo

    def contains(self, x, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.size:
            return False
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))

    def corner(self, bits) -> Array:
        """Hyperbox corner: component i is hi[i] where bits[i] else lo[i]."""
        bits = np.asarray(bits, dtype=bool)
        return np.where(bits, self.hi, self.lo)

    def sample_uniform(self, rng: np.random.Generator, count: int) -> Array:
        return rng.uniform(self.lo, self.hi, size=(count, self.size))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalBounds":
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


@dataclass(frozen=True)
class ControlAffineModel:
    """Affine-in-inputs dynamics with interval-bounded inputs.

    ``drift``, ``control_columns`` and ``disturbance_columns`` accept states of
    shape (B, n) and return (B, n), (B, n, n_u) and (B, n, n_d) respectively.
    ``n_d`` may be zero for problems without a disturbance player.
    """

    name: str
    n: int
    n_u: int
    n_d: int
    drift: Callable[[Array], Array]
    control_columns: Callable[[Array], Array]
    disturbance_columns: Callable[[Array], Array]
    u_bounds: IntervalBounds
    d_bounds: IntervalBounds
    state_box: IntervalBounds
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.u_bounds.size != self.n_u:
            raise ValueError(f"u_bounds has length {self.u_bounds.size}, expected {self.n_u}")
        if self.d_bounds.size != self.n_d:
            raise ValueError(f"d_bounds has length {self.d_bounds.size}, expected {self.n_d}")
        if self.state_box.size != self.n:
            raise ValueError(f"state_box has length {self.state_box.size}, expected {self.n}")

    def rhs(self, states: Array, u: Array, d: Array) -> Array:
        """Batched ds/dt without argument validation (hot path).

        ``u``/``d`` may be (n_u,) vectors shared by the batch or (B, n_u) arrays.
        """
        out = self.drift(states)
        if self.n_u:
            cols = self.control_columns(states)
            u = np.asarray(u, dtype=float)
            spec = "bij,bj->bi" if u.ndim == 2 else "bij,j->bi"
            out = out + np.einsum(spec, cols, u)
        if self.n_d:
            cols = self.disturbance_columns(states)
            d = np.asarray(d, dtype=float)
            spec = "bij,bj->bi" if d.ndim == 2 else "bij,j->bi"
            out = out + np.einsum(spec, cols, d)
        return out

    def eval_rhs(self, s, u, d=None) -> Array:
        """Single-state ds/dt with dimension and bound checks."""
        s = np.asarray(s, dtype=float)
        u = np.asarray(u, dtype=float)
        d = np.zeros(self.n_d) if d is None else np.asarray(d, dtype=float)
        if s.shape != (self.n,):
            raise ValueError(f"state has shape {s.shape}, expected ({self.n},)")
        if u.shape != (self.n_u,):
            raise ValueError(f"control has shape {u.shape}, expected ({self.n_u},)")
        if d.shape != (self.n_d,):
            raise ValueError(f"disturbance has shape {d.shape}, expected ({self.n_d},)")
        if not self.u_bounds.contains(u):
            raise ValueError(f"control {u.tolist()} outside bounds")
        if self.n_d and not self.d_bounds.contains(d):
            raise ValueError(f"disturbance {d.tolist()} outside bounds")
        return self.rhs(s[None, :], u, d)[0]


def _constant_columns(matrix: Array) -> Callable[[Array], Array]:
    matrix = _freeze(matrix)

    def cols(states: Array) -> Array:
        return np.broadcast_to(matrix, (states.shape[0],) + matrix.shape)

    return cols


def make_point2d(u_bounds: IntervalBounds, state_box: Optional[IntervalBounds] = None) -> ControlAffineModel:
    """2D point with dx = u1, dy = u2 and no disturbance."""
    if not isinstance(u_bounds, IntervalBounds):
        u_bounds = IntervalBounds.from_dict(u_bounds)
    if u_bounds.size != 2:
        raise ConfigError("point2d requires control bounds of length 2")
    state_box = state_box or IntervalBounds.symmetric([3.0, 3.0])

    def drift(states: Array) -> Array:
        return np.zeros_like(states)

    return ControlAffineModel(
        name="point2d", n=2, n_u=2, n_d=0,
        drift=drift,
        control_columns=_constant_columns(np.eye(2)),
        disturbance_columns=_constant_columns(np.zeros((2, 0))),
        u_bounds=u_bounds,
        d_bounds=IntervalBounds.empty(),
        state_box=state_box,
        params={"u_bounds": u_bounds.to_dict(), "state_box": state_box.to_dict()},
    )


def make_unicycle4d(state_box: Optional[IntervalBounds] = None) -> ControlAffineModel:
    """4D unicycle (x, y, heading, speed); controls (accel in [0,1], turn rate in [-1,1])."""
    state_box = state_box or IntervalBounds(
        [-3.0, -3.0, -math.pi, 0.0], [3.0, 3.0, math.pi, 2.0])
    if state_box.size != 4:
        raise ConfigError("unicycle4d state_box must have length 4")

    def drift(states: Array) -> Array:
        out = np.zeros_like(states)
        out[:, 0] = states[:, 3] * np.cos(states[:, 2])
        out[:, 1] = states[:, 3] * np.sin(states[:, 2])
        return out

    # control order (u_a, u_omega): u_a drives speed (row 3), u_omega heading (row 2)
    beta = np.zeros((4, 2))
    beta[3, 0] = 1.0
    beta[2, 1] = 1.0

    return ControlAffineModel(
        name="unicycle4d", n=4, n_u=2, n_d=0,
        drift=drift,
        control_columns=_constant_columns(beta),
        disturbance_columns=_constant_columns(np.zeros((4, 0))),
        u_bounds=IntervalBounds([0.0, -1.0], [1.0, 1.0]),
        d_bounds=IntervalBounds.empty(),
        state_box=state_box,
        params={"state_box": state_box.to_dict()},
    )


def _quad_common(gravity, angle_bound, thrust_delta, wind_bound, planner_bound):
    u_lo = [-angle_bound, -angle_bound, gravity - thrust_delta]
    u_hi = [angle_bound, angle_bound, gravity + thrust_delta]
    d_lo = [-wind_bound] * 3 + [-planner_bound] * 3
    d_hi = [wind_bound] * 3 + [planner_bound] * 3
    return u_lo, u_hi, d_lo, d_hi


def make_quad6d_relative(gravity: float = 9.81, angle_bound: float = 0.1,
                         thrust_delta: float = 2.0, wind_bound: float = 0.25,
                         planner_bound: float = 0.25,
                         state_box: Optional[IntervalBounds] = None) -> ControlAffineModel:
    """6D tracker-vs-planner relative dynamics.

    State (r_x, r_y, r_z, v_x, v_y, v_z): relative position and tracker velocity.
    Controls (pitch, roll, thrust) enter linearly via the small-angle surrogates
    g*pitch, -g*roll, thrust - g. The disturbance stacks wind (d_x, d_y, d_z) and
    planner velocity (b_x, b_y, b_z); both subtract from the relative velocity.
    """
    state_box = state_box or IntervalBounds.symmetric([2.0] * 6)
    if state_box.size != 6:
        raise ConfigError("quad6d_rel state_box must have length 6")
    u_lo, u_hi, d_lo, d_hi = _quad_common(gravity, angle_bound, thrust_delta,
                                          wind_bound, planner_bound)

    def drift(states: Array) -> Array:
        out = np.zeros_like(states)
        out[:, 0:3] = states[:, 3:6]
        out[:, 5] = -gravity
        return out

    beta = np.zeros((6, 3))
    beta[3, 0] = gravity     # pitch -> dv_x
    beta[4, 1] = -gravity    # roll  -> dv_y
    beta[5, 2] = 1.0         # thrust -> dv_z
    gamma = np.zeros((6, 6))
    for axis in range(3):
        gamma[axis, axis] = -1.0       # wind
        gamma[axis, 3 + axis] = -1.0   # planner velocity

    return ControlAffineModel(
        name="quad6d_rel", n=6, n_u=3, n_d=6,
        drift=drift,
        control_columns=_constant_columns(beta),
        disturbance_columns=_constant_columns(gamma),
        u_bounds=IntervalBounds(u_lo, u_hi),
        d_bounds=IntervalBounds(d_lo, d_hi),
        state_box=state_box,
        params={"gravity": gravity, "angle_bound": angle_bound,
                "thrust_delta": thrust_delta, "wind_bound": wind_bound,
                "planner_bound": planner_bound, "state_box": state_box.to_dict()},
    )


def make_quad7d_relative(gravity: float = 9.81, angle_bound: float = 0.1,
                         thrust_delta: float = 2.0, wind_bound: float = 0.25,
                         planner_bound: float = 0.25, yaw_rate_bound: float = 1.0,
                         state_box: Optional[IntervalBounds] = None) -> ControlAffineModel:
    """7D variant of the relative dynamics with a yaw state and yaw-rate control.

    The velocity rows rotate the pitch/roll columns by the yaw state, so the
    control columns are state-dependent (permitted: affinity is in the inputs).
    """
    state_box = state_box or IntervalBounds(
        [-2.0] * 6 + [-math.pi], [2.0] * 6 + [math.pi])
    if state_box.size != 7:
        raise ConfigError("quad7d_rel state_box must have length 7")
    u_lo, u_hi, d_lo, d_hi = _quad_common(gravity, angle_bound, thrust_delta,
                                          wind_bound, planner_bound)
    u_lo = u_lo + [-yaw_rate_bound]
    u_hi = u_hi + [yaw_rate_bound]

    def drift(states: Array) -> Array:
        out = np.zeros_like(states)
        out[:, 0:3] = states[:, 3:6]
        out[:, 5] = -gravity
        return out

    def control_cols(states: Array) -> Array:
        b = states.shape[0]
        cols = np.zeros((b, 7, 4))
        c = np.cos(states[:, 6])
        s = np.sin(states[:, 6])
        cols[:, 3, 0] = gravity * c    # pitch -> dv_x
        cols[:, 3, 1] = gravity * s    # roll  -> dv_x
        cols[:, 4, 0] = gravity * s    # pitch -> dv_y
        cols[:, 4, 1] = -gravity * c   # roll  -> dv_y
        cols[:, 5, 2] = 1.0            # thrust -> dv_z
        cols[:, 6, 3] = 1.0            # yaw rate -> dyaw
        return cols

    gamma = np.zeros((7, 6))
    for axis in range(3):
        gamma[axis, axis] = -1.0
        gamma[axis, 3 + axis] = -1.0

    return ControlAffineModel(
        name="quad7d_rel", n=7, n_u=4, n_d=6,
        drift=drift,
        control_columns=control_cols,
        disturbance_columns=_constant_columns(gamma),
        u_bounds=IntervalBounds(u_lo, u_hi),
        d_bounds=IntervalBounds(d_lo, d_hi),
        state_box=state_box,
        params={"gravity": gravity, "angle_bound": angle_bound,
                "thrust_delta": thrust_delta, "wind_bound": wind_bound,
                "planner_bound": planner_bound, "yaw_rate_bound": yaw_rate_bound,
                "state_box": state_box.to_dict()},
    )


def make_fastrack2d_x(gravity: float = 9.81, angle_bound: float = 0.1,
                      wind_bound: float = 0.25, planner_bound: float = 0.25,
                      state_box: Optional[IntervalBounds] = None) -> ControlAffineModel:
    """Planar (r_x, v_x) subsystem of the 6D relative dynamics.

    dr = v - d - b, dv = g * pitch; one control, two stacked disturbances (wind,
    planner speed). Small enough for the grid oracle, which makes it the
    workhorse for over-approximation checks.
    """
    state_box = state_box or IntervalBounds.symmetric([2.0, 2.0])
    if state_box.size != 2:
        raise ConfigError("fastrack2d_x state_box must have length 2")

    def drift(states: Array) -> Array:
        out = np.zeros_like(states)
        out[:, 0] = states[:, 1]
        return out

    beta = np.array([[0.0], [gravity]])
    gamma = np.array([[-1.0, -1.0], [0.0, 0.0]])

    return ControlAffineModel(
        name="fastrack2d_x", n=2, n_u=1, n_d=2,
        drift=drift,
        control_columns=_constant_columns(beta),
        disturbance_columns=_constant_columns(gamma),
        u_bounds=IntervalBounds.symmetric([angle_bound]),
        d_bounds=IntervalBounds([-wind_bound, -planner_bound], [wind_bound, planner_bound]),
        state_box=state_box,
        params={"gravity": gravity, "angle_bound": angle_bound,
                "wind_bound": wind_bound, "planner_bound": planner_bound,
                "state_box": state_box.to_dict()},
    )


def _build_point2d(params: dict) -> ControlAffineModel:
    params = dict(params)
    if "u_bounds" not in params:
        raise ConfigError("model point2d requires params.u_bounds")
    box = params.get("state_box")
    return make_point2d(IntervalBounds.from_dict(params["u_bounds"]),
                        IntervalBounds.from_dict(box) if box else None)


def _build_with_box(factory):
    def build(params: dict) -> ControlAffineModel:
        kwargs = dict(params)
        box = kwargs.pop("state_box", None)
        if box is not None:
            kwargs["state_box"] = IntervalBounds.from_dict(box)
        try:
            return factory(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad model params: {exc}") from None
    return build


MODEL_BUILDERS = {
    "point2d": _build_point2d,
    "unicycle4d": _build_with_box(make_unicycle4d),
    "quad6d_rel": _build_with_box(make_quad6d_relative),
    "quad7d_rel": _build_with_box(make_quad7d_relative),
    "fastrack2d_x": _build_with_box(make_fastrack2d_x),
}


def build_model(name: str, params: Optional[dict] = None) -> ControlAffineModel:
    """Construct a registered model from its config name and params object."""
    if name not in MODEL_BUILDERS:
        raise ConfigError(f"unknown model {name!r}; known: {sorted(MODEL_BUILDERS)}")
    return MODEL_BUILDERS[name](params or {})
