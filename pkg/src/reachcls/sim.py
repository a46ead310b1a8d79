"""Trajectory integration and policy rollouts.

Inputs are held piecewise constant over each step; integration is classical
RK4 with an optional number of equal sub-intervals. Rollouts consume policy
layers backward-compatibly with training: starting at step k, layer k-1 acts
first, layer 0 acts last, and the cost functional samples every grid time
including the initial state.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cost import CostSpec, RunningCost
from .dynamics import ControlAffineModel
from .errors import NumericalBlowupError
from .policy import PolicyStack

Array = np.ndarray


@dataclass(frozen=True)
class TimeGrid:
    """Uniform backward time grid: discrete times are -k*dt for k = 0..num_steps."""

    dt: float
    num_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")

    @property
    def horizon(self) -> float:
        return self.dt * self.num_steps

    def times(self, k_start: Optional[int] = None) -> Array:
        k = self.num_steps if k_start is None else k_start
        return -self.dt * np.arange(k, -1, -1)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "num_steps": self.num_steps}


@dataclass(frozen=True)
class Trajectory:
    states: Array   # (T, n)
    times: Array    # (T,), strictly increasing toward 0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        if states.ndim != 2 or times.ndim != 1 or states.shape[0] != times.shape[0]:
            raise ValueError("states and times must have matching leading length")
        if states.shape[0] == 0:
            raise ValueError("trajectory must be non-empty")
        if times.shape[0] > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")


def _check_finite(states: Array) -> None:
    finite = np.isfinite(states).all(axis=-1)
    if not finite.all():
        bad = states[np.argmin(finite)]
        raise NumericalBlowupError(f"integration produced non-finite state {bad.tolist()}",
                                   state=bad)


def rk4_step(model: ControlAffineModel, states: Array, u, d, dt: float,
             substeps: int = 1) -> Array:
    """Batched RK4 step with inputs held constant; no validation (hot path)."""
    h = dt / substeps
    s = states
    for _ in range(substeps):
        k1 = model.rhs(s, u, d)
        k2 = model.rhs(s + (h / 2.0) * k1, u, d)
        k3 = model.rhs(s + (h / 2.0) * k2, u, d)
        k4 = model.rhs(s + h * k3, u, d)
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return s


def integrate_step(model: ControlAffineModel, s, u, d=None, dt: float = 0.1,
                   substeps: int = 1) -> Array:
    """Single-state RK4 step with bound/dimension validation and blowup checks."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    s = np.asarray(s, dtype=float)
    model.eval_rhs(s, u, d)  # validates shapes and bounds
    d = np.zeros(model.n_d) if d is None else np.asarray(d, dtype=float)
    out = rk4_step(model, s[None, :], np.asarray(u, dtype=float), d, dt, substeps)
    _check_finite(out)
    return out[0]


def rollout_costs(model: ControlAffineModel, stack: PolicyStack, states: Array,
                  k_start: int, cost: CostSpec, substeps: int = 1,
                  disturbance_override: Optional[Array] = None) -> Array:
    """Batched induced cost of rolling the stack from step ``k_start`` to 0.

    ``disturbance_override`` (B, k_start, n_d), when given, replaces the
    stack's disturbance on step index m (counting the first step as 0).
    """
    if k_start < 0:
        raise ValueError("k_start must be >= 0")
    states = np.asarray(states, dtype=float)
    acc = RunningCost(cost, states)
    for step_index, k in enumerate(range(k_start, 0, -1)):
        u = stack.control_vectors(k - 1, states)
        if disturbance_override is not None:
            d = disturbance_override[:, step_index, :]
        else:
            d = stack.disturbance_vectors(k - 1, states)
        states = rk4_step(model, states, u, d, stack.dt, substeps)
        _check_finite(states)
        acc.update(states)
    return acc.value()


def rollout_cost(model: ControlAffineModel, stack: PolicyStack, s, k_start: int,
                 cost: CostSpec, substeps: int = 1) -> float:
    """Induced cost for a single start state (see rollout_costs)."""
    s = np.asarray(s, dtype=float)
    if s.shape != (model.n,):
        raise ValueError(f"state has shape {s.shape}, expected ({model.n},)")
    if k_start > stack.depth and not stack.converged:
        raise ValueError(f"k_start {k_start} exceeds stack depth {stack.depth}")
    return float(rollout_costs(model, stack, s[None, :], k_start, cost, substeps)[0])


def rollout_trajectory(model: ControlAffineModel, stack: PolicyStack, s,
                       k_start: int, substeps: int = 1):
    """Full rollout record: (Trajectory, controls (k,n_u), disturbances (k,n_d))."""
    s = np.asarray(s, dtype=float)[None, :]
    states = [s[0].copy()]
    controls = np.zeros((k_start, stack.n_u))
    disturbances = np.zeros((k_start, stack.n_d))
    for step_index, k in enumerate(range(k_start, 0, -1)):
        u = stack.control_vectors(k - 1, s)
        d = stack.disturbance_vectors(k - 1, s)
        controls[step_index] = u[0]
        disturbances[step_index] = d[0]
        s = rk4_step(model, s, u, d, stack.dt, substeps)
        _check_finite(s)
        states.append(s[0].copy())
    times = -stack.dt * np.arange(k_start, -1, -1)
    return Trajectory(np.asarray(states), times), controls, disturbances
