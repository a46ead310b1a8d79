"""Dense-grid discrete-time dynamic programming for low-dimensional ground truth.

Backward value iteration over a rectangular grid with multilinear interpolation
and clamping at the grid boundary. The input optimization is an exact corner
search (bang-bang) over the control and disturbance hyperboxes; ties prefer the
min corner. Practical bound: state dimension <= 4.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cost import MAX_TRACKING, REACH_AVOID, CostSpec
from .dynamics import ControlAffineModel, IntervalBounds
from .errors import ConfigError, PolicyFormatError
from .policy import RULE_BUILDERS, AnalyticRule
from .sim import TimeGrid, rk4_step

Array = np.ndarray

MAX_ORACLE_DIM = 4
GRID_FORMAT_VERSION = 1
# precomputed interpolation plans are skipped above this budget (bytes)
_PLAN_BUDGET = 1_500_000_000


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid; odd point counts keep the origin on a node.

    Queries outside [lo, hi] are clamped, except along dimensions listed in
    ``periodic`` (angle coordinates), which wrap with period hi - lo; the node
    at hi duplicates the node at lo there. Singleton dimensions (points == 1,
    lo == hi) are allowed for evaluation slices but not for oracle solves.
    """

    lo: tuple
    hi: tuple
    points: tuple
    periodic: tuple = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        points = tuple(int(p) for p in self.points)
        periodic = tuple(sorted(int(d) for d in self.periodic))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "periodic", periodic)
        if not (len(lo) == len(hi) == len(points)):
            raise ConfigError("grid lo/hi/points must have equal lengths")
        for d, (a, b, p) in enumerate(zip(lo, hi, points)):
            if p < 1:
                raise ConfigError(f"grid dimension {d}: points must be >= 1")
            if p == 1 and a != b:
                raise ConfigError(f"grid dimension {d}: singleton requires lo == hi")
            if p > 1 and not a < b:
                raise ConfigError(f"grid dimension {d}: requires lo < hi")
        for d in periodic:
            if d < 0 or d >= len(points):
                raise ConfigError(f"periodic dimension {d} out of range")
            if points[d] < 2:
                raise ConfigError(f"periodic dimension {d} needs at least 2 points")

    @property
    def ndim(self) -> int:
        return len(self.points)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.points))

    def axes(self) -> List[Array]:
        return [np.linspace(a, b, p) for a, b, p in zip(self.lo, self.hi, self.points)]

    def steps(self) -> Array:
        return np.array([(b - a) / (p - 1) if p > 1 else 0.0
                         for a, b, p in zip(self.lo, self.hi, self.points)])

    def cell_diameter(self) -> float:
        return float(np.linalg.norm(self.steps()))

    def nodes(self) -> Array:
        """All node coordinates, C-order (last dimension fastest)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def to_dict(self) -> dict:
        doc = {"lo": list(self.lo), "hi": list(self.hi), "points": list(self.points)}
        if self.periodic:
            doc["periodic"] = list(self.periodic)
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["points"]),
                   tuple(d.get("periodic", ())))


def _interp_plan(spec: GridSpec, queries: Array):
    """Clamped multilinear interpolation plan: (flat indices, weights, clamped)."""
    queries = np.asarray(queries, dtype=float)
    b = queries.shape[0]
    steps = spec.steps()
    strides = np.ones(spec.ndim, dtype=np.int64)
    for d in range(spec.ndim - 2, -1, -1):
        strides[d] = strides[d + 1] * spec.points[d + 1]

    active = [d for d in range(spec.ndim) if spec.points[d] > 1]
    base = np.zeros(b, dtype=np.int64)
    fracs = []
    clamped = np.zeros(b, dtype=bool)
    for d in active:
        if d in spec.periodic:
            period = spec.hi[d] - spec.lo[d]
            t = np.mod(queries[:, d] - spec.lo[d], period) / steps[d]
        else:
            t = (queries[:, d] - spec.lo[d]) / steps[d]
            clamped |= (t < 0.0) | (t > spec.points[d] - 1)
        i0 = np.clip(np.floor(t).astype(np.int64), 0, spec.points[d] - 2)
        frac = np.clip(t - i0, 0.0, 1.0)
        base += i0 * strides[d]
        fracs.append((frac, strides[d]))

    n_corners = 1 << len(active)
    idx = np.empty((b, n_corners), dtype=np.int64)
    weights = np.empty((b, n_corners))
    for c in range(n_corners):
        offset = 0
        w = np.ones(b)
        for bit, (frac, stride) in enumerate(fracs):
            if (c >> bit) & 1:
                offset += stride
                w = w * frac
            else:
                w = w * (1.0 - frac)
        idx[:, c] = base + offset
        weights[:, c] = w
    return idx, weights, clamped


@dataclass
class ValueGrid:
    """Dense value samples on a grid with solve metadata."""

    spec: GridSpec
    values: Array
    mode: str
    dt: float
    steps_run: int = 0
    converged: bool = False
    substeps: int = 1
    history: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape[0] != self.spec.num_nodes:
            raise ValueError("value array length must equal the grid node count")
        if not np.isfinite(self.values).all():
            raise ValueError("value grid must be finite everywhere")

    def interp_many(self, states: Array, return_clamped: bool = False):
        idx, w, clamped = _interp_plan(self.spec, states)
        vals = (self.values[idx] * w).sum(axis=1)
        return (vals, clamped) if return_clamped else vals

    def to_dict(self) -> dict:
        return {"format_version": GRID_FORMAT_VERSION, "kind": "value_grid",
                "mode": self.mode, "dt": self.dt, "substeps": self.substeps,
                "steps_run": self.steps_run, "converged": self.converged,
                "grid": self.spec.to_dict(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ValueGrid":
        if d.get("kind") != "value_grid" or d.get("format_version") != GRID_FORMAT_VERSION:
            raise PolicyFormatError("not a compatible value-grid document")
        try:
            return cls(spec=GridSpec.from_dict(d["grid"]),
                       values=np.asarray(d["values"], dtype=float),
                       mode=d["mode"], dt=float(d["dt"]),
                       steps_run=int(d.get("steps_run", 0)),
                       converged=bool(d.get("converged", False)),
                       substeps=int(d.get("substeps", 1)))
        except (KeyError, ValueError) as exc:
            raise PolicyFormatError(f"bad value-grid document: {exc}") from None


def interp(vg: ValueGrid, s) -> float:
    """Multilinear interpolation at one state, clamped to the grid box."""
    s = np.asarray(s, dtype=float)
    return float(vg.interp_many(s[None, :])[0])


def _corners(bounds: IntervalBounds) -> Array:
    """All hyperbox corners, index 0 = all-lo; dimension j toggles with bit j."""
    n = bounds.size
    out = np.empty((1 << n, n))
    for c in range(1 << n):
        bits = [(c >> j) & 1 for j in range(n)]
        out[c] = bounds.corner(bits)
    return out


def _validate_solve_inputs(model: ControlAffineModel, spec: GridSpec) -> None:
    if model.n > MAX_ORACLE_DIM:
        raise ConfigError(
            f"grid oracle refuses {model.n}-dimensional dynamics: the practical "
            f"bound is {MAX_ORACLE_DIM} dimensions")
    if spec.ndim != model.n:
        raise ConfigError(f"grid has {spec.ndim} dimensions, model has {model.n}")
    for d, p in enumerate(spec.points):
        if p < 3 or p % 2 == 0:
            raise ConfigError(f"oracle grid dimension {d}: points must be odd and >= 3")


def grid_solve(model: ControlAffineModel, cost: CostSpec, spec: GridSpec,
               time_grid: TimeGrid, substeps: int = 1,
               convergence_tol: float = 1e-6, keep_history: bool = False) -> ValueGrid:
    """Backward value iteration for the reach-avoid or max-tracking game.

    One-step backup at each node: min over control corners of max over
    disturbance corners of the interpolated downstream value, folded with the
    target/constraint surfaces. Stops early once the max node change drops
    below ``convergence_tol``.
    """
    _validate_solve_inputs(model, spec)
    nodes = spec.nodes()
    l = cost.target.values(nodes)
    g = cost.constraint.values(nodes) if cost.constraint is not None else None

    if cost.mode == REACH_AVOID and g is not None:
        v = np.maximum(l, g)
    else:
        v = l.copy()

    u_corners = _corners(model.u_bounds)
    d_corners = _corners(model.d_bounds)
    n_pairs = len(u_corners) * len(d_corners)
    n_neighbors = 1 << model.n
    plan_bytes = spec.num_nodes * n_neighbors * 16 * n_pairs
    cache_plans = plan_bytes <= _PLAN_BUDGET

    stepped, plans = [], []
    for u in u_corners:
        row_s, row_p = [], []
        for d in d_corners:
            s1 = rk4_step(model, nodes, u, d, time_grid.dt, substeps)
            row_s.append(s1)
            row_p.append(_interp_plan(spec, s1)[:2] if cache_plans else None)
        stepped.append(row_s)
        plans.append(row_p)

    history = [] if keep_history else None
    steps_run = 0
    converged = False
    for _ in range(time_grid.num_steps):
        inner = None
        for iu in range(len(u_corners)):
            best_d = None
            for jd in range(len(d_corners)):
                if cache_plans:
                    idx, w = plans[iu][jd]
                    vals = (v[idx] * w).sum(axis=1)
                else:
                    idx, w, _ = _interp_plan(spec, stepped[iu][jd])
                    vals = (v[idx] * w).sum(axis=1)
                best_d = vals if best_d is None else np.maximum(best_d, vals)
            inner = best_d if inner is None else np.minimum(inner, best_d)

        if cost.mode == MAX_TRACKING:
            v_new = np.maximum(l, inner)
        else:
            v_new = np.minimum(l, inner)
            if g is not None:
                v_new = np.maximum(g, v_new)

        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        steps_run += 1
        if history is not None:
            history.append(v.copy())
        if delta < convergence_tol:
            converged = True
            break

    return ValueGrid(spec=spec, values=v, mode=cost.mode, dt=time_grid.dt,
                     steps_run=steps_run, converged=converged, substeps=substeps,
                     history=history)


def grid_disturbance_rule(vg: ValueGrid, model: ControlAffineModel) -> AnalyticRule:
    """Worst-case disturbance extracted from a solved grid.

    At each state the rule returns the disturbance corner maximizing the
    one-step backup min over control corners of interp(V, step(s, u, d));
    exact ties keep the earlier corner in all-lo-first enumeration order, so a
    powerless disturbance returns d_min. Out-of-grid queries are clamped and
    counted in ``rule.stats``.
    """
    u_corners = _corners(model.u_bounds)
    d_corners = _corners(model.d_bounds)
    stats = {"queries": 0, "clamped": 0}

    def fn(states: Array) -> Array:
        states = np.asarray(states, dtype=float)
        b = states.shape[0]
        best_val = None
        best_idx = np.zeros(b, dtype=np.int64)
        clamped_any = np.zeros(b, dtype=bool)
        for jd, d in enumerate(d_corners):
            worst_u = None
            for u in u_corners:
                s1 = rk4_step(model, states, u, d, vg.dt, vg.substeps)
                vals, clamped = vg.interp_many(s1, return_clamped=True)
                clamped_any |= clamped
                worst_u = vals if worst_u is None else np.minimum(worst_u, vals)
            if best_val is None:
                best_val = worst_u
            else:
                better = worst_u > best_val  # strict: ties keep the earlier corner
                best_val = np.where(better, worst_u, best_val)
                best_idx[better] = jd
        stats["queries"] += b
        stats["clamped"] += int(clamped_any.sum())
        return d_corners[best_idx]

    rule = AnalyticRule("grid_backup", fn, payload={"value_grid": vg.to_dict()})
    rule.stats = stats
    return rule


RULE_BUILDERS["grid_backup"] = lambda payload, model: grid_disturbance_rule(
    ValueGrid.from_dict(payload["value_grid"]), model)


def save_value_grid(vg: ValueGrid, path) -> None:
    with open(path, "w") as fh:
        json.dump(vg.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")


def load_value_grid(path) -> ValueGrid:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PolicyFormatError(f"value-grid file is not valid JSON: {exc}") from None
    return ValueGrid.from_dict(doc)


def export_value_grid_csv(vg: ValueGrid, path) -> None:
    """Node coordinates plus value, preceded by a compact metadata header."""
    nodes = vg.spec.nodes()
    with open(path, "w", newline="") as fh:
        fh.write(f"# mode={vg.mode} dt={vg.dt!r} steps_run={vg.steps_run} "
                 f"converged={vg.converged}\n")
        fh.write(f"# lo={list(vg.spec.lo)!r} hi={list(vg.spec.hi)!r} "
                 f"points={list(vg.spec.points)!r}\n")
        writer = csv.writer(fh)
        writer.writerow([f"x{d}" for d in range(vg.spec.ndim)] + ["value"])
        for row, val in zip(nodes, vg.values):
            writer.writerow([repr(float(x)) for x in row] + [repr(float(val))])
