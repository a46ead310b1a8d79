"""Policy-induced value estimation, set extraction, and conservatism checks.

The induced value of a state is the cost of simulating the learned policies
from it; reach-avoid membership is value <= 0 (non-strict). compare_sets
checks the subset direction against an oracle grid for reach-avoid problems
and the over-approximation direction for max-tracking problems, with an
epsilon margin absorbing the oracle's own discretization error.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .cost import REACH_AVOID, CostSpec
from .dynamics import ControlAffineModel
from .errors import ConfigError, NumericalBlowupError
from .oracle import GridSpec, ValueGrid
from .policy import PolicyStack
from .sim import Trajectory, rollout_costs

Array = np.ndarray

_CHUNK = 8192  # fixed chunk size keeps results independent of the thread count
REPORT_FORMAT_VERSION = 1


@dataclass
class SetReport:
    grid: GridSpec
    mode: str
    values: Array                       # induced value per node, C-order
    members: Array                      # values <= 0
    k_start: int
    oracle_values: Optional[Array] = None
    violations: Optional[Array] = None
    epsilon: Optional[float] = None
    decisions: Optional[Array] = None   # (M, n_u) first-acting-layer bang-bang bits
    failed: List[tuple] = field(default_factory=list)

    def summary(self) -> dict:
        node_count = self.grid.num_nodes
        member_count = int(self.members.sum())
        out = {"node_count": node_count, "member_count": member_count,
               "member_fraction": member_count / node_count, "mode": self.mode,
               "k_start": self.k_start, "failed_count": len(self.failed)}
        if self.violations is not None:
            vio = int(self.violations.sum())
            if self.mode == REACH_AVOID:
                denom = max(member_count, 1)
            else:
                denom = node_count
            out.update({"violation_count": vio, "violation_fraction": vio / denom,
                        "epsilon": self.epsilon})
        return out

    def to_dict(self) -> dict:
        doc = {"format_version": REPORT_FORMAT_VERSION, "kind": "set_report",
               "grid": self.grid.to_dict(), "mode": self.mode, "k_start": self.k_start,
               "values": self.values.tolist(),
               "members": self.members.astype(int).tolist(),
               "failed": [list(f) for f in self.failed],
               "summary": self.summary()}
        if self.oracle_values is not None:
            doc["oracle_values"] = self.oracle_values.tolist()
            doc["violations"] = self.violations.astype(int).tolist()
            doc["epsilon"] = self.epsilon
        if self.decisions is not None:
            doc["decisions"] = self.decisions.astype(int).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SetReport":
        report = cls(grid=GridSpec.from_dict(doc["grid"]), mode=doc["mode"],
                     values=np.asarray(doc["values"], dtype=float),
                     members=np.asarray(doc["members"], dtype=bool),
                     k_start=int(doc["k_start"]),
                     failed=[tuple(f) for f in doc.get("failed", [])])
        if "oracle_values" in doc:
            report.oracle_values = np.asarray(doc["oracle_values"], dtype=float)
            report.violations = np.asarray(doc["violations"], dtype=bool)
            report.epsilon = float(doc["epsilon"])
        if "decisions" in doc:
            report.decisions = np.asarray(doc["decisions"], dtype=np.uint8)
        return report


def _resolve_k_start(stack: PolicyStack, k_start: Optional[int]) -> int:
    if k_start is None:
        return stack.depth
    if k_start < 0:
        raise ValueError("k_start must be >= 0")
    if k_start > stack.depth and not stack.converged:
        raise ValueError(f"k_start {k_start} exceeds depth {stack.depth} of an "
                         f"unconverged stack")
    return k_start


def estimate_values(model: ControlAffineModel, stack: PolicyStack, states: Array,
                    cost: CostSpec, k_start: Optional[int] = None,
                    substeps: int = 1) -> Array:
    """Batched induced values V^{policies}(states) by full rollout."""
    k = _resolve_k_start(stack, k_start)
    return rollout_costs(model, stack, np.asarray(states, dtype=float), k, cost, substeps)


def estimate_value(model: ControlAffineModel, stack: PolicyStack, s, cost: CostSpec,
                   k_start: Optional[int] = None, substeps: int = 1) -> float:
    s = np.asarray(s, dtype=float)
    return float(estimate_values(model, stack, s[None, :], cost, k_start, substeps)[0])


def _eval_chunk(model, stack, nodes, k, cost, substeps, values, failed, lo):
    chunk = nodes[lo:lo + _CHUNK]
    try:
        values[lo:lo + chunk.shape[0]] = rollout_costs(model, stack, chunk, k, cost,
                                                       substeps)
    except NumericalBlowupError:
        # isolate failing nodes so one bad rollout does not poison the chunk
        for offset in range(chunk.shape[0]):
            try:
                values[lo + offset] = rollout_costs(
                    model, stack, chunk[offset:offset + 1], k, cost, substeps)[0]
            except NumericalBlowupError as exc:
                values[lo + offset] = np.nan
                failed.append((lo + offset, str(exc)))


def extract_set(model: ControlAffineModel, stack: PolicyStack, spec: GridSpec,
                cost: CostSpec, k_start: Optional[int] = None,
                include_decisions: bool = False, threads: Optional[int] = None,
                substeps: int = 1) -> SetReport:
    """Induced value and membership at every grid node.

    Nodes are evaluated in fixed-size chunks, so the result is identical for
    any thread count. Per-node failures are recorded, not fatal.
    """
    if spec.ndim != model.n:
        raise ConfigError(f"eval grid has {spec.ndim} dimensions, model has {model.n}")
    k = _resolve_k_start(stack, k_start)
    nodes = spec.nodes()
    values = np.empty(spec.num_nodes)
    failed: List[tuple] = []
    starts = range(0, spec.num_nodes, _CHUNK)
    workers = max(1, threads or (os.cpu_count() or 1))
    if workers == 1 or len(starts) <= 1:
        for lo in starts:
            _eval_chunk(model, stack, nodes, k, cost, substeps, values, failed, lo)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda lo: _eval_chunk(model, stack, nodes, k, cost,
                                                 substeps, values, failed, lo),
                          starts))
    failed.sort(key=lambda f: f[0])

    members = np.zeros(spec.num_nodes, dtype=bool)
    finite = np.isfinite(values)
    members[finite] = values[finite] <= 0.0

    decisions = None
    if include_decisions and k >= 1:
        u = stack.control_vectors(k - 1, nodes)
        decisions = (u >= (stack.u_bounds.lo + stack.u_bounds.hi) / 2.0).astype(np.uint8)

    return SetReport(grid=spec, mode=cost.mode, values=values, members=members,
                     k_start=k, decisions=decisions, failed=failed)


def compare_sets(report: SetReport, oracle: ValueGrid, epsilon: float) -> SetReport:
    """Augment a report with oracle values and conservatism violations.

    Reach-avoid: flags member nodes whose oracle value exceeds epsilon.
    Max-tracking: flags nodes where the induced value is below oracle - epsilon
    (the induced value must over-approximate).
    """
    if oracle.spec != report.grid:
        raise ConfigError("oracle grid spec does not match the report grid")
    oracle_values = oracle.values.copy()
    if report.mode == REACH_AVOID:
        violations = report.members & (oracle_values > epsilon)
    else:
        with np.errstate(invalid="ignore"):
            violations = report.values < oracle_values - epsilon
        violations &= np.isfinite(report.values)
    return replace(report, oracle_values=oracle_values, violations=violations,
                   epsilon=float(epsilon))


def _report_csv(report: SetReport, path) -> None:
    ndim = report.grid.ndim
    header = [f"x{d}" for d in range(ndim)] + ["value", "member"]
    with_oracle = report.oracle_values is not None
    if with_oracle:
        header += ["oracle_value", "violation"]
    n_dec = 0 if report.decisions is None else report.decisions.shape[1]
    header += [f"u{i}" for i in range(n_dec)]
    nodes = report.grid.nodes()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(report.grid.num_nodes):
            row = [repr(float(x)) for x in nodes[i]]
            row += [repr(float(report.values[i])), int(report.members[i])]
            if with_oracle:
                row += [repr(float(report.oracle_values[i])), int(report.violations[i])]
            if n_dec:
                row += [int(b) for b in report.decisions[i]]
            writer.writerow(row)


def export(obj, path, fmt: str = "csv") -> None:
    """Write a SetReport, ValueGrid, or Trajectory in deterministic row order."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown export format {fmt!r}")
    if isinstance(obj, SetReport):
        if fmt == "csv":
            _report_csv(obj, path)
        else:
            with open(path, "w") as fh:
                json.dump(obj.to_dict(), fh, separators=(",", ":"))
                fh.write("\n")
        return
    if isinstance(obj, ValueGrid):
        from . import oracle as _oracle
        if fmt == "csv":
            _oracle.export_value_grid_csv(obj, path)
        else:
            _oracle.save_value_grid(obj, path)
        return
    if isinstance(obj, Trajectory):
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t"] + [f"x{d}" for d in range(obj.states.shape[1])])
                for t, s in zip(obj.times, obj.states):
                    writer.writerow([repr(float(t))] + [repr(float(x)) for x in s])
        else:
            with open(path, "w") as fh:
                json.dump({"times": obj.times.tolist(), "states": obj.states.tolist()},
                          fh, separators=(",", ":"))
                fh.write("\n")
        return
    raise ConfigError(f"cannot export object of type {type(obj).__name__}")


def load_report(path) -> SetReport:
    with open(path) as fh:
        return SetReport.from_dict(json.load(fh))
