"""Backward dynamic programming over learned bang-bang classifiers.

Each iteration k samples states uniformly, labels the approximately optimal
corner of every control (and, when learned, disturbance) dimension by
comparing one-step rollout costs against the all-min-corner baseline, trains
one binary classifier per labeled dimension (warm-started from the previous
step), and appends the new layer to the policy stack. Label tests are strict:
flipping a dimension to its max corner must strictly lower (control) or raise
(disturbance) the rolled-out cost, so ties keep the min corner.

Convergence is detected by decision agreement between consecutive layers on a
fixed seeded probe set. All randomness flows from one seed through named
sub-streams, so any step is reproducible in isolation and interrupted runs
resume bit-identically from checkpoints.
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import nn
from .cost import CostSpec
from .dynamics import ControlAffineModel
from .errors import PolicyFormatError
from .policy import (SOURCE_ANALYTIC, SOURCE_LEARNED, SOURCE_NONE, AnalyticRule,
                     PolicyLayer, PolicyStack)
from .sim import TimeGrid, rk4_step, rollout_costs

Array = np.ndarray

# named randomness sub-streams
_STREAM_SAMPLE = 1
_STREAM_INIT = 2
_STREAM_TRAIN = 3
_STREAM_PROBE = 4
_PLAYER_CONTROL = 0
_PLAYER_DISTURBANCE = 1

MODE_LEARN = "learn"
MODE_ANALYTIC = "analytic"
MODE_NONE = "none"


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _substream_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


@dataclass(frozen=True)
class DisturbanceMode:
    kind: str = MODE_NONE
    rule: Optional[AnalyticRule] = None

    def __post_init__(self):
        if self.kind not in (MODE_LEARN, MODE_ANALYTIC, MODE_NONE):
            raise ValueError(f"unknown disturbance mode {self.kind!r}")
        if self.kind == MODE_ANALYTIC and self.rule is None:
            raise ValueError("analytic disturbance mode requires a rule")


@dataclass(frozen=True)
class LearnConfig:
    time_grid: TimeGrid
    samples_per_step: int
    train: nn.TrainConfig
    seed: int
    disturbance_mode: DisturbanceMode = DisturbanceMode()
    convergence_tolerance: float = 0.01
    convergence_window: int = 3
    stop_on_convergence: bool = False
    substeps: int = 1
    probe_count: int = 2000

    def __post_init__(self):
        if self.samples_per_step < 1:
            raise ValueError("samples_per_step must be >= 1")
        if not 0.0 < self.convergence_tolerance <= 1.0:
            raise ValueError("convergence_tolerance must lie in (0, 1]")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")


@dataclass
class StepMetrics:
    k: int
    wall_s: float
    agreement: float                      # nan for k = 0
    control_errors: List[tuple]           # (initial, final) per control classifier
    disturbance_errors: List[tuple] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"k": self.k, "wall_s": self.wall_s, "agreement": self.agreement,
                "control_errors": [list(e) for e in self.control_errors],
                "disturbance_errors": [list(e) for e in self.disturbance_errors]}

    @classmethod
    def from_dict(cls, d: dict) -> "StepMetrics":
        return cls(k=int(d["k"]), wall_s=float(d["wall_s"]),
                   agreement=float(d["agreement"]),
                   control_errors=[tuple(e) for e in d["control_errors"]],
                   disturbance_errors=[tuple(e) for e in d["disturbance_errors"]])


def _source_for(mode: DisturbanceMode, model: ControlAffineModel) -> str:
    if model.n_d == 0:
        return SOURCE_NONE
    return {MODE_LEARN: SOURCE_LEARNED, MODE_ANALYTIC: SOURCE_ANALYTIC,
            MODE_NONE: SOURCE_NONE}[mode.kind]


def new_stack(model: ControlAffineModel, cost: CostSpec, cfg: LearnConfig) -> PolicyStack:
    mode = cfg.disturbance_mode
    return PolicyStack(
        model_name=model.name, model_params=dict(model.params), cost=cost.to_dict(),
        dt=cfg.time_grid.dt, u_bounds=model.u_bounds, d_bounds=model.d_bounds,
        disturbance_source=_source_for(mode, model),
        analytic_rule=mode.rule if mode.kind == MODE_ANALYTIC else None)


def _first_step_disturbance(model: ControlAffineModel, mode: DisturbanceMode,
                            states: Array) -> Array:
    if model.n_d == 0:
        return np.zeros((states.shape[0], 0))
    if mode.kind == MODE_ANALYTIC:
        # the fixed rule is part of the effective dynamics, labeled against too
        return np.asarray(mode.rule(states), dtype=float)
    return np.broadcast_to(model.d_bounds.lo, (states.shape[0], model.n_d))


def label_batch(model: ControlAffineModel, cost: CostSpec, stack: PolicyStack,
                k: int, states: Array, mode: DisturbanceMode,
                substeps: int = 1):
    """Per-dimension corner labels for a batch of sampled states at step k.

    Returns (u_labels (N, n_u) uint8, d_labels (N, n_dl) uint8) where n_dl is
    the number of learned disturbance dimensions (0 unless mode is 'learn').
    """
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    dt = stack.dt
    n_dl = model.n_d if mode.kind == MODE_LEARN else 0

    d_first = _first_step_disturbance(model, mode, states)
    variants = [rk4_step(model, states, model.u_bounds.lo, d_first, dt, substeps)]
    for i in range(model.n_u):
        u = model.u_bounds.lo.copy()
        u[i] = model.u_bounds.hi[i]
        variants.append(rk4_step(model, states, u, d_first, dt, substeps))
    for j in range(n_dl):
        d = np.broadcast_to(model.d_bounds.lo, (n, model.n_d)).copy()
        d[:, j] = model.d_bounds.hi[j]
        variants.append(rk4_step(model, states, model.u_bounds.lo, d, dt, substeps))

    costs = rollout_costs(model, stack, np.concatenate(variants, axis=0), k, cost,
                          substeps).reshape(len(variants), n)
    base = costs[0]
    u_labels = np.zeros((n, model.n_u), dtype=np.uint8)
    for i in range(model.n_u):
        u_labels[:, i] = costs[1 + i] < base
    d_labels = np.zeros((n, n_dl), dtype=np.uint8)
    for j in range(n_dl):
        d_labels[:, j] = costs[1 + model.n_u + j] > base
    return u_labels, d_labels


def label_state(model: ControlAffineModel, cost: CostSpec, stack: PolicyStack,
                k: int, s, mode: Optional[DisturbanceMode] = None,
                substeps: int = 1):
    """Single-state corner labels (bit vectors over control and disturbance dims)."""
    if k > stack.depth and not stack.converged:
        raise ValueError(f"step {k} requires a stack of depth >= {k} (have {stack.depth})")
    if mode is None:
        if stack.disturbance_source == SOURCE_LEARNED:
            mode = DisturbanceMode(MODE_LEARN)
        elif stack.disturbance_source == SOURCE_ANALYTIC:
            mode = DisturbanceMode(MODE_ANALYTIC, stack.analytic_rule)
        else:
            mode = DisturbanceMode(MODE_NONE)
    s = np.asarray(s, dtype=float)
    u_labels, d_labels = label_batch(model, cost, stack, k, s[None, :], mode, substeps)
    return u_labels[0], d_labels[0]


def _probe_decisions(layer: PolicyLayer, probes: Array) -> Array:
    cols = [nn.decisions(clf, probes) for clf in layer.control + layer.disturbance]
    return np.stack(cols, axis=0) if cols else np.zeros((0, probes.shape[0]), dtype=bool)


def _layer_agreement(prev: Array, new: Array) -> float:
    if prev.shape[0] == 0:
        return 1.0
    return float(np.min(np.mean(prev == new, axis=1)))


def _checkpoint_path(out_dir: str, k: int) -> str:
    return os.path.join(out_dir, "checkpoints", f"layer_{k:05d}.json")


def _write_checkpoint(out_dir: str, k: int, layer: PolicyLayer, metrics: StepMetrics) -> None:
    path = _checkpoint_path(out_dir, k)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    doc = {"format_version": 1, "k": k,
           "control": [c.to_dict() for c in layer.control],
           "disturbance": [c.to_dict() for c in layer.disturbance],
           "metrics": metrics.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def _load_checkpoints(out_dir: str):
    """Contiguous checkpoints starting at layer 0, with their metrics rows."""
    layers, metrics = [], []
    k = 0
    while os.path.exists(_checkpoint_path(out_dir, k)):
        with open(_checkpoint_path(out_dir, k)) as fh:
            doc = json.load(fh)
        if doc.get("k") != k:
            raise PolicyFormatError(f"checkpoint {k} has mismatched index {doc.get('k')}")
        layers.append(PolicyLayer(
            [nn.MlpClassifier.from_dict(c) for c in doc["control"]],
            [nn.MlpClassifier.from_dict(c) for c in doc["disturbance"]]))
        metrics.append(StepMetrics.from_dict(doc["metrics"]))
        k += 1
    return layers, metrics


def learn(model: ControlAffineModel, cost: CostSpec, cfg: LearnConfig,
          out_dir: Optional[str] = None, resume: bool = False,
          progress=None):
    """Run the full learning loop; returns (PolicyStack, [StepMetrics]).

    With ``out_dir`` set, each finished layer is checkpointed so interrupted
    runs can ``resume`` bit-identically (per-step randomness is keyed on the
    step index, not on history).
    """
    mode = cfg.disturbance_mode
    n_dl = model.n_d if mode.kind == MODE_LEARN else 0
    k_total = cfg.time_grid.num_steps
    normalizer = (model.state_box.lo, model.state_box.hi)
    probes = model.state_box.sample_uniform(
        _substream(cfg.seed, _STREAM_PROBE), cfg.probe_count)

    stack = new_stack(model, cost, cfg)
    metrics: List[StepMetrics] = []
    streak = 0
    prev_decisions = None

    if resume and out_dir:
        layers, metrics = _load_checkpoints(out_dir)
        stack.layers.extend(layers)
        for layer in layers:  # rebuild agreement streak and probe state
            decisions = _probe_decisions(layer, probes)
            if prev_decisions is not None:
                agreement = _layer_agreement(prev_decisions, decisions)
                streak = streak + 1 if agreement >= 1.0 - cfg.convergence_tolerance else 0
                if streak >= cfg.convergence_window:
                    stack.converged = True
            prev_decisions = decisions

    start_k = stack.depth
    if stack.converged and cfg.stop_on_convergence:
        start_k = k_total

    for k in range(start_k, k_total):
        t0 = time.perf_counter()
        sample_rng = _substream(cfg.seed, _STREAM_SAMPLE, k)
        states = model.state_box.sample_uniform(sample_rng, cfg.samples_per_step)
        u_labels, d_labels = label_batch(model, cost, stack, k, states, mode,
                                         cfg.substeps)

        control, u_errors = [], []
        for i in range(model.n_u):
            if k == 0:
                init = nn.init_mlp(model.n, _substream_seed(cfg.seed, _STREAM_INIT,
                                                            _PLAYER_CONTROL, i),
                                   normalizer=normalizer)
            else:
                init = stack.layers[k - 1].control[i]
            tcfg = replace(cfg.train, seed=_substream_seed(cfg.seed, _STREAM_TRAIN, k,
                                                           _PLAYER_CONTROL, i))
            clf, m = nn.train(init, nn.SampleBatch(states, u_labels[:, i]), tcfg)
            control.append(clf)
            u_errors.append((m.initial_error, m.final_error))

        disturbance, d_errors = [], []
        for j in range(n_dl):
            if k == 0:
                init = nn.init_mlp(model.n, _substream_seed(cfg.seed, _STREAM_INIT,
                                                            _PLAYER_DISTURBANCE, j),
                                   normalizer=normalizer)
            else:
                init = stack.layers[k - 1].disturbance[j]
            tcfg = replace(cfg.train, seed=_substream_seed(cfg.seed, _STREAM_TRAIN, k,
                                                           _PLAYER_DISTURBANCE, j))
            clf, m = nn.train(init, nn.SampleBatch(states, d_labels[:, j]), tcfg)
            disturbance.append(clf)
            d_errors.append((m.initial_error, m.final_error))

        layer = PolicyLayer(control, disturbance)
        stack.layers.append(layer)

        decisions = _probe_decisions(layer, probes)
        if prev_decisions is None:
            agreement = float("nan")
        else:
            agreement = _layer_agreement(prev_decisions, decisions)
            streak = streak + 1 if agreement >= 1.0 - cfg.convergence_tolerance else 0
            if streak >= cfg.convergence_window:
                stack.converged = True
        prev_decisions = decisions

        row = StepMetrics(k=k, wall_s=time.perf_counter() - t0, agreement=agreement,
                          control_errors=u_errors, disturbance_errors=d_errors)
        metrics.append(row)
        if out_dir:
            _write_checkpoint(out_dir, k, layer, row)
        if progress is not None:
            progress(row)
        if stack.converged and cfg.stop_on_convergence:
            break

    return stack, metrics


def write_metrics_csv(path, metrics: List[StepMetrics], n_u: int, n_dl: int) -> None:
    """One line per learning step: k, wall time, agreement, per-classifier errors."""
    header = ["k", "wall_s", "agreement"]
    for i in range(n_u):
        header += [f"u{i}_initial_error", f"u{i}_final_error"]
    for j in range(n_dl):
        header += [f"d{j}_initial_error", f"d{j}_final_error"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in metrics:
            cells = [row.k, repr(row.wall_s), repr(row.agreement)]
            for init, final in row.control_errors:
                cells += [repr(float(init)), repr(float(final))]
            for init, final in row.disturbance_errors:
                cells += [repr(float(init)), repr(float(final))]
            writer.writerow(cells)
