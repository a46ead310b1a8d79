"""Time-indexed bang-bang policy stacks and their JSON serialization.

Layer k of a stack is consumed on the simulation step from -(k+1)*dt to -k*dt,
exactly as trained. Each layer holds one binary classifier per control
dimension (and per disturbance dimension when the disturbance is learned);
decision 1 selects the max corner of that dimension's interval.

Policy files are a JSON envelope with numbers written as shortest
round-tripping decimals (at most 17 significant digits), so loading reproduces
every parameter bit-exactly while the file stays inspectable and diff-able.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from . import nn
from .dynamics import IntervalBounds
from .errors import PolicyFormatError

Array = np.ndarray

FORMAT_VERSION = 1

SOURCE_LEARNED = "learned"
SOURCE_ANALYTIC = "analytic"
SOURCE_NONE = "none"

# registered factories: name -> fn(payload, model) -> AnalyticRule
RULE_BUILDERS: dict = {}


@dataclass
class AnalyticRule:
    """Named closed-form disturbance rule, callable on (B, n) state batches."""

    name: str
    fn: Callable[[Array], Array]
    payload: dict = field(default_factory=dict)

    def __call__(self, states: Array) -> Array:
        return self.fn(states)


def resolve_rule(name: str, payload: dict, model) -> AnalyticRule:
    if name not in RULE_BUILDERS:
        raise PolicyFormatError(f"unknown analytic disturbance rule {name!r}")
    return RULE_BUILDERS[name](payload, model)


@dataclass
class PolicyLayer:
    control: List[nn.MlpClassifier]
    disturbance: List[nn.MlpClassifier] = field(default_factory=list)


@dataclass
class PolicyStack:
    """Policies for steps -depth*dt .. 0 plus the metadata needed to replay them."""

    model_name: str
    model_params: dict
    cost: dict                      # CostSpec.to_dict() form
    dt: float
    u_bounds: IntervalBounds
    d_bounds: IntervalBounds
    layers: List[PolicyLayer] = field(default_factory=list)
    converged: bool = False
    disturbance_source: str = SOURCE_NONE
    analytic_rule: Optional[AnalyticRule] = None

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def n_u(self) -> int:
        return self.u_bounds.size

    @property
    def n_d(self) -> int:
        return self.d_bounds.size

    def _layer(self, k: int) -> PolicyLayer:
        if k < 0:
            raise ValueError(f"layer index {k} is negative")
        if k >= self.depth:
            if self.converged and self.depth:
                return self.layers[-1]  # converged reuse of the deepest layer
            raise ValueError(f"layer {k} out of range for stack of depth {self.depth}")
        return self.layers[k]

    def control_vectors(self, k: int, states: Array) -> Array:
        """Bang-bang controls for the step starting at -(k+1)*dt, batched."""
        layer = self._layer(k)
        out = np.empty((states.shape[0], self.n_u))
        for i, clf in enumerate(layer.control):
            bits = nn.decisions(clf, states)
            out[:, i] = np.where(bits, self.u_bounds.hi[i], self.u_bounds.lo[i])
        return out

    def disturbance_vectors(self, k: int, states: Array) -> Array:
        if self.n_d == 0:
            return np.zeros((states.shape[0], 0))
        if self.disturbance_source == SOURCE_ANALYTIC:
            return np.asarray(self.analytic_rule(states), dtype=float)
        if self.disturbance_source == SOURCE_NONE:
            return np.broadcast_to(self.d_bounds.lo, (states.shape[0], self.n_d))
        layer = self._layer(k)
        out = np.empty((states.shape[0], self.n_d))
        for j, clf in enumerate(layer.disturbance):
            bits = nn.decisions(clf, states)
            out[:, j] = np.where(bits, self.d_bounds.hi[j], self.d_bounds.lo[j])
        return out


def eval_control(stack: PolicyStack, k: int, s) -> Array:
    """Single-state bang-bang control at layer k."""
    s = np.asarray(s, dtype=float)
    return stack.control_vectors(k, s[None, :])[0]


def eval_disturbance(stack: PolicyStack, k: int, s) -> Array:
    s = np.asarray(s, dtype=float)
    return stack.disturbance_vectors(k, s[None, :])[0]


def _validate_layer_counts(stack: PolicyStack) -> None:
    expect_d = stack.n_d if stack.disturbance_source == SOURCE_LEARNED else 0
    for k, layer in enumerate(stack.layers):
        if len(layer.control) != stack.n_u:
            raise PolicyFormatError(
                f"layer {k} holds {len(layer.control)} control classifiers, expected {stack.n_u}")
        if len(layer.disturbance) != expect_d:
            raise PolicyFormatError(
                f"layer {k} holds {len(layer.disturbance)} disturbance classifiers, "
                f"expected {expect_d}")


def save(stack: PolicyStack, path, truncate_to_converged: bool = False) -> None:
    """Write the stack as JSON; see module docstring for number fidelity."""
    _validate_layer_counts(stack)
    layers = stack.layers
    converged = stack.converged
    full_depth = stack.depth
    if truncate_to_converged:
        if not stack.converged:
            raise ValueError("cannot truncate a stack that has not converged")
        layers = stack.layers[-1:]
        converged = True
    doc = {
        "format_version": FORMAT_VERSION,
        "model_name": stack.model_name,
        "model_params": stack.model_params,
        "cost": stack.cost,
        "time_grid": {"dt": stack.dt, "num_steps": full_depth},
        "u_bounds": stack.u_bounds.to_dict(),
        "d_bounds": stack.d_bounds.to_dict(),
        "converged": converged,
        "disturbance_source": stack.disturbance_source,
        "analytic_rule": (
            {"name": stack.analytic_rule.name, "payload": stack.analytic_rule.payload}
            if stack.disturbance_source == SOURCE_ANALYTIC else None),
        "layers": [
            {"k": k,
             "control": [clf.to_dict() for clf in layer.control],
             "disturbance": [clf.to_dict() for clf in layer.disturbance]}
            for k, layer in enumerate(layers)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def _clf_from_dict(d: dict, where: str) -> nn.MlpClassifier:
    try:
        return nn.MlpClassifier.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyFormatError(f"{where}: {exc}") from None


def load(path, model=None) -> PolicyStack:
    """Load and validate a stack; ``model`` is needed to rebuild analytic rules.

    When ``model`` is omitted the caller gets a stack whose analytic rule (if
    any) is unresolved; ``reachcls.config.load_policy`` resolves it.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PolicyFormatError(f"policy file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise PolicyFormatError("policy file must hold a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise PolicyFormatError(f"unsupported policy format_version {version!r}, "
                                f"expected {FORMAT_VERSION}")
    for key in ("model_name", "time_grid", "u_bounds", "d_bounds", "layers",
                "disturbance_source"):
        if key not in doc:
            raise PolicyFormatError(f"policy file is missing field {key!r}")
    source = doc["disturbance_source"]
    if source not in (SOURCE_LEARNED, SOURCE_ANALYTIC, SOURCE_NONE):
        raise PolicyFormatError(f"unknown disturbance_source {source!r}")

    layers = []
    for entry in doc["layers"]:
        control = [_clf_from_dict(c, f"layer {entry.get('k')}") for c in entry["control"]]
        disturbance = [_clf_from_dict(c, f"layer {entry.get('k')}")
                       for c in entry.get("disturbance", [])]
        layers.append(PolicyLayer(control, disturbance))

    stack = PolicyStack(
        model_name=doc["model_name"],
        model_params=doc.get("model_params", {}),
        cost=doc.get("cost", {}),
        dt=float(doc["time_grid"]["dt"]),
        u_bounds=IntervalBounds.from_dict(doc["u_bounds"]),
        d_bounds=IntervalBounds.from_dict(doc["d_bounds"]),
        layers=layers,
        converged=bool(doc["converged"]),
        disturbance_source=source,
    )
    _validate_layer_counts(stack)
    if source == SOURCE_ANALYTIC:
        rule = doc.get("analytic_rule") or {}
        if "name" not in rule:
            raise PolicyFormatError("analytic disturbance_source requires an analytic_rule entry")
        if model is not None:
            stack.analytic_rule = resolve_rule(rule["name"], rule.get("payload", {}), model)
        else:
            stack.analytic_rule = AnalyticRule(rule["name"], _unresolved_rule(rule["name"]),
                                               rule.get("payload", {}))
    return stack


def _unresolved_rule(name: str):
    def fail(states):
        raise PolicyFormatError(
            f"analytic rule {name!r} was loaded without a model; resolve it first")
    return fail


def make_constant_classifier(input_dim: int, bit: int, normalizer=None) -> nn.MlpClassifier:
    """Classifier that always outputs the given decision (useful for hand-built stacks)."""
    base = nn.init_mlp(input_dim, seed=0, normalizer=normalizer)
    zeros = {k: np.zeros_like(v) for k, v in
             (("w1", base.w1), ("b1", base.b1), ("w2", base.w2),
              ("b2", base.b2), ("w3", base.w3))}
    b3 = np.array([-1.0, 1.0]) if bit else np.array([1.0, -1.0])
    return replace(base, b3=b3, **zeros)


def make_linear_classifier(input_dim: int, weights, offset: float,
                           normalizer=None, gain: float = 50.0) -> nn.MlpClassifier:
    """Classifier whose decision is 1 iff weights . s + offset >= 0 (state space).

    Builds exact MLP parameters implementing the sign of an affine function of
    the raw (un-normalized) state through a ReLU pair.
    """
    base = nn.init_mlp(input_dim, seed=0, normalizer=normalizer)
    w = np.asarray(weights, dtype=float)
    # account for the input normalizer: x_norm = 2 (s - lo) / span - 1
    span = base.norm_hi - base.norm_lo
    w_norm = w * span / 2.0
    off_norm = offset + w @ (base.norm_lo + span / 2.0)
    w1 = np.zeros_like(base.w1)
    w1[:, 0] = w_norm
    w1[:, 1] = -w_norm
    b1 = np.zeros_like(base.b1)
    b1[0] = off_norm
    b1[1] = -off_norm
    w2 = np.zeros_like(base.w2)
    w2[0, 0] = 1.0
    w2[1, 1] = 1.0
    w3 = np.zeros_like(base.w3)
    w3[0, 1] = gain    # positive side -> max corner logit
    w3[1, 0] = gain    # negative side -> min corner logit
    return replace(base, w1=w1, b1=b1, w2=w2, b2=np.zeros_like(base.b2),
                   w3=w3, b3=np.zeros_like(base.b3))
