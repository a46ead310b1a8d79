"""Experiment configuration: schema validation and object construction.

A configuration is a single JSON document validated against the schema shipped
at reachcls/config_schema.json before any work starts; semantic checks
(model/grid dimension agreement, surface sanity) run right after. The sha256
of the file's canonical JSON form identifies a run in its manifest.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import jsonschema

from . import learner, nn, oracle, policy
from .cost import CostSpec
from .dynamics import ControlAffineModel, build_model
from .errors import ConfigError
from .sim import TimeGrid

SCHEMA_RESOURCE = "config_schema.json"


def load_schema() -> dict:
    with resources.files(__package__).joinpath(SCHEMA_RESOURCE).open() as fh:
        return json.load(fh)


_SCHEMA = None


def _schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        _SCHEMA = load_schema()
    return _SCHEMA


@dataclass
class ExperimentConfig:
    raw: dict
    path: Optional[str]
    name: str
    seed: int
    model_name: str
    model_params: dict
    cost: CostSpec
    time_grid: TimeGrid
    substeps: int
    learner_raw: dict
    oracle_grid: Optional[oracle.GridSpec]
    eval_grid: Optional[oracle.GridSpec]
    eval_options: dict
    output_dir: Optional[str]

    def build_model(self) -> ControlAffineModel:
        return build_model(self.model_name, self.model_params)

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _validate_schema(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        where = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise ConfigError(f"config error at {where}: {err.message}")


def parse_config(doc: dict, path: Optional[str] = None) -> ExperimentConfig:
    """Validate a config document and build the typed pieces."""
    _validate_schema(doc)
    model_name = doc["model"]["name"]
    model_params = doc["model"].get("params", {})
    cost = CostSpec.from_dict(doc["cost"])
    time_grid = TimeGrid(dt=float(doc["time"]["dt"]),
                         num_steps=int(doc["time"]["num_steps"]))
    substeps = int(doc["time"].get("substeps", 1))

    cfg = ExperimentConfig(
        raw=doc, path=path,
        name=doc.get("name", "experiment"),
        seed=int(doc["seed"]),
        model_name=model_name, model_params=model_params,
        cost=cost, time_grid=time_grid, substeps=substeps,
        learner_raw=doc["learner"],
        oracle_grid=oracle.GridSpec.from_dict(doc["oracle_grid"]) if "oracle_grid" in doc else None,
        eval_grid=oracle.GridSpec.from_dict(doc["eval_grid"]) if "eval_grid" in doc else None,
        eval_options=doc.get("eval", {}),
        output_dir=doc.get("output_dir"),
    )

    model = cfg.build_model()  # raises ConfigError on bad name/params
    for label, grid in (("oracle_grid", cfg.oracle_grid), ("eval_grid", cfg.eval_grid)):
        if grid is not None and grid.ndim != model.n:
            raise ConfigError(f"config error at $.{label}: grid has {grid.ndim} "
                              f"dimensions but model {model_name!r} has {model.n}")
    mode = cfg.learner_raw.get("disturbance_mode", {"type": "none"})
    if mode["type"] == "learn" and model.n_d == 0:
        raise ConfigError("config error at $.learner.disturbance_mode: model "
                          f"{model_name!r} has no disturbance to learn")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return parse_config(doc, path=os.fspath(path))


def _resolve_grid_path(grid_path: str, cfg: ExperimentConfig,
                       out_dir: Optional[str]) -> str:
    if os.path.isabs(grid_path):
        return grid_path
    candidates = []
    if out_dir:
        candidates.append(os.path.join(out_dir, grid_path))
    if cfg.path:
        candidates.append(os.path.join(os.path.dirname(cfg.path), grid_path))
    candidates.append(grid_path)
    for cand in candidates:
        if os.path.exists(cand):
            return cand
    raise ConfigError(f"analytic disturbance grid not found: {grid_path!r} "
                      f"(searched {candidates})")


def build_disturbance_mode(cfg: ExperimentConfig, model: ControlAffineModel,
                           out_dir: Optional[str] = None) -> learner.DisturbanceMode:
    raw = cfg.learner_raw.get("disturbance_mode", {"type": "none"})
    kind = raw["type"]
    if kind == "learn":
        return learner.DisturbanceMode(learner.MODE_LEARN)
    if kind == "none":
        return learner.DisturbanceMode(learner.MODE_NONE)
    rule_name = raw["rule"]
    if rule_name != "grid_backup":
        raise ConfigError(f"unknown analytic disturbance rule {rule_name!r}")
    if "grid_path" not in raw:
        raise ConfigError("analytic disturbance_mode requires grid_path")
    vg = oracle.load_value_grid(_resolve_grid_path(raw["grid_path"], cfg, out_dir))
    return learner.DisturbanceMode(learner.MODE_ANALYTIC,
                                   oracle.grid_disturbance_rule(vg, model))


def build_learn_config(cfg: ExperimentConfig, model: ControlAffineModel,
                       out_dir: Optional[str] = None) -> learner.LearnConfig:
    raw = cfg.learner_raw
    train_raw = raw.get("train", {})
    train = nn.TrainConfig(
        learning_rate=float(train_raw.get("learning_rate", 0.001)),
        decay=float(train_raw.get("decay", 0.95)),
        grad_steps=int(train_raw.get("grad_steps", 2000)),
        batch_size=int(train_raw.get("batch_size", 512)),
        seed=cfg.seed,
    )
    return learner.LearnConfig(
        time_grid=cfg.time_grid,
        samples_per_step=int(raw["samples_per_step"]),
        train=train,
        seed=cfg.seed,
        disturbance_mode=build_disturbance_mode(cfg, model, out_dir),
        convergence_tolerance=float(raw.get("convergence_tolerance", 0.01)),
        convergence_window=int(raw.get("convergence_window", 3)),
        stop_on_convergence=bool(raw.get("stop_on_convergence", False)),
        substeps=cfg.substeps,
        probe_count=int(raw.get("probe_count", 2000)),
    )


def load_policy(path, model: Optional[ControlAffineModel] = None) -> policy.PolicyStack:
    """Load a policy file, rebuilding its model to resolve analytic rules."""
    stack = policy.load(path)
    if stack.disturbance_source == policy.SOURCE_ANALYTIC:
        if model is None:
            model = build_model(stack.model_name, stack.model_params)
        rule_meta = stack.analytic_rule
        stack.analytic_rule = policy.resolve_rule(rule_meta.name, rule_meta.payload, model)
    return stack
