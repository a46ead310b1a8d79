"""Command-line entry point: train | oracle | eval | rollout | validate-config.

Every command is reproducible from (config file, seed); a manifest with the
config hash and wall time makes runs auditable. Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 I/O failure. The REACHCLS_LOG
environment variable sets the log level (debug/info/warning/error).
"""
from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import bench, evalset, learner, oracle, policy
from .config import (build_learn_config, load_config, load_policy)
from .cost import CostSpec
from .dynamics import build_model
from .errors import ConfigError, NumericalBlowupError

log = logging.getLogger("reachcls")


def _setup_logging() -> None:
    level = os.environ.get("REACHCLS_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_manifest(out_dir, command, cfg_path, seed, wall_s, outputs, extra=None) -> None:
    doc = {
        "command": command,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config_path": os.fspath(cfg_path) if cfg_path else None,
        "config_hash": _file_hash(cfg_path) if cfg_path else None,
        "seed": seed,
        "wall_time_s": wall_s,
        "outputs": outputs,
    }
    if extra:
        doc.update(extra)
    with open(os.path.join(out_dir, f"manifest_{command}.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _out_dir(args, cfg=None) -> str:
    out = args.out or (cfg.output_dir if cfg else None)
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir in the config")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    model = cfg.build_model()
    lcfg = build_learn_config(cfg, model, out)

    def progress(row):
        errs = ", ".join(f"u{i}={a:.3f}->{b:.3f}" for i, (a, b) in enumerate(row.control_errors))
        log.info("step %d done in %.1fs agreement=%.4f %s",
                 row.k, row.wall_s, row.agreement, errs)

    stack, metrics = learner.learn(model, cfg.cost, lcfg, out_dir=out,
                                   resume=args.resume, progress=progress)
    policy_path = os.path.join(out, "policy.json")
    policy.save(stack, policy_path)
    metrics_path = os.path.join(out, "metrics.csv")
    n_dl = model.n_d if lcfg.disturbance_mode.kind == learner.MODE_LEARN else 0
    learner.write_metrics_csv(metrics_path, metrics, model.n_u, n_dl)
    _write_manifest(out, "train", args.config, cfg.seed, time.perf_counter() - t0,
                    {"policy": policy_path, "metrics": metrics_path},
                    {"layers": stack.depth, "converged": stack.converged})
    log.info("wrote %s (%d layers, converged=%s)", policy_path, stack.depth,
             stack.converged)
    return 0


def cmd_oracle(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    if cfg.oracle_grid is None:
        raise ConfigError("config has no oracle_grid section")
    out = _out_dir(args, cfg)
    model = cfg.build_model()
    vg = oracle.grid_solve(model, cfg.cost, cfg.oracle_grid, cfg.time_grid,
                           substeps=cfg.substeps)
    json_path = os.path.join(out, "oracle_grid.json")
    csv_path = os.path.join(out, "oracle_grid.csv")
    oracle.save_value_grid(vg, json_path)
    oracle.export_value_grid_csv(vg, csv_path)
    _write_manifest(out, "oracle", args.config, cfg.seed, time.perf_counter() - t0,
                    {"grid_json": json_path, "grid_csv": csv_path},
                    {"steps_run": vg.steps_run, "converged": vg.converged})
    log.info("wrote %s (%d sweeps, converged=%s)", json_path, vg.steps_run, vg.converged)
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    if cfg.eval_grid is None:
        raise ConfigError("config has no eval_grid section")
    out = _out_dir(args, cfg)
    model = cfg.build_model()
    stack = load_policy(args.policy, model)
    if stack.model_name != cfg.model_name:
        raise ConfigError(f"policy was trained for model {stack.model_name!r} but the "
                          f"config names {cfg.model_name!r}")
    opts = cfg.eval_options
    report = evalset.extract_set(model, stack, cfg.eval_grid, cfg.cost,
                                 k_start=opts.get("k_start"),
                                 include_decisions=bool(opts.get("include_decisions", False)),
                                 threads=args.threads, substeps=cfg.substeps)
    if args.oracle:
        vg = oracle.load_value_grid(args.oracle)
        report = evalset.compare_sets(report, vg, float(opts.get("epsilon", 0.05)))
    csv_path = os.path.join(out, "set_report.csv")
    json_path = os.path.join(out, "set_report.json")
    evalset.export(report, csv_path, "csv")
    evalset.export(report, json_path, "json")
    summary = report.summary()
    _write_manifest(out, "eval", args.config, cfg.seed, time.perf_counter() - t0,
                    {"report_csv": csv_path, "report_json": json_path},
                    {"summary": summary})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_rollout(args) -> int:
    stack = load_policy(args.policy)
    model = build_model(stack.model_name, stack.model_params)
    if not stack.cost:
        raise ConfigError("policy file carries no cost specification")
    cost = CostSpec.from_dict(stack.cost)
    try:
        state = np.array([float(v) for v in args.state.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse --state {args.state!r} as comma-separated floats")
    if state.shape != (model.n,):
        raise ConfigError(f"state has {state.shape[0]} components, model "
                          f"{model.name!r} needs {model.n}")
    k = args.k
    if k > stack.depth and not stack.converged:
        raise ConfigError(f"k={k} exceeds the stack depth {stack.depth}")

    from .sim import rollout_trajectory
    traj, controls, disturbances = rollout_trajectory(model, stack, state, k)
    l_vals = cost.target.values(traj.states)
    g_vals = (cost.constraint.values(traj.states) if cost.constraint is not None
              else np.full(traj.states.shape[0], np.nan))

    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "rollout.csv")
    header = (["t"] + [f"x{d}" for d in range(model.n)]
              + [f"u{i}" for i in range(model.n_u)]
              + [f"d{j}" for j in range(model.n_d)] + ["l", "g"])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in range(traj.states.shape[0]):
            cells = [repr(float(traj.times[row]))]
            cells += [repr(float(x)) for x in traj.states[row]]
            if row < k:  # inputs applied on the step starting at this time
                cells += [repr(float(x)) for x in controls[row]]
                cells += [repr(float(x)) for x in disturbances[row]]
            else:
                cells += ["nan"] * (model.n_u + model.n_d)
            cells += [repr(float(l_vals[row])), repr(float(g_vals[row]))]
            fh.write(",".join(cells) + "\n")
    log.info("wrote %s (%d rows)", path, traj.states.shape[0])
    return 0


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: {cfg.name} (model={cfg.model_name}, hash={cfg.config_hash()[:12]})")
    return 0


def cmd_write_benches(args) -> int:
    paths = bench.write_bench_configs(args.out or "configs")
    for p in paths:
        print(p)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reachcls",
        description="Classification-based approximate reachability for "
                    "control-affine systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        if flags.get("config"):
            p.add_argument("--config", required=True, help="experiment config JSON")
        if flags.get("policy"):
            p.add_argument("--policy", required=True, help="policy file path")
        if flags.get("oracle"):
            p.add_argument("--oracle", default=None, help="value-grid JSON path")
        if flags.get("out"):
            p.add_argument("--out", default=None, help="output directory")
        if flags.get("threads"):
            p.add_argument("--threads", type=int, default=None,
                           help="worker-thread cap (results are thread-count independent)")
        if flags.get("resume"):
            p.add_argument("--resume", action="store_true",
                           help="resume from layer checkpoints in the output directory")
        p.set_defaults(fn=fn)
        return p

    add("train", cmd_train, config=True, out=True, threads=True, resume=True)
    add("oracle", cmd_oracle, config=True, out=True)
    add("eval", cmd_eval, config=True, policy=True, oracle=True, out=True, threads=True)
    rollout = add("rollout", cmd_rollout, policy=True, out=True)
    rollout.add_argument("--state", required=True,
                         help="comma-separated start state components")
    rollout.add_argument("--k", type=int, required=True,
                         help="number of policy steps to roll (time starts at -k*dt)")
    add("validate-config", cmd_validate_config, config=True)
    add("write-benches", cmd_write_benches, out=True)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalBlowupError as exc:
        log.error("numerical failure: %s", exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        print(f"I/O failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
