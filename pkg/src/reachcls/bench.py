"""Canned experiment configurations for the built-in benchmark studies.

Each builder returns a config document ready for the CLI (or parse_config).
The point2d/unicycle obstacle layout is this project's default; the subset
and over-approximation checks hold for any layout.
"""
from __future__ import annotations

import json
import math
import os

from .errors import ConfigError
from .oracle import GridSpec

_OBSTACLES = [
    {"type": "bounds_complement", "lo": [-2.3, 0.9], "hi": [-0.9, 1.9]},
    {"type": "bounds_complement", "lo": [0.9, -2.0], "hi": [1.9, -0.4]},
]


def _planar_reach_avoid_cost(projection=None) -> dict:
    proj = {"projection": list(projection)} if projection else {}
    members = [{"type": "box", "center": [0.0, 0.0], "half_widths": [3.0, 3.0], **proj}]
    for obs in _OBSTACLES:
        members.append({**obs, **proj})
    return {
        "mode": "reach_avoid",
        "target": {"type": "box", "center": [0.0, 0.0], "half_widths": [1.0, 1.0], **proj},
        "constraint": {"type": "intersection", "members": members},
    }


def bench_point2d(bounds_variant: str = "half") -> dict:
    """2D point reach-avoid study; control bounds +-0.5 (half) or +-1 (full)."""
    if bounds_variant not in ("half", "full"):
        raise ConfigError("bounds_variant must be 'half' or 'full'")
    r = 0.5 if bounds_variant == "half" else 1.0
    grid = {"lo": [-3.0, -3.0], "hi": [3.0, 3.0], "points": [61, 61]}
    return {
        "name": f"point2d_{bounds_variant}",
        "note": "default obstacle layout of this project",
        "seed": 7,
        "model": {"name": "point2d",
                  "params": {"u_bounds": {"lo": [-r, -r], "hi": [r, r]}}},
        "cost": _planar_reach_avoid_cost(),
        "time": {"dt": 0.1, "num_steps": 60},
        "learner": {"samples_per_step": 1000,
                    "train": {"grad_steps": 2000, "batch_size": 512},
                    "disturbance_mode": {"type": "none"}},
        "oracle_grid": grid,
        "eval_grid": grid,
        "eval": {"k_start": 60, "epsilon": 0.05},
        "output_dir": f"runs/point2d_{bounds_variant}",
    }


def bench_unicycle4d(scale: str = "smoke") -> dict:
    """4D unicycle reach-avoid study at smoke (21^4) or paper (41^4) oracle scale."""
    if scale not in ("smoke", "paper"):
        raise ConfigError("scale must be 'smoke' or 'paper'")
    points = 21 if scale == "smoke" else 41
    samples = 20_000 if scale == "smoke" else 200_000
    grid = {"lo": [-3.0, -3.0, -math.pi, 0.0], "hi": [3.0, 3.0, math.pi, 2.0],
            "points": [points] * 4, "periodic": [2]}  # heading wraps
    epsilon = GridSpec.from_dict(grid).cell_diameter()
    return {
        "name": f"unicycle4d_{scale}",
        "note": "default obstacle layout of this project",
        "seed": 7,
        "model": {"name": "unicycle4d", "params": {}},
        "cost": _planar_reach_avoid_cost(projection=[0, 1]),
        "time": {"dt": 0.1, "num_steps": 40},
        "learner": {"samples_per_step": samples,
                    "train": {"grad_steps": 2000, "batch_size": 512},
                    "disturbance_mode": {"type": "none"}},
        "oracle_grid": grid,
        "eval_grid": grid,
        "eval": {"k_start": 40, "epsilon": epsilon},
        "output_dir": f"runs/unicycle4d_{scale}",
    }


def bench_fastrack_x(disturbance: str = "analytic") -> dict:
    """Planar (r_x, v_x) max-tracking study with analytic or jointly learned d.

    The analytic variant wires the grid oracle's worst-case disturbance rule,
    so run the oracle command first (the policy trains against
    oracle_grid.json in the output directory).
    """
    if disturbance not in ("analytic", "learned"):
        raise ConfigError("disturbance must be 'analytic' or 'learned'")
    if disturbance == "analytic":
        mode = {"type": "analytic", "rule": "grid_backup", "grid_path": "oracle_grid.json"}
    else:
        mode = {"type": "learn"}
    grid = {"lo": [-2.0, -2.0], "hi": [2.0, 2.0], "points": [81, 81]}
    return {
        "name": f"fastrack_x_{disturbance}",
        "seed": 7,
        "model": {"name": "fastrack2d_x", "params": {}},
        "cost": {"mode": "max_tracking",
                 "target": {"type": "sphere", "center": [0.0], "radius": 0.0,
                            "projection": [0]}},
        "time": {"dt": 0.1, "num_steps": 100},
        "learner": {"samples_per_step": 1000,
                    "train": {"grad_steps": 2000, "batch_size": 512},
                    "disturbance_mode": mode,
                    "stop_on_convergence": True},
        "oracle_grid": grid,
        "eval_grid": grid,
        "eval": {"k_start": 100, "epsilon": 0.05, "include_decisions": True},
        "output_dir": f"runs/fastrack_x_{disturbance}",
    }


def bench_quad7d(scale: str = "paper") -> dict:
    """Full 7D max-tracking training config; no grid oracle (dimension refused).

    Validation is rollout-based: induced values are self-consistent bounds, and
    random admissible disturbances weaker than worst case stay within them.
    The eval grid is a (r_x, v_x) slice through zero for plotting exports.
    """
    if scale not in ("paper", "smoke"):
        raise ConfigError("scale must be 'paper' or 'smoke'")
    samples = 200_000 if scale == "paper" else 10_000
    steps = 40 if scale == "paper" else 25
    grad_steps = 2000 if scale == "paper" else 1000
    return {
        "name": f"quad7d_{scale}",
        "seed": 7,
        "model": {"name": "quad7d_rel", "params": {}},
        "cost": {"mode": "max_tracking",
                 "target": {"type": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.0,
                            "projection": [0, 1, 2]}},
        "time": {"dt": 0.1, "num_steps": steps},
        "learner": {"samples_per_step": samples,
                    "train": {"grad_steps": grad_steps, "batch_size": 512},
                    "disturbance_mode": {"type": "learn"},
                    "stop_on_convergence": True},
        "eval_grid": {"lo": [-2.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0],
                      "hi": [2.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
                      "points": [21, 1, 1, 21, 1, 1, 1]},
        "eval": {"k_start": steps, "include_decisions": True},
        "output_dir": f"runs/quad7d_{scale}",
    }


ALL_BENCHES = {
    "point2d_half": lambda: bench_point2d("half"),
    "point2d_full": lambda: bench_point2d("full"),
    "unicycle4d_smoke": lambda: bench_unicycle4d("smoke"),
    "unicycle4d_paper": lambda: bench_unicycle4d("paper"),
    "fastrack_x_analytic": lambda: bench_fastrack_x("analytic"),
    "fastrack_x_learned": lambda: bench_fastrack_x("learned"),
    "quad7d_paper": lambda: bench_quad7d("paper"),
    "quad7d_smoke": lambda: bench_quad7d("smoke"),
}


def write_bench_configs(directory) -> list:
    """Regenerate the shipped config files; returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, builder in ALL_BENCHES.items():
        path = os.path.join(directory, f"{name}.json")
        with open(path, "w") as fh:
            json.dump(builder(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(path)
    return paths
