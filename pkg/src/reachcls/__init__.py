"""Classification-based approximate Hamilton-Jacobi reachability.

Learns time-indexed bang-bang control and disturbance policies for
control/disturbance-affine systems as sequences of binary classifiers,
estimates the induced value function by policy rollout, extracts reach-avoid
sets and tracking error bounds, and checks conservatism against a built-in
grid dynamic-programming oracle.
"""
from .cost import (BoxSurface, BoundsComplementSurface, CostSpec, HalfspaceSurface,
                   IntersectionSurface, SphereSurface, UnionSurface, eval_surface,
                   max_tracking_cost, reach_avoid_cost, surface_from_dict)
from .dynamics import (ControlAffineModel, IntervalBounds, build_model, make_fastrack2d_x,
                       make_point2d, make_quad6d_relative, make_quad7d_relative,
                       make_unicycle4d)
from .errors import ConfigError, NumericalBlowupError, PolicyFormatError
from .evalset import (SetReport, compare_sets, estimate_value, estimate_values, export,
                      extract_set)
from .learner import DisturbanceMode, LearnConfig, label_state, learn
from .nn import MlpClassifier, SampleBatch, TrainConfig, classify, forward, init_mlp, train
from .oracle import (GridSpec, ValueGrid, grid_disturbance_rule, grid_solve, interp,
                     load_value_grid, save_value_grid)
from .policy import (AnalyticRule, PolicyLayer, PolicyStack, eval_control,
                     eval_disturbance, load, save)
from .sim import (TimeGrid, Trajectory, integrate_step, rollout_cost, rollout_costs,
                  rollout_trajectory)

__version__ = "0.1.0"
