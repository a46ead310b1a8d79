import shutil

import numpy as np
import pytest

from reachcls import nn
from reachcls.cost import BoxSurface, CostSpec, HalfspaceSurface
from reachcls.dynamics import (ControlAffineModel, IntervalBounds, make_point2d,
                               make_fastrack2d_x)
from reachcls.learner import (DisturbanceMode, LearnConfig, MODE_ANALYTIC, MODE_LEARN,
                              MODE_NONE, label_batch, label_state, learn, new_stack,
                              write_metrics_csv)
from reachcls.oracle import GridSpec, ValueGrid, grid_disturbance_rule
from reachcls.policy import AnalyticRule
from reachcls.sim import TimeGrid, integrate_step, rollout_cost

POINT = make_point2d(IntervalBounds.symmetric([1.0, 1.0]))
TARGET = BoxSurface((0.0, 0.0), (1.0, 1.0))
SPEC = CostSpec(TARGET)


def quick_cfg(num_steps=2, samples=120, grad_steps=120, seed=3, **kw):
    return LearnConfig(time_grid=TimeGrid(0.1, num_steps), samples_per_step=samples,
                       train=nn.TrainConfig(grad_steps=grad_steps, batch_size=64),
                       seed=seed, **kw)


class TestLabelState:
    def test_hand_computed_point2d(self):
        # from (-2, 0) the min-corner step lands at (-2.1, -0.1) with box
        # distance 1.1; flipping u1 gives 0.9 (label 1), flipping u2 ties at
        # 1.1 so the strict test keeps the min corner (label 0)
        stack = new_stack(POINT, SPEC, quick_cfg())
        u_bits, d_bits = label_state(POINT, SPEC, stack, 0, np.array([-2.0, 0.0]))
        assert list(u_bits) == [1, 0]
        assert d_bits.shape == (0,)

    def test_no_disturbance_label_empty(self):
        stack = new_stack(POINT, SPEC, quick_cfg())
        _, d_bits = label_state(POINT, SPEC, stack, 0, np.zeros(2))
        assert d_bits.shape == (0,)

    def test_requires_deep_enough_stack(self):
        stack = new_stack(POINT, SPEC, quick_cfg())
        with pytest.raises(ValueError):
            label_state(POINT, SPEC, stack, 2, np.zeros(2))


class TestLabelSemantics:
    def test_brute_force_corner_oracle(self):
        # independently recompute every flip cost with the scalar path and
        # check the recorded per-dimension tests, including states inside the
        # target where either corner may win
        cfg = quick_cfg(num_steps=1, samples=40, grad_steps=60, seed=5)
        stack, _ = learn(POINT, SPEC, cfg)
        rng = np.random.default_rng(8)
        states = rng.uniform(-3, 3, (25, 2))
        u_bits, _ = label_batch(POINT, SPEC, stack, 1, states, DisturbanceMode())
        for s, bits in zip(states, u_bits):
            base_state = integrate_step(POINT, s, POINT.u_bounds.lo, dt=0.1)
            base = rollout_cost(POINT, stack, base_state, 1, SPEC)
            for i in range(2):
                u = POINT.u_bounds.lo.copy()
                u[i] = POINT.u_bounds.hi[i]
                flipped = rollout_cost(POINT, stack,
                                       integrate_step(POINT, s, u, dt=0.1), 1, SPEC)
                assert bits[i] == (flipped < base)

    def test_one_step_corner_optimality_linear_cost(self):
        # affine dynamics with a linear terminal cost: the labeled corner must
        # beat an 11-point grid scan along every control dimension
        rng = np.random.default_rng(9)
        for trial in range(10):
            n, n_u = int(rng.integers(2, 5)), int(rng.integers(1, 4))
            a_mat = rng.normal(size=(n, n))
            beta = rng.normal(size=(n, n_u))
            lo = -rng.uniform(0.2, 1.0, n_u)
            hi = rng.uniform(0.2, 1.0, n_u)
            model = ControlAffineModel(
                name="lin", n=n, n_u=n_u, n_d=0,
                drift=lambda s, A=a_mat: s @ A.T,
                control_columns=lambda s, B=beta: np.broadcast_to(
                    B, (s.shape[0],) + B.shape),
                disturbance_columns=lambda s: np.zeros((s.shape[0], n, 0)),
                u_bounds=IntervalBounds(lo, hi),
                d_bounds=IntervalBounds.empty(),
                state_box=IntervalBounds.symmetric(np.ones(n)))
            cost = CostSpec(HalfspaceSurface(tuple(rng.normal(size=n)), 0.0))
            cfg = quick_cfg()
            stack = new_stack(model, cost, cfg)
            s = rng.normal(size=n)
            bits, _ = label_state(model, cost, stack, 0, s)
            u_star = model.u_bounds.corner(bits)
            labeled = rollout_cost(model, stack,
                                   integrate_step(model, s, u_star, dt=0.1), 0, cost)
            grids = np.meshgrid(*[np.linspace(lo[i], hi[i], 11) for i in range(n_u)],
                                indexing="ij")
            candidates = np.stack([g.reshape(-1) for g in grids], axis=-1)
            best = np.inf
            for u in candidates:
                val = rollout_cost(model, stack,
                                   integrate_step(model, s, u, dt=0.1), 0, cost)
                best = min(best, val)
            assert labeled <= best + 1e-9


class TestLearn:
    def test_layer_count_and_classifier_fit(self):
        cfg = quick_cfg(num_steps=1, samples=1000, grad_steps=2000, seed=1)
        stack, metrics = learn(POINT, SPEC, cfg)
        assert stack.depth == 1
        states = POINT.state_box.sample_uniform(
            np.random.default_rng(np.random.SeedSequence([1, 1, 0])), 1000)
        u_bits, _ = label_batch(POINT, SPEC, new_stack(POINT, SPEC, cfg), 0, states,
                                DisturbanceMode())
        for i in range(2):
            got = nn.decisions(stack.layers[0].control[i], states)
            assert np.mean(got == u_bits[:, i].astype(bool)) >= 0.95

    def test_total_classifier_count(self):
        cfg = quick_cfg(num_steps=3, samples=60, grad_steps=40)
        stack, _ = learn(POINT, SPEC, cfg)
        total = sum(len(l.control) + len(l.disturbance) for l in stack.layers)
        assert total == 3 * (POINT.n_u + 0)

    def test_deterministic_bit_exact(self):
        cfg = quick_cfg(num_steps=2, samples=80, grad_steps=60, seed=21)
        a, _ = learn(POINT, SPEC, cfg)
        b, _ = learn(POINT, SPEC, cfg)
        for la, lb in zip(a.layers, b.layers):
            for ca, cb in zip(la.control, lb.control):
                assert all(np.array_equal(x, y) for x, y in zip(ca.params(), cb.params()))

    def test_metrics_rows(self):
        cfg = quick_cfg(num_steps=2, samples=60, grad_steps=30)
        _, metrics = learn(POINT, SPEC, cfg)
        assert [m.k for m in metrics] == [0, 1]
        assert np.isnan(metrics[0].agreement)
        assert 0.0 <= metrics[1].agreement <= 1.0
        assert len(metrics[0].control_errors) == 2

    def test_metrics_csv(self, tmp_path):
        cfg = quick_cfg(num_steps=2, samples=60, grad_steps=30)
        _, metrics = learn(POINT, SPEC, cfg)
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, metrics, 2, 0)
        lines = path.read_text().splitlines()
        assert lines[0] == ("k,wall_s,agreement,u0_initial_error,u0_final_error,"
                            "u1_initial_error,u1_final_error")
        assert len(lines) == 3

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        cfg = quick_cfg(num_steps=4, samples=60, grad_steps=40, seed=6)
        full_dir = tmp_path / "full"
        partial_dir = tmp_path / "partial"
        full, _ = learn(POINT, SPEC, cfg, out_dir=str(full_dir))
        # simulate an interrupted run holding only the first two layers
        (partial_dir / "checkpoints").mkdir(parents=True)
        for k in (0, 1):
            shutil.copy(full_dir / "checkpoints" / f"layer_{k:05d}.json",
                        partial_dir / "checkpoints" / f"layer_{k:05d}.json")
        resumed, metrics = learn(POINT, SPEC, cfg, out_dir=str(partial_dir), resume=True)
        assert resumed.depth == 4 and [m.k for m in metrics] == [0, 1, 2, 3]
        for la, lb in zip(full.layers, resumed.layers):
            for ca, cb in zip(la.control, lb.control):
                assert all(np.array_equal(x, y) for x, y in zip(ca.params(), cb.params()))

    def test_convergence_stop_on_constant_labels(self):
        # l = x with u_min baseline: both flips raise or tie the cost, so every
        # label is 0 at every step; layers agree and the learner stops after
        # the convergence window
        cost = CostSpec(HalfspaceSurface((1.0, 0.0), 0.0))
        cfg = quick_cfg(num_steps=10, samples=200, grad_steps=200, seed=2,
                        stop_on_convergence=True, convergence_window=3)
        stack, metrics = learn(POINT, cost, cfg)
        assert stack.converged
        assert stack.depth == 4  # agreements at k = 1, 2, 3 complete the window

    def test_learned_disturbance_layers(self):
        model = make_fastrack2d_x()
        cost = CostSpec(HalfspaceSurface((1.0, 0.0), 0.0), mode="max_tracking")
        cfg = quick_cfg(num_steps=2, samples=80, grad_steps=40,
                        disturbance_mode=DisturbanceMode(MODE_LEARN))
        stack, metrics = learn(model, cost, cfg)
        assert all(len(l.disturbance) == 2 for l in stack.layers)
        assert stack.disturbance_source == "learned"
        assert len(metrics[0].disturbance_errors) == 2

    def test_analytic_mode_skips_d_labeling(self):
        model = make_fastrack2d_x()
        spec = GridSpec((-2.0, -2.0), (2.0, 2.0), (11, 11))
        vg = ValueGrid(spec=spec, values=np.abs(spec.nodes()[:, 0]),
                       mode="max_tracking", dt=0.1)
        rule = grid_disturbance_rule(vg, model)
        cost = CostSpec(HalfspaceSurface((1.0, 0.0), 0.0), mode="max_tracking")
        cfg = quick_cfg(num_steps=2, samples=60, grad_steps=30,
                        disturbance_mode=DisturbanceMode(MODE_ANALYTIC, rule))
        stack, _ = learn(model, cost, cfg)
        assert all(len(l.disturbance) == 0 for l in stack.layers)
        assert stack.disturbance_source == "analytic"

    def test_warm_start_uses_predecessor(self):
        # with zero gradient steps every layer keeps the k=0 parameters
        cfg = quick_cfg(num_steps=3, samples=50, grad_steps=0)
        stack, metrics = learn(POINT, SPEC, cfg)
        first = stack.layers[0].control[0]
        for layer in stack.layers[1:]:
            assert all(np.array_equal(a, b) for a, b in
                       zip(layer.control[0].params(), first.params()))


class TestLearnConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            quick_cfg(samples=0)
        with pytest.raises(ValueError):
            quick_cfg(convergence_tolerance=0.0)
        with pytest.raises(ValueError):
            DisturbanceMode(MODE_ANALYTIC)
        with pytest.raises(ValueError):
            DisturbanceMode("psychic")
