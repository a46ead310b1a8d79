import numpy as np
import pytest

from reachcls.dynamics import (ControlAffineModel, IntervalBounds, build_model,
                               make_fastrack2d_x, make_point2d, make_quad6d_relative,
                               make_quad7d_relative, make_unicycle4d)
from reachcls.errors import ConfigError


def all_models():
    return [
        make_point2d(IntervalBounds.symmetric([1.0, 1.0])),
        make_unicycle4d(),
        make_quad6d_relative(),
        make_quad7d_relative(),
        make_fastrack2d_x(),
    ]


class TestIntervalBounds:
    def test_validation(self):
        with pytest.raises(ValueError):
            IntervalBounds([0.0, 0.0], [1.0])
        with pytest.raises(ValueError):
            IntervalBounds([1.0], [0.0])
        with pytest.raises(ValueError):
            IntervalBounds([np.nan], [1.0])

    def test_corner(self):
        b = IntervalBounds([-1.0, 0.0], [1.0, 2.0])
        assert np.array_equal(b.corner([1, 0]), [1.0, 0.0])
        assert np.array_equal(b.corner([0, 1]), [-1.0, 2.0])

    def test_contains(self):
        b = IntervalBounds.symmetric([1.0])
        assert b.contains([1.0])
        assert not b.contains([1.1])


class TestPoint2d:
    def test_rhs_example(self):
        m = make_point2d(IntervalBounds.symmetric([1.0, 1.0]))
        assert np.allclose(m.eval_rhs(np.zeros(2), [1.0, -1.0]), [1.0, -1.0])

    def test_half_bounds(self):
        m = make_point2d(IntervalBounds.symmetric([0.5, 0.5]))
        assert np.allclose(m.eval_rhs(np.zeros(2), [0.5, 0.5]), [0.5, 0.5])

    def test_drift_is_zero_everywhere(self):
        m = make_point2d(IntervalBounds.symmetric([1.0, 1.0]))
        rng = np.random.default_rng(0)
        for s in rng.uniform(-3, 3, size=(20, 2)):
            assert np.array_equal(m.eval_rhs(s, [0.3, -0.2]),
                                  m.eval_rhs(np.zeros(2), [0.3, -0.2]))

    def test_wrong_bound_length(self):
        with pytest.raises(ConfigError):
            make_point2d(IntervalBounds.symmetric([1.0]))

    def test_state_box_default(self):
        m = make_point2d(IntervalBounds.symmetric([1.0, 1.0]))
        assert np.array_equal(m.state_box.lo, [-3.0, -3.0])
        assert np.array_equal(m.state_box.hi, [3.0, 3.0])


class TestUnicycle4d:
    def test_heading_north(self):
        m = make_unicycle4d()
        ds = m.eval_rhs(np.array([0.0, 0.0, np.pi / 2, 1.0]), np.zeros(2))
        assert np.allclose(ds, [0.0, 1.0, 0.0, 0.0], atol=1e-12)

    def test_unit_inputs(self):
        m = make_unicycle4d()
        ds = m.eval_rhs(np.array([0.0, 0.0, 0.0, 1.0]), np.array([1.0, 1.0]))
        assert np.allclose(ds, [1.0, 0.0, 1.0, 1.0])

    def test_accel_bounds(self):
        m = make_unicycle4d()
        s = np.zeros(4)
        m.eval_rhs(s, np.array([1.0, 0.0]))  # accepted
        with pytest.raises(ValueError):
            m.eval_rhs(s, np.array([-0.1, 0.0]))  # braking not allowed

    def test_zero_speed(self):
        m = make_unicycle4d()
        ds = m.eval_rhs(np.array([1.0, 1.0, 0.0, 0.0]), np.array([0.0, 1.0]))
        assert ds[0] == 0.0 and ds[1] == 0.0


class TestQuadModels:
    def test_quad6d_pitch(self):
        m = make_quad6d_relative()
        ds = m.eval_rhs(np.zeros(6), np.array([0.1, 0.0, 9.81]), np.zeros(6))
        assert np.isclose(ds[3], 0.981)

    def test_quad6d_hover(self):
        m = make_quad6d_relative()
        ds = m.eval_rhs(np.zeros(6), np.array([0.0, 0.0, 9.81]), np.zeros(6))
        assert np.allclose(ds[3:], 0.0)

    def test_quad6d_relative_velocity_row(self):
        m = make_quad6d_relative()
        s = np.zeros(6)
        s[3] = 1.0  # v_x
        d = np.zeros(6)
        d[0] = 0.25  # wind x
        d[3] = 0.25  # planner x
        ds = m.eval_rhs(s, np.array([0.0, 0.0, 9.81]), d)
        assert np.isclose(ds[0], 0.5)

    def test_quad7d_zero_yaw_matches_6d(self):
        m6 = make_quad6d_relative()
        m7 = make_quad7d_relative()
        rng = np.random.default_rng(1)
        for _ in range(10):
            s6 = rng.uniform(-1, 1, 6)
            u6 = rng.uniform(m6.u_bounds.lo, m6.u_bounds.hi)
            d = rng.uniform(m6.d_bounds.lo, m6.d_bounds.hi)
            s7 = np.concatenate([s6, [0.0]])
            u7 = np.concatenate([u6, [0.0]])
            assert np.allclose(m7.eval_rhs(s7, u7, d)[:6], m6.eval_rhs(s6, u6, d))

    def test_quad7d_rotated_yaw(self):
        m = make_quad7d_relative()
        s = np.zeros(7)
        s[6] = np.pi / 2
        ds = m.eval_rhs(s, np.array([0.1, 0.0, 9.81, 0.0]), np.zeros(6))
        assert np.isclose(ds[3], 0.0, atol=1e-12)
        assert np.isclose(ds[4], 0.981)

    def test_quad7d_yaw_rate_passthrough(self):
        m = make_quad7d_relative()
        rng = np.random.default_rng(2)
        for _ in range(5):
            s = rng.uniform(-1, 1, 7)
            ds = m.eval_rhs(s, np.array([0.0, 0.0, 9.81, 0.7]), np.zeros(6))
            assert np.isclose(ds[6], 0.7)


class TestFastrack2d:
    def test_rows(self):
        m = make_fastrack2d_x()
        ds = m.eval_rhs(np.array([0.0, 1.0]), np.array([0.1]), np.array([0.25, 0.25]))
        assert np.isclose(ds[0], 0.5)
        assert np.isclose(ds[1], 0.981)


class TestAffineStructure:
    @pytest.mark.parametrize("model", all_models(), ids=lambda m: m.name)
    def test_affine_combination(self, model):
        rng = np.random.default_rng(3)
        for _ in range(5):
            s = rng.uniform(model.state_box.lo, model.state_box.hi)[None, :]
            u1 = rng.uniform(model.u_bounds.lo, model.u_bounds.hi)
            u2 = rng.uniform(model.u_bounds.lo, model.u_bounds.hi)
            d = (rng.uniform(model.d_bounds.lo, model.d_bounds.hi)
                 if model.n_d else np.zeros(0))
            a = rng.uniform()
            mix = model.rhs(s, a * u1 + (1 - a) * u2, d)
            parts = a * model.rhs(s, u1, d) + (1 - a) * model.rhs(s, u2, d)
            assert np.allclose(mix, parts, atol=1e-12)
            if model.n_d:
                d2 = rng.uniform(model.d_bounds.lo, model.d_bounds.hi)
                mix = model.rhs(s, u1, a * d + (1 - a) * d2)
                parts = a * model.rhs(s, u1, d) + (1 - a) * model.rhs(s, u1, d2)
                assert np.allclose(mix, parts, atol=1e-12)

    @pytest.mark.parametrize("model", all_models(), ids=lambda m: m.name)
    def test_columns_match_differencing(self, model):
        rng = np.random.default_rng(4)
        s = rng.uniform(model.state_box.lo, model.state_box.hi, (8, model.n))
        base = model.rhs(s, np.zeros(model.n_u), np.zeros(model.n_d))
        cols = model.control_columns(s)
        for i in range(model.n_u):
            e = np.zeros(model.n_u)
            e[i] = 1.0
            diff = model.rhs(s, e, np.zeros(model.n_d)) - base
            assert np.allclose(diff, cols[:, :, i], atol=1e-9)
        dcols = model.disturbance_columns(s)
        for j in range(model.n_d):
            e = np.zeros(model.n_d)
            e[j] = 1.0
            diff = model.rhs(s, np.zeros(model.n_u), e) - base
            assert np.allclose(diff, dcols[:, :, j], atol=1e-9)

    @pytest.mark.parametrize("model", all_models(), ids=lambda m: m.name)
    def test_rejects_out_of_bounds(self, model):
        s = np.zeros(model.n)
        too_big = model.u_bounds.hi + 0.5
        with pytest.raises(ValueError):
            model.eval_rhs(s, too_big, np.zeros(model.n_d) if model.n_d else None)
        if model.n_d:
            with pytest.raises(ValueError):
                model.eval_rhs(s, model.u_bounds.lo, model.d_bounds.hi + 0.5)


class TestRegistry:
    def test_build_by_name(self):
        m = build_model("point2d", {"u_bounds": {"lo": [-1, -1], "hi": [1, 1]}})
        assert m.name == "point2d"
        assert build_model("unicycle4d").n == 4
        assert build_model("quad6d_rel", {"gravity": 9.8}).params["gravity"] == 9.8
        assert build_model("quad7d_rel").n == 7
        assert build_model("fastrack2d_x").n_d == 2

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            build_model("rocket42")

    def test_point2d_requires_bounds(self):
        with pytest.raises(ConfigError):
            build_model("point2d")

    def test_bad_param(self):
        with pytest.raises(ConfigError):
            build_model("unicycle4d", {"warp_factor": 9})
