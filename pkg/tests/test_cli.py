import json
import os

import numpy as np
import pytest

from reachcls import cli


def tiny_config(out_dir, **overrides):
    doc = {
        "name": "tiny",
        "seed": 5,
        "model": {"name": "point2d",
                  "params": {"u_bounds": {"lo": [-1, -1], "hi": [1, 1]}}},
        "cost": {"mode": "reach_avoid",
                 "target": {"type": "box", "center": [0, 0], "half_widths": [1, 1]},
                 "constraint": {"type": "box", "center": [0, 0], "half_widths": [3, 3]}},
        "time": {"dt": 0.1, "num_steps": 3},
        "learner": {"samples_per_step": 60,
                    "train": {"grad_steps": 50, "batch_size": 32},
                    "disturbance_mode": {"type": "none"}},
        "oracle_grid": {"lo": [-3, -3], "hi": [3, 3], "points": [9, 9]},
        "eval_grid": {"lo": [-3, -3], "hi": [3, 3], "points": [9, 9]},
        "eval": {"k_start": 3, "epsilon": 0.05},
    }
    doc.update(overrides)
    path = os.path.join(out_dir, "config.json")
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


class TestValidateConfig:
    def test_ok(self, tmp_path, capsys):
        path = tiny_config(str(tmp_path))
        assert cli.main(["validate-config", "--config", path]) == 0
        assert "ok: tiny" in capsys.readouterr().out

    def test_bad_field_type_exit_2(self, tmp_path, capsys):
        path = tiny_config(str(tmp_path), seed="tomorrow")
        assert cli.main(["validate-config", "--config", path]) == 2
        assert "seed" in capsys.readouterr().err

    def test_missing_file_exit_4(self, tmp_path):
        assert cli.main(["validate-config", "--config",
                         str(tmp_path / "nope.json")]) == 4


class TestTrain:
    def test_end_to_end_outputs(self, tmp_path):
        cfg = tiny_config(str(tmp_path))
        out = str(tmp_path / "run")
        assert cli.main(["train", "--config", cfg, "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "policy.json"))
        metrics = open(os.path.join(out, "metrics.csv")).read().splitlines()
        assert len(metrics) == 4  # header + 3 steps
        manifest = json.load(open(os.path.join(out, "manifest_train.json")))
        assert manifest["seed"] == 5 and manifest["layers"] == 3
        assert len(manifest["config_hash"]) == 64
        assert os.path.exists(os.path.join(out, "checkpoints", "layer_00002.json"))

    def test_byte_identical_reruns(self, tmp_path):
        cfg = tiny_config(str(tmp_path))
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert cli.main(["train", "--config", cfg, "--out", out_a]) == 0
        assert cli.main(["train", "--config", cfg, "--out", out_b]) == 0
        bytes_a = open(os.path.join(out_a, "policy.json"), "rb").read()
        bytes_b = open(os.path.join(out_b, "policy.json"), "rb").read()
        assert bytes_a == bytes_b

    def test_resume_completes_identically(self, tmp_path):
        cfg = tiny_config(str(tmp_path))
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert cli.main(["train", "--config", cfg, "--out", out_a]) == 0
        # partial run: only the first checkpoint survives
        os.makedirs(os.path.join(out_b, "checkpoints"))
        src = os.path.join(out_a, "checkpoints", "layer_00000.json")
        dst = os.path.join(out_b, "checkpoints", "layer_00000.json")
        open(dst, "w").write(open(src).read())
        assert cli.main(["train", "--config", cfg, "--out", out_b, "--resume"]) == 0
        assert (open(os.path.join(out_a, "policy.json"), "rb").read()
                == open(os.path.join(out_b, "policy.json"), "rb").read())


class TestOracle:
    def test_writes_grid_files(self, tmp_path):
        cfg = tiny_config(str(tmp_path))
        out = str(tmp_path / "run")
        assert cli.main(["oracle", "--config", cfg, "--out", out]) == 0
        doc = json.load(open(os.path.join(out, "oracle_grid.json")))
        assert len(doc["values"]) == 81
        csv_lines = open(os.path.join(out, "oracle_grid.csv")).read().splitlines()
        assert csv_lines[2] == "x0,x1,value"

    def test_refuses_seven_dimensions(self, tmp_path, capsys):
        cfg = tiny_config(
            str(tmp_path),
            model={"name": "quad7d_rel", "params": {}},
            cost={"mode": "max_tracking",
                  "target": {"type": "sphere", "center": [0, 0, 0], "radius": 0.0,
                             "projection": [0, 1, 2]}},
            oracle_grid={"lo": [-1] * 7, "hi": [1] * 7, "points": [5] * 7},
            eval_grid={"lo": [-1] * 7, "hi": [1] * 7, "points": [5] * 7},
        )
        assert cli.main(["oracle", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "practical bound" in capsys.readouterr().err


class TestEval:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = tiny_config(str(tmp_path))
        out = str(tmp_path / "run")
        assert cli.main(["train", "--config", cfg, "--out", out]) == 0
        assert cli.main(["oracle", "--config", cfg, "--out", out]) == 0
        return cfg, out

    def test_with_oracle_reports_violations(self, trained, tmp_path, capsys):
        cfg, out = trained
        policy = os.path.join(out, "policy.json")
        grid = os.path.join(out, "oracle_grid.json")
        assert cli.main(["eval", "--config", cfg, "--policy", policy,
                         "--oracle", grid, "--out", out]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert "violation_fraction" in summary
        header = open(os.path.join(out, "set_report.csv")).readline().strip()
        assert header == "x0,x1,value,member,oracle_value,violation"

    def test_without_oracle_no_oracle_columns(self, trained, tmp_path):
        cfg, out = trained
        policy = os.path.join(out, "policy.json")
        assert cli.main(["eval", "--config", cfg, "--policy", policy,
                         "--out", out]) == 0
        header = open(os.path.join(out, "set_report.csv")).readline().strip()
        assert header == "x0,x1,value,member"

    def test_thread_flag_does_not_change_output(self, trained, tmp_path):
        cfg, out = trained
        policy = os.path.join(out, "policy.json")
        out1, out2 = str(tmp_path / "t1"), str(tmp_path / "t2")
        for out_n, threads in ((out1, "1"), (out2, "2")):
            assert cli.main(["eval", "--config", cfg, "--policy", policy,
                             "--out", out_n, "--threads", threads]) == 0
        assert (open(os.path.join(out1, "set_report.csv"), "rb").read()
                == open(os.path.join(out2, "set_report.csv"), "rb").read())

    def test_model_mismatch_exit_2(self, trained, tmp_path, capsys):
        cfg, out = trained
        other = tiny_config(str(tmp_path),
                            model={"name": "unicycle4d", "params": {}},
                            oracle_grid={"lo": [-3, -3, -3.2, 0], "hi": [3, 3, 3.2, 2],
                                         "points": [5, 5, 5, 5]},
                            eval_grid={"lo": [-3, -3, -3.2, 0], "hi": [3, 3, 3.2, 2],
                                       "points": [5, 5, 5, 5]})
        policy = os.path.join(out, "policy.json")
        assert cli.main(["eval", "--config", other, "--policy", policy,
                         "--out", str(tmp_path / "x")]) == 2
        assert "model" in capsys.readouterr().err


class TestRollout:
    @pytest.fixture()
    def policy_path(self, tmp_path):
        cfg = tiny_config(str(tmp_path))
        out = str(tmp_path / "run")
        assert cli.main(["train", "--config", cfg, "--out", out]) == 0
        return os.path.join(out, "policy.json")

    def test_zero_steps_single_row(self, policy_path, tmp_path):
        out = str(tmp_path / "roll")
        assert cli.main(["rollout", "--policy", policy_path, "--state=0.5,0.5",
                         "--k", "0", "--out", out]) == 0
        lines = open(os.path.join(out, "rollout.csv")).read().splitlines()
        assert len(lines) == 2

    def test_column_count(self, policy_path, tmp_path):
        out = str(tmp_path / "roll")
        assert cli.main(["rollout", "--policy", policy_path, "--state=-2,0",
                         "--k", "3", "--out", out]) == 0
        lines = open(os.path.join(out, "rollout.csv")).read().splitlines()
        # 1 time + n + N_u + N_d + l and g
        assert all(len(line.split(",")) == 1 + 2 + 2 + 0 + 2 for line in lines)
        assert lines[0] == "t,x0,x1,u0,u1,l,g"
        assert len(lines) == 5

    def test_member_node_reaches_target(self, policy_path, tmp_path):
        # cross-check: a node the eval report marks as member yields a rollout
        # whose target distance dips to zero or below
        import csv as csv_mod
        cfg_dir = os.path.dirname(os.path.dirname(policy_path))
        cfg = os.path.join(cfg_dir, "config.json")
        out = os.path.dirname(policy_path)
        assert cli.main(["eval", "--config", cfg, "--policy", policy_path,
                         "--out", out]) == 0
        rows = list(csv_mod.DictReader(open(os.path.join(out, "set_report.csv"))))
        member = next(r for r in rows if r["member"] == "1")
        roll_out = str(tmp_path / "roll")
        assert cli.main(["rollout", "--policy", policy_path,
                         f"--state={member['x0']},{member['x1']}",
                         "--k", "3", "--out", roll_out]) == 0
        l_vals = [float(r["l"]) for r in
                  csv_mod.DictReader(open(os.path.join(roll_out, "rollout.csv")))]
        assert min(l_vals) <= 0.0

    def test_bad_state_exit_2(self, policy_path, tmp_path):
        assert cli.main(["rollout", "--policy", policy_path, "--state=a,b",
                         "--k", "1", "--out", str(tmp_path)]) == 2
        assert cli.main(["rollout", "--policy", policy_path, "--state=1,2,3",
                         "--k", "1", "--out", str(tmp_path)]) == 2


class TestAnalyticDisturbanceWorkflow:
    def fastrack_config(self, out_dir):
        doc = {
            "name": "fx_tiny",
            "seed": 9,
            "model": {"name": "fastrack2d_x", "params": {}},
            "cost": {"mode": "max_tracking",
                     "target": {"type": "sphere", "center": [0.0], "radius": 0.0,
                                "projection": [0]}},
            "time": {"dt": 0.1, "num_steps": 4},
            "learner": {"samples_per_step": 50,
                        "train": {"grad_steps": 40, "batch_size": 32},
                        "disturbance_mode": {"type": "analytic", "rule": "grid_backup",
                                             "grid_path": "oracle_grid.json"}},
            "oracle_grid": {"lo": [-2, -2], "hi": [2, 2], "points": [11, 11]},
            "eval_grid": {"lo": [-2, -2], "hi": [2, 2], "points": [11, 11]},
            "eval": {"k_start": 4, "epsilon": 0.05},
        }
        path = os.path.join(out_dir, "fx.json")
        with open(path, "w") as fh:
            json.dump(doc, fh)
        return path

    def test_oracle_train_eval_rollout(self, tmp_path, capsys):
        cfg = self.fastrack_config(str(tmp_path))
        out = str(tmp_path / "run")
        # training before the oracle exists must fail cleanly
        assert cli.main(["train", "--config", cfg, "--out", out]) == 2
        assert cli.main(["oracle", "--config", cfg, "--out", out]) == 0
        assert cli.main(["train", "--config", cfg, "--out", out]) == 0
        policy_doc = json.load(open(os.path.join(out, "policy.json")))
        assert policy_doc["disturbance_source"] == "analytic"
        assert policy_doc["analytic_rule"]["name"] == "grid_backup"
        assert cli.main(["eval", "--config", cfg, "--policy",
                         os.path.join(out, "policy.json"),
                         "--oracle", os.path.join(out, "oracle_grid.json"),
                         "--out", out]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["mode"] == "max_tracking"
        # the reloaded policy replays its embedded disturbance rule
        assert cli.main(["rollout", "--policy", os.path.join(out, "policy.json"),
                         "--state=0.5,0.0", "--k", "4", "--out", out]) == 0
        rows = open(os.path.join(out, "rollout.csv")).read().splitlines()
        assert rows[0] == "t,x0,x1,u0,d0,d1,l,g"
        assert len(rows) == 6
