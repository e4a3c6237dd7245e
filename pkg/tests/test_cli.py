import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from wchaos.cli import ConfigError, main, run_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name):
    return json.loads((CONFIGS / name).read_text())


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestSubcommands:
    def test_list_tasks(self, capsys):
        assert main(["list-tasks"]) == 0
        out = capsys.readouterr().out
        for name in ("solve", "filter-study", "stransform"):
            assert name in out

    def test_validate_strong(self, capsys):
        assert main(["validate", "--config", str(CONFIGS / "convergence_strong.json")]) == 0
        out = capsys.readouterr().out
        assert "strong" in out and "epsilon=1" in out

    def test_validate_weak(self, capsys):
        assert main(["validate", "--config", str(CONFIGS / "kv_weak.json")]) == 0
        assert "weak" in capsys.readouterr().out

    def test_validate_non_parabolic_points_to_weighted(self, capsys):
        assert main(["validate", "--config", str(CONFIGS / "nonparabolic.json")]) == 0
        out = capsys.readouterr().out
        assert "non-parabolic" in out and "weighted" in out


class TestRun:
    def test_ex2_transport_reproduces_example(self, tmp_path):
        rc = main(["run", "--config", str(CONFIGS / "ex2_transport.json"),
                   "--out", str(tmp_path)])
        assert rc == 0
        rows = read_csv(tmp_path / "coefficients.csv")
        assert rows[0] == ["t", "alpha", "l2_norm"]
        # max coefficient norm above level 1 is numerically zero
        high = [float(r[2]) for r in rows[1:] if r[1].count(":") >= 2
                or (r[1].count(":") == 1 and (":2" in r[1] or ":3" in r[1]))]
        assert high and max(high) < 1e-10
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["outputs"] == ["coefficients.csv"]
        assert "config_sha256" in manifest and "boundary_mass" in manifest

    def test_determinism_byte_identical(self, tmp_path):
        cfg = load("energy_weak.json")
        cfg["problem"]["trunc"]["max_order"] = 3
        cfg["problem"]["time"]["steps"] = 200
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_config(cfg, out1)
        run_config(cfg, out2)
        assert (out1 / "energy.csv").read_bytes() == (out2 / "energy.csv").read_bytes()

    def test_filter_task_outputs(self, tmp_path):
        cfg = load("filter_linear.json")
        cfg["problem"]["trunc"] = {"max_order": 2, "n_time_modes": 4, "n_channels": 1}
        run_config(cfg, tmp_path)
        est = read_csv(tmp_path / "estimates.csv")
        assert est[0] == ["t", "f_name", "unnormalized", "normalized",
                          "reference", "abs_error"]
        flt = read_csv(tmp_path / "filter.csv")
        assert flt[0] == ["t", "estimate", "reference", "error"]
        obs = read_csv(tmp_path / "observations.csv")
        assert obs[0] == ["t", "Y_1"]
        assert float(obs[1][1]) == 0.0  # Y(0) = 0

    def test_convergence_task(self, tmp_path):
        cfg = load("convergence_strong.json")
        cfg["problem"]["trunc"]["max_order"] = 4
        run_config(cfg, tmp_path)
        rows = read_csv(tmp_path / "convergence.csv")
        assert rows[0] == ["n", "error", "ratio", "theoretical_ratio"]
        ratios = [float(r[2]) for r in rows[1:-1]]
        bound = float(rows[1][3])
        assert all(r <= bound for r in ratios)

    def test_stransform_task(self, tmp_path):
        cfg = {
            "problem": load("convergence_strong.json")["problem"],
            "task": {"name": "stransform", "h_magnitude": 0.1, "h_modes": 2},
            "seed": 1,
        }
        cfg["problem"]["trunc"] = {"max_order": 6, "n_time_modes": 4, "n_channels": 1}
        run_config(cfg, Path(tmp_path))
        rows = read_csv(tmp_path / "stransform.csv")
        assert float(rows[1][1]) < 1e-6

    def test_moments_task(self, tmp_path):
        cfg = {
            "problem": {
                "kind": "constant",
                "grid": {"type": "periodic", "length": 16 * math.pi, "nx": 32},
                "a": 0.5, "sigma": [1.0],
                "u0": {"type": "gaussian", "width": 1.0},
                "trunc": {"max_order": 2, "n_time_modes": 2, "n_channels": 1},
                "time": {"horizon": 0.3, "steps": 60},
            },
            "task": {"name": "moments", "probe_x": [0.0, 1.0]},
            "seed": 1,
        }
        run_config(cfg, Path(tmp_path))
        rows = read_csv(tmp_path / "moments.csv")
        assert rows[0] == ["point_ids", "order", "value", "oracle", "abs_diff"]
        assert all(float(r[4]) < 1e-9 for r in rows[1:])


class TestErrors:
    def test_malformed_json_exit_1_no_artifacts(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        out = tmp_path / "out"
        assert main(["run", "--config", str(bad), "--out", str(out)]) == 1
        assert not out.exists() or not list(out.iterdir())

    def test_missing_key_names_it(self, tmp_path, capsys):
        cfg = load("ex2_transport.json")
        del cfg["problem"]["grid"]
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        assert "problem.grid" in capsys.readouterr().err

    def test_unknown_task_exit_1(self, tmp_path, capsys):
        cfg = load("ex2_transport.json")
        cfg["task"] = {"name": "fly-to-the-moon"}
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
        assert "task.name" in capsys.readouterr().err

    def test_numerical_failure_exit_2_names_alpha(self, tmp_path, capsys):
        cfg = {
            "problem": {
                "kind": "constant",
                "grid": {"type": "periodic", "length": 16.0, "nx": 16},
                "a": 0.0, "c": 1e4, "sigma": [1.0],
                "u0": {"type": "gaussian", "width": 1.0},
                "trunc": {"max_order": 1, "n_time_modes": 2, "n_channels": 1},
                "time": {"horizon": 1.0, "steps": 400},
            },
            "task": {"name": "solve", "save_times": [1.0]},
            "seed": 1,
        }
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "alpha" in err and "step" in err

    def test_missing_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 1
