import json
from pathlib import Path

import pytest

from meancurv.cli import ConfigError, ExperimentConfig, formula, main, run_experiment


def read_bytes(path: Path) -> bytes:
    return Path(path).read_bytes()


class TestConfig:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json({"kind": "nonsense"})

    def test_empty_resolutions_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json({"kind": "solve", "domain": {"kind": "disk",
                                        "center": [0, 0], "radius": 1.0},
                                        "resolutions": []})

    def test_unknown_formula_rejected(self):
        with pytest.raises(ConfigError):
            formula({"name": "nope"})

    def test_bad_config_exit_code_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"kind": "solve"}), encoding="utf-8")
        assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestVerify:
    def test_all_pass(self, tmp_path):
        code = main(["verify", "--out", str(tmp_path / "v")])
        assert code == 0
        man = json.loads((tmp_path / "v" / "manifest.json").read_text())
        assert man["passed"]
        assert all(a["passed"] for a in man["assertions"])


class TestSolveExperiment:
    CONFIG = {
        "kind": "solve",
        "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 2.0},
        "resolutions": [16, 32],
        "seed": 1,
        "params": {
            "f": {"name": "hemisphere_density", "R": 4.0},
            "phi": {"name": "hemisphere", "R": 4.0},
            "exact": {"name": "hemisphere", "R": 4.0},
            "convergence_factor": 3.0,
        },
    }

    def test_runs_and_asserts_convergence(self, tmp_path):
        cfg = ExperimentConfig.from_json(dict(self.CONFIG, out=str(tmp_path / "a")))
        man = run_experiment(cfg, tmp_path / "a")
        assert man["passed"]
        names = {a["name"] for a in man["assertions"]}
        assert {"all_converged", "error_halving"} <= names

    def test_determinism_byte_identical(self, tmp_path):
        cfg1 = ExperimentConfig.from_json(dict(self.CONFIG))
        cfg2 = ExperimentConfig.from_json(dict(self.CONFIG))
        run_experiment(cfg1, tmp_path / "r1")
        run_experiment(cfg2, tmp_path / "r2")
        for name in ("solve_log.csv", "manifest.json"):
            assert read_bytes(tmp_path / "r1" / name) == read_bytes(tmp_path / "r2" / name)


class TestMeasureExperiment:
    def test_cone_law(self, tmp_path):
        cfg = ExperimentConfig.from_json({
            "kind": "measure",
            "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 1.0},
            "resolutions": [64],
            "seed": 3,
            "params": {
                "u": {"name": "cone"},
                "eps_list": [0.12, 0.08, 0.05],
                "balls": {"explicit": [[[0.0, 0.0], 0.3], [[0.0, 0.0], 0.5]]},
                "law": "cone",
            },
        })
        man = run_experiment(cfg, tmp_path / "m")
        assert man["passed"]


class TestPerronExperiment:
    def test_sweep_run(self, tmp_path):
        cfg = ExperimentConfig.from_json({
            "kind": "perron",
            "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 1.0},
            "resolutions": [32],
            "params": {"u": {"name": "cone"}, "levels": [2]},
        })
        man = run_experiment(cfg, tmp_path / "p")
        assert man["passed"]
        assert (tmp_path / "p" / "sweep_res32_j2.csv").exists()


class TestHarnackExperiment:
    def test_peak_family_increasing(self, tmp_path):
        cfg = ExperimentConfig.from_json({
            "kind": "harnack",
            "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 1.0},
            "resolutions": [32],
            "params": {"r": 0.9, "expect_increasing": True,
                       "family": [{"name": "boundary_peak", "M": m}
                                  for m in (2, 4, 8)]},
        })
        man = run_experiment(cfg, tmp_path / "h")
        assert man["passed"]
        assert (tmp_path / "h" / "harnack_ratios.csv").exists()
        assert (tmp_path / "h" / "psi_0.csv").exists()


class TestDirichletExperiment:
    def test_ring_pipeline(self, tmp_path):
        cfg = ExperimentConfig.from_json({
            "kind": "dirichlet",
            "domain": {"kind": "disk", "center": [0.0, 0.0], "radius": 1.0},
            "resolutions": [32],
            "params": {
                "measure": {"curves": [{"center": [0.0, 0.0], "radius": 0.5,
                                        "lambda": 0.5}]},
                "phi": {"name": "zero"},
                "deltas": [0.4, 0.25, 0.15, 0.1],
                "check_balls": [[[0.0, 0.0], 0.3], [[0.0, 0.0], 0.7]],
            },
        })
        man = run_experiment(cfg, tmp_path / "d")
        assert man["passed"]
        stages = (tmp_path / "d" / "stages.csv").read_text().splitlines()
        assert stages[0] == ("delta,eps,iters,residual,min_u,max_u,"
                             "monotonicity_violations")
        assert len(stages) == 5


class TestReport:
    def test_report_aggregates(self, tmp_path):
        main(["verify", "--out", str(tmp_path / "v1")])
        cfg = ExperimentConfig.from_json({"kind": "report", "domain": {},
                                          "resolutions": [1],
                                          "params": {"root": str(tmp_path)}})
        man = run_experiment(cfg, tmp_path / "rep")
        assert man["passed"]
        text = (tmp_path / "rep" / "report.csv").read_text()
        assert "mollify_preserves_constants" in text
