"""Configuration, the correlation report and the CLI on a miniature sweep."""

import csv
import io
import json
import math

import numpy as np
import pytest
import yaml

from cfaudit.runner import ConfigError, UndefinedCorrelationError, correlation_report, load_config, pearson, run_sweep
from cfaudit.runner.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main
from cfaudit.runner.config import PROFILES, from_dict
from cfaudit.runner.report import LOG_ALPHA, alignment_summary
from cfaudit.runner.sweep import RESULT_COLUMNS, SweepResult

MINI = {
    "variants": ["linear"],
    "scm": {"k": 4},
    "n_train": 300,
    "n_test": 160,
    "families": ["logistic", "tree-depth5"],
    "zoo_seeds": [0, 1],
    "generative": {
        "vae": {"latent_dim": 2, "hidden": 8, "steps": 60},
        "disentangle": {"hidden": 8, "outer_steps": 5},
        "diffusion": {"hidden": 8, "steps": 60},
    },
    "cit": {"n_mc": 2, "steps": 5},
    "eca": {"n_units": 40, "n_noise": 4},
}


def mini(tmp_path, **over):
    d = {**MINI, **over, "out": str(tmp_path / "run")}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


class TestConfig:
    def test_desk_defaults(self):
        cfg = load_config()
        assert cfg.variants == ["linear", "quadratic", "sin"] and cfg.scm.k == 8
        assert cfg.generative.disentangle.lam == 1e-3 and cfg.cit.n_mc == 32
        assert cfg.cit.seed == cfg.generative.seed == cfg.seed

    def test_paper_profile(self):
        cfg = load_config(profile="paper")
        assert len(cfg.variants) == 6 and cfg.scm.k == 32 and len(cfg.families) == 10
        assert set(PROFILES) == {"desk", "paper"}

    @pytest.mark.parametrize("bad", [
        {"n_trian": 10},
        {"scm": {"kk": 3}},
        {"generative": {"vae": {"depth": 2}}},
        {"generative": {"seed": 3}},
        {"cit": {"alpha": 0.1}},
        {"variants": ["circle"]},
        {"families": ["svm"]},
        {"alpha": 1.5},
        {"cit": {"h_mode": "exact"}},
    ])
    def test_strict(self, bad):
        with pytest.raises(ConfigError):
            from_dict(bad)

    def test_overlay_order(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 4\nscm: {k: 5}\n")
        cfg = load_config(path, overrides={"seed": 9})
        assert cfg.seed == 9 and cfg.scm.k == 5 and cfg.scm.n == 3

    def test_malformed(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: [1,\n")
        with pytest.raises(ConfigError, match="malformed"):
            load_config(path)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")

    def test_hash_ignores_output_location(self):
        a, b = from_dict({"out": "x"}), from_dict({"out": "y", "workers": 3})
        assert a.hash == b.hash != from_dict({"seed": 1}).hash


class TestPearson:
    def test_known_values(self):
        x = np.arange(10.0)
        assert pearson(x, 2 * x) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)
        # deviations (-1.5,-.5,.5,1.5) and (-.5,-1.5,1.5,.5): 4 / 5
        assert pearson([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6)

    def test_errors(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 2], [3, 4])
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 2, 3], [5, 5, 5])
        with pytest.raises(ValueError):
            pearson([1, 2, 3], [1, 2])

    def test_log_alpha(self):
        assert LOG_ALPHA == pytest.approx(-2.9957, abs=1e-4)


def _row(ds, eca, p):
    r = {c: float("nan") for c in RESULT_COLUMNS}
    r.update(dataset=ds, family="logistic", seed=0, eca=eca, p_citlr=p, p_dp=p, p_eo=p, degenerate=False, error="")
    return r


class TestReport:
    def test_all_p_one_is_undefined(self):
        rows = [_row("linear", e, 1.0) for e in (0.2, 0.5, 0.9)]
        rep = correlation_report(rows)
        assert len(rep) == 3 and all(rec["error"] for rec in rep)
        assert not alignment_summary(rep)["linear"]["positive"]

    def test_log_scale_fit(self):
        eca = np.array([0.1, 0.4, 0.6, 0.9])
        rows = [_row("sin", e, math.exp(-10 * (1 - e))) for e in eca]
        rec = correlation_report(rows)[0]
        assert rec["r"] == pytest.approx(1.0) and rec["slope"] == pytest.approx(10.0)
        assert rec["intercept"] == pytest.approx(-10.0)

    def test_floor_counts_clamps(self):
        rows = [_row("linear", e, p) for e, p in ((0.1, 0.0), (0.5, 0.2), (0.9, 0.8))]
        rec = correlation_report(rows)[0]
        assert rec["n_clamped"] == 1 and math.isfinite(rec["r"])


class TestCli:
    def test_config_error_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("nope: 1\n")
        assert main(["sweep", "--config", str(bad)]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err
        assert main(["gen-data", "--seed", "-1"]) == EXIT_CONFIG

    def test_sweep_outputs(self, tmp_path):
        cfg_path = mini(tmp_path)
        assert main(["sweep", "--config", str(cfg_path)]) == EXIT_OK
        out = tmp_path / "run"
        res = SweepResult.from_csv((out / "results.csv").read_text())
        assert len(res.rows) == 4 and not res.n_failed
        assert [(r["family"], r["seed"]) for r in res.rows] == [
            ("logistic", 0), ("logistic", 1), ("tree-depth5", 0), ("tree-depth5", 1)]
        assert all(0.0 <= r["eca"] <= 1.0 and 0.0 <= r["p_citlr"] <= 1.0 for r in res.rows)
        for method in ("CIT-LR", "DP", "EO"):
            lines = (out / "reports" / "linear" / f"{method}.jsonl").read_text().splitlines()
            assert len(lines) == 4 and all(json.loads(s)["p"] is not None for s in lines)
        report = list(csv.DictReader(io.StringIO((out / "report.csv").read_text())))
        assert [r["method"] for r in report] == ["CIT-LR", "DP", "EO"]
        assert (out / "models" / "linear" / "manifest.json").exists()
        assert (out / "timings.csv").read_text().startswith("dataset,family,seed,train_s")

        # a second run reuses the checkpoint and reproduces the file byte for byte
        first = (out / "results.csv").read_bytes()
        assert main(["sweep", "--config", str(cfg_path)]) == EXIT_OK
        assert (out / "results.csv").read_bytes() == first
        assert main(["report", "--config", str(cfg_path)]) == EXIT_OK

    def test_resume(self, tmp_path):
        cfg = load_config(mini(tmp_path))
        partial = run_sweep(cfg, max_cells=1)
        assert len(partial.rows) == 1
        full = run_sweep(cfg)
        assert len(full.rows) == 4 and full.rows[0] == partial.rows[0]
        (tmp_path / "b").mkdir()
        fresh = load_config(mini(tmp_path / "b"))
        assert run_sweep(fresh).to_csv() == full.to_csv()

    def test_partial_failure_exit(self, tmp_path):
        # so few test rows that a group within an outcome stratum is too small for EO
        cfg_path = mini(tmp_path, n_test=30)
        assert main(["sweep", "--config", str(cfg_path)]) == EXIT_PARTIAL
        res = SweepResult.from_csv((tmp_path / "run" / "results.csv").read_text())
        assert all("eo" in r["error"] or "citlr" in r["error"] for r in res.rows)

    def test_single_test(self, tmp_path, capsys):
        cfg_path = mini(tmp_path)
        assert main(["test", "--config", str(cfg_path), "--family", "logistic"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(out["reports"]) == {"CIT-LR", "DP", "EO"}
        assert main(["test", "--config", str(cfg_path), "--family", "svm"]) == EXIT_CONFIG
