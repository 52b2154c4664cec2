"""Command-line contract: exit codes, determinism, report shapes.

Everything drives cli.main() in process with a tiny 8-feature block, so the
whole file stays fast while covering every subcommand and failure class.
"""
import json

import numpy as np
import pytest

from spikeconvert.cli import main
from spikeconvert.model import (
    ConvertedBlock,
    ModelConfig,
    WeightSet,
    load_block,
    load_config,
    load_weights,
    save_block,
    save_config,
    save_weights,
)
from spikeconvert.neurons import FSParams, HGConfig
from spikeconvert.tensors import Matrix

TINY = dict(d_model=8, n_heads=2, d_ff=16, seq_len=4, T=8, H=3,
            N_per_nonlinearity=8, samples_per_range=128,
            seeds={"weights": 5, "calibration": 6, "input": 7})


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Config, weights, input, converted block, and a run report on disk."""
    d = tmp_path_factory.mktemp("cli")
    cfg = ModelConfig(**TINY)
    save_config(cfg, str(d / "config.json"))
    save_weights(WeightSet.random(cfg, 5), str(d / "weights.lasw"))
    x = Matrix(np.random.default_rng(7).standard_normal((4, 8)))
    save_weights(WeightSet({"input": x}), str(d / "input.lasw"))
    assert main(["convert", "--config", str(d / "config.json"),
                 "--weights", str(d / "weights.lasw"),
                 "--out", str(d / "block.json")]) == 0
    assert main(["run", "--block", str(d / "block.json"),
                 "--input", str(d / "input.lasw"),
                 "--report", str(d / "report.json")]) == 0
    return d


class TestParsing:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "0.1.0" in capsys.readouterr().out

    def test_no_command(self, capsys):
        assert main([]) == 2

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 2


class TestCalibrate:
    def test_writes_report(self, tmp_path, capsys):
        out = str(tmp_path / "gelu.json")
        code = main(["calibrate", "--target", "gelu", "--levels", "4",
                     "--steps", "8", "--samples", "256", "--range", "-3", "3",
                     "--out", out])
        assert code == 0
        assert "fitted gelu" in capsys.readouterr().out
        with open(out) as fh:
            rep = json.load(fh)
        assert rep["target"] == "gelu"
        assert rep["boundaries"][0] == -3.0 and rep["boundaries"][-1] == 3.0
        assert 0 < rep["max_abs_err"] < 1.0

    def test_unknown_target(self, tmp_path, capsys):
        assert main(["calibrate", "--target", "sinh",
                     "--out", str(tmp_path / "x.json")]) == 2

    def test_too_few_samples(self, tmp_path, capsys):
        code = main(["calibrate", "--target", "exp", "--samples", "32",
                     "--out", str(tmp_path / "x.json")])
        assert code == 2
        assert "--samples" in capsys.readouterr().err

    def test_deterministic_output(self, tmp_path, capsys):
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        flags = ["calibrate", "--target", "exp", "--levels", "4",
                 "--steps", "8", "--samples", "128", "--range", "-2", "1"]
        assert main(flags + ["--out", a]) == 0
        assert main(flags + ["--out", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_seed_env_override(self, tmp_path, capsys, monkeypatch):
        base = ["calibrate", "--target", "exp", "--levels", "4", "--steps",
                "8", "--samples", "128", "--range", "-2", "1"]
        a = str(tmp_path / "a.json")
        b = str(tmp_path / "b.json")
        c = str(tmp_path / "c.json")
        monkeypatch.setenv("LAS_SEED", "123")
        assert main(base + ["--seed", "1", "--out", a]) == 0
        assert main(base + ["--seed", "2", "--out", b]) == 0
        monkeypatch.delenv("LAS_SEED")
        assert main(base + ["--seed", "1", "--out", c]) == 0
        # the env seed beats both flag seeds; without it the flag matters
        assert open(a, "rb").read() == open(b, "rb").read()
        assert open(a, "rb").read() != open(c, "rb").read()

    def test_bad_seed_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("LAS_SEED", "xyz")
        assert main(["calibrate", "--target", "exp",
                     "--out", str(tmp_path / "x.json")]) == 2


class TestConvert:
    def test_block_is_complete(self, work, capsys):
        block = load_block(str(work / "block.json"))
        block.check_complete()

    def test_prints_summary(self, work, tmp_path, capsys):
        code = main(["convert", "--config", str(work / "config.json"),
                     "--weights", str(work / "weights.lasw"),
                     "--out", str(tmp_path / "b2.json")])
        assert code == 0
        out = capsys.readouterr().out
        assert "converted 1-layer block" in out
        assert "10 encoder sites" in out and "7 gate sites" in out

    def test_outlier_distribution_flag(self, work, tmp_path, capsys):
        code = main(["convert", "--config", str(work / "config.json"),
                     "--weights", str(work / "weights.lasw"),
                     "--calib-dist", "uniform_outliers",
                     "--out", str(tmp_path / "b3.json")])
        assert code == 0
        block = load_block(str(tmp_path / "b3.json"))
        oat = block.oat["input"]
        assert oat.theta_out / oat.theta_nor > 5.0

    def test_missing_weights_file(self, work, tmp_path, capsys):
        assert main(["convert", "--config", str(work / "config.json"),
                     "--weights", str(tmp_path / "nope.lasw"),
                     "--out", str(tmp_path / "x.json")]) == 2


class TestRun:
    def test_report_contents(self, work):
        with open(work / "report.json") as fh:
            rep = json.load(fh)
        assert set(rep) == {"tool_version", "config", "seed", "steps",
                            "output_rel_err", "per_layer", "counters",
                            "ledger", "calibration"}
        assert rep["steps"] == 8
        assert rep["output_rel_err"] < 0.15
        assert rep["ledger"]["sops"] > 0 and rep["ledger"]["flops"] > 0
        assert rep["calibration"]["layers.0.ffn.act"]["target"] == "gelu"

    def test_stdout_line(self, work, capsys):
        assert main(["run", "--block", str(work / "block.json"),
                     "--input", str(work / "input.lasw")]) == 0
        out = capsys.readouterr().out
        assert "output_rel_err=" in out and "sops=" in out

    def test_reports_are_byte_identical(self, work, tmp_path, capsys):
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        flags = ["run", "--block", str(work / "block.json"),
                 "--input", str(work / "input.lasw")]
        assert main(flags + ["--report", a]) == 0
        assert main(flags + ["--report", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_steps_flag(self, work, tmp_path, capsys):
        rp = str(tmp_path / "r2.json")
        assert main(["run", "--block", str(work / "block.json"),
                     "--input", str(work / "input.lasw"),
                     "--steps", "2", "--report", rp]) == 0
        with open(rp) as fh:
            assert json.load(fh)["steps"] == 2

    def test_missing_block(self, work, capsys):
        assert main(["run", "--block", str(work / "gone.json"),
                     "--input", str(work / "input.lasw")]) == 2

    def test_input_tensor_name_checked(self, work, tmp_path, capsys):
        bad = str(tmp_path / "bad_input.lasw")
        save_weights(WeightSet({"x": Matrix(np.ones((4, 8)))}), bad)
        code = main(["run", "--block", str(work / "block.json"),
                     "--input", bad])
        assert code == 2
        assert "input" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_spike_path_exits_3(self, work, tmp_path, capsys):
        block = load_block(str(work / "block.json"))
        site = "layers.0.attn.exp"
        old = block.hg[site]
        poisoned = HGConfig(old.boundaries, tuple(
            FSParams(theta=p.theta, h=p.h, d=tuple(1e308 for _ in p.d))
            for p in old.subneurons))
        hg = dict(block.hg)
        hg[site] = poisoned
        bad = ConvertedBlock(block.config, block.weights, block.oat, hg,
                             block.reports)
        bp = str(tmp_path / "bad.json")
        save_block(bad, bp)
        code = main(["run", "--block", bp,
                     "--input", str(work / "input.lasw")])
        assert code == 3
        assert "spike path" in capsys.readouterr().err


class TestCompare:
    def test_table(self, work, capsys):
        assert main(["compare", "--block", str(work / "block.json"),
                     "--input", str(work / "input.lasw")]) == 0
        out = capsys.readouterr().out
        assert "layers.0.attn_residual" in out
        assert "layers.0.ffn_residual" in out
        assert "output_rel_err" in out


class TestSweep:
    def test_csv_shape_and_direction(self, work, tmp_path, capsys):
        out = str(tmp_path / "sweep.csv")
        assert main(["sweep", "--block", str(work / "block.json"),
                     "--input", str(work / "input.lasw"),
                     "--steps-list", "1,4,8", "--out", out]) == 0
        printed = capsys.readouterr().out
        with open(out) as fh:
            text = fh.read()
        assert text == printed
        lines = text.strip().split("\n")
        assert lines[0] == "timestep,mean_rel_err,sops,ratio"
        rows = [line.split(",") for line in lines[1:]]
        assert [int(r[0]) for r in rows] == [1, 4, 8]
        errs = [float(r[1]) for r in rows]
        sops = [int(r[2]) for r in rows]
        assert errs[0] >= errs[1] >= errs[2]
        assert sops[0] < sops[1] < sops[2]

    def test_empty_steps_list(self, work, capsys):
        assert main(["sweep", "--block", str(work / "block.json"),
                     "--input", str(work / "input.lasw"),
                     "--steps-list", ","]) == 2

    def test_non_numeric_steps(self, work, capsys):
        assert main(["sweep", "--block", str(work / "block.json"),
                     "--input", str(work / "input.lasw"),
                     "--steps-list", "4,x"]) == 2


class TestEnergy:
    def test_matches_report_ledger(self, work, capsys):
        assert main(["energy", "--report", str(work / "report.json")]) == 0
        out = capsys.readouterr().out
        with open(work / "report.json") as fh:
            led = json.load(fh)["ledger"]
        want = (led["sops"] * 0.9) / (led["flops"] * 4.6)
        got = float(out.split("ratio=")[1])
        assert got == pytest.approx(want, rel=1e-5)

    def test_report_without_flops(self, tmp_path, capsys):
        p = str(tmp_path / "empty.json")
        with open(p, "w") as fh:
            json.dump({"ledger": {"sops": 5, "flops": 0}}, fh)
        code = main(["energy", "--report", p])
        assert code == 2
        assert "FLOPs" in capsys.readouterr().err

    def test_missing_report(self, tmp_path, capsys):
        assert main(["energy", "--report", str(tmp_path / "gone.json")]) == 2


class TestInit:
    def test_writes_three_files(self, tmp_path, capsys):
        c = str(tmp_path / "c.json")
        w = str(tmp_path / "w.lasw")
        i = str(tmp_path / "i.lasw")
        assert main(["init", "--config-out", c, "--weights-out", w,
                     "--input-out", i, "--seed", "31"]) == 0
        cfg = load_config(c)
        assert cfg.seeds == {"weights": 31, "calibration": 32, "input": 33}
        ws = load_weights(w)
        ws.validate(cfg)
        x = load_weights(i)["input"]
        assert x.shape == (cfg.seq_len, cfg.d_model)

    def test_gated_and_layers_flags(self, tmp_path, capsys):
        c = str(tmp_path / "c.json")
        assert main(["init", "--gated", "--layers", "2",
                     "--config-out", c,
                     "--weights-out", str(tmp_path / "w.lasw"),
                     "--input-out", str(tmp_path / "i.lasw")]) == 0
        cfg = load_config(c)
        assert cfg.ffn_kind == "gated" and cfg.n_layers == 2

    def test_seed_env_override(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("LAS_SEED", "77")
        c = str(tmp_path / "c.json")
        assert main(["init", "--seed", "1", "--config-out", c,
                     "--weights-out", str(tmp_path / "w.lasw"),
                     "--input-out", str(tmp_path / "i.lasw")]) == 0
        cfg = load_config(c)
        assert cfg.seeds == {"weights": 77, "calibration": 78, "input": 79}
