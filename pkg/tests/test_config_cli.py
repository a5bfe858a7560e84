import subprocess
import sys

import numpy as np
import pytest

from lpnsr.cli import main
from lpnsr.config import KEYS, RunConfig, load_config, parse_config_text
from lpnsr.errors import ConfigError
from lpnsr.io import read_tensor, write_tensor


class TestConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        (tmp_path / "e.conf").write_text("")
        cfg = load_config(tmp_path / "e.conf")
        s = cfg.schedule()
        assert (s.T, s.kappa) == (4, 2.0)
        w = cfg.train("predictor").weights()
        assert (w.l1, w.perceptual, w.adversarial) == (1.0, 1.0, 0.1)

    def test_precedence(self, tmp_path):
        (tmp_path / "c.conf").write_text("schedule.kappa = 1.5\nrun.seed = 4  # comment\n")
        cfg = load_config(tmp_path / "c.conf", {"run.seed": "9"})
        assert cfg["schedule.kappa"] == 1.5 and cfg.seed == 9
        assert cfg.eval_seeds() == (9, 10, 11)

    def test_unknown_key_line_number(self):
        with pytest.raises(ConfigError, match=r"schedule\.kapa: x\.conf:2: unknown key"):
            parse_config_text("run.seed = 1\nschedule.kapa = 2\n", "x.conf")

    @pytest.mark.parametrize("text", ["schedule.kappa = -1", "schedule.T = 0", "schedule.eta_max = 1.0",
                                      "infer.steps = 5", "infer.strategy = loud", "train.lr = abc",
                                      "train.predictor_iterations = 0", "eval.seeds = 0", "justtext"])
    def test_invalid_values(self, tmp_path, text):
        (tmp_path / "b.conf").write_text(text + "\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "b.conf")

    def test_echo_roundtrip(self, tmp_path):
        cfg = load_config(overrides={"schedule.kappa": 1.25, "eval.record_runtime": "yes"})
        path = cfg.echo(tmp_path / "echo.conf")
        again = load_config(path)
        assert again.values == cfg.values
        assert set(again.values) == set(KEYS)

    def test_full_scale_lr(self):
        assert load_config(overrides={"train.lr": "5e-5"}).train("predictor").lr == 5e-5

    def test_defaults_complete(self):
        assert RunConfig().validate().values == {k: v[1] for k, v in KEYS.items()}


class TestCli:
    def test_help_lists_keys(self, capsys):
        assert main(["verify", "--help"]) == 0
        out = capsys.readouterr().out
        for key in KEYS:
            assert f"--{key}" in out
        assert "(default: 2.0)" in out

    def test_console_script(self):
        out = subprocess.run([sys.executable, "-m", "lpnsr.cli", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "eval-strategies" in out.stdout

    def test_bad_kappa_exit_2(self, tmp_path, capsys):
        assert main(["gen-data", "--out-dir", str(tmp_path), "--schedule.kappa", "-1"]) == 2
        assert "schedule.kappa" in capsys.readouterr().err
        assert not (tmp_path / "corpus").exists()

    def test_unknown_command_exit_2(self):
        assert main(["frobnicate"]) == 2

    def test_missing_predictor_message(self, tmp_path, tiny_config, capsys):
        base = ["--out-dir", str(tmp_path), "--config", str(tiny_config)]
        assert main(["gen-data", *base]) == 0
        assert main(["pretrain-denoiser", *base]) == 0
        assert main(["pretrain-upsampler", *base]) == 0
        capsys.readouterr()
        assert main(["eval-strategies", *base]) == 1
        assert "train-predictor" in capsys.readouterr().err

    def test_verify_seed_7(self, tmp_path, capsys):
        assert main(["verify", "--out-dir", str(tmp_path), "--seed", "7"]) == 0
        assert (tmp_path / "results" / "verify.txt").read_text().endswith("ALL PASS\n")

    def test_schedule_mismatch_exit_1(self, tmp_path, tiny_config, capsys):
        base = ["--out-dir", str(tmp_path), "--config", str(tiny_config)]
        assert main(["gen-data", *base]) == 0
        assert main(["pretrain-denoiser", *base]) == 0
        capsys.readouterr()
        assert main(["train-predictor", *base, "--schedule.T", "3", "--infer.steps", "3"]) == 1
        assert "T=4" in capsys.readouterr().err

    def test_full_pipeline(self, tmp_path, tiny_config, capsys):
        base = ["--out-dir", str(tmp_path), "--config", str(tiny_config)]
        for cmd in ("gen-data", "pretrain-denoiser", "pretrain-upsampler", "train-predictor",
                    "eval-strategies", "eval-steps"):
            assert main([cmd, *base]) == 0, cmd
        assert len((tmp_path / "results" / "strategies.tsv").read_text().splitlines()) == 5
        assert len((tmp_path / "results" / "steps.tsv").read_text().splitlines()) == 9
        assert (tmp_path / "reports" / "predictor.tsv").read_text().startswith("iter\tloss\tval_l1\n")
        assert (tmp_path / "config" / "train-predictor.conf").exists()

        lr = read_tensor(tmp_path / "corpus" / "test" / "00000.lr.lten")
        write_tensor(tmp_path / "in.lten", lr[0, 0])
        args = ["infer", *base, "--input", str(tmp_path / "in.lten"), "--steps", "3", "--pgm"]
        assert main(args) == 0
        out = read_tensor(tmp_path / "results" / "infer.lten")
        assert out.shape[-2:] == (32, 32) and np.isfinite(out).all()
        assert list(tmp_path.glob("results/*.pgm"))

        assert main(["eval-strategies", *base, "--oracle"]) == 0
        assert "inf" in (tmp_path / "results" / "strategies.tsv").read_text()

    def test_optimal_needs_target(self, tmp_path, tiny_config, capsys):
        base = ["--out-dir", str(tmp_path), "--config", str(tiny_config)]
        for cmd in ("gen-data", "pretrain-denoiser", "pretrain-upsampler"):
            assert main([cmd, *base]) == 0
        write_tensor(tmp_path / "in.lten", np.zeros((8, 8), np.float32))
        capsys.readouterr()
        assert main(["infer", *base, "--input", str(tmp_path / "in.lten"), "--strategy", "optimal"]) == 1
        assert "ground-truth" in capsys.readouterr().err
