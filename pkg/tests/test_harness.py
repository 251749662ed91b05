"""CLI, config, and report plumbing tests (tiny configs, fast)."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from permaphys.harness.cli import main
from permaphys.harness.config import ConfigError, load_config
from permaphys.harness.report import ReportError, build_report


def write_config(tmp_path: Path, **overrides) -> Path:
    cfg = {
        "out_dir": str(tmp_path / "out"),
        "data_root": str(tmp_path / "data"),
        "seed": 5,
        "gen": {"resolution": 32, "tilt_deg": 90.0, "frames": 14,
                "max_balls": 2, "max_boxes": 0, "occluder_fraction": 0.5,
                "seed": 5},
        "counts": {"renderer": 2, "dynamics": 3, "eval": 2, "plaus_pairs": 0},
        "renderer_train": {"epochs": 1, "frames_per_epoch": 16,
                           "batch_frames": 4, "val_frames": 8, "seed": 5},
        "dynamics_train": {"epochs": 1, "warmup_epochs": 1, "seqs_per_epoch": 20,
                           "batch": 8, "val_videos": 1, "seed": 5},
        "decode": {"lam": 0.5, "steps": 2, "lr": 0.01, "frame_batch": 4,
                   "eval_every": 2, "seed": 5},
        "online": {"lam": 0.5, "steps": 2, "lr": 0.3, "seed": 5},
        "eval": {"horizons": [3, 5], "following_lengths": [3], "workers": 1,
                 "following_videos": 1, "pixel_videos": 1, "rollout_videos": 2},
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfig:
    def test_load_and_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.gen.resolution == 32
        assert cfg.eval.horizons == [3, 5]

    def test_parse_error_carries_line_info(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n "seed": 5,\n "oops"\n}')
        with pytest.raises(ConfigError) as exc:
            load_config(bad)
        # message carries file, line and column of the JSON error
        assert "bad.json:4:1" in str(exc.value)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path)
        raw = json.loads(path.read_text())
        raw["bogus"] = 1
        path.write_text(json.dumps(raw))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_digest_stable(self, tmp_path):
        cfg1 = load_config(write_config(tmp_path))
        cfg2 = load_config(write_config(tmp_path))
        assert cfg1.digest() == cfg2.digest()


class TestCLI:
    def test_unknown_verb_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate", "--config", "x.json"])
        assert exc.value.code == 2

    def test_missing_config_exit_2(self):
        assert main(["gen", "--config", "/definitely/missing.json"]) == 2

    def test_gen_deterministic(self, tmp_path):
        from permaphys.scenesim.dataset import dataset_hash

        path = write_config(tmp_path)
        assert main(["gen", "--config", str(path)]) == 0
        h1 = dataset_hash(tmp_path / "data")
        assert main(["gen", "--config", str(path)]) == 0
        assert dataset_hash(tmp_path / "data") == h1

    def test_report_without_metrics_fails(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["report", "--config", str(path)]) == 1
        assert "no metrics" in capsys.readouterr().err

    def test_full_small_pipeline(self, tmp_path):
        path = write_config(tmp_path)
        for verb in ("gen", "train-renderer", "train-dynamics", "eval-rollout",
                     "eval-following", "eval-pixels", "report"):
            args = [verb, "--config", str(path)]
            if verb == "train-dynamics":
                args += ["--models", "rin,noproba,mlp"]
            assert main(args) == 0, verb
        report = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert "rollout" in report["metrics"]
        assert (tmp_path / "out" / "metrics.csv").exists()
        assert report["checkpoint_hashes"]

    def test_decode_verb_writes_outputs(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["gen", "--config", str(path)]) == 0
        assert main(["train-renderer", "--config", str(path)]) == 0
        assert main(["train-dynamics", "--config", str(path), "--models", "rin"]) == 0
        video = tmp_path / "data" / "eval" / "video_0"
        out = tmp_path / "decoded"
        assert main(["decode", "--config", str(path), "--video", str(video),
                     "--out", str(out), "--steps", "2"]) == 0
        assert (out / "plausibility.json").exists()
        assert (out / "decoded.jsonl").exists()
        rep = json.loads((out / "plausibility.json").read_text())
        assert {"physics_total", "render_total", "total", "score"} <= set(rep)


class TestReportErrors:
    def test_build_report_raises_without_metrics(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        with pytest.raises(ReportError):
            build_report(cfg)
