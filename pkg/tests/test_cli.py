"""End-to-end CLI: subcommands, error paths, reproducibility, artifacts."""

import json
import os

import numpy as np

from os2e import fixture_path
from os2e.cli import run
from os2e import io
from os2e.network import Checkpoint, NetworkConfig, init_params


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class TestSelectCommand:
    def test_bundled_fixture_selects_0_1(self, tmp_path):
        out = str(tmp_path / "sel")
        code = run(
            [
                "select",
                "--table", fixture_path("three_class_conditional.json"),
                "--k", "2",
                "--out", out,
            ]
        )
        assert code == 0
        result = read_json(os.path.join(out, "selection.json"))
        assert result["selected"] == [0, 1]
        assert result["energy"] == 0.0
        assert os.path.exists(os.path.join(out, "selection_report.csv"))
        assert os.path.exists(os.path.join(out, "resolved_config.json"))


class TestStatsCommand:
    def test_off_simplex_row_fails_with_line(self, tmp_path, capsys):
        resp = tmp_path / "resp.csv"
        resp.write_text("image_id,class_0,class_1\nimg_0,0.5,0.5\nimg_1,0.9,0.4\n")
        labels = tmp_path / "labels.csv"
        labels.write_text("image_id,event_index\nimg_0,0\nimg_1,1\n")
        code = run(
            ["stats", "--responses", str(resp), "--labels", str(labels),
             "--out", str(tmp_path / "out")]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "unnormalized scores" in err
        assert "line 3" in err

    def test_writes_tables(self, tmp_path):
        gen_dir = str(tmp_path / "gen")
        assert run(["gen", "--preset", "responses", "--seed", "1", "--out", gen_dir]) == 0
        out = str(tmp_path / "stats")
        code = run(
            ["stats",
             "--responses", os.path.join(gen_dir, "object_responses.csv"),
             "--labels", os.path.join(gen_dir, "labels.csv"),
             "--out", out]
        )
        assert code == 0
        table = io.read_conditional_json(os.path.join(out, "conditional.json"))
        assert table.num_events == 4
        posterior = io.read_posterior_json(os.path.join(out, "posterior.json"))
        assert posterior.num_classes == 20


class TestGenCommand:
    def test_vectors_preset_files(self, tmp_path):
        out = str(tmp_path / "v")
        code = run(
            ["gen", "--preset", "vectors", "--seed", "2", "--n-train", "16",
             "--n-test", "16", "--out", out]
        )
        assert code == 0
        manifest = read_json(os.path.join(out, "manifest.json"))
        assert set(manifest["files"]) >= {"train.csv", "test.csv", "aux.csv",
                                          "soft_targets.json", "truth.json"}
        truth = read_json(os.path.join(out, "truth.json"))
        assert len(truth["object_signatures"]) == 4

    def test_images_preset_files(self, tmp_path):
        out = str(tmp_path / "i")
        code = run(
            ["gen", "--preset", "images", "--seed", "3", "--n-train", "2",
             "--n-test", "2", "--out", out]
        )
        assert code == 0
        assert os.path.exists(os.path.join(out, "train", "img_0000.fimg"))
        assert os.path.exists(os.path.join(out, "test", "labels.csv"))


class TestTrainCommand:
    def gen_data(self, tmp_path, seed="4"):
        gen_dir = str(tmp_path / "data")
        run(["gen", "--preset", "vectors", "--seed", seed, "--n-train", "24",
             "--n-test", "24", "--out", gen_dir])
        return gen_dir

    def common_args(self, gen_dir, out, extra=()):
        return [
            "train", "--train", os.path.join(gen_dir, "train.csv"),
            "--test", os.path.join(gen_dir, "test.csv"),
            "--schedule", "6", "--batch-size", "8", "--dropout", "0.0",
            "--trunk", "8", "--seed", "7", "--out", out, *extra,
        ]

    def test_init_deterministic_checkpoints(self, tmp_path):
        gen_dir = self.gen_data(tmp_path)
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        assert run(self.common_args(gen_dir, out_a, ["--mode", "init"])) == 0
        assert run(self.common_args(gen_dir, out_b, ["--mode", "init"])) == 0
        with open(os.path.join(out_a, "checkpoint.json"), "rb") as fh:
            bytes_a = fh.read()
        with open(os.path.join(out_b, "checkpoint.json"), "rb") as fh:
            bytes_b = fh.read()
        assert bytes_a == bytes_b

    def test_knowledge_and_data_modes(self, tmp_path):
        gen_dir = self.gen_data(tmp_path)
        out_k = str(tmp_path / "k")
        code = run(
            self.common_args(
                gen_dir, out_k,
                ["--mode", "knowledge",
                 "--soft-targets", os.path.join(gen_dir, "soft_targets.json")],
            )
        )
        assert code == 0
        out_d = str(tmp_path / "d")
        code = run(
            self.common_args(
                gen_dir, out_d,
                ["--mode", "data", "--aux", os.path.join(gen_dir, "aux.csv")],
            )
        )
        assert code == 0
        report = read_json(os.path.join(out_d, "report.json"))
        assert report["records"][-1]["iteration"] == 15

    def test_probe_mode(self, tmp_path):
        gen_dir = self.gen_data(tmp_path)
        out = str(tmp_path / "p")
        assert run(self.common_args(gen_dir, out, ["--mode", "probe"])) == 0
        assert os.path.exists(os.path.join(out, "report.csv"))

    def test_knowledge_without_targets_fails(self, tmp_path, capsys):
        gen_dir = self.gen_data(tmp_path)
        code = run(
            self.common_args(gen_dir, str(tmp_path / "x"), ["--mode", "knowledge"])
        )
        assert code == 1
        assert "soft-targets" in capsys.readouterr().err

    def test_config_file_precedence(self, tmp_path):
        gen_dir = self.gen_data(tmp_path)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 99, "schedule": 4}))
        out = str(tmp_path / "c")
        code = run(
            ["train", "--train", os.path.join(gen_dir, "train.csv"),
             "--test", os.path.join(gen_dir, "test.csv"),
             "--mode", "init", "--trunk", "8", "--batch-size", "8",
             "--dropout", "0.0", "--config", str(cfg), "--seed", "7",
             "--out", out]
        )
        assert code == 0
        resolved = read_json(os.path.join(out, "resolved_config.json"))
        assert resolved["schedule"] == 4  # from config file
        assert resolved["seed"] == 7  # flag overrides file


class TestInferCommand:
    def make_checkpoint(self, path, num_classes=4):
        cfg = NetworkConfig(
            input_dim=16 * 16, trunk=(), heads=(num_classes,), dropout_rate=0.0
        )
        io.write_checkpoint_json(path, Checkpoint(cfg, init_params(cfg, seed=5)))

    def test_scores_and_specs(self, tmp_path):
        img_dir = str(tmp_path / "imgs")
        run(["gen", "--preset", "images", "--seed", "6", "--n-train", "1",
             "--n-test", "3", "--out", img_dir])
        ckpt_o = str(tmp_path / "o.json")
        ckpt_s = str(tmp_path / "s.json")
        self.make_checkpoint(ckpt_o)
        self.make_checkpoint(ckpt_s)
        out = str(tmp_path / "infer")
        code = run(
            ["infer", "--checkpoint-o", ckpt_o, "--checkpoint-s", ckpt_s,
             "--image-dir", os.path.join(img_dir, "test"),
             "--base-side", "32", "--crop-side", "16", "--out", out]
        )
        assert code == 0
        specs = read_json(os.path.join(out, "region_specs.json"))
        assert len(specs["specs"]) == 54
        with open(os.path.join(out, "scores.csv")) as fh:
            lines = fh.read().splitlines()
        assert lines[0] == "image_id,score_0,score_1,score_2,score_3"
        assert len(lines) == 4
        row = np.array([float(x) for x in lines[1].split(",")[1:]])
        assert abs(row.sum() - 1.0) <= 1e-9

    def test_crop_config_file(self, tmp_path):
        img_dir = str(tmp_path / "imgs")
        run(["gen", "--preset", "images", "--seed", "6", "--n-train", "1",
             "--n-test", "1", "--out", img_dir])
        ckpt = str(tmp_path / "o.json")
        self.make_checkpoint(ckpt)
        crop_cfg = tmp_path / "crop.json"
        crop_cfg.write_text(json.dumps(
            {"base_side": 32, "crop_side": 16, "scale_factors": [1.0],
             "ratio_modes": ["square"], "grid": 2}
        ))
        out = str(tmp_path / "infer")
        code = run(
            ["infer", "--checkpoint-o", ckpt, "--checkpoint-s", ckpt,
             "--image-dir", os.path.join(img_dir, "test"),
             "--crop-config", str(crop_cfg), "--out", out]
        )
        assert code == 0
        specs = read_json(os.path.join(out, "region_specs.json"))
        assert len(specs["specs"]) == 4


class TestResolvedConfig:
    def test_threads_env_cap_recorded(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OS2E_THREADS", "2")
        out = str(tmp_path / "sel")
        run(["select", "--table", fixture_path("three_class_conditional.json"),
             "--k", "1", "--out", out])
        resolved = read_json(os.path.join(out, "resolved_config.json"))
        assert resolved["threads"] == 2


class TestReportCommand:
    def test_summarizes_stats_and_runs(self, tmp_path):
        gen_dir = str(tmp_path / "gen")
        run(["gen", "--preset", "responses", "--seed", "8", "--out", gen_dir])
        stats_dir = str(tmp_path / "runs" / "stats")
        run(["stats", "--responses", os.path.join(gen_dir, "object_responses.csv"),
             "--labels", os.path.join(gen_dir, "labels.csv"), "--out", stats_dir])
        vec_dir = str(tmp_path / "vec")
        run(["gen", "--preset", "vectors", "--seed", "8", "--n-train", "16",
             "--n-test", "16", "--out", vec_dir])
        train_dir = str(tmp_path / "runs" / "init")
        run(["train", "--train", os.path.join(vec_dir, "train.csv"),
             "--test", os.path.join(vec_dir, "test.csv"), "--mode", "init",
             "--schedule", "4", "--batch-size", "8", "--dropout", "0.0",
             "--trunk", "8", "--out", train_dir])
        out = str(tmp_path / "report")
        code = run(["report", "--run-dir", str(tmp_path / "runs"), "--out", out])
        assert code == 0
        with open(os.path.join(out, "top_concepts.csv")) as fh:
            lines = fh.read().splitlines()
        assert lines[0] == "event,rank,class_id,p_concept_given_event"
        # per-event ranks sorted by descending conditional probability
        rows = [line.split(",") for line in lines[1:]]
        event0 = [float(r[3]) for r in rows if r[0] == "0"]
        assert event0 == sorted(event0, reverse=True)
        with open(os.path.join(out, "mode_comparison.csv")) as fh:
            comparison = fh.read().splitlines()
        assert comparison[0].startswith("mode,")
        assert len(comparison) == 2

    def test_empty_dir_warns_exit_zero(self, tmp_path, capsys):
        empty = str(tmp_path / "empty")
        os.makedirs(empty)
        out = str(tmp_path / "rep")
        assert run(["report", "--run-dir", empty, "--out", out]) == 0
        assert "warning" in capsys.readouterr().err
        summary = read_json(os.path.join(out, "report_summary.json"))
        assert summary["produced"] == []
