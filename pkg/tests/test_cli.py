"""End-to-end CLI tests: config handling and the full synth / train /
eval / analyze / gradcheck flow on a tiny model."""

import argparse

import numpy as np
import pytest

from hbmp.cli import (
    ConfigError,
    RunConfig,
    build_run_config,
    main,
    parse_config_file,
    run_gradcheck,
)


class TestConfigFile:
    def test_parse_key_value_with_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# a comment\n"
            "variant = ens\n"
            "\n"
            "hidden = 8\n"
            "lr = 0.001\n",
            encoding="utf-8",
        )
        assert parse_config_file(path) == {"variant": "ens", "hidden": "8", "lr": "0.001"}

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("variant = ens\njust words\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_file(path)

    def test_unknown_key_rejected(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("learning_rate = 0.1\n", encoding="utf-8")
        args = argparse.Namespace(config=str(cfg_path))
        with pytest.raises(ConfigError, match="learning_rate"):
            build_run_config(args)

    def test_flag_overrides_file(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        corpus.write_text(
            '{"sentence1": "a", "sentence2": "b", "gold_label": "neutral"}\n',
            encoding="utf-8",
        )
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(
            f"train = {corpus}\ndev = {corpus}\nhidden = 8\nvariant = ens\n",
            encoding="utf-8",
        )
        args = argparse.Namespace(config=str(cfg_path), hidden="16")
        cfg = build_run_config(args)
        assert cfg.hidden == 16
        assert cfg.variant == "ens"

    def test_missing_required_path(self, tmp_path):
        args = argparse.Namespace(config=None)
        with pytest.raises(ConfigError, match="'train'"):
            build_run_config(args)

    def test_nonexistent_path(self, tmp_path):
        args = argparse.Namespace(config=None, train="/nope/t.jsonl", dev="/nope/d.jsonl")
        with pytest.raises(ConfigError, match="does not exist"):
            build_run_config(args)


class TestConfigHash:
    def test_output_dirs_do_not_change_hash(self):
        a = RunConfig(train="t", dev="d", checkpoint_dir="x", report_dir="y")
        b = RunConfig(train="t", dev="d", checkpoint_dir="other", report_dir="z")
        assert a.hash() == b.hash()

    def test_semantic_fields_change_hash(self):
        a = RunConfig(train="t", dev="d", seed=1)
        b = RunConfig(train="t", dev="d", seed=2)
        assert a.hash() != b.hash()

    def test_bad_label_set(self):
        with pytest.raises(ConfigError, match="labels"):
            RunConfig(labels="five").label_set()


def write_tiny_config(tmp_path, train, dev, **overrides):
    values = {
        "train": train,
        "dev": dev,
        "checkpoint_dir": tmp_path / "ckpt",
        "report_dir": tmp_path / "reports",
        "variant": "hbmp",
        "layers": 2,
        "hidden": 4,
        "embed_dim": 6,
        "mlp_dim": 8,
        "lr": 2e-3,
        "batch_size": 10,
        "max_epochs": 3,
        "seed": 3,
    }
    values.update(overrides)
    path = tmp_path / "run.cfg"
    path.write_text(
        "".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8"
    )
    return path


class TestEndToEnd:
    @pytest.fixture()
    def trained(self, tmp_path):
        train = tmp_path / "train.jsonl"
        dev = tmp_path / "dev.jsonl"
        assert main(["synth", "--out", str(train), "--n", "30", "--seed", "0"]) == 0
        assert main(["synth", "--out", str(dev), "--n", "12", "--seed", "1"]) == 0
        cfg = write_tiny_config(tmp_path, train, dev)
        assert main(["train", "--config", str(cfg)]) == 0
        return tmp_path, dev

    def test_train_writes_artifacts(self, trained):
        tmp_path, _ = trained
        assert (tmp_path / "ckpt" / "best.ckpt").exists()
        log = (tmp_path / "reports" / "epochs.log").read_text()
        assert log.startswith("epoch=1 ")
        metrics = (tmp_path / "reports" / "train_metrics.txt").read_text()
        assert "config_hash=" in metrics
        assert "seed=3" in metrics

    def test_eval_and_predictions(self, trained, tmp_path):
        root, dev = trained
        preds = tmp_path / "preds.tsv"
        code = main([
            "eval",
            "--checkpoint", str(root / "ckpt" / "best.ckpt"),
            "--data", str(dev),
            "--report-dir", str(root / "reports"),
            "--bootstrap", "200", "12",
            "--predictions", str(preds),
        ])
        assert code == 0
        report = (root / "reports" / "eval_report.txt").read_text()
        assert report.startswith("config_hash=")
        assert "bootstrap 95% CI:" in report
        kv = (root / "reports" / "eval_report.kv").read_text()
        assert "accuracy=" in kv
        lines = preds.read_text().splitlines()
        assert lines[0] == "index\tgold\tpredicted"
        assert len(lines) == 13

    def test_analyze_writes_category_table(self, trained):
        root, dev = trained
        code = main([
            "analyze",
            "--checkpoint", str(root / "ckpt" / "best.ckpt"),
            "--data", str(dev),
            "--report-dir", str(root / "reports"),
        ])
        assert code == 0
        table = (root / "reports" / "category_report.txt").read_text()
        assert "category" in table
        assert "total (micro)" in table

    def test_same_seed_runs_are_byte_identical(self, tmp_path):
        train = tmp_path / "train.jsonl"
        dev = tmp_path / "dev.jsonl"
        main(["synth", "--out", str(train), "--n", "20", "--seed", "0"])
        main(["synth", "--out", str(dev), "--n", "10", "--seed", "1"])
        outputs = []
        for name in ("a", "b"):
            sub = tmp_path / name
            sub.mkdir()
            cfg = write_tiny_config(
                tmp_path, train, dev,
                checkpoint_dir=sub / "ckpt", report_dir=sub / "reports", max_epochs=2,
            )
            assert main(["train", "--config", str(cfg)]) == 0
            outputs.append(sub)
        a, b = outputs
        assert (a / "reports" / "epochs.log").read_bytes() == \
            (b / "reports" / "epochs.log").read_bytes()
        assert (a / "ckpt" / "best.ckpt").read_bytes() == \
            (b / "ckpt" / "best.ckpt").read_bytes()
        # metrics match except the checkpoint path, which names the run dir
        def metrics_sans_path(root):
            lines = (root / "reports" / "train_metrics.txt").read_text().splitlines()
            return [l for l in lines if not l.startswith("checkpoint=")]

        assert metrics_sans_path(a) == metrics_sans_path(b)

    def test_errors_exit_nonzero(self, tmp_path, capsys):
        assert main(["eval", "--checkpoint", "/nope.ckpt", "--data", "/nope.jsonl"]) == 1
        assert "error:" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_single_variant_passes(self, capsys):
        assert main(["gradcheck", "--variant", "ens"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("[PASS] ens:")

    def test_run_gradcheck_reports_per_parameter(self):
        errors, passed = run_gradcheck("hbmp", seed=0)
        assert passed
        assert "embedding" in errors
        assert any(name.startswith("head.") for name in errors)
        assert max(errors.values()) < 1e-4
