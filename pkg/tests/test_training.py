"""Optimizer, LR schedule, training loop and checkpoint format tests."""

import numpy as np
import pytest

from hbmp import synth
from hbmp.data import build_vocab, random_embeddings
from hbmp.model import ModelConfig, NliModel
from hbmp.tensor import Tensor
from hbmp.training import (
    Adam,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    EpochStats,
    NonFiniteGradientError,
    PlateauScheduler,
    TrainConfig,
    fit,
    load_checkpoint,
    load_into,
    model_config_entries,
    model_from_checkpoint,
    save_checkpoint,
)


class TestAdam:
    def test_matches_hand_unrolled_recurrence(self):
        # minimize f(w) = w^2, gradient 2w, 10 steps
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        w = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps)

        w_ref, m, v = 1.0, 0.0, 0.0
        for t in range(1, 11):
            g = 2.0 * w_ref
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            w_ref -= lr * m_hat / (np.sqrt(v_hat) + eps)

            w.grad = 2.0 * w.data
            opt.step({"w": w})

        assert abs(float(w.data[0]) - w_ref) < 1e-12

    def test_descends_quadratic(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        opt = Adam(lr=0.1)
        for _ in range(200):
            w.grad = 2.0 * w.data
            opt.step({"w": w})
        assert abs(float(w.data[0])) < 0.05

    def test_missing_grad_treated_as_zero(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        Adam(lr=0.1).step({"w": w})
        np.testing.assert_array_equal(w.data, [1.0])

    def test_non_finite_gradient_names_parameter(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        w.grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradientError, match="'head.w1'"):
            Adam().step({"head.w1": w})


class TestPlateauScheduler:
    def test_decay_and_stop_sequence(self):
        # dev losses: improve once, then five non-improving epochs
        sched = PlateauScheduler(lr0=5e-4, decay=0.2, patience=3)
        losses = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98]
        actions, lrs = [], []
        for loss in losses:
            actions.append(sched.epoch_end(loss))
            lrs.append(sched.lr)
        assert actions == ["continue", "continue", "decay", "decay", "decay", "stop"]
        np.testing.assert_allclose(lrs, [5e-4, 5e-4, 1e-4, 2e-5, 4e-6, 8e-7], rtol=1e-12)

    def test_equal_loss_counts_as_no_improvement(self):
        sched = PlateauScheduler(lr0=1.0, decay=0.5, patience=3)
        assert sched.epoch_end(1.0) == "continue"
        assert sched.epoch_end(1.0) == "decay"
        assert sched.lr == 0.5

    def test_improvement_resets_patience(self):
        sched = PlateauScheduler(lr0=1.0, decay=0.5, patience=2)
        for loss in (1.0, 1.1, 1.1, 0.9, 1.0, 1.0):
            action = sched.epoch_end(loss)
            assert action != "stop"
        assert sched.bad_epochs == 2


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr0 == 5e-4
        assert cfg.decay == 0.2
        assert cfg.batch_size == 64
        assert cfg.patience == 3

    @pytest.mark.parametrize(
        "kwargs",
        [dict(lr0=0.0), dict(batch_size=0), dict(patience=0), dict(decay=1.5), dict(decay=0.0)],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def test_epoch_stats_log_line_uses_full_precision():
    line = EpochStats(3, 1.0 / 3.0, 0.5, 0.875, 5e-4).log_line()
    assert line == "epoch=3 train_loss=0.3333333333333333 dev_loss=0.5 dev_acc=0.875 lr=0.0005"


def tiny_training_setup(seed=1):
    train = synth.generate_corpus(n=30, seed=0)
    dev = synth.generate_corpus(n=12, seed=1)
    vocab = build_vocab(train, dev)
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(variant="hbmp", layers=2, hidden=4, embed_dim=6, mlp_dim=8)
    emb = random_embeddings(rng, vocab, cfg.embed_dim)
    model = NliModel.init(rng, cfg, emb.vectors)
    return model, train, dev, vocab, cfg


class TestFit:
    def test_runs_and_keeps_best_checkpoint(self, tmp_path):
        model, train, dev, vocab, model_cfg = tiny_training_setup()
        cfg = TrainConfig(lr0=1e-3, batch_size=8, max_epochs=3, seed=7)
        result = fit(
            model, train, dev, vocab, cfg, tmp_path,
            log_path=tmp_path / "epochs.log",
            extra_config=model_config_entries(model_cfg, vocab),
        )
        assert (tmp_path / "best.ckpt").exists()
        assert len(result.history) == 3
        assert 1 <= result.best_epoch <= 3
        log = (tmp_path / "epochs.log").read_text().splitlines()
        assert len(log) == 3
        assert log[0].startswith("epoch=1 train_loss=")

    def test_same_seed_is_byte_identical(self, tmp_path):
        runs = []
        for name in ("a", "b"):
            model, train, dev, vocab, model_cfg = tiny_training_setup(seed=3)
            out = tmp_path / name
            out.mkdir()
            fit(
                model, train, dev, vocab,
                TrainConfig(lr0=1e-3, batch_size=8, max_epochs=2, seed=11),
                out, log_path=out / "epochs.log",
                extra_config=model_config_entries(model_cfg, vocab),
            )
            runs.append(out)
        assert (runs[0] / "epochs.log").read_bytes() == (runs[1] / "epochs.log").read_bytes()
        assert (runs[0] / "best.ckpt").read_bytes() == (runs[1] / "best.ckpt").read_bytes()

    def test_different_seed_diverges(self, tmp_path):
        logs = []
        for seed in (1, 2):
            model, train, dev, vocab, _ = tiny_training_setup(seed=3)
            out = tmp_path / f"s{seed}"
            out.mkdir()
            fit(model, train, dev, vocab,
                TrainConfig(lr0=1e-3, batch_size=8, max_epochs=2, seed=seed),
                out, log_path=out / "epochs.log")
            logs.append((out / "epochs.log").read_text())
        assert logs[0] != logs[1]

    def test_rejects_bad_epoch_budget(self, tmp_path):
        model, train, dev, vocab, _ = tiny_training_setup()
        with pytest.raises(ValueError, match="max_epochs"):
            fit(model, train, dev, vocab, TrainConfig(max_epochs=0), tmp_path)

    def test_pad_embedding_row_stays_zero(self, tmp_path):
        model, train, dev, vocab, _ = tiny_training_setup()
        fit(model, train, dev, vocab,
            TrainConfig(lr0=1e-3, batch_size=8, max_epochs=2, seed=5), tmp_path)
        np.testing.assert_array_equal(model.encoder.embedding.data[0], 0.0)


class TestCheckpointFormat:
    def _params(self, seed=0):
        rng = np.random.default_rng(seed)
        return {
            "a.w": Tensor(rng.normal(size=(3, 4)).astype(np.float32).astype(np.float64)),
            "a.b": Tensor(rng.normal(size=5).astype(np.float32).astype(np.float64)),
        }

    def test_roundtrip_is_bitwise_at_float32(self, tmp_path):
        params = self._params()
        path = tmp_path / "x.ckpt"
        save_checkpoint(params, {"k": "v", "n": "3"}, path)
        config, tensors = load_checkpoint(path)
        assert config == {"k": "v", "n": "3"}
        for name, p in params.items():
            assert tensors[name].dtype == np.float32
            assert tensors[name].tobytes() == p.data.astype("<f4").tobytes()

    def test_magic_and_version_header(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(self._params(), {}, path)
        raw = path.read_bytes()
        assert raw[:4] == b"HBMP"
        assert int.from_bytes(raw[4:8], "little") == 1

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(self._params(), {}, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError, match="99"):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(self._params(), {"k": "v"}, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)

    def test_load_into_checks_shapes(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(self._params(), {}, path)
        _, tensors = load_checkpoint(path)
        bad = {"a.w": Tensor(np.zeros((3, 5))), "a.b": Tensor(np.zeros(5))}
        with pytest.raises(CheckpointShapeError, match="'a.w'"):
            load_into(bad, tensors)

    def test_load_into_reports_missing_tensor(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(self._params(), {}, path)
        _, tensors = load_checkpoint(path)
        extra = dict(self._params(), **{"c.w": Tensor(np.zeros(2))})
        with pytest.raises(CheckpointShapeError, match="'c.w'"):
            load_into(extra, tensors)

    def test_config_rejects_newlines(self, tmp_path):
        with pytest.raises(ValueError, match="newline"):
            save_checkpoint(self._params(), {"k": "a\nb"}, tmp_path / "x.ckpt")


class TestModelRoundtrip:
    def test_model_from_checkpoint_restores_predictions(self, tmp_path):
        model, train, dev, vocab, model_cfg = tiny_training_setup()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model.parameters(), model_config_entries(model_cfg, vocab), path)
        loaded, loaded_vocab, _ = model_from_checkpoint(path)

        assert loaded_vocab.id_to_token == vocab.id_to_token
        assert loaded.config.variant == model_cfg.variant
        from hbmp.data import make_batch

        prem, hyp, _ = make_batch(dev.examples[:6], vocab, dev.label_set)
        # storage is float32, so compare after rounding the source model too
        for name, p in model.parameters().items():
            loaded_p = loaded.parameters()[name]
            np.testing.assert_array_equal(
                loaded_p.data, p.data.astype(np.float32).astype(np.float64)
            )
        np.testing.assert_array_equal(loaded.predict(prem, hyp), model.predict(prem, hyp))
