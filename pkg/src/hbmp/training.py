"""Training loop: Adam, plateau LR decay, early stopping, checkpoints.

Schedule semantics (pinned by tests): "did not improve" compares the
epoch's dev loss against the best dev loss seen so far. Every
non-improving epoch multiplies the learning rate by the decay factor;
four consecutive non-improving epochs stop training. The checkpoint
kept is the one with the highest dev accuracy.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .model import ModelConfig, NliModel
from .tensor import log_softmax


class NonFiniteGradientError(RuntimeError):
    pass


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict):
        grads = {}
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NonFiniteGradientError(
                    f"non-finite gradient in {name!r} at step {self.t + 1}"
                )
            grads[name] = g
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class PlateauScheduler:
    """LR decay on dev-loss plateau plus patience-based stopping."""

    def __init__(self, lr0: float, decay: float = 0.2, patience: int = 3):
        self.lr = lr0
        self.decay = decay
        self.patience = patience
        self.best_loss = None
        self.bad_epochs = 0

    def epoch_end(self, dev_loss: float) -> str:
        """Returns 'continue', 'decay' or 'stop' after one epoch's dev loss."""
        if self.best_loss is None or dev_loss < self.best_loss:
            self.best_loss = dev_loss
            self.bad_epochs = 0
            return "continue"
        self.bad_epochs += 1
        self.lr *= self.decay
        if self.bad_epochs > self.patience:
            return "stop"
        return "decay"


@dataclass
class TrainConfig:
    lr0: float = 5e-4
    decay: float = 0.2
    batch_size: int = 64
    patience: int = 3
    max_epochs: int = 20
    seed: int = 1

    def __post_init__(self):
        if self.lr0 <= 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("lr0, batch_size and patience must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {self.decay}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_acc: float
    lr: float

    def log_line(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss!r} "
            f"dev_loss={self.dev_loss!r} dev_acc={self.dev_acc!r} lr={self.lr!r}"
        )


@dataclass
class FitResult:
    best_path: str
    best_epoch: int
    best_dev_acc: float
    history: list = field(default_factory=list)
    stop_reason: str = "max_epochs"


def evaluate_loss_accuracy(model: NliModel, dataset, vocab, batch_size: int = 64):
    """Dev-set mean loss and accuracy, deterministic (dropout off)."""
    total_loss, correct, n = 0.0, 0, 0
    for prem, hyp, labels in data_mod.batch_iter(dataset, vocab, batch_size):
        logits = model.forward(prem, hyp)
        logp = logits.data
        rows = np.arange(len(labels))
        total_loss += -log_softmax(logp)[rows, labels].sum()
        correct += int((logp.argmax(axis=1) == labels).sum())
        n += len(labels)
    return float(total_loss) / n, correct / n


def fit(
    model: NliModel,
    train_ds,
    dev_ds,
    vocab,
    config: TrainConfig,
    checkpoint_dir,
    log_path=None,
    extra_config: dict | None = None,
) -> FitResult:
    """Train with seeded shuffling; keep the best-dev-accuracy checkpoint."""
    if config.max_epochs < 1:
        raise ValueError(f"max_epochs must be >= 1, got {config.max_epochs}")
    if not train_ds.examples or not dev_ds.examples:
        raise ValueError("train and dev datasets must be non-empty")
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    best_path = checkpoint_dir / "best.ckpt"

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(lr=config.lr0)
    sched = PlateauScheduler(config.lr0, config.decay, config.patience)
    ckpt_config = dict(extra_config or {})
    ckpt_config["seed"] = str(config.seed)

    result = FitResult(str(best_path), best_epoch=0, best_dev_acc=-1.0)
    log_lines = []
    for epoch in range(1, config.max_epochs + 1):
        epoch_loss, n_seen = 0.0, 0
        for prem, hyp, labels in data_mod.batch_iter(
            train_ds, vocab, config.batch_size, shuffle=True, rng=rng
        ):
            model.zero_grad()
            loss = model.loss(prem, hyp, labels, training=True, rng=rng)
            loss.backward()
            # pad embedding row stays frozen at zero
            if params["embedding"].grad is not None:
                params["embedding"].grad[data_mod.PAD_ID] = 0.0
            opt.step(params)
            epoch_loss += float(loss.data) * len(labels)
            n_seen += len(labels)

        dev_loss, dev_acc = evaluate_loss_accuracy(model, dev_ds, vocab, config.batch_size)
        if dev_acc > result.best_dev_acc:
            result.best_dev_acc = dev_acc
            result.best_epoch = epoch
            save_checkpoint(params, ckpt_config, best_path)

        action = sched.epoch_end(dev_loss)
        opt.lr = sched.lr
        stats = EpochStats(epoch, epoch_loss / n_seen, dev_loss, dev_acc, sched.lr)
        result.history.append(stats)
        log_lines.append(stats.log_line())
        if action == "stop":
            result.stop_reason = "early_stop"
            break

    if log_path is not None:
        Path(log_path).write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return result


# -- checkpoint format --------------------------------------------------------
#
# magic "HBMP" | u32 version | u32 config length | config utf-8 key=value
# lines | per tensor: u32 name length | name | u32 rank | u64 dims |
# little-endian float32 data, row-major.

MAGIC = b"HBMP"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _encode_config(config: dict) -> bytes:
    lines = []
    for key, value in config.items():
        value = str(value)
        if "\n" in key or "\n" in value:
            raise ValueError(f"config entry {key!r} contains a newline")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def save_checkpoint(params: dict, config: dict, path) -> None:
    """Write all tensors at float32 storage precision."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = _encode_config(config)
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    for name, tensor in params.items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read_exact(fh, n, what):
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointTruncatedError(f"checkpoint truncated while reading {what}")
    return b


def load_checkpoint(path):
    """Returns (config dict, name -> float32 ndarray)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointVersionError(f"unsupported version {version}, expected {VERSION}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        cfg_bytes = _read_exact(fh, cfg_len, "config block")
        config = {}
        for line in cfg_bytes.decode("utf-8").splitlines():
            if line:
                key, _, value = line.partition("=")
                config[key] = value
        tensors = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointTruncatedError("checkpoint truncated in tensor record")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name}"))
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, f"dims of {name}"))
            count = int(np.prod(dims)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"data of {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return config, tensors


def load_into(params: dict, tensors: dict) -> None:
    """Overwrite live parameters from loaded arrays, checking shapes."""
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointShapeError(f"checkpoint is missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointShapeError(
                f"tensor {name!r}: checkpoint shape {arr.shape} != model shape {p.data.shape}"
            )
        p.data = arr.astype(np.float64)


def model_config_entries(model_cfg: ModelConfig, vocab) -> dict:
    """Config block entries sufficient to rebuild the model at load time."""
    return {
        "variant": model_cfg.variant,
        "layers": str(model_cfg.layers),
        "hidden": str(model_cfg.hidden),
        "embed_dim": str(model_cfg.embed_dim),
        "mlp_dim": str(model_cfg.mlp_dim),
        "dropout": repr(model_cfg.dropout),
        "labels": ",".join(model_cfg.labels),
        "vocab": " ".join(vocab.id_to_token[2:]),
    }


def model_from_checkpoint(path):
    """Rebuild (model, vocab) from a checkpoint written by fit()."""
    config, tensors = load_checkpoint(path)
    vocab = data_mod.Vocabulary(config["vocab"].split() if config.get("vocab") else [])
    model_cfg = ModelConfig(
        variant=config["variant"],
        layers=int(config["layers"]),
        hidden=int(config["hidden"]),
        embed_dim=int(config["embed_dim"]),
        mlp_dim=int(config["mlp_dim"]),
        dropout=float(config["dropout"]),
        labels=tuple(config["labels"].split(",")),
    )
    rng = np.random.default_rng(0)  # placeholder init, overwritten below
    model = NliModel.init(rng, model_cfg, np.zeros((len(vocab), model_cfg.embed_dim)))
    load_into(model.parameters(), tensors)
    return model, vocab, config
