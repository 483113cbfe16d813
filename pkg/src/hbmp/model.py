"""Full NLI model: shared sentence encoder + combination + MLP head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .encoders import EncoderConfig, EncoderParams, encode, init_encoder_params
from .nli_head import HeadParams, classify, combine, init_head_params
from .tensor import Tensor, softmax_cross_entropy


@dataclass
class ModelConfig:
    variant: str = "hbmp"
    layers: int = 3
    hidden: int = 600
    embed_dim: int = 300
    mlp_dim: int = 600
    dropout: float = 0.1
    labels: tuple = data_mod.THREE_WAY

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.variant, self.layers, self.hidden, self.embed_dim)


class NliModel:
    """Encoder parameters are shared between premise and hypothesis."""

    def __init__(self, config: ModelConfig, encoder: EncoderParams, head: HeadParams):
        self.config = config
        self.encoder = encoder
        self.head = head
        self._enc_cfg = config.encoder_config()

    @classmethod
    def init(cls, rng: np.random.Generator, config: ModelConfig, embedding: np.ndarray):
        enc_cfg = config.encoder_config()
        encoder = init_encoder_params(rng, enc_cfg, embedding)
        head = init_head_params(
            rng, enc_cfg.output_width, config.mlp_dim, len(config.labels), config.dropout
        )
        return cls(config, encoder, head)

    def forward(self, premise, hypothesis, training=False, rng=None) -> Tensor:
        u = encode(premise, self.encoder, self._enc_cfg)
        v = encode(hypothesis, self.encoder, self._enc_cfg)
        return classify(combine(u, v), self.head, training=training, rng=rng)

    def loss(self, premise, hypothesis, labels, training=False, rng=None) -> Tensor:
        return softmax_cross_entropy(self.forward(premise, hypothesis, training, rng), labels)

    def predict(self, premise, hypothesis) -> np.ndarray:
        return self.forward(premise, hypothesis).data.argmax(axis=1)

    def parameters(self) -> dict:
        """Stable name -> Tensor map; the checkpoint schema uses these names."""
        out = {"embedding": self.encoder.embedding}
        for k, layer in enumerate(self.encoder.layers):
            for direction, p in (("fwd", layer.forward), ("bwd", layer.backward)):
                out[f"layer{k}.{direction}.w_x"] = p.w_x
                out[f"layer{k}.{direction}.w_h"] = p.w_h
                out[f"layer{k}.{direction}.b"] = p.b
        for k, states in enumerate(self.encoder.init_states):
            for name, t in zip(("fwd.h0", "fwd.c0", "bwd.h0", "bwd.c0"), states):
                out[f"init{k}.{name}"] = t
        for name, t in zip(("w1", "b1", "w2", "b2", "w3", "b3"), self.head.tensors()):
            out[f"head.{name}"] = t
        return out

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()
