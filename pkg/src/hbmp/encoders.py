"""Sentence encoders: the hierarchical BiLSTM-max-pool model and its
four ablation variants.

All five variants emit a fixed-size embedding of width L * 2H (layer
count times both directions of the hidden size):

  hbmp      - every layer re-reads the word embeddings; layer k > 1 is
              initialized with layer k-1's final hidden and cell states;
              output is the concatenation of each layer's max pool.
  ens       - like hbmp but every layer starts from zero states.
  ens-train - like ens but the initial states are trainable vectors,
              broadcast across the batch.
  ens-tied  - like ens but all layers share one BiLSTM parameter set
              (gradients accumulate across the reuses).
  stack     - conventional stacking: layer k > 1 reads layer k-1's full
              hidden sequence instead of the embeddings; zero states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recurrent import (
    BiLstmParams,
    LstmParams,
    SentenceBatch,
    StatePair,
    Tensor,
    bilstm,
    temporal_max_pool,
    zero_state,
)
from .tensor import concat, take_rows

VARIANTS = ("hbmp", "ens", "ens-train", "ens-tied", "stack")


@dataclass
class EncoderConfig:
    variant: str = "hbmp"
    layers: int = 3
    hidden: int = 600
    embed_dim: int = 300

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoder variant {self.variant!r}; choose from {VARIANTS}")
        if self.layers < 1:
            raise ValueError("layer count must be >= 1")

    @property
    def output_width(self) -> int:
        return self.layers * 2 * self.hidden


@dataclass
class EncoderParams:
    embedding: Tensor                 # [V, E]; row 0 is the frozen pad row
    layers: list                      # BiLstmParams x L, or x 1 when tied
    init_states: list = field(default_factory=list)  # ens-train only

    def tensors(self):
        out = [self.embedding]
        for layer in self.layers:
            out.extend(layer.tensors())
        for h_f, c_f, h_b, c_b in self.init_states:
            out.extend([h_f, c_f, h_b, c_b])
        return out


def _init_lstm(rng: np.random.Generator, hidden: int, input_size: int) -> LstmParams:
    # uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate bias 1, rest 0
    bound = 1.0 / np.sqrt(hidden)
    w_x = rng.uniform(-bound, bound, size=(4 * hidden, input_size))
    w_h = rng.uniform(-bound, bound, size=(4 * hidden, hidden))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return LstmParams(
        Tensor(w_x, requires_grad=True),
        Tensor(w_h, requires_grad=True),
        Tensor(b, requires_grad=True),
    )


def _init_bilstm(rng, hidden, input_size) -> BiLstmParams:
    return BiLstmParams(_init_lstm(rng, hidden, input_size), _init_lstm(rng, hidden, input_size))


def layer_input_size(config: EncoderConfig, layer_index: int) -> int:
    if config.variant == "stack" and layer_index > 0:
        return 2 * config.hidden
    return config.embed_dim


def init_encoder_params(
    rng: np.random.Generator, config: EncoderConfig, embedding: np.ndarray
) -> EncoderParams:
    """Fresh parameters; `embedding` rows are copied and fine-tuned."""
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.shape[1] != config.embed_dim:
        raise ValueError(f"embedding width {emb.shape[1]} != configured {config.embed_dim}")
    n_layers = 1 if config.variant == "ens-tied" else config.layers
    layers = [
        _init_bilstm(rng, config.hidden, layer_input_size(config, k))
        for k in range(n_layers)
    ]
    init_states = []
    if config.variant == "ens-train":
        for _ in range(config.layers):
            init_states.append(
                tuple(Tensor(np.zeros(config.hidden), requires_grad=True) for _ in range(4))
            )
    return EncoderParams(Tensor(emb.copy(), requires_grad=True), layers, init_states)


def _layer_params(params: EncoderParams, config: EncoderConfig, k: int) -> BiLstmParams:
    return params.layers[0] if config.variant == "ens-tied" else params.layers[k]


def _initial_states(params, config, k, batch_size, prev_finals):
    if config.variant == "hbmp" and k > 0:
        return prev_finals
    if config.variant == "ens-train":
        h_f, c_f, h_b, c_b = params.init_states[k]
        zeros = Tensor(np.zeros((batch_size, config.hidden)))
        return (
            StatePair(zeros + h_f, zeros + c_f),
            StatePair(zeros + h_b, zeros + c_b),
        )
    return (
        zero_state(batch_size, config.hidden),
        zero_state(batch_size, config.hidden),
    )


def encode(
    batch: SentenceBatch,
    params: EncoderParams,
    config: EncoderConfig,
    zero_handoff: bool = False,
) -> Tensor:
    """Sentence embeddings [batch, L * 2H] for the configured variant.

    `zero_handoff` forces every layer to start from zero states, which
    turns the hierarchical variant into the plain ensemble on the same
    parameters. It exists for structural verification.
    """
    if batch.token_ids.max(initial=0) >= params.embedding.data.shape[0]:
        raise ValueError(
            f"token id {batch.token_ids.max()} out of range for vocabulary "
            f"of size {params.embedding.data.shape[0]}"
        )
    embedded = [take_rows(params.embedding, batch.token_ids[:, t]) for t in range(batch.t_max)]

    pooled = []
    layer_input = embedded
    finals = None
    for k in range(config.layers):
        if zero_handoff:
            init = (zero_state(batch.size, config.hidden), zero_state(batch.size, config.hidden))
        else:
            init = _initial_states(params, config, k, batch.size, finals)
        h_seq, finals = bilstm(layer_input, batch.mask, init, _layer_params(params, config, k))
        pooled.append(temporal_max_pool(h_seq, batch.mask))
        if config.variant == "stack":
            layer_input = h_seq
    return concat(pooled, axis=1)


def param_census(params: EncoderParams, config: EncoderConfig) -> dict:
    """Element counts per component (embedding / bilstm / init_states)."""
    counts = {
        "embedding": params.embedding.data.size,
        "bilstm": sum(t.data.size for layer in params.layers for t in layer.tensors()),
        "init_states": sum(
            t.data.size for states in params.init_states for t in states
        ),
    }
    counts["total"] = sum(counts.values())
    return counts
