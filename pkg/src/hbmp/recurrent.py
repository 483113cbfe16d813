"""LSTM cell, bidirectional LSTM over padded batches, temporal max pooling.

Sequences are carried as lists of per-timestep matrices (batch x dim)
rather than one 3-D array; the tape then unrolls naturally over time.

Padded positions still feed the recurrence (with the pad embedding),
but a per-row mask holds the state unchanged there: at a masked step
``state = new * 0 + old * 1`` exactly, so growing T_max with extra
padding leaves every real-position output and both directions' final
states bitwise unchanged. The backward direction runs t = T_max-1 .. 0
under the same hold, which makes it consume exactly t = length .. 1
per row; its final state is the state after timestep 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    ShapeError,
    _make,
    _accum,
    concat,
    matmul,
    note_kink_margin,
    sigmoid,
    slice_cols,
    tanh,
    transpose,
)


@dataclass
class LstmParams:
    """One directional LSTM. Gate order in the 4H axis is (i, f, g, o)."""

    w_x: Tensor  # [4H, E]
    w_h: Tensor  # [4H, H]
    b: Tensor    # [4H]

    @property
    def hidden_size(self) -> int:
        return self.w_h.data.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.data.shape[1]

    def tensors(self):
        return [self.w_x, self.w_h, self.b]


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    def tensors(self):
        return self.forward.tensors() + self.backward.tensors()


@dataclass
class StatePair:
    h: Tensor  # [batch, H]
    c: Tensor  # [batch, H]


class SentenceBatch:
    """Padded token-id matrix with true lengths and derived mask.

    Padded positions hold the reserved pad id 0; mask[i, t] is True
    iff t < lengths[i].
    """

    def __init__(self, token_ids, lengths):
        self.token_ids = np.asarray(token_ids, dtype=np.int64)
        self.lengths = np.asarray(lengths, dtype=np.int64)
        if self.lengths.min(initial=1) < 1:
            raise ValueError("every sentence must have length >= 1")
        t_max = self.token_ids.shape[1]
        self.mask = np.arange(t_max)[None, :] < self.lengths[:, None]

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def t_max(self) -> int:
        return self.token_ids.shape[1]

    def padded(self, extra: int) -> "SentenceBatch":
        """Same batch with `extra` additional all-pad timesteps."""
        b = self.token_ids.shape[0]
        pad = np.zeros((b, extra), dtype=np.int64)
        return SentenceBatch(np.hstack([self.token_ids, pad]), self.lengths)

    @classmethod
    def from_id_lists(cls, id_lists) -> "SentenceBatch":
        lengths = [len(ids) for ids in id_lists]
        t_max = max(lengths)
        token_ids = np.zeros((len(id_lists), t_max), dtype=np.int64)
        for i, ids in enumerate(id_lists):
            token_ids[i, : len(ids)] = ids
        return cls(token_ids, lengths)


def zero_state(batch_size: int, hidden: int) -> StatePair:
    return StatePair(
        Tensor(np.zeros((batch_size, hidden))),
        Tensor(np.zeros((batch_size, hidden))),
    )


def lstm_cell(x_t: Tensor, state: StatePair, p: LstmParams) -> StatePair:
    """Standard LSTM cell: pre-activation W_x x + W_h h + b, gates (i,f,g,o)."""
    h = p.hidden_size
    pre = matmul(x_t, transpose(p.w_x)) + matmul(state.h, transpose(p.w_h)) + p.b
    i = sigmoid(slice_cols(pre, 0, h))
    f = sigmoid(slice_cols(pre, h, 2 * h))
    g = tanh(slice_cols(pre, 2 * h, 3 * h))
    o = sigmoid(slice_cols(pre, 3 * h, 4 * h))
    c_new = f * state.c + i * g
    h_new = o * tanh(c_new)
    return StatePair(h_new, c_new)


def _masked_step(x_t, state, p, keep_col):
    """One cell step; rows with keep 0 hold their previous state exactly."""
    new = lstm_cell(x_t, state, p)
    drop = 1.0 - keep_col
    return StatePair(
        new.h * keep_col + state.h * drop,
        new.c * keep_col + state.c * drop,
    )


def bilstm(steps, mask, init, p: BiLstmParams):
    """Run both directions over a padded batch.

    steps: list of T tensors [batch, E]; mask: bool [batch, T];
    init: (StatePair forward, StatePair backward).

    Returns (h_seq, finals): h_seq is a list of T tensors [batch, 2H]
    with h_t = [fwd_t, bwd_t]; finals are the per-direction states after
    each direction's last unmasked step.
    """
    t_max = len(steps)
    if mask.shape[1] != t_max:
        raise ShapeError(f"mask has {mask.shape[1]} steps, input has {t_max}")
    if not mask[:, 0].all():
        raise ValueError("zero-length sentence in batch")
    keep = mask.astype(np.float64)

    fwd_state = init[0]
    fwd_h = []
    for t in range(t_max):
        fwd_state = _masked_step(steps[t], fwd_state, p.forward, keep[:, t : t + 1])
        fwd_h.append(fwd_state.h)

    bwd_state = init[1]
    bwd_h = [None] * t_max
    for t in range(t_max - 1, -1, -1):
        bwd_state = _masked_step(steps[t], bwd_state, p.backward, keep[:, t : t + 1])
        bwd_h[t] = bwd_state.h

    h_seq = [concat([fwd_h[t], bwd_h[t]], axis=1) for t in range(t_max)]
    return h_seq, (fwd_state, bwd_state)


def temporal_max_pool(steps, mask) -> Tensor:
    """Per-dimension max over unmasked timesteps.

    Gradient flows to the earliest argmax position on ties.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("temporal_max_pool: fully masked row")
    stacked = np.stack([s.data for s in steps], axis=1)  # [B, T, D]
    masked = np.where(mask[:, :, None], stacked, -np.inf)
    if stacked.shape[1] > 1:
        top2 = np.sort(masked, axis=1)[:, -2:, :]
        gaps = top2[:, 1, :] - top2[:, 0, :]  # inf when only one candidate
        note_kink_margin(gaps.min(initial=np.inf))
    argmax = masked.argmax(axis=1)  # first occurrence on ties
    b, _, d = stacked.shape
    rows = np.arange(b)[:, None]
    cols = np.arange(d)[None, :]
    out_data = stacked[rows, argmax, cols]

    def bwd(g):
        for t, s in enumerate(steps):
            hit = argmax == t
            if hit.any():
                _accum(s, np.where(hit, g, 0.0))

    return _make(out_data, tuple(steps), bwd)
