"""Premise/hypothesis combination and the MLP classifier.

The two sentence embeddings are combined as (u, v, |u - v|, u * v) and
fed through two LeakyReLU layers with inverted dropout, then a final
linear layer whose logits go to softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, abs_, concat, leaky_relu, matmul, transpose


@dataclass
class HeadParams:
    w1: Tensor  # [M, 4*D_enc]
    b1: Tensor  # [M]
    w2: Tensor  # [M, M]
    b2: Tensor  # [M]
    w3: Tensor  # [C, M]
    b3: Tensor  # [C]
    dropout: float = 0.1

    @property
    def n_classes(self) -> int:
        return self.w3.data.shape[0]

    def tensors(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


def _init_affine(rng, out_size, in_size):
    bound = 1.0 / np.sqrt(in_size)
    w = Tensor(rng.uniform(-bound, bound, size=(out_size, in_size)), requires_grad=True)
    b = Tensor(np.zeros(out_size), requires_grad=True)
    return w, b


def init_head_params(
    rng: np.random.Generator,
    encoder_width: int,
    mlp_dim: int,
    n_classes: int,
    dropout: float = 0.1,
) -> HeadParams:
    w1, b1 = _init_affine(rng, mlp_dim, 4 * encoder_width)
    w2, b2 = _init_affine(rng, mlp_dim, mlp_dim)
    w3, b3 = _init_affine(rng, n_classes, mlp_dim)
    return HeadParams(w1, b1, w2, b2, w3, b3, dropout)


def combine(u: Tensor, v: Tensor) -> Tensor:
    """(u, v, |u - v|, u * v), concatenated along the feature axis."""
    if u.data.shape != v.data.shape:
        raise ShapeError(f"combine width mismatch: {u.data.shape} vs {v.data.shape}")
    return concat([u, v, abs_(u - v), u * v], axis=1)


def _dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    # inverted dropout: scale kept units by 1/(1-p) so eval is identity
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return x * keep


def classify(
    features: Tensor,
    head: HeadParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits [batch, C]. Dropout fires only when training=True."""
    if features.data.shape[1] != head.w1.data.shape[1]:
        raise ShapeError(
            f"feature width {features.data.shape[1]} != head input {head.w1.data.shape[1]}"
        )
    use_dropout = training and head.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("training with dropout requires an rng")

    h = leaky_relu(matmul(features, transpose(head.w1)) + head.b1)
    if use_dropout:
        h = _dropout(h, head.dropout, rng)
    h = leaky_relu(matmul(h, transpose(head.w2)) + head.b2)
    if use_dropout:
        h = _dropout(h, head.dropout, rng)
    return matmul(h, transpose(head.w3)) + head.b3
