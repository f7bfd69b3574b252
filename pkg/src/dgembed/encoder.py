"""Single-head transformer encoder over short per-node temporal windows."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigurationError, DimensionError
from .nn import LayerNorm, Linear, Module


def positional_encoding(L: int, d: int) -> np.ndarray:
    if d % 2:
        raise ConfigurationError(f"positional encoding needs an even width, got {d}")
    pos = np.arange(L)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2) / d)
    pe = np.zeros((L, d))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


class SingleHeadAttention(Module):
    """``softmax(Q K^T / sqrt(d)) V`` over the second-to-last axis, unmasked."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.d = d
        self.query = Linear(d, d, rng, name="query")
        self.key = Linear(d, d, rng, name="key")
        self.value = Linear(d, d, rng, name="value")
        self.last_weights = None

    def forward(self, X) -> Tensor:
        X = as_tensor(X)
        if X.ndim < 2 or X.shape[-2] < 1:
            raise DimensionError(f"attention expects (..., L, d) with L >= 1, got {X.shape}")
        Q, K, V = self.query(X), self.key(X), self.value(X)
        scores = ad.matmul(Q, K.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.d))
        weights = ad.softmax(scores, axis=-1)
        self.last_weights = weights.data
        return ad.matmul(weights, V)


def single_head_attention(attn: SingleHeadAttention, X) -> Tensor:
    return attn(X)


class EncoderBlock(Module):
    """Attention and a ReLU feed-forward (width ``d_ff``), each with a residual.

    ``norm="post"`` normalises after each residual sum; ``"pre"`` before each
    sublayer.
    """

    def __init__(self, d: int, rng: np.random.Generator, d_ff: int | None = None, norm: str = "post"):
        if norm not in ("post", "pre"):
            raise ConfigurationError(f"norm must be 'post' or 'pre', got {norm!r}")
        self.norm_mode = norm
        self.attention = SingleHeadAttention(d, rng)
        self.norm1 = LayerNorm(d, name="norm1")
        self.ff_in = Linear(d, d_ff or 2 * d, rng, name="ff_in")
        self.ff_out = Linear(d_ff or 2 * d, d, rng, name="ff_out")
        self.norm2 = LayerNorm(d, name="norm2")

    def feed_forward(self, x: Tensor) -> Tensor:
        return self.ff_out(ad.relu(self.ff_in(x)))

    def forward(self, X) -> Tensor:
        X = as_tensor(X)
        if self.norm_mode == "post":
            h = self.norm1(X + self.attention(X))
            return self.norm2(h + self.feed_forward(h))
        h = X + self.attention(self.norm1(X))
        return h + self.feed_forward(self.norm2(h))


def encoder_forward(block: EncoderBlock, X) -> Tensor:
    return block(X)


class PointwiseTemporalConv(Module):
    """``tanh(sum_t w_t H[t] + b)``: one learnable scalar per window position."""

    def __init__(self, L: int, rng: np.random.Generator | None = None):
        self.weight = Parameter(np.full(L, 1.0 / L), "pointwise.weight")
        self.bias = Parameter(np.zeros(()), "pointwise.bias")

    def forward(self, H) -> Tensor:
        H = as_tensor(H)
        if H.shape[-2] != self.weight.shape[0]:
            raise DimensionError(f"expected {self.weight.shape[0]} positions, got {H.shape}")
        w = self.weight.reshape((-1, 1))
        return ad.tanh((H * w).sum(axis=-2) + self.bias)


def pointwise_combine(layer: PointwiseTemporalConv, H) -> Tensor:
    return layer(H)
