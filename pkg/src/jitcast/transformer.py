"""Vanilla encoder-decoder transformer for numeric sequences.

Post-norm layers (residual add, then layer norm), sinusoidal absolute
positions, ReLU feed-forward, no dropout. Inputs are batches of feature rows
shaped ``(batch, seq_len, input_feature_dim)``; the decoder emits one scalar
per position.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    input_feature_dim: int = 3
    # add the decoder's value channel to the head output, so the head learns a day-over-day change
    value_skip: bool = True
    # zero-initialise the output head: with value_skip every fresh model starts as persistence
    zero_init_head: bool = True

    def __post_init__(self):
        for name in ("d_model", "n_heads", "d_ff", "input_feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_encoder_layers < 0 or self.n_decoder_layers < 0:
            raise ConfigError("layer counts must be non-negative")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin(pos / 10000**(i/d)) on even columns, cos on odd ones."""
    if seq_len < 1 or d_model < 2:
        raise ValueError("positional encoding needs seq_len >= 1 and d_model >= 2")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    return np.where(np.arange(d_model) % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(n: int) -> np.ndarray:
    """``mask[q, k]`` is True when query ``q`` may not see key ``k`` (a later position)."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def attention(q, k, v, mask: np.ndarray | None = None, return_weights: bool = False):
    """Scaled dot-product attention over the last two axes.

    ``q`` is ``(..., Lq, d_k)``, ``k`` and ``v`` are ``(..., Lk, d_k)`` / ``(..., Lk, d_v)``.
    """
    q, k, v = ag._lift(q), ag._lift(k), ag._lift(v)
    if q.shape[-1] != k.shape[-1]:
        raise ag.ShapeError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    scores = ag.matmul(q, ag.transpose(k, _swap_last(k.ndim))) * (1.0 / np.sqrt(q.shape[-1]))
    weights = ag.softmax(scores, axis=-1, mask=mask)
    out = ag.matmul(weights, v)
    return (out, weights) if return_weights else out


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return ag.transpose(ag.reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dk = x.shape
    return ag.reshape(ag.transpose(x, (0, 2, 1, 3)), (b, n, h * dk))


def multi_head_attention(x_q, x_kv, w_q, w_k, w_v, w_o, n_heads: int,
                         mask: np.ndarray | None = None) -> Tensor:
    """Project, split into heads, attend per head, concatenate, project by ``w_o``.

    ``x_q`` and ``x_kv`` are ``(batch, len, d_model)``.
    """
    x_q, x_kv = ag._lift(x_q), ag._lift(x_kv)
    d_model = x_q.shape[-1]
    if d_model % n_heads:
        raise ConfigError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
    q = _split_heads(ag.matmul(x_q, w_q), n_heads)
    k = _split_heads(ag.matmul(x_kv, w_k), n_heads)
    v = _split_heads(ag.matmul(x_kv, w_v), n_heads)
    return ag.matmul(_merge_heads(attention(q, k, v, mask)), w_o)


def ffn(h0, w1, b1, w2, b2) -> Tensor:
    return ag.matmul(ag.relu(ag.matmul(h0, w1) + b1), w2) + b2


class TransformerWeights:
    """Named parameter tensors of one encoder-decoder model, in a fixed order."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def names(self) -> list[str]:
        return list(self.params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise KeyError("parameter names do not match the model layout")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise ag.ShapeError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "TransformerWeights":
        d, f, F = config.d_model, config.d_ff, config.input_feature_dim
        params: dict[str, Tensor] = {}

        def uniform(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)

        def const(name, shape, value):
            params[name] = Tensor(np.full(shape, float(value)), requires_grad=True, name=name)

        def attn_block(prefix):
            for w in ("w_q", "w_k", "w_v", "w_o"):
                uniform(f"{prefix}.{w}", (d, d), d)

        def norm(prefix):
            const(f"{prefix}.gain", (d,), 1.0)
            const(f"{prefix}.bias", (d,), 0.0)

        def ffn_block(prefix):
            uniform(f"{prefix}.w1", (d, f), d)
            uniform(f"{prefix}.b1", (f,), d)
            uniform(f"{prefix}.w2", (f, d), f)
            uniform(f"{prefix}.b2", (d,), f)

        uniform("enc_embed.w", (F, d), F)
        uniform("enc_embed.b", (d,), F)
        uniform("dec_embed.w", (F, d), F)
        uniform("dec_embed.b", (d,), F)
        for i in range(config.n_encoder_layers):
            attn_block(f"enc{i}.self")
            norm(f"enc{i}.norm1")
            ffn_block(f"enc{i}.ffn")
            norm(f"enc{i}.norm2")
        for i in range(config.n_decoder_layers):
            attn_block(f"dec{i}.self")
            norm(f"dec{i}.norm1")
            attn_block(f"dec{i}.cross")
            norm(f"dec{i}.norm2")
            ffn_block(f"dec{i}.ffn")
            norm(f"dec{i}.norm3")
        if config.zero_init_head:
            const("head.w", (d, 1), 0.0)
            const("head.b", (1,), 0.0)
        else:
            uniform("head.w", (d, 1), d)
            uniform("head.b", (1,), d)
        return cls(config, params)


class Seq2SeqTransformer:
    """Encoder-decoder transformer mapping feature rows to one value per decoder position."""

    def __init__(self, config: ModelConfig, seed: int = 0, weights: TransformerWeights | None = None):
        self.config = config
        self.weights = weights or TransformerWeights.initialize(config, np.random.default_rng(seed))

    def parameters(self) -> list[Tensor]:
        return list(self.weights)

    def embed(self, x, which: str) -> Tensor:
        x = ag._lift(x)
        h = ag.matmul(x, self.weights[f"{which}_embed.w"]) + self.weights[f"{which}_embed.b"]
        return h + positional_encoding(x.shape[-2], self.config.d_model)

    def encoder_forward(self, h: Tensor) -> Tensor:
        w, n_heads = self.weights, self.config.n_heads
        for i in range(self.config.n_encoder_layers):
            p = f"enc{i}"
            a = multi_head_attention(h, h, w[f"{p}.self.w_q"], w[f"{p}.self.w_k"],
                                     w[f"{p}.self.w_v"], w[f"{p}.self.w_o"], n_heads)
            h0 = ag.layer_norm(a + h, w[f"{p}.norm1.gain"], w[f"{p}.norm1.bias"])
            f = ffn(h0, w[f"{p}.ffn.w1"], w[f"{p}.ffn.b1"], w[f"{p}.ffn.w2"], w[f"{p}.ffn.b2"])
            h = ag.layer_norm(f + h0, w[f"{p}.norm2.gain"], w[f"{p}.norm2.bias"])
        return h

    def decoder_forward(self, h: Tensor, memory: Tensor) -> Tensor:
        w, n_heads = self.weights, self.config.n_heads
        mask = causal_mask(h.shape[-2])
        for i in range(self.config.n_decoder_layers):
            p = f"dec{i}"
            a = multi_head_attention(h, h, w[f"{p}.self.w_q"], w[f"{p}.self.w_k"],
                                     w[f"{p}.self.w_v"], w[f"{p}.self.w_o"], n_heads, mask)
            h1 = ag.layer_norm(a + h, w[f"{p}.norm1.gain"], w[f"{p}.norm1.bias"])
            c = multi_head_attention(h1, memory, w[f"{p}.cross.w_q"], w[f"{p}.cross.w_k"],
                                     w[f"{p}.cross.w_v"], w[f"{p}.cross.w_o"], n_heads)
            h2 = ag.layer_norm(c + h1, w[f"{p}.norm2.gain"], w[f"{p}.norm2.bias"])
            f = ffn(h2, w[f"{p}.ffn.w1"], w[f"{p}.ffn.b1"], w[f"{p}.ffn.w2"], w[f"{p}.ffn.b2"])
            h = ag.layer_norm(f + h2, w[f"{p}.norm3.gain"], w[f"{p}.norm3.bias"])
        return h

    def forward(self, enc_x, dec_x) -> Tensor:
        """``enc_x``: ``(B, Le, F)``; ``dec_x``: ``(B, Ld, F)``; returns ``(B, Ld)``.

        Position ``p`` of the output is the forecast for the day after decoder row ``p``.
        """
        enc_x, dec_x = ag._lift(enc_x), ag._lift(dec_x)
        if enc_x.ndim == 2:
            enc_x = ag.reshape(enc_x, (1,) + enc_x.shape)
        if dec_x.ndim == 2:
            dec_x = ag.reshape(dec_x, (1,) + dec_x.shape)
        memory = self.encoder_forward(self.embed(enc_x, "enc"))
        h = self.decoder_forward(self.embed(dec_x, "dec"), memory)
        out = ag.matmul(h, self.weights["head.w"]) + self.weights["head.b"]
        out = ag.reshape(out, out.shape[:-1])
        if self.config.value_skip:
            out = out + dec_x.data[..., 0]
        return out

    def predict(self, enc_x: np.ndarray, dec_x: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.forward(enc_x, dec_x).data
