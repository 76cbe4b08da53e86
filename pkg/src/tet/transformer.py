"""Multi-head self-attention encoder shared by all encoding passes.

Post-layer-norm blocks: x = LN(x + Attn(x)); x = LN(x + FFN(x)). Inputs are
already word+position embeddings of shape (batch, seq, dim); the boolean
mask marks real positions, and masked positions neither attend nor are
attended to (their key logits are -inf, which max-subtracted softmax turns
into exact zero weights).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParameterStore

__all__ = ["EncoderConfig", "EncoderParams", "init_encoder_params", "encode", "cls_of"]


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 3
    num_heads: int = 4
    model_dim: int = 100
    ffn_dim: int = 480
    dropout: float = 0.2
    max_seq_len: int = 512
    activation: str = "relu"  # or "gelu"
    embed_dropout: bool = True

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.activation not in ("relu", "gelu"):
            raise ValueError(f"unknown activation: {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


class EncoderParams:
    """Named views into the store for one encoder's layers."""

    def __init__(self, store: ParameterStore, prefix: str, cfg: EncoderConfig):
        self.layers = []
        for i in range(cfg.num_layers):
            base = f"{prefix}.layer{i}"
            self.layers.append(
                {
                    key: store[f"{base}.{key}"]
                    for key in (
                        "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                        "w1", "b1", "w2", "b2",
                        "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
                    )
                }
            )


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_encoder_params(
    store: ParameterStore, prefix: str, cfg: EncoderConfig, rng: np.random.Generator
) -> EncoderParams:
    d, f = cfg.model_dim, cfg.ffn_dim
    for i in range(cfg.num_layers):
        base = f"{prefix}.layer{i}"
        for name in ("wq", "wk", "wv", "wo"):
            store.add(f"{base}.{name}", _xavier(rng, d, d))
            store.add(f"{base}.{name.replace('w', 'b')}", np.zeros(d))
        store.add(f"{base}.w1", _xavier(rng, d, f))
        store.add(f"{base}.b1", np.zeros(f))
        store.add(f"{base}.w2", _xavier(rng, f, d))
        store.add(f"{base}.b2", np.zeros(d))
        store.add(f"{base}.ln1_gain", np.ones(d))
        store.add(f"{base}.ln1_bias", np.zeros(d))
        store.add(f"{base}.ln2_gain", np.ones(d))
        store.add(f"{base}.ln2_bias", np.zeros(d))
    return EncoderParams(store, prefix, cfg)


def _attention(x: Tensor, mask_bias: Tensor, layer: dict, cfg: EncoderConfig,
               training: bool, rng) -> Tensor:
    b, s, d = x.shape
    h, hd = cfg.num_heads, cfg.head_dim

    def split_heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, s, h, hd)), (0, 2, 1, 3))

    q = split_heads(ad.add(ad.matmul(x, layer["wq"]), layer["bq"]))
    k = split_heads(ad.add(ad.matmul(x, layer["wk"]), layer["bk"]))
    v = split_heads(ad.add(ad.matmul(x, layer["wv"]), layer["bv"]))

    logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    weights = ad.softmax(ad.add(logits, mask_bias), axis=-1)
    weights = ad.dropout(weights, cfg.dropout, rng, training)
    ctx = ad.matmul(weights, v)  # (b, h, s, hd)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, s, d))
    return ad.add(ad.matmul(ctx, layer["wo"]), layer["bo"])


def encode(
    inputs: Tensor,
    mask: np.ndarray,
    cfg: EncoderConfig,
    params: EncoderParams,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Contextualize a batch of embedded sequences; output shape equals input shape."""
    if inputs.ndim != 3:
        raise ValueError(f"inputs must be (batch, seq, dim), got {inputs.shape}")
    b, s, d = inputs.shape
    if s == 0:
        raise ValueError("cannot encode an empty sequence")
    if s > cfg.max_seq_len:
        raise ValueError(f"sequence length {s} exceeds max_seq_len {cfg.max_seq_len}")
    if d != cfg.model_dim:
        raise ValueError(f"input dim {d} != model_dim {cfg.model_dim}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (b, s):
        raise ValueError(f"mask shape {mask.shape} does not match inputs {(b, s)}")
    if not mask[:, 0].all():
        raise ValueError("first position of every sequence must be real")

    neg = np.array(-np.inf, dtype=inputs.dtype)
    zero = np.array(0.0, dtype=inputs.dtype)
    mask_bias = ad.constant(np.where(mask, zero, neg).reshape(b, 1, 1, s))

    act = ad.relu if cfg.activation == "relu" else ad.gelu
    x = inputs
    if cfg.embed_dropout:
        x = ad.dropout(x, cfg.dropout, rng, training)
    for layer in params.layers:
        attn = _attention(x, mask_bias, layer, cfg, training, rng)
        attn = ad.dropout(attn, cfg.dropout, rng, training)
        x = ad.layer_norm(ad.add(x, attn), layer["ln1_gain"], layer["ln1_bias"])
        ff = ad.add(ad.matmul(act(ad.add(ad.matmul(x, layer["w1"]), layer["b1"])), layer["w2"]), layer["b2"])
        ff = ad.dropout(ff, cfg.dropout, rng, training)
        x = ad.layer_norm(ad.add(x, ff), layer["ln2_gain"], layer["ln2_bias"])
    return x


def cls_of(outputs: Tensor) -> Tensor:
    """Row 0 of every sequence: (batch, seq, dim) -> (batch, dim)."""
    if outputs.ndim != 3 or outputs.shape[1] == 0:
        raise ValueError("cls_of expects nonempty (batch, seq, dim) outputs")
    return ad.getitem(outputs, (slice(None), 0))
