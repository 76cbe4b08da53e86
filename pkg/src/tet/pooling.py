"""Exponentially weighted score pooling and the BCE / FNA / SFNA losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ScoreSet

__all__ = [
    "exp_weighted_pool",
    "to_probabilities",
    "sfna_weight",
    "fna_weight",
    "LossConfig",
    "loss",
    "PROB_EPS",
]

PROB_EPS = 1e-7


def exp_weighted_pool(scores: ScoreSet | Tensor, alpha: float) -> Tensor:
    """Pool per-source score rows (k, L) into one (L,) vector.

    Per type independently: w_i = softmax_i(alpha * S_i), pooled = sum_i w_i S_i.
    alpha=0 is the arithmetic mean; alpha -> +inf approaches the max.
    """
    sources = scores.sources if isinstance(scores, ScoreSet) else scores
    if sources.ndim != 2 or sources.shape[0] == 0:
        raise ValueError("pooling needs a nonempty (sources, types) matrix")
    weights = ad.softmax(ad.scale(sources, alpha), axis=0)
    return ad.sum_(ad.mul(weights, sources), axis=0)


def to_probabilities(pooled: Tensor) -> Tensor:
    """Elementwise sigmoid onto (0, 1)."""
    return ad.sigmoid(pooled)


def sfna_weight(x):
    """Steeper false-negative-aware weight: 3x - 2x^2 for x <= 0.5, else
    x - 2x^2 + 1. Continuous, symmetric about 0.5, peaks at 1, zero at 0 and 1."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("sfna_weight domain is [0, 1]")
    low = 3.0 * arr - 2.0 * arr * arr
    high = arr - 2.0 * arr * arr + 1.0
    out = np.where(arr <= 0.5, low, high)
    return float(out) if np.isscalar(x) else out


def fna_weight(x):
    """Default false-negative-aware weight 4x(1-x); same bump shape, shallower."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("fna_weight domain is [0, 1]")
    out = 4.0 * arr * (1.0 - arr)
    return float(out) if np.isscalar(x) else out


@dataclass(frozen=True)
class LossConfig:
    kind: str = "sfna"  # bce | fna | sfna
    fna_weight: Callable[[np.ndarray], np.ndarray] | None = None
    stopgrad_weight: bool = True

    def __post_init__(self):
        if self.kind not in ("bce", "fna", "sfna"):
            raise ValueError(f"unknown loss kind: {self.kind!r}")


def _sfna_weight_op(s: Tensor) -> Tensor:
    mask = ad.constant((s.data <= 0.5).astype(s.dtype))
    sq = ad.mul(s, s)
    low = ad.sub(ad.scale(s, 3.0), ad.scale(sq, 2.0))
    high = ad.add_const(ad.sub(s, ad.scale(sq, 2.0)), 1.0)
    one = ad.constant(np.ones_like(mask.data))
    return ad.add(ad.mul(mask, low), ad.mul(ad.sub(one, mask), high))


def _fna_weight_op(s: Tensor) -> Tensor:
    one = ad.constant(np.ones(s.shape, dtype=s.data.dtype))
    return ad.scale(ad.mul(s, ad.sub(one, s)), 4.0)


def _negative_weight(s: Tensor, cfg: LossConfig) -> Tensor | None:
    """Weight applied to negative log-terms; None means weight 1 (BCE)."""
    if cfg.kind == "bce":
        return None
    if cfg.kind == "fna" and cfg.fna_weight is not None:
        # custom callables operate on raw values and are always stop-gradient
        return ad.constant(cfg.fna_weight(s.data).astype(s.dtype))
    src = ad.detach(s) if cfg.stopgrad_weight else s
    return _sfna_weight_op(src) if cfg.kind == "sfna" else _fna_weight_op(src)


def loss(probabilities: Tensor, labels: np.ndarray, cfg: LossConfig = LossConfig()) -> Tensor:
    """Per-entity loss: -sum log(s) over asserted types, -sum w(s') log(1-s')
    over all other types.

    Probabilities are clamped to [1e-7, 1-1e-7] before the logs. The weight
    w is constant during differentiation unless ``stopgrad_weight`` is off.
    """
    labels = np.asarray(labels)
    if labels.shape != probabilities.shape:
        raise ValueError(f"label row shape {labels.shape} != scores {probabilities.shape}")
    s = ad.clip(probabilities, PROB_EPS, 1.0 - PROB_EPS)
    pos_mask = ad.constant(labels.astype(s.dtype))
    neg_mask = ad.constant((1 - labels).astype(s.dtype))

    pos_term = ad.sum_(ad.mul(pos_mask, ad.log(s)))

    one = ad.constant(np.ones(s.shape, dtype=s.data.dtype))
    log_one_minus = ad.log(ad.sub(one, s))
    w = _negative_weight(s, cfg)
    neg_inner = log_one_minus if w is None else ad.mul(w, log_one_minus)
    neg_term = ad.sum_(ad.mul(neg_mask, neg_inner))

    return ad.neg(ad.add(pos_term, neg_term))
