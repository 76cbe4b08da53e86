"""Trainable-parameter registry, Adam, and the warmup/decay learning-rate rule."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor

__all__ = ["ParameterStore", "AdamState", "adam_step", "lr_at_epoch"]


class ParameterStore:
    """Named trainable tensors with stable iteration order.

    Insertion order is the checkpoint serialization order, so it must be
    deterministic across runs that build the same model.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        if missing:
            raise ValueError(f"missing parameter values: {sorted(missing)}")
        for name, t in self._params.items():
            arr = np.asarray(values[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self, store: ParameterStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}


def adam_step(store: ParameterStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place; reads ``param.grad``.

    Parameters whose ``grad`` is ``None`` are treated as zero-gradient.
    """
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in store.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - (lr / c1) * m / (np.sqrt(v / c2) + eps)


def lr_at_epoch(epoch: int, base: float = 1e-3, warmup: int = 50) -> float:
    """Constant ``base`` for ``warmup`` epochs, then divide by 5 at each decay
    point, doubling the inter-decay interval every time (50, 150, 350, 750, ...
    for warmup=50)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = base
    interval = warmup
    point = warmup
    while epoch >= point:
        lr /= 5.0
        interval *= 2
        point += interval
    return lr
