"""Finite-difference verification of tape gradients.

Central differences around the current parameter values, compared against
one analytic backward pass. Meant to run on float64 parameters with all
stochastic pieces (dropout, sampling) frozen; the model function must be a
deterministic map from parameter values to a scalar loss.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .autodiff import Tape, Tensor
from .optim import ParameterStore

__all__ = ["GradCheckFailure", "CoordinateError", "grad_check"]


class GradCheckFailure(RuntimeError):
    """The model produced a non-finite loss during checking."""


class CoordinateError:
    __slots__ = ("name", "index", "analytic", "numeric", "rel_error")

    def __init__(self, name, index, analytic, numeric, rel_error):
        self.name = name
        self.index = index
        self.analytic = analytic
        self.numeric = numeric
        self.rel_error = rel_error

    def __repr__(self):
        return (
            f"CoordinateError({self.name}[{self.index}] analytic={self.analytic:.3e} "
            f"numeric={self.numeric:.3e} rel={self.rel_error:.3e})"
        )


def _loss_value(model_fn: Callable[[], Tensor]) -> float:
    out = model_fn()
    val = float(out.data)
    if not np.isfinite(val):
        raise GradCheckFailure(f"model produced a non-finite loss: {val}")
    return val


def grad_check(
    model_fn: Callable[[], Tensor],
    params: ParameterStore,
    step: float = 1e-5,
    max_coords_per_param: int = 25,
    rng: np.random.Generator | None = None,
    exclude: Callable[[str, tuple], bool] | None = None,
) -> tuple[float, CoordinateError | None]:
    """Return the max relative error over sampled coordinates and its witness.

    Relative error per coordinate is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-12). ``exclude(name, index)`` lets callers
    skip coordinates sitting on kinks (e.g. an exactly-zero relu input).
    """
    if rng is None:
        rng = np.random.default_rng(0)

    params.zero_grad()
    with Tape() as tape:
        out = model_fn()
    if not np.isfinite(float(out.data)):
        raise GradCheckFailure(f"model produced a non-finite loss: {float(out.data)}")
    tape.backward(out)
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    worst: CoordinateError | None = None
    max_err = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords: Iterable[int] = range(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        ga = analytic[name].reshape(-1)
        for i in coords:
            index = np.unravel_index(i, p.data.shape)
            if exclude is not None and exclude(name, index):
                continue
            orig = flat[i]
            flat[i] = orig + step
            up = _loss_value(model_fn)
            flat[i] = orig - step
            down = _loss_value(model_fn)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(ga[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            if err > max_err:
                max_err = err
                worst = CoordinateError(name, index, a, numeric, err)
    return max_err, worst
