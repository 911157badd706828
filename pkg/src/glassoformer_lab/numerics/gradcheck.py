"""Central-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def numerical_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                       coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``; only ``coords`` if given."""
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    out = np.zeros(flat.size)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def analytic_gradient(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        y = f(x)
    backward(y, tape)
    return np.zeros(x.shape) if x.grad is None else x.grad.copy()


def check_gradient(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central| / max(1, |central|).

    Non-smooth points are not special-cased: a kink shows up as a large error.
    """
    ana = analytic_gradient(f, x)
    num = numerical_gradient(f, x, h)
    return float(np.max(np.abs(ana - num) / np.maximum(1.0, np.abs(num))))
