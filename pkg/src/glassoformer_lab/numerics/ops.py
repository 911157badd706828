"""Differentiable primitives.

Every op takes and returns :class:`Tensor`.  Shapes are explicit: binary
elementwise ops require identical shapes and the only broadcast allowed is
tensor-with-Python-scalar.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, record_op


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return record_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return record_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record_op(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return record_op(a.data + float(c), (a,), lambda g: (g,))


def add_n(ts: list[Tensor]) -> Tensor:
    """Sum of equally shaped tensors."""
    if not ts:
        raise ValueError("add_n of an empty list")
    for t in ts[1:]:
        _same_shape(ts[0], t, "add_n")
    out = ts[0].data.copy()
    for t in ts[1:]:
        out += t.data
    return record_op(out, tuple(ts), lambda g: tuple(g for _ in ts))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return record_op(ad @ bd, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")
    return record_op(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return record_op(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def sum_all(a: Tensor) -> Tensor:
    shp = a.shape
    return record_op(np.array(a.data.sum()), (a,), lambda g: (np.full(shp, np.asarray(g).item()),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    shp = a.shape
    return record_op(np.array(a.data.sum() / n), (a,), lambda g: (np.full(shp, np.asarray(g).item() / n),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return record_op(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def abs_(a: Tensor) -> Tensor:
    """|a| with subgradient sign(a) (0 at 0); not differentiable at 0."""
    ad = a.data
    return record_op(np.abs(ad), (a,), lambda g: (np.sign(ad) * g,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by record_op
        out = np.exp(a.data)
    return record_op(out, (a,), lambda g: (g * out,))


def elu(a: Tensor) -> Tensor:
    """u for u >= 0, exp(u) - 1 otherwise.  Derivative at 0 is taken as 1."""
    ad = a.data
    neg = ad < 0
    e = np.exp(np.where(neg, ad, 0.0))
    out = np.where(neg, e - 1.0, ad)
    deriv = np.where(neg, e, 1.0)
    return record_op(out, (a,), lambda g: (g * deriv,))


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return record_op(s, (a,), back)


def concat_rows(ts: list[Tensor]) -> Tensor:
    """Stack 2-D tensors with equal column counts on top of each other."""
    cols = {t.shape[1] for t in ts}
    if len(cols) != 1 or any(t.data.ndim != 2 for t in ts):
        raise ShapeError(f"concat_rows: incompatible shapes {[t.shape for t in ts]}")
    sizes = [t.shape[0] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return record_op(np.concatenate([t.data for t in ts], axis=0), tuple(ts), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols needs a 2-D tensor, got {a.shape}")
    shp = a.shape
    if not 0 <= start <= stop <= shp[1]:
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for {shp}")

    def back(g):
        full = np.zeros(shp)
        full[:, start:stop] = g
        return (full,)

    return record_op(a.data[:, start:stop].copy(), (a,), back)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_rows needs a 2-D tensor, got {a.shape}")
    shp = a.shape
    if not 0 <= start <= stop <= shp[0]:
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {shp}")

    def back(g):
        full = np.zeros(shp)
        full[start:stop] = g
        return (full,)

    return record_op(a.data[start:stop].copy(), (a,), back)


def mask_cols_after(a: Tensor, t: int, rows: slice | None = None) -> Tensor:
    """Zero columns ``> t`` (optionally only in ``rows``); gradient is masked alike."""
    keep = np.ones(a.shape)
    keep[rows if rows is not None else slice(None), t + 1:] = 0.0
    return record_op(a.data * keep, (a,), lambda g: (g * keep,))


def mse(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape(pred, target, "mse")
    diff = pred.data - target.data
    n = diff.size
    return record_op(np.array((diff * diff).sum() / n), (pred, target),
                     lambda g: (2.0 * np.asarray(g).item() / n * diff, -2.0 * np.asarray(g).item() / n * diff))


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, pad_mode: str = "causal") -> Tensor:
    """Temporal convolution ``(C_in, L) * (C_out, C_in, K) -> (C_out, L)``.

    ``pad_mode="causal"`` puts K-1 zeros in front of the sequence so output
    ``t`` only sees inputs ``<= t``; ``"same"`` centres an odd kernel.
    Kernel tap ``k`` multiplies input ``t - (K-1) + k`` in causal mode, i.e. it
    is a cross-correlation as in the usual deep-learning convention.
    """
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise ShapeError(f"conv1d expects (C_in, L) and (C_out, C_in, K), got {x.shape}, {kernels.shape}")
    c_in, L = x.shape
    c_out, c_in_k, K = kernels.shape
    if c_in != c_in_k:
        raise ShapeError(f"conv1d: input has {c_in} channels, kernels expect {c_in_k}")
    if pad_mode == "causal":
        left, right = K - 1, 0
    elif pad_mode == "same":
        if K % 2 == 0:
            raise ShapeError("conv1d 'same' padding needs an odd kernel")
        left = right = (K - 1) // 2
    else:
        raise ValueError(f"unknown pad_mode {pad_mode!r}")
    if K > L + left + right:
        raise ShapeError(f"conv1d: kernel length {K} exceeds padded sequence {L + left + right}")

    xp = np.zeros((c_in, L + left + right))
    xp[:, left:left + L] = x.data
    # cols[k] is the (C_in, L) window seen by tap k
    cols = np.stack([xp[:, k:k + L] for k in range(K)])  # (K, C_in, L)
    w = kernels.data
    out = np.einsum("oik,kil->ol", w, cols, optimize=True)
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"conv1d bias must have shape ({c_out},), got {bias.shape}")
        out = out + bias.data[:, None]
    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def back(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k:k + L] += w[:, :, k].T @ g
            gx = gxp[:, left:left + L]
        gw = np.einsum("ol,kil->oik", g, cols, optimize=True) if kernels.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=1)

    return record_op(out, inputs, back)


def mean_of(ts: list[Tensor]) -> Tensor:
    """Elementwise average of equally shaped tensors."""
    return scale(add_n(ts), 1.0 / len(ts))


def dot_vec(a: Tensor, v: Tensor) -> Tensor:
    """``(m, n) @ (n,) -> (m, 1)`` convenience for per-position linear maps."""
    return matmul(a, reshape(v, (v.size, 1)))


__all__ = [
    "add", "sub", "mul", "scale", "add_scalar", "add_n", "matmul", "transpose", "reshape",
    "sum_all", "mean_all", "square", "abs_", "exp", "elu", "softmax_rows", "concat_rows",
    "slice_cols", "slice_rows", "mask_cols_after", "mse", "conv1d", "mean_of", "dot_vec", "as_tensor",
]
