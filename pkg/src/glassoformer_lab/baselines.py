"""Comparison predictors: Prony's method and a causal 1D-CNN."""
from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .model import FaultWindow, mask_future
from .numerics import Rng, ShapeError, Tensor, ops


class PronyError(ValueError):
    pass


@dataclass
class PronyModel:
    order: int
    poles: np.ndarray  # complex, (p,)
    amplitudes: np.ndarray  # complex, (p,)
    n_fit: int  # samples used in the fit; x_hat(n) indexes from the first of them

    def reconstruct(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        return (self.amplitudes[None, :] * self.poles[None, :] ** n[:, None]).sum(axis=1)


@dataclass
class PronyForecast:
    values: np.ndarray
    unstable: bool
    max_imag: float


def _companion(a: np.ndarray) -> np.ndarray:
    """Companion matrix of ``z^p + a_1 z^(p-1) + ... + a_p``."""
    p = a.size
    C = np.zeros((p, p))
    C[0, :] = -a
    if p > 1:
        C[1:, :-1] = np.eye(p - 1)
    return C


def prony_fit(x, p: int, strict: bool = True, rcond: float = 1e-13) -> PronyModel:
    """Fit ``x(n) ~ sum_k c_k z_k^n`` with ``p`` exponentials.

    Linear-prediction coefficients come from least squares on the Hankel
    system, poles from the eigenvalues of the companion matrix, amplitudes
    from a Vandermonde least-squares fit.  With ``strict`` a numerically
    rank-deficient prediction system raises; otherwise the minimum-norm
    solution is used.
    """
    x = np.asarray(x, dtype=float)
    N = x.size
    if p < 1:
        raise PronyError("order must be >= 1")
    if N < 2 * p + 1:
        raise PronyError(f"need at least 2p+1={2 * p + 1} samples for order {p}, got {N}")
    A = np.column_stack([x[p - k: N - k] for k in range(1, p + 1)])
    b = -x[p:]
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int((sv > rcond * sv[0]).sum()) if sv[0] > 0 else 0
    if strict and rank < p:
        raise PronyError(f"prediction system has rank {rank} < order {p}; try order <= {max(rank, 1)}")
    a = np.linalg.lstsq(A, b, rcond=None if strict else rcond)[0]
    poles = np.linalg.eigvals(_companion(a))
    V = poles[None, :] ** np.arange(N)[:, None]
    amps = np.linalg.lstsq(V, x.astype(complex), rcond=None)[0]
    return PronyModel(p, poles, amps, N)


def prony_predict(model: PronyModel, horizon: int, start: int | None = None) -> PronyForecast:
    """Evaluate the fitted exponentials at ``start .. start+horizon-1``.

    ``start`` defaults to the first sample after the fit window.
    """
    start = model.n_fit if start is None else start
    vals = model.reconstruct(np.arange(start, start + horizon))
    imag = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
    unstable = bool(np.any(np.abs(model.poles) > 1.0 + 1e-12))
    return PronyForecast(vals.real.copy(), unstable, imag)


def prony_forecast_window(window: FaultWindow, order: int, fit_start: int) -> np.ndarray:
    """Forecast of the target channel from samples ``fit_start .. t_f``.

    Returns the prediction for ``t_f .. L-1`` (same horizon as the network);
    the value at ``t_f`` is the model's reconstruction, not the observation.
    """
    t_f = window.t_f
    obs = window.x_de[0, fit_start: t_f + 1]
    model = prony_fit(obs, order, strict=False)
    L = window.x_de.shape[1]
    fc = prony_predict(model, L - t_f, start=t_f - fit_start)
    return fc.values


def prony_order_sweep(windows: list[FaultWindow], orders, fit_start: int) -> dict[int, float]:
    """Mean squared error per order; orders that cannot be fitted are skipped."""
    out = {}
    for p in orders:
        errs = []
        try:
            for w in windows:
                pred = prony_forecast_window(w, p, fit_start)
                errs.append(np.mean((pred - w.y) ** 2))
        except (PronyError, np.linalg.LinAlgError):
            continue
        mse = float(np.mean(errs))
        if math.isfinite(mse):
            out[p] = mse
    return out


# -- 1D-CNN ---------------------------------------------------------------

@dataclass
class CnnConfig:
    n_signals: int = 5
    seq_len: int = 64
    t_f: int = 16
    layers: int = 4
    channels: int = 32
    kernel_size: int = 3

    @property
    def horizon(self) -> int:
        return self.seq_len - self.t_f

    @property
    def receptive_field(self) -> int:
        return 1 + self.layers * (self.kernel_size - 1)


class Cnn1dModel:
    """Causal conv stack with ELU, then a linear map from the observed features to the horizon."""

    def __init__(self, config: CnnConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params
        exp = self._shapes(config)
        if list(exp) != list(params) or any(params[k].shape != s for k, s in exp.items()):
            raise ShapeError("CNN parameter set does not match its config")

    @staticmethod
    def _shapes(c: CnnConfig) -> "OrderedDict[str, tuple[int, ...]]":
        s: OrderedDict[str, tuple[int, ...]] = OrderedDict()
        c_in = c.n_signals + 1
        for i in range(c.layers):
            s[f"conv{i}"] = (c.channels, c_in, c.kernel_size)
            c_in = c.channels
        s["full"] = (c.channels * (c.t_f + 1), c.horizon)
        return s

    @classmethod
    def init(cls, config: CnnConfig, seed: int) -> "Cnn1dModel":
        rng = Rng(seed)
        p: OrderedDict[str, Tensor] = OrderedDict()
        for i, (name, shp) in enumerate(cls._shapes(config).items()):
            fan_in = int(np.prod(shp[1:])) if len(shp) == 3 else shp[0]
            p[name] = Tensor(rng.child(i).normal(shp, scale=1.0 / math.sqrt(fan_in)), name=name)
        return cls(config, p)

    def forward(self, window: FaultWindow, mode: str = "dense", masks=None) -> Tensor:
        c = self.config
        h = ops.slice_rows(mask_future(Tensor.wrap(window.x_de), window.t_f), 0, c.n_signals + 1)
        for i in range(c.layers):
            h = ops.elu(ops.conv1d(h, self.params[f"conv{i}"]))
        feat = ops.reshape(ops.slice_cols(h, 0, c.t_f + 1), (1, c.channels * (c.t_f + 1)))
        return ops.reshape(ops.matmul(feat, self.params["full"]), (c.horizon,))

    def predict(self, window: FaultWindow, mode: str = "dense", masks=None) -> np.ndarray:
        return self.forward(window).data.copy()

    def forward_loss(self, window: FaultWindow, mode: str = "dense", masks=None):
        y_hat = self.forward(window)
        return y_hat, ops.mse(y_hat, Tensor.wrap(window.y))

    def group_params(self) -> list[str]:
        return []

    def count_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in self.params.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()

    def copy(self) -> "Cnn1dModel":
        return Cnn1dModel(self.config, OrderedDict((n, Tensor(t.data, name=n)) for n, t in self.params.items()))


def cnn_train(dataset, config: CnnConfig, optim, seed: int = 0):
    """Adam on MSE with the main model's schedule; returns a ``TrainResult``."""
    from .train import fit

    model = Cnn1dModel.init(config, seed)
    return fit(model, dataset.windows("train"), dataset.windows("val"), optim, "cnn", seed)


def cnn_predict(model: Cnn1dModel, window: FaultWindow) -> np.ndarray:
    return model.predict(window)
