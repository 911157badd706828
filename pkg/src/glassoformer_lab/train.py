"""Training loop shared by the transformer variants and the CNN baseline."""
from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .attention import pruning_rate
from .model import FaultWindow, eval_loss, loss_and_grads
from .numerics import NumericalError, Rng, Tensor
from .rgsm import (
    DescentRecord,
    LipschitzEstimate,
    PenaltySpec,
    RgsmState,
    estimate_lipschitz,
    lr_schedule,
    monitor_descent,
    rgsm_step,
)

log = logging.getLogger(__name__)

MODEL_KINDS = ("glasso", "lasso", "dense", "cnn")
PENALTY_OF = {"glasso": "group-lasso", "lasso": "lasso", "dense": "none", "cnn": "none"}


@dataclass
class OptimConfig:
    mode: str = "adam"
    lr: float = 1e-4
    lr_decay: float = 0.8
    decay_every: int = 10
    lr_rule: str = "schedule"  # or "lipschitz": lr = lr_fraction * 2/(beta + L_ip) each epoch
    lr_fraction: float = 0.5
    beta: float = 0.9
    lam: float = 0.01
    u_threshold: str = "lambda/beta"
    batch_size: int = 30
    max_epochs: int = 80
    patience: int = 30
    lip_samples: int = 2
    lip_radius: float = 1e-2
    lip_power_iters: int = 5
    prune_threshold: float = 1e-5

    def __post_init__(self):
        if self.mode not in ("gd", "adam"):
            raise ValueError(f"optimizer mode must be gd or adam, got {self.mode!r}")
        if self.lr_rule not in ("schedule", "lipschitz"):
            raise ValueError(f"lr_rule must be schedule or lipschitz, got {self.lr_rule!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_mse: float
    pruning_rate: float
    lip: float
    time_s: float


@dataclass
class TrainResult:
    model: object  # deployed best-validation model
    history: list[EpochLog]
    monitor: list[DescentRecord]
    best_epoch: int
    best_val: float
    full_batch: bool
    stopped_early: bool = False
    lipschitz: list[LipschitzEstimate] = field(default_factory=list)


def penalty_for(model, kind: str, lam: float) -> PenaltySpec:
    pk = PENALTY_OF[kind]
    return PenaltySpec(pk, lam if pk != "none" else 0.0, list(model.group_params()) if pk != "none" else [])


def deployed(model, state: RgsmState):
    """Copy of ``model`` whose penalised matrices are replaced by ``u``.

    ``u`` carries the exact zeros produced by the proximal map.
    """
    out = model.copy()
    for name, u in state.u.items():
        out.params[name] = Tensor(u, name=name)
    return out


def model_pruning_rate(model, threshold: float) -> float:
    if not hasattr(model, "masks"):
        return 0.0
    masks = [m for blk in model.masks(threshold).values() for m in blk]
    return pruning_rate(masks)


def _flat_grad_fn(model, windows):
    names = list(model.params)
    shapes = [model.params[n].shape for n in names]
    sizes = [int(np.prod(s)) for s in shapes]

    def set_flat(v):
        off = 0
        for n, s, k in zip(names, shapes, sizes):
            model.params[n].data[...] = v[off:off + k].reshape(s)
            off += k

    def grad_fn(v):
        saved = np.concatenate([model.params[n].data.reshape(-1) for n in names])
        set_flat(v)
        _, g = loss_and_grads(model, windows)
        set_flat(saved)
        return np.concatenate([g[n].reshape(-1) for n in names])

    return grad_fn


def fit(model, train: list[FaultWindow], val: list[FaultWindow], optim: OptimConfig, kind: str,
        seed: int, monitor: bool = True) -> TrainResult:
    """Train ``model`` in place with RGSM (plain Adam/GD when unpenalised).

    Returns the deployed model from the epoch with the lowest validation MSE.
    With ``monitor`` every step also re-evaluates the batch loss after the
    update so the descent inequality can be checked.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if not train:
        raise ValueError("no training windows")
    penalty = penalty_for(model, kind, optim.lam)
    beta = optim.beta if penalty.kind != "none" else 0.0
    state = RgsmState(params=OrderedDict((n, t.data) for n, t in model.params.items()), penalty=penalty,
                      beta=beta, lr=optim.lr, mode=optim.mode, u_threshold=optim.u_threshold)
    rng = Rng(seed).child(3)
    full_batch = optim.batch_size >= len(train)
    history: list[EpochLog] = []
    lips: list[LipschitzEstimate] = []
    best_val, best_epoch, best_model = math.inf, -1, None
    bad_epochs = 0
    last_finite = math.nan
    stopped = False
    probe = train[: optim.batch_size]
    for epoch in range(optim.max_epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, optim.lr, optim.lr_decay, optim.decay_every)
        lip = math.nan
        if optim.mode == "gd":
            est = estimate_lipschitz(_flat_grad_fn(model, probe), state.flat(), optim.lip_samples,
                                     optim.lip_radius, rng.child(epoch), optim.lip_power_iters)
            lips.append(est)
            lip = est.value
            if optim.lr_rule == "lipschitz":
                lr = optim.lr_fraction * est.eta_bound(beta)
        state.lr = lr
        order = np.arange(len(train)) if full_batch else rng.permutation(len(train))
        losses = []
        for b0 in range(0, len(train), optim.batch_size):
            batch = [train[i] for i in order[b0:b0 + optim.batch_size]]
            try:
                f_t, grads = loss_and_grads(model, batch)
                if not math.isfinite(f_t):
                    raise NumericalError("non-finite loss")
                state.update_u()
                L_before = state.relaxed(f_t)
                v_before = state.flat() if monitor else None
                rgsm_step(state, grads)
                if monitor:
                    monitor_descent(state, v_before, L_before, eval_loss(model, batch), lip)
            except NumericalError as exc:
                raise NumericalError(f"training diverged at epoch {epoch} (last finite loss {last_finite}): {exc}") from exc
            last_finite = f_t
            losses.append(f_t)
        state.update_u()
        dep = deployed(model, state)
        val_mse = eval_loss(dep, val) if val else float(np.mean(losses))
        history.append(EpochLog(epoch, lr, float(np.mean(losses)), val_mse,
                                model_pruning_rate(dep, optim.prune_threshold), lip, time.perf_counter() - t0))
        log.info("epoch %d lr=%.3g train=%.6g val=%.6g", epoch, lr, history[-1].train_loss, val_mse)
        if val_mse < best_val:
            best_val, best_epoch, best_model = val_mse, epoch, dep
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= optim.patience:
                stopped = True
                break
    return TrainResult(best_model, history, state.monitor, best_epoch, best_val, full_batch, stopped, lips)
