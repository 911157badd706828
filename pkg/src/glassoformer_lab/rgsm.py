"""Relaxed group-wise splitting (RGSM) for group-Lasso-penalised training.

The objective is ``f(theta, w) + lam * ||w||_GL`` with one group per column
of each penalised matrix.  RGSM minimises the relaxation

    L_beta(theta, w, u) = f(theta, w) + lam * ||u||_GL + beta/2 * ||w - u||^2

by alternating a proximal update of ``u`` with a gradient step on
``(theta, w)`` that also pulls ``w`` toward ``u``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .numerics import NumericalError, Rng, ShapeError

PENALTY_KINDS = ("group-lasso", "lasso", "none")


@dataclass
class PenaltySpec:
    kind: str = "group-lasso"
    lam: float = 0.01
    groups: list[str] = field(default_factory=list)  # names of column-grouped parameters

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"penalty kind must be one of {PENALTY_KINDS}, got {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


# -- norms and proximal maps ---------------------------------------------

def gl_norm(ws: Iterable[np.ndarray] | np.ndarray) -> float:
    """Sum of column 2-norms over one matrix or an iterable of matrices."""
    if isinstance(ws, np.ndarray):
        ws = [ws]
    total = 0.0
    for w in ws:
        w = np.asarray(w, dtype=float)
        total += float(np.linalg.norm(w.reshape(w.shape[0], -1) if w.ndim > 1 else w[:, None], axis=0).sum())
    return total


def l1_norm(ws: Iterable[np.ndarray] | np.ndarray) -> float:
    if isinstance(ws, np.ndarray):
        ws = [ws]
    return float(sum(np.abs(w).sum() for w in ws))


def prox_gl(w_g: np.ndarray, lam: float) -> np.ndarray:
    """Block soft-thresholding ``w_g * max(||w_g|| - lam, 0) / ||w_g||``."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    w_g = np.asarray(w_g, dtype=float)
    nrm = float(np.linalg.norm(w_g))
    if nrm <= lam or nrm == 0.0:
        return np.zeros_like(w_g)
    return w_g * ((nrm - lam) / nrm)


def prox_gl_columns(w: np.ndarray, lam: float) -> np.ndarray:
    """``prox_gl`` applied to every column of ``w``."""
    nrm = np.linalg.norm(w, axis=0)
    factor = np.where(nrm > lam, (nrm - lam) / np.where(nrm > 0, nrm, 1.0), 0.0)
    return w * factor


def prox_lasso(w: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("lam must be >= 0")
    w = np.asarray(w, dtype=float)
    return np.sign(w) * np.maximum(np.abs(w) - lam, 0.0)


def penalty_value(kind: str, lam: float, us: Iterable[np.ndarray]) -> float:
    if kind == "group-lasso":
        return lam * gl_norm(list(us))
    if kind == "lasso":
        return lam * l1_norm(list(us))
    return 0.0


def relaxed_loss(f_val: float, w: Mapping[str, np.ndarray], u: Mapping[str, np.ndarray],
                 penalty: PenaltySpec, beta: float) -> float:
    """``f + lam * ||u|| + beta/2 * ||w - u||^2`` over the penalised parameters."""
    if set(w) != set(u):
        raise ShapeError("w and u cover different parameters")
    split = 0.0
    for k in w:
        if w[k].shape != u[k].shape:
            raise ShapeError(f"{k}: w{w[k].shape} vs u{u[k].shape}")
        d = w[k] - u[k]
        split += float((d * d).sum())
    return float(f_val) + penalty_value(penalty.kind, penalty.lam, (u[k] for k in sorted(u))) + 0.5 * beta * split


def lr_schedule(epoch: int, eta0: float = 1e-4, decay: float = 0.8, every: int = 10) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return eta0 * decay ** (epoch // every)


# -- optimiser state -------------------------------------------------------

@dataclass
class DescentRecord:
    step: int
    L_beta_before: float
    L_beta_after: float
    slack: float
    step_norm_sq: float
    eta: float
    mode: str


@dataclass
class RgsmState:
    """Live parameters, split variable ``u`` and optimiser moments.

    ``params`` maps names to arrays that are updated in place.  ``u`` holds
    the split variable for every penalised parameter.  ``u_threshold`` picks
    the prox threshold used for the ``u`` update: ``"lambda/beta"`` is the
    exact minimiser of ``L_beta`` over ``u``; ``"lambda"`` is the literal
    ``Prox_lam`` form.
    """

    params: dict[str, np.ndarray]
    penalty: PenaltySpec
    beta: float = 0.9
    lr: float = 1e-4
    mode: str = "adam"
    u_threshold: str = "lambda/beta"
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    t: int = 0
    u: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    monitor: list[DescentRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("gd", "adam"):
            raise ValueError(f"mode must be 'gd' or 'adam', got {self.mode!r}")
        if self.u_threshold not in ("lambda/beta", "lambda"):
            raise ValueError(f"u_threshold must be 'lambda/beta' or 'lambda', got {self.u_threshold!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        missing = [g for g in self.penalty.groups if g not in self.params]
        if missing:
            raise KeyError(f"penalised parameters not found: {missing}")
        if not self.u:
            self.update_u()

    @property
    def threshold(self) -> float:
        lam = self.penalty.lam
        if self.u_threshold == "lambda" or lam == 0.0:
            return lam
        if self.beta == 0.0:
            raise ValueError("u_threshold='lambda/beta' needs beta > 0 when lam > 0")
        return lam / self.beta

    def prox(self, w: np.ndarray) -> np.ndarray:
        kind = self.penalty.kind
        if kind == "none" or self.penalty.lam == 0.0:
            return w.copy()
        if kind == "group-lasso":
            return prox_gl_columns(w, self.threshold)
        return prox_lasso(w, self.threshold)

    def update_u(self) -> None:
        self.u = {g: self.prox(self.params[g]) for g in self.penalty.groups}

    def w(self) -> dict[str, np.ndarray]:
        return {g: self.params[g] for g in self.penalty.groups}

    def relaxed(self, f_val: float) -> float:
        return relaxed_loss(f_val, self.w(), self.u, self.penalty, self.beta)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].reshape(-1) for k in self.params])


def adam_direction(state: RgsmState, name: str, g: np.ndarray) -> np.ndarray:
    """Bias-corrected Adam direction; advances the moments for ``name``."""
    b1, b2 = state.adam_b1, state.adam_b2
    m = state.m.get(name)
    v = state.v.get(name)
    if m is None:
        m = np.zeros_like(g)
        v = np.zeros_like(g)
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * (g * g)
    state.m[name], state.v[name] = m, v
    m_hat = m / (1.0 - b1 ** state.t)
    v_hat = v / (1.0 - b2 ** state.t)
    return m_hat / (np.sqrt(v_hat) + state.adam_eps)


def rgsm_step(state: RgsmState, grads: Mapping[str, np.ndarray]) -> RgsmState:
    """One RGSM iteration, in place.

    ``u`` is refreshed from the current ``w`` first; then every parameter
    moves by ``-lr * direction`` and penalised ones additionally by
    ``-lr * beta * (w - u)``.  In adam mode the direction is the Adam
    direction of ``grad f``; the relaxation term is never preconditioned.
    """
    if set(grads) != set(state.params):
        raise ShapeError("gradient keys do not match parameters")
    for k, g in grads.items():
        if g.shape != state.params[k].shape:
            raise ShapeError(f"{k}: grad {g.shape} vs param {state.params[k].shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {k}")
    state.update_u()
    state.t += 1
    lr = state.lr
    pull = lr * state.beta
    for k, p in state.params.items():
        g = grads[k]
        d = adam_direction(state, k, g) if state.mode == "adam" else g
        new = p - lr * d
        if k in state.u:
            new -= pull * (p - state.u[k])
        p[...] = new
    return state


def plain_gd_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
    for k, p in params.items():
        p[...] = p - lr * grads[k]


def plain_adam_step(state: RgsmState, grads: Mapping[str, np.ndarray]) -> None:
    """Unpenalised Adam using the same moment bookkeeping as :func:`rgsm_step`."""
    state.t += 1
    for k, p in state.params.items():
        p[...] = p - state.lr * adam_direction(state, k, grads[k])


# -- descent monitor ----------------------------------------------------------

def descent_coefficient(lip: float, beta: float, eta: float) -> float:
    return lip / 2.0 + beta / 2.0 - 1.0 / eta


def monitor_descent(state: RgsmState, v_before: np.ndarray, L_before: float, f_after: float,
                    lip: float) -> DescentRecord:
    """Record ``L_beta(v^t,u^t)``, ``L_beta(v^{t+1},u^t)`` and the bound's slack.

    ``slack = L_before + coef * ||dv||^2 - L_after`` with
    ``coef = L_ip/2 + beta/2 - 1/eta``; nonnegative slack means the descent
    inequality held for this step.  ``state.u`` must still be ``u^t``.
    """
    v_after = state.flat()
    dv = v_after - v_before
    step_sq = float(dv @ dv)
    L_after = state.relaxed(f_after)
    coef = descent_coefficient(lip, state.beta, state.lr)
    rec = DescentRecord(state.t, float(L_before), L_after, float(L_before + coef * step_sq - L_after),
                        step_sq, state.lr, state.mode)
    state.monitor.append(rec)
    return rec


def monotone_violations(records: list[DescentRecord], rtol: float = 1e-12) -> list[int]:
    """Steps where ``L_beta(v^t,u^t)`` rose above the previous step's value.

    Only meaningful when every step evaluates ``f`` on the same data.
    """
    bad = []
    for a, b in zip(records, records[1:]):
        if b.L_beta_before > a.L_beta_before + rtol * max(1.0, abs(a.L_beta_before)):
            bad.append(b.step)
    return bad


def slack_violations(records: list[DescentRecord], rtol: float = 1e-12) -> list[int]:
    return [r.step for r in records if r.slack < -rtol * max(1.0, abs(r.L_beta_before))]


MONITOR_FIELDS = ("step", "L_beta_before", "L_beta_after", "slack", "step_norm_sq", "eta", "mode")


def write_monitor_csv(records: list[DescentRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(MONITOR_FIELDS)
        for r in records:
            wr.writerow([r.step, repr(r.L_beta_before), repr(r.L_beta_after), repr(r.slack),
                         repr(r.step_norm_sq), repr(r.eta), r.mode])


def read_monitor_csv(path: str | Path) -> list[DescentRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(DescentRecord(int(row["step"]), float(row["L_beta_before"]), float(row["L_beta_after"]),
                                     float(row["slack"]), float(row["step_norm_sq"]), float(row["eta"]), row["mode"]))
    return out


# -- Lipschitz estimation -----------------------------------------------------

@dataclass
class LipschitzEstimate:
    value: float
    n_pairs: int

    def eta_bound(self, beta: float) -> float:
        """Largest admissible learning rate ``2 / (beta + L_ip)``."""
        return 2.0 / (beta + self.value)


def estimate_lipschitz(grad_fn: Callable[[np.ndarray], np.ndarray], v0: np.ndarray, samples: int = 4,
                       radius: float = 1e-2, rng: Rng | None = None, power_iters: int = 5) -> LipschitzEstimate:
    """Max of ``||grad(v1) - grad(v2)|| / ||v1 - v2||`` over pairs near ``v0``.

    Each of ``samples`` random pairs in the ball of ``radius`` around ``v0`` is
    followed by ``power_iters`` pairs whose separation follows the previous
    gradient difference, which steers the ratio toward the top curvature.
    The result is a lower bound on the local Lipschitz constant.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    rng = rng or Rng(0)
    v0 = np.asarray(v0, dtype=float)
    best = 0.0
    n = 0

    def unit(x):
        nx = np.linalg.norm(x)
        return x / nx if nx > 0 else x

    for _ in range(samples):
        v1 = v0 + radius * rng.uniform() * unit(rng.normal(v0.shape))
        d = unit(rng.normal(v0.shape))
        g1 = grad_fn(v1)
        for _ in range(power_iters + 1):
            v2 = v1 + radius * d
            diff = grad_fn(v2) - g1
            ratio = float(np.linalg.norm(diff)) / radius
            best = max(best, ratio)
            n += 1
            if not np.any(diff):
                break
            d = unit(diff)
    return LipschitzEstimate(best, n)
