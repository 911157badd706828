"""Wall-clock comparison of the dense and sparse attention paths."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .attention import AttentionWeights, multi_head
from .numerics import Rng, Tensor


@dataclass
class Timing:
    reps: int
    median: float
    q1: float
    q3: float

    @property
    def iqr(self) -> float | None:
        """``None`` for a single repetition (no spread to report)."""
        return None if self.reps < 2 else self.q3 - self.q1


@dataclass
class BenchRow:
    n: int
    live: int  # live query rows per head
    pruning_rate: float
    dense: Timing
    sparse: Timing

    @property
    def speedup(self) -> float:
        return self.dense.median / self.sparse.median if self.sparse.median > 0 else math.inf


def time_call(fn: Callable[[], object], reps: int, warmup: int = 1) -> Timing:
    if reps < 1:
        raise ValueError("reps must be >= 1")
    for _ in range(warmup):
        fn()
    ts = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        fn()
        ts[i] = time.perf_counter() - t0
    q1, med, q3 = np.percentile(ts, [25, 50, 75])
    return Timing(reps, float(med), float(q1), float(q3))


def pruned_weights(n: int, d_x: int, n_heads: int, prune_fraction: float, rng: Rng
                   ) -> tuple[AttentionWeights, list[np.ndarray]]:
    """Random weights with ``round(prune_fraction * n)`` zeroed ``W_Q`` columns per head."""
    w = AttentionWeights.init(d_x, n, n_heads, rng)
    n_dead = int(round(prune_fraction * n))
    masks = []
    for h in range(n_heads):
        dead = rng.child(h).permutation(n)[:n_dead]
        w.wq[h].data[:, dead] = 0.0
        m = np.ones(n, dtype=bool)
        m[dead] = False
        masks.append(m)
    return w, masks


def bench_attention(n: int, d_x: int = 32, n_heads: int = 1, prune_fraction: float = 0.9,
                    reps: int = 30, seed: int = 0) -> BenchRow:
    """Median per-call time of dense vs sparse multi-head attention at length ``n``."""
    rng = Rng(seed)
    w, masks = pruned_weights(n, d_x, n_heads, prune_fraction, rng.child(0))
    x = Tensor(rng.child(1).normal((n, d_x)))
    dense = time_call(lambda: multi_head(x, w, "dense"), reps)
    sparse = time_call(lambda: multi_head(x, w, "sparse", masks), reps)
    live = int(masks[0].sum())
    return BenchRow(n, live, 1.0 - live / n, dense, sparse)


def bench_model(model, windows, masks, reps: int) -> tuple[Timing, Timing]:
    """Per-window inference time of a whole model on both paths."""
    def run(mode, m):
        def call():
            for w in windows:
                model.predict(w, mode, m)
        return call

    k = max(len(windows), 1)
    d = time_call(run("dense", None), reps)
    s = time_call(run("sparse", masks), reps)
    per = lambda t: Timing(t.reps, t.median / k, t.q1 / k, t.q3 / k)  # noqa: E731
    return per(d), per(s)


BENCH_HEADER = ["N", "live_queries", "pruning_rate", "path", "reps", "median_s", "q1_s", "q3_s", "iqr_s"]


def write_bench_csv(rows: list[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(BENCH_HEADER)
        for r in rows:
            for name, t in (("dense", r.dense), ("sparse", r.sparse)):
                iqr = "n/a" if t.iqr is None else repr(t.iqr)
                wr.writerow([r.n, r.live, repr(r.pruning_rate), name, t.reps, repr(t.median), repr(t.q1),
                             repr(t.q3), iqr])
