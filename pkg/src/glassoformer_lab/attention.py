"""Self-attention in the transposed (query-group) formulation, plus pruning tools.

The input sequence ``x`` is ``N x D_x`` and every projection matrix is
``D_x x N``, so that ``Q = W_Q^T x^T`` is square ``N x N``.  Column ``g`` of
``W_Q`` produces row ``g`` of ``Q``: a zero column yields a zero query, whose
softmax row is uniform and whose output row is the column mean of ``V``.  That
identity is what makes the row-skipping fast path exact.

Because the projections are indexed by sequence position, a trained block only
accepts the sequence length it was built for.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng, ShapeError, Tensor, ops


@dataclass
class AttentionWeights:
    """Per-head ``W_Q``, ``W_K``, ``W_V`` (each ``D_x x N``) and the head mixer.

    ``mix`` is ``N x D_x``: it contracts the query axis of the head-averaged
    output back to ``D_x`` features per position.
    """

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    mix: Tensor

    def __post_init__(self):
        if not self.wq:
            raise ValueError("attention needs at least one head")
        if not (len(self.wq) == len(self.wk) == len(self.wv)):
            raise ValueError("wq/wk/wv head counts differ")
        shp = self.wq[0].shape
        for t in (*self.wq, *self.wk, *self.wv):
            if t.shape != shp:
                raise ShapeError(f"all projection matrices must share shape {shp}, got {t.shape}")
        if self.mix.shape != (shp[1], shp[0]):
            raise ShapeError(f"mix must be {(shp[1], shp[0])}, got {self.mix.shape}")

    @property
    def n_heads(self) -> int:
        return len(self.wq)

    @property
    def d_x(self) -> int:
        return self.wq[0].shape[0]

    @property
    def seq_len(self) -> int:
        return self.wq[0].shape[1]

    @classmethod
    def init(cls, d_x: int, seq_len: int, n_heads: int, rng: Rng, wq_scale: float = 1.0) -> "AttentionWeights":
        std = 1.0 / math.sqrt(d_x)

        def mk(s):
            return Tensor(rng.normal((d_x, seq_len), scale=s))

        wq = [mk(std * wq_scale) for _ in range(n_heads)]
        wk = [mk(std) for _ in range(n_heads)]
        wv = [mk(std) for _ in range(n_heads)]
        mix = Tensor(rng.normal((seq_len, d_x), scale=1.0 / math.sqrt(seq_len)))
        return cls(wq, wk, wv, mix)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for h in range(self.n_heads):
            out += [(f"{prefix}.wq{h}", self.wq[h]), (f"{prefix}.wk{h}", self.wk[h]), (f"{prefix}.wv{h}", self.wv[h])]
        out.append((f"{prefix}.mix", self.mix))
        return out


def _project(xT: Tensor, w: Tensor) -> Tensor:
    return ops.matmul(ops.transpose(w), xT)


def project_qkv(x: Tensor, w: AttentionWeights, head: int) -> tuple[Tensor, Tensor, Tensor]:
    """``Q = W_Q^T x^T`` etc. for one head; each result is ``N x N``."""
    _check_input(x, w)
    xT = ops.transpose(x)
    return _project(xT, w.wq[head]), _project(xT, w.wk[head]), _project(xT, w.wv[head])


def _check_input(x: Tensor, w: AttentionWeights) -> None:
    if x.shape != (w.seq_len, w.d_x):
        raise ShapeError(f"input {x.shape} does not match attention weights (N={w.seq_len}, D_x={w.d_x})")


def attend_dense(Q: Tensor, K: Tensor, V: Tensor, scale_dim: float) -> Tensor:
    """``softmax_rows(Q K^T / sqrt(D)) V``."""
    if scale_dim <= 0:
        raise ValueError("scale_dim must be positive")
    if not (Q.shape == K.shape and Q.shape[0] == V.shape[0]):
        raise ShapeError(f"attend_dense: Q{Q.shape} K{K.shape} V{V.shape}")
    scores = ops.scale(ops.matmul(Q, ops.transpose(K)), 1.0 / math.sqrt(scale_dim))
    return ops.matmul(ops.softmax_rows(scores), V)


def attend_sparse(Q: Tensor | np.ndarray, K: Tensor | np.ndarray, V: Tensor | np.ndarray,
                  mask: np.ndarray, scale_dim: float) -> Tensor:
    """Attention computed only for live query rows (inference path, no gradient).

    Dead rows all receive the column mean of ``V``, which is exactly what a
    zero query row produces under ``attend_dense``.
    """
    q = Q.data if isinstance(Q, Tensor) else Q
    k = K.data if isinstance(K, Tensor) else K
    v = V.data if isinstance(V, Tensor) else V
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (q.shape[0],):
        raise ShapeError(f"mask length {mask.shape} does not match {q.shape[0]} query rows")
    live = np.flatnonzero(mask)
    return Tensor.wrap(_sparse_rows(q[live], k, v, live, q.shape[0], scale_dim))


def _softmax_np(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def _sparse_rows(q_live: np.ndarray, k: np.ndarray, v: np.ndarray, live: np.ndarray,
                 n_rows: int, scale_dim: float) -> np.ndarray:
    out = np.empty((n_rows, v.shape[1]))
    out[:] = v.mean(axis=0)
    if live.size:
        a = _softmax_np((q_live @ k.T) / math.sqrt(scale_dim))
        out[live] = a @ v
    return out


def multi_head(x: Tensor, w: AttentionWeights, mode: str = "dense", masks: list[np.ndarray] | None = None,
               kv: Tensor | None = None, scale_dim: float | None = None) -> Tensor:
    """Average the heads' ``N x N`` outputs, then mix to ``N x D_x``.

    With ``kv`` given, keys and values are projected from ``kv`` instead of
    ``x`` (cross-attention).  ``mode="sparse"`` needs ``masks`` and skips dead
    query rows; it runs on raw arrays and is not differentiable.
    """
    _check_input(x, w)
    src = x if kv is None else kv
    _check_input(src, w)
    D = float(w.seq_len if scale_dim is None else scale_dim)
    if mode == "dense":
        xT = ops.transpose(x)
        sT = xT if kv is None else ops.transpose(kv)
        heads = [
            attend_dense(_project(xT, w.wq[h]), _project(sT, w.wk[h]), _project(sT, w.wv[h]), D)
            for h in range(w.n_heads)
        ]
        avg = heads[0] if len(heads) == 1 else ops.mean_of(heads)
        return ops.matmul(ops.transpose(avg), w.mix)
    if mode == "sparse":
        if masks is None or len(masks) != w.n_heads:
            raise ValueError("sparse mode needs one mask per head")
        return Tensor.wrap(_multi_head_sparse_np(x.data, src.data, w, masks, D))
    raise ValueError(f"unknown attention mode {mode!r}")


def _multi_head_sparse_np(x: np.ndarray, src: np.ndarray, w: AttentionWeights,
                          masks: list[np.ndarray], D: float) -> np.ndarray:
    # K and V are never formed: with k live rows every product below costs
    # O(k N D_x), and the dead rows share one mean row folded into the mix.
    n = w.seq_len
    mix = w.mix.data
    out = np.zeros((n, mix.shape[1]))
    for h in range(w.n_heads):
        live = np.flatnonzero(masks[h])
        wv = w.wv[h].data
        mean_row = src @ wv.mean(axis=1)  # column mean of V, length N
        dead_mix = mix.sum(axis=0) - mix[live].sum(axis=0)
        out += np.outer(mean_row, dead_mix)
        if live.size:
            q_live = (x @ w.wq[h].data[:, live]).T  # k x N
            scores = ((q_live @ src) @ w.wk[h].data) / math.sqrt(D)
            rows = ((_softmax_np(scores) @ wv.T) @ src.T)  # k x N
            out += rows.T @ mix[live]
    return out / w.n_heads


def cross_attend(queries_from: Tensor, keys_values_from: Tensor, w: AttentionWeights,
                 scale_dim: float | None = None) -> Tensor:
    """Queries from the decoder stream, keys and values from the encoder output."""
    if queries_from.shape != keys_values_from.shape:
        raise ShapeError(f"cross_attend: {queries_from.shape} vs {keys_values_from.shape}")
    return multi_head(queries_from, w, kv=keys_values_from, scale_dim=scale_dim)


def column_norms(w: AttentionWeights) -> list[np.ndarray]:
    return [np.linalg.norm(t.data, axis=0) for t in w.wq]


def extract_mask(w: AttentionWeights, threshold: float = 1e-5) -> list[np.ndarray]:
    """Per head, ``True`` where the ``W_Q`` column norm reaches ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return [norms >= threshold for norms in column_norms(w)]


def pruning_rate(mask) -> float:
    """Fraction of dead query rows; accepts one mask or a list of masks."""
    if isinstance(mask, (list, tuple)):
        total = sum(np.asarray(m).size for m in mask)
        dead = sum(int((~np.asarray(m, dtype=bool)).sum()) for m in mask)
        return dead / total if total else 0.0
    m = np.asarray(mask, dtype=bool)
    return float((~m).sum() / m.size) if m.size else 0.0


def query_matrix(w: AttentionWeights, head: int, reference: np.ndarray | None = None) -> np.ndarray:
    """``Q`` for one head on ``reference`` (default: the ``N x D_x`` identity)."""
    x = np.eye(w.seq_len, w.d_x) if reference is None else np.asarray(reference)
    return w.wq[head].data.T @ x.T


def emit_sparsity_mask(w: AttentionWeights, threshold: float, path: str | Path,
                       reference: np.ndarray | None = None) -> list[Path]:
    """Write ``<stem>_head{h}.pgm`` images of ``|Q|`` and ``<stem>.csv`` of column norms.

    Pixels with ``|Q| < threshold`` are black; the rest are scaled linearly
    into 1..255 by ``|Q| / max|Q|``.  Returns the written paths.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.with_suffix("")
    written = []
    for h in range(w.n_heads):
        img = pgm_levels(np.abs(query_matrix(w, h, reference)), threshold)
        p = Path(f"{stem}_head{h}.pgm")
        write_pgm(p, img)
        written.append(p)
    csv_path = Path(f"{stem}.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["head", "group_index", "column_norm", "is_live"])
        for h, norms in enumerate(column_norms(w)):
            for g, nv in enumerate(norms):
                wr.writerow([h, g, repr(float(nv)), int(nv >= threshold)])
    written.append(csv_path)
    return written


def pgm_levels(mag: np.ndarray, threshold: float) -> np.ndarray:
    top = mag.max() if mag.size else 0.0
    img = np.zeros(mag.shape, dtype=np.int64)
    if top > 0:
        live = mag >= threshold
        img[live] = np.clip(np.ceil(255.0 * mag[live] / top), 1, 255).astype(np.int64)
    return img


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    h, w_ = img.shape
    lines = ["P2", f"{w_} {h}", "255"]
    lines += [" ".join(str(int(v)) for v in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_pgm(path: str | Path) -> np.ndarray:
    toks = Path(path).read_text(encoding="ascii").split()
    if toks[0] != "P2":
        raise ValueError(f"{path}: not an ASCII graymap")
    w_, h = int(toks[1]), int(toks[2])
    vals = np.array([int(t) for t in toks[4:4 + w_ * h]])
    return vals.reshape(h, w_)
