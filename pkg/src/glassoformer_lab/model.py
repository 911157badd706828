"""Encoder-decoder network with group-sparse query attention.

Layout for one window (``F`` signal rows + 1 stamp row, length ``L``)::

    embed:    ELU(concat(conv(signals), conv(stamp)))^T         -> L x d_model
    encoder:  repeat enc_layers: ELU(conv(attn(X)^T))^T          -> F_hidden
    decoder:  Z = attn(embed_de(x_de)) (dec_layers times)
              Z = cross_attn(queries=Z, keys/values=F_hidden)
              y = (Z @ proj)^T @ full                            -> L - t_f

No residual connections or normalisation layers are used.  All convolutions
are causal.  Signal rows after ``t_f`` are zeroed inside the forward pass, so
the prediction cannot depend on anything past the observation cut.
"""
from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .attention import AttentionWeights, extract_mask, multi_head
from .numerics import Rng, ShapeError, Tape, Tensor, backward, ops


@dataclass
class ModelConfig:
    n_signals: int = 5
    seq_len: int = 64
    t_f: int = 16
    d_model: int = 32
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 1
    kernel_size: int = 3
    bias: bool = False
    scale_dim: float = 0.0  # 0 means "use seq_len"
    wq_init_scale: float = 1.0

    def __post_init__(self):
        if self.d_model % 2:
            raise ValueError("d_model must be even (half value conv, half stamp conv)")
        if not 0 <= self.t_f < self.seq_len:
            raise ValueError(f"t_f={self.t_f} must lie in [0, seq_len)")
        if self.n_heads < 1:
            raise ValueError("n_heads must be >= 1")

    @property
    def horizon(self) -> int:
        return self.seq_len - self.t_f

    @property
    def attn_scale(self) -> float:
        return float(self.seq_len if self.scale_dim <= 0 else self.scale_dim)


@dataclass
class FaultWindow:
    """Model-ready view of one event: ``x_en``/``x_de`` are ``(F+1) x L``."""

    x_en: np.ndarray
    x_de: np.ndarray
    y: np.ndarray
    t_f: int
    event_id: int = -1


GROUP = "w"
PLAIN = "theta"


@dataclass
class ParamLabel:
    kind: str  # GROUP or PLAIN
    block: str = ""
    head: int = -1


def mask_future(x: Tensor, t_f: int) -> Tensor:
    """Zero signal rows (all but the last, the stamp) strictly after ``t_f``."""
    return ops.mask_cols_after(x, t_f, rows=slice(0, x.shape[0] - 1))


class GLassoformer:
    """Parameters plus forward pass.  ``params`` is an ordered name -> Tensor map."""

    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params
        self._check_params()

    # -- construction -------------------------------------------------
    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "GLassoformer":
        c = config
        rng = Rng(seed)
        d, K, F, L = c.d_model, c.kernel_size, c.n_signals, c.seq_len
        half = d // 2
        p: OrderedDict[str, Tensor] = OrderedDict()

        def normal(name, shape, std):
            p[name] = Tensor(rng.child(len(p)).normal(shape, scale=std), name=name)

        def zeros(name, shape):
            p[name] = Tensor(np.zeros(shape), name=name)

        for side in ("enc", "dec"):
            normal(f"{side}_embed.value", (half, F, K), 1.0 / math.sqrt(F * K))
            normal(f"{side}_embed.stamp", (half, 1, K), 1.0 / math.sqrt(K))
            if c.bias:
                zeros(f"{side}_embed.value_b", (half,))
                zeros(f"{side}_embed.stamp_b", (half,))
        blocks = [f"enc{i}.attn" for i in range(c.enc_layers)] + [f"dec{i}.self" for i in range(c.dec_layers)]
        blocks.append("dec.cross")
        for blk in blocks:
            aw = AttentionWeights.init(d, L, c.n_heads, rng.child(len(p), 7),
                                       wq_scale=c.wq_init_scale if blk != "dec.cross" else 1.0)
            for name, t in aw.named(blk):
                t.name = name
                p[name] = t
            if blk.startswith("enc"):
                layer = blk.split(".")[0]
                normal(f"{layer}.conv", (d, d, K), 1.0 / math.sqrt(d * K))
                if c.bias:
                    zeros(f"{layer}.conv_b", (d,))
        normal("head.proj", (d,), 1.0 / math.sqrt(d))
        normal("head.full", (L, c.horizon), 1.0 / math.sqrt(L))
        if c.bias:
            zeros("head.full_b", (c.horizon,))
        return cls(config, p)

    def _check_params(self) -> None:
        expected = GLassoformer._shapes(self.config)
        if list(expected) != list(self.params):
            missing = set(expected) - set(self.params)
            extra = set(self.params) - set(expected)
            raise ShapeError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, shp in expected.items():
            if self.params[name].shape != shp:
                raise ShapeError(f"{name}: expected shape {shp}, got {self.params[name].shape}")

    @staticmethod
    def _shapes(c: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
        d, K, F, L = c.d_model, c.kernel_size, c.n_signals, c.seq_len
        s: OrderedDict[str, tuple[int, ...]] = OrderedDict()
        for side in ("enc", "dec"):
            s[f"{side}_embed.value"] = (d // 2, F, K)
            s[f"{side}_embed.stamp"] = (d // 2, 1, K)
            if c.bias:
                s[f"{side}_embed.value_b"] = (d // 2,)
                s[f"{side}_embed.stamp_b"] = (d // 2,)
        blocks = [f"enc{i}.attn" for i in range(c.enc_layers)] + [f"dec{i}.self" for i in range(c.dec_layers)]
        blocks.append("dec.cross")
        for blk in blocks:
            for h in range(c.n_heads):
                for m in ("wq", "wk", "wv"):
                    s[f"{blk}.{m}{h}"] = (d, L)
            s[f"{blk}.mix"] = (L, d)
            if blk.startswith("enc"):
                layer = blk.split(".")[0]
                s[f"{layer}.conv"] = (d, d, K)
                if c.bias:
                    s[f"{layer}.conv_b"] = (d,)
        s["head.proj"] = (d,)
        s["head.full"] = (L, c.horizon)
        if c.bias:
            s["head.full_b"] = (c.horizon,)
        return s

    # -- structure ------------------------------------------------------
    def sparse_blocks(self) -> list[str]:
        c = self.config
        return [f"enc{i}.attn" for i in range(c.enc_layers)] + [f"dec{i}.self" for i in range(c.dec_layers)]

    def attention(self, block: str) -> AttentionWeights:
        p, H = self.params, self.config.n_heads
        return AttentionWeights(
            [p[f"{block}.wq{h}"] for h in range(H)],
            [p[f"{block}.wk{h}"] for h in range(H)],
            [p[f"{block}.wv{h}"] for h in range(H)],
            p[f"{block}.mix"],
        )

    def labels(self) -> "OrderedDict[str, ParamLabel]":
        """Group label for every group-sparse ``W_Q``; everything else is plain.

        Cross-attention queries stay plain (dense).
        """
        out: OrderedDict[str, ParamLabel] = OrderedDict((n, ParamLabel(PLAIN)) for n in self.params)
        for blk in self.sparse_blocks():
            for h in range(self.config.n_heads):
                out[f"{blk}.wq{h}"] = ParamLabel(GROUP, blk, h)
        return out

    def group_params(self) -> list[str]:
        return [n for n, lab in self.labels().items() if lab.kind == GROUP]

    def masks(self, threshold: float = 1e-5) -> dict[str, list[np.ndarray]]:
        return {blk: extract_mask(self.attention(blk), threshold) for blk in self.sparse_blocks()}

    # -- forward ----------------------------------------------------------
    def embed(self, x_in: Tensor, side: str) -> Tensor:
        c, p = self.config, self.params
        if x_in.shape != (c.n_signals + 1, c.seq_len):
            raise ShapeError(f"embed expects {(c.n_signals + 1, c.seq_len)}, got {x_in.shape}")
        sig = ops.slice_rows(x_in, 0, c.n_signals)
        stamp = ops.slice_rows(x_in, c.n_signals, c.n_signals + 1)
        hv = ops.conv1d(sig, p[f"{side}_embed.value"], p.get(f"{side}_embed.value_b"))
        hs = ops.conv1d(stamp, p[f"{side}_embed.stamp"], p.get(f"{side}_embed.stamp_b"))
        return ops.transpose(ops.elu(ops.concat_rows([hv, hs])))

    def encoder_forward(self, x_en: Tensor, mode: str = "dense", masks=None) -> Tensor:
        c, p = self.config, self.params
        h = self.embed(x_en, "enc")
        for i in range(c.enc_layers):
            blk = f"enc{i}.attn"
            a = multi_head(h, self.attention(blk), mode, None if masks is None else masks[blk],
                           scale_dim=c.attn_scale)
            h = ops.transpose(ops.elu(ops.conv1d(ops.transpose(a), p[f"enc{i}.conv"], p.get(f"enc{i}.conv_b"))))
        return h

    def decoder_forward(self, x_de: Tensor, f_hidden: Tensor, mode: str = "dense", masks=None) -> Tensor:
        c, p = self.config, self.params
        if c.horizon > c.seq_len:
            raise ShapeError("horizon exceeds window length")
        z = self.embed(x_de, "dec")
        for i in range(c.dec_layers):
            blk = f"dec{i}.self"
            z = multi_head(z, self.attention(blk), mode, None if masks is None else masks[blk],
                           scale_dim=c.attn_scale)
        z = multi_head(z, self.attention("dec.cross"), "dense" if mode == "dense" else "sparse",
                       None if mode == "dense" else [np.ones(c.seq_len, bool)] * c.n_heads,
                       kv=f_hidden, scale_dim=c.attn_scale)
        per_pos = ops.transpose(ops.dot_vec(z, p["head.proj"]))  # 1 x L
        y = ops.reshape(ops.matmul(per_pos, p["head.full"]), (c.horizon,))
        if c.bias:
            y = ops.add(y, p["head.full_b"])
        return y

    def forward(self, window: FaultWindow, mode: str = "dense", masks=None) -> Tensor:
        c = self.config
        if window.t_f != c.t_f:
            raise ShapeError(f"window t_f={window.t_f} but model built for t_f={c.t_f}")
        x_en = mask_future(Tensor.wrap(window.x_en), window.t_f)
        x_de = mask_future(Tensor.wrap(window.x_de), window.t_f)
        f_hidden = self.encoder_forward(x_en, mode, masks)
        return self.decoder_forward(x_de, f_hidden, mode, masks)

    def predict(self, window: FaultWindow, mode: str = "dense", masks=None) -> np.ndarray:
        return self.forward(window, mode, masks).data.copy()

    def forward_loss(self, window: FaultWindow, mode: str = "dense", masks=None) -> tuple[Tensor, Tensor]:
        y_hat = self.forward(window, mode, masks)
        return y_hat, ops.mse(y_hat, Tensor.wrap(window.y))

    # -- bookkeeping ------------------------------------------------------
    def count_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def param_breakdown(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, t in self.params.items():
            key = name.split(".")[0]
            out[key] = out.get(key, 0) + t.size
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, t in self.params.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()

    def copy(self) -> "GLassoformer":
        return GLassoformer(self.config, OrderedDict((n, Tensor(t.data, name=n)) for n, t in self.params.items()))


def param_count_formula(c: ModelConfig) -> int:
    """Closed-form trainable parameter count for :class:`GLassoformer`."""
    d, K, F, L, H = c.d_model, c.kernel_size, c.n_signals, c.seq_len, c.n_heads
    embed = (d // 2) * F * K + (d // 2) * K + (d if c.bias else 0)
    attn = 3 * H * d * L + L * d
    conv = d * d * K + (d if c.bias else 0)
    n_attn = c.enc_layers + c.dec_layers + 1
    head = d + L * c.horizon + (c.horizon if c.bias else 0)
    return 2 * embed + n_attn * attn + c.enc_layers * conv + head


def batch_loss(model, windows: list[FaultWindow]) -> tuple[Tensor, Tape]:
    """Mean of per-window MSE recorded on a fresh tape."""
    with Tape() as tape:
        losses = [model.forward_loss(w)[1] for w in windows]
        loss = losses[0] if len(losses) == 1 else ops.mean_of(losses)
    return loss, tape


def loss_and_grads(model, windows: list[FaultWindow]) -> tuple[float, dict[str, np.ndarray]]:
    for t in model.params.values():
        t.requires_grad = True
        t.grad = None
    loss, tape = batch_loss(model, windows)
    backward(loss, tape)
    grads = {n: (t.grad if t.grad is not None else np.zeros(t.shape)) for n, t in model.params.items()}
    for t in model.params.values():
        t.grad = None
    return loss.item(), grads


def eval_loss(model, windows: list[FaultWindow]) -> float:
    """Mean per-window MSE without recording a tape."""
    return float(np.mean([model.forward_loss(w)[1].item() for w in windows]))


def config_dict(c: ModelConfig) -> dict:
    return asdict(c)
