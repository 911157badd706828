"""JSON checkpoints.

Floats are written with Python's shortest round-trip ``repr`` so a
save/load cycle is bit-exact.
"""
from __future__ import annotations

import dataclasses
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import CnnConfig, Cnn1dModel
from .model import GLassoformer, ModelConfig
from .numerics import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # glasso | lasso | dense | cnn
    model: object
    rng_state: dict = field(default_factory=dict)
    masks: dict[str, list[np.ndarray]] | None = None
    sparse_eligible: bool = False
    threshold: float = 0.0
    meta: dict = field(default_factory=dict)


def _model_blob(model) -> tuple[str, dict]:
    if isinstance(model, GLassoformer):
        return "glassoformer", dataclasses.asdict(model.config)
    if isinstance(model, Cnn1dModel):
        return "cnn1d", dataclasses.asdict(model.config)
    raise CheckpointError(f"cannot checkpoint {type(model).__name__}")


def to_dict(ck: Checkpoint) -> dict:
    arch, cfg = _model_blob(ck.model)
    labels = {}
    if isinstance(ck.model, GLassoformer):
        labels = {n: dataclasses.asdict(lab) for n, lab in ck.model.labels().items()}
    return {
        "format_version": FORMAT_VERSION,
        "kind": ck.kind,
        "architecture": arch,
        "config": cfg,
        "params": [
            {"name": n, "shape": list(t.shape), "data": [float(v) for v in t.data.reshape(-1)]}
            for n, t in ck.model.params.items()
        ],
        "labels": labels,
        "rng_state": ck.rng_state,
        "masks": None if ck.masks is None else {
            blk: [[bool(b) for b in m] for m in ms] for blk, ms in ck.masks.items()
        },
        "sparse_eligible": ck.sparse_eligible,
        "threshold": repr(float(ck.threshold)),
        "meta": ck.meta,
    }


def from_dict(d: dict) -> Checkpoint:
    try:
        if d["format_version"] != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d['format_version']}")
        params: OrderedDict[str, Tensor] = OrderedDict()
        for p in d["params"]:
            arr = np.asarray(p["data"], dtype=np.float64).reshape(p["shape"])
            params[p["name"]] = Tensor(arr, name=p["name"])
        cfg = dict(d["config"])
        if d["architecture"] == "glassoformer":
            model = GLassoformer(ModelConfig(**cfg), params)
        elif d["architecture"] == "cnn1d":
            model = Cnn1dModel(CnnConfig(**cfg), params)
        else:
            raise CheckpointError(f"unknown architecture {d['architecture']!r}")
        masks = None
        if d.get("masks") is not None:
            masks = {blk: [np.asarray(m, dtype=bool) for m in ms] for blk, ms in d["masks"].items()}
        return Checkpoint(d["kind"], model, d.get("rng_state", {}), masks, bool(d.get("sparse_eligible")),
                          float(d.get("threshold", "0.0")), d.get("meta", {}))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None


def save(ck: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_dict(ck), allow_nan=False), encoding="utf-8")
    return path


def load(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from None
    return from_dict(d)


def prune(ck: Checkpoint, threshold: float) -> Checkpoint:
    """Zero every group ``W_Q`` column whose norm is below ``threshold``.

    Stores the resulting masks and flags the model for the sparse path.
    Threshold 0 leaves all weights untouched.
    """
    if not isinstance(ck.model, GLassoformer):
        raise CheckpointError("only transformer checkpoints can be pruned")
    model = ck.model.copy()
    masks = model.masks(threshold)
    for blk, ms in masks.items():
        for h, m in enumerate(ms):
            name = f"{blk}.wq{h}"
            data = model.params[name].data.copy()
            data[:, ~m] = 0.0
            model.params[name] = Tensor(data, name=name)
    return Checkpoint(ck.kind, model, dict(ck.rng_state), masks, True, float(threshold), dict(ck.meta))
