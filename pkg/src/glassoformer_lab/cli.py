"""``glassoformer-lab`` command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from .attention import emit_sparsity_mask, pruning_rate
from .baselines import Cnn1dModel, prony_order_sweep
from .bench import bench_attention, bench_model, write_bench_csv
from .data import DataError, Dataset, build_dataset, file_sha256, read_events_csv, write_events_csv
from .model import GLassoformer
from .numerics import NumericalError, Rng, ShapeError
from .rgsm import monotone_violations, slack_violations, write_monitor_csv
from .train import fit

log = logging.getLogger("glassoformer_lab")

COMMANDS = ("gen-data", "train", "eval", "prune", "bench", "sweep")


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: non-finite floats become ``None``, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def load_dataset(cfg: cfgmod.RunConfig) -> Dataset:
    if cfg.run.data:
        return read_events_csv(cfg.run.data)
    d = cfg.data
    return build_dataset(d.spec, d.n_events, cfg.run.seed, tuple(d.split_ratio))


def _check_dims(model, ds: Dataset) -> None:
    c = model.config
    have = (ds.n_signals, ds.seq_len, ds.t_f)
    want = (c.n_signals, c.seq_len, c.t_f)
    if have != want:
        raise ShapeError(f"dataset (signals, L, t_f)={have} does not match checkpoint {want}")


def build_model(cfg: cfgmod.RunConfig, ds: Dataset, kind: str, seed: int):
    dims = (ds.n_signals, ds.seq_len, ds.t_f)
    if kind == "cnn":
        return Cnn1dModel.init(cfg.cnn_config(*dims), seed)
    return GLassoformer.init(cfg.model_config(*dims), seed)


def predictions(model, windows, mode="dense", masks=None) -> list[tuple[int, np.ndarray, np.ndarray]]:
    return [(w.event_id, w.y, model.predict(w, mode, masks)) for w in windows]


def metrics(preds) -> dict:
    err = np.concatenate([p - y for _, y, p in preds]) if preds else np.zeros(0)
    if err.size == 0:
        return {"mse": None, "mae": None, "n_events": 0}
    return {"mse": float(np.mean(err ** 2)), "mae": float(np.mean(np.abs(err))), "n_events": len(preds)}


PRED_HEADER = ["event_id", "h_index", "y_true", "y_pred"]


def write_predictions(preds, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(PRED_HEADER)
        for eid, y, p in preds:
            for i, (a, b) in enumerate(zip(y, p)):
                wr.writerow([eid, i, repr(float(a)), repr(float(b))])


def pruning_summary(model, threshold: float) -> dict:
    if not isinstance(model, GLassoformer):
        return {"overall": None, "per_head": {}}
    masks = model.masks(threshold)
    per_head = {blk: [pruning_rate(m) for m in ms] for blk, ms in masks.items()}
    return {"overall": pruning_rate([m for ms in masks.values() for m in ms]), "per_head": per_head,
            "threshold": threshold}


def emit_masks(model, threshold: float, out: Path) -> list[str]:
    """``mask_head{h}.pgm`` for the first group-sparse block, ``mask_<block>_head{h}.pgm`` for the rest."""
    if not isinstance(model, GLassoformer):
        return []
    written = []
    for i, blk in enumerate(model.sparse_blocks()):
        stem = out / ("mask" if i == 0 else f"mask_{blk.replace('.', '_')}")
        written += [p.name for p in emit_sparsity_mask(model.attention(blk), threshold, stem)]
    return written


def monitor_summary(records) -> dict:
    slacks = [r.slack for r in records if math.isfinite(r.slack)]
    return {
        "steps": len(records),
        "monotone_violations": len(monotone_violations(records)),
        "slack_violations": len(slack_violations(records)),
        "min_slack": min(slacks) if slacks else None,
    }


def _start(cfg: cfgmod.RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfgmod.render(cfg), encoding="utf-8")


# -- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: cfgmod.RunConfig, out: Path) -> dict:
    _start(cfg, out)
    ds = build_dataset(cfg.data.spec, cfg.data.n_events, cfg.run.seed, tuple(cfg.data.split_ratio))
    path = out / "dataset.csv"
    write_events_csv(ds, path)
    sizes = {s: len(ds.split(s)) for s in ("train", "val", "test")}
    manifest = {"file": path.name, "sha256": file_sha256(path), "seed": cfg.run.seed,
                "n_events": len(ds.events), "splits": sizes, "digest": ds.digest(),
                "spec": cfgmod.render(cfg)}
    write_json(manifest, out / "manifest.json")
    return manifest


def train_one(cfg: cfgmod.RunConfig, ds: Dataset, kind: str, out: Path, monitor: bool = True) -> dict:
    """Train one model kind into ``out``; returns the report dict."""
    seed = cfg.run.seed
    model = build_model(cfg, ds, kind, seed)
    t0 = time.perf_counter()
    res = fit(model, ds.windows("train"), ds.windows("val"), cfg.optim, kind, seed, monitor=monitor)
    train_s = time.perf_counter() - t0
    best = res.model
    thr = cfg.eval.threshold
    masks = best.masks(thr) if isinstance(best, GLassoformer) else None
    ck = ckpt.Checkpoint(kind, best, Rng(seed).get_state(), masks, False, thr,
                         {"best_epoch": res.best_epoch, "data_digest": ds.digest()})
    ckpt.save(ck, out / "checkpoint.json")
    write_monitor_csv(res.monitor, out / "monitor.csv")
    split = cfg.eval.split
    preds = predictions(best, ds.windows(split))
    write_predictions(preds, out / "predictions.csv")
    images = emit_masks(best, thr, out)
    sample = ds.windows(split)[:5]
    timing = {"train_total_s": train_s, "epoch_s": [h.time_s for h in res.history]}
    if isinstance(best, GLassoformer) and sample:
        dense, sparse = bench_model(best, sample, masks, reps=3)
        timing["inference_per_window_s"] = {"dense": dense.median, "sparse": sparse.median}
    return {
        "command": "train",
        "kind": kind,
        "config": cfgmod.render(cfg),
        "seed": seed,
        "data_digest": ds.digest(),
        "history": [{"epoch": h.epoch, "lr": h.lr, "train_loss": h.train_loss, "val_mse": h.val_mse,
                     "pruning_rate": h.pruning_rate, "lip": h.lip} for h in res.history],
        "best_epoch": res.best_epoch,
        "best_val_mse": res.best_val,
        "stopped_early": res.stopped_early,
        "eval_split": split,
        "metrics": metrics(preds),
        "pruning": pruning_summary(best, thr),
        "param_count": best.count_params(),
        "param_breakdown": best.param_breakdown() if isinstance(best, GLassoformer) else {},
        "monitor": monitor_summary(res.monitor),
        "fingerprint": best.fingerprint(),
        "mask_files": images,
        "timing": timing,
    }


def cmd_train(cfg: cfgmod.RunConfig, out: Path) -> dict:
    _start(cfg, out)
    ds = load_dataset(cfg)
    report = train_one(cfg, ds, cfg.model.kind, out)
    write_json(report, out / "report.json")
    return report


def _load_checkpoint(cfg: cfgmod.RunConfig) -> ckpt.Checkpoint:
    if not cfg.run.checkpoint:
        raise UsageError("[run] checkpoint must name a checkpoint file for this command")
    return ckpt.load(cfg.run.checkpoint)


def _eval_preds(ck: ckpt.Checkpoint, ds: Dataset, split: str):
    _check_dims(ck.model, ds)
    if ck.sparse_eligible and ck.masks is not None:
        return predictions(ck.model, ds.windows(split), "sparse", ck.masks)
    return predictions(ck.model, ds.windows(split))


def cmd_eval(cfg: cfgmod.RunConfig, out: Path) -> dict:
    _start(cfg, out)
    ck = _load_checkpoint(cfg)
    ds = load_dataset(cfg)
    preds = _eval_preds(ck, ds, cfg.eval.split)
    write_predictions(preds, out / "predictions.csv")
    report = {"command": "eval", "kind": ck.kind, "config": cfgmod.render(cfg), "checkpoint": cfg.run.checkpoint,
              "eval_split": cfg.eval.split, "metrics": metrics(preds),
              "path": "sparse" if ck.sparse_eligible else "dense",
              "pruning": pruning_summary(ck.model, cfg.eval.threshold)}
    write_json(report, out / "report.json")
    return report


def cmd_prune(cfg: cfgmod.RunConfig, out: Path) -> dict:
    _start(cfg, out)
    ck = _load_checkpoint(cfg)
    if not isinstance(ck.model, GLassoformer):
        raise UsageError("prune needs a transformer checkpoint")
    pruned = ckpt.prune(ck, cfg.eval.threshold)
    ckpt.save(pruned, out / "checkpoint.json")
    images = emit_masks(pruned.model, cfg.eval.threshold, out)
    report = {"command": "prune", "config": cfgmod.render(cfg), "checkpoint": cfg.run.checkpoint,
              "pruning": pruning_summary(pruned.model, cfg.eval.threshold), "mask_files": images}
    ds = load_dataset(cfg)
    _check_dims(ck.model, ds)
    before = metrics(predictions(ck.model, ds.windows(cfg.eval.split)))
    after_preds = _eval_preds(pruned, ds, cfg.eval.split)
    write_predictions(after_preds, out / "predictions.csv")
    after = metrics(after_preds)
    report["metrics_unpruned"] = before
    report["metrics"] = after
    report["mse_delta"] = abs(after["mse"] - before["mse"]) if before["mse"] is not None else None
    write_json(report, out / "report.json")
    return report


def cmd_bench(cfg: cfgmod.RunConfig, out: Path) -> dict:
    _start(cfg, out)
    b = cfg.bench
    rows = [bench_attention(n, b.d_x, b.n_heads, b.prune_fraction, b.reps, cfg.run.seed) for n in b.n_grid]
    write_bench_csv(rows, out / "bench.csv")
    report = {"command": "bench", "config": cfgmod.render(cfg), "timing": {"attention": [
        {"N": r.n, "live_queries": r.live, "pruning_rate": r.pruning_rate, "dense_median_s": r.dense.median,
         "dense_iqr_s": r.dense.iqr, "sparse_median_s": r.sparse.median, "sparse_iqr_s": r.sparse.iqr,
         "speedup": r.speedup} for r in rows]}}
    if cfg.run.checkpoint:
        ck = ckpt.load(cfg.run.checkpoint)
        if isinstance(ck.model, GLassoformer):
            ds = load_dataset(cfg)
            _check_dims(ck.model, ds)
            masks = ck.masks if ck.masks is not None else ck.model.masks(cfg.eval.threshold)
            dense, sparse = bench_model(ck.model, ds.windows(cfg.eval.split)[:5], masks, b.reps)
            report["timing"]["model_per_window"] = {"dense_median_s": dense.median, "sparse_median_s": sparse.median,
                                                    "dense_iqr_s": dense.iqr, "sparse_iqr_s": sparse.iqr}
    write_json(report, out / "report.json")
    return report


def cmd_sweep(cfg: cfgmod.RunConfig, out: Path) -> dict:
    """Every model kind in ``[sweep] kinds`` on one dataset, plus the Prony order sweep."""
    _start(cfg, out)
    ds = load_dataset(cfg)
    rows = {}
    for kind in cfg.sweep.kinds:
        sub = out / kind
        sub.mkdir(exist_ok=True)
        rep = train_one(cfg, ds, kind, sub, monitor=cfg.optim.mode == "gd")
        write_json(rep, sub / "report.json")
        rows[kind] = {"mse": rep["metrics"]["mse"], "mae": rep["metrics"]["mae"],
                      "pruning_rate": rep["pruning"]["overall"], "param_count": rep["param_count"],
                      "train_s": rep["timing"]["train_total_s"]}
    fs = cfg.sweep.prony_fit_start
    val = prony_order_sweep(ds.windows("val"), cfg.sweep.prony_orders, fs)
    test = prony_order_sweep(ds.windows(cfg.eval.split), cfg.sweep.prony_orders, fs)
    best = min(val, key=val.get) if val else None
    rows["prony"] = {"mse": test.get(best) if best is not None else None, "mae": None, "pruning_rate": None,
                     "param_count": None, "train_s": None}
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["model", "test_mse", "test_mae", "pruning_rate", "param_count"])
        for k, r in rows.items():
            wr.writerow([k] + [("" if r[c] is None else repr(r[c])) for c in ("mse", "mae", "pruning_rate",
                                                                               "param_count")])
    report = {"command": "sweep", "config": cfgmod.render(cfg), "eval_split": cfg.eval.split,
              "results": {k: {c: v for c, v in r.items() if c != "train_s"} for k, r in rows.items()},
              "prony": {"val_mse_by_order": val, "test_mse_by_order": test, "best_order": best},
              "timing": {k: r["train_s"] for k, r in rows.items()}}
    write_json(report, out / "report.json")
    return report


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "prune": cmd_prune,
            "bench": cmd_bench, "sweep": cmd_sweep}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glassoformer-lab", description="GLassoformer experiments on synthetic fault data.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", default="run", help="run directory (default: ./run)")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except UsageError as exc:
        print(f"glassoformer-lab: usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = cfgmod.override_seed(cfgmod.load(args.config), args.seed)
        report = HANDLERS[args.command](cfg, Path(args.out))
    except NumericalError as exc:
        print(f"glassoformer-lab: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, cfgmod.ConfigError, ckpt.CheckpointError, DataError, ShapeError, OSError) as exc:
        print(f"glassoformer-lab: error: {exc}", file=sys.stderr)
        return 1
    summary = report.get("metrics") or report.get("results") or {}
    print(json.dumps(_clean({"command": args.command, "out": str(args.out), "summary": summary})))
    return 0


if __name__ == "__main__":
    sys.exit(main())
