"""Run configuration: INI-style ``key = value`` sections with strict key checking.

Sections and their keys mirror the dataclasses they populate:

``[run]``     seed, data, checkpoint, float_format
``[data]``    :class:`~glassoformer_lab.data.DataSpec` fields plus n_events, split_ratio
``[model]``   kind plus :class:`~glassoformer_lab.model.ModelConfig` fields and cnn_*
``[optim]``   :class:`~glassoformer_lab.train.OptimConfig` fields
``[eval]``    threshold, split
``[bench]``   n_grid, reps, prune_fraction, d_x, n_heads
``[sweep]``   kinds, prony_orders, prony_fit_start

Unknown sections or keys raise :class:`ConfigError`.  ``render`` writes the
fully resolved configuration back in the same format.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import CnnConfig
from .data import DEFAULT_SPLIT, DataSpec
from .model import ModelConfig
from .train import MODEL_KINDS, OptimConfig

FLOAT_FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    data: str = ""  # dataset CSV; empty means generate from [data]
    checkpoint: str = ""
    float_format: int = FLOAT_FORMAT_VERSION


@dataclass
class DataSection:
    n_events: int = 210
    split_ratio: tuple[float, ...] = DEFAULT_SPLIT
    spec: DataSpec = field(default_factory=DataSpec)


@dataclass
class ModelSection:
    kind: str = "glasso"
    net: ModelConfig = field(default_factory=ModelConfig)
    cnn_layers: int = 4
    cnn_channels: int = 32


@dataclass
class EvalSection:
    threshold: float = 1e-5
    split: str = "test"


@dataclass
class BenchSection:
    n_grid: tuple[int, ...] = (64, 128, 256, 512)
    reps: int = 30
    prune_fraction: float = 0.9
    d_x: int = 32
    n_heads: int = 1


@dataclass
class SweepSection:
    kinds: tuple[str, ...] = MODEL_KINDS
    prony_orders: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    prony_fit_start: int = 3


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def model_config(self, n_signals: int, seq_len: int, t_f: int) -> ModelConfig:
        return dataclasses.replace(self.model.net, n_signals=n_signals, seq_len=seq_len, t_f=t_f)

    def cnn_config(self, n_signals: int, seq_len: int, t_f: int) -> CnnConfig:
        return CnnConfig(n_signals=n_signals, seq_len=seq_len, t_f=t_f, layers=self.model.cnn_layers,
                         channels=self.model.cnn_channels, kernel_size=self.model.net.kernel_size)


# Data and model fields that are derived from the dataset are not user keys.
_DERIVED_MODEL = {"n_signals", "seq_len", "t_f"}


def _flat_fields(section: str, obj) -> dict[str, tuple[object, str]]:
    """Map config key -> (owner object, attribute)."""
    out: dict[str, tuple[object, str]] = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        if dataclasses.is_dataclass(val):
            for g in dataclasses.fields(val):
                if section == "model" and g.name in _DERIVED_MODEL:
                    continue
                out[g.name] = (val, g.name)
        else:
            out[f.name] = (obj, f.name)
    return out


def _parse_value(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if current and isinstance(current[0], str):
                return tuple(items)
            if current and isinstance(current[0], int) and not isinstance(current[0], bool):
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _sections(cfg: RunConfig) -> dict[str, object]:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


def parse(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    sections = _sections(cfg)
    for name in cp.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        fields_ = _flat_fields(name, sections[name])
        for key, raw in cp.items(name):
            if key not in fields_:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            owner, attr = fields_[key]
            setattr(owner, attr, _parse_value(raw, getattr(owner, attr), f"[{name}] {key}"))
    validate(cfg)
    return cfg


def load(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse(text, str(p))


def validate(cfg: RunConfig) -> None:
    r = cfg.data.split_ratio
    if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"[data] split_ratio must be three nonnegative numbers summing to 1, got {r}")
    if cfg.data.n_events < 3:
        raise ConfigError("[data] n_events must be >= 3")
    if cfg.model.kind not in MODEL_KINDS:
        raise ConfigError(f"[model] kind must be one of {', '.join(MODEL_KINDS)}, got {cfg.model.kind!r}")
    bad = [k for k in cfg.sweep.kinds if k not in MODEL_KINDS]
    if bad:
        raise ConfigError(f"[sweep] kinds contains unknown model kinds {bad}")
    ds = cfg.data.spec
    if not 0 <= ds.fault_onset <= ds.t_f < ds.seq_len:
        raise ConfigError(f"[data] need 0 <= fault_onset <= t_f < seq_len, got fault_onset={ds.fault_onset}, "
                          f"t_f={ds.t_f}, seq_len={ds.seq_len}")
    if ds.sample_rate <= 0 or ds.noise < 0 or ds.n_modes < 0:
        raise ConfigError("[data] sample_rate must be > 0, noise and n_modes >= 0")
    if cfg.eval.split not in ("train", "val", "test"):
        raise ConfigError(f"[eval] split must be train, val or test, got {cfg.eval.split!r}")
    if cfg.eval.threshold < 0:
        raise ConfigError("[eval] threshold must be >= 0")
    if cfg.bench.reps < 1:
        raise ConfigError("[bench] reps must be >= 1")
    if not 0.0 <= cfg.bench.prune_fraction <= 1.0:
        raise ConfigError("[bench] prune_fraction must lie in [0, 1]")
    # Rebuild dataclasses whose __post_init__ validates.
    try:
        cfg.optim = dataclasses.replace(cfg.optim)
        cfg.model.net = dataclasses.replace(cfg.model.net)
        cfg.data.spec = dataclasses.replace(cfg.data.spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def render(cfg: RunConfig) -> str:
    """Fully resolved config text; ``parse(render(c))`` reproduces ``c``."""
    lines = []
    for name, sec in _sections(cfg).items():
        lines.append(f"[{name}]")
        for key, (owner, attr) in _flat_fields(name, sec).items():
            lines.append(f"{key} = {_format_value(getattr(owner, attr))}")
        lines.append("")
    return "\n".join(lines)


def override_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is not None:
        cfg.run.seed = int(seed)
    return cfg
