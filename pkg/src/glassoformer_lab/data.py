"""Synthetic post-fault transients and their file format.

Each event is a small bundle of PMU-like channels around one target bus:
the target voltage, neighbour bus voltages and line currents.  After the
fault the channels ring down as sums of damped cosines that share the grid's
electromechanical modes; amplitudes and phases differ per channel and event.

Timeline of one event (sample indices)::

    0 .. onset-1    pre-fault, constant level
    onset           fault sag (level - dip)
    onset+1 ..      damped modal response
    t_f             last observed sample; the model predicts t_f .. L-1
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import FaultWindow
from .numerics import Rng

CHANNEL_KINDS = ("target_voltage", "neighbor_voltage", "line_current")


class DataError(ValueError):
    pass


@dataclass
class Mode:
    amplitude: float
    damping: float  # 1/s, > 0
    omega: float  # rad/s
    phase: float


@dataclass
class GridEventSpec:
    """Fully determined parameters of one event's target-bus response."""

    n_neighbor_buses: int = 2
    n_lines: int = 2
    seq_len: int = 64
    sample_rate: float = 6.4  # samples per second
    t_f: int = 16
    fault_onset: int = 2
    modes: list[Mode] = field(default_factory=list)
    v_ss: float = 1.0
    dip: float = 0.2
    noise: float = 0.0
    coupling: float = 0.3  # spread of neighbour amplitude/phase perturbations
    current_level: float = 0.5
    current_gain: float = -2.0

    def validate(self) -> None:
        if self.seq_len < 2:
            raise DataError("seq_len must be >= 2")
        if not 0 <= self.t_f < self.seq_len:
            raise DataError(f"t_f={self.t_f} must be in [0, seq_len={self.seq_len})")
        if not 0 <= self.fault_onset < self.seq_len:
            raise DataError(f"fault_onset={self.fault_onset} outside the window")
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        if self.noise < 0:
            raise DataError("noise must be >= 0")
        for m in self.modes:
            if not m.damping > 0:
                raise DataError(f"mode damping must be > 0, got {m.damping}")

    @property
    def n_channels(self) -> int:
        return 1 + self.n_neighbor_buses + self.n_lines


@dataclass
class FaultEvent:
    event_id: int
    features: np.ndarray  # F x L
    channel_kinds: list[str]
    t_f: int
    split: str = ""

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    @property
    def stamp(self) -> np.ndarray:
        return time_stamp(self.seq_len, self.t_f)

    @property
    def target(self) -> np.ndarray:
        return self.features[0, self.t_f:].copy()


def time_stamp(L: int, t_f: int) -> np.ndarray:
    """Piecewise-linear time code: -1 at t=0, 0 at ``t_f``, +1 at ``L-1``."""
    t = np.arange(L, dtype=float)
    out = np.zeros(L)
    if t_f > 0:
        out[: t_f + 1] = (t[: t_f + 1] - t_f) / t_f
    if L - 1 > t_f:
        out[t_f + 1:] = (t[t_f + 1:] - t_f) / (L - 1 - t_f)
    return out


def modal_response(modes: list[Mode], tau: np.ndarray) -> np.ndarray:
    out = np.zeros_like(tau, dtype=float)
    for m in modes:
        out += m.amplitude * np.exp(-m.damping * tau) * np.cos(m.omega * tau + m.phase)
    return out


def generate_event(spec: GridEventSpec, rng: Rng, event_id: int = 0) -> FaultEvent:
    """Sample one event.  Channel 0 uses ``spec.modes`` unperturbed."""
    spec.validate()
    L, on = spec.seq_len, spec.fault_onset
    t = np.arange(L)
    tau = (t - on) / spec.sample_rate
    post = t > on
    kinds = (["target_voltage"] + ["neighbor_voltage"] * spec.n_neighbor_buses
             + ["line_current"] * spec.n_lines)
    feats = np.zeros((len(kinds), L))
    for c, kind in enumerate(kinds):
        if c == 0:
            modes, level, gain = spec.modes, spec.v_ss, 1.0
        else:
            modes = [Mode(m.amplitude * (1.0 + spec.coupling * rng.normal()), m.damping, m.omega,
                          m.phase + spec.coupling * rng.normal()) for m in spec.modes]
            if kind == "neighbor_voltage":
                level, gain = spec.v_ss * (1.0 + 0.02 * rng.normal()), 1.0
            else:
                level, gain = spec.current_level * (1.0 + 0.1 * rng.normal()), spec.current_gain
        row = np.full(L, level)
        row[on] = level - gain * spec.dip if kind == "line_current" else level - spec.dip
        row[post] = level + gain * modal_response(modes, tau[post])
        if spec.noise > 0:
            row[post] += spec.noise * rng.normal(int(post.sum()))
        feats[c] = row
    return FaultEvent(event_id, feats, kinds, spec.t_f)


@dataclass
class DataSpec:
    """Grid-level recipe: shared base modes plus per-event randomisation."""

    n_neighbor_buses: int = 2
    n_lines: int = 2
    seq_len: int = 64
    sample_rate: float = 6.4
    t_f: int = 16
    fault_onset: int = 2
    n_modes: int = 3
    freq_range: tuple[float, float] = (0.25, 1.2)  # Hz, base modes of the grid
    damping_range: tuple[float, float] = (0.15, 0.6)  # 1/s
    amp_range: tuple[float, float] = (0.01, 0.06)
    jitter: float = 0.05  # relative per-event spread of mode frequency/damping
    v_ss_range: tuple[float, float] = (0.97, 1.03)
    dip_range: tuple[float, float] = (0.1, 0.3)
    noise: float = 0.002
    coupling: float = 0.3

    def base_modes(self, seed: int) -> list[tuple[float, float]]:
        """(omega, damping) of the grid's modes, fixed by the dataset seed."""
        r = Rng(seed).child(0xB45E)
        freqs = np.sort(r.uniform(*self.freq_range, size=self.n_modes))
        damps = r.uniform(*self.damping_range, size=self.n_modes)
        return [(2 * math.pi * f, d) for f, d in zip(freqs, damps)]

    def event_spec(self, base: list[tuple[float, float]], rng: Rng) -> GridEventSpec:
        modes = []
        for omega, damp in base:
            modes.append(Mode(
                amplitude=rng.uniform(*self.amp_range),
                damping=damp * (1.0 + self.jitter * rng.normal()),
                omega=omega * (1.0 + self.jitter * rng.normal()),
                phase=rng.uniform(-math.pi, math.pi),
            ))
        for m in modes:
            m.damping = max(m.damping, 1e-3)
        return GridEventSpec(
            n_neighbor_buses=self.n_neighbor_buses, n_lines=self.n_lines, seq_len=self.seq_len,
            sample_rate=self.sample_rate, t_f=self.t_f, fault_onset=self.fault_onset, modes=modes,
            v_ss=rng.uniform(*self.v_ss_range), dip=rng.uniform(*self.dip_range), noise=self.noise,
            coupling=self.coupling,
        )


DEFAULT_SPLIT = (1000 / 2100, 350 / 2100, 750 / 2100)


def split_sizes(n: int, ratio: tuple[float, float, float]) -> tuple[int, int, int]:
    if len(ratio) != 3 or any(r < 0 for r in ratio):
        raise DataError(f"split ratio must be three nonnegative numbers, got {ratio}")
    if abs(sum(ratio) - 1.0) > 1e-9:
        raise DataError(f"split ratio must sum to 1, got {sum(ratio)}")
    n_tr = int(round(n * ratio[0]))
    n_va = int(round(n * ratio[1]))
    return n_tr, n_va, n - n_tr - n_va


@dataclass
class Dataset:
    events: list[FaultEvent]
    channel_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.events and self.channel_mean.size == 0:
            self.channel_mean = train_means(self.events)

    def split(self, name: str) -> list[FaultEvent]:
        return [e for e in self.events if e.split == name]

    def normalized(self, event: FaultEvent) -> FaultEvent:
        return FaultEvent(event.event_id, event.features - self.channel_mean[:, None],
                          list(event.channel_kinds), event.t_f, event.split)

    def windows(self, name: str) -> list[FaultWindow]:
        return [to_window(self.normalized(e)) for e in self.split(name)]

    @property
    def n_signals(self) -> int:
        return self.events[0].features.shape[0]

    @property
    def seq_len(self) -> int:
        return self.events[0].seq_len

    @property
    def t_f(self) -> int:
        return self.events[0].t_f

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.events:
            h.update(f"{e.event_id}|{e.split}|{e.t_f}|".encode())
            h.update(e.features.tobytes())
        return h.hexdigest()


def train_means(events: list[FaultEvent]) -> np.ndarray:
    """Per-channel means over the train split (zeros if there is none)."""
    tr = [e.features for e in events if e.split == "train"]
    if not tr:
        return np.zeros(events[0].features.shape[0])
    return np.stack(tr).mean(axis=(0, 2))


def build_dataset(spec: DataSpec, n_events: int, seed: int,
                  split_ratio: tuple[float, float, float] = DEFAULT_SPLIT) -> Dataset:
    """Deterministic event set with disjoint train/val/test splits.

    Normalisation subtracts per-channel means computed on the train split.
    """
    if n_events < 3:
        raise DataError("need at least 3 events (one per split)")
    sizes = split_sizes(n_events, split_ratio)
    root = Rng(seed)
    base = spec.base_modes(seed)
    events = []
    for i in range(n_events):
        r = root.child(1, i)
        events.append(generate_event(spec.event_spec(base, r), r, event_id=i))
    order = root.child(2).permutation(n_events)
    labels = np.empty(n_events, dtype=object)
    labels[order[: sizes[0]]] = "train"
    labels[order[sizes[0]: sizes[0] + sizes[1]]] = "val"
    labels[order[sizes[0] + sizes[1]:]] = "test"
    for e, lab in zip(events, labels):
        e.split = str(lab)
    return Dataset(events)


def to_window(event: FaultEvent) -> FaultWindow:
    """Encoder/decoder inputs and target for one (normalised) event.

    Both inputs carry the signal rows with samples after ``t_f`` zeroed, plus
    the stamp row; the target is the target-bus voltage from ``t_f`` on.
    """
    F, L = event.features.shape
    x = np.zeros((F + 1, L))
    x[:F] = event.features
    x[:F, event.t_f + 1:] = 0.0
    x[F] = event.stamp
    return FaultWindow(x_en=x, x_de=x.copy(), y=event.target, t_f=event.t_f, event_id=event.event_id)


CSV_HEADER = ["event_id", "channel_id", "channel_kind", "t_index", "value", "t_f", "split"]


def write_events_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for e in dataset.events:
            for c, kind in enumerate(e.channel_kinds):
                for t, v in enumerate(e.features[c]):
                    wr.writerow([e.event_id, c, kind, t, format(float(v), ".17g"), e.t_f, e.split])


def read_events_csv(path: str | Path) -> Dataset:
    rows: dict[int, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if header != CSV_HEADER:
            raise DataError(f"{path}:1: bad header {header}")
        for lineno, row in enumerate(rd, start=2):
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                eid, ch, t = int(row[0]), int(row[1]), int(row[3])
                val, t_f = float(row[4]), int(row[5])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            kind, split = row[2], row[6]
            if kind not in CHANNEL_KINDS:
                raise DataError(f"{path}:{lineno}: unknown channel kind {kind!r}")
            ev = rows.setdefault(eid, {"t_f": t_f, "split": split, "ch": {}})
            if ev["t_f"] != t_f or ev["split"] != split:
                raise DataError(f"{path}:{lineno}: t_f/split changes within event {eid}")
            kd, samples = ev["ch"].setdefault(ch, (kind, {}))
            if kd != kind:
                raise DataError(f"{path}:{lineno}: channel {ch} of event {eid} changes kind")
            if t in samples:
                raise DataError(f"{path}:{lineno}: duplicate sample t={t}")
            samples[t] = val
    if not rows:
        raise DataError(f"{path}: no events")
    events = []
    for eid in sorted(rows):
        ev = rows[eid]
        chans = sorted(ev["ch"])
        if chans != list(range(len(chans))):
            raise DataError(f"{path}: event {eid} has non-contiguous channels {chans}")
        lengths = {len(ev["ch"][c][1]) for c in chans}
        if len(lengths) != 1:
            raise DataError(f"{path}: event {eid} has inconsistent lengths {sorted(lengths)}")
        L = lengths.pop()
        feats = np.zeros((len(chans), L))
        for c in chans:
            samples = ev["ch"][c][1]
            if sorted(samples) != list(range(L)):
                raise DataError(f"{path}: event {eid} channel {c} has gaps in t_index")
            feats[c] = [samples[t] for t in range(L)]
        events.append(FaultEvent(eid, feats, [ev["ch"][c][0] for c in chans], ev["t_f"], ev["split"]))
    Ls = {e.seq_len for e in events}
    if len(Ls) != 1:
        raise DataError(f"{path}: events have different lengths {sorted(Ls)}")
    return Dataset(events)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
