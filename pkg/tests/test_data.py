import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glassoformer_lab.baselines import prony_fit
from glassoformer_lab.data import (
    CSV_HEADER, DataError, DataSpec, Dataset, FaultEvent, GridEventSpec, Mode, build_dataset,
    file_sha256, generate_event, read_events_csv, split_sizes, time_stamp, to_window,
    write_events_csv,
)
from glassoformer_lab.numerics import Rng


def _quiet(**kw) -> GridEventSpec:
    base = dict(seq_len=40, sample_rate=4.0, t_f=10, fault_onset=2, noise=0.0, v_ss=1.01, dip=0.2)
    base.update(kw)
    return GridEventSpec(**base)


# -- generator ------------------------------------------------------------

def test_no_modes_gives_flat_recovery():
    ev = generate_event(_quiet(modes=[]), Rng(0))
    row = ev.features[0]
    assert np.all(row[:2] == 1.01)
    assert row[2] == pytest.approx(1.01 - 0.2)
    assert np.all(row[3:] == 1.01)


def test_single_mode_follows_its_envelope():
    spec = _quiet(modes=[Mode(0.1, 0.5, 0.0, 0.0)])
    row = generate_event(spec, Rng(0)).features[0]
    tau = (np.arange(40) - 2) / 4.0
    post = np.arange(40) > 2
    np.testing.assert_allclose(row[post] - 1.01, 0.1 * np.exp(-0.5 * tau[post]), rtol=0, atol=1e-15)


def test_oscillating_mode_stays_inside_envelope():
    spec = _quiet(modes=[Mode(0.1, 0.5, 3.0, 0.4)])
    row = generate_event(spec, Rng(0)).features[0]
    tau = (np.arange(3, 40) - 2) / 4.0
    assert np.all(np.abs(row[3:] - 1.01) <= 0.1 * np.exp(-0.5 * tau) + 1e-15)


def test_channel_layout():
    ev = generate_event(_quiet(modes=[Mode(0.05, 0.3, 2.0, 0.0)], n_neighbor_buses=3, n_lines=1), Rng(0))
    assert ev.channel_kinds == ["target_voltage"] + ["neighbor_voltage"] * 3 + ["line_current"]
    assert ev.features.shape == (5, 40)


def test_generator_is_deterministic():
    a = build_dataset(DataSpec(), 12, seed=7)
    b = build_dataset(DataSpec(), 12, seed=7)
    c = build_dataset(DataSpec(), 12, seed=8)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


@pytest.mark.parametrize("kw", [dict(t_f=40), dict(fault_onset=-1), dict(sample_rate=0.0), dict(noise=-1.0),
                                dict(modes=[Mode(0.1, 0.0, 1.0, 0.0)])])
def test_invalid_event_spec(kw):
    with pytest.raises(DataError):
        generate_event(_quiet(**kw), Rng(0))


@given(st.integers(1, 3), st.integers(0, 2 ** 16))
def test_noise_free_modes_are_recoverable_by_prony(n_modes, seed):
    r = np.random.default_rng(seed)
    fs = 4.0
    modes = [Mode(r.uniform(0.05, 0.1), r.uniform(0.1, 1.0), w, r.uniform(-math.pi, math.pi))
             for w in np.linspace(0.6, 2.4, n_modes)]
    ev = generate_event(_quiet(modes=modes, seq_len=60), Rng(seed))
    x = ev.features[0, 3:]  # samples after the sag
    model = prony_fit(x, 2 * n_modes + 1)  # +1 for the steady level
    want = [1.0] + [np.exp((-m.damping + s * 1j * m.omega) / fs) for m in modes for s in (1, -1)]
    got = list(model.poles)
    for z in want:
        k = int(np.argmin([abs(z - g) for g in got]))
        assert abs(z - got.pop(k)) < 1e-6


# -- splits and normalisation --------------------------------------------

def test_split_sizes_example():
    ds = build_dataset(DataSpec(seq_len=16, t_f=4), 10, seed=0, split_ratio=(0.5, 0.2, 0.3))
    assert [len(ds.split(s)) for s in ("train", "val", "test")] == [5, 2, 3]


def test_default_split_of_210():
    from glassoformer_lab.data import DEFAULT_SPLIT
    assert split_sizes(210, DEFAULT_SPLIT) == (100, 35, 75)


def test_splits_are_disjoint_and_cover():
    ds = build_dataset(DataSpec(seq_len=16, t_f=4), 30, seed=1)
    ids = [set(e.event_id for e in ds.split(s)) for s in ("train", "val", "test")]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert set().union(*ids) == set(range(30))


@pytest.mark.parametrize("ratio", [(0.5, 0.5, 0.5), (0.5, 0.6, -0.1), (1.0, 0.0)])
def test_bad_split_ratio(ratio):
    with pytest.raises(DataError):
        split_sizes(10, ratio)


def test_too_few_events():
    with pytest.raises(DataError):
        build_dataset(DataSpec(), 2, seed=0)


def test_train_split_is_centred():
    ds = build_dataset(DataSpec(seq_len=16, t_f=4), 20, seed=2)
    tr = np.stack([ds.normalized(e).features for e in ds.split("train")])
    assert np.max(np.abs(tr.mean(axis=(0, 2)))) < 1e-12


def test_val_uses_train_statistics():
    ds = build_dataset(DataSpec(seq_len=16, t_f=4), 20, seed=2)
    e = ds.split("val")[0]
    tr = np.stack([x.features for x in ds.split("train")])
    np.testing.assert_array_equal(ds.normalized(e).features, e.features - tr.mean(axis=(0, 2))[:, None])


# -- windows --------------------------------------------------------------

def test_time_stamp_endpoints():
    s = time_stamp(11, 4)
    assert (s[0], s[4], s[10]) == (-1.0, 0.0, 1.0)
    assert np.all(np.diff(s) > 0)


def _event(L=12, t_f=5, F=3, seed=0):
    f = np.random.default_rng(seed).normal(size=(F, L))
    return FaultEvent(0, f, ["target_voltage"] + ["neighbor_voltage"] * (F - 1), t_f)


@given(st.integers(2, 20).flatmap(lambda L: st.tuples(st.just(L), st.integers(0, L - 1))),
       st.integers(0, 1000))
def test_window_masks_the_future(lt, seed):
    L, t_f = lt
    ev = _event(L, t_f, seed=seed)
    w = to_window(ev)
    t = np.arange(L)
    want = np.where(t[None, :] <= t_f, ev.features, 0.0)
    np.testing.assert_array_equal(w.x_en[:-1], want)
    np.testing.assert_array_equal(w.x_de, w.x_en)
    np.testing.assert_array_equal(w.x_en[-1], time_stamp(L, t_f))
    np.testing.assert_array_equal(w.y, ev.features[0, t_f:])


def test_last_step_forecast_keeps_everything():
    ev = _event(L=12, t_f=11)
    w = to_window(ev)
    np.testing.assert_array_equal(w.x_de[:-1], ev.features)
    assert w.y.shape == (1,)


def test_zero_history_keeps_one_sample():
    ev = _event(L=12, t_f=0)
    w = to_window(ev)
    assert np.all(w.x_de[:-1, 1:] == 0.0)
    np.testing.assert_array_equal(w.x_de[:-1, 0], ev.features[:, 0])
    assert w.y.shape == (12,)


# -- CSV ------------------------------------------------------------------

def test_csv_round_trip_is_exact(tmp_path):
    ds = build_dataset(DataSpec(seq_len=16, t_f=4), 100, seed=4)
    p = tmp_path / "d.csv"
    write_events_csv(ds, p)
    back = read_events_csv(p)
    assert back.digest() == ds.digest()
    q = tmp_path / "e.csv"
    write_events_csv(back, q)
    assert file_sha256(p) == file_sha256(q)


def test_csv_single_event(tmp_path):
    ev = _event()
    ev.split = "train"
    ds = Dataset([ev])
    p = tmp_path / "one.csv"
    write_events_csv(ds, p)
    np.testing.assert_array_equal(read_events_csv(p).events[0].features, ev.features)


def test_csv_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(DataError, match="empty"):
        read_events_csv(p)


def test_csv_header_only(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text(",".join(CSV_HEADER) + "\n")
    with pytest.raises(DataError, match="no events"):
        read_events_csv(p)


def test_csv_malformed_row_reports_line(tmp_path):
    p = tmp_path / "bad.csv"
    write_events_csv(Dataset([_event()]), p)
    lines = p.read_text().splitlines()
    lines[5] = lines[5].replace(lines[5].split(",")[4], "abc")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=r":6:"):
        read_events_csv(p)


def test_csv_inconsistent_lengths(tmp_path):
    p = tmp_path / "len.csv"
    a, b = _event(L=12), _event(L=10)
    b.event_id = 1
    write_events_csv(Dataset([a, b]), p)
    with pytest.raises(DataError, match="different lengths"):
        read_events_csv(p)


def test_csv_ragged_channels(tmp_path):
    p = tmp_path / "ragged.csv"
    write_events_csv(Dataset([_event()]), p)
    lines = p.read_text().splitlines()
    del lines[3]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="inconsistent lengths"):
        read_events_csv(p)
