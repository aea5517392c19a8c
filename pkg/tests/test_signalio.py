import json

import numpy as np
import pytest
from scipy.signal import butter, sosfiltfilt

from tridp.exceptions import InputError
from tridp.signalio import (
    TARGET_RATE, WINDOW, FilterSpec, PairedSample, RawRecord, SubjectAttributes, WindowSet, band_pass, preprocess,
    read_record, split_by_ratio, split_record, test_offsets, train_offsets, window_test, window_train, write_record,
)
from tridp.synthgen import build_splits

ATTRS = SubjectAttributes(bmi=22.0, sex=1, age=25.0)


def make_record(n, rate=TARGET_RATE, fill=None, subject=0, rng=None):
    rng = rng or np.random.default_rng(0)
    chans = [np.full(n, fill, float) if fill is not None else rng.standard_normal(n) for _ in range(3)]
    return RawRecord(subject, "resting", *chans, source_rate_hz=rate, attributes=ATTRS)


def test_record_rejects_unequal_lengths():
    with pytest.raises(InputError):
        RawRecord(0, "resting", np.zeros(10), np.zeros(10), np.zeros(9), 250, ATTRS)


def test_record_rejects_nonfinite_and_bad_rate():
    x = np.zeros(10)
    with pytest.raises(InputError):
        RawRecord(0, "resting", x, np.r_[x[:-1], np.nan], x, 250, ATTRS)
    with pytest.raises(InputError):
        RawRecord(0, "resting", x, x, x, 0, ATTRS)


def test_constant_signal_maps_to_zeros_at_250hz():
    rec = make_record(8000, rate=2000, fill=3.5)
    out = preprocess(rec)
    assert out.source_rate_hz == 250
    assert len(out) == 1000
    for ch in (out.heart_sound, out.ecg, out.bp):
        assert np.all(ch == 0.0)


def test_sinusoid_amplitude_matches_reference_filter():
    # reference: zero-phase Butterworth at the source rate, then plain decimation
    fs, n = 2000, 2000 * 40
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * 1.0 * t)
    rec = RawRecord(0, "resting", x, x, x, fs, ATTRS)
    out = preprocess(rec, FilterSpec(hs=None, zscore=False))
    sos = butter(4, [0.5, 40.0], btype="band", fs=fs, output="sos")
    ref = sosfiltfilt(sos, x)[::8]
    core = slice(len(ref) // 8, -len(ref) // 8)  # skip edge transients of the IIR reference
    amp = np.sqrt(2) * np.std(out.ecg[core])
    amp_ref = np.sqrt(2) * np.std(ref[core])
    assert abs(amp - amp_ref) / amp_ref < 0.05
    assert abs(amp - 1.0) < 0.05


def test_preprocess_zscores_each_channel(rng):
    out = preprocess(make_record(6000, rate=500, rng=rng))
    for ch in (out.heart_sound, out.ecg, out.bp):
        assert abs(ch.mean()) < 1e-9
        assert abs(ch.var() - 1.0) < 1e-9


def test_preprocess_idempotent(rng):
    once = preprocess(make_record(9000, rate=500, rng=rng))
    twice = preprocess(once)
    for a, b in ((once.heart_sound, twice.heart_sound), (once.ecg, twice.ecg), (once.bp, twice.bp)):
        assert np.max(np.abs(a - b)) < 1e-6


def test_preprocess_keeps_bp_scale_recoverable(rng):
    bp = 100 + 20 * np.sin(2 * np.pi * 1.2 * np.arange(5000) / 250)
    rec = RawRecord(0, "resting", rng.standard_normal(5000), rng.standard_normal(5000), bp, 250, ATTRS)
    out = preprocess(rec, FilterSpec(bp=None))
    mean, std = out.scale["bp"]
    assert np.allclose(out.bp * std + mean, bp)


def test_short_record_rejected_before_windowing():
    from tridp.signalio import require_window
    with pytest.raises(InputError):
        require_window(preprocess(make_record(2047)))
    with pytest.raises(InputError):
        build_splits([(make_record(2047), None)])


def test_sidecar_corpus_duration_arithmetic():
    # 172,918,000 samples at 2000 Hz
    from tridp.signalio import duration_seconds
    assert duration_seconds(172_918_000, 2000) == pytest.approx(86_459.0)


@pytest.mark.parametrize("length,expected", [(2048, 1), (4096, 9), (2047, 0), (2048 + 255, 1), (2048 + 256, 2)])
def test_train_window_count(length, expected):
    # oracle: enumerate every start position and keep the stride-aligned ones that fit
    brute = sum(1 for s in range(length) if s % 256 == 0 and s + 2048 <= length)
    assert brute == expected
    assert len(train_offsets(length)) == expected


@pytest.mark.parametrize("length,expected", [(4096, 2), (4500, 2), (2047, 0), (2048, 1)])
def test_test_window_count(length, expected):
    assert len(test_offsets(length)) == expected


def test_windows_are_exact_slices(rng):
    rec = preprocess(make_record(5000, rng=rng))
    for w, off in zip(window_train(rec), train_offsets(len(rec))):
        assert np.array_equal(w.ecg, rec.ecg[off:off + WINDOW])
        assert np.array_equal(w.hs, rec.heart_sound[off:off + WINDOW])
    a, b = window_train(rec)[:2]
    assert np.array_equal(a.ecg[256:], b.ecg[:WINDOW - 256])  # 1792-sample overlap


def test_window_test_drops_tail(rng):
    rec = preprocess(make_record(4500, rng=rng))
    ws = window_test(rec)
    assert [w.offset for w in ws] == [0, 2048]


def test_short_record_gives_empty_window_list(caplog):
    rec = make_record(3000)
    rec = rec.replace(heart_sound=rec.heart_sound[:2000], ecg=rec.ecg[:2000], bp=rec.bp[:2000])
    assert window_train(rec) == []


def test_split_exact_eight_two():
    rec = make_record(10_240)
    tr, te = split_record(rec)
    assert len(tr) == 8192 and len(te) == 2048
    assert te.origin == 8192


def test_split_excludes_short_test_part():
    tr, te = split_record(make_record(4095))
    # floor(0.8 * 4095) = 3276 train samples, 819 test samples
    assert len(tr) == 3276
    assert te is None


def test_split_by_ratio_keeps_all_subjects():
    recs = [make_record(12_000, subject=s) for s in range(30)]
    train, test = split_by_ratio(recs)
    assert {r.subject_id for r in train} == set(range(30))
    assert {r.subject_id for r in test} == set(range(30))


def test_no_window_straddles_split(default_splits):
    train, test, summary = default_splits
    for s in summary:
        boundary = s["train_length"]
        assert s["train_windows"] == len(train_offsets(boundary))
        assert s["test_windows"] == len(test_offsets(s["test_length"]))


def test_paired_sample_validates_shapes():
    z = np.zeros(WINDOW)
    with pytest.raises(InputError):
        PairedSample(z[:-1], z, z, np.zeros((6, WINDOW), np.uint8), 0, 0, 0, 0)
    with pytest.raises(InputError):
        PairedSample(z, z, z, np.zeros((5, WINDOW), np.uint8), 0, 0, 0, 0)
    with pytest.raises(InputError):
        PairedSample(z, z, z, np.zeros((6, WINDOW), np.uint8), 30, 0, 0, 0)


def test_record_roundtrip(tmp_path, rng):
    rec = make_record(3000, rng=rng)
    write_record(rec, tmp_path / "s00")
    back = read_record(tmp_path / "s00.f32")
    assert back.subject_id == rec.subject_id
    assert np.allclose(back.ecg, rec.ecg.astype(np.float32))
    raw = np.fromfile(tmp_path / "s00.f32", dtype="<f4")
    assert len(raw) == 9000
    assert np.array_equal(raw[3000:6000], rec.ecg.astype("<f4"))


def test_missing_sidecar_raises(tmp_path):
    write_record(make_record(3000), tmp_path / "s01")
    (tmp_path / "s01.json").unlink()
    with pytest.raises(InputError, match="s01.json"):
        read_record(tmp_path / "s01.f32")


def test_malformed_sidecar_raises(tmp_path):
    write_record(make_record(3000), tmp_path / "s02")
    meta = json.loads((tmp_path / "s02.json").read_text())
    meta["lengths"]["bp"] = 10
    (tmp_path / "s02.json").write_text(json.dumps(meta))
    with pytest.raises(InputError):
        read_record(tmp_path / "s02.f32")


def test_windowset_save_load(tmp_path, small_splits):
    train, _ = small_splits
    path = train.save(tmp_path / "w.npz")
    back = WindowSet.load(path)
    assert len(back) == len(train)
    assert np.array_equal(back.seg_mask, train.seg_mask)
    assert np.array_equal(back.subject_id, train.subject_id)


def test_band_pass_is_projection(rng):
    x = rng.standard_normal(4096)
    once = band_pass(x, 250, 0.5, 40)
    assert np.allclose(band_pass(once, 250, 0.5, 40), once, atol=1e-12)
