import numpy as np
import pytest
from scipy.signal import find_peaks, hilbert

from tridp.exceptions import ConfigurationError
from tridp.signalio import preprocess
from tridp.synthgen import (
    FiducialTrack, SynthConfig, delineate, generate, generate_subject, labels_from_fiducials,
)


def test_same_seed_bit_identical():
    a = generate(SynthConfig(n_subjects=2, seconds_per_subject=20, seed=5))
    b = generate(SynthConfig(n_subjects=2, seconds_per_subject=20, seed=5))
    for (ra, ta), (rb, tb) in zip(a, b):
        assert ra.ecg.tobytes() == rb.ecg.tobytes()
        assert ra.heart_sound.tobytes() == rb.heart_sound.tobytes()
        assert ra.bp.tobytes() == rb.bp.tobytes()
        assert np.array_equal(ta.r_peak, tb.r_peak)


def test_different_seed_differs():
    a = generate_subject(SynthConfig(seconds_per_subject=20, seed=1), 0)[0]
    b = generate_subject(SynthConfig(seconds_per_subject=20, seed=2), 0)[0]
    assert not np.array_equal(a.ecg, b.ecg)


def test_subject_generation_independent_of_batch():
    cfg = SynthConfig(n_subjects=3, seconds_per_subject=20, seed=9)
    together = generate(cfg)
    alone = generate_subject(cfg, 2)
    assert np.array_equal(together[2][0].ecg, alone[0].ecg)


def test_s1_lags_qrs_onset_by_40ms():
    cfg = SynthConfig(n_subjects=1, seconds_per_subject=30, noise_std=0.0, seed=0)
    rec, track = generate_subject(cfg, 0)
    env = np.abs(hilbert(rec.heart_sound))
    impulses = np.zeros(len(env))
    impulses[track.qrs_on] = 1.0
    max_lag = int(0.2 * cfg.rate_hz)
    xcorr = [np.dot(impulses[: len(env) - k], env[k:]) for k in range(max_lag)]
    assert int(np.argmax(xcorr)) == round(0.040 * cfg.rate_hz)


def test_bp_peaks_follow_r_by_transit_delay():
    cfg = SynthConfig(n_subjects=1, seconds_per_subject=30, noise_std=0.0, seed=0)
    rec, track = generate_subject(cfg, 0)
    transit = round(cfg.pulse_transit_s * cfg.rate_hz)
    peaks, _ = find_peaks(rec.bp)
    for r in track.r_peak[1:-2]:
        assert r + transit in set(peaks)


def test_r_peak_count_at_one_hz():
    cfg = SynthConfig(n_subjects=1, seconds_per_subject=10, heart_rate_hz=1.0, hr_variability=0.0, seed=0)
    _, track = generate_subject(cfg, 0)
    assert abs(len(track) - 10) <= 1


@pytest.mark.parametrize("hr", [0.5, 1.7])
def test_heart_rate_outside_range_rejected(hr):
    with pytest.raises(ConfigurationError):
        SynthConfig(heart_rate_hz=hr)


def test_invalid_config_rejected():
    with pytest.raises(ConfigurationError):
        SynthConfig(n_subjects=0)
    with pytest.raises(ConfigurationError):
        SynthConfig(domain_shift="tilt")
    with pytest.raises(ConfigurationError):
        SynthConfig(seconds_per_subject=5)


def test_rate_shift_speeds_up_heart():
    base = generate_subject(SynthConfig(seconds_per_subject=60, seed=4), 1)[1]
    shifted = generate_subject(SynthConfig(seconds_per_subject=60, seed=4, domain_shift="rate_shift"), 1)[1]
    assert len(shifted) / len(base) == pytest.approx(1.3, rel=0.06)


def test_attributes_deterministic_and_valid():
    recs = generate(SynthConfig(n_subjects=6, seconds_per_subject=10, seed=2))
    again = generate(SynthConfig(n_subjects=6, seconds_per_subject=10, seed=2))
    for (a, _), (b, _) in zip(recs, again):
        assert a.attributes == b.attributes
        assert a.attributes.bmi > 0 and a.attributes.age > 0


def test_tracks_are_chronological(default_records):
    for _, track in default_records:
        track.validate()
        assert np.all(np.diff(track.r_peak) > 0)


def _track(beats):
    cols = list(zip(*beats))
    return FiducialTrack(*[np.array(c) for c in cols]).validate()


def brute_force_mask(track, offset, length):
    """Per-timestep membership against interval endpoints, written independently."""
    mask = np.zeros((6, length), np.uint8)
    for t in range(length):
        s = offset + t
        for i in range(len(track)):
            p, q, qo, to, r = (int(track.p_on[i]), int(track.qrs_on[i]), int(track.qrs_off[i]),
                               int(track.t_off[i]), int(track.r_peak[i]))
            pr_seg_start = q - int(round(0.4 * (q - p)))
            st_seg_end = qo + int(round(0.6 * (to - qo)))
            mask[0, t] |= p <= s < q
            mask[1, t] |= q <= s < qo
            mask[2, t] |= qo <= s < to
            mask[4, t] |= pr_seg_start <= s < q
            mask[5, t] |= qo <= s < st_seg_end
            if i + 1 < len(track):
                mask[3, t] |= r <= s < int(track.r_peak[i + 1])
    return mask


def test_mask_matches_brute_force_oracle(rng):
    for _ in range(5):
        beats, t = [], 30
        for _ in range(8):
            p = t + int(rng.integers(0, 20))
            q = p + int(rng.integers(25, 50))
            r = q + int(rng.integers(3, 10))
            qo = r + int(rng.integers(3, 10))
            to = qo + int(rng.integers(40, 90))
            beats.append((p, q, qo, to, r))
            t = to + int(rng.integers(5, 60))
        track = _track(beats)
        offset = int(rng.integers(0, 200))
        length = 700
        mask, _ = labels_from_fiducials(track, offset, length)
        assert np.array_equal(mask, brute_force_mask(track, offset, length))


def test_window_inside_one_rr_interval():
    track = _track([(10, 50, 70, 150, 55), (3000, 3040, 3060, 3140, 3045)])
    mask, complete = labels_from_fiducials(track, 200, 2048)
    assert mask[3].all()
    assert not complete
    assert mask[[0, 1, 2, 4, 5]].sum() == 0


def test_qrs_and_rr_cooccur(default_records):
    _, track = default_records[0]
    mask, complete = labels_from_fiducials(track, 1000, 2048)
    assert complete
    assert (mask[1] & mask[3]).any()


def test_rr_rows_tile_between_first_and_last_r(default_records):
    _, track = default_records[1]
    first, last = int(track.r_peak[0]), int(track.r_peak[-1])
    mask, _ = labels_from_fiducials(track, first, last - first)
    assert mask[3].all()


def test_interval_runs_start_and_end_on_fiducials(default_records):
    _, track = default_records[2]
    mask, _ = labels_from_fiducials(track, 0, 6000)
    row = np.r_[0, mask[1], 0]
    starts = np.flatnonzero(np.diff(row) == 1)
    stops = np.flatnonzero(np.diff(row) == -1)
    inside = track.qrs_off <= 6000
    assert set(starts) <= set(track.qrs_on)
    assert set(stops) <= set(track.qrs_off[inside]) | {6000}


def test_r_peaks_survive_preprocessing(default_records):
    cfg = SynthConfig()
    for rec, track in default_records:
        out = preprocess(rec)
        noise_floor = 3 * cfg.noise_std / np.std(rec.ecg)
        peaks, _ = find_peaks(out.ecg, height=0.5 * out.ecg.max(), distance=50)
        assert out.ecg[track.r_peak].min() > noise_floor
        for r in track.r_peak:
            assert np.min(np.abs(peaks - r)) <= 2


def test_delineation_finds_r_peaks(default_records):
    rec, track = default_records[0]
    est = delineate(preprocess(rec).ecg)
    assert est.delineated
    hits = [np.min(np.abs(est.r_peak - r)) <= 2 for r in track.r_peak[2:-2]]
    assert np.mean(hits) > 0.95


def test_default_split_counts(default_splits):
    train, test, summary = default_splits
    assert len(train) == 4 * 39 and len(test) == 4
    assert sorted(set(train.subject_id)) == [0, 1, 2, 3]
