"""Synthetic coupled heart-sound / ECG / BP recordings with exact fiducials.

Each subject gets a fixed morphology (interval lengths, lobe amplitudes,
heart-sound carriers, systolic/diastolic pair) drawn from ``(seed, subject)``.
Beats are laid out on an integer sample grid first; the waveforms are then
rendered from those indices so segmentation labels need no delineation.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import find_peaks

from .exceptions import ConfigurationError
from .signalio import (
    TARGET_RATE, WINDOW, FilterSpec, RawRecord, SubjectAttributes, WindowSet, band_pass, preprocess, require_window,
    split_record, window_test, window_train,
)

log = logging.getLogger(__name__)

HR_RANGE = (0.8, 1.6)
DOMAIN_SHIFTS = ("none", "rate_shift", "amplitude_shift")
PR_SEGMENT_FRACTION = 0.4  # final share of the PR interval
ST_SEGMENT_FRACTION = 0.6  # initial share of the ST interval


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 4
    seconds_per_subject: float = 60.0
    heart_rate_hz: float | tuple | None = None
    hr_variability: float = 0.03
    noise_std: float = 0.02
    domain_shift: str = "none"
    seed: int = 0
    rate_hz: int = TARGET_RATE
    s1_latency_s: float = 0.040
    pulse_transit_s: float = 0.200
    protocol: str = "resting"

    def __post_init__(self):
        if isinstance(self.heart_rate_hz, list):
            object.__setattr__(self, "heart_rate_hz", tuple(self.heart_rate_hz))
        if not 1 <= self.n_subjects <= 30:
            raise ConfigurationError(f"n_subjects must lie in [1, 30], got {self.n_subjects}")
        if self.domain_shift not in DOMAIN_SHIFTS:
            raise ConfigurationError(f"domain_shift must be one of {DOMAIN_SHIFTS}")
        for hr in self._hr_values():
            if not HR_RANGE[0] <= hr <= HR_RANGE[1]:
                raise ConfigurationError(f"heart_rate_hz {hr} outside {HR_RANGE}")
        n = self.seconds_per_subject * self.rate_hz
        if n * TARGET_RATE / self.rate_hz < WINDOW:
            raise ConfigurationError("record shorter than one 2048-sample window at 250 Hz")
        window_s = WINDOW / TARGET_RATE
        slowest = min(self._hr_values() or [HR_RANGE[0]])
        if 1.0 / slowest > window_s:
            raise ConfigurationError("fewer than one full beat per window")

    def _hr_values(self):
        if self.heart_rate_hz is None:
            return []
        if isinstance(self.heart_rate_hz, (int, float)):
            return [float(self.heart_rate_hz)]
        return [float(h) for h in self.heart_rate_hz]

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["heart_rate_hz"], tuple):
            d["heart_rate_hz"] = list(d["heart_rate_hz"])
        return d


@dataclass
class FiducialTrack:
    """Per-beat sample indices (chronological within a beat: P on, QRS on, R, QRS off, T off)."""

    p_on: np.ndarray
    qrs_on: np.ndarray
    qrs_off: np.ndarray
    t_off: np.ndarray
    r_peak: np.ndarray
    rate_hz: int = TARGET_RATE
    delineated: bool = False  # True when estimated from a recorded ECG rather than constructed

    FIELDS = ("p_on", "qrs_on", "qrs_off", "t_off", "r_peak")

    def __post_init__(self):
        for f in self.FIELDS:
            setattr(self, f, np.asarray(getattr(self, f), dtype=np.int64))
        n = len(self.r_peak)
        if any(len(getattr(self, f)) != n for f in self.FIELDS):
            raise ConfigurationError("fiducial arrays differ in length")

    def __len__(self):
        return len(self.r_peak)

    def validate(self):
        order = np.stack([self.p_on, self.qrs_on, self.r_peak, self.qrs_off, self.t_off])
        if len(self) and not (np.diff(order, axis=0) > 0).all():
            raise ConfigurationError("fiducials not strictly increasing within a beat")
        if len(self) > 1 and not (np.diff(self.r_peak) > 0).all():
            raise ConfigurationError("R peaks not strictly increasing")
        return self

    def pr_segment_start(self) -> np.ndarray:
        return self.qrs_on - np.round(PR_SEGMENT_FRACTION * (self.qrs_on - self.p_on)).astype(np.int64)

    def st_segment_end(self) -> np.ndarray:
        return self.qrs_off + np.round(ST_SEGMENT_FRACTION * (self.t_off - self.qrs_off)).astype(np.int64)

    def intervals(self) -> list[list[tuple[int, int]]]:
        """Half-open ``[start, stop)`` runs per mask row, in ``SEG_CLASSES`` order."""
        pr_seg = self.pr_segment_start()
        st_seg = self.st_segment_end()
        rows = [
            list(zip(self.p_on, self.qrs_on)),
            list(zip(self.qrs_on, self.qrs_off)),
            list(zip(self.qrs_off, self.t_off)),
            list(zip(self.r_peak[:-1], self.r_peak[1:])),
            list(zip(pr_seg, self.qrs_on)),
            list(zip(self.qrs_off, st_seg)),
        ]
        return [[(int(a), int(b)) for a, b in row] for row in rows]

    def to_rate(self, rate_hz: int) -> "FiducialTrack":
        if rate_hz == self.rate_hz:
            return self
        f = rate_hz / self.rate_hz
        return FiducialTrack(
            *[np.round(getattr(self, k) * f).astype(np.int64) for k in self.FIELDS],
            rate_hz=rate_hz, delineated=self.delineated,
        )


def labels_from_fiducials(track: FiducialTrack, offset: int, length: int = WINDOW) -> tuple[np.ndarray, bool]:
    """Six-row co-occurring mask for ``[offset, offset + length)``.

    Returns ``(mask, complete)`` where ``complete`` says whether at least one
    beat (P onset to T offset) lies entirely inside the window.
    """
    mask = np.zeros((6, length), dtype=np.uint8)
    for row, runs in enumerate(track.intervals()):
        for a, b in runs:
            lo, hi = max(a - offset, 0), min(b - offset, length)
            if lo < hi:
                mask[row, lo:hi] = 1
    inside = (track.p_on >= offset) & (track.t_off <= offset + length)
    complete = bool(inside.any())
    if not complete:
        log.warning("window at %d contains no complete beat", offset)
    return mask, complete


def make_labeler(track: FiducialTrack, rate_hz: int = TARGET_RATE):
    track = track.to_rate(rate_hz)

    def labeler(offset: int) -> np.ndarray:
        return labels_from_fiducials(track, offset)[0]

    return labeler


# --- generation ---------------------------------------------------------------

_RANGES = dict(
    hr=HR_RANGE,
    pr=(0.13, 0.20),
    qrs=(0.07, 0.11),
    qt=(0.36, 0.44),
    amp_p=(0.08, 0.25),
    amp_q=(-0.25, -0.05),
    amp_r=(0.8, 1.6),
    amp_s=(-0.45, -0.1),
    amp_t=(0.15, 0.5),
    f_s1=(35.0, 60.0),
    f_s2=(50.0, 80.0),
    amp_s2=(0.45, 0.75),
    sys=(105.0, 140.0),
    dia=(60.0, 85.0),
    bp_rise=(0.10, 0.16),
    bmi=(16.5, 31.0),
    age=(19.0, 40.0),
)


def _subject_params(config: SynthConfig, subject: int) -> dict:
    """Latin-hypercube draw: each parameter range is cut into ``n_subjects``
    strata and every subject owns a different stratum, keeping subjects apart."""
    n = config.n_subjects
    table_rng = np.random.default_rng([config.seed, 7])
    jitter = np.random.default_rng([config.seed, subject, 7])
    params = {}
    for name, (lo, hi) in _RANGES.items():
        stratum = table_rng.permutation(n)[subject]
        u = (stratum + jitter.uniform(0.2, 0.8)) / n
        params[name] = lo + u * (hi - lo)
    hr_values = config._hr_values()
    if hr_values:
        params["hr"] = hr_values[subject % len(hr_values)]
    params["amp_s1"] = 1.0
    params["sex"] = int(table_rng.permutation(np.arange(n) % 2)[subject])
    if config.domain_shift == "rate_shift":
        params["hr"] *= 1.3
    elif config.domain_shift == "amplitude_shift":
        params["amp_s2"] *= 0.5
    return params


def _beat_track(params: dict, n: int, fs: int, hrv: float, rng) -> FiducialTrack:
    rr_mean = 1.0 / params["hr"]
    qrs_len = max(3, int(round(params["qrs"] * fs)))
    pr_len = max(2, int(round(params["pr"] * fs)))
    r_lead = int(round(0.4 * qrs_len))
    cols = {k: [] for k in FiducialTrack.FIELDS}
    t = params["pr"] + 0.1 + rng.uniform(0.0, rr_mean)
    rr = rr_mean
    while True:
        r = int(round(t * fs))
        qrs_on = r - r_lead
        p_on = qrs_on - pr_len
        qrs_off = qrs_on + qrs_len
        t_off = qrs_on + int(round(params["qt"] * np.sqrt(rr) * fs))
        if t_off >= n:
            break
        if p_on >= 0:
            for k, v in zip(FiducialTrack.FIELDS, (p_on, qrs_on, qrs_off, t_off, r)):
                cols[k].append(v)
        rr = rr_mean * (1.0 + hrv * rng.standard_normal())
        rr = float(np.clip(rr, 0.7 * rr_mean, 1.3 * rr_mean))
        t += rr
    return FiducialTrack(**cols, rate_hz=fs).validate()


def _gauss(n: int, center: float, sigma: float) -> np.ndarray:
    idx = np.arange(n)
    return np.exp(-0.5 * ((idx - center) / sigma) ** 2)


def _lobe(out: np.ndarray, center: float, sigma: float, amp: float, carrier_hz: float = 0.0, fs: int = 1):
    """Add a Gaussian lobe (optionally a cosine-modulated burst) in place, truncated at 5 sigma."""
    sigma = max(sigma, 0.5)
    lo = max(0, int(np.floor(center - 5 * sigma)))
    hi = min(len(out), int(np.ceil(center + 5 * sigma)) + 1)
    if lo >= hi:
        return
    idx = np.arange(lo, hi)
    g = amp * np.exp(-0.5 * ((idx - center) / sigma) ** 2)
    if carrier_hz:
        g = g * np.cos(2 * np.pi * carrier_hz * (idx - center) / fs)
    out[lo:hi] += g


def render_ecg(track: FiducialTrack, params: dict, n: int) -> np.ndarray:
    ecg = np.zeros(n)
    p_off = track.pr_segment_start()
    t_on = track.st_segment_end()
    for i in range(len(track)):
        p_on, qon, qoff, toff, r = (int(getattr(track, k)[i]) for k in FiducialTrack.FIELDS)
        qlen = qoff - qon
        _lobe(ecg, (p_on + p_off[i]) / 2, (p_off[i] - p_on) / 6, params["amp_p"])
        _lobe(ecg, qon + 0.15 * qlen, qlen / 12, params["amp_q"])
        _lobe(ecg, r, qlen / 10, params["amp_r"])
        _lobe(ecg, qon + 0.8 * qlen, qlen / 12, params["amp_s"])
        _lobe(ecg, (t_on[i] + toff) / 2, (toff - t_on[i]) / 6, params["amp_t"])
    return ecg


def render_heart_sound(track: FiducialTrack, params: dict, n: int, latency: int) -> np.ndarray:
    fs = track.rate_hz
    hs = np.zeros(n)
    sigma = 0.012 * fs
    for qon, toff in zip(track.qrs_on, track.t_off):
        _lobe(hs, float(qon + latency), sigma, params["amp_s1"], params["f_s1"], fs)
        _lobe(hs, float(toff), sigma, params["amp_s2"], params["f_s2"], fs)
    return band_pass(hs, fs, 20.0, min(120.0, 0.5 * fs - 1e-9))


def render_bp(track: FiducialTrack, params: dict, n: int, transit: int) -> np.ndarray:
    """Pulse train peaking exactly ``transit`` samples after each R, scaled to (dia, sys)."""
    fs = track.rate_hz
    rise = params["bp_rise"] * fs
    wave = np.zeros(n)
    idx = np.arange(n, dtype=np.float64)
    for r in track.r_peak:
        peak = r + transit
        tau = idx - (peak - rise)
        ok = tau > 0
        x = tau[ok] / rise
        wave[ok] = np.maximum(wave[ok], x ** 2 * np.exp(2.0 * (1.0 - x)))
    return params["dia"] + (params["sys"] - params["dia"]) * wave


def generate_subject(config: SynthConfig, subject: int) -> tuple[RawRecord, FiducialTrack]:
    params = _subject_params(config, subject)
    fs = config.rate_hz
    n = int(round(config.seconds_per_subject * fs))
    rng = np.random.default_rng([config.seed, subject, 11])
    track = _beat_track(params, n, fs, config.hr_variability, rng)
    if len(track) < 2:
        raise ConfigurationError(f"subject {subject}: fewer than two beats generated")
    latency = int(round(config.s1_latency_s * fs))
    transit = int(round(config.pulse_transit_s * fs))
    ecg = render_ecg(track, params, n)
    hs = render_heart_sound(track, params, n, latency)
    bp = render_bp(track, params, n, transit)
    if config.noise_std > 0:
        noise = np.random.default_rng([config.seed, subject, 13]).standard_normal((3, n))
        hs = hs + config.noise_std * noise[0]
        ecg = ecg + config.noise_std * noise[1]
        bp = bp + config.noise_std * noise[2]
    attrs = SubjectAttributes(bmi=params["bmi"], sex=params["sex"], age=params["age"])
    record = RawRecord(
        subject_id=subject, protocol=config.protocol, heart_sound=hs, ecg=ecg, bp=bp,
        source_rate_hz=fs, attributes=attrs,
    )
    return record, track


def generate(config: SynthConfig) -> list[tuple[RawRecord, FiducialTrack]]:
    """One record plus its fiducial track per subject; deterministic in ``config.seed``."""
    return [generate_subject(config, s) for s in range(config.n_subjects)]


def delineate(ecg: np.ndarray, rate_hz: int = TARGET_RATE) -> FiducialTrack:
    """Rule-based fiducials for recorded ECG (weaker ground truth than construction).

    R peaks by prominence; QRS on/offset where the absolute slope falls below
    10% of its local maximum; P onset and T offset from fixed PR and
    rate-corrected QT durations.
    """
    x = np.asarray(ecg, dtype=np.float64)
    fs = rate_hz
    peaks, _ = find_peaks(x, distance=int(0.3 * fs), prominence=0.5 * np.std(x) + 1e-12)
    slope = np.abs(np.gradient(x))
    half = int(0.08 * fs)
    cols = {k: [] for k in FiducialTrack.FIELDS}
    for i, r in enumerate(peaks):
        lo, hi = max(0, r - half), min(len(x), r + half)
        local = slope[lo:hi]
        thresh = 0.1 * local.max()
        on = r
        while on > lo and slope[on - 1] > thresh:
            on -= 1
        off = r + 1
        while off < hi - 1 and slope[off] > thresh:
            off += 1
        on = min(on, r - 1)
        off = max(off, r + 1)
        rr = (peaks[i] - peaks[i - 1]) / fs if i else (peaks[1] - peaks[0]) / fs if len(peaks) > 1 else 1.0
        p_on = on - int(round(0.16 * fs))
        t_off = on + int(round(0.40 * np.sqrt(rr) * fs))
        if p_on < 0 or t_off >= len(x) or t_off <= off:
            continue
        for k, v in zip(FiducialTrack.FIELDS, (p_on, on, off, t_off, r)):
            cols[k].append(int(v))
    return FiducialTrack(**cols, rate_hz=fs, delineated=True).validate()


def build_splits(
    pairs, filter_spec: FilterSpec | None = None, ratio: float = 0.8
) -> tuple[WindowSet, WindowSet, list[dict]]:
    """Preprocess, split temporally, window and label.

    ``pairs`` holds ``(RawRecord, FiducialTrack | None)``; a missing track is
    replaced by ``delineate`` on the preprocessed ECG.
    Returns ``(train, test, per_record_summary)``.
    """
    train_sets, test_sets, summary = [], [], []
    for record, track in pairs:
        proc = require_window(preprocess(record, filter_spec))
        if track is None:
            track = delineate(proc.ecg, TARGET_RATE)
        labeler = make_labeler(track)
        tr, te = split_record(proc, ratio)
        train_w = window_train(tr, labeler) if tr is not None else []
        test_w = window_test(te, labeler) if te is not None else []
        train_sets.append(WindowSet.from_samples(train_w))
        test_sets.append(WindowSet.from_samples(test_w))
        summary.append({
            "subject_id": record.subject_id,
            "length": len(proc),
            "train_length": len(tr) if tr is not None else 0,
            "test_length": len(te) if te is not None else 0,
            "train_windows": len(train_w),
            "test_windows": len(test_w),
            "delineated": bool(track.delineated),
        })
    return WindowSet.concat(train_sets), WindowSet.concat(test_sets), summary


def synthetic_splits(config: SynthConfig, filter_spec: FilterSpec | None = None):
    return build_splits(generate(config), filter_spec)
