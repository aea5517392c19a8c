"""Paired recording data model, ingestion, preprocessing and windowing.

Channels are heart sound (``hs``), ``ecg`` and arterial blood pressure (``bp``).
Everything downstream consumes 250 Hz, per-record z-scored channels cut into
2048-sample windows.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .exceptions import InputError
from .tasks import SEG_CLASSES, age_class, bmi_class  # noqa: F401  (SEG_CLASSES: seg_mask row order)

log = logging.getLogger(__name__)

TARGET_RATE = 250
WINDOW = 2048
TRAIN_STRIDE = 256
CHANNELS = ("hs", "ecg", "bp")
PROTOCOLS = ("resting", "valsalva", "apnea", "tilt_up", "tilt_down")


@dataclass(frozen=True)
class SubjectAttributes:
    bmi: float
    sex: int
    age: float

    def __post_init__(self):
        if not self.bmi > 0:
            raise InputError(f"bmi must be positive, got {self.bmi}")
        if not self.age > 0:
            raise InputError(f"age must be positive, got {self.age}")
        if self.sex not in (0, 1):
            raise InputError(f"sex must be 0 or 1, got {self.sex}")


@dataclass
class RawRecord:
    subject_id: int
    protocol: str
    heart_sound: np.ndarray
    ecg: np.ndarray
    bp: np.ndarray
    source_rate_hz: int
    attributes: SubjectAttributes
    # per-channel (mean, std) removed by preprocess; identity until then
    scale: dict = field(default_factory=dict)
    # absolute sample offset of this record inside its parent recording
    origin: int = 0

    def __post_init__(self):
        self.heart_sound = np.asarray(self.heart_sound, dtype=np.float64)
        self.ecg = np.asarray(self.ecg, dtype=np.float64)
        self.bp = np.asarray(self.bp, dtype=np.float64)
        if not (len(self.heart_sound) == len(self.ecg) == len(self.bp)):
            raise InputError(
                f"subject {self.subject_id}: channel lengths differ "
                f"({len(self.heart_sound)}, {len(self.ecg)}, {len(self.bp)})"
            )
        if self.source_rate_hz <= 0:
            raise InputError(f"source_rate_hz must be positive, got {self.source_rate_hz}")
        if self.protocol not in PROTOCOLS:
            raise InputError(f"unknown protocol {self.protocol!r}")
        for name in CHANNELS:
            if not np.isfinite(self.channel(name)).all():
                raise InputError(f"subject {self.subject_id}: non-finite samples in {name}")

    def __len__(self):
        return len(self.ecg)

    def channel(self, name: str) -> np.ndarray:
        return {"hs": self.heart_sound, "ecg": self.ecg, "bp": self.bp}[name]

    def replace(self, **kw) -> "RawRecord":
        d = dict(
            subject_id=self.subject_id, protocol=self.protocol, heart_sound=self.heart_sound,
            ecg=self.ecg, bp=self.bp, source_rate_hz=self.source_rate_hz,
            attributes=self.attributes, scale=dict(self.scale), origin=self.origin,
        )
        d.update(kw)
        return RawRecord(**d)


@dataclass
class PairedSample:
    hs: np.ndarray
    ecg: np.ndarray
    bp: np.ndarray
    seg_mask: np.ndarray
    subject_id: int
    bmi_class: int
    sex: int
    age_class: int
    bp_mean: float = 0.0
    bp_std: float = 1.0
    offset: int = 0

    def __post_init__(self):
        for name in CHANNELS:
            arr = getattr(self, name)
            if arr.shape != (WINDOW,):
                raise InputError(f"{name} window must have length {WINDOW}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise InputError(f"{name} window has non-finite samples")
        if self.seg_mask.shape != (6, WINDOW):
            raise InputError(f"seg_mask must be 6x{WINDOW}, got {self.seg_mask.shape}")
        if not 0 <= self.subject_id < 30:
            raise InputError(f"subject_id must lie in [0, 30), got {self.subject_id}")


@dataclass
class WindowSet:
    """Column-stacked batch of ``PairedSample`` used for training and evaluation."""

    hs: np.ndarray
    ecg: np.ndarray
    bp: np.ndarray
    seg_mask: np.ndarray
    subject_id: np.ndarray
    bmi_class: np.ndarray
    sex: np.ndarray
    age_class: np.ndarray
    bp_mean: np.ndarray
    bp_std: np.ndarray

    FIELDS = ("hs", "ecg", "bp", "seg_mask", "subject_id", "bmi_class", "sex", "age_class", "bp_mean", "bp_std")

    def __len__(self):
        return len(self.hs)

    def __getitem__(self, idx) -> "WindowSet":
        return WindowSet(**{f: getattr(self, f)[idx] for f in self.FIELDS})

    @classmethod
    def from_samples(cls, samples) -> "WindowSet":
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls(
            hs=np.stack([s.hs for s in samples]).astype(np.float32),
            ecg=np.stack([s.ecg for s in samples]).astype(np.float32),
            bp=np.stack([s.bp for s in samples]).astype(np.float32),
            seg_mask=np.stack([s.seg_mask for s in samples]).astype(np.uint8),
            subject_id=np.array([s.subject_id for s in samples], dtype=np.int64),
            bmi_class=np.array([s.bmi_class for s in samples], dtype=np.int64),
            sex=np.array([s.sex for s in samples], dtype=np.int64),
            age_class=np.array([s.age_class for s in samples], dtype=np.int64),
            bp_mean=np.array([s.bp_mean for s in samples], dtype=np.float64),
            bp_std=np.array([s.bp_std for s in samples], dtype=np.float64),
        )

    @classmethod
    def empty(cls) -> "WindowSet":
        z = np.zeros((0, WINDOW), dtype=np.float32)
        i = np.zeros(0, dtype=np.int64)
        f = np.zeros(0, dtype=np.float64)
        return cls(z, z, z, np.zeros((0, 6, WINDOW), np.uint8), i, i, i, i, f, f)

    @classmethod
    def concat(cls, sets) -> "WindowSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(**{f: np.concatenate([getattr(s, f) for s in sets]) for f in cls.FIELDS})

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, **{f: getattr(self, f) for f in self.FIELDS})
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "WindowSet":
        with np.load(path) as z:
            return cls(**{f: z[f] for f in cls.FIELDS})


@dataclass(frozen=True)
class FilterSpec:
    """Zero-phase band edges (Hz) per channel; ``None`` skips filtering."""

    hs: tuple | None = (20.0, 120.0)
    ecg: tuple | None = (0.5, 40.0)
    bp: tuple | None = (0.5, 40.0)
    zscore: bool = True

    def band(self, name: str):
        return getattr(self, name)


def band_pass(x: np.ndarray, rate: float, low: float, high: float) -> np.ndarray:
    """Brick-wall FFT band-pass. Zero-phase and idempotent (a spectral projection)."""
    x = np.asarray(x, dtype=np.float64)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / rate)
    spec[(freqs < low) | (freqs > high)] = 0.0
    return np.fft.irfft(spec, n=len(x))


def resample(x: np.ndarray, source_rate: int, target_rate: int = TARGET_RATE) -> np.ndarray:
    if source_rate == target_rate:
        return np.asarray(x, dtype=np.float64).copy()
    ratio = Fraction(target_rate, source_rate)
    return resample_poly(np.asarray(x, dtype=np.float64), ratio.numerator, ratio.denominator, padtype="line")


def zscore(x: np.ndarray, reference: np.ndarray | None = None) -> tuple[np.ndarray, float, float]:
    """Per-record standardization with a zero-variance guard.

    ``reference`` is the unfiltered channel; if it is constant, or the
    filtered signal is numerically zero relative to it, zeros are returned.
    """
    mean = float(np.mean(x))
    std = float(np.std(x))
    ref_scale = max(1.0, float(np.max(np.abs(reference)))) if reference is not None and len(reference) else 1.0
    constant_ref = reference is not None and np.ptp(reference) == 0
    if constant_ref or std <= 1e-9 * ref_scale:
        return np.zeros_like(x), mean, 1.0
    return (x - mean) / std, mean, std


def preprocess(record: RawRecord, filter_spec: FilterSpec | None = None) -> RawRecord:
    """Resample to 250 Hz, band-pass each channel, then z-score per record.

    The removed (mean, std) of every channel is kept in ``record.scale`` so
    metrics can be reported in source units.
    """
    spec = filter_spec or FilterSpec()
    out = {}
    scale = {}
    for name in CHANNELS:
        raw = record.channel(name)
        y = resample(raw, record.source_rate_hz)
        band = spec.band(name)
        if band is not None:
            y = band_pass(y, TARGET_RATE, *band)
        if not np.isfinite(y).all():
            raise InputError(f"subject {record.subject_id}: non-finite {name} after filtering")
        prev_mean, prev_std = record.scale.get(name, (0.0, 1.0))
        if spec.zscore:
            y, mean, std = zscore(y, raw)
            # compose with any scaling already applied so units stay recoverable
            scale[name] = (prev_mean + prev_std * mean, prev_std * std)
        else:
            scale[name] = (prev_mean, prev_std)
        out[name] = y
    origin = record.origin * TARGET_RATE // record.source_rate_hz
    return record.replace(
        heart_sound=out["hs"], ecg=out["ecg"], bp=out["bp"], source_rate_hz=TARGET_RATE,
        scale=scale, origin=origin,
    )


def require_window(record: RawRecord) -> RawRecord:
    """Reject a preprocessed record too short for a single window."""
    if len(record) < WINDOW:
        raise InputError(f"subject {record.subject_id}: {len(record)} samples at {TARGET_RATE} Hz, need >= {WINDOW}")
    return record


def duration_seconds(n_samples: int, rate_hz: float) -> float:
    return n_samples / rate_hz


def train_offsets(length: int, width: int = WINDOW, stride: int = TRAIN_STRIDE) -> list[int]:
    if length < width:
        return []
    return list(range(0, length - width + 1, stride))


def test_offsets(length: int, width: int = WINDOW) -> list[int]:
    return list(range(0, length - width + 1, width)) if length >= width else []


test_offsets.__test__ = False  # keep pytest from collecting this helper


def _cut(record: RawRecord, offsets, labeler) -> list[PairedSample]:
    if record.source_rate_hz != TARGET_RATE:
        raise InputError(f"windowing needs a {TARGET_RATE} Hz record; preprocess first")
    if len(record) < WINDOW:
        log.warning("subject %s: record of %d samples is shorter than one window", record.subject_id, len(record))
        return []
    bp_mean, bp_std = record.scale.get("bp", (0.0, 1.0))
    attrs = record.attributes
    samples = []
    for off in offsets:
        sl = slice(off, off + WINDOW)
        mask = labeler(record.origin + off) if labeler else np.zeros((6, WINDOW), np.uint8)
        samples.append(PairedSample(
            hs=record.heart_sound[sl], ecg=record.ecg[sl], bp=record.bp[sl], seg_mask=mask,
            subject_id=record.subject_id, bmi_class=bmi_class(attrs.bmi), sex=attrs.sex,
            age_class=age_class(attrs.age), bp_mean=bp_mean, bp_std=bp_std,
            offset=record.origin + off,
        ))
    return samples


def window_train(record: RawRecord, labeler=None) -> list[PairedSample]:
    """Overlapping windows (width 2048, stride 256).

    ``labeler(absolute_offset) -> 6x2048 mask`` supplies segmentation labels;
    without it the mask is all zeros.
    """
    return _cut(record, train_offsets(len(record)), labeler)


def window_test(record: RawRecord, labeler=None) -> list[PairedSample]:
    """Non-overlapping windows; the tail shorter than 2048 is dropped."""
    return _cut(record, test_offsets(len(record)), labeler)


window_test.__test__ = False


def split_record(record: RawRecord, ratio: float = 0.8) -> tuple[RawRecord | None, RawRecord | None]:
    """Temporal split: first ``ratio`` of the timeline to train, the rest to test.

    A part shorter than one window is dropped (returned as ``None``).
    """
    n = len(record)
    cut = int(np.floor(ratio * n))
    parts = []
    for lo, hi, name in ((0, cut, "train"), (cut, n, "test")):
        if hi - lo < WINDOW:
            log.warning(
                "subject %s excluded from %s: %d samples < %d", record.subject_id, name, hi - lo, WINDOW,
            )
            parts.append(None)
            continue
        parts.append(record.replace(
            heart_sound=record.heart_sound[lo:hi], ecg=record.ecg[lo:hi], bp=record.bp[lo:hi],
            origin=record.origin + lo,
        ))
    return parts[0], parts[1]


def split_by_ratio(records, ratio: float = 0.8) -> tuple[list[RawRecord], list[RawRecord]]:
    train, test = [], []
    for rec in records:
        a, b = split_record(rec, ratio)
        if a is not None:
            train.append(a)
        if b is not None:
            test.append(b)
    return train, test


# --- on-disk ingestion format ---------------------------------------------

def write_record(record: RawRecord, stem) -> tuple[Path, Path]:
    """Write ``<stem>.f32`` (hs, ecg, bp little-endian float32, concatenated) and ``<stem>.json``."""
    stem = Path(stem)
    data = np.concatenate([record.heart_sound, record.ecg, record.bp]).astype("<f4")
    bin_path = stem.with_suffix(".f32")
    json_path = stem.with_suffix(".json")
    bin_path.write_bytes(data.tobytes())
    n = len(record)
    sidecar = {
        "subject_id": int(record.subject_id),
        "protocol": record.protocol,
        "source_rate_hz": int(record.source_rate_hz),
        "lengths": {"hs": n, "ecg": n, "bp": n},
        "bmi": float(record.attributes.bmi),
        "sex": int(record.attributes.sex),
        "age": float(record.attributes.age),
    }
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return bin_path, json_path


def read_record(path) -> RawRecord:
    """Read a record from its ``.f32`` payload (or sidecar path)."""
    path = Path(path)
    bin_path = path.with_suffix(".f32")
    json_path = path.with_suffix(".json")
    if not json_path.exists():
        raise InputError(f"missing sidecar {json_path}")
    if not bin_path.exists():
        raise InputError(f"missing payload {bin_path}")
    try:
        meta = json.loads(json_path.read_text())
        lengths = meta["lengths"]
        n_hs, n_ecg, n_bp = (int(lengths[c]) for c in CHANNELS)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed sidecar {json_path}: {exc}") from exc
    data = np.frombuffer(bin_path.read_bytes(), dtype="<f4").astype(np.float64)
    if len(data) != n_hs + n_ecg + n_bp:
        raise InputError(f"{bin_path}: {len(data)} floats, sidecar declares {n_hs + n_ecg + n_bp}")
    hs, ecg, bp = np.split(data, [n_hs, n_hs + n_ecg])
    try:
        attrs = SubjectAttributes(bmi=float(meta["bmi"]), sex=int(meta["sex"]), age=float(meta["age"]))
        return RawRecord(
            subject_id=int(meta["subject_id"]), protocol=meta["protocol"], heart_sound=hs, ecg=ecg, bp=bp,
            source_rate_hz=int(meta["source_rate_hz"]), attributes=attrs,
        )
    except KeyError as exc:
        raise InputError(f"malformed sidecar {json_path}: missing {exc}") from exc
