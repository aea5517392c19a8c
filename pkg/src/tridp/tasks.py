"""Downstream task definitions, label construction and metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, InputError

SEG_CLASSES = ("pr_interval", "qrs_interval", "st_interval", "rr_interval", "pr_segment", "st_segment")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    head_kind: str
    n_classes: int | None = None
    field: str = ""

    @property
    def metric(self) -> str:
        return {"classifier": "acc", "segmenter": "iou", "regressor": "mae"}[self.head_kind]


TASKS = {
    "subject_id": TaskSpec("subject_id", "classifier", 30, "subject_id"),
    "bmi": TaskSpec("bmi", "classifier", 3, "bmi_class"),
    "sex": TaskSpec("sex", "classifier", 2, "sex"),
    "age": TaskSpec("age", "classifier", 3, "age_class"),
    "segmentation": TaskSpec("segmentation", "segmenter", None, "seg_mask"),
    "bp": TaskSpec("bp", "regressor", None, "bp"),
}


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise ConfigurationError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


def bmi_class(bmi: float) -> int:
    """0 below 18.5, 1 on [18.5, 24.9], 2 above 24.9."""
    if not bmi > 0:
        raise InputError(f"bmi must be positive, got {bmi}")
    if bmi < 18.5:
        return 0
    return 1 if bmi <= 24.9 else 2


def age_class(age: float) -> int:
    """0 below 24, 1 on [24, 30], 2 above 30."""
    if not age > 0:
        raise InputError(f"age must be positive, got {age}")
    if age < 24:
        return 0
    return 1 if age <= 30 else 2


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels outside [0, {n_classes})")
    out = np.zeros((len(labels), n_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def binarize(logits, threshold: float = 0.5) -> np.ndarray:
    """Sigmoid then threshold; logit 0 maps to probability 0.5, counted positive."""
    logits = np.asarray(logits, dtype=np.float64)
    return (1.0 / (1.0 + np.exp(-logits)) >= threshold).astype(np.uint8)


def iou(pred_mask, true_mask) -> tuple[np.ndarray, float]:
    """Per-class IoU pooled over the whole set, plus their unweighted mean.

    Masks are ``(N, 6, L)`` or ``(6, L)`` binary arrays. A class absent from
    both prediction and truth everywhere scores 1.
    """
    p = np.asarray(pred_mask).astype(bool)
    t = np.asarray(true_mask).astype(bool)
    if p.shape != t.shape:
        raise InputError(f"mask shapes differ: {p.shape} vs {t.shape}")
    if p.ndim == 2:
        p, t = p[None], t[None]
    axes = (0, 2)
    inter = np.logical_and(p, t).sum(axis=axes, dtype=np.int64)
    union = np.logical_or(p, t).sum(axis=axes, dtype=np.int64)
    per_class = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return per_class, float(np.mean(per_class))


def accuracy(logits, labels) -> float:
    """Fraction with argmax(pred) == argmax(label); ``labels`` may be one-hot or indices."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    if len(logits) != len(labels):
        raise InputError("prediction and label counts differ")
    if len(labels) == 0:
        raise InputError("empty batch")
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return float(np.mean(logits.argmax(axis=1) == labels))


def mae(pred, true, bp_mean=None, bp_std=None) -> float:
    """Mean absolute error in source units.

    ``pred``/``true`` are normalized ``(N, L)`` sequences; per-window
    ``bp_mean``/``bp_std`` undo the per-record z-score before comparing.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise InputError(f"shapes differ: {pred.shape} vs {true.shape}")
    if bp_std is not None:
        std = np.asarray(bp_std, dtype=np.float64).reshape(-1, *([1] * (pred.ndim - 1)))
        mean = np.zeros_like(std) if bp_mean is None else np.asarray(bp_mean, np.float64).reshape(std.shape)
        pred = pred * std + mean
        true = true * std + mean
    return float(np.mean(np.abs(pred - true)))
