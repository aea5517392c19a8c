"""Transfer-risk scaling calculator for comparing the direct and indirect paths.

A path is summarized by samples per task ``n``, number of tasks ``t``, task
diversity ``nu`` and task-specific capacity ``c_f``; the shared representation
contributes ``c_h``. The bound helpers return the *shape* of the scaling law:
hidden polylogarithmic factors are folded into a user-supplied constant.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import InputError


@dataclass(frozen=True)
class PathProfile:
    n: float
    t: float
    nu: float
    c_f: float
    label: str = ""

    def __post_init__(self):
        if not (self.n > 0 and self.t > 0 and self.nu > 0):
            raise InputError(f"n, t and nu must be positive: {self}")
        if self.c_f < 0:
            raise InputError(f"c_f must be nonnegative: {self}")

    @classmethod
    def from_json(cls, path) -> "PathProfile":
        data = json.loads(Path(path).read_text())
        try:
            return cls(n=data["n"], t=data["t"], nu=data["nu"], c_f=data["c_f"], label=data.get("label", ""))
        except KeyError as exc:
            raise InputError(f"{path}: missing field {exc}") from exc


@dataclass(frozen=True)
class SharedCapacity:
    c_h: float

    def __post_init__(self):
        if self.c_h < 0:
            raise InputError(f"c_h must be nonnegative, got {self.c_h}")


def empirical_train_risk(losses) -> float:
    """Cross-task average of a ``(t, n)`` per-sample loss matrix."""
    arr = np.asarray(losses, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InputError("expected a nonempty (t, n) loss matrix")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise InputError("losses must be finite and nonnegative")
    t, n = arr.shape
    return float(arr.sum() / (n * t))


def empirical_test_risk(losses) -> float:
    arr = np.asarray(losses, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InputError("empty loss vector")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise InputError("losses must be finite and nonnegative")
    return float(arr.sum() / arr.size)


def train_term(profile: PathProfile, shared: SharedCapacity) -> float:
    """(1/nu) * sqrt((C(H) + t C(F)) / (n t))."""
    nt = profile.n * profile.t
    if nt <= 0 or profile.nu <= 0:
        raise InputError("n*t and nu must be positive")
    return math.sqrt((shared.c_h + profile.t * profile.c_f) / nt) / profile.nu


@dataclass(frozen=True)
class DominanceReport:
    indirect_dominates: bool
    indirect_term: float
    direct_term: float

    def __bool__(self):
        return self.indirect_dominates

    def to_dict(self) -> dict:
        return asdict(self)


def dominance(indirect: PathProfile, direct: PathProfile, shared: SharedCapacity) -> DominanceReport:
    """The indirect path dominates iff its training term is strictly smaller."""
    a = train_term(indirect, shared)
    b = train_term(direct, shared)
    return DominanceReport(a < b, a, b)


def tl_risk_bound(profile: PathProfile, shared: SharedCapacity, m: float, constant: float = 1.0) -> float:
    """constant * (train_term + sqrt(C(F) / m)); ``m`` may be ``inf``."""
    if not m > 0:
        raise InputError(f"target sample count m must be positive, got {m}")
    adaptation = 0.0 if math.isinf(m) else math.sqrt(profile.c_f / m)
    return constant * (train_term(profile, shared) + adaptation)


def format_report(indirect: PathProfile, direct: PathProfile, shared: SharedCapacity) -> str:
    rep = dominance(indirect, direct, shared)

    def side(p: PathProfile, value: float) -> str:
        return (f"(1/{p.nu:g}) * sqrt(({shared.c_h:g} + {p.t:g}*{p.c_f:g}) / ({p.n:g}*{p.t:g})) = {value:.6g}")

    verdict = "indirect path dominates" if rep.indirect_dominates else "indirect path does not dominate"
    return "\n".join([
        f"indirect {indirect.label or ''}: {side(indirect, rep.indirect_term)}".replace("  ", " "),
        f"direct {direct.label or ''}: {side(direct, rep.direct_term)}".replace("  ", " "),
        f"criterion: {rep.indirect_term:.6g} < {rep.direct_term:.6g} -> {verdict}",
    ])
