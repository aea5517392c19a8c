"""Loss-weight sweep over the distortion/perception objective, generative
quality metrics (FID, manifold precision/recall), phase detection along the
sweep, and the channel-scale (resolution) study.

Embeddings are the discriminator's last-stage maps mean-pooled over time.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import torch
from scipy.spatial.distance import cdist

from .exceptions import DivergenceError, InputError
from .losses import LossWeights
from .netblocks import Net1D, discriminate, n_parameters
from .protocol import (
    Pretrained, ProtocolConfig, _batched_eval, _tensor, evaluate, generate_ecg, pretrain_autoencoder,
    pretrain_discriminator, train_base,
)
from .signalio import WindowSet

log = logging.getLogger(__name__)

PHASES = ("positive_sum", "coopetitive", "negative_sum", "unassigned")
# Nine labelled operating points, kept in their published order (H precedes I).
REPRESENTATIVE = (
    ("A", 700.0, 1.0), ("B", 5.0, 1.0), ("C", 1.0, 9.0), ("D", 1.0, 60.0), ("E", 1.0, 80.0),
    ("F", 1.0, 2000.0), ("G", 1.0, 6000.0), ("H", 1.0, 800000.0), ("I", 1.0, 170000.0),
)
SCALE_LADDER = ("1", "1/2", "1/4", "1/8", "1/16", "1/32")
FID_EPS = 1e-6
DEFAULT_K = 3


# --- grid -----------------------------------------------------------------------

@dataclass(frozen=True)
class GridPoint:
    lambda_d: float
    lambda_p: float
    label: str = ""

    @property
    def ratio(self) -> float:
        return LossWeights(self.lambda_d, self.lambda_p).ratio

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_d, self.lambda_p)


@dataclass(frozen=True)
class SweepGrid:
    """Leg 1: lambda_d from 1e4 down to 1 (lambda_p = 1); leg 2: lambda_p from 1 up
    to 1e7 (lambda_d = 1), ``points_per_decade`` log steps each, plus the nine
    labelled points. ``pairs`` replaces the legs with an explicit point list."""

    points_per_decade: int = 2
    leg1_decades: int = 4
    leg2_decades: int = 7
    include_representative: bool = True
    pairs: tuple = ()

    def __post_init__(self):
        if self.points_per_decade < 1:
            raise InputError("points_per_decade must be >= 1")
        object.__setattr__(self, "pairs", tuple(tuple(float(v) for v in p) for p in self.pairs))

    @classmethod
    def reduced(cls) -> "SweepGrid":
        return cls(points_per_decade=1)

    @property
    def representative_points(self) -> tuple:
        return tuple(GridPoint(d, p, name) for name, d, p in REPRESENTATIVE)

    def leg1(self) -> list:
        k = self.points_per_decade
        return [GridPoint(_round(10 ** (i / k)), 1.0) for i in range(self.leg1_decades * k, -1, -1)]

    def leg2(self) -> list:
        k = self.points_per_decade
        return [GridPoint(1.0, _round(10 ** (i / k))) for i in range(0, self.leg2_decades * k + 1)]

    def points(self) -> list:
        """Unique points sorted by increasing lambda_p / lambda_d."""
        raw = [GridPoint(*p) for p in self.pairs] if self.pairs else self.leg1() + self.leg2()
        if self.include_representative:
            raw += list(self.representative_points)
        merged: dict = {}
        for p in raw:
            key = (p.lambda_d, p.lambda_p)
            if key not in merged or p.label:
                merged[key] = p
        return sorted(merged.values(), key=lambda p: (p.ratio, -p.lambda_d))

    def to_dict(self) -> dict:
        return {
            "points_per_decade": self.points_per_decade, "leg1_decades": self.leg1_decades,
            "leg2_decades": self.leg2_decades, "include_representative": self.include_representative,
            "pairs": [list(p) for p in self.pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        d = dict(d)
        d["pairs"] = tuple(tuple(p) for p in d.get("pairs", ()))
        return cls(**d)


def _round(x: float) -> float:
    return float(f"{x:.6g}")


@dataclass
class SweepPoint:
    lambda_d: float
    lambda_p: float
    label: str = ""
    mse: float = math.nan
    fid: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    f1: float = math.nan
    downstream: dict = field(default_factory=dict)
    phase: str = "unassigned"
    converged: bool = True
    fid_regularized: bool = False

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_d, self.lambda_p)

    @property
    def ratio(self) -> float:
        return self.weights.ratio

    def finite(self) -> bool:
        return self.converged and all(math.isfinite(v) for v in (self.mse, self.fid))


# --- metrics --------------------------------------------------------------------

def pool_embeddings(maps) -> np.ndarray:
    """(N, C, L) feature maps -> (N, C) vectors by mean over time."""
    arr = maps.detach().cpu().numpy() if torch.is_tensor(maps) else np.asarray(maps)
    if arr.ndim == 2:
        return arr.astype(np.float64)
    if arr.ndim != 3:
        raise InputError(f"expected (N, C, L) maps, got shape {arr.shape}")
    return arr.astype(np.float64).mean(axis=2)


def embed(disc: Net1D, windows: np.ndarray) -> np.ndarray:
    disc.eval()
    maps = _batched_eval(lambda x: discriminate(disc, x), _tensor(windows))
    return pool_embeddings(maps)


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _trace_sqrt_product(a: np.ndarray, b: np.ndarray) -> float:
    """Tr((A B)^{1/2}) via the symmetric form A^{1/2} B A^{1/2}."""
    s = _sqrt_psd(a)
    m = s @ b @ s
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fid_from_embeddings(real, fake, eps: float = FID_EPS, return_info: bool = False):
    """Frechet distance between Gaussian fits of two (N, D) embedding sets."""
    a = np.asarray(real, dtype=np.float64)
    b = np.asarray(fake, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InputError(f"embedding sets must be (N, D) with equal D: {a.shape} vs {b.shape}")
    if len(a) < 2 or len(b) < 2:
        raise InputError("FID needs at least 2 samples per set")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InputError("non-finite embeddings")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    regularized = False
    if _singular(cov_a) or _singular(cov_b):
        eye = eps * np.eye(len(cov_a))
        cov_a, cov_b = cov_a + eye, cov_b + eye
        regularized = True
        log.debug("FID: singular covariance, added %g * I", eps)
    # both orders, averaged, so that swapping the arguments is bitwise neutral
    tr_sqrt = 0.5 * (_trace_sqrt_product(cov_a, cov_b) + _trace_sqrt_product(cov_b, cov_a))
    diff = mu_a - mu_b
    value = float(diff @ diff + (np.trace(cov_a) + np.trace(cov_b)) - 2.0 * tr_sqrt)
    value = max(value, 0.0)
    return (value, {"regularized": regularized}) if return_info else value


def _singular(cov: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(cov)
    return bool(w.min() <= 1e-12 * max(w.max(), 1.0))


def fid(real: np.ndarray, fake: np.ndarray, disc: Net1D, **kw):
    """FID between real and generated ECG windows in ``disc``'s embedding space."""
    return fid_from_embeddings(embed(disc, real), embed(disc, fake), **kw)


def _knn_radii(x: np.ndarray, k: int) -> np.ndarray:
    d = cdist(x, x)
    return np.sort(d, axis=1)[:, k]  # column 0 is the point itself


def precision_recall(real, fake, k: int = DEFAULT_K) -> tuple[float, float, float]:
    """Manifold precision/recall with k-NN balls; returns ``(precision, recall, f1)``."""
    a = np.asarray(real, dtype=np.float64)
    b = np.asarray(fake, dtype=np.float64)
    if k < 1:
        raise InputError("k must be >= 1")
    if len(a) < k + 1 or len(b) < k + 1:
        raise InputError(f"need at least k+1={k + 1} points per set, got {len(a)} and {len(b)}")
    cross = cdist(b, a)  # fake x real
    precision = float((cross <= _knn_radii(a, k)[None, :]).any(axis=1).mean())
    recall = float((cross.T <= _knn_radii(b, k)[None, :]).any(axis=1).mean())
    f1 = 0.0 if precision * recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


# --- phase detection --------------------------------------------------------------

@dataclass
class PhaseResult:
    ratios: list
    labels: list
    turning_points: tuple  # indices into the ratio-sorted order (None when absent)
    partial: bool
    raw_labels: list = field(default_factory=list)

    @property
    def turning_ratios(self) -> tuple:
        return tuple(None if i is None else self.ratios[i] for i in self.turning_points)

    def to_dict(self) -> dict:
        return {
            "ratios": [_json_num(r) for r in self.ratios], "labels": list(self.labels),
            "raw_labels": list(self.raw_labels), "turning_points": list(self.turning_points),
            "turning_ratios": [None if r is None else _json_num(r) for r in self.turning_ratios],
            "partial": self.partial,
        }


def _json_num(x: float):
    return x if math.isfinite(x) else str(x)


def smooth(values, window: int = 3) -> np.ndarray:
    """Centered moving average; edges average the neighbours that exist."""
    v = np.asarray(values, dtype=np.float64)
    half = window // 2
    out = np.empty_like(v)
    for i in range(len(v)):
        out[i] = v[max(0, i - half): i + half + 1].mean()
    return out


def _differences(v: np.ndarray) -> np.ndarray:
    d = np.empty_like(v)
    d[:-1] = v[1:] - v[:-1]
    d[-1] = v[-1] - v[-2]
    return d


def _raw_phase(dm: float, df: float) -> str:
    if dm <= 0 and df <= 0:
        return "positive_sum"
    if dm > 0 and df <= 0:
        return "coopetitive"
    if dm > 0 and df > 0:
        return "negative_sum"
    return "unassigned"


def _absorb_isolated(labels: list) -> list:
    out = list(labels)
    for i in range(len(out)):
        left = out[i - 1] if i > 0 else None
        right = labels[i + 1] if i + 1 < len(labels) else None
        if left is not None and right is not None and left == right != out[i]:
            out[i] = left
        elif left is None and right is not None and right != out[i] and i + 2 < len(labels) and labels[i + 2] == right:
            out[i] = right
        elif right is None and left is not None and left != out[i] and i >= 2 and out[i - 2] == left:
            out[i] = left
    return out


def _monotone_fit(labels: list) -> tuple[int, int]:
    """Boundaries t1 <= t2 of a positive | coopetitive | negative split with the
    fewest disagreements (ties: earliest boundaries)."""
    n = len(labels)
    best = None
    for t1 in range(n + 1):
        for t2 in range(t1, n + 1):
            fit = ["positive_sum"] * t1 + ["coopetitive"] * (t2 - t1) + ["negative_sum"] * (n - t2)
            cost = sum(a != b for a, b in zip(fit, labels))
            if best is None or cost < best[0]:
                best = (cost, t1, t2)
    return best[1], best[2]


def detect_phases(ratios, mse, fid_values, window: int = 3) -> PhaseResult:
    """Label sweep points positive-sum / coopetitive / negative-sum along the
    perceptual-weight axis; points are sorted by ratio first."""
    r = np.asarray(ratios, dtype=np.float64)
    m = np.asarray(mse, dtype=np.float64)
    f = np.asarray(fid_values, dtype=np.float64)
    if not (len(r) == len(m) == len(f)):
        raise InputError("ratios, mse and fid differ in length")
    if len(r) < 5:
        raise InputError(f"phase detection needs at least 5 converged points, got {len(r)}")
    if not (np.isfinite(m).all() and np.isfinite(f).all()):
        raise InputError("non-finite metrics must be excluded before phase detection")
    order = np.argsort(r, kind="stable")
    r, m, f = r[order], m[order], f[order]
    dm = _differences(smooth(m, window))
    df = _differences(smooth(f, window))
    raw = [_raw_phase(a, b) for a, b in zip(dm, df)]
    t1, t2 = _monotone_fit(_absorb_isolated(raw))
    n = len(r)
    labels = ["positive_sum"] * t1 + ["coopetitive"] * (t2 - t1) + ["negative_sum"] * (n - t2)
    tp1 = t1 if 0 < t1 < n else None
    tp2 = t2 if 0 < t2 < n else None
    partial = len(set(labels)) < 3
    if partial:
        log.info("phase detection found only %s", sorted(set(labels)))
    return PhaseResult([float(x) for x in r], labels, (tp1, tp2), partial, raw)


def assign_phases(points: list, window: int = 3) -> PhaseResult:
    """Run ``detect_phases`` on the converged points and write labels back."""
    good = sorted((p for p in points if p.finite()), key=lambda p: p.ratio)
    for p in points:
        p.phase = "unassigned"
    if len(good) < 5:
        log.warning("only %d converged points, phase detection skipped", len(good))
        return PhaseResult([p.ratio for p in good], ["unassigned"] * len(good), (None, None), True)
    res = detect_phases([p.ratio for p in good], [p.mse for p in good], [p.fid for p in good], window)
    for p, lab in zip(good, res.labels):
        p.phase = lab
    return res


# --- sweep -------------------------------------------------------------------------

def point_metrics(gen, disc: Net1D, test: WindowSet, k: int = DEFAULT_K) -> dict:
    fake = generate_ecg(gen, test.hs)
    real = np.asarray(test.ecg, dtype=np.float32)
    mse = float(np.mean((fake.astype(np.float64) - real.astype(np.float64)) ** 2))
    e_real, e_fake = embed(disc, real), embed(disc, fake)
    value, info = fid_from_embeddings(e_real, e_fake, return_info=True)
    try:
        p, r, f1 = precision_recall(e_real, e_fake, k)
    except InputError as exc:
        log.warning("precision/recall skipped: %s", exc)
        p = r = f1 = math.nan
    return {"mse": mse, "fid": value, "precision": p, "recall": r, "f1": f1,
            "fid_regularized": info["regularized"]}


def _run_point(args) -> SweepPoint:
    gp, train, test, pre, config, heads, k = args
    torch.set_num_threads(1)
    point = SweepPoint(gp.lambda_d, gp.lambda_p, gp.label)
    plan = config.plan("base_task", weights=gp.weights)
    try:
        gen, _ = train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, gp.weights, plan,
                            multi_layer=config.multi_layer)
        gen.graph = config.graph
        for key, value in point_metrics(gen, pre.disc, test, k).items():
            setattr(point, key, value)
        for task, model in sorted((heads or {}).items()):
            point.downstream[task] = evaluate(model, test, gen)
    except DivergenceError as exc:
        log.warning("sweep point (%g, %g) did not converge: %s", gp.lambda_d, gp.lambda_p, exc)
        point.converged = False
    if point.converged and not all(math.isfinite(v) for v in (point.mse, point.fid)):
        point.converged = False
    return point


def run_sweep(train: WindowSet, test: WindowSet, pretrained: Pretrained, config: ProtocolConfig,
              grid: SweepGrid, heads: dict | None = None, workers: int = 1, k: int = DEFAULT_K) -> list:
    """Train the generator once per grid point from the same pretrained parts and
    seed, then score it on ``test``. Returns points sorted by ratio, phases set.

    ``heads`` maps task name -> indirect-path model; each point is scored
    downstream by routing the test heart sound through that point's generator.
    """
    jobs = [(gp, train, test, pretrained, config, heads, k) for gp in grid.points()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork")) as pool:
            points = list(pool.map(_run_point, jobs))
    else:
        points = [_run_point(j) for j in jobs]
    assign_phases(points)
    return points


def resolution_study(train: WindowSet, test: WindowSet, config: ProtocolConfig, grid: SweepGrid,
                     scales=SCALE_LADDER, disc: Net1D | None = None) -> dict:
    """Repeat the sweep with generator channel counts scaled by each entry of
    ``scales``. The feature discriminator is shared by all scales so that
    perceptual metrics stay comparable; it is pretrained once at the base
    config's graph when not supplied."""
    if disc is None:
        disc, _ = pretrain_discriminator(train, config.graph, config.plan("pretrain_disc"))
    out = {}
    for scale in scales:
        t0 = time.time()
        graph = config.graph.with_scale(scale)
        cfg = dataclasses.replace(config, graph=graph)
        hs_ae, _ = pretrain_autoencoder(train.hs, graph, cfg.plan("pretrain_hs"))
        ecg_ae, _ = pretrain_autoencoder(train.ecg, graph, cfg.plan("pretrain_ecg"))
        points = run_sweep(train, test, Pretrained(hs_ae, ecg_ae, disc), cfg, grid)
        good = [p for p in points if p.finite()]
        phases = assign_phases(points)
        out[str(graph.channel_scale)] = {
            "points": points,
            "min_mse": min((p.mse for p in good), default=math.nan),
            "min_fid": min((p.fid for p in good), default=math.nan),
            "turning_ratios": phases.turning_ratios,
            "partial": phases.partial,
            "generator_parameters": n_parameters(hs_ae.encoder) + n_parameters(hs_ae.bottleneck)
            + n_parameters(ecg_ae.decoder),
            "seconds": time.time() - t0,
        }
    return out


# --- downstream optimum ------------------------------------------------------------

def task_score(task: str, metrics: dict) -> tuple[float, bool] | None:
    """Scalar used to rank sweep points for ``task`` and whether higher is better."""
    if "iou_mean" in metrics:
        return metrics["iou_mean"], True
    if "acc" in metrics:
        return metrics["acc"], True
    if "mae" in metrics:
        return metrics["mae"], False
    return None


def locate_downstream_optimum(points: list) -> dict:
    """Best point per task (ties go to the lowest ratio) with its phase and
    whether a coopetitive point lies within one grid step."""
    ordered = sorted(points, key=lambda p: p.ratio)
    tasks = sorted({t for p in ordered for t in p.downstream})
    report = {}
    for task in tasks:
        best = None
        for i, p in enumerate(ordered):
            scored = task_score(task, p.downstream.get(task, {}))
            if scored is None or not math.isfinite(scored[0]) or not p.finite():
                continue
            value, higher = scored
            key = -value if higher else value
            if best is None or key < best[0]:
                best = (key, i, value)
        if best is None:
            report[task] = {"skipped": "no finite metrics"}
            continue
        _, i, value = best
        near = any(ordered[j].phase == "coopetitive" for j in range(max(0, i - 1), min(len(ordered), i + 2)))
        p = ordered[i]
        report[task] = {
            "index": i, "label": p.label, "lambda_d": p.lambda_d, "lambda_p": p.lambda_p, "ratio": p.ratio,
            "value": value, "phase": p.phase, "near_coopetitive": near,
        }
    return report


# --- artifacts ------------------------------------------------------------------------

CSV_COLUMNS = ("config_hash", "seed", "label", "lambda_d", "lambda_p", "ratio", "mse", "fid", "precision", "recall",
               "f1", "phase", "converged", "fid_regularized")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(points: list, config_hash: str, seed: int) -> str:
    """One row per point; downstream metrics appended as ``<task>.<metric>`` columns."""
    extra = sorted({f"{t}.{m}" for p in points for t, ms in p.downstream.items() for m in ms})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_COLUMNS) + extra)
    for p in sorted(points, key=lambda p: p.ratio):
        row = [config_hash, seed, p.label, p.lambda_d, p.lambda_p, p.ratio, p.mse, p.fid, p.precision, p.recall,
               p.f1, p.phase, p.converged, p.fid_regularized]
        for col in extra:
            t, m = col.split(".", 1)
            row.append(p.downstream.get(t, {}).get(m, math.nan))
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data)
    tmp.replace(path)
    return path


def write_sweep_outputs(points: list, out_dir, config_hash: str, seed: int, plots: bool = True) -> dict:
    out_dir = Path(out_dir)
    phases = assign_phases(points)
    paths = {"csv": atomic_write(out_dir / "sweep_results.csv", sweep_csv(points, config_hash, seed))}
    doc = {"config_hash": config_hash, "seed": seed, **phases.to_dict(),
           "downstream_optimum": locate_downstream_optimum(points)}
    paths["phases"] = atomic_write(out_dir / "phases.json", json.dumps(doc, indent=1, sort_keys=True, default=str))
    if plots:
        paths.update(plot_sweep(points, out_dir, config_hash))
    return paths


PHASE_COLORS = {"positive_sum": "tab:green", "coopetitive": "tab:orange", "negative_sum": "tab:red",
                "unassigned": "tab:gray"}


def plot_sweep(points: list, out_dir, config_hash: str = "", optimum: dict | None = None) -> dict:
    """Per leg, scatter MSE against 1 - {FID, precision, F1, recall} on log axes.

    The y axes are symmetric-log so that zero (a perfect precision) and the
    negative values of 1 - FID stay on the plot.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    good = [p for p in sorted(points, key=lambda p: p.ratio) if p.finite()]
    legs = {"leg1": [p for p in good if p.ratio <= 1], "leg2": [p for p in good if p.ratio >= 1]}
    best = {(o["lambda_d"], o["lambda_p"]) for o in (optimum or {}).values() if "lambda_d" in o}
    written = {}
    for leg, pts in legs.items():
        fig, axes = plt.subplots(1, 4, figsize=(16, 4))
        for ax, metric in zip(axes, ("fid", "precision", "f1", "recall")):
            for p in pts:
                y = 1.0 - getattr(p, metric)
                if not math.isfinite(y):
                    continue
                ax.scatter(p.mse, y, c=PHASE_COLORS[p.phase], s=60 if (p.lambda_d, p.lambda_p) in best else 20,
                           marker="*" if (p.lambda_d, p.lambda_p) in best else "o")
                if p.label:
                    ax.annotate(p.label, (p.mse, y), fontsize=8)
            ax.set_xscale("log")
            ax.set_yscale("symlog", linthresh=1e-3)
            ax.set_xlabel("MSE")
            ax.set_ylabel(f"1 - {metric.upper() if metric == 'fid' else metric}")
        fig.suptitle(f"{leg} ({config_hash})")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg")
        plt.close(fig)
        written[f"plot_{leg}"] = atomic_write(out_dir / f"sweep_{leg}.svg", buf.getvalue())
    return written
