"""Staged training: autoencoder and discriminator pretraining, base-task
generator training under the composite objective, and direct / indirect
downstream fine-tuning.

Every stage function works on in-memory ``WindowSet`` data and modules;
``run_protocol`` chains them with manifest bookkeeping.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import losses as L
from .exceptions import ConfigurationError, DivergenceError, StageOrderError
from .losses import LossWeights
from .netblocks import (
    AutoEncoder, BlockGraph, Generator, Net1D, build_head, discriminate, freeze, head_forward, parameter_hash,
)
from .signalio import WindowSet
from .tasks import SEG_CLASSES, TaskSpec, accuracy, binarize, get_task, iou, mae

log = logging.getLogger(__name__)

STAGES = ("pretrain_hs", "pretrain_ecg", "pretrain_disc", "base_task", "finetune_direct", "finetune_indirect")
PREREQUISITES = {
    "pretrain_hs": (),
    "pretrain_ecg": (),
    "pretrain_disc": (),
    "base_task": ("pretrain_hs", "pretrain_ecg", "pretrain_disc"),
    "finetune_direct": ("pretrain_hs",),
    "finetune_indirect": ("pretrain_disc",),
}
EVAL_CHUNK = 64


def stage_seed(root_seed: int, stage: str) -> int:
    """Per-stage seed derived from the root seed and the stage name."""
    digest = hashlib.sha256(f"{root_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


@dataclass
class StagePlan:
    stage: str
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    frozen_blocks: frozenset = frozenset()
    weights: LossWeights | None = None
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigurationError(f"invalid stage plan {self}")
        self.frozen_blocks = frozenset(self.frozen_blocks)
        if self.stage == "base_task" and self.weights is None:
            raise ConfigurationError("base_task needs loss weights")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frozen_blocks"] = sorted(self.frozen_blocks)
        d["weights"] = list(self.weights.as_tuple()) if self.weights else None
        return d


@dataclass
class RunManifest:
    """Append-only log of executed stages."""

    seed: int
    config_hash: str
    entries: list = field(default_factory=list)

    def record(self, plan: StagePlan, curve: list, checkpoint: str | None = None, **extra) -> dict:
        entry = {"stage": plan.stage, "plan": plan.to_dict(), "checkpoint": checkpoint, "curve": curve}
        entry.update(extra)
        self.entries.append(entry)
        return entry

    def completed(self, stage: str) -> bool:
        return any(e["stage"] == stage and not e.get("aborted") for e in self.entries)

    def require(self, stage: str):
        missing = [p for p in PREREQUISITES[stage] if not self.completed(p)]
        if missing:
            raise StageOrderError(f"stage {stage} needs {', '.join(missing)} first")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "config_hash": self.config_hash, "entries": self.entries}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(seed=d["seed"], config_hash=d["config_hash"], entries=list(d["entries"]))

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _tensor(x, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(x), dtype=dtype)


def _batched_eval(fn, x: torch.Tensor, chunk: int = EVAL_CHUNK) -> torch.Tensor:
    with torch.no_grad():
        return torch.cat([fn(x[i:i + chunk]) for i in range(0, len(x), chunk)]) if len(x) else x


def fit_loop(
    modules: list,
    inputs: tuple,
    step_loss,
    plan: StagePlan,
    val_inputs: tuple | None = None,
    eval_modules: tuple = (),
) -> dict:
    """Adam over minibatches of ``inputs`` (tensors sharing dim 0).

    ``step_loss(*batch) -> (loss, parts)``. Returns the loss curve with
    ``initial`` (before any update), per-epoch means and per-step parts.
    Divergence (loss > 10x initial for 2 consecutive epochs, or non-finite)
    raises ``DivergenceError``. With ``val_inputs`` the best epoch is kept and
    training stops after ``plan.patience`` epochs without improvement.
    """
    torch.manual_seed(plan.seed)
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    if not params:
        raise ConfigurationError(f"{plan.stage}: nothing to train")
    opt = torch.optim.Adam(params, lr=plan.learning_rate)
    gen = torch.Generator().manual_seed(plan.seed)
    n = len(inputs[0])

    def mean_loss(data) -> float:
        for m in modules:
            m.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for i in range(0, len(data[0]), EVAL_CHUNK):
                batch = [t[i:i + EVAL_CHUNK] for t in data]
                loss, _ = step_loss(*batch)
                total += float(loss) * len(batch[0])
                count += len(batch[0])
        return total / max(count, 1)

    initial = mean_loss(inputs)
    curve = {"initial": initial, "epochs": [], "epoch_parts": [], "steps": [], "val": []}
    best = (float("inf"), None, -1)
    over = 0
    for epoch in range(plan.epochs):
        for m in modules:
            m.train()
        for m in eval_modules:
            m.eval()
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        part_sums: dict = {}
        for i in range(0, n, plan.batch_size):
            idx = perm[i:i + plan.batch_size]
            batch = [t[idx] for t in inputs]
            opt.zero_grad()
            loss, parts = step_loss(*batch)
            if not torch.isfinite(loss):
                raise DivergenceError(f"{plan.stage}: non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
            step_parts = {k: float(v.detach()) for k, v in parts.items()}
            curve["steps"].append(step_parts)
            for k, v in step_parts.items():
                part_sums[k] = part_sums.get(k, 0.0) + v * len(idx)
        epoch_loss = total / n
        curve["epochs"].append(epoch_loss)
        curve["epoch_parts"].append({k: v / n for k, v in part_sums.items()})
        over = over + 1 if epoch_loss > 10 * max(initial, 1e-12) else 0
        if over >= 2:
            raise DivergenceError(f"{plan.stage}: loss {epoch_loss:.4g} > 10x initial {initial:.4g}")
        if val_inputs is not None:
            v = mean_loss(val_inputs)
            curve["val"].append(v)
            if v < best[0]:
                best = (v, [copy.deepcopy(m.state_dict()) for m in modules], epoch)
            elif epoch - best[2] >= plan.patience:
                log.info("%s: early stop at epoch %d", plan.stage, epoch)
                break
    if best[1] is not None:
        for m, state in zip(modules, best[1]):
            m.load_state_dict(state)
        curve["best_epoch"] = best[2]
    for m in modules:
        m.eval()
    curve["final"] = mean_loss(inputs)
    return curve


# --- pretraining ----------------------------------------------------------------

def pretrain_autoencoder(x: np.ndarray, graph: BlockGraph, plan: StagePlan, val: np.ndarray | None = None):
    """Fit an encode -> fuse -> decode autoencoder on one modality by reconstruction."""
    torch.manual_seed(plan.seed)  # initialization depends only on the stage seed
    ae = AutoEncoder(graph)
    xt = _tensor(x)

    def step(xb):
        loss = L.recon_loss(xb, ae(xb))
        return loss, {"L": loss}

    curve = fit_loop([ae], (xt,), step, plan, val_inputs=(_tensor(val),) if val is not None else None)
    ae.pretrained = True
    return ae, curve


def pretrain_autoencoders(train: WindowSet, graph: BlockGraph, plan_hs: StagePlan, plan_ecg: StagePlan,
                          val: WindowSet | None = None):
    hs_ae, hs_curve = pretrain_autoencoder(train.hs, graph, plan_hs, val.hs if val is not None else None)
    ecg_ae, ecg_curve = pretrain_autoencoder(train.ecg, graph, plan_ecg, val.ecg if val is not None else None)
    return hs_ae, ecg_ae, hs_curve, ecg_curve


def pretrain_discriminator(train: WindowSet, graph: BlockGraph, plan: StagePlan, val: WindowSet | None = None,
                           n_classes: int | None = None):
    """Subject-identity classifier on real ECG; the trunk is then frozen as ``M``."""
    n_classes = n_classes or graph.n_subjects
    torch.manual_seed(plan.seed)
    net = Net1D(graph, n_classes)
    x = _tensor(train.ecg)
    y = torch.as_tensor(train.subject_id, dtype=torch.long)

    def step(xb, yb):
        loss = F.cross_entropy(net(xb), yb)
        return loss, {"L": loss}

    val_inputs = (_tensor(val.ecg), torch.as_tensor(val.subject_id)) if val is not None else None
    curve = fit_loop([net], (x, y), step, plan, val_inputs=val_inputs)
    logits = _batched_eval(net, x).numpy()
    acc = accuracy(logits, train.subject_id)
    chance = 1.0 / max(len(np.unique(train.subject_id)), 1)
    curve["train_accuracy"] = acc
    if acc <= chance:
        raise DivergenceError(f"discriminator accuracy {acc:.3f} not above chance {chance:.3f}")
    net.pretrained = True
    freeze(net)
    return net, curve


def subject_accuracy(disc: Net1D, data: WindowSet) -> float:
    logits = _batched_eval(disc, _tensor(data.ecg)).numpy()
    return accuracy(logits, data.subject_id)


# --- base task ----------------------------------------------------------------

def build_generator(hs_ae: AutoEncoder, ecg_ae: AutoEncoder) -> Generator:
    """``D_ecg(BN(E_hs(.)))`` from deep copies of the pretrained parts."""
    for name, ae in (("heart-sound", hs_ae), ("ECG", ecg_ae)):
        if not getattr(ae, "pretrained", False):
            raise StageOrderError(f"{name} autoencoder is not pretrained")
    return Generator(copy.deepcopy(hs_ae.encoder), copy.deepcopy(hs_ae.bottleneck), copy.deepcopy(ecg_ae.decoder))


def train_base(train: WindowSet, hs_ae: AutoEncoder, ecg_ae: AutoEncoder, disc: Net1D, weights: LossWeights,
               plan: StagePlan, multi_layer: bool = False, generator: Generator | None = None):
    """Optimize the heart-sound -> ECG generator under ``weights`` with ``disc`` frozen."""
    if not disc.pretrained:
        raise StageOrderError("feature discriminator is not pretrained")
    gen = generator if generator is not None else build_generator(hs_ae, ecg_ae)
    freeze(disc)
    disc_hash = parameter_hash(disc)
    hs = _tensor(train.hs)
    ecg = _tensor(train.ecg)
    with torch.no_grad():
        real_feats = discriminate(disc, ecg, all_stages=multi_layer)
    real_feats = list(real_feats) if multi_layer else [real_feats]
    idx_all = torch.arange(len(hs))

    def step(hb, eb, ib):
        fake = gen(hb)
        l_d = L.distortion_loss(eb, fake)
        f_hat = discriminate(disc, fake, all_stages=multi_layer)
        f_real = [f[ib] for f in real_feats]
        l_p = L.perceptual_loss(f_real if multi_layer else f_real[0], f_hat)
        loss = L.composite_loss(l_d, l_p, weights)
        return loss, {"L_d": l_d, "L_p": l_p, "L": loss}

    curve = fit_loop([gen], (hs, ecg, idx_all), step, plan, eval_modules=(disc,))
    if parameter_hash(disc) != disc_hash:
        raise RuntimeError("frozen discriminator changed during base-task training")
    gen.weights = weights
    return gen, curve


def generate_ecg(generator: Generator, hs: np.ndarray) -> np.ndarray:
    generator.eval()
    return _batched_eval(generator, _tensor(hs)).numpy()


# --- downstream -----------------------------------------------------------------

class DirectModel(nn.Module):
    """Heart sound -> bottleneck -> task head."""

    def __init__(self, encoder, bottleneck, head, task: TaskSpec):
        super().__init__()
        self.encoder = encoder
        self.bottleneck = bottleneck
        self.head = head
        self.task = task
        self.path = "direct"

    def forward(self, hs):
        return head_forward(self.head, self.bottleneck(self.encoder(hs)), self.task.head_kind, self.task.n_classes)


class IndirectModel(nn.Module):
    """ECG -> Net1D features -> mirror head; radar input always goes through the generator."""

    def __init__(self, disc: Net1D, head, task: TaskSpec):
        super().__init__()
        self.disc = disc
        self.head = head
        self.task = task
        self.path = "indirect"

    def forward(self, ecg):
        return head_forward(self.head, discriminate(self.disc, ecg), self.task.head_kind, self.task.n_classes)


def task_target(data: WindowSet, task: TaskSpec) -> torch.Tensor:
    if task.head_kind == "classifier":
        y = np.asarray(getattr(data, task.field))
        if y.size and (y.min() < 0 or y.max() >= task.n_classes):
            raise ConfigurationError(f"labels for {task.name} outside [0, {task.n_classes})")
        return torch.as_tensor(y, dtype=torch.long)
    if task.head_kind == "segmenter":
        return _tensor(data.seg_mask)
    return _tensor(data.bp)


def task_loss(pred: torch.Tensor, target: torch.Tensor, task: TaskSpec) -> torch.Tensor:
    if task.head_kind == "classifier":
        return F.cross_entropy(pred, target)
    if task.head_kind == "segmenter":
        return F.binary_cross_entropy_with_logits(pred, target)
    return F.mse_loss(pred, target)


def _fit_task(model: nn.Module, x: np.ndarray, data: WindowSet, task: TaskSpec, plan: StagePlan, trainable,
              frozen=()):
    xt = _tensor(x)
    yt = task_target(data, task)

    def step(xb, yb):
        loss = task_loss(model(xb), yb, task)
        return loss, {"L": loss}

    return fit_loop(list(trainable), (xt, yt), step, plan, eval_modules=tuple(frozen))


def finetune_direct(train: WindowSet, task: str, hs_ae: AutoEncoder, plan: StagePlan,
                    freeze_encoder: bool = False):
    """Task head on the pretrained heart-sound encoder and bottleneck (copied)."""
    if not getattr(hs_ae, "pretrained", False):
        raise StageOrderError("direct path needs a pretrained heart-sound encoder")
    spec = get_task(task)
    encoder = copy.deepcopy(hs_ae.encoder)
    bottleneck = copy.deepcopy(hs_ae.bottleneck)
    torch.manual_seed(plan.seed)
    head = build_head(_graph_of(hs_ae), spec.head_kind, "direct", spec.n_classes)
    model = DirectModel(encoder, bottleneck, head, spec)
    trainable = [head]
    frozen = []
    if freeze_encoder:
        frozen = [freeze(encoder), freeze(bottleneck)]
    else:
        trainable += [encoder, bottleneck]
    curve = _fit_task(model, train.hs, train, spec, plan, trainable, frozen)
    model.eval()
    return model, curve


def finetune_indirect(train: WindowSet, task: str, disc: Net1D, plan: StagePlan, source: str = "real_ecg",
                      generator: Generator | None = None, train_disc: bool = True):
    """Mirror head on discriminator features, trained on real or generated ECG."""
    if not disc.pretrained:
        raise StageOrderError("indirect path needs a pretrained feature discriminator")
    if source not in ("real_ecg", "generated_ecg"):
        raise ConfigurationError(f"unknown indirect source {source!r}")
    if source == "generated_ecg":
        if generator is None:
            raise StageOrderError("source=generated_ecg needs a trained base generator")
        x = generate_ecg(generator, train.hs)
    else:
        x = train.ecg
    spec = get_task(task)
    net = copy.deepcopy(disc)
    torch.manual_seed(plan.seed)
    head = build_head(_graph_of(disc), spec.head_kind, "indirect", spec.n_classes)
    model = IndirectModel(net, head, spec)
    if train_disc:
        for p in net.parameters():
            p.requires_grad_(True)
        trainable, frozen = [head, net], []
    else:
        trainable, frozen = [head], [freeze(net)]
    curve = _fit_task(model, x, train, spec, plan, trainable, frozen)
    model.eval()
    return model, curve


def _graph_of(module) -> BlockGraph:
    g = getattr(module, "graph", None)
    if g is None:
        raise ConfigurationError("module carries no BlockGraph")
    return g


def predict(model: nn.Module, hs: np.ndarray, generator: Generator | None = None) -> np.ndarray:
    """Task outputs from radar heart sound for either path."""
    if model.path == "indirect":
        if generator is None:
            raise StageOrderError("indirect evaluation needs the base generator")
        x = generate_ecg(generator, hs)
    else:
        x = hs
    model.eval()
    return _batched_eval(model, _tensor(x)).numpy()


def score(outputs: np.ndarray, data: WindowSet, task: TaskSpec) -> dict:
    if task.head_kind == "classifier":
        return {"acc": accuracy(outputs, getattr(data, task.field))}
    if task.head_kind == "segmenter":
        per_class, mean_iou = iou(binarize(outputs), data.seg_mask)
        out = {f"iou_{name}": float(v) for name, v in zip(SEG_CLASSES, per_class)}
        out["iou_mean"] = mean_iou
        return out
    return {"mae": mae(outputs, data.bp, data.bp_mean, data.bp_std)}


def evaluate(model: nn.Module, test: WindowSet, generator: Generator | None = None) -> dict:
    return score(predict(model, test.hs, generator), test, model.task)


# --- whole protocol ---------------------------------------------------------------

@dataclass
class ProtocolConfig:
    graph: BlockGraph = field(default_factory=BlockGraph)
    seed: int = 0
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs_ae: int = 30
    epochs_disc: int = 20
    epochs_base: int = 20
    epochs_task: int = 20
    weights: LossWeights = field(default_factory=lambda: LossWeights(5.0, 1.0))
    tasks: tuple = ("segmentation", "bp", "subject_id", "bmi", "sex", "age")
    multi_layer: bool = False
    indirect_source: str = "real_ecg"
    freeze_encoder: bool = False

    def plan(self, stage: str, **kw) -> StagePlan:
        epochs = {
            "pretrain_hs": self.epochs_ae, "pretrain_ecg": self.epochs_ae, "pretrain_disc": self.epochs_disc,
            "base_task": self.epochs_base, "finetune_direct": self.epochs_task,
            "finetune_indirect": self.epochs_task,
        }[stage]
        seed_key = stage + "".join(f":{v}" for v in kw.pop("seed_tag", ()))
        base = dict(
            stage=stage, epochs=epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            seed=stage_seed(self.seed, seed_key), weights=self.weights if stage == "base_task" else None,
        )
        base.update(kw)
        return StagePlan(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["graph"] = self.graph.to_dict()
        d["weights"] = list(self.weights.as_tuple())
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        d = dict(d)
        if "graph" in d and isinstance(d["graph"], dict):
            d["graph"] = BlockGraph.from_dict(d["graph"])
        if "weights" in d and not isinstance(d["weights"], LossWeights):
            d["weights"] = LossWeights(*d["weights"])
        if "tasks" in d:
            d["tasks"] = tuple(d["tasks"])
        return cls(**d)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Pretrained:
    hs_ae: AutoEncoder
    ecg_ae: AutoEncoder
    disc: Net1D
    curves: dict = field(default_factory=dict)


@dataclass
class ProtocolResult:
    pretrained: Pretrained
    generator: Generator
    direct: dict
    indirect: dict
    metrics: dict
    manifest: RunManifest
    diagnostics: dict


def run_pretraining(train: WindowSet, config: ProtocolConfig, manifest: RunManifest) -> Pretrained:
    g = config.graph
    hs_ae, hs_curve = pretrain_autoencoder(train.hs, g, config.plan("pretrain_hs"))
    manifest.record(config.plan("pretrain_hs"), _epochs(hs_curve))
    ecg_ae, ecg_curve = pretrain_autoencoder(train.ecg, g, config.plan("pretrain_ecg"))
    manifest.record(config.plan("pretrain_ecg"), _epochs(ecg_curve))
    disc, disc_curve = pretrain_discriminator(train, g, config.plan("pretrain_disc"))
    manifest.record(config.plan("pretrain_disc"), _epochs(disc_curve), train_accuracy=disc_curve["train_accuracy"])
    curves = {"pretrain_hs": hs_curve, "pretrain_ecg": ecg_curve, "pretrain_disc": disc_curve}
    return Pretrained(hs_ae, ecg_ae, disc, curves)


def _epochs(curve: dict) -> list:
    return [curve["initial"], *curve["epochs"]]


CURVE_COLUMNS = ("epoch", "stage", "task", "L_d", "L_p", "L")


def curve_csv(stage: str, curve: dict, task: str = "") -> str:
    """Per-epoch training means as CSV text (``L_d``/``L_p`` blank outside the base task)."""
    lines = [",".join(CURVE_COLUMNS)]
    for epoch, parts in enumerate(curve["epoch_parts"]):
        row = [str(epoch), stage, task] + [repr(parts[k]) if k in parts else "" for k in ("L_d", "L_p", "L")]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def run_protocol(train: WindowSet, test: WindowSet, config: ProtocolConfig,
                 manifest: RunManifest | None = None) -> ProtocolResult:
    """All six stages in order, then evaluation of both paths on ``test``."""
    manifest = manifest or RunManifest(config.seed, config.hash())
    t0 = time.time()
    pre = run_pretraining(train, config, manifest)
    manifest.require("base_task")
    gen, base_curve = train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, config.weights, config.plan("base_task"),
                                 multi_layer=config.multi_layer)
    gen.graph = config.graph
    manifest.record(config.plan("base_task"), _epochs(base_curve))
    direct, indirect, metrics = {}, {}, {}
    for task in config.tasks:
        manifest.require("finetune_direct")
        plan = config.plan("finetune_direct", seed_tag=(task,))
        model, curve = finetune_direct(train, task, pre.hs_ae, plan, freeze_encoder=config.freeze_encoder)
        direct[task] = model
        manifest.record(plan, _epochs(curve), task=task)
        manifest.require("finetune_indirect")
        plan = config.plan("finetune_indirect", seed_tag=(task,))
        model, curve = finetune_indirect(train, task, pre.disc, plan, source=config.indirect_source, generator=gen)
        indirect[task] = model
        manifest.record(plan, _epochs(curve), task=task, source=config.indirect_source)
        metrics[task] = {
            "direct": evaluate(direct[task], test, gen),
            "indirect": evaluate(indirect[task], test, gen),
        }
    diagnostics = {
        "ecg_ae_test_corr": reconstruction_corr(pre.ecg_ae, test.ecg),
        "disc_test_accuracy": subject_accuracy(pre.disc, test),
        "generator_test_corr": generated_corr(gen, test),
        "seconds": time.time() - t0,
    }
    return ProtocolResult(pre, gen, direct, indirect, metrics, manifest, diagnostics)


def _mean_corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    num = (a * b).sum(axis=1)
    den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1)) + 1e-12
    return float(np.mean(num / den))


def reconstruction_corr(ae: AutoEncoder, x: np.ndarray) -> float:
    """Mean per-window Pearson correlation between ``x`` and its reconstruction."""
    ae.eval()
    rec = _batched_eval(ae, _tensor(x)).numpy()
    return _mean_corr(np.asarray(x, dtype=np.float64), rec.astype(np.float64))


def generated_corr(gen: Generator, data: WindowSet) -> float:
    return _mean_corr(np.asarray(data.ecg, np.float64), generate_ecg(gen, data.hs).astype(np.float64))
