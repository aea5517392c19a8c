"""``tridp`` command line: prepare data, run the training stages, evaluate both
paths, sweep the loss weights and print reports.

Settings resolve as: command-line flag > ``TRIDP_*`` environment variable >
``--config`` JSON file > built-in default. Every artifact carries the config
hash and seed. Exit codes: 0 ok (warnings included), 2 input or configuration
error, 3 stage-order error, 4 divergence abort.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import dpsweep, protocol, riskcalc
from .exceptions import ConfigurationError, InputError, StageOrderError, TriDPError
from .losses import LossWeights
from .netblocks import (
    AutoEncoder, BlockGraph, ECGDecoder, FusionBottleneck, Generator, HSEncoder, Net1D, build_head, freeze,
    load_into, read_checkpoint, save_checkpoint,
)
from .protocol import DirectModel, IndirectModel, ProtocolConfig, RunManifest
from .signalio import FilterSpec, WindowSet, read_record
from .synthgen import SynthConfig, build_splits, generate
from .tasks import SEG_CLASSES, TASKS, get_task

log = logging.getLogger("tridp")

ENV_PREFIX = "TRIDP_"
SCENARIO = "resting"
PATHS = ("direct", "indirect")


# --- configuration ----------------------------------------------------------------

def default_config() -> dict:
    return {
        "seed": 0,
        "output_dir": "tridp_run",
        "data": {
            "source": "synth",
            "ingest_path": None,
            "split_ratio": 0.8,
            "synth": SynthConfig().to_dict(),
            "filter": dataclasses.asdict(FilterSpec()),
        },
        "protocol": ProtocolConfig(graph=BlockGraph(channel_scale="1/8")).to_dict(),
        "sweep": {**dpsweep.SweepGrid().to_dict(), "heads": True, "k": dpsweep.DEFAULT_K},
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigurationError(f"unknown config key {where}{key}")
        if isinstance(out[key], dict) and isinstance(value, dict) and key != "graph":
            out[key] = _merge(out[key], value, f"{where}{key}.")
        elif key == "graph" and isinstance(value, dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


ENV_KEYS = {
    "SEED": ("seed", int),
    "OUTPUT_DIR": ("output_dir", str),
    "CHANNEL_SCALE": ("protocol.graph.channel_scale", str),
    "LAMBDA_D": ("protocol.weights.0", float),
    "LAMBDA_P": ("protocol.weights.1", float),
    "WORKERS": ("workers", int),
}


def _set(cfg: dict, dotted: str, value):
    *parents, last = dotted.split(".")
    node = cfg
    for p in parents:
        node = node[p]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def resolve_config(args: argparse.Namespace, environ=os.environ) -> dict:
    cfg = default_config()
    path = args.config or environ.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            cfg = _merge(cfg, json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise InputError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}") from exc
    cfg["workers"] = 1
    for name, (key, cast) in ENV_KEYS.items():
        if ENV_PREFIX + name in environ:
            try:
                _set(cfg, key, cast(environ[ENV_PREFIX + name]))
            except ValueError as exc:
                raise ConfigurationError(f"{ENV_PREFIX}{name}: {exc}") from exc
    flags = {
        "seed": ("seed", None), "output_dir": ("output_dir", None),
        "channel_scale": ("protocol.graph.channel_scale", str), "lambda_d": ("protocol.weights.0", None),
        "lambda_p": ("protocol.weights.1", None), "workers": ("workers", None),
    }
    for attr, (key, cast) in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set(cfg, key, cast(value) if cast else value)
    cfg["protocol"]["seed"] = cfg["seed"]
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Build every typed object once so that bad values fail before any compute."""
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigurationError("seed must be a nonnegative integer")
    data = cfg["data"]
    if data["source"] not in ("synth", "ingest"):
        raise ConfigurationError("data.source must be 'synth' or 'ingest'")
    if data["source"] == "ingest" and not data["ingest_path"]:
        raise ConfigurationError("data.ingest_path is required for source 'ingest'")
    if not 0 < data["split_ratio"] < 1:
        raise ConfigurationError("data.split_ratio must lie in (0, 1)")
    synth_config(cfg)
    FilterSpec(**data["filter"])
    protocol_config(cfg)
    sweep_grid(cfg)
    if cfg["workers"] < 1:
        raise ConfigurationError("workers must be >= 1")


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(**{**cfg["data"]["synth"], "seed": cfg["data"]["synth"].get("seed", cfg["seed"])})


def protocol_config(cfg: dict) -> ProtocolConfig:
    try:
        pc = ProtocolConfig.from_dict(cfg["protocol"])
    except TypeError as exc:
        raise ConfigurationError(f"protocol section: {exc}") from exc
    for task in pc.tasks:
        get_task(task)
    if pc.indirect_source not in ("real_ecg", "generated_ecg"):
        raise ConfigurationError("protocol.indirect_source must be real_ecg or generated_ecg")
    return pc


def sweep_grid(cfg: dict) -> dpsweep.SweepGrid:
    s = {k: v for k, v in cfg["sweep"].items() if k not in ("heads", "k")}
    return dpsweep.SweepGrid.from_dict(s)


def _canonical(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("workers", "output_dir")}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(_canonical(cfg), sort_keys=True).encode()).hexdigest()[:16]


def data_hash(cfg: dict) -> str:
    payload = {"seed": cfg["seed"], "data": cfg["data"]}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# --- workspace -------------------------------------------------------------------------

class Workspace:
    """File layout under ``output_dir``."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.root = Path(cfg["output_dir"])
        self.data = self.root / "data"
        self.ckpt = self.root / "checkpoints"
        self.hash = config_hash(cfg)
        self.seed = cfg["seed"]

    def checkpoint(self, name: str) -> Path:
        return self.ckpt / f"{name}.ckpt"

    def curve(self, name: str) -> Path:
        return self.root / "curves" / f"{name}.csv"

    def head(self, path: str, task: str) -> Path:
        return self.ckpt / "heads" / f"{path}_{task}.ckpt"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def manifest(self) -> RunManifest:
        if self.manifest_path.exists():
            m = RunManifest.load(self.manifest_path)
            if m.config_hash != self.hash:
                log.warning("manifest config hash %s differs from current %s", m.config_hash, self.hash)
            return m
        return RunManifest(self.seed, self.hash)

    def stamp(self) -> dict:
        return {"config_hash": self.hash, "seed": self.seed}

    def load_data(self) -> tuple[WindowSet, WindowSet]:
        train, test = self.data / "train.npz", self.data / "test.npz"
        if not (train.exists() and test.exists()):
            raise StageOrderError(f"missing prepared data {train}; run 'tridp prepare' first")
        return WindowSet.load(train), WindowSet.load(test)

    def require(self, *names: str) -> None:
        for name in names:
            if not self.checkpoint(name).exists():
                raise StageOrderError(f"missing checkpoint {self.checkpoint(name)}")


def write_json(path, doc) -> Path:
    return dpsweep.atomic_write(path, json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


# --- loading trained modules ------------------------------------------------------------

def load_autoencoder(path) -> AutoEncoder:
    graph, _, _ = read_checkpoint(path)
    ae = AutoEncoder(graph)
    load_into(path, {"ae": ae})
    return ae.eval()


def load_discriminator(path) -> Net1D:
    graph, _, header = read_checkpoint(path)
    net = Net1D(graph, header["meta"].get("n_classes", graph.n_subjects))
    load_into(path, {"disc": net})
    return freeze(net)


def load_generator(path) -> Generator:
    graph, _, header = read_checkpoint(path)
    gen = Generator(HSEncoder(graph), FusionBottleneck(graph), ECGDecoder(graph))
    load_into(path, {"generator": gen})
    gen.graph = graph
    gen.weights = LossWeights(*header["meta"]["weights"])
    return gen.eval()


def load_head_model(path):
    graph, _, header = read_checkpoint(path)
    meta = header["meta"]
    spec = get_task(meta["task"])
    head = build_head(graph, spec.head_kind, meta["path"], spec.n_classes)
    if meta["path"] == "direct":
        model = DirectModel(HSEncoder(graph), FusionBottleneck(graph), head, spec)
    else:
        model = IndirectModel(Net1D(graph, meta.get("n_classes", graph.n_subjects)), head, spec)
    load_into(path, {"model": model})
    if meta["path"] == "indirect":
        model.disc.pretrained = True
    return model.eval()


# --- commands -----------------------------------------------------------------------------

def cmd_prepare(cfg: dict, args) -> int:
    ws = Workspace(cfg)
    manifest_path = ws.data / "manifest.json"
    dhash = data_hash(cfg)
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        files_ok = all((ws.data / f).exists() for f in ("train.npz", "test.npz"))
        if old.get("data_hash") == dhash and files_ok:
            print(f"prepare: up to date ({manifest_path})")
            return 0
    data = cfg["data"]
    spec = FilterSpec(**data["filter"])
    if data["source"] == "synth":
        pairs = generate(synth_config(cfg))
    else:
        root = Path(data["ingest_path"])
        files = sorted(root.glob("*.f32"))
        if not files:
            raise InputError(f"no .f32 records under {root}")
        pairs, problems = [], []
        for f in files:
            try:
                pairs.append((read_record(f), None))
            except InputError as exc:
                problems.append(str(exc))
        if problems:
            for p in problems:
                print(f"prepare: {p}", file=sys.stderr)
            raise InputError(f"{len(problems)} malformed record(s) under {root}")
    train, test, summary = build_splits(pairs, spec, data["split_ratio"])
    ws.data.mkdir(parents=True, exist_ok=True)
    for name, windows in (("train", train), ("test", test)):
        tmp = ws.data / f"{name}.tmp.npz"
        windows.save(tmp)
        tmp.replace(ws.data / f"{name}.npz")
    doc = {
        **ws.stamp(), "data_hash": dhash, "records": summary,
        "train_windows": len(train), "test_windows": len(test),
    }
    write_json(manifest_path, doc)
    print(f"prepare: {len(train)} train / {len(test)} test windows -> {ws.data}")
    return 0


def cmd_pretrain(cfg: dict, args) -> int:
    ws = Workspace(cfg)
    train, _ = ws.load_data()
    pc = protocol_config(cfg)
    manifest = ws.manifest()
    pre = protocol.run_pretraining(train, pc, manifest)
    ws.ckpt.mkdir(parents=True, exist_ok=True)
    meta = ws.stamp()
    save_checkpoint(ws.checkpoint("hs_ae"), {"ae": pre.hs_ae}, pc.graph, {**meta, "modality": "hs"})
    save_checkpoint(ws.checkpoint("ecg_ae"), {"ae": pre.ecg_ae}, pc.graph, {**meta, "modality": "ecg"})
    save_checkpoint(ws.checkpoint("disc"), {"disc": pre.disc}, pc.graph,
                    {**meta, "n_classes": pre.disc.classifier.out_features})
    for entry, name in zip(manifest.entries[-3:], ("hs_ae", "ecg_ae", "disc")):
        entry["checkpoint"] = str(ws.checkpoint(name))
    for stage, curve in pre.curves.items():
        dpsweep.atomic_write(ws.curve(stage), protocol.curve_csv(stage, curve))
    manifest.save(ws.manifest_path)
    print(f"pretrain: checkpoints in {ws.ckpt}")
    return 0


def cmd_train_base(cfg: dict, args) -> int:
    ws = Workspace(cfg)
    ws.require("hs_ae", "ecg_ae", "disc")
    train, _ = ws.load_data()
    pc = protocol_config(cfg)
    hs_ae, ecg_ae = load_autoencoder(ws.checkpoint("hs_ae")), load_autoencoder(ws.checkpoint("ecg_ae"))
    disc = load_discriminator(ws.checkpoint("disc"))
    plan = pc.plan("base_task")
    gen, curve = protocol.train_base(train, hs_ae, ecg_ae, disc, pc.weights, plan, multi_layer=pc.multi_layer)
    save_checkpoint(ws.checkpoint("generator"), {"generator": gen}, pc.graph,
                    {**ws.stamp(), "weights": list(pc.weights.as_tuple())})
    manifest = ws.manifest()
    manifest.record(plan, protocol._epochs(curve), checkpoint=str(ws.checkpoint("generator")),
                    weights=list(pc.weights.as_tuple()))
    dpsweep.atomic_write(ws.curve("base_task"), protocol.curve_csv("base_task", curve))
    manifest.save(ws.manifest_path)
    print(f"train-base: weights (lambda_d, lambda_p) = {pc.weights.as_tuple()}")
    return 0


def _selected(args, cfg) -> tuple[tuple, tuple]:
    pc = protocol_config(cfg)
    tasks = (args.task,) if getattr(args, "task", None) else pc.tasks
    paths = (args.path,) if getattr(args, "path", None) else PATHS
    return tasks, paths


def cmd_finetune(cfg: dict, args) -> int:
    ws = Workspace(cfg)
    pc = protocol_config(cfg)
    tasks, paths = _selected(args, cfg)
    for path in paths:  # check every prerequisite before training anything
        ws.require("hs_ae" if path == "direct" else "disc")
        if path == "indirect" and pc.indirect_source == "generated_ecg":
            ws.require("generator")
    train, _ = ws.load_data()
    manifest = ws.manifest()
    (ws.ckpt / "heads").mkdir(parents=True, exist_ok=True)
    for path in paths:
        for task in tasks:
            stage = f"finetune_{path}"
            plan = pc.plan(stage, seed_tag=(task,))
            if path == "direct":
                model, curve = protocol.finetune_direct(train, task, load_autoencoder(ws.checkpoint("hs_ae")), plan,
                                                        freeze_encoder=pc.freeze_encoder)
            else:
                gen = load_generator(ws.checkpoint("generator")) if pc.indirect_source == "generated_ecg" else None
                model, curve = protocol.finetune_indirect(train, task, load_discriminator(ws.checkpoint("disc")), plan,
                                                          source=pc.indirect_source, generator=gen)
            spec = get_task(task)
            save_checkpoint(ws.head(path, task), {"model": model}, pc.graph,
                            {**ws.stamp(), "task": task, "path": path, "head_kind": spec.head_kind,
                             "n_classes": pc.graph.n_subjects})
            manifest.record(plan, protocol._epochs(curve), checkpoint=str(ws.head(path, task)), task=task)
            dpsweep.atomic_write(ws.curve(f"{stage}_{task}"), protocol.curve_csv(stage, curve, task))
            print(f"finetune: {path} {task} ({spec.head_kind}, {spec.n_classes or 'dense'} outputs)")
    manifest.save(ws.manifest_path)
    return 0


def eval_rows(metrics: dict) -> list:
    """Flatten ``{path: {task: metrics | None}}`` into 12 rows per path."""
    rows = []
    for path in PATHS:
        by_task = metrics.get(path, {})
        seg = by_task.get("segmentation")
        for name in [*SEG_CLASSES, "mean"]:
            key = f"iou_{name}"
            rows.append((SCENARIO, path, "segmentation", key, None if seg is None else seg[key]))
        for task in ("subject_id", "bmi", "sex", "age"):
            m = by_task.get(task)
            rows.append((SCENARIO, path, task, "acc", None if m is None else m["acc"]))
        m = by_task.get("bp")
        rows.append((SCENARIO, path, "bp", "mae", None if m is None else m["mae"]))
    return rows


def cmd_eval(cfg: dict, args) -> int:
    ws = Workspace(cfg)
    _, test = ws.load_data()
    _, paths = _selected(args, cfg)
    # every layout task is looked up, so rows without a trained head are reported
    tasks = (args.task,) if args.task else tuple(TASKS)
    gen = load_generator(ws.checkpoint("generator")) if ws.checkpoint("generator").exists() else None
    metrics: dict = {p: {} for p in PATHS}
    warnings = []
    for path in paths:
        for task in tasks:
            ckpt = ws.head(path, task)
            if not ckpt.exists():
                warnings.append(f"no {path} model for {task}")
                continue
            if path == "indirect" and gen is None:
                warnings.append(f"no base generator; indirect {task} marked absent")
                continue
            metrics[path][task] = protocol.evaluate(load_head_model(ckpt), test, gen)
    rows = eval_rows(metrics)
    out = ws.root / "eval"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config_hash", "seed", "scenario", "path", "task", "metric", "value"])
    for r in rows:
        w.writerow([ws.hash, ws.seed, *r[:4], "absent" if r[4] is None else repr(float(r[4]))])
    dpsweep.atomic_write(out / "eval.csv", buf.getvalue())
    deltas = {}
    for d, i in zip(rows[:12], rows[12:]):
        if d[4] is not None and i[4] is not None:
            deltas[f"{d[2]}.{d[3]}"] = i[4] - d[4]
    write_json(out / "eval.json", {**ws.stamp(), "metrics": metrics, "indirect_minus_direct": deltas,
                                   "warnings": warnings})
    for msg in warnings:
        print(f"eval: warning: {msg}", file=sys.stderr)
    print(f"{'path':9s} {'task':13s} {'metric':18s} value")
    for r in rows:
        print(f"{r[1]:9s} {r[2]:13s} {r[3]:18s} {'absent' if r[4] is None else f'{r[4]:.4f}'}")
    return 0


def _train_sweep_heads(ws: Workspace, cfg: dict, train: WindowSet, disc: Net1D) -> dict:
    """Indirect heads for sweep scoring: reuse saved ones, train the rest on real ECG."""
    pc = protocol_config(cfg)
    heads = {}
    for task in pc.tasks:
        ckpt = ws.head("indirect", task)
        if ckpt.exists():
            heads[task] = load_head_model(ckpt)
            continue
        plan = pc.plan("finetune_indirect", seed_tag=(task,))
        heads[task], _ = protocol.finetune_indirect(train, task, disc, plan, source="real_ecg")
    return heads


def cmd_sweep(cfg: dict, args) -> int:
    ws = Workspace(cfg)
    grid = sweep_grid(cfg)
    points = grid.points()
    if args.dry_run:
        print(f"sweep grid: {len(points)} points, sorted by lambda_p/lambda_d ({ws.hash})")
        for p in points:
            print(f"  {p.label or '-':2s} lambda_d={p.lambda_d:<10g} lambda_p={p.lambda_p:<10g} ratio={p.ratio:.6g}")
        print("labelled points (published order): "
              + ", ".join(f"{p.label}({p.lambda_d:g},{p.lambda_p:g})" for p in grid.representative_points))
        return 0
    ws.require("hs_ae", "ecg_ae", "disc")
    train, test = ws.load_data()
    pc = protocol_config(cfg)
    pre = protocol.Pretrained(load_autoencoder(ws.checkpoint("hs_ae")), load_autoencoder(ws.checkpoint("ecg_ae")),
                              load_discriminator(ws.checkpoint("disc")))
    heads = _train_sweep_heads(ws, cfg, train, pre.disc) if cfg["sweep"]["heads"] else None
    swept = dpsweep.run_sweep(train, test, pre, pc, grid, heads=heads, workers=cfg["workers"], k=cfg["sweep"]["k"])
    paths = dpsweep.write_sweep_outputs(swept, ws.root / "sweep", ws.hash, ws.seed)
    phases = json.loads(Path(paths["phases"]).read_text())
    n_bad = sum(not p.converged for p in swept)
    print(f"sweep: {len(swept)} points ({n_bad} not converged) -> {ws.root / 'sweep'}")
    if phases["partial"]:
        print(f"sweep: partial phase structure, found {sorted(set(phases['labels']))}")
    return 0


def read_sweep_csv(path) -> list:
    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            p = dpsweep.SweepPoint(float(row["lambda_d"]), float(row["lambda_p"]), row["label"])
            for key in ("mse", "fid", "precision", "recall", "f1"):
                setattr(p, key, float(row[key]))
            p.phase = row["phase"]
            p.converged = row["converged"] == "true"
            for col, value in row.items():
                if "." in col and value not in ("", "nan"):
                    task, metric = col.split(".", 1)
                    p.downstream.setdefault(task, {})[metric] = float(value)
            points.append(p)
    return points


def cmd_report(cfg: dict, args) -> int:
    ws = Workspace(cfg)
    if args.risk:
        direct = riskcalc.PathProfile.from_json(args.risk[0])
        indirect = riskcalc.PathProfile.from_json(args.risk[1])
        c_h = args.c_h
        if c_h is None:
            docs = [json.loads(Path(p).read_text()) for p in args.risk]
            found = [d["c_h"] for d in docs if "c_h" in d]
            if not found:
                raise InputError("shared capacity missing: pass --c-h or put c_h in a profile file")
            c_h = found[0]
        print(riskcalc.format_report(indirect, direct, riskcalc.SharedCapacity(c_h)))
        return 0
    csv_path = ws.root / "sweep" / "sweep_results.csv"
    if not csv_path.exists():
        raise StageOrderError(f"missing {csv_path}; run 'tridp sweep' first")
    points = read_sweep_csv(csv_path)
    optimum = dpsweep.locate_downstream_optimum(points)
    out = ws.root / "report"
    dpsweep.plot_sweep(points, out, ws.hash, optimum)
    write_json(out / "downstream_optimum.json", {**ws.stamp(), "optimum": optimum})
    print(f"{'task':13s} {'label':5s} {'lambda_d':>10s} {'lambda_p':>10s} {'value':>9s} phase        near coop.")
    for task, o in optimum.items():
        if "skipped" in o:
            print(f"{task:13s} skipped: {o['skipped']}")
            continue
        print(f"{task:13s} {o['label'] or '-':5s} {o['lambda_d']:10g} {o['lambda_p']:10g} {o['value']:9.4f} "
              f"{o['phase']:12s} {'yes' if o['near_coopetitive'] else 'no'}")
    print(f"report: plots in {out}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare, "pretrain": cmd_pretrain, "train-base": cmd_train_base, "finetune": cmd_finetune,
    "eval": cmd_eval, "sweep": cmd_sweep, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--channel-scale", dest="channel_scale", help="e.g. 1, 1/8")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tridp", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="generate or ingest records, window and split")
    sub.add_parser("pretrain", parents=[common], help="autoencoders and feature discriminator")
    p = sub.add_parser("train-base", parents=[common], help="heart sound -> ECG generator")
    p.add_argument("--lambda-d", dest="lambda_d", type=float)
    p.add_argument("--lambda-p", dest="lambda_p", type=float)
    for name in ("finetune", "eval"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--path", choices=PATHS)
        p.add_argument("--task", choices=sorted(TASKS))
    p = sub.add_parser("sweep", parents=[common], help="loss-weight sweep")
    p.add_argument("--workers", type=int)
    p.add_argument("--dry-run", dest="dry_run", action="store_true")
    p = sub.add_parser("report", parents=[common], help="sweep plots and tables, or a risk comparison")
    p.add_argument("--risk", nargs=2, metavar=("DIRECT_JSON", "INDIRECT_JSON"))
    p.add_argument("--c-h", dest="c_h", type=float, help="shared-representation capacity for --risk")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except TriDPError as exc:
        print(f"tridp {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
