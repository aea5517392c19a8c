import numpy as np
import pytest
import torch

from tridp.exceptions import ConfigurationError, DivergenceError, StageOrderError
from tridp.losses import LossWeights
from tridp.netblocks import AutoEncoder, BlockGraph, Net1D, parameter_hash
from tridp.protocol import (
    CURVE_COLUMNS, RunManifest, StagePlan, build_generator, curve_csv, evaluate, finetune_direct,
    finetune_indirect, fit_loop, predict, stage_seed, train_base,
)


@pytest.fixture
def pretrained(tiny_pretrained):
    return tiny_pretrained


def test_stage_seed_is_stable():
    assert stage_seed(0, "base_task") == stage_seed(0, "base_task")
    assert stage_seed(0, "base_task") != stage_seed(1, "base_task")
    assert stage_seed(0, "base_task") != stage_seed(0, "pretrain_hs")


def test_stage_plan_validation():
    with pytest.raises(ConfigurationError):
        StagePlan("warmup")
    with pytest.raises(ConfigurationError):
        StagePlan("base_task")
    with pytest.raises(ConfigurationError):
        StagePlan("pretrain_hs", epochs=0)


def test_manifest_enforces_order(tmp_path):
    m = RunManifest(0, "x")
    with pytest.raises(StageOrderError):
        m.require("base_task")
    for stage in ("pretrain_hs", "pretrain_ecg"):
        m.record(StagePlan(stage), [1.0])
    with pytest.raises(StageOrderError, match="pretrain_disc"):
        m.require("base_task")
    m.require("finetune_direct")
    m.record(StagePlan("pretrain_disc"), [1.0])
    m.require("base_task")
    back = RunManifest.load(m.save(tmp_path / "manifest.json"))
    assert back.to_dict() == m.to_dict()


def test_base_refuses_unpretrained_parts(small_splits, tiny_graph):
    train, _ = small_splits
    with pytest.raises(StageOrderError):
        build_generator(AutoEncoder(tiny_graph), AutoEncoder(tiny_graph))
    with pytest.raises(StageOrderError):
        train_base(train, AutoEncoder(tiny_graph), AutoEncoder(tiny_graph), Net1D(tiny_graph), LossWeights(1, 1),
                   StagePlan("base_task", weights=LossWeights(1, 1)))


def test_finetune_refuses_unpretrained(small_splits, tiny_graph):
    train, _ = small_splits
    with pytest.raises(StageOrderError):
        finetune_direct(train, "bp", AutoEncoder(tiny_graph), StagePlan("finetune_direct"))
    with pytest.raises(StageOrderError):
        finetune_indirect(train, "bp", Net1D(tiny_graph), StagePlan("finetune_indirect"))


def test_pretraining_records_stages(pretrained):
    _, manifest, pre = pretrained
    assert [e["stage"] for e in manifest.entries] == ["pretrain_hs", "pretrain_ecg", "pretrain_disc"]
    assert pre.hs_ae.pretrained and pre.ecg_ae.pretrained and pre.disc.pretrained
    assert not any(p.requires_grad for p in pre.disc.parameters())
    curve = pre.curves["pretrain_ecg"]
    assert curve["epochs"][-1] < curve["initial"]


def test_distortion_only_weights_give_plain_distortion(small_splits, pretrained):
    train, _ = small_splits
    cfg, _, pre = pretrained
    w = LossWeights(1, 0)
    gen, curve = train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, w, cfg.plan("base_task", weights=w))
    for parts in curve["steps"]:
        assert parts["L"] == pytest.approx(parts["L_d"], rel=1e-12)
    assert gen.weights == w


def test_base_keeps_discriminator_and_pretrained_parts(small_splits, pretrained):
    train, _ = small_splits
    cfg, _, pre = pretrained
    before = parameter_hash(pre.disc), parameter_hash(pre.hs_ae), parameter_hash(pre.ecg_ae)
    train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, cfg.weights, cfg.plan("base_task"))
    assert (parameter_hash(pre.disc), parameter_hash(pre.hs_ae), parameter_hash(pre.ecg_ae)) == before


def test_weights_change_the_outcome(small_splits, pretrained):
    train, _ = small_splits
    cfg, _, pre = pretrained
    finals = {}
    for w in (LossWeights(5, 1), LossWeights(1, 9)):
        _, curve = train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, w, cfg.plan("base_task", weights=w))
        finals[w.as_tuple()] = curve["epoch_parts"][-1]
    assert finals[(5.0, 1.0)] != finals[(1.0, 9.0)]


def test_training_is_deterministic(small_splits, pretrained):
    train, _ = small_splits
    cfg, _, pre = pretrained
    curves = [train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, cfg.weights, cfg.plan("base_task"))[1]
              for _ in range(2)]
    np.testing.assert_allclose(curves[0]["epochs"], curves[1]["epochs"], rtol=1e-6)
    assert curve_csv("base_task", curves[0]) == curve_csv("base_task", curves[1])
    assert curve_csv("base_task", curves[0]).splitlines()[0] == ",".join(CURVE_COLUMNS)


def test_frozen_encoder_is_not_updated(small_splits, pretrained):
    train, _ = small_splits
    cfg, _, pre = pretrained
    model, _ = finetune_direct(train, "sex", pre.hs_ae, cfg.plan("finetune_direct"), freeze_encoder=True)
    assert parameter_hash(model.encoder) == parameter_hash(pre.hs_ae.encoder)
    model2, _ = finetune_direct(train, "sex", pre.hs_ae, cfg.plan("finetune_direct"))
    assert parameter_hash(model2.encoder) != parameter_hash(pre.hs_ae.encoder)


@pytest.mark.parametrize("task", ["segmentation", "bp", "subject_id"])
def test_both_paths_produce_metrics(small_splits, pretrained, task):
    train, test = small_splits
    cfg, _, pre = pretrained
    gen, _ = train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, cfg.weights, cfg.plan("base_task"))
    direct, _ = finetune_direct(train, task, pre.hs_ae, cfg.plan("finetune_direct"))
    indirect, _ = finetune_indirect(train, task, pre.disc, cfg.plan("finetune_indirect"))
    for model in (direct, indirect):
        metrics = evaluate(model, test, gen)
        assert all(np.isfinite(v) for v in metrics.values())
    with pytest.raises(StageOrderError):
        predict(indirect, test.hs)


def test_indirect_generated_source_needs_generator(small_splits, pretrained):
    train, _ = small_splits
    cfg, _, pre = pretrained
    with pytest.raises(StageOrderError):
        finetune_indirect(train, "bp", pre.disc, cfg.plan("finetune_indirect"), source="generated_ecg")
    with pytest.raises(ConfigurationError):
        finetune_indirect(train, "bp", pre.disc, cfg.plan("finetune_indirect"), source="radar")


def test_divergence_is_reported():
    w = torch.nn.Parameter(torch.ones(1))
    x = torch.ones(8, 1)

    def step(xb):
        loss = (w * xb).sum() * 0 + torch.tensor(float("nan"))
        return loss, {"L": loss}

    with pytest.raises(DivergenceError):
        fit_loop([torch.nn.ParameterList([w])], (x,), step, StagePlan("pretrain_hs", epochs=1))


def test_early_stopping_restores_best_epoch():
    torch.manual_seed(0)
    lin = torch.nn.Linear(1, 1)
    x = torch.randn(64, 1)
    y = 3 * x
    # validation target disagrees with training, so the best validation epoch is the first
    val = (x, -3 * x)

    def step(xb, yb):
        loss = ((lin(xb) - yb) ** 2).mean()
        return loss, {"L": loss}

    curve = fit_loop([lin], (x, y), step, StagePlan("pretrain_hs", epochs=30, patience=3, learning_rate=0.05),
                     val_inputs=val)
    assert len(curve["epochs"]) < 30
    assert curve["best_epoch"] == int(np.argmin(curve["val"]))
