"""scikit-learn style wrappers around the training protocol.

``ECGGenerator`` learns the heart-sound -> ECG mapping (pretraining plus the
composite-loss base task); ``DownstreamEstimator`` fits one task head on
either path. Both take ``WindowSet`` objects in ``fit`` because the stages need
more than an ``(X, y)`` pair (subject ids for the discriminator, masks, BP).
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import protocol
from .exceptions import ConfigurationError, InputError
from .losses import LossWeights
from .netblocks import WINDOW, BlockGraph
from .signalio import WindowSet
from .tasks import get_task


def _check_windows(X) -> np.ndarray:
    X = check_array(X, dtype=np.float32, ensure_2d=True)
    if X.shape[1] != WINDOW:
        raise InputError(f"expected windows of length {WINDOW}, got {X.shape[1]}")
    return X


def _check_windowset(data) -> WindowSet:
    if not isinstance(data, WindowSet):
        raise InputError(f"fit expects a WindowSet, got {type(data).__name__}")
    if len(data) == 0:
        raise InputError("empty training set")
    return data


class _ProtocolParams:
    def _config(self) -> protocol.ProtocolConfig:
        return protocol.ProtocolConfig(
            graph=BlockGraph(channel_scale=self.channel_scale), seed=self.random_state,
            batch_size=self.batch_size, learning_rate=self.learning_rate, epochs_ae=self.epochs_ae,
            epochs_disc=self.epochs_disc, epochs_base=self.epochs_base, epochs_task=self.epochs_task,
            weights=LossWeights(self.lambda_d, self.lambda_p), multi_layer=self.multi_layer,
        )


class ECGGenerator(_ProtocolParams, TransformerMixin, BaseEstimator):
    """Heart sound windows in, generated ECG windows out."""

    def __init__(self, lambda_d=5.0, lambda_p=1.0, channel_scale="1/8", epochs_ae=30, epochs_disc=20,
                 epochs_base=20, epochs_task=20, batch_size=32, learning_rate=1e-3, multi_layer=False,
                 random_state=0):
        self.lambda_d = lambda_d
        self.lambda_p = lambda_p
        self.channel_scale = channel_scale
        self.epochs_ae = epochs_ae
        self.epochs_disc = epochs_disc
        self.epochs_base = epochs_base
        self.epochs_task = epochs_task
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.multi_layer = multi_layer
        self.random_state = random_state

    def fit(self, X, y=None, pretrained: protocol.Pretrained | None = None):
        data = _check_windowset(X)
        config = self._config()
        self.manifest_ = protocol.RunManifest(config.seed, config.hash())
        self.pretrained_ = pretrained or protocol.run_pretraining(data, config, self.manifest_)
        p = self.pretrained_
        self.generator_, self.curve_ = protocol.train_base(
            data, p.hs_ae, p.ecg_ae, p.disc, config.weights, config.plan("base_task"), multi_layer=config.multi_layer)
        self.generator_.graph = config.graph
        return self

    def transform(self, X):
        check_is_fitted(self, "generator_")
        hs = X.hs if isinstance(X, WindowSet) else _check_windows(X)
        return protocol.generate_ecg(self.generator_, hs)

    def score(self, X, y=None):
        """Negative mean squared error against the reference ECG."""
        data = _check_windowset(X)
        fake = self.transform(data.hs).astype(np.float64)
        return -float(np.mean((fake - data.ecg.astype(np.float64)) ** 2))


class DownstreamEstimator(_ProtocolParams, BaseEstimator):
    """One downstream task on the direct or indirect path.

    ``predict`` always starts from radar heart sound; the indirect path needs a
    fitted ``generator`` (an ``ECGGenerator`` or a bare ``Generator``).
    """

    def __init__(self, task="segmentation", path="indirect", channel_scale="1/8", epochs_ae=30, epochs_disc=20,
                 epochs_base=20, epochs_task=20, batch_size=32, learning_rate=1e-3, lambda_d=5.0, lambda_p=1.0,
                 multi_layer=False, freeze_encoder=False, random_state=0):
        self.task = task
        self.path = path
        self.channel_scale = channel_scale
        self.epochs_ae = epochs_ae
        self.epochs_disc = epochs_disc
        self.epochs_base = epochs_base
        self.epochs_task = epochs_task
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lambda_d = lambda_d
        self.lambda_p = lambda_p
        self.multi_layer = multi_layer
        self.freeze_encoder = freeze_encoder
        self.random_state = random_state

    def fit(self, X, y=None, generator=None, pretrained: protocol.Pretrained | None = None):
        data = _check_windowset(X)
        spec = get_task(self.task)
        if self.path not in ("direct", "indirect"):
            raise ConfigurationError(f"path must be direct or indirect, got {self.path!r}")
        config = self._config()
        if isinstance(generator, ECGGenerator):
            pretrained = pretrained or generator.pretrained_
            generator = generator.generator_
        if pretrained is None:
            pretrained = protocol.run_pretraining(data, config, protocol.RunManifest(config.seed, config.hash()))
        if self.path == "indirect" and generator is None:
            generator, _ = protocol.train_base(data, pretrained.hs_ae, pretrained.ecg_ae, pretrained.disc,
                                               config.weights, config.plan("base_task"))
        plan = config.plan(f"finetune_{self.path}", seed_tag=(self.task,))
        if self.path == "direct":
            self.model_, self.curve_ = protocol.finetune_direct(data, self.task, pretrained.hs_ae, plan,
                                                                freeze_encoder=self.freeze_encoder)
        else:
            self.model_, self.curve_ = protocol.finetune_indirect(data, self.task, pretrained.disc, plan)
        self.generator_ = generator
        self.task_spec_ = spec
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        hs = X.hs if isinstance(X, WindowSet) else _check_windows(X)
        return protocol.predict(self.model_, hs, self.generator_)

    def predict(self, X):
        """Class indices, binary masks or BP waveforms (normalized units)."""
        out = self.decision_function(X)
        kind = self.task_spec_.head_kind
        if kind == "classifier":
            return out.argmax(axis=1)
        if kind == "segmenter":
            return (out >= 0).astype(np.uint8)  # sigmoid(z) >= 0.5
        return out

    def score(self, X, y=None):
        """Accuracy, mean IoU, or negative BP MAE in mmHg (higher is better)."""
        data = _check_windowset(X)
        metrics = protocol.score(self.decision_function(data.hs), data, self.task_spec_)
        if "acc" in metrics:
            return metrics["acc"]
        if "iou_mean" in metrics:
            return metrics["iou_mean"]
        return -metrics["mae"]
