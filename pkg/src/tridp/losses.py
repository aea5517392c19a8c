"""Reconstruction, distortion, perceptual and composite objectives.

Reductions follow the training objectives literally: squared L2 norm summed
over every timestep (or every C x L feature entry) and averaged over the batch
only. Sums are accumulated in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .exceptions import ConfigurationError, InputError


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float
    lambda_p: float

    def __post_init__(self):
        if self.lambda_d < 0 or self.lambda_p < 0:
            raise ConfigurationError(f"loss weights must be nonnegative, got {self}")
        if self.lambda_d == 0 and self.lambda_p == 0:
            raise ConfigurationError("lambda_d and lambda_p cannot both be zero")

    @property
    def ratio(self) -> float:
        """Perceptual-to-distortion weight ratio; +inf for a pure perceptual objective."""
        return self.lambda_p / self.lambda_d if self.lambda_d else float("inf")

    def as_tuple(self) -> tuple[float, float]:
        return (float(self.lambda_d), float(self.lambda_p))


def _squared_l2_mean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() < 2:
        raise InputError("expected a batch dimension")
    diff = a.to(torch.float64) - b.to(torch.float64)
    per_item = diff.pow(2).flatten(1).sum(dim=1)
    return per_item.mean()


def recon_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """(1/n) sum_i ||x_i - x_hat_i||^2 over ``(n, L)`` batches."""
    return _squared_l2_mean(x, x_hat)


def distortion_loss(s_ecg: torch.Tensor, s_ecg_hat: torch.Tensor) -> torch.Tensor:
    return _squared_l2_mean(s_ecg, s_ecg_hat)


def perceptual_loss(f, f_hat) -> torch.Tensor:
    """Squared feature distance of discriminator embeddings.

    ``f``/``f_hat`` are ``(n, C, L)`` last-stage maps, or equal-length lists of
    per-stage maps (multi-layer matching: the per-stage losses are summed).
    """
    if isinstance(f, (list, tuple)):
        if not isinstance(f_hat, (list, tuple)) or len(f) != len(f_hat):
            raise InputError("feature stage lists differ")
        return sum(_squared_l2_mean(a, b) for a, b in zip(f, f_hat))
    if isinstance(f_hat, (list, tuple)):
        raise InputError("feature stage lists differ")
    return _squared_l2_mean(f, f_hat)


def composite_loss(l_d, l_p, weights: LossWeights):
    """lambda_d * L_d + lambda_p * L_p."""
    for name, v in (("L_d", l_d), ("L_p", l_p)):
        val = float(v.detach()) if torch.is_tensor(v) else float(v)
        if val < 0:
            raise InputError(f"{name} must be nonnegative, got {val}")
    return weights.lambda_d * l_d + weights.lambda_p * l_p
