#!/usr/bin/env python3
"""
Rate-distortion(-utility) objectives and codec metrics.

Rates are in bits and summed over the batch; distortion is the batch mean
squared error. With lambda_t = 0 for every task the task-informed loss is the
naive loss exactly (the task terms are skipped, not multiplied by zero).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

import functional as F
from codec_net import CodecModel, CodecOutput
from entropy_model import SeedLike, as_generator, hyper_rate_bits, rate_bits
from errors import DimensionError, ParameterError, UnknownTaskError
from layers import Module
from models import LossWeights
from tensor import Tensor, as_tensor, no_grad

logger = logging.getLogger(__name__)

ArrayOrTensor = Union[Tensor, np.ndarray]


@dataclass
class LossBreakdown:
    """Scalar values of every term that went into one loss evaluation"""
    rate_latent: float
    rate_hyper: float
    mse: float
    pixels: int
    task_losses: Dict[str, float] = field(default_factory=dict)
    task_accuracy: Dict[str, float] = field(default_factory=dict)
    total: float = 0.0

    @property
    def rate(self) -> float:
        return self.rate_latent + self.rate_hyper

    @property
    def bpp(self) -> float:
        return self.rate / self.pixels if self.pixels else 0.0


@dataclass
class CodecEvaluation:
    bpp_estimate: float
    mse: float
    psnr: float


# ============================================================================
# DISTORTION
# ============================================================================

def distortion_mse(x: ArrayOrTensor, x_hat: ArrayOrTensor) -> Tensor:
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise DimensionError(f"Cannot compare images of shape {x.shape} and {x_hat.shape}")
    diff = x_hat - x
    return (diff * diff).mean()


def psnr(x: ArrayOrTensor, x_hat: ArrayOrTensor, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); math.inf when the images are identical"""
    if peak <= 0:
        raise ParameterError(f"peak must be positive, got {peak}")
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    b = x_hat.data if isinstance(x_hat, Tensor) else np.asarray(x_hat)
    if a.shape != b.shape:
        raise DimensionError(f"Cannot compare images of shape {a.shape} and {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    return psnr_from_mse(mse, peak)


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse <= 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ============================================================================
# RATE-DISTORTION TERMS
# ============================================================================

def rd_terms(x: Tensor, model: CodecModel, rng: SeedLike) -> Tuple[CodecOutput, Tensor, Tensor, Tensor]:
    """Forward pass plus (latent rate, hyper rate, MSE); noisy latents when rng is given"""
    out = model(x, rng)
    rate_latent = rate_bits(out.z_tilde, out.latent_params)
    rate_hyper = hyper_rate_bits(out.w_tilde, out.hyper_params)
    mse = distortion_mse(x, out.x_hat)
    return out, rate_latent, rate_hyper, mse


def _pixels(x: Tensor) -> int:
    return int(x.shape[0] * x.shape[2] * x.shape[3])


def _naive(x: Tensor, model: CodecModel, weights: LossWeights, rng: SeedLike) -> Tuple[Tensor, CodecOutput, LossBreakdown]:
    x = as_tensor(x)
    out, rate_latent, rate_hyper, mse = rd_terms(x, model, rng)
    loss = rate_latent + rate_hyper + weights.lambda_d * mse
    breakdown = LossBreakdown(
        rate_latent=rate_latent.item(),
        rate_hyper=rate_hyper.item(),
        mse=mse.item(),
        pixels=_pixels(x),
        total=loss.item(),
    )
    return loss, out, breakdown


def loss_naive(x: Tensor, model: CodecModel, weights: LossWeights, rng: SeedLike) -> Tuple[Tensor, LossBreakdown]:
    """rate(z + u) + rate(w + u') + lambda_d * MSE"""
    loss, _, breakdown = _naive(x, model, weights, rng)
    return loss, breakdown


def loss_hyper_prior_kl(x: Tensor, model: CodecModel, rng: SeedLike) -> Tuple[Tensor, LossBreakdown]:
    """The unweighted variational bound: both rates plus plain MSE (lambda_d = 1)"""
    return loss_naive(x, model, LossWeights(lambda_d=1.0), rng)


def loss_task_informed(
    x: Tensor,
    labels: Mapping[str, np.ndarray],
    model: CodecModel,
    heads: Mapping[str, Module],
    weights: LossWeights,
    rng: SeedLike,
) -> Tuple[Tensor, LossBreakdown]:
    """
    Naive loss plus sum_t lambda_t * CE(h_t(z + u), y_t).

    Heads read the noisy latent of the same forward pass, never the
    reconstruction.
    """
    active = weights.active_tasks
    for task in active:
        if task not in heads:
            raise UnknownTaskError(f"No head registered for task '{task}' (have {sorted(heads)})")
        if task not in labels:
            raise UnknownTaskError(f"No labels supplied for task '{task}'")

    loss, out, breakdown = _naive(x, model, weights, rng)
    for task in active:
        logits = heads[task](out.z_tilde)
        task_loss = F.softmax_cross_entropy(logits, labels[task])
        loss = loss + weights.lambda_t[task] * task_loss
        breakdown.task_losses[task] = task_loss.item()
        breakdown.task_accuracy[task] = accuracy(logits, labels[task])
    breakdown.total = loss.item()
    return loss, breakdown


def accuracy(logits: ArrayOrTensor, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the label"""
    scores = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(scores.argmax(axis=1) == labels))


# ============================================================================
# HELD-OUT METRICS
# ============================================================================

def evaluate_codec(model: CodecModel, images: np.ndarray, batch_size: int = 32) -> CodecEvaluation:
    """bpp estimated from rounded latents, MSE and PSNR over N x 3 x H x W images"""
    total_bits, total_sq, pixels, values = 0.0, 0.0, 0, 0
    was_training = model.training
    model.eval()
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = Tensor(np.asarray(images[start:start + batch_size]))
            out, rate_latent, rate_hyper, _ = rd_terms(x, model, None)
            total_bits += rate_latent.item() + rate_hyper.item()
            x_hat = np.clip(out.x_hat.data, 0.0, 1.0)
            total_sq += float(np.sum((x_hat.astype(np.float64) - x.data) ** 2))
            pixels += _pixels(x)
            values += x.size
    model.train(was_training)
    mse = total_sq / max(values, 1)
    return CodecEvaluation(bpp_estimate=total_bits / max(pixels, 1), mse=mse, psnr=psnr_from_mse(mse))


def quantization_gap(model: CodecModel, images: np.ndarray, draws: int = 64, rng: SeedLike = 0) -> float:
    """|rate(round) - mean over draws of rate(noisy)| / rate(round)"""
    generator = as_generator(rng)
    x = Tensor(np.asarray(images))
    with no_grad():
        _, latent, hyper, _ = rd_terms(x, model, None)
        rounded = latent.item() + hyper.item()
        noisy = []
        for _ in range(draws):
            _, latent, hyper, _ = rd_terms(x, model, generator)
            noisy.append(latent.item() + hyper.item())
    gap = abs(rounded - float(np.mean(noisy))) / rounded
    logger.debug(f"Quantization gap {gap:.4f} (round {rounded:.1f} bits, noisy {np.mean(noisy):.1f} bits)")
    return gap


def mean_breakdown(breakdowns: List[LossBreakdown]) -> Optional[LossBreakdown]:
    """Pixel-weighted aggregate of several batch breakdowns"""
    if not breakdowns:
        return None
    pixels = sum(b.pixels for b in breakdowns)
    merged = LossBreakdown(
        rate_latent=sum(b.rate_latent for b in breakdowns),
        rate_hyper=sum(b.rate_hyper for b in breakdowns),
        mse=sum(b.mse * b.pixels for b in breakdowns) / max(pixels, 1),
        pixels=pixels,
        total=float(np.mean([b.total for b in breakdowns])),
    )
    tasks = {task for b in breakdowns for task in b.task_losses}
    for task in sorted(tasks):
        hits = [b for b in breakdowns if task in b.task_losses]
        merged.task_losses[task] = float(np.mean([b.task_losses[task] for b in hits]))
        merged.task_accuracy[task] = float(np.mean([b.task_accuracy[task] for b in hits]))
    return merged
