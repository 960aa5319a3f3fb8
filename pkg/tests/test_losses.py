#!/usr/bin/env python3
"""
Unit Tests for objectives and metrics
"When I grow up I want to be a principal or a caterpillar!" - Ralph Wiggum
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from codec_net import CodecModel
from dataset import stack_images
from errors import DimensionError, ParameterError, UnknownTaskError
from losses import (
    LossBreakdown,
    accuracy,
    distortion_mse,
    evaluate_codec,
    loss_hyper_prior_kl,
    loss_naive,
    loss_task_informed,
    mean_breakdown,
    psnr,
    psnr_from_mse,
    quantization_gap,
)
from models import CodecConfig, HeadConfig, LossWeights, StemConfig
from task_head import ClassifierHead
from tensor import Tensor, default_dtype
from training import make_datasets, train


@pytest.fixture
def model64():
    with default_dtype(np.float64):
        return CodecModel(CodecConfig(latent_channels=3, hyper_channels=2), seed=4)


@pytest.fixture
def head64():
    cfg = HeadConfig(stem=StemConfig(variant="truncated"), trunk_width=4, trunk_blocks=1, num_classes=2)
    with default_dtype(np.float64):
        return ClassifierHead(3, cfg, seed=1)


@pytest.fixture
def batch():
    return Tensor(np.random.default_rng(7).uniform(size=(2, 3, 16, 16)))


class TestRalphWiggumMetrics:
    """
    Distortion and PSNR
    "I'm learnding!" - Ralph
    """

    def test_psnr_values_unpossible(self):
        """Test known PSNR values - That's unpossible!"""
        x = np.zeros((4, 4, 3))
        assert psnr(x, x + 0.1) == pytest.approx(20.0)
        assert psnr(x, x) == math.inf
        assert psnr_from_mse(1.0, peak=255.0) == pytest.approx(48.1308, abs=1e-4)

    def test_psnr_errors_burning(self):
        """Test bad peaks and shapes - It tastes like burning!"""
        with pytest.raises(ParameterError):
            psnr(np.zeros(3), np.zeros(3), peak=0.0)
        with pytest.raises(DimensionError):
            psnr(np.zeros(3), np.zeros(4))
        with pytest.raises(DimensionError):
            distortion_mse(np.zeros((1, 3)), np.zeros((3, 1)))

    def test_mse_is_mean_square_learnding(self):
        """Test distortion_mse - I'm learnding!"""
        x = np.array([0.0, 1.0, 2.0, 3.0])
        assert distortion_mse(x, x + np.array([1.0, -1.0, 2.0, 0.0])).item() == pytest.approx(1.5)

    def test_accuracy_wookie(self):
        """Test argmax accuracy - I bent my Wookie!"""
        logits = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
        assert accuracy(logits, np.array([0, 1, 1])) == pytest.approx(2.0 / 3.0)
        assert accuracy(np.zeros((0, 2)), np.array([], dtype=np.int64)) == 0.0


class TestRalphWiggumObjectives:
    """
    Naive and task-informed losses
    "Go banana!" - Ralph
    """

    def test_zero_task_weight_is_naive_unpossible(self, model64, batch):
        """Test lambda_t = 0 reduces exactly to the naive loss - That's unpossible!"""
        naive, nb = loss_naive(batch, model64, LossWeights(lambda_d=50.0), rng=3)
        informed, ib = loss_task_informed(
            batch, {}, model64, {}, LossWeights(lambda_d=50.0, lambda_t={"class": 0.0}), rng=3
        )
        assert abs(informed.item() - naive.item()) <= 1e-10
        assert ib.task_losses == {}
        assert ib.total == nb.total

    def test_task_term_is_weighted_cross_entropy_learnding(self, model64, head64, batch):
        """Test informed - naive = lambda_t * CE - I'm learnding!"""
        labels = {"class": np.array([0, 1])}
        naive, _ = loss_naive(batch, model64, LossWeights(lambda_d=50.0), rng=3)
        informed, breakdown = loss_task_informed(
            batch, labels, model64, {"class": head64}, LossWeights(lambda_d=50.0, lambda_t={"class": 2.5}), rng=3
        )
        ce = breakdown.task_losses["class"]
        assert ce > 0
        assert informed.item() - naive.item() == pytest.approx(2.5 * ce, rel=1e-9)
        assert 0.0 <= breakdown.task_accuracy["class"] <= 1.0

    def test_missing_head_or_labels_wookie(self, model64, head64, batch):
        """Test active tasks need a head and labels - I bent my Wookie!"""
        weights = LossWeights(lambda_t={"class": 1.0})
        with pytest.raises(UnknownTaskError):
            loss_task_informed(batch, {"class": np.array([0, 1])}, model64, {}, weights, rng=0)
        with pytest.raises(UnknownTaskError):
            loss_task_informed(batch, {}, model64, {"class": head64}, weights, rng=0)

    def test_variational_bound_is_unit_weight_viking(self, model64, batch):
        """Test the unweighted bound uses lambda_d = 1 - Sleep! That's where I'm a Viking!"""
        bound, _ = loss_hyper_prior_kl(batch, model64, rng=2)
        naive, _ = loss_naive(batch, model64, LossWeights(lambda_d=1.0), rng=2)
        assert bound.item() == naive.item()

    def test_breakdown_adds_up_banana(self, model64, batch):
        """Test total = rates + lambda_d * MSE - Go banana!"""
        _, b = loss_naive(batch, model64, LossWeights(lambda_d=10.0), rng=1)
        assert b.total == pytest.approx(b.rate_latent + b.rate_hyper + 10.0 * b.mse, rel=1e-12)
        assert b.pixels == 2 * 16 * 16
        assert b.bpp == pytest.approx(b.rate / 512)

    def test_task_gradients_reach_codec_and_head_idaho(self, model64, head64, batch, grad_check):
        """Test the task term trains both networks - I'm Idaho!"""
        labels = {"class": np.array([1, 0])}
        weights = LossWeights(lambda_d=20.0, lambda_t={"class": 3.0})

        def loss():
            return loss_task_informed(batch, labels, model64, {"class": head64}, weights, rng=9)[0]

        grad_check(loss, [model64.encoder[6].weight, head64.fc.weight, head64.stem.proj.weight], samples=4)


class TestRalphWiggumEvaluation:
    """
    Held-out metrics
    "Hi, Super Nintendo Chalmers!" - Ralph
    """

    def test_evaluation_is_batch_invariant_unpossible(self, tiny_model):
        """Test evaluate_codec does not depend on the batch size - That's unpossible!"""
        images = np.random.default_rng(0).uniform(size=(3, 3, 16, 16)).astype(np.float32)
        whole = evaluate_codec(tiny_model, images, batch_size=3)
        pieces = evaluate_codec(tiny_model, images, batch_size=2)
        assert whole.bpp_estimate == pytest.approx(pieces.bpp_estimate, rel=1e-4)
        assert whole.mse == pytest.approx(pieces.mse, rel=1e-4)
        assert whole.psnr == pytest.approx(psnr_from_mse(whole.mse))
        assert whole.bpp_estimate > 0

    def test_evaluation_restores_mode_learnding(self, tiny_config):
        """Test evaluate_codec leaves training mode alone - I'm learnding!"""
        model = CodecModel(tiny_config.codec)
        evaluate_codec(model, np.zeros((1, 3, 16, 16), dtype=np.float32))
        assert model.training

    def test_quantization_gap_is_small_and_seeded_wookie(self, tiny_model):
        """Test the rounded and noisy rates agree - I bent my Wookie!"""
        images = np.random.default_rng(1).uniform(size=(2, 3, 32, 32)).astype(np.float32)
        gap = quantization_gap(tiny_model, images, draws=16, rng=0)
        assert 0.0 <= gap < 1.0
        assert gap == quantization_gap(tiny_model, images, draws=16, rng=0)

    @pytest.mark.slow
    def test_trained_codec_ignores_quantization_mode_learnding(self, tiny_config):
        """Test rounded and noisy rates agree within 10% after training - I'm learnding!"""
        config = tiny_config.model_copy(update={"epochs": 20, "train_samples": 32, "holdout_samples": 8})
        train_set, holdout = make_datasets(config)
        model = train(config, train_set, holdout).model
        model.eval()
        assert quantization_gap(model, stack_images(holdout), draws=64, rng=0) < 0.1

    def test_mean_breakdown_burning(self):
        """Test pixel-weighted aggregation - It tastes like burning!"""
        assert mean_breakdown([]) is None
        a = LossBreakdown(rate_latent=10.0, rate_hyper=2.0, mse=0.1, pixels=100, total=5.0,
                          task_losses={"class": 1.0}, task_accuracy={"class": 0.5})
        b = LossBreakdown(rate_latent=20.0, rate_hyper=4.0, mse=0.4, pixels=300, total=7.0)
        merged = mean_breakdown([a, b])
        assert merged.rate == pytest.approx(36.0)
        assert merged.mse == pytest.approx((0.1 * 100 + 0.4 * 300) / 400)
        assert merged.pixels == 400
        assert merged.total == pytest.approx(6.0)
        assert merged.task_losses == {"class": 1.0}
        assert merged.task_accuracy == {"class": 0.5}
