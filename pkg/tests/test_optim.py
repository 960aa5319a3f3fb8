#!/usr/bin/env python3
"""
Unit Tests for the optimizer
"I choo-choo-choose you!" - Ralph Wiggum
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from gdn import BETA_FLOOR, GDN
from layers import Linear, Module
from optim import Adam, AdamState, adam_step, step_decay_lr
from tensor import Tensor


class Quadratic(Module):
    def __init__(self):
        super().__init__()
        self.p = Tensor(np.array([0.0, 10.0, -4.0]), requires_grad=True)

    def forward(self):
        diff = self.p - 3.0
        return (diff * diff).sum()


class TestRalphWiggumAdam:
    """
    Adam updates
    "I'm learnding!" - Ralph
    """

    def test_first_step_is_lr_times_sign_unpossible(self):
        """Test bias correction makes the first step lr * g / |g| - That's unpossible!"""
        params = {"a": np.array([1.0, 1.0, 1.0])}
        adam_step(params, {"a": np.array([0.5, -2.0, 1e-3])}, AdamState(), lr=0.1)
        np.testing.assert_allclose(params["a"], [0.9, 1.1, 0.9], atol=1e-5)

    def test_missing_gradient_is_skipped_learnding(self):
        """Test parameters without gradients keep value and moments - I'm learnding!"""
        state = AdamState()
        params = {"a": np.ones(2), "b": np.ones(2)}
        adam_step(params, {"a": np.ones(2), "b": None}, state, lr=0.1)
        np.testing.assert_array_equal(params["b"], np.ones(2))
        assert "b" not in state.m
        assert state.step == 1

    def test_converges_on_quadratic_wookie(self):
        """Test Adam finds the minimum of a bowl - I bent my Wookie!"""
        bowl = Quadratic()
        optimizer = Adam([bowl], lr=0.1)
        for _ in range(1000):
            optimizer.zero_grad()
            bowl().backward()
            optimizer.step()
        np.testing.assert_allclose(bowl.p.data, [3.0, 3.0, 3.0], atol=1e-2)

    def test_matches_scalar_reference_trace_idaho(self):
        """Test 100 steps against a one-number-at-a-time Adam - I'm Idaho!"""
        lr, beta1, beta2, eps = 0.01, 0.9, 0.999, 1e-8
        rng = np.random.default_rng(7)
        start = rng.normal(size=4)
        grads = rng.normal(scale=3.0, size=(100, 4))

        params = {"w": start.copy()}
        state = AdamState()
        trace = []
        for g in grads:
            adam_step(params, {"w": g}, state, lr, beta1, beta2, eps)
            trace.append(params["w"].copy())

        for i in range(4):
            value, m, v = float(start[i]), 0.0, 0.0
            for t in range(1, 101):
                g = float(grads[t - 1, i])
                m = beta1 * m + (1.0 - beta1) * g
                v = beta2 * v + (1.0 - beta2) * g * g
                m_hat = m / (1.0 - beta1 ** t)
                v_hat = v / (1.0 - beta2 ** t)
                value -= lr * m_hat / (math.sqrt(v_hat) + eps)
                assert abs(trace[t - 1][i] - value) <= 1e-10, (i, t)

    def test_frozen_parameters_are_not_tracked_viking(self):
        """Test parameters with requires_grad off are left out - Sleep! That's where I'm a Viking!"""
        layer = Linear(2, 2)
        layer.bias.requires_grad = False
        assert Adam([layer], lr=0.1).parameter_names == ["0.weight"]

    def test_gdn_is_reprojected_after_step_burning(self):
        """Test a step that pushes beta negative is clamped back - It tastes like burning!"""
        layer = GDN(2)
        optimizer = Adam([layer], lr=10.0)
        layer.beta.grad = np.ones(2, dtype=layer.beta.dtype)
        layer.gamma.grad = np.ones((2, 2), dtype=layer.gamma.dtype)
        optimizer.step()
        assert np.all(layer.beta.data >= BETA_FLOOR)
        assert np.all(layer.gamma.data >= 0)


class TestRalphWiggumSchedule:
    """
    Step decay
    "Go banana!" - Ralph
    """

    @pytest.mark.parametrize("epoch,every,expected", [
        (0, None, 1.0),
        (50, None, 1.0),
        (19, 20, 1.0),
        (20, 20, 0.5),
        (45, 20, 0.25),
    ])
    def test_step_decay_banana(self, epoch, every, expected):
        """Test base * gamma^(epoch // every) - Go banana!"""
        assert step_decay_lr(1.0, epoch, every, 0.5) == pytest.approx(expected)
