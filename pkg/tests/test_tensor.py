#!/usr/bin/env python3
"""
Unit Tests for the Tensor engine
"I'm learnding!" - Ralph Wiggum
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from errors import ContractError, DimensionError
from tensor import Tensor, as_tensor, concat, default_dtype, get_default_dtype, no_grad, parameter, split


def leaf(shape, seed=0, low=-1.0, high=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


class TestRalphWiggumTensorBasics:
    """
    Tensor construction and bookkeeping
    "Hi, Super Nintendo Chalmers!" - Ralph
    """

    def test_default_dtype_is_float32_unpossible(self):
        """Test non-float inputs follow the default dtype - That's unpossible!"""
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32
        assert get_default_dtype() is np.float32

    def test_float64_arrays_are_kept_learnding(self):
        """Test float arrays keep their precision - I'm learnding!"""
        t = Tensor(np.zeros(3, dtype=np.float64))
        assert t.dtype == np.float64

    def test_default_dtype_context_restores_wookie(self):
        """Test the dtype context manager restores the previous default - I bent my Wookie!"""
        with default_dtype(np.float64):
            assert parameter([1.0]).dtype == np.float64
            assert as_tensor(2.0).dtype == np.float64
        assert parameter([1.0]).dtype == np.float32

    def test_item_needs_single_element_burning(self):
        """Test item() on a vector is a contract error - It tastes like burning!"""
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()
        assert Tensor([[4.0]]).item() == 4.0

    def test_backward_needs_scalar_go_banana(self):
        """Test backward() refuses non-scalar outputs - Go banana!"""
        x = leaf((2, 2))
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_backward_needs_grad_idaho(self):
        """Test backward() on a constant is a contract error - I'm Idaho!"""
        with pytest.raises(ContractError):
            Tensor([1.0]).sum().backward()

    def test_detach_cuts_the_tape_viking(self):
        """Test detach() returns a leaf without gradient - Sleep! That's where I'm a Viking!"""
        x = leaf((3,))
        y = (x * 2.0).detach()
        assert y.is_leaf and not y.requires_grad


class TestRalphWiggumTape:
    """
    Reverse-mode differentiation
    "I choo-choo-choose you!" - Ralph
    """

    def test_gradients_accumulate_until_cleared_learnding(self):
        """Test repeated backward() calls accumulate - I'm learnding!"""
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0, 6.0])
        x.zero_grad()
        assert x.grad is None

    def test_diamond_graph_sums_paths_unpossible(self):
        """Test a value used twice gets both contributions - That's unpossible!"""
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x + x * 2.0
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [2 * 3.0 + 2.0])

    def test_broadcast_gradient_is_reduced_wookie(self):
        """Test gradients of broadcast operands match their shapes - I bent my Wookie!"""
        x = leaf((2, 3, 4, 4), seed=1)
        b = leaf((1, 3, 1, 1), seed=2)
        (x + b).sum().backward()
        assert b.grad.shape == (1, 3, 1, 1)
        np.testing.assert_allclose(b.grad.reshape(-1), np.full(3, 2 * 4 * 4))

    def test_no_grad_records_nothing_viking(self):
        """Test operations under no_grad() have no creator - Sleep! That's where I'm a Viking!"""
        x = leaf((3,))
        with no_grad():
            y = (x * 2.0).exp()
        assert y.is_leaf and not y.requires_grad

    def test_frozen_leaf_gets_no_gradient_scissors(self):
        """Test leaves without requires_grad stay untouched - My parents won't let me use scissors!"""
        x = leaf((3,))
        frozen = Tensor(np.ones(3))
        (x * frozen).sum().backward()
        assert frozen.grad is None
        assert x.grad is not None


class TestRalphWiggumGradientChecks:
    """
    Finite-difference checks in double precision
    "Me fail English? That's unpossible!" - Ralph
    """

    def test_elementwise_ops_unpossible(self, grad_check):
        """Test +, -, *, /, pow, exp - That's unpossible!"""
        a, b = leaf((3, 4), seed=1), leaf((3, 4), seed=2, low=0.5, high=2.0)
        grad_check(lambda: (a * b - a / b + (a ** 2.0) * 0.5 + (a - b).exp()).sum(), [a, b])

    def test_log_sqrt_abs_burning(self, grad_check):
        """Test log, sqrt and abs away from their kinks - It tastes like burning!"""
        a = leaf((5,), seed=3, low=0.5, high=3.0)
        b = leaf((5,), seed=4, low=0.3, high=1.0)
        grad_check(lambda: (a.log() * a.sqrt() + (-b).abs()).sum(), [a, b])

    def test_sum_mean_reshape_wookie(self, grad_check):
        """Test sum and mean over axes, then reshape - I bent my Wookie!"""
        x = leaf((2, 3, 4), seed=5)
        grad_check(lambda: (x.sum(axis=1).reshape(8) * x.mean(axis=(0, 2)).sum()).sum(), [x])

    def test_indexing_concat_split_banana(self, grad_check):
        """Test getitem, concat and split - Go banana!"""
        x = leaf((2, 5, 3), seed=6)
        y = leaf((2, 2, 3), seed=7)

        def loss():
            joined = concat([x[:, 1:4], y], axis=1)
            first, second = split(joined, [4, 1], axis=1)
            return (first * 2.0).sum() + (second * second).sum()

        grad_check(loss, [x, y])

    def test_clamp_zero_outside_bounds_idaho(self):
        """Test clamp passes gradient only inside the bounds - I'm Idaho!"""
        x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
        x.clamp(low=-1.0, high=1.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


class TestRalphWiggumShapes:
    """
    Shape errors
    "I dressed myself!" - Ralph
    """

    def test_bad_reshape_is_dimension_error_unpossible(self):
        """Test impossible reshapes raise DimensionError - That's unpossible!"""
        with pytest.raises(DimensionError):
            Tensor(np.zeros(6)).reshape(4, 2)

    def test_split_must_cover_axis_wookie(self):
        """Test split sizes must add up - I bent my Wookie!"""
        with pytest.raises(DimensionError):
            split(Tensor(np.zeros((1, 5, 2, 2))), [2, 2], axis=1)

    def test_split_values_learnding(self):
        """Test split returns consecutive slices - I'm learnding!"""
        t = Tensor(np.arange(12.0).reshape(1, 4, 3))
        a, b = split(t, [1, 3], axis=1)
        np.testing.assert_array_equal(a.data, t.data[:, :1])
        np.testing.assert_array_equal(b.data, t.data[:, 1:])
