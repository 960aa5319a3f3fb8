#!/usr/bin/env python3
"""
Differentiable layer math on top of tensor.py: convolutions, pixel shuffle,
activations, normalisation, losses and the normal CDF used by the entropy model.

Convolutions use an im2col formulation over numpy sliding windows, N x C x H x W.
"""

import logging
import math
from typing import Dict, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from errors import ContractError, DimensionError, ParameterError
from tensor import Function, Tensor, as_tensor

logger = logging.getLogger(__name__)

LEAKY_RELU_SLOPE = 0.01
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ============================================================================
# CONVOLUTIONS
# ============================================================================

def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C, Ho, Wo, k, k) strided view"""
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


class Conv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> np.ndarray:
        self.stride, self.padding = stride, padding
        self.in_shape = x.shape
        k = w.shape[2]
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.xp_shape = xp.shape
        self.cols = _windows(xp, k, stride)
        self.w = w
        out = np.tensordot(self.cols, w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b.reshape(1, -1, 1, 1)

    def backward(self, grad: np.ndarray):
        k, s, p = self.w.shape[2], self.stride, self.padding
        _, _, ho, wo = grad.shape

        grad_w = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 2, 3])) if self.needs_grad(1) else None
        grad_b = grad.sum(axis=(0, 2, 3)) if self.needs_grad(2) else None

        grad_x = None
        if self.needs_grad(0):
            dcols = np.tensordot(grad, self.w, axes=([1], [0]))  # N, Ho, Wo, C, k, k
            gxp = np.zeros(self.xp_shape, dtype=grad.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            h, w = self.in_shape[2], self.in_shape[3]
            grad_x = gxp[:, :, p:p + h, p:p + w]
        return grad_x, grad_w, grad_b


class ConvTranspose2d(Function):
    """Adjoint of Conv2d; weight is (C_in, C_out, k, k)"""

    def forward(
        self, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int, output_padding: int
    ) -> np.ndarray:
        n, _, h, wd = x.shape
        k = w.shape[2]
        self.stride, self.padding, self.x, self.w = stride, padding, x, w
        out_h = (h - 1) * stride - 2 * padding + k + output_padding
        out_w = (wd - 1) * stride - 2 * padding + k + output_padding
        if out_h <= 0 or out_w <= 0:
            raise DimensionError(f"Transposed convolution output would be empty for input {x.shape}")

        full_h = max((h - 1) * stride + k, padding + out_h)
        full_w = max((wd - 1) * stride + k, padding + out_w)
        self.full_shape = (n, w.shape[1], full_h, full_w)
        self.out_hw = (out_h, out_w)

        cols = np.tensordot(x, w, axes=([1], [0]))  # N, H, W, C_out, k, k
        full = np.zeros(self.full_shape, dtype=np.result_type(x, w))
        for i in range(k):
            for j in range(k):
                full[:, :, i:i + stride * h:stride, j:j + stride * wd:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        out = full[:, :, padding:padding + out_h, padding:padding + out_w]
        return np.ascontiguousarray(out) + b.reshape(1, -1, 1, 1)

    def backward(self, grad: np.ndarray):
        k, s, p = self.w.shape[2], self.stride, self.padding
        _, _, h, wd = self.x.shape
        out_h, out_w = self.out_hw

        g_full = np.zeros(self.full_shape, dtype=grad.dtype)
        g_full[:, :, p:p + out_h, p:p + out_w] = grad
        cols = _windows(g_full, k, s)[:, :, :h, :wd]  # N, C_out, H, W, k, k

        grad_x = None
        if self.needs_grad(0):
            grad_x = np.tensordot(cols, self.w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        grad_w = np.tensordot(self.x, cols, axes=([0, 2, 3], [0, 2, 3])) if self.needs_grad(1) else None
        grad_b = grad.sum(axis=(0, 2, 3)) if self.needs_grad(2) else None
        return grad_x, grad_w, grad_b


def _check_conv_args(x: Tensor, weight: Tensor, channel_axis: int, stride: int, name: str) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"{name} expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[channel_axis]:
        raise DimensionError(
            f"{name} channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[channel_axis]}"
        )
    if weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"{name} needs square kernels, got {weight.shape[2:]}")
    if stride < 1:
        raise ParameterError(f"{name} stride must be >= 1, got {stride}")


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """
    2-D cross-correlation.

    Output extent: floor((H + 2*padding - k) / stride) + 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x, weight, 1, stride, "conv2d")
    k = weight.shape[2]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise DimensionError(f"conv2d input {x.shape[2:]} with padding {padding} is smaller than kernel {k}")
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0], dtype=weight.dtype))
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def conv2d_transposed(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """
    Transposed convolution, the adjoint of conv2d with the same kernel.

    Output extent: (H - 1) * stride - 2 * padding + k + output_padding.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x, weight, 0, stride, "conv2d_transposed")
    if output_padding < 0 or (output_padding and output_padding >= stride):
        raise ParameterError(f"output_padding must be smaller than stride, got {output_padding}")
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[1], dtype=weight.dtype))
    return ConvTranspose2d.apply(x, weight, bias, stride=stride, padding=padding, output_padding=output_padding)


# ============================================================================
# PIXEL SHUFFLE
# ============================================================================

def _shuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    out_c = c // (r * r)
    return x.reshape(n, out_c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, out_c, h * r, w * r)


def _unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    return x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


class PixelShuffle(Function):
    def forward(self, x: np.ndarray, r: int) -> np.ndarray:
        self.r = r
        return _shuffle(x, r)

    def backward(self, grad: np.ndarray):
        return (_unshuffle(grad, self.r),)


class PixelUnshuffle(Function):
    def forward(self, x: np.ndarray, r: int) -> np.ndarray:
        self.r = r
        return _unshuffle(x, r)

    def backward(self, grad: np.ndarray):
        return (_shuffle(grad, self.r),)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """output[n, c, r*h + i, r*w + j] = input[n, c*r*r + i*r + j, h, w]"""
    x = as_tensor(x)
    if r < 1:
        raise ParameterError(f"pixel_shuffle factor must be >= 1, got {r}")
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise DimensionError(f"pixel_shuffle needs channels divisible by {r * r}, got shape {x.shape}")
    return PixelShuffle.apply(x, r=r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    x = as_tensor(x)
    if r < 1:
        raise ParameterError(f"pixel_unshuffle factor must be >= 1, got {r}")
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"pixel_unshuffle needs spatial extents divisible by {r}, got shape {x.shape}")
    return PixelUnshuffle.apply(x, r=r)


# ============================================================================
# ACTIVATIONS
# ============================================================================

class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad: np.ndarray):
        return (grad * self.mask,)


class LeakyReLU(Function):
    def forward(self, x: np.ndarray, alpha: float) -> np.ndarray:
        self.slope = np.where(x > 0, 1.0, alpha).astype(x.dtype)
        return x * self.slope

    def backward(self, grad: np.ndarray):
        return (grad * self.slope,)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = special.expit(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * (1.0 - self.out * self.out),)


class Softplus(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return np.logaddexp(0.0, x).astype(x.dtype)

    def backward(self, grad: np.ndarray):
        return (grad * special.expit(self.x),)


class SiLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        self.sig = special.expit(x)
        return x * self.sig

    def backward(self, grad: np.ndarray):
        return (grad * (self.sig + self.x * self.sig * (1.0 - self.sig)),)


class Mish(Function):
    """x * tanh(softplus(x))"""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        self.t = np.tanh(np.logaddexp(0.0, x)).astype(x.dtype)
        return x * self.t

    def backward(self, grad: np.ndarray):
        d = self.t + self.x * (1.0 - self.t * self.t) * special.expit(self.x)
        return (grad * d,)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def leaky_relu(x: Tensor, alpha: float = LEAKY_RELU_SLOPE) -> Tensor:
    return LeakyReLU.apply(x, alpha=alpha)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def softplus(x: Tensor) -> Tensor:
    return Softplus.apply(x)


def silu(x: Tensor) -> Tensor:
    return SiLU.apply(x)


def mish(x: Tensor) -> Tensor:
    return Mish.apply(x)


ACTIVATIONS: Dict[str, object] = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "silu": silu,
    "mish": mish,
}


def activation(x: Tensor, kind: str, alpha: float = LEAKY_RELU_SLOPE) -> Tensor:
    """Elementwise activation by name: relu, leaky_relu, mish or silu"""
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind not in ACTIVATIONS:
        raise ParameterError(f"Unknown activation: {kind}. Available: {list(ACTIVATIONS.keys())}")
    return ACTIVATIONS[kind](x)


# ============================================================================
# NORMAL CDF
# ============================================================================

class NormalCdf(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return special.ndtr(x).astype(x.dtype)

    def backward(self, grad: np.ndarray):
        return (grad * _INV_SQRT_2PI * np.exp(-0.5 * self.x * self.x),)


def normal_cdf(x: Tensor) -> Tensor:
    """Standard normal CDF Phi(x)"""
    return NormalCdf.apply(x)


# ============================================================================
# DENSE LAYERS, NORMALISATION, LOSSES
# ============================================================================

class Linear(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, grad: np.ndarray):
        grad_x = grad @ self.w if self.needs_grad(0) else None
        grad_w = grad.T @ self.x if self.needs_grad(1) else None
        grad_b = grad.sum(axis=0) if self.needs_grad(2) else None
        return grad_x, grad_w, grad_b


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear expects (N, {weight.shape[1]}) input, got {x.shape}")
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0], dtype=weight.dtype))
    return Linear.apply(x, weight, bias)


class SoftmaxCrossEntropy(Function):
    def forward(self, logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        self.probs = np.exp(log_probs)
        self.labels = labels
        n = logits.shape[0]
        return np.asarray(-log_probs[np.arange(n), labels].mean(), dtype=logits.dtype)

    def backward(self, grad: np.ndarray):
        n = self.probs.shape[0]
        d = self.probs.copy()
        d[np.arange(n), self.labels] -= 1.0
        return (grad * d / n,)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels"""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"softmax_cross_entropy got logits {logits.shape} and labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ContractError(f"Labels must lie in [0, {logits.shape[1]})")
    return SoftmaxCrossEntropy.apply(logits, labels=labels)


class BatchNorm(Function):
    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        training: bool,
        momentum: float,
        eps: float,
    ) -> np.ndarray:
        self.training = training
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            count = x.size // x.shape[1]
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * count / max(count - 1, 1)
        else:
            mean, var = running_mean, running_var
        self.inv_std = (1.0 / np.sqrt(var + eps)).reshape(1, -1, 1, 1).astype(x.dtype)
        self.x_hat = (x - mean.reshape(1, -1, 1, 1)) * self.inv_std
        self.gamma = gamma.reshape(1, -1, 1, 1)
        return self.gamma * self.x_hat + beta.reshape(1, -1, 1, 1)

    def backward(self, grad: np.ndarray):
        grad_gamma = (grad * self.x_hat).sum(axis=(0, 2, 3)) if self.needs_grad(1) else None
        grad_beta = grad.sum(axis=(0, 2, 3)) if self.needs_grad(2) else None
        grad_x = None
        if self.needs_grad(0):
            d_hat = grad * self.gamma
            if self.training:
                m = grad.size // grad.shape[1]
                grad_x = self.inv_std / m * (
                    m * d_hat
                    - d_hat.sum(axis=(0, 2, 3), keepdims=True)
                    - self.x_hat * (d_hat * self.x_hat).sum(axis=(0, 2, 3), keepdims=True)
                )
            else:
                grad_x = d_hat * self.inv_std
        return grad_x, grad_gamma, grad_beta


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation; training mode updates the running statistics in place"""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batch_norm expects (N, {gamma.shape[0]}, H, W), got {x.shape}")
    return BatchNorm.apply(
        x, gamma, beta,
        running_mean=running_mean, running_var=running_var,
        training=training, momentum=momentum, eps=eps,
    )


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window of every plane"""
    if x.shape[2] < height or x.shape[3] < width:
        raise DimensionError(f"Cannot crop {x.shape} to {height}x{width}")
    if x.shape[2] == height and x.shape[3] == width:
        return x
    return x[:, :, :height, :width]


def global_avg_pool(x: Tensor) -> Tensor:
    return x.mean(axis=(2, 3))
