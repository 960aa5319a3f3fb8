#!/usr/bin/env python3
"""
Conditional Gaussian entropy model.

Every latent element is modelled by a Gaussian N(mu, sigma) convolved with
unit uniform noise, which on the integer lattice gives

    p(k) = Phi((k + 1/2 - mu) / sigma) - Phi((k - 1/2 - mu) / sigma)

This module covers quantization (noise during training, rounding at
inference), the PMF and rate in bits, and the integer CDF tables the range
coder consumes. All float-to-integer conversion for coding happens in
build_cdf_tables.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np
from scipy import special

import functional as F
from errors import DimensionError, ParameterError, QuantizationRangeError
from tensor import Tensor, as_tensor, get_default_dtype

logger = logging.getLogger(__name__)

SIGMA_MIN = 0.05
LIKELIHOOD_FLOOR = 1e-9
DEFAULT_PRECISION = 16
DEFAULT_TAIL_MASS = 2.0 ** -16
DEFAULT_T_MAX = 64
INT32_LIMIT = 2 ** 31

SeedLike = Union[int, np.random.Generator, None]


@dataclass
class GaussianParams:
    """Per-element mean and scale, both shaped like the latent they model"""
    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise DimensionError(f"mu {self.mu.shape} and sigma {self.sigma.shape} must match")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.mu.shape


@dataclass
class QuantizedLatent:
    """Integer latent values (int32) with their N x C x H x W shape"""
    values: np.ndarray
    clamped: int = 0

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def as_tensor(self) -> Tensor:
        return Tensor(self.values.astype(get_default_dtype()))


@dataclass
class CdfTable:
    """
    Quantized cumulative counts per element.

    Element i covers symbols lo[i] .. lo[i] + sizes[i] - 1. Row cdf[i] holds
    sizes[i] + 1 strictly increasing counts from 0 to 2^precision; cells past
    the window repeat 2^precision.
    """
    lo: np.ndarray
    sizes: np.ndarray
    cdf: np.ndarray
    precision: int = DEFAULT_PRECISION
    shape: Tuple[int, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return int(self.lo.shape[0])

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.sizes - 1

    @property
    def total(self) -> int:
        return 1 << self.precision


# ============================================================================
# QUANTIZATION
# ============================================================================

def as_generator(rng: SeedLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def uniform_noise(shape: Tuple[int, ...], rng: SeedLike, dtype: type = np.float32) -> np.ndarray:
    """i.i.d. samples strictly inside (-1/2, 1/2)"""
    u = as_generator(rng).uniform(-0.5, 0.5, size=shape).astype(dtype)
    edge = np.nextafter(dtype(0.5), dtype(0.0))
    return np.clip(u, -edge, edge)


def quantize_noise(z: Tensor, rng: SeedLike) -> Tensor:
    """z + u with u ~ U(-1/2, 1/2); the noise is a constant, so gradients pass straight through"""
    z = as_tensor(z)
    return z + Tensor(uniform_noise(z.shape, rng, z.dtype.type))


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def quantize_round(z: Union[Tensor, np.ndarray]) -> QuantizedLatent:
    """Round to the nearest integer, halves away from zero"""
    data = z.data if isinstance(z, Tensor) else np.asarray(z)
    data = data.astype(np.float64)
    if not np.all(np.isfinite(data)) or (data.size and np.abs(data).max() >= INT32_LIMIT - 0.5):
        raise QuantizationRangeError("Latent magnitude does not fit a 32-bit integer")
    return QuantizedLatent(values=round_half_away(data).astype(np.int32))


# ============================================================================
# PMF AND RATE
# ============================================================================

def pmf(z_hat: float, mu: float, sigma: float) -> float:
    """Gaussian mass on [z_hat - 1/2, z_hat + 1/2], evaluated in the lower tail"""
    v = abs(float(z_hat) - float(mu))
    upper = special.ndtr((0.5 - v) / sigma)
    lower = special.ndtr((-0.5 - v) / sigma)
    return float(upper - lower)


def likelihood(z_hat: Tensor, params: GaussianParams) -> Tensor:
    """Differentiable elementwise pmf, floored at LIKELIHOOD_FLOOR"""
    z_hat = as_tensor(z_hat)
    if z_hat.shape != params.shape:
        raise DimensionError(f"Latent {z_hat.shape} does not match entropy parameters {params.shape}")
    v = (z_hat - params.mu).abs()
    upper = F.normal_cdf((0.5 - v) / params.sigma)
    lower = F.normal_cdf((-0.5 - v) / params.sigma)
    return (upper - lower).clamp(low=LIKELIHOOD_FLOOR)


def rate_bits(z_hat: Tensor, params: GaussianParams) -> Tensor:
    """Sum of -log2 pmf over all elements"""
    return -likelihood(z_hat, params).log().sum() / math.log(2.0)


def hyper_rate_bits(w_hat: Tensor, hyper_params: GaussianParams) -> Tensor:
    """Rate of the hyper-latent under its learned per-channel prior"""
    return rate_bits(w_hat, hyper_params)


# ============================================================================
# CDF TABLES
# ============================================================================

def _gaussian_arrays(params: GaussianParams) -> Tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(params.mu.data, dtype=np.float64).reshape(-1)
    sigma = np.asarray(params.sigma.data, dtype=np.float64).reshape(-1)
    return mu, sigma


def build_cdf_tables(
    params: GaussianParams,
    precision: int = DEFAULT_PRECISION,
    tail_mass: float = DEFAULT_TAIL_MASS,
    t_max: int = DEFAULT_T_MAX,
) -> CdfTable:
    """
    Quantize every element's PMF to integer counts summing to 2^precision.

    The window is [round(mu) - T, round(mu) + T] with T the smallest value
    leaving less than tail_mass outside (at most t_max). Each symbol gets at
    least one count; the mass beyond the window is folded into the two edge
    symbols.
    """
    if not 8 <= precision <= 24:
        raise ParameterError(f"precision must lie in [8, 24], got {precision}")
    if 2 * t_max + 1 > (1 << precision):
        raise ParameterError(f"t_max={t_max} does not fit precision {precision}")

    mu, sigma = _gaussian_arrays(params)
    if np.any(sigma <= 0):
        raise ParameterError("sigma must be positive")
    n = mu.shape[0]
    total = 1 << precision
    center = round_half_away(mu)

    half_widths = np.arange(t_max + 1, dtype=np.float64)
    left = special.ndtr((center[:, None] - half_widths - 0.5 - mu[:, None]) / sigma[:, None])
    right = special.ndtr((mu[:, None] - center[:, None] - half_widths - 0.5) / sigma[:, None])
    inside = (left + right) < tail_mass
    t = np.where(inside.any(axis=1), inside.argmax(axis=1), t_max).astype(np.int64)

    sizes = 2 * t + 1
    lo = center.astype(np.int64) - t
    k_max = 2 * t_max + 1
    offsets = np.arange(k_max, dtype=np.int64)
    mask = offsets[None, :] < sizes[:, None]

    symbols = lo[:, None] + offsets[None, :]
    upper = special.ndtr((symbols + 0.5 - mu[:, None]) / sigma[:, None])
    lower = special.ndtr((symbols - 0.5 - mu[:, None]) / sigma[:, None])
    probs = np.where(mask, upper - lower, 0.0)

    rows = np.arange(n)
    probs[:, 0] += special.ndtr((lo - 0.5 - mu) / sigma)
    probs[rows, sizes - 1] += special.ndtr((mu - (lo + sizes - 1) - 0.5) / sigma)
    probs = np.maximum(probs, 0.0)
    probs /= np.maximum(probs.sum(axis=1, keepdims=True), 1e-300)

    counts = np.where(mask, np.floor(probs * (total - sizes[:, None])).astype(np.int64) + 1, 0)
    deficit = total - counts.sum(axis=1)
    counts[rows, probs.argmax(axis=1)] += deficit

    cdf = np.zeros((n, k_max + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cdf[:, 1:])

    logger.debug(f"Built {n} CDF tables, mean window {float(sizes.mean()) if n else 0.0:.2f} symbols")
    return CdfTable(lo=lo, sizes=sizes, cdf=cdf, precision=precision, shape=tuple(params.shape))


def dequantize_probabilities(table: CdfTable) -> np.ndarray:
    """Counts back to probabilities, (n, K_max); zero past each window"""
    return np.diff(table.cdf, axis=1) / float(table.total)


def clamp_to_tables(symbols: np.ndarray, table: CdfTable) -> Tuple[np.ndarray, int]:
    """Clamp flattened symbols into their windows; returns (clamped symbols, count changed)"""
    flat = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if flat.shape[0] != len(table):
        raise DimensionError(f"{flat.shape[0]} symbols for {len(table)} tables")
    clamped = np.clip(flat, table.lo, table.hi)
    changed = int(np.count_nonzero(clamped != flat))
    if changed:
        logger.warning(f"⚠️ Clamped {changed} latent elements into their coding windows")
    return clamped, changed


def table_rate_bits(symbols: np.ndarray, table: CdfTable) -> float:
    """Ideal code length under the quantized tables: sum of -log2(count / 2^P)"""
    flat = np.asarray(symbols, dtype=np.int64).reshape(-1)
    rows = np.arange(flat.shape[0])
    index = flat - table.lo
    counts = table.cdf[rows, index + 1] - table.cdf[rows, index]
    return float(-np.log2(counts / float(table.total)).sum())
