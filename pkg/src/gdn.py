#!/usr/bin/env python3
"""
Generalized Divisive Normalization and its inverse.

With the exponents fixed at 2 and 1/2 the normalizer is a weighted channel
energy at every spatial location:

    gdn:   z_c = x_c / sqrt(beta_c + sum_j gamma_cj * x_j^2)
    igdn:  z_c = x_c * sqrt(beta_c + sum_j gamma_cj * x_j^2)
"""

import logging
from dataclasses import dataclass

import numpy as np

import functional as F
from errors import DimensionError, ParameterError
from layers import Module
from tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)

BETA_FLOOR = 1e-6
GAMMA_INIT = 0.1


@dataclass
class GdnParams:
    """beta: [C] strictly positive, gamma: [C, C] non-negative"""
    beta: Tensor
    gamma: Tensor

    @property
    def channels(self) -> int:
        return self.beta.shape[0]


def _normalizer(x: Tensor, p: GdnParams) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.channels or p.gamma.shape != (p.channels, p.channels):
        raise DimensionError(
            f"GDN over {p.channels} channels cannot normalize input {x.shape} (gamma {p.gamma.shape})"
        )
    if np.any(p.beta.data <= 0):
        raise ParameterError(f"GDN beta must be positive, min is {float(p.beta.data.min())}")
    c = p.channels
    # 1x1 convolution of x^2 with gamma plus beta gives the per-location energy
    energy = F.conv2d(x * x, p.gamma.reshape(c, c, 1, 1), p.beta)
    return energy.sqrt()


def gdn_forward(x: Tensor, p: GdnParams) -> Tensor:
    return x / _normalizer(x, p)


def igdn_forward(x: Tensor, p: GdnParams) -> Tensor:
    return x * _normalizer(x, p)


class GDN(Module):
    """GDN (or IGDN when inverse=True) layer with learnable beta and gamma"""

    def __init__(self, channels: int, inverse: bool = False):
        super().__init__()
        dtype = get_default_dtype()
        self.inverse = inverse
        self.beta = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.gamma = Tensor(GAMMA_INIT * np.eye(channels, dtype=dtype), requires_grad=True)

    @property
    def params(self) -> GdnParams:
        return GdnParams(beta=self.beta, gamma=self.gamma)

    def forward(self, x: Tensor) -> Tensor:
        if self.inverse:
            return igdn_forward(x, self.params)
        return gdn_forward(x, self.params)

    def reproject(self) -> None:
        """Clamp beta to >= BETA_FLOOR and gamma to >= 0 in place"""
        np.maximum(self.beta.data, BETA_FLOOR, out=self.beta.data)
        np.maximum(self.gamma.data, 0.0, out=self.gamma.data)


def reproject_all(model: Module) -> int:
    """Reproject every GDN layer inside model; returns how many were touched"""
    count = 0
    for _, module in model.named_modules():
        if isinstance(module, GDN):
            module.reproject()
            count += 1
    return count
