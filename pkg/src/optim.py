#!/usr/bin/env python3
"""
Adam with bias correction, step learning-rate decay, and GDN reprojection
after every update.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, MutableMapping, Optional, Sequence

import numpy as np

from gdn import reproject_all
from layers import Module

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: MutableMapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """
    One in-place Adam update of every named array.

    Parameters whose gradient is None took no part in the loss and keep both
    their value and their moments.
    """
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step

    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        value -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(value.dtype, copy=False)


class Adam:
    """
    Optimizer over the parameters of one or more modules.

    After each step every GDN layer in those modules is reprojected so beta
    stays above its floor and gamma stays non-negative.
    """

    def __init__(
        self,
        modules: Sequence[Module],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.modules: List[Module] = list(modules)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState()
        self._params = {}
        for i, module in enumerate(self.modules):
            for name, p in module.named_parameters():
                if p.requires_grad:
                    self._params[f"{i}.{name}"] = p

    @property
    def parameter_names(self) -> List[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def step(self) -> None:
        params = {name: p.data for name, p in self._params.items()}
        grads = {name: p.grad for name, p in self._params.items()}
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        for module in self.modules:
            reproject_all(module)


def step_decay_lr(base_lr: float, epoch: int, every: Optional[int], gamma: float) -> float:
    """lr after `epoch` completed epochs: base * gamma^(epoch // every)"""
    if not every:
        return base_lr
    return base_lr * gamma ** (epoch // every)
