#!/usr/bin/env python3
"""
Module system: parameter containers with unique dotted names, train/eval
modes and state dicts, plus the basic layers built on functional.py.
"""

import logging
import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

import functional as F
from errors import ParameterError, WeightFormatError
from tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)


def uniform_fan_in(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    """Centered uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]"""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    data = rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())
    return Tensor(data, requires_grad=True)


def _as_rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


class Module:
    """
    Base class for everything that owns parameters.

    Parameters are Tensor attributes with requires_grad set at construction;
    sub-modules are Module attributes or lists of Modules. Non-trainable state
    (batch-norm running statistics) lives in `self.buffers`.
    """

    def __init__(self):
        self.training = True
        self.buffers: Dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} does not implement forward()")

    # ------------------------------------------------------------------
    # Traversal
    # ------------------------------------------------------------------

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.is_leaf:
                yield (f"{prefix}.{name}" if prefix else name), value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}.{name}" if prefix else name)

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for module_name, module in self.named_modules(prefix):
            for name, value in module.buffers.items():
                yield (f"{module_name}.{name}" if module_name else name), value

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # ------------------------------------------------------------------
    # Modes
    # ------------------------------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def requires_grad_(self, flag: bool) -> "Module":
        """Freeze (False) or unfreeze (True) every parameter"""
        for p in self.parameters():
            p.requires_grad = flag
        return self

    # ------------------------------------------------------------------
    # State
    # ------------------------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, value in self.named_buffers():
            state[name] = value.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = {name: p for name, p in self.named_parameters()}
        buffers = dict(self.named_buffers())
        missing = (set(expected) | set(buffers)) - set(state)
        unexpected = set(state) - set(expected) - set(buffers)
        if missing or unexpected:
            raise WeightFormatError(
                f"State mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]}"
            )
        for name, p in expected.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise WeightFormatError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype, copy=True)
        for name, buf in buffers.items():
            value = np.asarray(state[name])
            if value.shape != buf.shape:
                raise WeightFormatError(f"{name}: expected shape {buf.shape}, got {value.shape}")
            buf[...] = value


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        rng = _as_rng(rng)
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = uniform_fan_in(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = uniform_fan_in(rng, (out_channels,), fan_in)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: Optional[int] = None,
        output_padding: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        rng = _as_rng(rng)
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.output_padding = (stride - 1) if output_padding is None else output_padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = uniform_fan_in(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in)
        self.bias = uniform_fan_in(rng, (out_channels,), fan_in)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d_transposed(
            x, self.weight, self.bias,
            stride=self.stride, padding=self.padding, output_padding=self.output_padding,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = _as_rng(rng)
        self.weight = uniform_fan_in(rng, (out_features, in_features), in_features)
        self.bias = uniform_fan_in(rng, (out_features,), in_features)

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dtype = get_default_dtype()
        self.momentum, self.eps = momentum, eps
        self.weight = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.weight, self.bias,
            self.buffers["running_mean"], self.buffers["running_var"],
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Activation(Module):
    def __init__(self, kind: str, alpha: float = F.LEAKY_RELU_SLOPE):
        super().__init__()
        if kind not in F.ACTIVATIONS:
            raise ParameterError(f"Unknown activation: {kind}")
        self.kind, self.alpha = kind, alpha

    def forward(self, x: Tensor) -> Tensor:
        return F.activation(x, self.kind, self.alpha)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, index: int) -> Module:
        return self.layers[index]
