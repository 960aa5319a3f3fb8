#!/usr/bin/env python3
"""
Minimal dense-tensor engine with tape-based reverse-mode differentiation.
"I'm learnding!" - Ralph Wiggum

A Tensor wraps a numpy array (N x C x H x W, row-major). Every differentiable
operation is a Function subclass; calling Function.apply records the
operation on the output tensor so Tensor.backward() can walk the graph in
reverse topological order.
"""

import contextlib
import logging
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype: type) -> None:
    """Set the float type used for new parameters and non-array inputs"""
    global _DEFAULT_DTYPE
    if np.dtype(dtype).kind != "f":
        raise ValueError(f"Default dtype must be a float type, got {dtype}")
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype: type) -> Iterator[None]:
    """Temporarily switch the default float type (gradient checks use float64)"""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block"""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Function:
    """
    Base class for differentiable operations.

    forward() receives the raw arrays of the input tensors and returns the
    output array. backward() receives dL/d(output) as an array and returns
    one gradient (or None) per input tensor.
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    def needs_grad(self, index: int) -> bool:
        return self.tensors[index].requires_grad

    @classmethod
    def apply(cls, *inputs: Union["Tensor", ArrayLike], **kwargs: Any) -> "Tensor":
        tensors = tuple(as_tensor(t) for t in inputs)
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)

        requires_grad = _GRAD_ENABLED and any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad, _creator=func if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so grad matches to_shape"""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, extent in enumerate(to_shape):
            if extent == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad


class Tensor:
    """
    Dense n-dimensional array with optional gradient tape participation.

    Tensors are immutable after construction; only `grad` changes, by
    accumulation during backward().
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[type] = None,
        _creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            array = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            array = data
        else:
            array = np.asarray(data, dtype=_DEFAULT_DTYPE)

        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._creator = _creator

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # ------------------------------------------------------------------
    # Backward pass
    # ------------------------------------------------------------------

    def backward(self) -> None:
        """
        Populate .grad on every reachable leaf that requires gradients.

        Gradients accumulate across calls until cleared with zero_grad().
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that does not require grad")

        order = self._topological_order()
        grads = {id(self): np.ones_like(self.data)}

        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._creator is None:
                node._accumulate(grad)
                continue
            creator = node._creator
            input_grads = creator.backward(grad)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for parent, parent_grad in zip(creator.tensors, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.shape:
                    parent_grad = Function.unbroadcast(parent_grad, parent.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if id(node) in visited:
                continue
            if children_done:
                visited.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            if node._creator is not None:
                for parent in node._creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    # ------------------------------------------------------------------
    # Operators
    # ------------------------------------------------------------------

    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __abs__(self) -> "Tensor":
        return Abs.apply(self)

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def sqrt(self) -> "Tensor":
        return Sqrt.apply(self)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def clamp(self, low: Optional[float] = None, high: Optional[float] = None) -> "Tensor":
        return Clamp.apply(self, low=low, high=high)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, np.ndarray) and value.dtype.kind == "f":
        return Tensor(value)
    # Python scalars follow the default dtype so they never promote float32 math
    return Tensor(np.asarray(value, dtype=_DEFAULT_DTYPE))


def parameter(data: ArrayLike) -> Tensor:
    """Leaf tensor that takes part in gradient computation"""
    return Tensor(np.array(data, dtype=get_default_dtype()), requires_grad=True)


# ============================================================================
# ELEMENTWISE OPS
# ============================================================================

class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x + y

    def backward(self, grad: np.ndarray):
        return grad, grad


class Sub(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x - y

    def backward(self, grad: np.ndarray):
        return grad, -grad


class Mul(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x, self.y = x, y
        return x * y

    def backward(self, grad: np.ndarray):
        grad_x = grad * self.y if self.needs_grad(0) else None
        grad_y = grad * self.x if self.needs_grad(1) else None
        return grad_x, grad_y


class Div(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.x, self.y = x, y
        return x / y

    def backward(self, grad: np.ndarray):
        grad_x = grad / self.y if self.needs_grad(0) else None
        grad_y = -grad * self.x / (self.y * self.y) if self.needs_grad(1) else None
        return grad_x, grad_y


class Neg(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return -x

    def backward(self, grad: np.ndarray):
        return (-grad,)


class Pow(Function):
    def forward(self, x: np.ndarray, exponent: float) -> np.ndarray:
        self.x, self.exponent = x, exponent
        return np.power(x, exponent)

    def backward(self, grad: np.ndarray):
        return (grad * self.exponent * np.power(self.x, self.exponent - 1),)


class Abs(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad: np.ndarray):
        return (grad * self.sign,)


class Exp(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return np.log(x)

    def backward(self, grad: np.ndarray):
        return (grad / self.x,)


class Sqrt(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.sqrt(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * 0.5 / self.out,)


class Clamp(Function):
    """Clip to [low, high]; gradient is zero where the bound is active"""

    def forward(self, x: np.ndarray, low: Optional[float], high: Optional[float]) -> np.ndarray:
        self.mask = np.ones(x.shape, dtype=bool)
        if low is not None:
            self.mask &= x >= low
        if high is not None:
            self.mask &= x <= high
        return np.clip(x, low, high)

    def backward(self, grad: np.ndarray):
        return (grad * self.mask,)


# ============================================================================
# REDUCTIONS AND MOVEMENT
# ============================================================================

class Sum(Function):
    def forward(self, x: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray):
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            axes = tuple(a % len(self.in_shape) for a in axes)
            grad = np.expand_dims(grad, tuple(sorted(axes)))
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Function):
    def forward(self, x: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        out = np.asarray(x.mean(axis=axis, keepdims=keepdims))
        self.count = x.size // max(out.size, 1)
        return out

    def backward(self, grad: np.ndarray):
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            axes = tuple(a % len(self.in_shape) for a in axes)
            grad = np.expand_dims(grad, tuple(sorted(axes)))
        return (np.broadcast_to(grad / self.count, self.in_shape).copy(),)


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise DimensionError(f"Cannot reshape {x.shape} to {shape}") from e

    def backward(self, grad: np.ndarray):
        return (grad.reshape(self.in_shape),)


class GetItem(Function):
    def forward(self, x: np.ndarray, index: Any) -> np.ndarray:
        self.in_shape, self.index = x.shape, index
        return np.array(x[index])

    def backward(self, grad: np.ndarray):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        parts = self.index if isinstance(self.index, tuple) else (self.index,)
        if all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts):
            out[self.index] += grad
        else:
            np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def concat(tensors: List[Tensor], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def split(tensor: Tensor, sizes: Sequence[int], axis: int = 1) -> List[Tensor]:
    """Consecutive slices of `sizes` along axis; the sizes must cover it exactly"""
    if sum(sizes) != tensor.shape[axis]:
        raise DimensionError(f"Split sizes {list(sizes)} do not cover extent {tensor.shape[axis]}")
    parts, start = [], 0
    for size in sizes:
        index = [slice(None)] * tensor.ndim
        index[axis] = slice(start, start + size)
        parts.append(tensor[tuple(index)])
        start += size
    return parts
