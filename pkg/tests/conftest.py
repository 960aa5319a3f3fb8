#!/usr/bin/env python3
"""
Pytest Configuration
"What's a battle?" - Ralph Wiggum
"""

import hashlib
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pytest

# Add src to path for all tests
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tensor import Tensor

GOLDEN_DIR = Path(__file__).parent / "golden"


def pytest_configure(config):
    """Configure pytest with custom markers - I'm learnding!"""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "e2e: marks tests as end-to-end tests"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )


# ============================================================================
# FINITE DIFFERENCES
# ============================================================================

def numerical_grad(
    fn: Callable[[], float],
    array: np.ndarray,
    eps: float = 1e-6,
    indices: Optional[Sequence[tuple]] = None,
) -> np.ndarray:
    """
    Central differences of fn() with respect to `array`, perturbed in place.

    With `indices` only those entries are perturbed; the rest of the result is 0.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    points = indices if indices is not None else list(np.ndindex(array.shape))
    for idx in points:
        original = array[idx]
        array[idx] = original + eps
        plus = fn()
        array[idx] = original - eps
        minus = fn()
        array[idx] = original
        grad[idx] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = np.linalg.norm(np.ravel(analytic)) + np.linalg.norm(np.ravel(numeric))
    return float(diff / max(scale, 1e-12))


def assert_grad_close(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    tol: float = 1e-4,
    eps: float = 1e-6,
    samples: Optional[int] = None,
    seed: int = 0,
) -> None:
    """
    Compare backward() against central differences for every tensor in
    `tensors` (float64 expected). With `samples`, only that many random
    entries per tensor are checked.
    """
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    loss.backward()

    rng = np.random.default_rng(seed)
    for i, t in enumerate(tensors):
        assert t.grad is not None, f"tensor {i} received no gradient"
        indices = None
        if samples is not None and t.size > samples:
            flat = rng.choice(t.size, size=samples, replace=False)
            indices = [np.unravel_index(j, t.shape) for j in flat]
        numeric = numerical_grad(lambda: loss_fn().item(), t.data, eps=eps, indices=indices)
        analytic = t.grad
        if indices is not None:
            analytic = np.array([analytic[idx] for idx in indices])
            numeric = np.array([numeric[idx] for idx in indices])
        err = relative_error(analytic, numeric)
        assert err < tol, f"tensor {i} {t.shape}: relative gradient error {err:.3e}"


@pytest.fixture
def grad_check():
    return assert_grad_close


# ============================================================================
# GOLDEN FIXTURES
# ============================================================================

def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def golden(name: str, actual: Union[str, bytes]) -> None:
    """
    Compare `actual` (bytes are compared by SHA-256) with tests/golden/<name>;
    the first run records it.

    Delete the file to re-record after an intentional format change.
    """
    if isinstance(actual, bytes):
        actual = sha256_hex(actual)
    path = GOLDEN_DIR / name
    if not path.exists():
        GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
        path.write_text(actual + "\n", encoding="utf-8")
        return
    expected = path.read_text(encoding="utf-8").strip()
    assert actual == expected, f"golden {name} changed: {actual} != {expected}"


@pytest.fixture
def golden_check():
    return golden


@pytest.fixture
def finite_diff():
    return numerical_grad


# ============================================================================
# SHARED FIXTURES
# ============================================================================

@pytest.fixture
def tiny_config():
    from models import create_train_config
    return create_train_config("tiny")


@pytest.fixture
def tiny_model(tiny_config):
    from codec_net import CodecModel
    model = CodecModel(tiny_config.codec, seed=0)
    model.eval()
    return model


@pytest.fixture
def smooth_image():
    """A 20 x 24 RGB test image with gradients and a bright square"""
    ys, xs = np.mgrid[0:20, 0:24] / 24.0
    image = np.stack([xs, ys, 0.5 * (xs + ys)], axis=-1)
    image[5:12, 8:16] = [0.9, 0.2, 0.1]
    return image.astype(np.float32)


@pytest.fixture
def ralph_quote():
    """Get a random Ralph Wiggum quote - My cat's breath smells like cat food!"""
    import random
    quotes = [
        "I'm learnding!",
        "Me fail English? That's unpossible!",
        "My cat's breath smells like cat food.",
        "I bent my Wookie.",
        "Hi, Super Nintendo Chalmers!",
        "I choo-choo-choose you!",
        "It tastes like burning!",
        "Sleep! That's where I'm a Viking!",
        "Go banana!",
        "When I grow up I want to be a principal or a caterpillar!",
        "I'm Idaho!",
        "I dressed myself!",
        "I found a moon rock in my nose!",
        "My parents won't let me use scissors!",
        "Miss Hoover, I glued my head to my shoulder!",
        "What's a battle?",
        "I eated the purple berries!",
    ]
    return random.choice(quotes)


def pytest_report_header(config):
    """Add Ralph Wiggum header to test output"""
    return [
        "",
        "🗜️ NZip Test Suite",
        "━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━",
        '"I\'m learnding!" - Ralph Wiggum',
        "",
    ]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Add Ralph Wiggum footer to test output"""
    import random
    quotes = [
        "That's unpossible!",
        "I bent my Wookie testing this!",
        "It tastes like burning!",
        "Go banana!",
        "I'm a unitard!",
    ]

    if exitstatus == 0:
        terminalreporter.write_line("")
        terminalreporter.write_line("✅ All tests passed! \"I'm learnding!\" - Ralph", green=True)
    else:
        terminalreporter.write_line("")
        terminalreporter.write_line(f"❌ Some tests failed! \"{random.choice(quotes)}\" - Ralph", red=True)
