#!/usr/bin/env python3
"""
Synthetic labeled textures for desk-scale training.
"The doctor said I wouldn't have so many nose bleeds if I kept my finger outta there." - Ralph Wiggum

Each image has a randomized smooth background and one rectangular patch of a
class-specific texture (stripes, checks or dots at a class-specific period,
orientation and hue). The patch covers at least 36% of the image.
"""

import colorsys
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Sequence

import numpy as np

from errors import ParameterError, UnknownTaskError
from models import KNOWN_TASKS

logger = logging.getLogger(__name__)

FAMILIES = ("stripes", "checks", "dots")
PATCH_MIN_SIDE = 0.6
NOISE_STD = 0.02


@dataclass(frozen=True)
class TextureSpec:
    family: str
    period: int
    angle: float
    hue: float


@dataclass
class SyntheticSample:
    image: np.ndarray  # 3 x H x W float32 in [0, 1]
    label: int
    family: int
    texture_fraction: float

    def target(self, task: str) -> int:
        if task == "class":
            return self.label
        if task == "family":
            return self.family
        raise UnknownTaskError(f"Unknown task '{task}'. Available: {list(KNOWN_TASKS)}")


def class_texture(label: int, num_classes: int) -> TextureSpec:
    """The texture that identifies class `label`"""
    return TextureSpec(
        family=FAMILIES[label % len(FAMILIES)],
        period=4 + 2 * ((label // len(FAMILIES)) % 3),
        angle=math.pi * ((label * 3) % 8) / 8.0,
        hue=label / num_classes,
    )


def _pattern(spec: TextureSpec, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cos, sin = math.cos(spec.angle), math.sin(spec.angle)
    p = float(spec.period)
    u = xs * cos + ys * sin + rng.uniform(0, p)
    v = -xs * sin + ys * cos + rng.uniform(0, p)
    half = p / 2.0
    if spec.family == "stripes":
        return np.floor(u / half) % 2 == 0
    if spec.family == "checks":
        return (np.floor(u / half) + np.floor(v / half)) % 2 == 0
    du = np.mod(u, p) - half
    dv = np.mod(v, p) - half
    return du * du + dv * dv < (0.3 * p) ** 2


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.2, 0.8, size=(3, 1, 1))
    angle = rng.uniform(0, 2 * math.pi)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    ramp = (xs * math.cos(angle) + ys * math.sin(angle))[None]
    return base + rng.uniform(-0.2, 0.2, size=(3, 1, 1)) * ramp


def make_sample(label: int, num_classes: int, size: int, rng: np.random.Generator) -> SyntheticSample:
    spec = class_texture(label, num_classes)
    image = _background(size, rng)

    min_side = int(math.ceil(PATCH_MIN_SIDE * size))
    ph, pw = (int(rng.integers(min_side, size + 1)) for _ in range(2))
    top, left = int(rng.integers(0, size - ph + 1)), int(rng.integers(0, size - pw + 1))

    hue = (spec.hue + rng.uniform(-0.03, 0.03)) % 1.0
    light = np.array(colorsys.hsv_to_rgb(hue, 0.8, 0.9)).reshape(3, 1, 1)
    dark = 0.35 * light
    mask = _pattern(spec, ph, pw, rng)[None]
    image[:, top:top + ph, left:left + pw] = np.where(mask, light, dark)

    image += rng.normal(0.0, NOISE_STD, size=image.shape)
    return SyntheticSample(
        image=np.clip(image, 0.0, 1.0).astype(np.float32),
        label=label,
        family=FAMILIES.index(spec.family),
        texture_fraction=ph * pw / float(size * size),
    )


def make_synthetic_dataset(seed: int, num_classes: int, n: int, size: int) -> List[SyntheticSample]:
    """
    n labeled images, balanced over num_classes and shuffled; identical for
    identical arguments.
    """
    if num_classes < 2:
        raise ParameterError(f"Need at least 2 classes, got {num_classes}")
    if size < 4:
        raise ParameterError(f"Image size {size} is too small for a texture")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    samples = [make_sample(int(label), num_classes, size, rng) for label in labels]
    logger.debug(f"Generated {n} synthetic {size}x{size} samples over {num_classes} classes (seed {seed})")
    return samples


def stack_images(samples: Sequence[SyntheticSample]) -> np.ndarray:
    """N x 3 x H x W"""
    return np.stack([s.image for s in samples]).astype(np.float32)


def stack_targets(samples: Sequence[SyntheticSample], tasks: Sequence[str]) -> Dict[str, np.ndarray]:
    return {task: np.array([s.target(task) for s in samples], dtype=np.int64) for task in tasks}


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """A fresh shuffled partition of range(n) into batches (the last may be short)"""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
