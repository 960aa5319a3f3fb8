#!/usr/bin/env python3
"""
Image files for the CLI: binary PPM (P6) natively, PNG through Pillow.

Images travel through the codec as float32 H x W x 3 arrays in [0, 1].
"""

import hashlib
import logging
import re
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from errors import ImageFormatError

logger = logging.getLogger(__name__)

_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit, rounding to nearest"""
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float32) / 255.0


def decode_ppm(data: bytes) -> np.ndarray:
    """Parse a P6 file into H x W x 3 uint8 (8-bit) pixels"""
    pos = 0
    tokens = []
    for _ in range(4):
        match = _PPM_TOKEN.match(data, pos)
        if not match:
            raise ImageFormatError("Truncated PPM header")
        tokens.append(match.group(1))
        pos = match.end()
    if tokens[0] != b"P6":
        raise ImageFormatError(f"Only binary PPM (P6) is supported, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise ImageFormatError(f"Malformed PPM header: {e}") from e
    if width <= 0 or height <= 0 or not 0 < maxval < 256:
        raise ImageFormatError(f"Unsupported PPM geometry {width}x{height}, maxval {maxval}")

    # exactly one whitespace byte separates the header from the raster
    pos += 1
    size = width * height * 3
    raster = data[pos:pos + size]
    if len(raster) != size:
        raise ImageFormatError(f"PPM raster holds {len(raster)} bytes, expected {size}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    if maxval != 255:
        pixels = np.floor(pixels.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    return pixels


def encode_ppm(pixels: np.ndarray) -> bytes:
    height, width = pixels.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Load a .ppm or .png as float32 H x W x 3 in [0, 1]"""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        pixels = decode_ppm(path.read_bytes())
    elif suffix == ".png":
        try:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (OSError, ValueError) as e:
            raise ImageFormatError(f"Cannot decode PNG {path}: {e}") from e
    else:
        raise ImageFormatError(f"Unsupported image type: {path.suffix}")
    logger.debug(f"Read {path} ({pixels.shape[1]}x{pixels.shape[0]})")
    return from_uint8(pixels)


def write_image(path: Union[str, Path], image: np.ndarray) -> None:
    path = Path(path)
    pixels = to_uint8(image)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        path.write_bytes(encode_ppm(pixels))
    elif suffix == ".png":
        Image.fromarray(pixels).save(path, format="PNG")
    else:
        raise ImageFormatError(f"Unsupported image type: {path.suffix}")
    logger.debug(f"Wrote {path}")


def image_hash(image: np.ndarray) -> str:
    """SHA-256 over the 8-bit pixels and their shape"""
    pixels = to_uint8(image)
    h = hashlib.sha256(f"{pixels.shape}".encode("ascii"))
    h.update(pixels.tobytes())
    return h.hexdigest()
