#!/usr/bin/env python3
"""
The .nzip container and the compress / decompress / extract_latent pipeline.
"My cat's breath smells like cat food." - Ralph Wiggum

Container layout (little-endian):

    magic "NZIP" | version u16 | orig_w, orig_h u32 | padded_w, padded_h u32
    | latent C, h, w u32 | hyper C, h, w u32 | model_id 16 bytes
    | hyper_len u32 + hyper payload | latent_len u32 + latent payload

The hyper-latent is coded first under the learned channel prior; the decoder
rebuilds the latent tables from it, so both sides derive identical tables.
"""

import logging
import math
import struct
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from codec_net import CodecModel, decode_image, encode_latent, hyper_analysis, hyper_synthesis, model_digest
from entropy_model import (
    CdfTable,
    GaussianParams,
    QuantizedLatent,
    build_cdf_tables,
    clamp_to_tables,
    hyper_rate_bits,
    quantize_round,
    rate_bits,
    table_rate_bits,
)
from errors import ContainerFormatError, ContractError, DigestMismatchError, VersionMismatchError
from range_coder import decode_symbols, encode_symbols
from tensor import Tensor, get_default_dtype, no_grad

logger = logging.getLogger(__name__)

MAGIC = b"NZIP"
VERSION = 1
PAD_MULTIPLE = 16
MAX_PIXELS = 1 << 28
_HEADER = struct.Struct("<4sH10I16s")
_LENGTH = struct.Struct("<I")


@dataclass
class CompressedImage:
    orig_w: int
    orig_h: int
    padded_w: int
    padded_h: int
    latent_dims: Tuple[int, int, int]
    hyper_dims: Tuple[int, int, int]
    model_id: bytes
    hyper_payload: bytes
    latent_payload: bytes
    version: int = VERSION

    @property
    def payload_bytes(self) -> int:
        return len(self.hyper_payload) + len(self.latent_payload)

    @property
    def bpp(self) -> float:
        """Bits per original pixel over both payloads"""
        return 8.0 * self.payload_bytes / (self.orig_w * self.orig_h)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MAGIC, self.version,
            self.orig_w, self.orig_h, self.padded_w, self.padded_h,
            *self.latent_dims, *self.hyper_dims,
            self.model_id,
        )
        return b"".join([
            header,
            _LENGTH.pack(len(self.hyper_payload)), self.hyper_payload,
            _LENGTH.pack(len(self.latent_payload)), self.latent_payload,
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedImage":
        if len(data) < 4 or data[:4] != MAGIC:
            raise ContainerFormatError("Not an .nzip file (bad magic)")
        if len(data) < _HEADER.size:
            raise ContainerFormatError(f"Header needs {_HEADER.size} bytes, file has {len(data)}")
        fields = _HEADER.unpack_from(data, 0)
        version = fields[1]
        if version != VERSION:
            raise VersionMismatchError(f"Container version {version}, expected {VERSION}")
        orig_w, orig_h, padded_w, padded_h = fields[2:6]
        latent_dims = tuple(fields[6:9])
        hyper_dims = tuple(fields[9:12])
        model_id = fields[12]

        offset = _HEADER.size
        payloads = []
        for name in ("hyper", "latent"):
            if offset + _LENGTH.size > len(data):
                raise ContainerFormatError(f"Missing {name} payload length")
            (length,) = _LENGTH.unpack_from(data, offset)
            offset += _LENGTH.size
            if offset + length > len(data):
                raise ContainerFormatError(f"{name} payload claims {length} bytes, {len(data) - offset} remain")
            payloads.append(data[offset:offset + length])
            offset += length
        if offset != len(data):
            raise ContainerFormatError(f"{len(data) - offset} trailing bytes after the latent payload")

        image = cls(
            orig_w=orig_w, orig_h=orig_h, padded_w=padded_w, padded_h=padded_h,
            latent_dims=latent_dims, hyper_dims=hyper_dims, model_id=model_id,
            hyper_payload=payloads[0], latent_payload=payloads[1], version=version,
        )
        image.validate()
        return image

    def validate(self) -> None:
        for orig, padded in ((self.orig_w, self.padded_w), (self.orig_h, self.padded_h)):
            if orig <= 0 or padded % PAD_MULTIPLE or not orig <= padded < orig + PAD_MULTIPLE:
                raise ContainerFormatError(f"Inconsistent extents: original {orig}, padded {padded}")
        if self.padded_w * self.padded_h > MAX_PIXELS:
            raise ContainerFormatError(f"Image of {self.padded_w}x{self.padded_h} exceeds the size limit")
        c, h, w = self.latent_dims
        if c == 0 or h != self.padded_h // PAD_MULTIPLE or w != self.padded_w // PAD_MULTIPLE:
            raise ContainerFormatError(f"Latent dims {self.latent_dims} disagree with the padded extent")
        hc, hh, hw = self.hyper_dims
        if hc == 0 or hh != math.ceil(h / 8) or hw != math.ceil(w / 8):
            raise ContainerFormatError(f"Hyper dims {self.hyper_dims} disagree with the latent dims")


@dataclass
class CompressionStats:
    bpp: float
    payload_bits: int
    estimated_bits: float
    table_bits: float
    clamped: int
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "bpp": self.bpp,
            "payload_bits": self.payload_bits,
            "estimated_bits": self.estimated_bits,
            "table_bits": self.table_bits,
            "clamped": self.clamped,
            "wall_time": self.wall_time,
        }


# ============================================================================
# PIPELINE
# ============================================================================

def pad_image(image: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Edge-replicate bottom and right so both extents are multiples of `multiple`"""
    h, w = image.shape[:2]
    pad_h, pad_w = (-h) % multiple, (-w) % multiple
    if not pad_h and not pad_w:
        return image
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")


def _tables(params: GaussianParams, model: CodecModel) -> CdfTable:
    cfg = model.config
    return build_cdf_tables(params, precision=cfg.precision, tail_mass=cfg.tail_mass, t_max=cfg.t_max)


def _symbols_tensor(symbols: np.ndarray, shape: Tuple[int, ...]) -> Tensor:
    return Tensor(symbols.reshape(shape).astype(get_default_dtype()))


def compress(
    image: np.ndarray, model: CodecModel, model_id: Optional[bytes] = None
) -> Tuple[CompressedImage, CompressionStats]:
    """Code an H x W x 3 image in [0, 1] into a CompressedImage"""
    start = time.perf_counter()
    image = np.asarray(image, dtype=get_default_dtype())
    if image.ndim != 3 or image.shape[2] != 3 or min(image.shape[:2]) == 0:
        raise ContractError(f"compress expects an H x W x 3 image, got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ContractError("Image contains non-finite values")
    model_id = model_id if model_id is not None else model_digest(model)
    orig_h, orig_w = image.shape[:2]
    padded = pad_image(image)
    x = Tensor(np.ascontiguousarray(padded.transpose(2, 0, 1)[None]))

    with no_grad():
        z = encode_latent(x, model)
        w = hyper_analysis(z, model)

        w_q = quantize_round(w)
        hyper_params = model.channel_prior(w.shape)
        hyper_tables = _tables(hyper_params, model)
        w_sym, w_clamped = clamp_to_tables(w_q.values, hyper_tables)
        hyper_payload = encode_symbols(w_sym, hyper_tables)

        latent_params = hyper_synthesis(_symbols_tensor(w_sym, w.shape), model, z.shape[2:])
        latent_tables = _tables(latent_params, model)
        z_q = quantize_round(z)
        z_sym, z_clamped = clamp_to_tables(z_q.values, latent_tables)
        latent_payload = encode_symbols(z_sym, latent_tables)

        estimated = rate_bits(z_q.as_tensor(), latent_params).item() + hyper_rate_bits(w_q.as_tensor(), hyper_params).item()
        table_bits = table_rate_bits(z_sym, latent_tables) + table_rate_bits(w_sym, hyper_tables)

    compressed = CompressedImage(
        orig_w=orig_w, orig_h=orig_h,
        padded_w=padded.shape[1], padded_h=padded.shape[0],
        latent_dims=tuple(z.shape[1:]), hyper_dims=tuple(w.shape[1:]),
        model_id=model_id, hyper_payload=hyper_payload, latent_payload=latent_payload,
    )
    stats = CompressionStats(
        bpp=compressed.bpp,
        payload_bits=8 * compressed.payload_bytes,
        estimated_bits=float(estimated),
        table_bits=table_bits,
        clamped=w_clamped + z_clamped,
        wall_time=time.perf_counter() - start,
    )
    if stats.clamped:
        logger.warning(f"⚠️ {stats.clamped} latent elements fell outside their symbol windows and were clamped")
    logger.debug(
        f"Compressed {orig_w}x{orig_h}: hyper {len(hyper_payload)} B, latent {len(latent_payload)} B, "
        f"{stats.bpp:.4f} bpp"
    )
    return compressed, stats


def decode_latents(
    compressed: CompressedImage, model: CodecModel, model_id: Optional[bytes] = None
) -> Tuple[QuantizedLatent, QuantizedLatent]:
    """Recover (z_hat, w_hat) from the payloads without running the image decoder"""
    model_id = model_id if model_id is not None else model_digest(model)
    if compressed.model_id != model_id:
        raise DigestMismatchError(
            f"File was written by model {compressed.model_id.hex()}, loaded model is {model_id.hex()}"
        )
    cfg = model.config
    if compressed.latent_dims[0] != cfg.latent_channels or compressed.hyper_dims[0] != cfg.hyper_channels:
        raise ContainerFormatError("Channel counts in the header do not match the model")

    latent_shape = (1, *compressed.latent_dims)
    hyper_shape = (1, *compressed.hyper_dims)
    with no_grad():
        hyper_tables = _tables(model.channel_prior(hyper_shape), model)
        w_sym = decode_symbols(compressed.hyper_payload, hyper_tables, len(hyper_tables))
        latent_params = hyper_synthesis(_symbols_tensor(w_sym, hyper_shape), model, latent_shape[2:])
        latent_tables = _tables(latent_params, model)
        z_sym = decode_symbols(compressed.latent_payload, latent_tables, len(latent_tables))

    return (
        QuantizedLatent(values=z_sym.reshape(latent_shape).astype(np.int32)),
        QuantizedLatent(values=w_sym.reshape(hyper_shape).astype(np.int32)),
    )


def extract_latent(
    compressed: CompressedImage, model: CodecModel, model_id: Optional[bytes] = None
) -> QuantizedLatent:
    """z_hat for task heads, skipping image reconstruction"""
    z_hat, _ = decode_latents(compressed, model, model_id)
    return z_hat


def decompress(compressed: CompressedImage, model: CodecModel, model_id: Optional[bytes] = None) -> np.ndarray:
    """Reconstruct the H x W x 3 image in [0, 1]"""
    z_hat, _ = decode_latents(compressed, model, model_id)
    with no_grad():
        x_hat = decode_image(z_hat.as_tensor(), model).numpy()
    image = x_hat[0].transpose(1, 2, 0)[:compressed.orig_h, :compressed.orig_w]
    return np.clip(image, 0.0, 1.0).astype(np.float32)
