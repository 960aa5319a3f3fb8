#!/usr/bin/env python3
"""
Compression networks: encoder, image decoder, hyper-encoder, hyper-decoder.
"I'm learnding!" - Ralph Wiggum

    encoder        Conv 5k/2s -> GDN -> Conv -> GDN -> Conv -> GDN -> Conv (C_z)
    image decoder  TConv 5k/2s -> IGDN -> TConv -> IGDN -> TConv -> IGDN -> TConv (3)
    hyper-encoder  Abs -> Conv 3k/2s -> LeakyReLU -> Conv 5k/2s -> LeakyReLU -> Conv 5k/2s
    hyper-decoder  TConv 5k/2s -> LeakyReLU -> TConv -> LeakyReLU -> TConv (2 * C_z)

The latent is 16x smaller than the image on each side. The hyper-decoder
output is cropped to the latent extent and split into [mu || raw sigma].
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

import functional as F
from entropy_model import GaussianParams, SeedLike, as_generator, quantize_noise, quantize_round
from errors import DimensionError, WeightFormatError
from gdn import GDN
from layers import Activation, Conv2d, ConvTranspose2d, Module, Sequential
from models import CodecConfig
from tensor import Tensor, get_default_dtype, split
from weights import deserialize_weights, digest, serialize_weights

logger = logging.getLogger(__name__)

LOG_SIGMA_MAX = 10.0
_HYPER_ACTIVATIONS = ("leaky_relu", "relu")


@dataclass
class CodecOutput:
    """One forward pass: latents, their quantized stand-ins, entropy parameters and the reconstruction"""
    x_hat: Tensor
    z: Tensor
    w: Tensor
    z_tilde: Tensor
    w_tilde: Tensor
    latent_params: GaussianParams
    hyper_params: GaussianParams


class ChannelPrior(Module):
    """Learned per-channel Gaussian (mu_c, sigma_c) for the hyper-latent"""

    def __init__(self, channels: int, sigma_min: float):
        super().__init__()
        dtype = get_default_dtype()
        self.sigma_min = sigma_min
        self.mu = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.log_sigma = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def forward(self, shape: Tuple[int, ...]) -> GaussianParams:
        c = self.mu.shape[0]
        if len(shape) != 4 or shape[1] != c:
            raise DimensionError(f"Channel prior over {c} channels cannot model shape {shape}")
        zeros = Tensor(np.zeros(shape, dtype=self.mu.dtype))
        mu = self.mu.reshape(1, c, 1, 1) + zeros
        sigma = sigma_map(self.log_sigma.reshape(1, c, 1, 1), self.sigma_min) + zeros
        return GaussianParams(mu=mu, sigma=sigma)


def sigma_map(raw: Tensor, sigma_min: float) -> Tensor:
    """sigma = max(exp(raw), sigma_min); raw is capped so exp stays finite"""
    return raw.clamp(high=LOG_SIGMA_MAX).exp().clamp(low=sigma_min)


class CodecModel(Module):
    def __init__(self, config: Optional[CodecConfig] = None, seed: int = 0):
        super().__init__()
        self.config = config or CodecConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        n, cz, ch = cfg.inner_channels, cfg.latent_channels, cfg.hyper_channels

        self.encoder = Sequential(
            Conv2d(3, n, 5, stride=2, rng=rng), GDN(n),
            Conv2d(n, n, 5, stride=2, rng=rng), GDN(n),
            Conv2d(n, n, 5, stride=2, rng=rng), GDN(n),
            Conv2d(n, cz, 5, stride=2, rng=rng),
        )
        self.image_decoder = Sequential(
            ConvTranspose2d(cz, n, 5, stride=2, rng=rng), GDN(n, inverse=True),
            ConvTranspose2d(n, n, 5, stride=2, rng=rng), GDN(n, inverse=True),
            ConvTranspose2d(n, n, 5, stride=2, rng=rng), GDN(n, inverse=True),
            ConvTranspose2d(n, 3, 5, stride=2, rng=rng),
        )
        act = cfg.hyper_activation
        self.hyper_encoder = Sequential(
            Conv2d(cz, ch, 3, stride=2, rng=rng), Activation(act),
            Conv2d(ch, ch, 5, stride=2, rng=rng), Activation(act),
            Conv2d(ch, ch, 5, stride=2, rng=rng),
        )
        w0, w1, w2 = cfg.hyper_decoder_widths
        self.hyper_decoder = Sequential(
            ConvTranspose2d(ch, w0, 5, stride=2, rng=rng), Activation(act),
            ConvTranspose2d(w0, w1, 5, stride=2, rng=rng), Activation(act),
            ConvTranspose2d(w1, w2, 5, stride=2, rng=rng),
        )
        self.channel_prior = ChannelPrior(ch, cfg.sigma_min)

    def forward(self, x: Tensor, rng: SeedLike = None) -> CodecOutput:
        """
        Full training-time pass. With an rng both latents get uniform noise;
        with rng=None they are rounded (evaluation).
        """
        generator = as_generator(rng) if rng is not None else None

        z = encode_latent(x, self)
        w = hyper_analysis(z, self)
        w_tilde = _quantize(w, generator)
        latent_params = hyper_synthesis(w_tilde, self, z.shape[2:])
        z_tilde = _quantize(z, generator)
        x_hat = decode_image(z_tilde, self)
        return CodecOutput(
            x_hat=x_hat, z=z, w=w, z_tilde=z_tilde, w_tilde=w_tilde,
            latent_params=latent_params, hyper_params=self.channel_prior(w.shape),
        )


def _quantize(t: Tensor, generator: Optional[np.random.Generator]) -> Tensor:
    if generator is None:
        return quantize_round(t).as_tensor()
    return quantize_noise(t, generator)


# ============================================================================
# THE FOUR TRANSFORMS
# ============================================================================

def encode_latent(x: Tensor, m: CodecModel) -> Tensor:
    """z = f(x); x is N x 3 x H x W with H, W multiples of 16"""
    factor = m.config.downsample_factor
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"Encoder expects N x 3 x H x W images, got {x.shape}")
    if x.shape[2] % factor or x.shape[3] % factor:
        raise DimensionError(f"Image extent {x.shape[2:]} is not a multiple of {factor}; pad first")
    return m.encoder(x)


def decode_image(z_hat: Tensor, m: CodecModel) -> Tensor:
    """x_hat = g(z_hat), unclamped"""
    if z_hat.ndim != 4 or z_hat.shape[1] != m.config.latent_channels:
        raise DimensionError(
            f"Image decoder expects N x {m.config.latent_channels} x h x w latents, got {z_hat.shape}"
        )
    return m.image_decoder(z_hat)


def hyper_analysis(z: Tensor, m: CodecModel) -> Tensor:
    return m.hyper_encoder(z.abs())


def hyper_synthesis(w_hat: Tensor, m: CodecModel, latent_hw: Tuple[int, int]) -> GaussianParams:
    """Decode the hyper-latent into per-element (mu, sigma) over a latent of extent latent_hw"""
    cz = m.config.latent_channels
    if w_hat.ndim != 4 or w_hat.shape[1] != m.config.hyper_channels:
        raise DimensionError(f"Hyper-decoder expects {m.config.hyper_channels} channels, got {w_hat.shape}")
    out = F.crop(m.hyper_decoder(w_hat), latent_hw[0], latent_hw[1])
    mu, raw_sigma = split(out, [cz, out.shape[1] - cz], axis=1)
    sigma = sigma_map(raw_sigma, m.config.sigma_min)
    return GaussianParams(mu=mu, sigma=sigma)


def hyper_forward(z: Tensor, m: CodecModel, rng: SeedLike = None) -> Tuple[Tensor, GaussianParams]:
    """w = hyper_encoder(|z|), then (mu, sigma) from the quantized w"""
    w = hyper_analysis(z, m)
    generator = as_generator(rng) if rng is not None else None
    return w, hyper_synthesis(_quantize(w, generator), m, z.shape[2:])


# ============================================================================
# WEIGHT FILES
# ============================================================================

_META_FIELDS = ("latent_channels", "inner_channels", "hyper_channels", "sigma_min", "precision", "tail_mass", "t_max")


def codec_sections(model: CodecModel) -> Dict[str, Dict[str, np.ndarray]]:
    cfg = model.config
    meta = {name: np.array([getattr(cfg, name)], dtype=np.float32) for name in _META_FIELDS}
    meta["hyper_activation"] = np.array([_HYPER_ACTIVATIONS.index(cfg.hyper_activation)], dtype=np.float32)
    return {"codec": model.state_dict(), "meta": meta}


def model_digest(model: CodecModel) -> bytes:
    """16-byte identity of the model, equal to the digest of its saved weight file"""
    return digest(serialize_weights(codec_sections(model)))


def save_codec(path: Union[str, Path], model: CodecModel) -> bytes:
    data = serialize_weights(codec_sections(model))
    Path(path).write_bytes(data)
    logger.info(f"💾 Saved codec ({model.parameter_count()} parameters) to {path}")
    return digest(data)


def codec_from_bytes(data: bytes) -> Tuple[CodecModel, bytes]:
    sections = deserialize_weights(data)
    if "codec" not in sections or "meta" not in sections:
        raise WeightFormatError("Weight file lacks the codec or meta section")
    meta = {name: float(value.reshape(-1)[0]) for name, value in sections["meta"].items()}
    try:
        config = CodecConfig(
            latent_channels=int(meta["latent_channels"]),
            hidden_channels=int(meta["inner_channels"]),
            hyper_channels=int(meta["hyper_channels"]),
            hyper_activation=_HYPER_ACTIVATIONS[int(meta["hyper_activation"])],
            sigma_min=meta["sigma_min"],
            precision=int(meta["precision"]),
            tail_mass=meta["tail_mass"],
            t_max=int(meta["t_max"]),
        )
    except (KeyError, IndexError, ValueError) as e:
        raise WeightFormatError(f"Weight file meta section is invalid: {e}") from e
    model = CodecModel(config)
    model.load_state_dict(sections["codec"])
    model.eval()
    return model, digest(data)


def load_codec(path: Union[str, Path]) -> Tuple[CodecModel, bytes]:
    """Load a codec and the digest of its file"""
    model, model_id = codec_from_bytes(Path(path).read_bytes())
    logger.info(f"📦 Loaded codec from {path} (id {model_id.hex()})")
    return model, model_id
