#!/usr/bin/env python3
"""
Classifiers that read the compressed latent directly.
"Go banana!" - Ralph Wiggum

    subpixel stem   conv+BN+act -> shuffle(2) -> conv+BN+act -> shuffle(2) -> conv+BN+act
                    (or one x4 shuffle), plus an optional residual 3x3 path
    truncated stem  1x1 conv lifting C_z to the trunk width
    trunk           residual blocks -> global average pool -> linear
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

import functional as F
from codec_net import CodecModel, encode_latent, model_digest
from dataset import SyntheticSample, batch_indices, stack_images, stack_targets
from entropy_model import QuantizedLatent, quantize_round
from errors import ContractError, DimensionError, FrozenParameterError, WeightFormatError
from layers import Activation, BatchNorm2d, Conv2d, Linear, Module, Sequential
from losses import accuracy
from models import HeadConfig, StemConfig
from optim import Adam
from tensor import Tensor, as_tensor, get_default_dtype, no_grad
from weights import deserialize_weights, save_weights

logger = logging.getLogger(__name__)

_ACTIVATIONS = ("relu", "mish", "silu")
_VARIANTS = ("subpixel", "truncated")


def conv_bn_act(in_channels: int, out_channels: int, kind: str, rng: np.random.Generator) -> Sequential:
    return Sequential(Conv2d(in_channels, out_channels, 3, rng=rng), BatchNorm2d(out_channels), Activation(kind))


class PixelShuffle(Module):
    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    def forward(self, x: Tensor) -> Tensor:
        return F.pixel_shuffle(x, self.factor)


class SubpixelStem(Module):
    """Lifts an h x w latent to 4h x 4w features without transposed convolutions"""

    def __init__(self, in_channels: int, width: int, cfg: StemConfig, rng: np.random.Generator):
        super().__init__()
        self.in_channels, self.width = in_channels, width
        act = cfg.activation
        if cfg.pixel_shuffle_blocks == 2:
            self.body = Sequential(
                conv_bn_act(in_channels, 4 * width, act, rng), PixelShuffle(2),
                conv_bn_act(width, 4 * width, act, rng), PixelShuffle(2),
                conv_bn_act(width, width, act, rng),
            )
        else:
            self.body = Sequential(
                conv_bn_act(in_channels, 16 * width, act, rng), PixelShuffle(4),
                conv_bn_act(width, width, act, rng),
            )
        # three stacked 3x3 convs see as far as one 7x7
        self.residual: Optional[Sequential] = None
        if cfg.use_residual_block:
            self.residual = Sequential(
                conv_bn_act(width, width, act, rng),
                conv_bn_act(width, width, act, rng),
                Conv2d(width, width, 3, rng=rng), BatchNorm2d(width),
            )

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 4 or z.shape[1] != self.in_channels:
            raise DimensionError(f"Stem expects N x {self.in_channels} x h x w latents, got {z.shape}")
        h = self.body(z)
        if self.residual is not None:
            h = h + self.residual(h)
        return h


class TruncatedStem(Module):
    def __init__(self, in_channels: int, width: int, rng: np.random.Generator):
        super().__init__()
        self.in_channels, self.width = in_channels, width
        self.proj = Conv2d(in_channels, width, 1, rng=rng)

    def identity_init(self) -> None:
        if self.in_channels != self.width:
            raise DimensionError(f"Identity init needs C_z == C_f, got {self.in_channels} and {self.width}")
        dtype = self.proj.weight.dtype
        self.proj.weight.data = np.eye(self.width, dtype=dtype).reshape(self.width, self.width, 1, 1)
        self.proj.bias.data = np.zeros(self.width, dtype=dtype)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 4 or z.shape[1] != self.in_channels:
            raise DimensionError(f"Stem expects N x {self.in_channels} x h x w latents, got {z.shape}")
        return self.proj(z)


def subpixel_stem(z_hat: Tensor, stem: Module) -> Tensor:
    if not isinstance(stem, SubpixelStem):
        raise ContractError(f"subpixel_stem needs a SubpixelStem, got {type(stem).__name__}")
    return stem(as_tensor(z_hat))


def truncated_stem(z_hat: Tensor, stem: Module) -> Tensor:
    if not isinstance(stem, TruncatedStem):
        raise ContractError(f"truncated_stem needs a TruncatedStem, got {type(stem).__name__}")
    return stem(as_tensor(z_hat))


def build_stem(in_channels: int, width: int, cfg: StemConfig, rng: np.random.Generator) -> Module:
    if cfg.variant == "subpixel":
        return SubpixelStem(in_channels, width, cfg, rng)
    return TruncatedStem(in_channels, width, rng)


class ResidualBlock(Module):
    def __init__(self, width: int, kind: str, rng: np.random.Generator):
        super().__init__()
        self.branch = Sequential(
            conv_bn_act(width, width, kind, rng),
            Conv2d(width, width, 3, rng=rng), BatchNorm2d(width),
        )
        self.out = Activation(kind)

    def forward(self, x: Tensor) -> Tensor:
        return self.out(x + self.branch(x))


class ClassifierHead(Module):
    """stem -> residual trunk -> global average pool -> linear"""

    def __init__(self, in_channels: int, config: Optional[HeadConfig] = None, seed: int = 0):
        super().__init__()
        self.config = config or HeadConfig()
        self.in_channels = in_channels
        cfg = self.config
        rng = np.random.default_rng(seed)
        width = cfg.trunk_width
        self.stem = build_stem(in_channels, width, cfg.stem, rng)
        self.trunk = Sequential(*[ResidualBlock(width, cfg.stem.activation, rng) for _ in range(cfg.trunk_blocks)])
        self.fc = Linear(width, cfg.num_classes, rng=rng)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def forward(self, z: Tensor) -> Tensor:
        return self.fc(F.global_avg_pool(self.trunk(self.stem(z))))


def classify(z_hat: Union[Tensor, QuantizedLatent, np.ndarray], head: ClassifierHead) -> Tensor:
    """Logits N x K for a batch of latents"""
    if isinstance(z_hat, QuantizedLatent):
        z_hat = z_hat.as_tensor()
    return head(as_tensor(z_hat))


# ============================================================================
# FROZEN-LATENT TRAINING
# ============================================================================

def extract_features(model: CodecModel, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Rounded latents N x C_z x h x w of a frozen codec"""
    model.eval()
    chunks = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            z = encode_latent(Tensor(np.asarray(images[start:start + batch_size])), model)
            chunks.append(quantize_round(z).values.astype(get_default_dtype()))
    return np.concatenate(chunks, axis=0)


@dataclass
class DownstreamResult:
    head: ClassifierHead
    accuracy: float
    history: List[Dict[str, float]] = field(default_factory=list)


def _fit_head(
    head: ClassifierHead,
    features: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    frozen: Optional[Module] = None,
) -> List[Dict[str, float]]:
    optimizer = Adam([head], lr=lr)
    history = []
    for epoch in range(epochs):
        head.train()
        losses, accs = [], []
        for idx in batch_indices(len(features), batch_size, rng):
            optimizer.zero_grad()
            logits = head(Tensor(features[idx]))
            loss = F.softmax_cross_entropy(logits, targets[idx])
            loss.backward()
            if frozen is not None and any(p.grad is not None for p in frozen.parameters()):
                raise FrozenParameterError("A frozen codec parameter received a gradient")
            optimizer.step()
            losses.append(loss.item())
            accs.append(accuracy(logits, targets[idx]))
        history.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "accuracy": float(np.mean(accs))})
    return history


def evaluate_head(head: ClassifierHead, features: np.ndarray, targets: np.ndarray, batch_size: int = 64) -> float:
    head.eval()
    correct = 0
    with no_grad():
        for start in range(0, len(features), batch_size):
            logits = head(Tensor(features[start:start + batch_size]))
            correct += int(np.sum(logits.data.argmax(axis=1) == targets[start:start + batch_size]))
    return correct / max(len(features), 1)


def train_downstream(
    frozen_model: CodecModel,
    train_samples: Sequence[SyntheticSample],
    holdout_samples: Sequence[SyntheticSample],
    cfg: Optional[HeadConfig] = None,
    task: str = "class",
    epochs: int = 10,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> DownstreamResult:
    """
    Train a new head on rounded latents of a frozen codec and report held-out
    accuracy. The codec digest is checked before and after.
    """
    cfg = cfg or HeadConfig()
    before = model_digest(frozen_model)
    frozen_model.requires_grad_(False)
    try:
        train_x = extract_features(frozen_model, stack_images(train_samples))
        test_x = extract_features(frozen_model, stack_images(holdout_samples))
        train_y = stack_targets(train_samples, [task])[task]
        test_y = stack_targets(holdout_samples, [task])[task]

        head = ClassifierHead(frozen_model.config.latent_channels, cfg, seed=seed)
        history = _fit_head(head, train_x, train_y, epochs, lr, batch_size, np.random.default_rng(seed), frozen_model)
        acc = evaluate_head(head, test_x, test_y)
    finally:
        frozen_model.requires_grad_(True)

    if model_digest(frozen_model) != before:
        raise FrozenParameterError("Codec weights changed during frozen-latent training")
    logger.info(f"🎯 Downstream {task} head ({cfg.stem.variant}): held-out accuracy {acc:.3f}")
    return DownstreamResult(head=head, accuracy=acc, history=history)


STEM_ABLATIONS: Dict[str, Dict[str, object]] = {
    "subpixel-2": {},
    "subpixel-1": {"pixel_shuffle_blocks": 1},
    "subpixel-2-no-residual": {"use_residual_block": False},
    "subpixel-2-relu": {"activation": "relu"},
    "subpixel-2-silu": {"activation": "silu"},
    "truncated": {"variant": "truncated"},
}


@dataclass
class StemComparison:
    name: str
    stem: StemConfig
    accuracy: float
    accuracies: List[float] = field(default_factory=list)


def compare_stems(
    frozen_model: CodecModel,
    train_samples: Sequence[SyntheticSample],
    holdout_samples: Sequence[SyntheticSample],
    base: Optional[HeadConfig] = None,
    variants: Optional[Sequence[str]] = None,
    task: str = "class",
    epochs: int = 10,
    lr: float = 1e-3,
    batch_size: int = 16,
    seeds: Sequence[int] = (0,),
) -> List[StemComparison]:
    """
    Train one head per stem variant and seed under an identical budget.

    `accuracy` is the median held-out accuracy over `seeds`.
    """
    base = base or HeadConfig()
    names = list(variants) if variants is not None else list(STEM_ABLATIONS)
    unknown = [name for name in names if name not in STEM_ABLATIONS]
    if unknown:
        raise ContractError(f"Unknown stem variant: {unknown[0]}. Available: {list(STEM_ABLATIONS)}")
    if not seeds:
        raise ContractError("compare_stems needs at least one seed")

    results = []
    for name in names:
        stem = base.stem.model_copy(update=STEM_ABLATIONS[name])
        cfg = base.model_copy(update={"stem": stem})
        accuracies = [
            train_downstream(
                frozen_model, train_samples, holdout_samples, cfg,
                task=task, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed,
            ).accuracy
            for seed in seeds
        ]
        results.append(StemComparison(
            name=name, stem=stem, accuracy=float(np.median(accuracies)), accuracies=accuracies,
        ))
        logger.info(f"🧪 Stem {name}: median accuracy {results[-1].accuracy:.3f} over {len(seeds)} seed(s)")
    return results


# ============================================================================
# HEAD WEIGHT FILES
# ============================================================================

def head_sections(head: ClassifierHead) -> Dict[str, Dict[str, np.ndarray]]:
    cfg = head.config
    meta = {
        "in_channels": head.in_channels,
        "trunk_width": cfg.trunk_width,
        "trunk_blocks": cfg.trunk_blocks,
        "num_classes": cfg.num_classes,
        "variant": _VARIANTS.index(cfg.stem.variant),
        "pixel_shuffle_blocks": cfg.stem.pixel_shuffle_blocks,
        "use_residual_block": int(cfg.stem.use_residual_block),
        "activation": _ACTIVATIONS.index(cfg.stem.activation),
    }
    return {
        "head": head.state_dict(),
        "meta": {name: np.array([value], dtype=np.float32) for name, value in meta.items()},
    }


def save_head(path: Union[str, Path], head: ClassifierHead) -> None:
    save_weights(path, head_sections(head))


def head_from_bytes(data: bytes) -> ClassifierHead:
    sections = deserialize_weights(data)
    if "head" not in sections or "meta" not in sections:
        raise WeightFormatError("Weight file lacks the head or meta section")
    meta = {name: int(round(float(value.reshape(-1)[0]))) for name, value in sections["meta"].items()}
    try:
        stem = StemConfig(
            variant=_VARIANTS[meta["variant"]],
            pixel_shuffle_blocks=meta["pixel_shuffle_blocks"],
            use_residual_block=bool(meta["use_residual_block"]),
            activation=_ACTIVATIONS[meta["activation"]],
        )
        cfg = HeadConfig(
            stem=stem, trunk_width=meta["trunk_width"],
            trunk_blocks=meta["trunk_blocks"], num_classes=meta["num_classes"],
        )
        in_channels = meta["in_channels"]
    except (KeyError, IndexError, ValueError) as e:
        raise WeightFormatError(f"Head meta section is invalid: {e}") from e
    head = ClassifierHead(in_channels, cfg)
    head.load_state_dict(sections["head"])
    head.eval()
    return head


def load_head(path: Union[str, Path]) -> ClassifierHead:
    return head_from_bytes(Path(path).read_bytes())
