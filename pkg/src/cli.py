#!/usr/bin/env python3
"""
Command-line interface: train, compress, decompress, latent, eval-downstream, rd-curve.
"When I grow up, I want to be a principal or a caterpillar." - Ralph Wiggum

Exit codes: 0 success, 1 contract or decode failure, 2 missing or unreadable
input (argparse usage errors also exit 2), 3 digest or version mismatch.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

from bitstream import CompressedImage, compress, decompress, extract_latent
from codec_net import load_codec, save_codec
from errors import (
    ConfigError,
    DigestMismatchError,
    ImageFormatError,
    NzipError,
    VersionMismatchError,
    WeightFormatError,
)
from image_io import read_image, write_image
from models import CONFIG_PRESETS, HeadConfig, StemConfig, SweepConfig, TrainConfig, create_train_config, load_config_file, worker_count
from sweep import parse_lambdas, run_sweep, write_sweep_csv
from task_head import compare_stems, save_head, train_downstream
from training import make_datasets, task_classes, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2
EXIT_MISMATCH = 3


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """Configure logging for the application"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    config = load_config_file(args.config) if args.config else create_train_config(args.preset)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    if updates:
        config = TrainConfig.model_validate({**config.model_dump(), **updates})
    return config


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_train(args: argparse.Namespace) -> int:
    config = _train_config(args)
    result = train(config, log_path=args.log)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model_id = save_codec(out, result.model)
    for task, head in result.heads.items():
        save_head(out.with_name(f"{out.stem}.{task}{out.suffix}"), head)
    final = result.log[-1]
    print(f"model_id={model_id.hex()}")
    print(f"bpp_estimate={final.bpp_estimate:.6f}")
    print(f"psnr={final.psnr:.4f}")
    return EXIT_OK


def cmd_compress(args: argparse.Namespace) -> int:
    model, model_id = load_codec(args.model)
    image = read_image(args.input)
    compressed, stats = compress(image, model, model_id)
    Path(args.out).write_bytes(compressed.to_bytes())
    logger.debug(f"🗜️ {args.input} -> {args.out} ({stats.payload_bits // 8} payload bytes, {stats.bpp:.4f} bpp)")
    if args.stats:
        print(f"bpp={stats.bpp:.9f}")
        print(f"payload_bits={stats.payload_bits}")
        print(f"estimated_bits={stats.estimated_bits:.3f}")
        print(f"clamped={stats.clamped}")
        print(f"wall_time={stats.wall_time:.6f}")
    return EXIT_OK


def _read_container(path: str) -> CompressedImage:
    return CompressedImage.from_bytes(Path(path).read_bytes())


def cmd_decompress(args: argparse.Namespace) -> int:
    model, model_id = load_codec(args.model)
    image = decompress(_read_container(args.input), model, model_id)
    write_image(args.out, image)
    logger.debug(f"🖼️ {args.input} -> {args.out} ({image.shape[1]}x{image.shape[0]})")
    return EXIT_OK


def cmd_latent(args: argparse.Namespace) -> int:
    model, model_id = load_codec(args.model)
    latent = extract_latent(_read_container(args.input), model, model_id)
    np.save(args.out, latent.values)
    logger.info(f"🧊 Latent {latent.shape} written to {args.out}")
    return EXIT_OK


def cmd_eval_downstream(args: argparse.Namespace) -> int:
    model, _ = load_codec(args.model)
    config = _train_config(args)
    train_set, holdout = make_datasets(config)
    stem = StemConfig(
        variant=args.stem,
        pixel_shuffle_blocks=args.shuffle_blocks,
        use_residual_block=not args.no_residual,
        activation=args.activation,
    )
    head_cfg = HeadConfig(
        stem=stem, trunk_width=config.head.trunk_width,
        trunk_blocks=config.head.trunk_blocks, num_classes=task_classes(args.task, config),
    )
    if args.compare_stems:
        results = compare_stems(
            model, train_set, holdout, head_cfg,
            task=args.task, epochs=args.head_epochs, lr=args.lr,
            seeds=[config.seed + i for i in range(args.repeats)],
        )
        for row in results:
            print(f"{row.name}={row.accuracy:.4f}")
        return EXIT_OK

    outcome = train_downstream(
        model, train_set, holdout, head_cfg,
        task=args.task, epochs=args.head_epochs, lr=args.lr, seed=config.seed,
    )
    if args.out:
        save_head(args.out, outcome.head)
    print(f"accuracy={outcome.accuracy:.4f}")
    return EXIT_OK


def cmd_rd_curve(args: argparse.Namespace) -> int:
    base = _train_config(args)
    try:
        sweep = SweepConfig(base=base, lambdas_d=parse_lambdas(args.lambdas), workers=worker_count())
    except ValueError as e:
        raise ConfigError(f"Invalid sweep: {e}") from e
    points = run_sweep(sweep, workers=args.workers)
    write_sweep_csv(args.out, points)
    failed = [p for p in points if not p.ok]
    if failed:
        logger.warning(f"⚠️ {len(failed)} of {len(points)} sweep points failed")
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat key=value training config file")
    parser.add_argument("--preset", default="desk", choices=sorted(CONFIG_PRESETS), help="Base preset")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed for every random draw")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="nzip", description="Learned image codec with task-aware latents")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="Train a codec (and task heads) from scratch")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="Codec weight file (.nzwt)")
    p.add_argument("--log", help="Per-epoch training log (CSV)")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", parents=[common], help="Image -> .nzip")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", action="store_true", help="Print bpp, estimated bits, clamped count, wall time")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help=".nzip -> image")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("latent", parents=[common], help=".nzip -> integer latent (.npy)")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latent)

    p = sub.add_parser("eval-downstream", parents=[common], help="Train a head on frozen latents")
    _add_config_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--task", default="class", choices=["class", "family"])
    p.add_argument("--stem", default="subpixel", choices=["subpixel", "truncated"])
    p.add_argument("--shuffle-blocks", type=int, default=2, choices=[1, 2])
    p.add_argument("--no-residual", action="store_true")
    p.add_argument("--activation", default="mish", choices=["relu", "mish", "silu"])
    p.add_argument("--head-epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--compare-stems", action="store_true", help="Run every stem variant")
    p.add_argument(
        "--repeats", type=int, default=1,
        help="With --compare-stems: seeds per variant, starting at --seed; prints the median",
    )
    p.add_argument("--out", help="Head weight file (.nzwt)")
    p.set_defaults(func=cmd_eval_downstream)

    p = sub.add_parser(
        "rd-curve", parents=[common],
        help="Train one model per lambda_d and write a CSV",
        description=(
            "Train one model per lambda_d and write a CSV. A point that fails is written as a row "
            "of nan metrics and the command still exits 0, so check the CSV for nan rows."
        ),
    )
    _add_config_flags(p)
    p.add_argument("--lambdas", required=True, help="Comma-separated lambda_d values")
    p.add_argument("--out", required=True, help="CSV with lambda_d, lambda_t, bpp, psnr, task_acc")
    p.add_argument("--workers", type=int, default=None, help="Parallel processes (capped by NZIP_THREADS)")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_rd_curve)

    return parser


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (DigestMismatchError, VersionMismatchError)):
        return EXIT_MISMATCH
    if isinstance(error, (OSError, ImageFormatError, WeightFormatError, ConfigError)):
        return EXIT_INPUT
    return EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or os.getenv("NZIP_LOG_LEVEL", "INFO"), os.getenv("NZIP_LOG_FILE"))
    try:
        return args.func(args)
    except (NzipError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return code
