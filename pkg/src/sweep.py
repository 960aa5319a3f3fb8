#!/usr/bin/env python3
"""
Rate-distortion sweeps: one full training run per lambda_d.
"Me fail English? That's unpossible!" - Ralph Wiggum

Points are independent, so they run through asyncio on a process pool capped
by NZIP_THREADS. A point that fails for any reason becomes a row of nan
metrics and the sweep carries on.
"""

import asyncio
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from bitstream import compress
from codec_net import CodecModel
from dataset import stack_images
from errors import ConfigError, NzipError
from models import SweepConfig, TrainConfig, worker_count
from training import make_datasets, train

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("lambda_d", "lambda_t", "bpp", "psnr", "task_acc")


@dataclass
class SweepPoint:
    lambda_d: float
    lambda_t: float
    bpp: float = math.nan
    psnr: float = math.nan
    task_acc: float = math.nan
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def row(self) -> List[str]:
        return [repr(float(getattr(self, name))) for name in SWEEP_COLUMNS]


def primary_lambda_t(config: TrainConfig) -> float:
    tasks = config.weights.active_tasks
    return config.weights.lambda_t[tasks[0]] if tasks else 0.0


def measured_bpp(model: CodecModel, images: np.ndarray) -> float:
    """Mean bits per pixel of real .nzip payloads over N x 3 x H x W images"""
    rates = [compress(image.transpose(1, 2, 0), model)[1].bpp for image in images]
    return float(np.mean(rates)) if rates else math.nan


def run_point(config_json: str, lambda_d: float) -> SweepPoint:
    """Train and measure one sweep point; never raises codec errors"""
    base = TrainConfig.model_validate_json(config_json)
    config = base.model_copy(update={"weights": base.weights.model_copy(update={"lambda_d": lambda_d})})
    point = SweepPoint(lambda_d=lambda_d, lambda_t=primary_lambda_t(config))
    try:
        train_set, holdout = make_datasets(config)
        result = train(config, train_set, holdout)
        final = result.log[-1]
        point.bpp = measured_bpp(result.model, stack_images(holdout))
        point.psnr = final.psnr
        point.task_acc = final.task_acc
    except NzipError as e:
        logger.warning(f"⚠️ Sweep point lambda_d={lambda_d:g} failed: {e}")
        point.error = str(e)
    return point


async def run_sweep_async(sweep: SweepConfig, workers: Optional[int] = None) -> List[SweepPoint]:
    workers = min(workers or sweep.workers, worker_count(), len(sweep.lambdas_d))
    config_json = sweep.base.model_dump_json()
    loop = asyncio.get_running_loop()
    logger.info(f"📊 Sweeping {len(sweep.lambdas_d)} values of lambda_d on {workers} worker(s)")

    if workers <= 1:
        # one point at a time on the default thread pool
        outcomes = []
        for lam in sweep.lambdas_d:
            future = loop.run_in_executor(None, run_point, config_json, lam)
            outcomes.extend(await asyncio.gather(future, return_exceptions=True))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [loop.run_in_executor(pool, run_point, config_json, lam) for lam in sweep.lambdas_d]
            outcomes = await asyncio.gather(*futures, return_exceptions=True)

    points = []
    for lam, outcome in zip(sweep.lambdas_d, outcomes):
        if isinstance(outcome, BaseException):
            if not isinstance(outcome, Exception):
                raise outcome
            logger.warning(f"⚠️ Sweep point lambda_d={lam:g} crashed: {outcome!r}")
            outcome = SweepPoint(lambda_d=lam, lambda_t=primary_lambda_t(sweep.base), error=repr(outcome))
        points.append(outcome)
    return sorted(points, key=lambda p: p.lambda_d)


def run_sweep(sweep: SweepConfig, workers: Optional[int] = None) -> List[SweepPoint]:
    return asyncio.run(run_sweep_async(sweep, workers))


def write_sweep_csv(path: Union[str, Path], points: Sequence[SweepPoint]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for point in sorted(points, key=lambda p: p.lambda_d):
            writer.writerow(point.row())
    logger.info(f"💾 Wrote {len(points)} sweep rows to {path}")


def parse_lambdas(text: str) -> List[float]:
    """'1e5,1e6,3e7' -> [1e5, 1e6, 3e7]"""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Invalid lambda list {text!r}: {e}") from e
