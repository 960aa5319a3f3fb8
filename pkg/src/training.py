#!/usr/bin/env python3
"""
Joint training of the codec and its task heads.
"I bent my Wookiee." - Ralph Wiggum

Each epoch walks the reconstruction set in batches of recon_batch_size; after
every reconstruction step one task batch (task_batch_size images) is drawn
and trained on the task-informed loss, so the two streams keep their own
batch sizes. All randomness (batch order, quantization noise) comes from one
generator seeded by TrainConfig.seed.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

import functional as F
from codec_net import CodecModel
from dataset import FAMILIES, SyntheticSample, batch_indices, make_synthetic_dataset, stack_images, stack_targets
from errors import ContractError, DivergenceError, UnknownTaskError
from losses import LossBreakdown, accuracy, evaluate_codec, loss_naive, loss_task_informed, mean_breakdown
from models import KNOWN_TASKS, LossWeights, TrainConfig
from optim import Adam, step_decay_lr
from task_head import ClassifierHead, extract_features, train_downstream
from tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "bpp_estimate", "mse", "psnr", "task_loss", "task_acc")
HOLDOUT_SEED_OFFSET = 10_007


@dataclass
class EpochRecord:
    epoch: int
    bpp_estimate: float
    mse: float
    psnr: float
    task_loss: float = math.nan
    task_acc: float = math.nan

    def row(self) -> List[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, name))) for name in LOG_COLUMNS[1:]]


@dataclass
class TrainingState:
    epoch: int = 0
    step: int = 0
    lr: float = 0.0
    is_active: bool = False
    train_loss: float = math.nan


@dataclass
class TrainResult:
    model: CodecModel
    heads: Dict[str, ClassifierHead]
    log: List[EpochRecord] = field(default_factory=list)


def make_datasets(config: TrainConfig) -> Tuple[List[SyntheticSample], List[SyntheticSample]]:
    """Training and held-out corpora for a config; disjoint seeds"""
    train = make_synthetic_dataset(config.seed, config.num_classes, config.train_samples, config.image_size)
    holdout = make_synthetic_dataset(
        config.seed + HOLDOUT_SEED_OFFSET, config.num_classes, config.holdout_samples, config.image_size
    )
    return train, holdout


def task_classes(task: str, config: TrainConfig) -> int:
    if task == "class":
        return config.num_classes
    if task == "family":
        return len(FAMILIES)
    raise UnknownTaskError(f"Unknown task '{task}'. Available: {list(KNOWN_TASKS)}")


def _cycle_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        yield from batch_indices(n, batch_size, rng)


class Trainer:
    """Owns one codec and its heads for the duration of a run"""

    def __init__(self, config: TrainConfig, log_path: Optional[Union[str, Path]] = None):
        self.config = config
        self.log_path = Path(log_path) if log_path else None
        self.rng = np.random.default_rng(config.seed)
        self.model = CodecModel(config.codec, seed=config.seed)

        self.tasks = config.weights.active_tasks
        self.heads: Dict[str, ClassifierHead] = {}
        for i, task in enumerate(self.tasks):
            head_cfg = config.head.model_copy(update={"num_classes": task_classes(task, config)})
            self.heads[task] = ClassifierHead(config.codec.latent_channels, head_cfg, seed=config.seed + 1 + i)

        self.optimizer = Adam([self.model, *self.heads.values()], lr=config.learning_rate)
        self.state = TrainingState(lr=config.learning_rate)
        self.log: List[EpochRecord] = []
        self.listeners: List[Callable] = []

    # ------------------------------------------------------------------
    # Listeners
    # ------------------------------------------------------------------

    def add_listener(self, callback: Callable):
        """Add a callback receiving {"event": ..., **data} dicts"""
        self.listeners.append(callback)

    def remove_listener(self, callback: Callable):
        if callback in self.listeners:
            self.listeners.remove(callback)

    def _notify(self, event_type: str, data: dict):
        event = {"event": event_type, **data}
        for listener in self.listeners:
            try:
                listener(event)
            except Exception as e:
                logger.error(f"Listener notification failed: {e}")

    # ------------------------------------------------------------------
    # Steps
    # ------------------------------------------------------------------

    def _apply(self, loss: Tensor, breakdown: LossBreakdown) -> LossBreakdown:
        if not math.isfinite(breakdown.total):
            raise DivergenceError(
                f"Loss became {breakdown.total} at epoch {self.state.epoch}, step {self.state.step}"
            )
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.state.step += 1
        self.state.train_loss = breakdown.total
        return breakdown

    def reconstruction_step(self, images: np.ndarray, rng=None) -> LossBreakdown:
        """One Adam step on the naive loss of a batch"""
        self.model.train()
        loss, breakdown = loss_naive(Tensor(images), self.model, self.config.weights, self.rng if rng is None else rng)
        return self._apply(loss, breakdown)

    def task_step(self, images: np.ndarray, labels: Dict[str, np.ndarray], rng=None) -> LossBreakdown:
        """One Adam step on the task-informed loss of a batch"""
        self.model.train()
        for head in self.heads.values():
            head.train()
        loss, breakdown = loss_task_informed(
            Tensor(images), labels, self.model, self.heads, self.config.weights, self.rng if rng is None else rng
        )
        return self._apply(loss, breakdown)

    # ------------------------------------------------------------------
    # Epochs
    # ------------------------------------------------------------------

    def train_epoch(
        self,
        images: np.ndarray,
        targets: Dict[str, np.ndarray],
        task_batches: Optional[Iterator[np.ndarray]] = None,
    ) -> Optional[LossBreakdown]:
        cfg = self.config
        breakdowns = []
        for idx in batch_indices(len(images), cfg.recon_batch_size, self.rng):
            breakdowns.append(self.reconstruction_step(images[idx]))
            if self.tasks and task_batches is not None:
                t_idx = next(task_batches)
                self.task_step(images[t_idx], {task: targets[task][t_idx] for task in self.tasks})
        return mean_breakdown(breakdowns)

    def evaluate(self, holdout: Sequence[SyntheticSample]) -> EpochRecord:
        images = stack_images(holdout)
        codec = evaluate_codec(self.model, images)
        record = EpochRecord(
            epoch=self.state.epoch, bpp_estimate=codec.bpp_estimate, mse=codec.mse, psnr=codec.psnr
        )
        if self.tasks:
            # the first active task is the one reported in the log
            task = self.tasks[0]
            head = self.heads[task]
            features = extract_features(self.model, images)
            labels = stack_targets(holdout, [task])[task]
            head.eval()
            with no_grad():
                logits = head(Tensor(features))
                record.task_loss = F.softmax_cross_entropy(logits, labels).item()
            record.task_acc = accuracy(logits, labels)
        return record

    def _write_log_header(self) -> None:
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "w", newline="") as f:
            csv.writer(f).writerow(LOG_COLUMNS)

    def _append_log(self, record: EpochRecord) -> None:
        self.log.append(record)
        if self.log_path is None:
            return
        with open(self.log_path, "a", newline="") as f:
            csv.writer(f).writerow(record.row())

    def fit(
        self,
        train: Optional[Sequence[SyntheticSample]] = None,
        holdout: Optional[Sequence[SyntheticSample]] = None,
    ) -> TrainResult:
        """Run every epoch; generates the synthetic corpora when none are given"""
        cfg = self.config
        if train is None or holdout is None:
            train, holdout = make_datasets(cfg)
        images = stack_images(train)
        targets = stack_targets(train, self.tasks)
        task_batches = _cycle_batches(len(images), cfg.task_batch_size, self.rng) if self.tasks else None

        logger.info(
            f"🚀 Training codec ({self.model.parameter_count()} parameters) for {cfg.epochs} epochs, "
            f"lambda_d={cfg.weights.lambda_d:g}, tasks={self.tasks or 'none'}"
        )
        self._write_log_header()
        self.state.is_active = True
        try:
            for epoch in range(cfg.epochs):
                self.state.epoch = epoch + 1
                self.state.lr = step_decay_lr(cfg.learning_rate, epoch, cfg.lr_decay_every, cfg.lr_decay_gamma)
                self.optimizer.lr = self.state.lr
                self.train_epoch(images, targets, task_batches)

                record = self.evaluate(holdout)
                self._append_log(record)
                logger.info(
                    f"📈 Epoch {record.epoch}/{cfg.epochs}: {record.bpp_estimate:.4f} bpp, "
                    f"MSE {record.mse:.5f}, PSNR {record.psnr:.2f} dB, task loss {record.task_loss:.4f}"
                )
                self._notify("epoch_completed", {**asdict(record), "lr": self.state.lr})
        except DivergenceError as e:
            self._notify("training_diverged", {"error": str(e), "epoch": self.state.epoch})
            raise
        finally:
            self.state.is_active = False

        self._notify("training_finished", {"epochs": cfg.epochs, "steps": self.state.step})
        return TrainResult(model=self.model, heads=self.heads, log=list(self.log))


def train(
    config: TrainConfig,
    train_samples: Optional[Sequence[SyntheticSample]] = None,
    holdout_samples: Optional[Sequence[SyntheticSample]] = None,
    log_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """Train a codec (and one head per task with lambda_t > 0) from scratch"""
    return Trainer(config, log_path=log_path).fit(train_samples, holdout_samples)


def read_training_log(path: Union[str, Path]) -> List[EpochRecord]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return [
            EpochRecord(epoch=int(row["epoch"]), **{name: float(row[name]) for name in LOG_COLUMNS[1:]})
            for row in reader
        ]


# ============================================================================
# NAIVE VS TASK-INFORMED LATENTS
# ============================================================================

BPP_MATCH_TOLERANCE = 0.1


@dataclass
class RepresentationRun:
    seed: int
    naive_lambda_d: float
    naive_bpp: float
    informed_bpp: float
    naive_accuracy: float
    informed_accuracy: float


@dataclass
class RepresentationComparison:
    """Medians over seeds of frozen-latent accuracy for both kinds of codec"""
    task: str
    runs: List[RepresentationRun]
    naive_accuracy: float
    informed_accuracy: float
    naive_bpp: float
    informed_bpp: float
    tolerance: float = BPP_MATCH_TOLERANCE

    @property
    def bpp_matched(self) -> bool:
        return abs(self.naive_bpp - self.informed_bpp) <= self.tolerance * self.informed_bpp


def _naive_codec_near_bpp(
    config: TrainConfig,
    train_set: Sequence[SyntheticSample],
    holdout: Sequence[SyntheticSample],
    target_bpp: float,
    rounds: int,
    tolerance: float,
) -> Tuple[CodecModel, float, float]:
    """
    Train codecs without task terms, moving lambda_d geometrically toward
    target_bpp; returns (model, bpp, lambda_d) of the closest run.
    """
    images = stack_images(holdout)
    lambda_d, factor = config.weights.lambda_d, 4.0
    best: Optional[Tuple[CodecModel, float, float]] = None
    for _ in range(rounds + 1):
        naive_config = config.model_copy(update={"weights": LossWeights(lambda_d=lambda_d)})
        model = train(naive_config, train_set, holdout).model
        bpp = evaluate_codec(model, images).bpp_estimate
        if best is None or abs(bpp - target_bpp) < abs(best[1] - target_bpp):
            best = (model, bpp, lambda_d)
        if abs(bpp - target_bpp) <= tolerance * target_bpp:
            break
        # rate grows with lambda_d
        lambda_d = lambda_d * factor if bpp < target_bpp else lambda_d / factor
        factor = math.sqrt(factor)
    return best


def compare_representations(
    config: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    task: str = "class",
    head_epochs: int = 10,
    calibration_rounds: int = 3,
    tolerance: float = BPP_MATCH_TOLERANCE,
) -> RepresentationComparison:
    """
    For every seed train a task-informed codec (config's lambda_t for `task`)
    and a naive one at about the same bpp, then fit a fresh head on each
    frozen latent and compare held-out accuracy.
    """
    weight = config.weights.lambda_t.get(task, 0.0)
    if weight <= 0:
        raise ContractError(f"compare_representations needs lambda_t['{task}'] > 0")
    if not seeds:
        raise ContractError("compare_representations needs at least one seed")
    informed_weights = LossWeights(lambda_d=config.weights.lambda_d, lambda_t={task: weight})

    runs = []
    for seed in seeds:
        seeded = config.model_copy(update={"seed": seed})
        train_set, holdout = make_datasets(seeded)
        images = stack_images(holdout)

        informed = train(seeded.model_copy(update={"weights": informed_weights}), train_set, holdout).model
        informed_bpp = evaluate_codec(informed, images).bpp_estimate
        naive, naive_bpp, naive_lambda_d = _naive_codec_near_bpp(
            seeded, train_set, holdout, informed_bpp, calibration_rounds, tolerance
        )

        head_cfg = seeded.head.model_copy(update={"num_classes": task_classes(task, seeded)})
        accuracies = [
            train_downstream(model, train_set, holdout, head_cfg, task=task, epochs=head_epochs, seed=seed).accuracy
            for model in (naive, informed)
        ]
        runs.append(RepresentationRun(
            seed=seed, naive_lambda_d=naive_lambda_d, naive_bpp=naive_bpp, informed_bpp=informed_bpp,
            naive_accuracy=accuracies[0], informed_accuracy=accuracies[1],
        ))
        logger.info(
            f"🔬 Seed {seed}: naive {accuracies[0]:.3f} at {naive_bpp:.4f} bpp, "
            f"informed {accuracies[1]:.3f} at {informed_bpp:.4f} bpp"
        )

    return RepresentationComparison(
        task=task,
        runs=runs,
        naive_accuracy=float(np.median([r.naive_accuracy for r in runs])),
        informed_accuracy=float(np.median([r.informed_accuracy for r in runs])),
        naive_bpp=float(np.median([r.naive_bpp for r in runs])),
        informed_bpp=float(np.median([r.informed_bpp for r in runs])),
        tolerance=tolerance,
    )
