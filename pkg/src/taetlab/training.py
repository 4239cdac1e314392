"""Training procedures: two-stage adversarial equalization training (TAET)
plus the standard adversarial training (AT) and AT-BSL baselines.

TAET spends the first `ce_epochs` on plain cross-entropy over clean batches,
then switches to the adversarial stage: each batch is perturbed by PGD with a
cross-entropy inner loss, and the model is updated to minimize the
hierarchical equalization loss on the adversarial logits. The single-stage
variant (`harl_only`) is TAET with zero cross-entropy epochs. All methods
share the optimizer, schedule and batch stream, so runs are comparable and
bit-deterministic per seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, pgd
from .data import Dataset, batches
from .losses import BslConfig, BslLoss, CeLoss, HelLoss, HelWeights
from .metrics import EvalAttack, balanced_accuracy, confusion_from_predictions, predictions
from .network import (
    LrSchedule,
    Model,
    OptimizerState,
    load_checkpoint,
    loss_and_grads,
    lr_at_epoch,
    save_checkpoint,
    sgd_step,
)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainOutcome",
    "STAGE_CE",
    "STAGE_ADV",
    "train",
    "train_run",
    "train_taet",
    "train_at",
    "train_at_bsl",
    "checkpoint",
    "restore",
    "resume",
]

STAGE_CE = "CE"
STAGE_ADV = "ADV"

METHODS = ("taet", "at", "at_bsl", "harl_only")


@dataclass
class TrainOutcome:
    """Trained model plus the epoch log and final optimizer state."""

    model: Model
    records: list["EpochRecord"]
    state: OptimizerState


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run except the data itself."""

    method: str
    total_epochs: int
    ce_epochs: int
    batch_size: int
    seed: int
    attack: AttackConfig
    hel_weights: HelWeights = field(default_factory=HelWeights)
    bsl_tau: float = 1.0
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_milestones: tuple[int, ...] = ()
    lr_decay_factor: float = 10.0
    probe_size: int = 128
    probe_steps: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= self.ce_epochs <= self.total_epochs:
            raise ValueError("need 0 <= ce_epochs <= total_epochs")
        if self.method == "taet" and self.ce_epochs < 1:
            raise ValueError("taet requires at least one cross-entropy epoch")
        if self.method == "harl_only" and self.ce_epochs != 0:
            raise ValueError("harl_only forces ce_epochs = 0")
        if self.method in ("at", "at_bsl") and self.ce_epochs != 0:
            raise ValueError(f"{self.method} has no cross-entropy stage; set ce_epochs = 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.learning_rate, self.lr_milestones, self.lr_decay_factor)


@dataclass(frozen=True)
class EpochRecord:
    """One row of the training log."""

    epoch: int
    stage: str
    loss: float
    clean_ba: float
    robust_ba: float
    lr: float
    seconds: float


def _probe_set(cfg: TrainConfig, train_data: Dataset, probe_data: Dataset | None) -> tuple[np.ndarray, np.ndarray]:
    """Fixed probe subsample, class-stratified so small probes cover every class."""
    src = probe_data if probe_data is not None else train_data
    n = min(cfg.probe_size, len(src))
    occurrence = np.zeros(len(src), dtype=np.int64)
    seen: dict[int, int] = {}
    for i, c in enumerate(src.labels):
        occurrence[i] = seen.get(int(c), 0)
        seen[int(c)] = occurrence[i] + 1
    order = np.lexsort((src.labels, occurrence))  # round-robin over classes
    sel = order[:n]
    return src.features[sel], src.labels[sel]


def _probe(model: Model, cfg: TrainConfig, feats: np.ndarray, labs: np.ndarray, num_classes: int, epoch: int) -> tuple[float, float]:
    """Cheap clean/robust balanced-accuracy probe on a fixed subsample."""
    clean_cm = confusion_from_predictions(labs, predictions(model, feats), num_classes)
    probe_cfg = replace(cfg.attack, num_steps=cfg.probe_steps, step_size=max(cfg.attack.epsilon / 4.0, 1e-12))
    rng = np.random.default_rng(np.random.SeedSequence([0x9B0BE, cfg.seed, epoch]))
    adv = pgd(model, feats, labs, probe_cfg, rng)
    adv_cm = confusion_from_predictions(labs, predictions(model, adv), num_classes)
    return balanced_accuracy(clean_cm), balanced_accuracy(adv_cm)


def _outer_loss(cfg: TrainConfig, train_data: Dataset):
    if cfg.method in ("taet", "harl_only"):
        return HelLoss(cfg.hel_weights)
    if cfg.method == "at":
        return CeLoss()
    return BslLoss(BslConfig(train_data.class_counts, cfg.bsl_tau))


def train_run(
    model: Model,
    train_data: Dataset,
    cfg: TrainConfig,
    probe_data: Dataset | None = None,
    state: OptimizerState | None = None,
    start_epoch: int = 0,
    end_epoch: int | None = None,
) -> TrainOutcome:
    """Run epochs [start_epoch, end_epoch) of the configured method.

    Epochs below `ce_epochs` minimize clean cross-entropy; the rest generate
    PGD examples with a cross-entropy inner loss and minimize the method's
    outer loss on them. Every random draw is keyed by (seed, epoch, batch),
    so (seed, config, data) determines all non-timing log fields bit-exactly,
    including across a checkpoint/restore split at any epoch boundary.
    """
    if state is None:
        state = OptimizerState.for_model(model, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    end = cfg.total_epochs if end_epoch is None else end_epoch
    outer = _outer_loss(cfg, train_data)
    probe_feats, probe_labs = _probe_set(cfg, train_data, probe_data)
    records: list[EpochRecord] = []
    for epoch in range(start_epoch, end):
        t0 = time.perf_counter()
        lr = lr_at_epoch(cfg.schedule, epoch)
        state.learning_rate = lr
        stage = STAGE_CE if epoch < cfg.ce_epochs else STAGE_ADV
        loss_sum = 0.0
        seen = 0
        for k, (xb, yb) in enumerate(batches(train_data, cfg.batch_size, cfg.seed, epoch)):
            if stage == STAGE_CE:
                value, grads, _ = loss_and_grads(model, xb, yb, CeLoss())
            else:
                rng = np.random.default_rng(np.random.SeedSequence([0xADA7, cfg.seed, epoch, k]))
                x_adv = pgd(model, xb, yb, cfg.attack, rng)
                value, grads, _ = loss_and_grads(model, x_adv, yb, outer)
            sgd_step(model, grads, state)
            loss_sum += value * xb.shape[0]
            seen += xb.shape[0]
        clean_ba, robust_ba = _probe(model, cfg, probe_feats, probe_labs, train_data.num_classes, epoch)
        records.append(
            EpochRecord(
                epoch=epoch,
                stage=stage,
                loss=loss_sum / seen,
                clean_ba=clean_ba,
                robust_ba=robust_ba,
                lr=lr,
                seconds=time.perf_counter() - t0,
            )
        )
    return TrainOutcome(model=model, records=records, state=state)


def train(model: Model, train_data: Dataset, cfg: TrainConfig, probe_data: Dataset | None = None) -> tuple[Model, list[EpochRecord]]:
    outcome = train_run(model, train_data, cfg, probe_data)
    return outcome.model, outcome.records


def train_taet(model: Model, train_data: Dataset, cfg: TrainConfig, probe_data: Dataset | None = None):
    if cfg.method != "taet":
        raise ValueError(f"train_taet needs method='taet', got {cfg.method!r}")
    return train(model, train_data, cfg, probe_data)


def train_at(model: Model, train_data: Dataset, cfg: TrainConfig, probe_data: Dataset | None = None):
    if cfg.method != "at":
        raise ValueError(f"train_at needs method='at', got {cfg.method!r}")
    return train(model, train_data, cfg, probe_data)


def train_at_bsl(model: Model, train_data: Dataset, cfg: TrainConfig, probe_data: Dataset | None = None):
    if cfg.method != "at_bsl":
        raise ValueError(f"train_at_bsl needs method='at_bsl', got {cfg.method!r}")
    return train(model, train_data, cfg, probe_data)


def checkpoint(model: Model, state: OptimizerState, epoch: int, path) -> None:
    """Persist model + optimizer so training can resume bit-identically."""
    save_checkpoint(path, model, state, epoch)


def restore(path) -> tuple[Model, OptimizerState, int]:
    return load_checkpoint(path)


def resume(path, train_data: Dataset, cfg: TrainConfig, probe_data: Dataset | None = None) -> TrainOutcome:
    """Continue a checkpointed run through the remaining epochs."""
    model, state, epoch = load_checkpoint(path)
    return train_run(model, train_data, cfg, probe_data, state=state, start_epoch=epoch)
