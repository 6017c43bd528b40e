"""Mini-batch training loop with validation-based early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..catalog import EncodedProduct
from ..compare_graph import TrainingTriple
from ..errors import DataError, NumericalError
from .loss import CONTRASTIVE, LOSS_KINDS, batch_loss, compute_gradients
from .model import SiameseModel
from .optimizer import RmsPropState, rmsprop_step

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 3
    seed: int = 0
    loss_kind: str = CONTRASTIVE

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")


@dataclass
class EpochStats:
    """Mean per-instance losses for one epoch."""

    epoch: int
    train_loss: float
    val_loss: float


class EarlyStopper:
    """Tracks the best validation loss and how long since it improved."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.epochs_since_best = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record one epoch's loss; returns True on strict improvement."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience


def _resolve_triples(
    triples: list[TrainingTriple],
    catalog_index: dict[str, EncodedProduct],
    set_name: str,
) -> list[tuple[EncodedProduct, EncodedProduct, int]]:
    pairs = []
    for triple in triples:
        try:
            pairs.append(
                (catalog_index[triple.anchor_id], catalog_index[triple.other_id], triple.label)
            )
        except KeyError as exc:
            raise DataError(
                f"{set_name} triple references unknown product {exc.args[0]!r}"
            ) from None
    return pairs


def _mean_loss(model, pairs, batch_size, loss_kind) -> float:
    sums = [
        batch_loss(pairs[start : start + batch_size], model, loss_kind)
        for start in range(0, len(pairs), batch_size)
    ]
    return math.fsum(sums) / len(pairs)


def train(
    model: SiameseModel,
    train_triples: list[TrainingTriple],
    val_triples: list[TrainingTriple],
    catalog_index: dict[str, EncodedProduct],
    config: TrainConfig,
    optimizer: RmsPropState | None = None,
) -> tuple[SiameseModel, list[EpochStats]]:
    """Train with shuffled mini-batches; keep the best-validation snapshot.

    Stops after ``patience`` epochs without improvement or at max_epochs,
    then restores the parameters of the best epoch. Deterministic given
    the config seed.
    """
    if not train_triples or not val_triples:
        raise DataError("train and validation sets must both be non-empty")
    train_pairs = _resolve_triples(train_triples, catalog_index, "train")
    val_pairs = _resolve_triples(val_triples, catalog_index, "validation")
    if optimizer is None:
        optimizer = RmsPropState()
    params = model.parameters()
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopper(config.patience)
    best_snapshot = model.snapshot()
    history: list[EpochStats] = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_pairs))
        batch_sums = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_pairs[i] for i in order[start : start + config.batch_size]]
            loss, grads = compute_gradients(batch, model, config.loss_kind)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            rmsprop_step(params, grads, optimizer)
            for name, value in params.items():
                if not np.all(np.isfinite(value)):
                    raise NumericalError(
                        f"parameter {name!r} became non-finite at epoch {epoch}"
                    )
            batch_sums.append(loss)
        train_loss = math.fsum(batch_sums) / len(train_pairs)
        val_loss = _mean_loss(model, val_pairs, config.batch_size, config.loss_kind)
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochStats(epoch, train_loss, val_loss))
        if stopper.update(epoch, val_loss):
            best_snapshot = model.snapshot()
        logger.info(
            "epoch %d: train %.6f val %.6f (best %.6f @ epoch %d)",
            epoch, train_loss, val_loss, stopper.best_loss, stopper.best_epoch,
        )
        if stopper.should_stop:
            logger.info("stopping: no improvement for %d epochs", stopper.patience)
            break

    model.restore(best_snapshot)
    return model, history
