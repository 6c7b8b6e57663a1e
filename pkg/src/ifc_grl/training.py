"""Mini-batch training and inference for :class:`~ifc_grl.model.GRModel`."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .dataset import BimObject, DatasetSplit, as_arrays
from .model import GRModel
from .nn import Adam, BatchTooSmall, softmax_cross_entropy

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0
    eval_batch_size: int = 256


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float


@dataclass
class History:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    @property
    def train_loss(self) -> List[float]:
        return [r.train_loss for r in self.epochs]

    @property
    def test_accuracy(self) -> List[float]:
        return [r.test_accuracy for r in self.epochs]


def predict_logits(model: GRModel, objects: Sequence[BimObject], batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = []
    try:
        for start in range(0, len(objects), batch_size):
            clouds, relations, _ = as_arrays(objects[start:start + batch_size])
            out.append(model.forward(clouds if model.uses_geometry else None,
                                     relations if model.uses_relations else None))
    finally:
        model.train(was_training)
    if not out:
        return np.zeros((0, model.n_classes))
    return np.concatenate(out, axis=0)


def predict(model: GRModel, objects: Sequence[BimObject], batch_size: int = 256) -> np.ndarray:
    return predict_logits(model, objects, batch_size).argmax(axis=1)


def train(model: GRModel, split: DatasetSplit, config: TrainConfig,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> History:
    """Train with Adam on shuffled mini-batches; the best-test-accuracy weights are kept.

    A trailing batch of a single object is skipped, since batch
    normalization needs two samples.
    """
    history = History()
    if config.epochs <= 0 or not split.train:
        return history
    if len(split.train) < 2:
        raise BatchTooSmall("training needs at least 2 objects")
    clouds, relations, labels = as_arrays(split.train)
    geo = clouds if model.uses_geometry else None
    rel = relations if model.uses_relations else None
    test_labels = np.array([int(o.label) for o in split.test], dtype=np.int64)

    optimizer = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    n = len(labels)
    best_acc = -1.0
    best_state = None
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n)
        total_loss = 0.0
        seen = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            optimizer.zero_grad()
            logits = model.forward(geo[idx] if geo is not None else None,
                                   rel[idx] if rel is not None else None)
            loss, grad = softmax_cross_entropy(logits, labels[idx])
            model.backward(grad)
            optimizer.step()
            total_loss += loss * len(idx)
            seen += len(idx)
        if split.test:
            acc = float((predict(model, split.test, config.eval_batch_size) == test_labels).mean())
        else:
            acc = float("nan")
        record = EpochRecord(epoch, total_loss / seen, acc)
        history.epochs.append(record)
        logger.info("epoch %d loss %.5f test acc %.4f", epoch, record.train_loss, acc)
        if on_epoch is not None:
            on_epoch(record)
        if acc > best_acc or best_state is None:
            best_acc = acc
            best_state = model.state_dict()
            history.best_epoch = epoch
    model.load_state_dict(best_state)
    model.train()
    return history
