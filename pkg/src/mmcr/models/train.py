"""Training and fine-tuning: SGD with momentum and step decay.

A fixed seed fixes every stochastic choice: weight initialization, epoch
shuffles, and augmentation draws all come from one generator consumed in a
fixed order, so two runs with the same inputs produce bit-identical
training logs and weights (single worker).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from typing import Iterable

import numpy as np

from ..errors import UsageError
from ..manifest import LabelVocabulary
from .data import label_indices, load_image_batch
from .network import ClassifierModel, softmax

__all__ = ["TrainConfig", "TrainingLog", "EpochStats", "train", "fine_tune",
           "loss_and_gradients", "cross_entropy"]


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "tiny"
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    warmup_epochs: int = 0  # linear ramp from lr/10 to lr over this many epochs
    seed: int = 0
    hflip: bool = False
    brightness_jitter: float = 0.0
    max_grad_norm: float = 10.0  # global-norm clip per step; 0 disables

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise UsageError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate < 0:
            raise UsageError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise UsageError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 < self.lr_decay_factor <= 1:
            raise UsageError(f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}")
        if not 0 <= self.brightness_jitter < 1:
            raise UsageError(f"brightness_jitter must be in [0, 1), "
                             f"got {self.brightness_jitter}")
        if self.max_grad_norm < 0:
            raise UsageError(f"max_grad_norm must be >= 0, got {self.max_grad_norm}")
        if self.warmup_epochs < 0:
            raise UsageError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        object.__setattr__(self, "lr_decay_epochs", tuple(self.lr_decay_epochs))

    def digest(self) -> str:
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    learning_rate: float
    train_loss: float
    heldout_accuracy: float | None


@dataclass
class TrainingLog:
    kind: str  # "train" or "finetune"
    config_digest: str
    vocabulary_digest: str
    parent_digest: str | None
    entries: list[EpochStats]

    def to_text(self) -> str:
        lines = [
            f"kind={self.kind}",
            f"config_digest={self.config_digest}",
            f"vocabulary_digest={self.vocabulary_digest}",
            f"parent_digest={self.parent_digest or '-'}",
        ]
        for e in self.entries:
            held = repr(e.heldout_accuracy) if e.heldout_accuracy is not None else "-"
            lines.append(f"epoch={e.epoch}\tlr={e.learning_rate!r}\t"
                         f"loss={e.train_loss!r}\theldout={held}")
        return "\n".join(lines) + "\n"


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(-np.log(probs[np.arange(len(labels)), labels] + 1e-300).mean())


def loss_and_gradients(model: ClassifierModel, x: np.ndarray,
                       labels: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over a normalized NCHW batch, plus all gradients.

    The analytic counterpart of a finite-difference probe: the loss is a
    deterministic function of the parameters for a fixed batch.
    """
    logits, _ = model.net.forward(x)
    probs = softmax(logits)
    loss = cross_entropy(probs, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits /= len(labels)
    model.net.backward(dlogits)
    return loss, model.net.gradients()


def _augment(x: np.ndarray, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if config.hflip:
        flip = rng.random(len(x)) < 0.5
        x[flip] = x[flip, :, ::-1, :]  # NHWC: reverse the width axis
    if config.brightness_jitter > 0:
        factors = rng.uniform(1 - config.brightness_jitter, 1 + config.brightness_jitter,
                              size=len(x))
        x = np.clip(x * factors[:, None, None, None], -0.5, 1.5)
    return x


def _lr_at(config: TrainConfig, epoch: int) -> float:
    if epoch <= config.warmup_epochs:
        # ramp ends at full lr on the first post-warmup epoch
        frac = epoch / (config.warmup_epochs + 1)
        return config.learning_rate * (0.1 + 0.9 * frac)
    decays = sum(1 for d in config.lr_decay_epochs if epoch >= d)
    return config.learning_rate * (config.lr_decay_factor ** decays)


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    """Scale all gradients in place so their global norm is at most max_norm.

    A single oversized step can push the network into a dead regime it
    never recovers from; clipping bounds the step without biasing its
    direction.
    """
    if max_norm <= 0:
        return
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def _heldout_accuracy(model: ClassifierModel, images: np.ndarray | None,
                      labels: np.ndarray | None) -> float | None:
    if images is None or len(images) == 0:
        return None
    probs, _ = model.forward_images(images)
    return float((probs.argmax(axis=1) == labels).mean())


def _fit(model: ClassifierModel, records, vocabulary: LabelVocabulary, config: TrainConfig,
         rng: np.random.Generator, kind: str, parent_digest: str | None) -> TrainingLog:
    train_records = [r for r in records if r.split == "train"]
    if not train_records:
        raise UsageError("manifest has an empty train split")
    labels = label_indices(train_records, vocabulary)
    images = load_image_batch(train_records, model.input_size)
    x_all = images.astype(np.float64) / 255.0 - 0.5

    heldout_records = [r for r in records if r.split == "test"]
    heldout_images = heldout_labels = None
    if heldout_records:
        heldout_labels = label_indices(heldout_records, vocabulary)
        heldout_images = load_image_batch(heldout_records, model.input_size)

    params = model.net.parameters()
    velocity = {name: np.zeros_like(array) for name, array in params.items()}
    n = len(train_records)
    entries: list[EpochStats] = []

    for epoch in range(1, config.epochs + 1):
        lr = _lr_at(config, epoch)
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            x = _augment(x_all[idx].copy(), config, rng).transpose(0, 3, 1, 2)
            loss, grads = loss_and_gradients(model, x, labels[idx])
            loss_sum += loss * len(idx)
            _clip_gradients(grads, config.max_grad_norm)
            for name, param in params.items():
                v = velocity[name]
                v *= config.momentum
                v -= lr * grads[name]
                param += v
        entries.append(EpochStats(
            epoch=epoch,
            learning_rate=lr,
            train_loss=loss_sum / n,
            heldout_accuracy=_heldout_accuracy(model, heldout_images, heldout_labels),
        ))

    log = TrainingLog(kind=kind, config_digest=config.digest(),
                      vocabulary_digest=vocabulary.digest(),
                      parent_digest=parent_digest, entries=entries)
    model.metadata.update({
        "kind": kind,
        "config_digest": config.digest(),
        "trained_epochs": config.epochs,
        **({"parent_digest": parent_digest} if parent_digest else {}),
    })
    return log


def train(records: Iterable, vocabulary: LabelVocabulary,
          config: TrainConfig) -> tuple[ClassifierModel, TrainingLog]:
    """Train a fresh classifier on the manifest's train split."""
    records = list(records)
    rng = np.random.default_rng(config.seed)
    model = ClassifierModel(vocabulary=vocabulary, preset=config.preset,
                            seed=int(rng.integers(0, 2 ** 31)))
    log = _fit(model, records, vocabulary, config, rng, kind="train", parent_digest=None)
    return model, log


def fine_tune(parent: ClassifierModel, records: Iterable, config: TrainConfig,
              vocabulary: LabelVocabulary | None = None) -> tuple[ClassifierModel, TrainingLog]:
    """Continue training from a parent model, usually on a new vocabulary.

    Feature-stage weights are copied from the parent; the output stage is
    kept when the class list is identical and re-initialized otherwise.
    """
    records = list(records)
    if vocabulary is None:
        vocabulary = LabelVocabulary.from_records(records, parent.vocabulary.granularity)
    if config.preset != parent.preset:
        raise UsageError(f"fine-tune preset {config.preset!r} does not match parent "
                         f"preset {parent.preset!r}")
    parent_digest = parent.digest()
    rng = np.random.default_rng(config.seed)
    model = ClassifierModel(vocabulary=vocabulary, preset=config.preset,
                            seed=int(rng.integers(0, 2 ** 31)))

    parent_params = parent.net.parameters()
    for name, param in model.net.parameters().items():
        is_head = name.startswith("head.")
        if is_head and vocabulary.classes != parent.vocabulary.classes:
            continue  # new class set: output stage stays freshly initialized
        param[...] = parent_params[name]

    log = _fit(model, records, vocabulary, config, rng, kind="finetune",
               parent_digest=parent_digest)
    return model, log
