"""Training and evaluation protocol: pre-train, few-shot fine-tune, test.

Pre-training fits the encoder on a labeled source domain; fine-tuning
continues with a handful of target-domain images per class, each mixed with
a same-class source image; testing assigns every image to the prototype
component nearest (in W2) to its latent Gaussian.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import SPLIT_AXES, augment_finetune, augment_pretrain, hflip
from .checkpoint import MODES, Checkpoint
from .encoder import (Arch, Batch, adam_step, ce_loss_and_grad, ddt_loss_and_grad, encode_arrays,
                      head_logits, init_encoder)
from .errors import ConfigError
from .gaussian_ot import w2_to_components
from .prototype import PrototypeDistribution, build_prototype
from .synthdata import Dataset

log = logging.getLogger(__name__)

DEFAULT_SHOTS = (0, 5, 10, 25, 50, 100)
SWEEP_HEADER = ("mode", "shots", "seed", "split", "accuracy", "mean_loss")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ddt"
    batch_size: int = 32
    pretrain_lr: float = 1e-3
    plateau_patience: int = 5
    plateau_factor: float = 0.1
    pretrain_patience: int = 10
    finetune_lr: float = 1e-5
    finetune_patience: int = 30
    max_epochs: int = 200
    finetune_max_epochs: int = 200
    p_mix: float = 0.5
    p_flip: float = 0.5
    split_axis: str = "vertical"
    shots_per_class: bool = True
    min_delta: float = 1e-6
    seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.pretrain_lr > 0 and self.finetune_lr > 0):
            raise ConfigError("learning rates must be positive")
        if min(self.plateau_patience, self.pretrain_patience, self.finetune_patience) < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0 < self.plateau_factor <= 1:
            raise ConfigError("plateau_factor must lie in (0, 1]")
        if self.max_epochs < 0 or self.finetune_max_epochs < 0:
            raise ConfigError("epoch caps must be >= 0")
        if not (0 <= self.p_mix <= 1 and 0 <= self.p_flip <= 1):
            raise ConfigError("augmentation probabilities must lie in [0, 1]")
        if self.split_axis not in SPLIT_AXES:
            raise ConfigError(f"split_axis must be one of {SPLIT_AXES}")
        if self.min_delta < 0 or self.seed < 0:
            raise ConfigError("min_delta and seed must be non-negative")
        return self


class EarlyStopping:
    """Counts consecutive epochs without a strict improvement of ``min_delta``."""

    def __init__(self, patience, min_delta=1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.bad_epochs = 0

    def update(self, value) -> bool:
        """Record one epoch; returns True if it improved on the best value."""
        if value < self.best - self.min_delta:
            self.best = value
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


class PlateauDecay:
    """Multiply the learning rate by ``factor`` after ``patience`` flat epochs.

    The flat-epoch counter restarts after every decay.
    """

    def __init__(self, lr, patience=5, factor=0.1, min_delta=1e-6):
        self.lr = lr
        self.factor = factor
        self.tracker = EarlyStopping(patience, min_delta)

    def update(self, value) -> float:
        self.tracker.update(value)
        if self.tracker.should_stop:
            self.lr *= self.factor
            self.tracker.bad_epochs = 0
        return self.lr


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float = math.nan
    val_accuracy: float = math.nan


@dataclass(frozen=True)
class ClassDistances:
    d: np.ndarray
    predicted: int


@dataclass
class Metrics:
    accuracy: float
    mean_loss: float
    per_class: dict
    counts: dict
    correct: int
    total: int

    def as_dict(self):
        return asdict(self)


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _loss_and_grad(ckpt_mode, params, batch, proto):
    if ckpt_mode == "ce":
        return ce_loss_and_grad(params, batch)
    return ddt_loss_and_grad(params, batch, proto)


def _check_proto(ckpt: Checkpoint, proto):
    if proto is None:
        return build_prototype(ckpt.n_classes, ckpt.dim)
    if (proto.n_classes, proto.dim) != (ckpt.n_classes, ckpt.dim):
        raise ConfigError(
            f"prototype (C={proto.n_classes}, K={proto.dim}) does not match the checkpoint "
            f"(C={ckpt.n_classes}, K={ckpt.dim})"
        )
    return proto


def _batch_scores(ckpt: Checkpoint, proto, images, labels):
    """Per-image (distances-or-negated-logits, loss) for a batch."""
    mu, s = encode_arrays(ckpt.params, images)
    if ckpt.mode == "ce":
        logits = head_logits(ckpt.params, mu)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return -logits, -logp[np.arange(len(labels)), labels]
    d = w2_to_components(mu, s, proto.means)
    return d, d[np.arange(len(labels)), labels]


def _batched_loss_accuracy(ckpt, proto, ds: Dataset, chunk=256):
    losses, correct = [], 0
    for start in range(0, len(ds), chunk):
        labels = ds.labels[start:start + chunk]
        scores, loss = _batch_scores(ckpt, proto, ds.images[start:start + chunk], labels)
        losses.append(loss)
        correct += int(np.sum(np.argmin(scores, axis=1) == labels))
    return math.fsum(np.concatenate(losses)) / len(ds), correct / len(ds)


def pretrain(config: TrainConfig, source: Dataset, proto: PrototypeDistribution, arch: Arch | None = None):
    """Fit a fresh encoder on the source train split.

    Returns the checkpoint with the best validation loss and the per-epoch
    history. The learning rate drops by ``plateau_factor`` after
    ``plateau_patience`` epochs without validation improvement; training
    stops after ``pretrain_patience`` such epochs or ``max_epochs``.
    """
    config.validate()
    arch = arch or Arch()
    if not source.has_split("val"):
        raise ConfigError("pre-training needs a 'val' split in the source dataset")
    if not source.has_split("train"):
        raise ConfigError("pre-training needs a 'train' split in the source dataset")
    params = init_encoder(arch, proto.dim, proto.n_classes, config.seed, head=config.mode == "ce")
    ckpt = Checkpoint(params, config.mode)
    train, val = source.split("train"), source.split("val")
    if train.labels.max() >= proto.n_classes:
        raise ConfigError("source labels exceed the prototype's class count")
    pool = train.class_pool()
    shuffle_rng, aug_rng = _streams(config.seed, 2)
    plateau = PlateauDecay(config.pretrain_lr, config.plateau_patience, config.plateau_factor, config.min_delta)
    stopper = EarlyStopping(config.pretrain_patience, config.min_delta)
    best = ckpt.copy()
    history = []
    lr = config.pretrain_lr
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            images = augment_pretrain(train.images[idx], train.labels[idx], pool, aug_rng,
                                      config.p_mix, config.p_flip, config.split_axis)
            loss, grads = _loss_and_grad(config.mode, params, Batch(images, train.labels[idx]), proto)
            params = adam_step(params, grads, lr)
            batch_losses.append(loss)
        ckpt = Checkpoint(params, config.mode)
        val_loss, val_acc = _batched_loss_accuracy(ckpt, proto, val)
        history.append(EpochRecord(epoch, lr, float(np.mean(batch_losses)), val_loss, val_acc))
        log.info("epoch %d lr %.2e train %.4f val %.4f acc %.4f", epoch, lr, history[-1].train_loss,
                 val_loss, val_acc)
        if stopper.update(val_loss):
            best = ckpt.copy()
        lr = plateau.update(val_loss)
        if stopper.should_stop:
            break
    return best, history


def _per_class_shots(pool_labels, k, n_classes, per_class):
    if per_class:
        return {c: k for c in range(n_classes)}
    base, extra = divmod(k, n_classes)
    return {c: base + (c < extra) for c in range(n_classes)}


def sample_shots(target: Dataset, k: int, n_classes: int, rng, per_class=True) -> Dataset:
    """Draw ``k`` labeled train images per class (or ``k`` in total) without replacement."""
    train = target.split("train")
    picks = []
    for c, want in _per_class_shots(train.labels, k, n_classes, per_class).items():
        candidates = np.flatnonzero(train.labels == c)
        if len(candidates) < want:
            raise ConfigError(f"target train split has {len(candidates)} images of class {c}, need {want}")
        picks.append(np.sort(rng.choice(candidates, size=want, replace=False)))
    return train.select(np.concatenate(picks))


def finetune(checkpoint: Checkpoint, target_shots: Dataset, source_pool, config: TrainConfig,
             proto: PrototypeDistribution | None = None) -> Checkpoint:
    """Adapt a pre-trained checkpoint to a few labeled target images.

    Uses the checkpoint's own loss (W2 to the same prototype, or CE), a fixed
    ``finetune_lr`` with a fresh Adam state, and stops after
    ``finetune_patience`` epochs without training-loss improvement. Each
    sample is mixed with probability ``p_mix`` with a freshly drawn
    same-class source image, then flipped with probability ``p_flip``.
    Returns the weights with the lowest epoch training loss.
    """
    config.validate()
    proto = _check_proto(checkpoint, proto)
    if len(target_shots) == 0:
        return checkpoint.copy()
    labels = target_shots.labels
    missing = [c for c in range(proto.n_classes) if not np.any(labels == c)]
    if missing:
        raise ConfigError(f"no fine-tuning shots for class(es) {missing}")
    if isinstance(source_pool, Dataset):
        source_pool = source_pool.class_pool("train")
    if config.p_mix > 0:
        empty = [c for c in range(proto.n_classes) if len(source_pool.get(c, ())) == 0]
        if empty:
            raise ConfigError(f"source pool has no images of class(es) {empty}")
    params = checkpoint.params.reset_optimizer()
    shuffle_rng, aug_rng = _streams(config.seed, 2)
    stopper = EarlyStopping(config.finetune_patience, config.min_delta)
    best = checkpoint.copy()
    for epoch in range(config.finetune_max_epochs):
        order = shuffle_rng.permutation(len(target_shots))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            images = target_shots.images[idx].copy()
            for i, c in enumerate(labels[idx]):
                if aug_rng.random() < config.p_mix:
                    images[i] = augment_finetune(images[i], source_pool[int(c)], aug_rng, config.split_axis)
                if aug_rng.random() < config.p_flip:
                    images[i] = hflip(images[i])
            loss, grads = _loss_and_grad(checkpoint.mode, params, Batch(images, labels[idx]), proto)
            params = adam_step(params, grads, config.finetune_lr)
            batch_losses.append(loss)
        if stopper.update(float(np.mean(batch_losses))):
            best = Checkpoint(params.copy(), checkpoint.mode)
        if stopper.should_stop:
            break
    return best


def classify(checkpoint: Checkpoint, proto, image) -> ClassDistances:
    """Nearest-component label for one (H, W, 3) image.

    In ``ce`` mode ``d`` holds negated logits, so the argmin rule is the
    argmax of the logits. Ties go to the lowest class index.
    """
    proto = _check_proto(checkpoint, proto)
    scores, _ = _batch_scores(checkpoint, proto, np.asarray(image)[None], np.zeros(1, dtype=np.int64))
    d = scores[0]
    return ClassDistances(d, int(np.argmin(d)))


def evaluate(checkpoint: Checkpoint, proto, dataset: Dataset, split: str = "test") -> Metrics:
    """Per-image accuracy and mean loss over ``split``.

    Images are scored one at a time so the result does not depend on sample
    order or batch composition.
    """
    proto = _check_proto(checkpoint, proto)
    part = dataset.split(split)
    if len(part) == 0:
        raise ConfigError(f"split {split!r} is empty")
    losses = []
    hits = {}
    for img, y in zip(part.images, part.labels):
        scores, loss = _batch_scores(checkpoint, proto, img[None], np.array([y]))
        losses.append(float(loss[0]))
        hits.setdefault(int(y), []).append(int(np.argmin(scores[0])) == y)
    counts = {c: len(hits.get(c, ())) for c in range(proto.n_classes)}
    per_class = {c: (sum(hits[c]) / len(hits[c]) if c in hits else None) for c in range(proto.n_classes)}
    correct = sum(sum(h) for h in hits.values())
    return Metrics(correct / len(part), math.fsum(losses) / len(part), per_class, counts, correct, len(part))


@dataclass
class SweepRow:
    mode: str
    shots: int
    seed: int
    split: str
    accuracy: float
    mean_loss: float


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    def summary(self):
        """``{shots: (mean accuracy, std)}`` in ascending shot order; std uses ddof=1."""
        out = {}
        for k in sorted({r.shots for r in self.rows}):
            accs = np.array([r.accuracy for r in self.rows if r.shots == k])
            std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
            out[k] = (float(np.mean(accs)), std)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for r in self.rows:
            writer.writerow([r.mode, r.shots, r.seed, r.split, f"{r.accuracy:.6f}", f"{r.mean_loss:.6f}"])
        return buf.getvalue()

    def to_markdown(self) -> str:
        modes = sorted({r.mode for r in self.rows})
        label = "/".join(modes) or "-"
        lines = [f"| Shots | {label} accuracy (%) |", "|---:|:---:|"]
        for k, (mean, std) in self.summary().items():
            name = "0 images" if k == 0 else f"{k} images"
            lines.append(f"| {name} | {100 * mean:.2f} ± {100 * std:.2f} |")
        return "\n".join(lines) + "\n"


def _sweep_cell(args):
    pretrained, proto, source_pool, target, k, run, config = args
    seed = config.seed + run
    rng = np.random.default_rng(seed)
    shots = sample_shots(target, k, proto.n_classes, rng, config.shots_per_class)
    tuned = finetune(pretrained, shots, source_pool, config, proto)
    m = evaluate(tuned, proto, target, "test")
    return SweepRow(pretrained.mode, k, seed, "test", m.accuracy, m.mean_loss)


def fewshot_sweep(pretrained: Checkpoint, source: Dataset, target: Dataset, shots=DEFAULT_SHOTS, runs=10,
                  config: TrainConfig | None = None, proto=None, jobs=1) -> SweepResult:
    """Zero-shot evaluation once, then ``runs`` fine-tune/evaluate cells per shot count.

    Run ``r`` samples its shots with seed ``config.seed + r``; fine-tuning
    itself always uses ``config.seed``. Rows come out ordered by (shots, run)
    whatever ``jobs`` is.
    """
    config = (config or TrainConfig(mode=pretrained.mode)).validate()
    proto = _check_proto(pretrained, proto)
    shots = sorted(set(int(k) for k in shots))
    if not shots or shots[0] < 0:
        raise ConfigError("shot counts must be non-negative")
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if not target.has_split("test"):
        raise ConfigError("target dataset needs a 'test' split")
    biggest = max(shots)
    train_labels = target.split("train").labels
    for c, want in _per_class_shots(train_labels, biggest, proto.n_classes, config.shots_per_class).items():
        have = int(np.sum(train_labels == c))
        if have < want:
            raise ConfigError(f"target train pool has {have} images of class {c}, {want} needed")
    result = SweepResult()
    if 0 in shots:
        m = evaluate(pretrained, proto, target, "test")
        result.rows.append(SweepRow(pretrained.mode, 0, config.seed, "test", m.accuracy, m.mean_loss))
    source_pool = source.class_pool("train")
    cells = [(pretrained, proto, source_pool, target, k, r, config) for k in shots if k > 0 for r in range(runs)]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            result.rows.extend(ex.map(_sweep_cell, cells))
    else:
        result.rows.extend(_sweep_cell(c) for c in cells)
    return result
