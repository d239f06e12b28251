"""Training loop, evaluation and single-image prediction."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import (
    AugmentConfig,
    DataError,
    ImageLoader,
    batch_iter,
    load_image,
    load_manifest,
    scan_dataset,
    split,
    stratified_partition,
)
from .metrics import EvalReport, confusion
from .models import Model, build_spec, fine_tune_setup
from .nn import SGD, SgdConfig, softmax, softmax_cross_entropy

logger = logging.getLogger(__name__)

CACHE_LIMIT = 2048


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    model: str = "paper-cnn"
    data: str | None = None
    manifest: str | None = None
    epochs: int = 1
    batch: int = 64
    lr: float = 0.001
    momentum: float = 0.0
    val_every: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    ratio: float = 0.8
    augment: bool = False
    flip_prob: float = 0.5
    jitter: float = 0.1
    out: str | None = None
    init_checkpoint: str | None = None
    fine_tune: str = "none"
    precision: str = "float32"
    input_size: int | None = None
    channels: int | None = None
    target_train_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.val_every < 1:
            raise ValueError("validation frequency must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if self.fine_tune not in ("none", "head"):
            raise ValueError("fine-tune mode must be 'none' or 'head'")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    epoch_train_accuracy: list = field(default_factory=list)
    final_train_accuracy: float | None = None
    iterations: int = 0
    epochs_completed: int = 0
    wall_time_s: float = 0.0

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


@dataclass
class TrainResult:
    model: Model
    history: TrainHistory
    dataset: object
    manifest: object
    train_ids: list
    val_ids: list


def _corpus(config: TrainConfig):
    if config.manifest:
        dataset, manifest = load_manifest(config.manifest, root=config.data)
    elif config.data:
        dataset = scan_dataset(config.data)
        manifest = split(dataset, config.ratio, config.seed)
    else:
        raise DataError("training needs --data or --manifest")
    return dataset, manifest


def _build_model(config: TrainConfig, num_classes: int) -> Model:
    dtype = np.dtype(config.precision)
    if config.init_checkpoint:
        model = ckpt.load_checkpoint(config.init_checkpoint, expected_name=config.model,
                                     dtype=dtype, seed=config.seed)
        if model.spec.num_classes != num_classes:
            raise DataError(f"checkpoint predicts {model.spec.num_classes} classes, corpus has {num_classes}")
        model.metadata = {}
    else:
        spec = build_spec(config.model, config.channels, config.input_size, num_classes)
        model = Model(spec, seed=config.seed, dtype=dtype)
    fine_tune_setup(model, "head" if config.fine_tune == "head" else "none")
    return model


def make_loaders(dataset, spec, augment: AugmentConfig | None, cache=False, dtype=np.float32):
    """Train and eval loaders matching a model's input contract."""
    c, h, _ = spec.input_shape
    if augment is not None and augment.enabled and augment.crop_size:
        size = max(h, round(h * 256 / 224))
        crop = h
    else:
        size, crop = h, None
    train = ImageLoader(dataset, c, size, crop, augment, train=True, cache=cache, dtype=dtype)
    evaluate = ImageLoader(dataset, c, size, crop, None, train=False, cache=cache, dtype=dtype)
    return train, evaluate


def _loss_and_accuracy(model, dataset, ids, loader, batch_size):
    losses, correct = [], 0
    for images, labels, _ in batch_iter(dataset, ids, batch_size, shuffle=False, loader=loader):
        logits = model.forward(images, train=False)
        loss, _, _ = softmax_cross_entropy(logits, labels)
        losses.append(loss * len(labels))
        correct += int((logits.argmax(axis=1) == labels).sum())
    return sum(losses) / len(ids), correct / len(ids)


def carve_validation(dataset, train_ids, fraction, seed):
    """Hold out floor(fraction * n_c) training samples per class for validation.

    Returns ``(val_ids, remaining_train_ids)``.
    """
    return stratified_partition(dataset.labels, train_ids, fraction, seed,
                                dataset.num_classes, strict=False)


def train(config: TrainConfig) -> TrainResult:
    """Run a full training job. Writes the checkpoint and history when ``config.out`` is set."""
    start = time.perf_counter()
    dataset, manifest = _corpus(config)
    val_ids, train_side = carve_validation(dataset, manifest.train, config.val_fraction, config.seed)
    if not train_side:
        raise DataError("training side is empty after carving the validation subset")
    model = _build_model(config, dataset.num_classes)
    dtype = model.dtype
    aug = None
    if config.augment:
        aug = AugmentConfig(crop_size=model.spec.input_shape[1], flip_prob=config.flip_prob,
                            jitter=config.jitter, seed=config.seed)
    cache = len(train_side) + len(val_ids) <= CACHE_LIMIT
    train_loader, eval_loader = make_loaders(dataset, model.spec, aug, cache, dtype)
    opt = SGD(SgdConfig(config.lr, config.momentum))
    history = TrainHistory()
    logger.info("training %s on %d samples (%d held out for validation), %d params",
                model.spec.name, len(train_side), len(val_ids), model.parameter_count())

    it = 0
    for epoch in range(config.epochs):
        correct = 0
        for images, labels, _ in batch_iter(dataset, train_side, config.batch, epoch,
                                            config.seed, loader=train_loader):
            it += 1
            logits = model.forward(images, train=True)
            loss, _, grad = softmax_cross_entropy(logits, labels)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at iteration {it} (epoch {epoch + 1})")
            model.backward(grad.astype(dtype, copy=False))
            opt.step(model)
            history.train_loss.append(loss)
            correct += int((logits.argmax(axis=1) == labels).sum())
            logger.info("epoch %d iter %d loss %.6f", epoch + 1, it, loss)
            if val_ids and it % config.val_every == 0:
                vloss, vacc = _loss_and_accuracy(model, dataset, val_ids, eval_loader, config.batch)
                history.validations.append({"iteration": it, "loss": vloss, "accuracy": vacc})
                logger.info("validation iter %d loss %.6f accuracy %.4f", it, vloss, vacc)
        history.epoch_train_accuracy.append(correct / len(train_side))
        history.epochs_completed = epoch + 1
        if (config.target_train_accuracy is not None
                and history.epoch_train_accuracy[-1] >= config.target_train_accuracy):
            # batch accuracy predates the last update; confirm on the current weights
            _, acc = _loss_and_accuracy(model, dataset, train_side, eval_loader, config.batch)
            if acc >= config.target_train_accuracy:
                break
    history.iterations = it
    _, history.final_train_accuracy = _loss_and_accuracy(model, dataset, train_side, eval_loader,
                                                         config.batch)
    model.metadata = {
        "class_names": list(dataset.class_names),
        "epochs": history.epochs_completed,
        "seed": config.seed,
        "final_train_loss": history.train_loss[-1],
        "preprocess": {"size": eval_loader.size, "crop": eval_loader.crop,
                       "channels": model.spec.input_shape[0]},
    }
    history.wall_time_s = time.perf_counter() - start
    if config.out:
        ckpt.save_checkpoint(model, config.out)
        history.save(history_path(config.out))
    return TrainResult(model, history, dataset, manifest, train_side, val_ids)


def history_path(checkpoint_path) -> Path:
    p = Path(checkpoint_path)
    return p.with_name(p.name + ".history.json")


def predict_classes(model: Model, dataset, ids, loader, batch_size=64) -> np.ndarray:
    """Eval-mode argmax predictions (ties resolve to the lowest class id)."""
    preds = []
    for images, _, _ in batch_iter(dataset, ids, batch_size, shuffle=False, loader=loader):
        preds.append(model.forward(images, train=False).argmax(axis=1))
    return np.concatenate(preds)


def _eval_loader(model: Model, dataset):
    pre = model.metadata.get("preprocess") or {}
    c, h, _ = model.spec.input_shape
    return ImageLoader(dataset, c, pre.get("size", h), pre.get("crop"), None, train=False,
                       dtype=model.dtype)


def evaluate(model: Model, dataset, ids=None, batch_size=64, name=None) -> EvalReport:
    """Confusion matrix and accuracy of ``model`` over ``ids`` (all samples by default)."""
    start = time.perf_counter()
    if model.spec.num_classes != dataset.num_classes:
        raise DataError(f"model predicts {model.spec.num_classes} classes, corpus has {dataset.num_classes}")
    ids = list(range(len(dataset))) if ids is None else list(ids)
    preds = predict_classes(model, dataset, ids, _eval_loader(model, dataset), batch_size)
    cm = confusion(preds, dataset.labels[ids], dataset.num_classes, dataset.class_names)
    return EvalReport.from_confusion(name or model.spec.name, cm, time.perf_counter() - start,
                                     int(model.metadata.get("epochs", 0)),
                                     int(model.metadata.get("seed", 0)))


def predict_image(model: Model, path):
    """Return ``(class name, probability vector)`` for one image file."""
    pre = model.metadata.get("preprocess") or {}
    c, h, _ = model.spec.input_shape
    size = pre.get("size", h)
    img = load_image(path, (c, size, size), dtype=model.dtype)
    crop = pre.get("crop")
    if crop:
        top = (size - crop) // 2
        img = img[:, top:top + crop, top:top + crop]
    probs = softmax(model.forward(img[None], train=False).astype(np.float64))[0]
    names = model.metadata.get("class_names") or [str(i) for i in range(len(probs))]
    return names[int(np.argmax(probs))], probs
