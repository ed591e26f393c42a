"""VGG-16-shaped classifier trained with cross-entropy and Adam."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataio import normalize, resize_bilinear, stratified_assign, write_csv
from .errors import EmptyClass, IndivisibleInputSize, InvalidConfig, NonFiniteLoss, ShapeMismatch
from .losses import cross_entropy
from .nn import NetworkSpec, init_params
from .nn.functional import softmax
from .optim import AdamState
from .tensor import Rng, Tape, Tensor, backward, no_grad

log = logging.getLogger(__name__)

POOL = "P"
VGG16_CONV_PLAN = (64, 64, POOL, 128, 128, POOL, 256, 256, 256, POOL,
                   512, 512, 512, POOL, 512, 512, 512, POOL)
VGG16_DENSE_PLAN = (4096, 4096)


@dataclass
class VggSpec:
    num_classes: int = 3
    channels: int = 3
    input_size: int = 224
    width_scale: float = 1.0
    conv_plan: tuple = VGG16_CONV_PLAN
    dense_plan: tuple = VGG16_DENSE_PLAN

    def scaled(self, width: int) -> int:
        return max(1, int(round(width * self.width_scale)))


def build_vgg16(spec: VggSpec) -> NetworkSpec:
    """3x3/stride-1/pad-1 conv + ReLU blocks, 2x2 max pools, then the dense head.

    The last dense layer emits logits; softmax is applied by the loss and by
    :func:`predict_proba`.
    """
    if spec.num_classes < 2:
        raise InvalidConfig("num_classes must be >= 2")
    if spec.width_scale <= 0:
        raise InvalidConfig("width_scale must be positive")
    n_pools = sum(1 for c in spec.conv_plan if c == POOL)
    if spec.input_size < 2 ** n_pools or spec.input_size % 2 ** n_pools:
        raise IndivisibleInputSize(
            f"input_size {spec.input_size} is not a positive multiple of {2 ** n_pools}")
    layers = []
    ch = spec.channels
    for entry in spec.conv_plan:
        if entry == POOL:
            layers.append(nn.maxpool(2, 2))
        else:
            out = spec.scaled(entry)
            layers += [nn.conv(ch, out, 3, 1, 1), nn.act("relu")]
            ch = out
    side = spec.input_size // 2 ** n_pools
    layers.append(nn.flatten_layer())
    features = ch * side * side
    for width in spec.dense_plan:
        out = spec.scaled(width)
        layers += [nn.dense_layer(features, out), nn.act("relu")]
        features = out
    layers.append(nn.dense_layer(features, spec.num_classes))
    meta = {"input_size": spec.input_size, "width_scale": spec.width_scale}
    return NetworkSpec((spec.channels, spec.input_size, spec.input_size), layers, "vgg16", meta)


@dataclass
class ClfTrainConfig:
    num_classes: int = 3
    channels: int = 3
    input_size: int = 224
    epochs: int = 75
    batch_size: int = 32
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    val_fraction: float = 0.1
    width_scale: float = 1.0
    input_scaling: str = "clf"
    stop_at_train_acc: float = 0.0

    def validate(self) -> "ClfTrainConfig":
        if not 0 < self.val_fraction < 1:
            raise InvalidConfig("val_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise InvalidConfig("epochs/batch_size/lr out of range")
        if self.input_scaling != "clf":
            raise InvalidConfig("input_scaling supports only 'clf' ([0, 1] pixels)")
        return self

    def vgg_spec(self) -> VggSpec:
        return VggSpec(self.num_classes, self.channels, self.input_size, self.width_scale)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingCurves:
    epochs: list[EpochStats] = field(default_factory=list)

    HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

    def rows(self) -> list[tuple]:
        return [(e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc) for e in self.epochs]

    def to_csv(self, path) -> None:
        write_csv(path, self.HEADER, self.rows())


@dataclass
class ClassifierResult:
    model: NetworkSpec
    best_model: NetworkSpec
    curves: TrainingCurves
    splits: list[str]
    best_epoch: int = 0


def prepare_images(pixels, input_size: int) -> Tensor:
    """uint8 (N, H, W, C) -> NCHW tensor in [0, 1] at ``input_size`` squared."""
    arr = np.asarray(pixels)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected (N, H, W, C) images, got {arr.shape}")
    if arr.shape[1:3] != (input_size, input_size):
        arr = np.stack([resize_bilinear(im, input_size, input_size) for im in arr])
    return normalize(arr, "clf")


def _inputs(model: NetworkSpec, images) -> np.ndarray:
    if isinstance(images, Tensor):
        return images.data
    arr = np.asarray(images)
    if arr.dtype == np.uint8:
        return prepare_images(arr, model.input_shape[1]).data
    return arr.astype(np.float32, copy=False)


def _logits(model: NetworkSpec, x: np.ndarray, batch: int = 64) -> np.ndarray:
    out = []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for start in range(0, x.shape[0], batch):
                out.append(model(Tensor(x[start:start + batch])).data)
    finally:
        model.training = was_training
    return np.concatenate(out) if out else np.zeros((0,) + model.output_shape, np.float32)


def predict_proba(model: NetworkSpec, images, batch: int = 64) -> Tensor | np.ndarray:
    """Softmax class probabilities, one row per image.

    ``images`` may be uint8 (N, H, W, C) pixels (resized and scaled here) or an
    already prepared NCHW tensor.
    """
    x = _inputs(model, images)
    if tuple(x.shape[1:]) != model.input_shape:
        raise ShapeMismatch(f"model expects (N, {model.input_shape}), got {x.shape}")
    logits = _logits(model, x, batch)
    if logits.shape[0] == 0:
        return logits
    return softmax(Tensor(logits))


def classify(model: NetworkSpec, images) -> list[int]:
    """Arg-max class per image; ties go to the lowest index."""
    probs = predict_proba(model, images)
    data = probs.data if isinstance(probs, Tensor) else probs
    return [int(i) for i in np.argmax(data, axis=1)]


def _evaluate(model: NetworkSpec, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    logits = _logits(model, x)
    loss = cross_entropy(Tensor(logits), y).item()
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, acc


def train_classifier(images, labels, cfg: ClfTrainConfig, on_epoch=None) -> ClassifierResult:
    """Train a VGG classifier from scratch on ``images`` (uint8 NHWC or prepared NCHW).

    A stratified ``val_fraction`` of every class is held out.  Per-epoch train
    loss/accuracy are running means over the epoch's batches; validation
    metrics are computed after the epoch.  The parameters with the best
    validation accuracy are kept alongside the final ones.  Training stops
    early once train accuracy reaches ``stop_at_train_acc`` (if > 0).
    """
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    x_all = images.data if isinstance(images, Tensor) else np.asarray(images)
    if x_all.dtype == np.uint8:
        x_all = prepare_images(x_all, cfg.input_size).data
    if x_all.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"{x_all.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.num_classes):
        raise InvalidConfig(f"labels must lie in [0, {cfg.num_classes})")

    splits = np.asarray(stratified_assign(labels, cfg.num_classes, cfg.val_fraction, cfg.seed))
    train_idx = np.flatnonzero(splits == "train")
    val_idx = np.flatnonzero(splits == "val")
    for k in range(cfg.num_classes):
        if not np.any(labels[train_idx] == k) or not np.any(labels[val_idx] == k):
            raise EmptyClass(f"class {k} needs at least one training and one validation image")

    root = Rng(cfg.seed)
    model = init_params(build_vgg16(cfg.vgg_spec()), root.spawn(1), "he")
    opt = AdamState(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    shuffle_rng = root.spawn(2)
    curves = TrainingCurves()
    best = copy.deepcopy(model)
    best_acc, best_epoch = -1.0, 0
    x_val, y_val = x_all[val_idx], labels[val_idx]

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            model.zero_grad()
            with Tape() as tape:
                logits = model(Tensor(x_all[idx]))
                loss = cross_entropy(logits, labels[idx])
                backward(tape, loss)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"classifier loss is {value} at epoch {epoch}")
            opt.step()
            loss_sum += value * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels[idx]))
        train_loss = loss_sum / len(order)
        train_acc = correct / len(order)
        val_loss, val_acc = _evaluate(model, x_val, y_val)
        curves.epochs.append(EpochStats(epoch, train_loss, train_acc, val_loss, val_acc))
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best = copy.deepcopy(model)
        log.debug("epoch %d loss=%.4f acc=%.3f val_acc=%.3f", epoch, train_loss, train_acc, val_acc)
        if on_epoch is not None:
            on_epoch(epoch, model, curves)
        if cfg.stop_at_train_acc > 0 and train_acc >= cfg.stop_at_train_acc:
            break

    return ClassifierResult(model, best, curves, splits.tolist(), best_epoch)
