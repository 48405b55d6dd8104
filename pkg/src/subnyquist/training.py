"""l2 training of the U-net with RMSProp."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .kspace import SamplingMask, kspace_from_image, zero_fill_recon
from .unet import UNetConfig, UNetWeights, init_weights, unet_backward, unet_forward

__all__ = [
    "NonFiniteError",
    "TrainConfig",
    "TrainState",
    "TrainingPair",
    "l2_loss",
    "load_train_config",
    "make_training_pairs",
    "rmsprop_step",
    "save_train_config",
    "train",
    "write_loss_history",
]

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    """Training produced a NaN or infinite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    rms_decay: float = 0.9
    batch_size: int = 32
    epochs: int = 150
    seed: int = 0
    epsilon: float = 1e-12
    dtype: str = "float32"
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.rms_decay < 1:
            raise ValueError("rms_decay must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainState:
    weights: UNetWeights
    rms: dict[str, np.ndarray]
    epoch: int = 0
    history: list[float] = field(default_factory=list)

    @classmethod
    def fresh(cls, weights: UNetWeights) -> "TrainState":
        return cls(weights, weights.zeros_like())


@dataclass(frozen=True)
class TrainingPair:
    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ValueError(f"input {self.input.shape} and target {self.target.shape} differ in shape")


def l2_loss(prediction: np.ndarray, target: np.ndarray) -> float:
    """Pixel-mean squared error per image, averaged over a batch.

    Accepts single ``(N, N)`` images or ``(B, N, N)`` batches.
    """
    prediction, target = np.asarray(prediction), np.asarray(target)
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    diff = (prediction - target).astype(np.float64)
    return float(np.mean(diff**2))


def rmsprop_step(state: TrainState, gradients: dict[str, np.ndarray], config: TrainConfig) -> TrainState:
    """One RMSProp update, in place; returns ``state`` for chaining.

    ``acc <- decay*acc + (1 - decay)*g**2`` and ``w <- w - lr*g/sqrt(acc + eps)``.
    """
    for name, g in gradients.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in layer {name} (epoch {state.epoch})")
    decay, lr, eps = config.rms_decay, config.learning_rate, config.epsilon
    for name, g in gradients.items():
        w, acc = state.weights.kernels[name], state.rms[name]
        if g.shape != w.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != weight shape {w.shape}")
        acc *= decay
        acc += (1.0 - decay) * g * g
        w -= lr * g / np.sqrt(acc + eps)
    return state


def make_training_pairs(images, mask: SamplingMask) -> list[TrainingPair]:
    """(aliased zero-filled image, ground truth) for every image."""
    pairs = []
    for y in images:
        if y.shape != (mask.n, mask.n):
            raise ValueError(f"image shape {y.shape} does not match mask size {mask.n}")
        pairs.append(TrainingPair(zero_fill_recon(kspace_from_image(y, mask)), y))
    return pairs


def train(
    pairs: list[TrainingPair],
    config: TrainConfig,
    unet_config: UNetConfig,
    on_epoch: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Mini-batch RMSProp on the pixel-mean l2 loss.

    Weights are initialised from ``config.seed``; each epoch reshuffles the
    pairs with a generator derived from the same seed, and the short last
    batch is kept. ``on_epoch`` is called after every epoch.
    """
    if not pairs:
        raise ValueError("no training pairs")
    dtype = np.dtype(config.dtype)
    inputs = np.stack([p.input for p in pairs]).astype(dtype)
    targets = np.stack([p.target for p in pairs]).astype(dtype)
    if inputs.shape[1:] != (unet_config.input_size,) * 2:
        raise ValueError(f"pairs are {inputs.shape[1:]}, network expects {unet_config.input_size}")

    state = TrainState.fresh(init_weights(unet_config, config.seed).astype(dtype))
    order_rng = np.random.default_rng([config.seed, 1])
    m = len(pairs)
    for epoch in range(config.epochs):
        order = order_rng.permutation(m)
        total = 0.0
        for batch_no, start in enumerate(range(0, m, config.batch_size)):
            idx = order[start : start + config.batch_size]
            x, y = inputs[idx], targets[idx]
            pred, cache = unet_forward(state.weights, x, return_cache=True)
            diff = pred - y
            batch_loss = float(np.mean(diff.astype(np.float64) ** 2))
            if not np.isfinite(batch_loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch + 1}, batch {batch_no + 1}")
            total += batch_loss * len(idx)
            grad_out = diff * (2.0 / diff.size)
            del pred
            grads = unet_backward(state.weights, cache, grad_out)
            del cache
            rmsprop_step(state, grads, config)
        state.epoch += 1
        state.history.append(total / m)
        log.info("epoch %d/%d  loss %.6g", state.epoch, config.epochs, state.history[-1])
        if on_epoch is not None:
            on_epoch(state)
    return state


def write_loss_history(history: list[float], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(history, start=1):
            w.writerow([i, repr(float(v))])


def read_loss_history(path: str | Path) -> list[float]:
    with open(path, newline="") as fh:
        return [float(row["mean_loss"]) for row in csv.DictReader(fh)]


def save_train_config(config: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(config), indent=2) + "\n")


def load_train_config(path: str | Path) -> TrainConfig:
    return TrainConfig(**json.loads(Path(path).read_text()))
