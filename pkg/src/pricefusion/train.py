"""Loss, RMSProp optimizer and the mini-batch training loop.

The loss is mean categorical cross-entropy over the batch plus an L1
penalty ``alpha * sum(|w|)`` over the weight tensors of trainable Dense
and Conv2D layers (biases excluded). Training is deterministic for a
given seed: epoch order comes from a seeded Fisher-Yates shuffle and the
last short batch is kept.
"""

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .tensor import ShapeError

NUM_CLASSES = 4


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message names the epoch and batch."""


@dataclass
class TrainingConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    l1_alpha: float = 0.1
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        # zero is allowed so a frozen-parameter run can be expressed directly
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError(f"rmsprop_decay must be in (0,1), got {self.rmsprop_decay}")
        if self.l1_alpha < 0:
            raise ValueError(f"l1_alpha must be >= 0, got {self.l1_alpha}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def as_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "rmsprop_decay": self.rmsprop_decay,
            "rmsprop_epsilon": self.rmsprop_epsilon,
            "l1_alpha": self.l1_alpha,
            "epochs": self.epochs,
            "seed": self.seed,
        }


def l1_penalty(weight_arrays, l1_alpha):
    if l1_alpha == 0:
        return 0.0
    return l1_alpha * float(sum(np.abs(w).sum() for w in weight_arrays))


def loss_ce_l1(probs, labels, weight_arrays=(), l1_alpha=0.0):
    """Mean cross-entropy over the batch plus the L1 weight penalty."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    row_sums = probs.sum(axis=-1)
    if not np.allclose(row_sums, 1.0, atol=1e-5):
        raise ValueError("probability rows must sum to 1 within 1e-5")
    if labels.min() < 0 or labels.max() >= NUM_CLASSES:
        bad = labels[(labels < 0) | (labels >= NUM_CLASSES)][0]
        raise ValueError(f"label {bad} outside 0..{NUM_CLASSES - 1}")
    picked = probs[np.arange(len(labels)), labels]
    ce = -float(np.mean(np.log(np.maximum(picked, 1e-12))))
    return ce + l1_penalty(weight_arrays, l1_alpha)


def ce_grad(probs, labels):
    """Gradient of mean cross-entropy w.r.t. the probabilities."""
    n = len(labels)
    grad = np.zeros_like(probs)
    picked = np.maximum(probs[np.arange(n), labels], 1e-12)
    grad[np.arange(n), labels] = -1.0 / (n * picked)
    return grad


class RmspropState:
    """Running mean of squared gradients, one slot per parameter."""

    def __init__(self, param_list):
        self.cells = [np.zeros_like(arr, dtype=np.float32) for _, _, arr in param_list]


def rmsprop_step(param_list, grads, state, cfg):
    """One RMSProp update in place over (layer, name, array) triples."""
    if len(grads) != len(param_list) or len(state.cells) != len(param_list):
        raise ShapeError("params, grads and optimizer state are misaligned")
    for i, (layer, name, param) in enumerate(param_list):
        g = grads[i].astype(np.float32)
        if g.shape != param.shape:
            raise ShapeError(
                f"grad shape {g.shape} != param shape {param.shape} for {layer.kind}.{name}"
            )
        cell = state.cells[i]
        cell *= cfg.rmsprop_decay
        cell += (1.0 - cfg.rmsprop_decay) * g * g
        layer.params[name] = param - cfg.learning_rate * g / (np.sqrt(cell) + cfg.rmsprop_epsilon)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    train_accuracy: float


@dataclass
class TrainResult:
    model: object
    trace: list = field(default_factory=list)


def train(model, features, labels, cfg, aux=None):
    """Train a model graph with RMSProp; returns the per-epoch loss trace.

    ``aux`` is the second-modality batch source (image stack or external
    embedding matrix) for multimodal graphs, aligned row-for-row with
    ``features``.
    """
    n = len(features)
    if n == 0:
        raise ValueError("empty dataset")
    if model.needs_aux and aux is None:
        raise ValueError(f"model {model.builder_id} needs a second modality input")
    rng = Rng(cfg.seed)
    params = model.parameters()
    state = RmspropState(params)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.shuffled_indices(n)
        losses = []
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = features[idx]
            ab = aux[idx] if aux is not None else None
            yb = labels[idx]
            probs = model.forward(xb, ab)
            if not np.all(np.isfinite(probs)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            weights = [
                arr for layer, name, arr in model.parameters()
                if name == "weight" and getattr(layer, "regularized", False)
            ]
            loss = loss_ce_l1(probs, yb, weights, cfg.l1_alpha)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            losses.append(loss)
            correct += int((probs.argmax(axis=1) == yb).sum())
            grads = model.backward(ce_grad(probs, yb))
            if cfg.l1_alpha > 0:
                _add_l1_grads(model, grads, cfg.l1_alpha)
            params = model.parameters()
            flat_grads = [grads[(id(layer), name)] for layer, name, _ in params]
            rmsprop_step(params, flat_grads, state, cfg)
        trace.append(
            EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), train_accuracy=correct / n)
        )
    return TrainResult(model=model, trace=trace)


def _add_l1_grads(model, grads, alpha):
    # subgradient of |w|: sign(w), 0 at exactly 0
    for layer, name, arr in model.parameters():
        if name == "weight" and getattr(layer, "regularized", False):
            grads[(id(layer), name)] = grads[(id(layer), name)] + alpha * np.sign(arr)
