"""Mini-batch SGD training with cost tracking, epoch checkpoints,
thresholded prediction and cost-curve averaging."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from . import nn_core
from .errors import ConfigError, DivergenceError, ShapeError


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.1
    momentum: float = 0.0
    threshold: float | None = None  # None: 0.5 sigmoid head, 1/L softmax head
    seed: int = 0
    loss: str = nn_core.LOSS_PER_TAG_CE
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.threshold is not None and not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must be strictly inside (0, 1)")
        if self.loss not in (nn_core.LOSS_PER_TAG_CE, nn_core.LOSS_SOFTMAX_CE):
            raise ConfigError(f"unknown loss {self.loss!r}")

    def resolve_threshold(self, num_tags: int, head: str) -> float:
        if self.threshold is not None:
            return self.threshold
        return 0.5 if head == nn_core.HEAD_SIGMOID else 1.0 / num_tags


@dataclass
class TrainHistory:
    costs: list = field(default_factory=list)
    val_macro_f1: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def __len__(self):
        return len(self.costs)


def predict_tags(scores, threshold):
    """Binary tags: score > threshold, falling back to the argmax tag so
    predictions are never empty."""
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    if single:
        s = s[None]
    pred = (s > threshold).astype(np.int64)
    empty = pred.sum(axis=1) == 0
    if np.any(empty):
        pred[empty, s[empty].argmax(axis=1)] = 1
    return pred[0] if single else pred


def _as_xy(dataset):
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} inputs vs {y.shape[0]} label rows")
    return x, y


def scores_for(params, x, batch_size=64):
    """Inference-mode scores for a stack of spectrograms."""
    outs = []
    for lo in range(0, len(x), batch_size):
        s, _ = nn_core.forward_batch(params, x[lo:lo + batch_size])
        outs.append(s)
    return np.concatenate(outs, axis=0)


def train(params, train_set, valid_set, config: TrainConfig,
          epoch_callback=None):
    """SGD with optional momentum; fully deterministic for a fixed seed.

    Returns (trained params, history). `epoch_callback(epoch, params)` runs
    after each epoch (used by the CV harness for per-epoch test evaluation).
    """
    params = params.copy()
    x, y = _as_xy(train_set)
    if len(x) == 0:
        raise ConfigError("empty training set")
    k = params.config.input_k
    if x.shape[-2:] != (k, k):
        raise ConfigError(f"spectrogram side {x.shape[-2:]} != model input {k}")
    history = TrainHistory()
    if config.epochs == 0:
        return params, history

    threshold = config.resolve_threshold(params.config.num_tags, params.config.head)
    shuffle_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    velocity = {name: np.zeros_like(arr) for name, arr in params.param_arrays()}

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(x))
        total_cost = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            cost, grads = nn_core.model_cost_and_grads(
                params, x[idx], y[idx], config.loss,
                rng=dropout_rng, training=True)
            total_cost += cost * len(idx)
            flat = [(f"conv{i}.weights", g[0]) for i, g in enumerate(grads["conv"])]
            flat += [(f"conv{i}.bias", g[1]) for i, g in enumerate(grads["conv"])]
            flat += [(f"dense{i}.weights", g[0]) for i, g in enumerate(grads["dense"])]
            flat += [(f"dense{i}.bias", g[1]) for i, g in enumerate(grads["dense"])]
            arrays = dict(params.param_arrays())
            for name, g in flat:
                v = velocity[name]
                v *= config.momentum
                v += g
                arrays[name] -= config.learning_rate * v
        epoch_cost = total_cost / len(x)
        if not math.isfinite(epoch_cost):
            raise DivergenceError(f"non-finite cost at epoch {epoch}")
        history.costs.append(epoch_cost)

        if valid_set is not None and len(valid_set[0]) > 0:
            vx, vy = _as_xy(valid_set)
            vs = scores_for(params, vx)
            vp = predict_tags(vs, threshold)
            _, _, f1 = metrics_mod.prf_macro(vy, vp)
            history.val_macro_f1.append(f1)

        if config.checkpoint_dir is not None:
            os.makedirs(config.checkpoint_dir, exist_ok=True)
            path = os.path.join(config.checkpoint_dir, f"epoch_{epoch:04d}.smm")
            nn_core.save_checkpoint(path, params)
            history.checkpoints.append(path)

        if epoch_callback is not None:
            epoch_callback(epoch, params)
    return params, history


def cost_curve_average(costs, window: int = 10):
    """Non-overlapping window means over the cost history; a trailing
    partial window is averaged over its own length."""
    if window < 1:
        raise ConfigError("window must be >= 1")
    costs = list(getattr(costs, "costs", costs))
    points = []
    for i, lo in enumerate(range(0, len(costs), window)):
        chunk = costs[lo:lo + window]
        points.append((i, float(np.mean(chunk))))
    return points


def select_benchmark_epochs(history, valid_metrics=None, n: int = 10):
    """Indices of the n consecutive epochs with maximal mean validation
    macro-F1; ties go to the earliest window. Fewer than n epochs: all."""
    scores = list(valid_metrics if valid_metrics is not None
                  else history.val_macro_f1)
    total = len(scores) if scores else len(history)
    if total <= n:
        return list(range(total))
    if not scores:
        return list(range(total - n, total))  # no validation signal: last n
    best_start, best_mean = 0, -np.inf
    for start in range(0, len(scores) - n + 1):
        mean = float(np.mean(scores[start:start + n]))
        if mean > best_mean + 1e-15:
            best_start, best_mean = start, mean
    return list(range(best_start, best_start + n))


def write_history_csv(path, history: TrainHistory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "cost", "val_macro_f1"])
        for i, cost in enumerate(history.costs):
            val = history.val_macro_f1[i] if i < len(history.val_macro_f1) else ""
            writer.writerow([i, f"{cost:.12g}", val])


def plot_cost_curve(path, history, window: int = 10) -> None:
    """Fig-style averaged cost curve as an SVG line chart."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    points = cost_curve_average(history, window)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(f"window of {window} epochs")
    ax.set_ylabel("mean cost")
    ax.set_title("Training cost")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
