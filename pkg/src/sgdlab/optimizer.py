"""Discrete SGD with momentum, random rate multiplier and the epoch loop.

One update reads

    v_{k+1} = mu * v_k - alpha * (grad + w * x_eval)
    x_{k+1} = x_k + l_tau * v_{k+1}

where alpha is the protocol's per-step multiplier, l_tau the per-epoch
rate, w the weight decay and x_eval the point where the mini-batch
gradient was evaluated (the look-ahead point x_k + l_tau * mu * v_k when
Nesterov acceleration is on, x_k otherwise; alpha multiplies the full
decayed gradient either way).

Each epoch shuffles the dataset, partitions it into floor(N / C) batches
of size C (the short remainder is dropped), and draws one alpha per batch.
Runs are deterministic given (seed, config): all randomness flows through
a single generator in a fixed order, and the degenerate random protocol
with half_width 0 consumes no draws, so it reproduces the constant
protocol bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError
from .objectives import Objective, minibatch_grad
from .protocols import ProtocolKind, ProtocolSpec, rate_at_epoch, sample_alpha

DIVERGENCE_NORM = 1e12


@dataclass
class HyperParams:
    """Optimizer hyperparameters; the mean learning rate lives inside the
    protocol spec."""

    batch_size: int
    protocol: ProtocolSpec
    momentum: float = 0.0
    nesterov: bool = False
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")

    @property
    def friction(self) -> float:
        """Friction coefficient (1 - mu) / l of the continuous limit."""
        return (1.0 - self.momentum) / self.protocol.base_rate


@dataclass
class OptimizerState:
    x: np.ndarray
    v: np.ndarray
    step: int = 0
    epoch: int = 0


def sgd_step(state: OptimizerState, grad: np.ndarray, alpha: float, rate: float,
             hyper: HyperParams, x_eval: np.ndarray | None = None) -> OptimizerState:
    """One momentum SGD update; raises DivergenceError on non-finite or
    runaway iterates, carrying the step index."""
    if grad.shape != state.x.shape:
        raise ConfigError(f"gradient dimension {grad.shape} does not match "
                          f"state dimension {state.x.shape}")
    if alpha < 0.0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    xe = state.x if x_eval is None else x_eval
    g = grad + hyper.weight_decay * xe if hyper.weight_decay else grad
    v_new = hyper.momentum * state.v - alpha * g
    x_new = state.x + rate * v_new
    if not np.all(np.isfinite(x_new)) or float(np.linalg.norm(x_new)) > DIVERGENCE_NORM:
        raise DivergenceError(f"training diverged at step {state.step}", step=state.step)
    return OptimizerState(x_new, v_new, state.step + 1, state.epoch)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float | None = None
    test_acc: float | None = None


@dataclass
class TrainingRecord:
    """Per-epoch metrics plus a summary of the alpha draws."""

    epochs: list[EpochStats] = field(default_factory=list)
    steps: int = 0
    alpha_mean: float = 0.0
    alpha_min: float = 0.0
    alpha_max: float = 0.0
    final_x: np.ndarray | None = None

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1].train_loss

    @property
    def final_test_acc(self) -> float | None:
        return self.epochs[-1].test_acc

    @property
    def best_test_acc(self) -> float | None:
        accs = [e.test_acc for e in self.epochs if e.test_acc is not None]
        return max(accs) if accs else None


Probe = Callable[[OptimizerState, EpochStats], None]


def train(objective: Objective, hyper: HyperParams, epochs: int,
          rng: np.random.Generator | int, probes: Sequence[Probe] = ()) -> TrainingRecord:
    """Run the epoch loop and record per-epoch loss/accuracy.

    rng may be a seed or a Generator; an int seed gives the canonical
    deterministic stream (initial point first, then per epoch one shuffle
    followed by one alpha draw per batch).
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be at least 1, got {epochs}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.Generator(np.random.PCG64(int(rng)))
    N = objective.sample_count
    C = hyper.batch_size
    if C > N:
        raise ConfigError(f"batch_size {C} exceeds dataset size {N}")
    n_batches = N // C
    protocol = hyper.protocol
    cyclic = protocol.kind is ProtocolKind.CYCLIC_COSINE

    x0 = objective.initial_point(rng)
    state = OptimizerState(x0, np.zeros_like(x0))
    record = TrainingRecord()
    alpha_sum, alpha_min, alpha_max = 0.0, np.inf, -np.inf

    for tau in range(epochs):
        l_tau = rate_at_epoch(protocol, tau)
        perm = rng.permutation(N)
        for b in range(n_batches):
            batch = perm[b * C:(b + 1) * C]
            alpha = 1.0 if cyclic else sample_alpha(protocol, rng)
            if hyper.nesterov and hyper.momentum:
                x_eval = state.x + l_tau * hyper.momentum * state.v
            else:
                x_eval = state.x
            grad = minibatch_grad(objective, x_eval, batch)
            state = sgd_step(state, grad, alpha, l_tau, hyper, x_eval=x_eval)
            alpha_sum += alpha
            alpha_min = min(alpha_min, alpha)
            alpha_max = max(alpha_max, alpha)
        state.epoch = tau + 1

        stats = EpochStats(epoch=tau + 1, lr=l_tau,
                           train_loss=objective.loss(state.x))
        if objective.is_classifier:
            stats.train_acc = objective.train_accuracy(state.x)
            stats.test_acc = objective.test_accuracy(state.x)
        record.epochs.append(stats)
        for probe in probes:
            probe(state, stats)

    record.steps = state.step
    record.alpha_mean = alpha_sum / state.step if state.step else 0.0
    record.alpha_min = float(alpha_min) if state.step else 0.0
    record.alpha_max = float(alpha_max) if state.step else 0.0
    record.final_x = state.x
    return record


def _fmt(value: float | None) -> str:
    # repr of a python float round-trips exactly, keeping CSVs byte-stable
    return "" if value is None else repr(float(value))


def write_run_csv(record: TrainingRecord, path) -> None:
    """One row per epoch: epoch, lr, train_loss, train_acc, test_acc."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "lr", "train_loss", "train_acc", "test_acc"])
        for e in record.epochs:
            writer.writerow([e.epoch, _fmt(e.lr), _fmt(e.train_loss),
                             _fmt(e.train_acc), _fmt(e.test_acc)])


def read_run_csv(path) -> list[EpochStats]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(EpochStats(
                epoch=int(row["epoch"]),
                lr=float(row["lr"]),
                train_loss=float(row["train_loss"]),
                train_acc=float(row["train_acc"]) if row["train_acc"] else None,
                test_acc=float(row["test_acc"]) if row["test_acc"] else None,
            ))
    return rows


def write_run_summary(record: TrainingRecord, path, extra: dict | None = None) -> None:
    """Structured JSON summary of a finished run."""
    summary = {
        "steps": record.steps,
        "alpha_mean": record.alpha_mean,
        "alpha_min": record.alpha_min,
        "alpha_max": record.alpha_max,
        "final_train_loss": record.final_train_loss,
        "final_test_acc": record.final_test_acc,
        "best_test_acc": record.best_test_acc,
        "epochs": len(record.epochs),
    }
    if extra:
        summary.update(extra)
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
