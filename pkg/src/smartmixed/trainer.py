"""Two-phase training schedule, fixed-activation baselines and evaluation."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from smartmixed.activations import ActivationKind
from smartmixed.checkpoint import parameter_checksum
from smartmixed.data import DataSplits, Dataset, batches
from smartmixed.errors import ConfigError
from smartmixed.grouped import (
    ActivationAssignment,
    NetworkMixed,
    extract_assignment,
    freeze,
    grouped_backward,
    grouped_forward,
)
from smartmixed.gumbel import NoiseMode
from smartmixed.network import (
    LayeredNetwork,
    NetworkPhase1,
    backward,
    forward,
    init_layers,
    init_network,
    make_optimizer,
    optimizer_step,
    softmax_xent,
    validate_architecture,
)
from smartmixed.tensor import Rng

log = logging.getLogger(__name__)

SMARTMIXED = "smartmixed"
STRATEGIES = tuple(k.label for k in ActivationKind) + (SMARTMIXED,)
EPOCH_LOG_FIELDS = ("phase", "epoch", "train_loss", "val_loss", "train_acc", "val_acc", "selection_changes")


def parse_strategy(value: str) -> str:
    """Canonical strategy name: ``smartmixed`` or an activation name.

    Accepts ``fixed:<name>`` as an alias for ``<name>``.
    """
    s = str(value).strip().lower()
    if s == SMARTMIXED:
        return s
    if s.startswith("fixed:"):
        s = s[len("fixed:"):]
    try:
        return ActivationKind.from_name(s).label
    except ValueError:
        raise ConfigError(f"unknown strategy {value!r}; expected one of {STRATEGIES}") from None


@dataclass
class TrainConfig:
    architecture: list = field(default_factory=lambda: [784, 768, 512, 512, 256, 256, 128, 10])
    phase1_epochs: int = 50
    phase2_epochs: int = 350
    tau: float = 1.0
    eps: float = 1e-20
    batch_size: int = 128
    learning_rate: float = 1e-3
    logit_lr_multiplier: float = 1.0
    seed: int = 0
    noise_mode: str = NoiseMode.PER_BATCH.value
    strategy: str = SMARTMIXED
    eval_batch_size: int = 1000

    def __post_init__(self):
        self.architecture = validate_architecture(self.architecture)
        self.strategy = parse_strategy(self.strategy)
        try:
            self.noise_mode = NoiseMode.parse(self.noise_mode).value
        except ValueError:
            raise ConfigError(f"unknown noise mode {self.noise_mode!r}") from None
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def total_epochs(self) -> int:
        return self.phase1_epochs + self.phase2_epochs

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EpochLog:
    phase: str
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    selection_changes: int | None = None

    def row(self) -> list:
        return [
            self.phase, self.epoch,
            repr(self.train_loss), repr(self.val_loss),
            repr(self.train_acc), repr(self.val_acc),
            "" if self.selection_changes is None else self.selection_changes,
        ]


def epoch_logs_csv(logs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_LOG_FIELDS)
    for entry in logs:
        w.writerow(entry.row())
    return buf.getvalue()


def predict_logits(net: LayeredNetwork, X: np.ndarray) -> np.ndarray:
    """Deterministic class logits; Phase-1 nets use zero-noise argmax selection."""
    if isinstance(net, NetworkPhase1):
        return forward(net, X, noise_mode=NoiseMode.ZERO)[0]
    return grouped_forward(net, X)[0]


def evaluate(net: LayeredNetwork, ds: Dataset, batch_size: int = 1000) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) over ``ds``."""
    n = len(ds)
    if n == 0:
        return float("nan"), float("nan")
    correct = 0
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        X = ds.images[start:start + batch_size]
        y = ds.labels[start:start + batch_size]
        logits = predict_logits(net, X)
        loss, _ = softmax_xent(logits, y)
        loss_sum += loss * len(y)
        correct += int((np.argmax(logits, axis=1) == y).sum())
    return correct / n, loss_sum / n


def _run_epochs(net, step_fn, cfg: TrainConfig, data: DataSplits, phase: str, epochs: int,
                rng: Rng, on_epoch=None) -> list[EpochLog]:
    logs = []
    for epoch in range(1, epochs + 1):
        loss_sum = 0.0
        correct = 0
        seen = 0
        batch_rng = rng.child("batches").child(epoch)
        noise_rng = rng.child("noise").child(epoch)
        for step, (X, y) in enumerate(batches(data.train, cfg.batch_size, batch_rng)):
            loss, logits = step_fn(X, y, noise_rng.child(step))
            loss_sum += loss * len(y)
            correct += int((np.argmax(logits, axis=1) == y).sum())
            seen += len(y)
        val_acc, val_loss = evaluate(net, data.val, cfg.eval_batch_size)
        entry = EpochLog(phase, epoch, loss_sum / max(seen, 1), val_loss, correct / max(seen, 1), val_acc)
        if on_epoch is not None:
            on_epoch(entry)
        logs.append(entry)
        log.info("%s epoch %d: train_loss=%.4f val_loss=%.4f val_acc=%.4f%s", phase, epoch,
                 entry.train_loss, entry.val_loss, entry.val_acc,
                 "" if entry.selection_changes is None else f" changes={entry.selection_changes}")
    return logs


def train_phase1(cfg: TrainConfig, data: DataSplits, net: NetworkPhase1 | None = None):
    """Selective training: every hidden neuron samples its activation each step."""
    if cfg.strategy != SMARTMIXED:
        raise ConfigError("train_phase1 needs the smartmixed strategy")
    if net is None:
        net = init_network(cfg.architecture, cfg.seed, tau=cfg.tau, eps=cfg.eps)
    if cfg.phase1_epochs == 0:
        return net, []
    opt = make_optimizer(net, lr=cfg.learning_rate, logit_lr_multiplier=cfg.logit_lr_multiplier)
    mode = NoiseMode.parse(cfg.noise_mode)

    def step(X, y, noise_rng):
        logits, cache = forward(net, X, noise_rng, mode)
        loss, dlogits = softmax_xent(logits, y)
        optimizer_step(net, backward(net, cache, dlogits), opt)
        return loss, logits

    previous = extract_assignment(net)

    def count_changes(entry):
        nonlocal previous
        current = extract_assignment(net)
        entry.selection_changes = int(sum((a != b).sum() for a, b in zip(previous.layers, current.layers)))
        previous = current

    logs = _run_epochs(net, step, cfg, data, "phase1", cfg.phase1_epochs,
                       Rng(cfg.seed).child("phase1"), count_changes)
    return net, logs


def transition(net: NetworkPhase1) -> NetworkMixed:
    """Freeze each neuron's max-logit activation and copy the weights."""
    mixed = freeze(net)
    for l, hist in enumerate(mixed.assignment.histogram(), start=1):
        log.info("hidden layer %d assignment: %s", l, hist)
    return mixed


def _train_grouped(net: NetworkMixed, cfg: TrainConfig, data: DataSplits, phase: str, epochs: int, rng: Rng):
    if epochs == 0:
        return net, []
    opt = make_optimizer(net, lr=cfg.learning_rate)

    def step(X, y, _noise_rng):
        logits, cache = grouped_forward(net, X)
        loss, dlogits = softmax_xent(logits, y)
        optimizer_step(net, grouped_backward(net, cache, dlogits), opt)
        return loss, logits

    return net, _run_epochs(net, step, cfg, data, phase, epochs, rng)


def train_phase2(net: NetworkMixed, cfg: TrainConfig, data: DataSplits):
    """Continue training the frozen network; a fresh Adam state is used."""
    return _train_grouped(net, cfg, data, "phase2", cfg.phase2_epochs, Rng(cfg.seed).child("phase2"))


def train_fixed_baseline(cfg: TrainConfig, data: DataSplits):
    """Single-activation network trained for the full two-phase epoch budget."""
    if cfg.strategy == SMARTMIXED:
        raise ConfigError("train_fixed_baseline needs a fixed activation strategy")
    kind = ActivationKind.from_name(cfg.strategy)
    arch = cfg.architecture
    net = NetworkMixed(arch, init_layers(arch, cfg.seed), ActivationAssignment.uniform(arch[1:-1], kind))
    return _train_grouped(net, cfg, data, "fixed", cfg.total_epochs, Rng(cfg.seed).child("fixed"))


@dataclass
class TrainResult:
    config: TrainConfig
    net: NetworkMixed
    logs: list
    summary: dict
    phase1_net: NetworkPhase1 | None = None


def _round_metrics(d):
    return {k: (v if not isinstance(v, float) or math.isfinite(v) else None) for k, v in d.items()}


def run_training(cfg: TrainConfig, data: DataSplits) -> TrainResult:
    """Full run for one strategy, with end-of-phase evaluations in ``summary``."""
    summary = {"strategy": cfg.strategy, "architecture": cfg.architecture, "seed": cfg.seed}
    phase1_net = None
    if cfg.strategy == SMARTMIXED:
        phase1_net, logs = train_phase1(cfg, data)
        summary["phase1_val_acc"], summary["phase1_val_loss"] = evaluate(phase1_net, data.val, cfg.eval_batch_size)
        summary["phase1_test_acc"], summary["phase1_test_loss"] = evaluate(phase1_net, data.test, cfg.eval_batch_size)
        net = transition(phase1_net)
        net, logs2 = train_phase2(net, cfg, data)
        logs = logs + logs2
    else:
        net, logs = train_fixed_baseline(cfg, data)
    summary["val_acc"], summary["val_loss"] = evaluate(net, data.val, cfg.eval_batch_size)
    summary["test_acc"], summary["test_loss"] = evaluate(net, data.test, cfg.eval_batch_size)
    summary["assignment_histogram"] = net.assignment.histogram()
    summary["parameter_sha256"] = parameter_checksum(net)
    if phase1_net is not None:
        summary["phase1_parameter_sha256"] = parameter_checksum(phase1_net)
    return TrainResult(cfg, net, logs, _round_metrics(summary), phase1_net)
