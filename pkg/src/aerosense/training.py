"""Adam, plateau schedule, early stopping, the training loop and evaluation metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .model import AeroSense, huber_loss

log = logging.getLogger(__name__)

REGIONS = ("AP", "AR")


class NonFiniteLoss(FloatingPointError):
    """Training produced a NaN or infinite loss."""


@dataclass
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 10
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_delta: float = 1e-8
    huber_delta: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "early_stop_patience", "plateau_patience",
                     "plateau_factor", "huber_delta", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "max_epochs", "early_stop_patience", "plateau_patience"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValueError(f"{name} must be an integer")


# optimizer --------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, ad.Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update from each parameter's ``grad``, in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, patience: int = 5, factor: float = 0.5, min_delta: float = 1e-8):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class EarlyStopping:
    def __init__(self, patience: int = 10, min_delta: float = 1e-8):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch; True once ``patience`` epochs in a row failed to improve."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


# training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_val_loss: float
    stopped_early: bool


def dataset_loss(model: AeroSense, states: Sequence[np.ndarray], labels: np.ndarray,
                 delta: float = 1.0, batch_size: int = 256) -> float:
    """Eval-mode objective averaged over all samples."""
    total = 0.0
    for i in range(0, len(states), batch_size):
        batch = model.batch(states[i:i + batch_size], labels[i:i + batch_size])
        total += float(huber_loss(model.forward(batch), batch.labels, delta).data) * len(batch)
    return total / max(len(states), 1)


def train(model: AeroSense, train_data: tuple[Sequence[np.ndarray], np.ndarray],
          val_data: tuple[Sequence[np.ndarray], np.ndarray], cfg: TrainConfig | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit ``model`` in place and leave it holding the best-validation weights.

    ``train_data`` and ``val_data`` are ``(states, labels)`` pairs of
    normalized state arrays and (n, 2) count labels.
    """
    cfg = cfg or TrainConfig()
    states, labels = list(train_data[0]), np.asarray(train_data[1], dtype=float)
    val_states, val_labels = list(val_data[0]), np.asarray(val_data[1], dtype=float)
    if not states:
        raise ValueError("empty training set")
    opt = AdamState(cfg.beta1, cfg.beta2, cfg.eps)
    sched = PlateauScheduler(cfg.lr, cfg.plateau_patience, cfg.plateau_factor, cfg.min_delta)
    stopper = EarlyStopping(cfg.early_stop_patience, cfg.min_delta)
    history: list[dict] = []
    best_state, best_val, best_epoch = model.copy_state(), math.inf, -1
    stopped = False
    lr = cfg.lr

    for epoch in range(int(cfg.max_epochs)):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(states))
        running, seen = 0.0, 0
        for k, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            batch = model.batch([states[i] for i in idx], labels[idx])
            model.zero_grad()
            loss = huber_loss(model.forward(batch, training=True, key=(cfg.seed, epoch, k)),
                              batch.labels, cfg.huber_delta)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} at epoch {epoch}, batch {k}")
            ad.backward(loss)
            adam_step(model.params, opt, lr)
            running += value * len(idx)
            seen += len(idx)

        val_loss = dataset_loss(model, val_states, val_labels, cfg.huber_delta) if val_states else running / seen
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"validation loss became {val_loss} at epoch {epoch}")
        entry = {"epoch": epoch, "train_loss": running / seen, "val_loss": val_loss, "lr": lr}
        history.append(entry)
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, entry["train_loss"], val_loss, lr)
        if on_epoch is not None:
            on_epoch(entry)
        if val_loss < best_val:
            best_val, best_epoch, best_state = val_loss, epoch, model.copy_state()
        lr = sched.step(val_loss)
        if stopper.step(val_loss):
            stopped = True
            break

    model.load_state_arrays(best_state)
    return TrainResult(history, best_epoch, best_val, stopped)


# evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    r2: float


def metrics(pred, truth) -> Metrics:
    """MAE, RMSE and R^2 (about the mean of ``truth``; NaN when ``truth`` is constant)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    err = truth - pred
    ss_res = float(np.sum(err ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return Metrics(float(np.mean(np.abs(err))), math.sqrt(ss_res / len(err)), r2)


def evaluate(pred: np.ndarray, labels: np.ndarray) -> dict[str, Metrics]:
    """Per-region metrics for (n, 2) predictions ordered (AP, AR)."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    labels = np.asarray(labels, dtype=float).reshape(-1, 2)
    return {r: metrics(pred[:, i], labels[:, i]) for i, r in enumerate(REGIONS)}


def evaluate_model(model: AeroSense, states: Sequence[np.ndarray], labels: np.ndarray) -> dict[str, Metrics]:
    return evaluate(model.predict(list(states)), labels)


@dataclass(frozen=True)
class DaypartBin:
    start_hour: int
    count: int
    mae: dict[str, float] | None  # None for empty bins

    @property
    def label(self) -> str:
        return f"{self.start_hour:02d}:00-{self.start_hour + 2:02d}:00"


def daypart_eval(pred: np.ndarray, labels: np.ndarray, times: Sequence[float]) -> list[DaypartBin]:
    """Per-region MAE in twelve 2-hour bins of the snapshot time of day."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    labels = np.asarray(labels, dtype=float).reshape(-1, 2)
    hours = np.mod(np.asarray(times, dtype=float), 86400.0) / 3600.0
    bins = np.minimum((hours // 2).astype(int), 11)
    report = []
    for b in range(12):
        sel = bins == b
        n = int(sel.sum())
        mae = None
        if n:
            err = np.abs(labels[sel] - pred[sel]).mean(axis=0)
            mae = {r: float(err[i]) for i, r in enumerate(REGIONS)}
        report.append(DaypartBin(2 * b, n, mae))
    return report


def metrics_rows(results: dict[str, dict[str, Metrics]]) -> list[dict]:
    """Flatten {model_name: {region: Metrics}} into CSV-ready rows."""
    return [{"model": name, "region": region, **asdict(m)}
            for name, per_region in results.items() for region, m in per_region.items()]
