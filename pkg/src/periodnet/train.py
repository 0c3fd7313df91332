"""Adam + L2 training with early stopping, evaluation and a naive baseline."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .checkpoint import Checkpoint
from .data import Dataset, SeriesFrame, mae, mse, window_arrays, window_count
from .model import PeriodNet

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"training diverged at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    max_steps: int | None = None
    stride: int = 1
    loss: str = "l2"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.loss != "l2":
            raise ValueError(f"only the l2 loss is supported, got {self.loss!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    steps: int


def l2_loss(pred: nc.Tensor, target: np.ndarray) -> nc.Tensor:
    diff = nc.sub(pred, nc.Tensor(target))
    return nc.mean(nc.mul(diff, diff))


def predict_windows(model: PeriodNet, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Forecasts for stacked windows ``(W, L, C) -> (W, T, C)`` without recording a tape."""
    outs = []
    with nc.no_grad():
        for i in range(0, len(X), batch_size):
            outs.append(model.forward(nc.Tensor(X[i : i + batch_size])).data)
    return np.concatenate(outs, axis=0)


def evaluate_model(model: PeriodNet, frame: SeriesFrame, stride: int = 1) -> tuple[float, float]:
    cfg = model.cfg
    if window_count(len(frame), cfg.L, cfg.T, stride) == 0:
        raise ValueError(f"split of length {len(frame)} has no window of length L+T={cfg.L + cfg.T}")
    X, Y = window_arrays(frame, cfg.L, cfg.T, stride)
    P = predict_windows(model, X)
    return mse(P, Y), mae(P, Y)


def evaluate(checkpoint: Checkpoint, split: SeriesFrame, stride: int = 1) -> tuple[float, float]:
    """MSE and MAE over every window of an already-normalized split."""
    return evaluate_model(checkpoint.build_model(), split, stride)


def baseline_repeat_last(x: np.ndarray, T: int) -> np.ndarray:
    """Repeat the last observed row ``T`` times; works on ``(L, C)`` or ``(W, L, C)``."""
    x = np.asarray(x, dtype=np.float64)
    last = x[..., -1:, :]
    return np.repeat(last, T, axis=-2)


def train(model: PeriodNet, dataset: Dataset, cfg: TrainConfig) -> tuple[Checkpoint, list[EpochRecord]]:
    """Fit ``model`` in place; returns the best-validation checkpoint and per-epoch history.

    Without validation windows the training loss drives model selection.
    """
    mcfg = model.cfg
    if window_count(len(dataset.train), mcfg.L, mcfg.T, cfg.stride) == 0:
        raise ValueError("training split yields no windows")
    X, Y = window_arrays(dataset.train, mcfg.L, mcfg.T, cfg.stride)
    has_val = window_count(len(dataset.val), mcfg.L, mcfg.T, 1) > 0

    params = list(model.named_parameters().values())
    opt = nc.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    history: list[EpochRecord] = []
    best_loss, best_state, bad_epochs, step = np.inf, model.state_arrays(), 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(X))
        total = 0.0
        seen = 0
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            try:
                loss = l2_loss(model.forward(nc.Tensor(X[idx])), Y[idx])
                loss.backward()
            except nc.NumericError as exc:
                raise DivergenceError(step, str(exc)) from exc
            opt.step()
            step += 1
            total += loss.item() * len(idx)
            seen += len(idx)
        if seen == 0:
            break
        train_loss = total / seen
        val_loss = evaluate_model(model, dataset.val)[0] if has_val else train_loss
        if not np.isfinite(val_loss):
            raise DivergenceError(step, "non-finite validation loss")
        history.append(EpochRecord(epoch, train_loss, val_loss, step))
        log.info("epoch %d step %d train %.6f val %.6f", epoch, step, train_loss, val_loss)
        if val_loss < best_loss:
            best_loss, best_state, bad_epochs = val_loss, model.state_arrays(), 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    model.load_arrays(best_state)
    meta = {"train": asdict(cfg), "best_val_loss": float(best_loss), "steps": step}
    return Checkpoint.from_model(model, dataset.stats, meta), history


def write_history(history: list[EpochRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss)])
