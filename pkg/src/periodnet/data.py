"""Series ingestion, chronological splits, z-scoring, windows and synthetic corpora."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ETT_COLUMNS = ("HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT")


class DataError(ValueError):
    pass


@dataclass
class SeriesFrame:
    timestamps: list[str]
    values: np.ndarray  # (N, C)
    names: list[str]
    index_name: str = "date"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be 2-D (N, C), got shape {self.values.shape}")
        n, c = self.values.shape
        if len(self.timestamps) != n:
            raise DataError(f"{len(self.timestamps)} timestamps for {n} rows")
        if len(self.names) != c:
            raise DataError(f"{len(self.names)} names for {c} columns")
        if not np.isfinite(self.values).all():
            raise DataError("series contains non-finite values")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(self.timestamps[start:stop], self.values[start:stop].copy(), list(self.names), self.index_name)

    def with_values(self, values: np.ndarray) -> "SeriesFrame":
        return SeriesFrame(list(self.timestamps), values, list(self.names), self.index_name)


def _parse_time(s: str):
    try:
        return dt.datetime.fromisoformat(s)
    except ValueError:
        return None


def load_csv(path) -> SeriesFrame:
    """Read a header-first CSV: index column (usually ``date``) then numeric columns.

    Timestamps that all parse as ISO-8601 must be strictly increasing;
    opaque labels are kept verbatim.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}:1: need an index column and at least one variable")
        stamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                vals = [float(cell) for cell in row[1:]]
            except ValueError:
                bad = next(c for c in row[1:] if not _is_float(c))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            stamps.append(row[0])
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    parsed = [_parse_time(s) for s in stamps]
    if all(p is not None for p in parsed):
        for i in range(1, len(parsed)):
            if parsed[i] <= parsed[i - 1]:
                raise DataError(f"{path}:{i + 2}: timestamp {stamps[i]!r} is not after {stamps[i - 1]!r}")
    return SeriesFrame(stamps, np.array(rows), header[1:], header[0])


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def save_csv(frame: SeriesFrame, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([frame.index_name, *frame.names])
        for ts, row in zip(frame.timestamps, frame.values):
            w.writerow([ts, *(repr(float(v)) for v in row)])


# ----------------------------------------------------------------------------
# splitting and scaling
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[int, int, int] = (6, 2, 2)

    def bounds(self, n: int) -> tuple[int, int]:
        total = sum(self.ratios)
        if total <= 0 or any(r < 0 for r in self.ratios):
            raise DataError(f"invalid split ratios {self.ratios}")
        a = n * self.ratios[0] // total
        b = n * (self.ratios[0] + self.ratios[1]) // total
        return a, b


ETT_SPLIT = SplitSpec((6, 2, 2))
DEFAULT_SPLIT = SplitSpec((7, 1, 2))


def split_chrono(frame: SeriesFrame, spec: SplitSpec = ETT_SPLIT) -> tuple[SeriesFrame, SeriesFrame, SeriesFrame]:
    n = len(frame)
    if n < 10:
        raise DataError(f"need at least 10 rows to split, got {n}")
    a, b = spec.bounds(n)
    parts = frame.slice(0, a), frame.slice(a, b), frame.slice(b, n)
    for name, part in zip(("train", "val", "test"), parts):
        if len(part) == 0:
            raise DataError(f"{name} split is empty for N={n}, ratios {spec.ratios}")
    return parts


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    names: list[str] = field(default_factory=list)

    @classmethod
    def fit(cls, frame: SeriesFrame) -> "NormStats":
        mean = frame.values.mean(axis=0)
        std = frame.values.std(axis=0)  # population
        flat = [frame.names[i] for i in np.flatnonzero(std <= 0)]
        if flat:
            raise DataError(f"constant variables cannot be standardized: {flat}")
        return cls(mean, std, list(frame.names))


def normalize(frame: SeriesFrame, stats: NormStats) -> SeriesFrame:
    return frame.with_values((frame.values - stats.mean) / stats.std)


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(values) * stats.std + stats.mean


# ----------------------------------------------------------------------------
# windows
# ----------------------------------------------------------------------------


def window_count(n: int, L: int, T: int, stride: int = 1) -> int:
    if n < L + T:
        return 0
    return (n - L - T) // stride + 1


def make_windows(frame, L: int, T: int, stride: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    X, Y = window_arrays(frame, L, T, stride)
    return list(zip(X, Y))


def window_arrays(frame, L: int, T: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Stacked inputs ``(W, L, C)`` and targets ``(W, T, C)``."""
    values = frame.values if isinstance(frame, SeriesFrame) else np.asarray(frame, dtype=np.float64)
    n = values.shape[0]
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    count = window_count(n, L, T, stride)
    if count == 0:
        raise DataError(f"series of length {n} is shorter than L+T={L + T}")
    starts = np.arange(count) * stride
    X = np.stack([values[s : s + L] for s in starts])
    Y = np.stack([values[s + L : s + L + T] for s in starts])
    return X, Y


# ----------------------------------------------------------------------------
# synthetic corpora
# ----------------------------------------------------------------------------


def synth_series(
    N: int,
    components: Sequence[tuple[float, float, float]] = ((24, 1.0, 0.0),),
    trend_slope: float = 0.0,
    noise_std: float = 0.0,
    seed: int = 0,
    n_vars: int = 1,
    start: str = "2016-07-01 00:00:00",
) -> SeriesFrame:
    """Sum of sinusoids ``(period, amplitude, phase)`` plus trend and Gaussian noise.

    With ``n_vars > 1`` each extra variable gets the same components with a
    per-variable phase offset of ``2*pi*j/n_vars``.
    """
    for period, _, _ in components:
        if period < 2:
            raise DataError(f"sinusoid period must be >= 2, got {period}")
    rng = np.random.default_rng(seed)
    t = np.arange(N, dtype=np.float64)
    cols = []
    for j in range(n_vars):
        shift = 2 * np.pi * j / n_vars
        x = trend_slope * t
        for period, amp, phase in components:
            x = x + amp * np.sin(2 * np.pi * t / period + phase + shift)
        if noise_std > 0:
            x = x + rng.normal(0.0, noise_std, N)
        cols.append(x)
    t0 = dt.datetime.fromisoformat(start)
    stamps = [(t0 + dt.timedelta(hours=i)).isoformat(sep=" ") for i in range(N)]
    names = ["OT"] if n_vars == 1 else [f"x{j}" for j in range(n_vars)]
    return SeriesFrame(stamps, np.stack(cols, axis=1), names)


# ----------------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------------


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise DataError(f"prediction shape {p.shape} != target shape {t.shape}")
    return p, t


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean((p - t) ** 2))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


@dataclass
class Dataset:
    """Normalized splits of one frame plus the statistics used to scale them."""

    train: SeriesFrame
    val: SeriesFrame
    test: SeriesFrame
    stats: NormStats

    @classmethod
    def from_frame(cls, frame: SeriesFrame, spec: SplitSpec = ETT_SPLIT) -> "Dataset":
        tr, va, te = split_chrono(frame, spec)
        stats = NormStats.fit(tr)
        return cls(normalize(tr, stats), normalize(va, stats), normalize(te, stats), stats)

    def split(self, name: str) -> SeriesFrame:
        if name not in ("train", "val", "test"):
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)
