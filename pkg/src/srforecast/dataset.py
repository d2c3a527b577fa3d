"""Time series containers, the on-disk series format, and prequential windowing."""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    dt_record: float = 1.0
    origin: str = "unknown"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"time series values must be a nonempty (T, d) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("time series contains non-finite values")
        if not self.origin or any(ch.isspace() for ch in self.origin):
            raise ValueError(f"origin label must be a single non-empty token, got {self.origin!r}")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "TimeSeries":
        return TimeSeries(values, self.dt_record, self.origin)


def format_series(ts: TimeSeries) -> str:
    buf = io.StringIO()
    buf.write(f"{ts.dim} {ts.dt_record!r} {ts.origin}\n")
    for row in ts.values:
        buf.write(" ".join(f"{v:.17g}" for v in row))
        buf.write("\n")
    return buf.getvalue()


def write_series(ts: TimeSeries, path) -> None:
    Path(path).write_text(format_series(ts))


def read_series(path) -> TimeSeries:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'd dt_record origin', got {header}")
        d, dt, origin = int(header[0]), float(header[1]), header[2]
        values = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if values.shape[1] != d:
        raise ValueError(f"{path}: header declares d={d} but rows have {values.shape[1]} columns")
    return TimeSeries(values, dt, origin)


def split_series(ts: TimeSeries, fractions=(0.6, 0.2, 0.2), min_length: int = 1) -> tuple[TimeSeries, ...]:
    """Chronological contiguous split with boundaries at floor(T * cumulative fraction).

    ``min_length`` is usually ``k + l``, the shortest segment that yields a pair.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be positive and sum to 1, got {tuple(fractions)}")
    T = len(ts)
    cuts = [0] + [int(np.floor(T * c + 1e-9)) for c in np.cumsum(fr)[:-1]] + [T]
    parts = []
    for i in range(len(fr)):
        seg = ts.values[cuts[i] : cuts[i + 1]]
        if seg.shape[0] < min_length:
            raise ValueError(
                f"split segment {i} has {seg.shape[0]} rows, fewer than the {min_length} needed "
                "for one (window, target) pair"
            )
        parts.append(ts.with_values(seg))
    return tuple(parts)


@dataclass(frozen=True)
class WindowedDataset:
    windows: np.ndarray  # (N, k, d)
    targets: np.ndarray  # (N, d)
    k: int
    l: int
    index_map: np.ndarray  # (N,) zero-based index of each window's last row

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def dim(self) -> int:
        return self.targets.shape[1]

    def flat_windows(self) -> np.ndarray:
        return self.windows.reshape(len(self), -1)


def build_windows(ts: TimeSeries, k: int, l: int) -> WindowedDataset:
    if k < 1 or l < 1:
        raise ValueError(f"window length k and lead l must be >= 1, got k={k}, l={l}")
    T = len(ts)
    if T < k + l:
        raise ValueError(f"series of length {T} is too short: need at least k + l = {k + l} rows")
    n = T - l - k + 1
    ends = np.arange(k - 1, k - 1 + n)
    windows = np.lib.stride_tricks.sliding_window_view(ts.values, k, axis=0)[:n]
    windows = np.ascontiguousarray(np.swapaxes(windows, 1, 2))
    targets = ts.values[ends + l].copy()
    return WindowedDataset(windows, targets, k, l, ends)


@dataclass(frozen=True)
class Normalizer:
    """Per-component standardisation with population standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if np.any(self.std <= 0):
            bad = int(np.flatnonzero(self.std <= 0)[0])
            raise ValueError(f"component {bad} has zero variance; cannot standardise")

    @classmethod
    def identity(cls, d: int) -> "Normalizer":
        return cls(np.zeros(d), np.ones(d))

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def apply_series(self, ts: TimeSeries) -> TimeSeries:
        return ts.with_values(self.apply(ts.values))


def fit_normalizer(train: TimeSeries) -> Normalizer:
    v = train.values
    std = v.std(axis=0)
    for i, s in enumerate(std):
        if not s > 0:
            raise ValueError(f"component {i} of the training split has zero variance")
    return Normalizer(v.mean(axis=0), std)
