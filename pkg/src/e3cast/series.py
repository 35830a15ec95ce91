"""Trace ingestion, windowing, normalization statistics and forecast metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    EmptyRange,
    EmptyTrace,
    IrregularSampling,
    MalformedValue,
    ShapeError,
    TraceTooShort,
    UndefinedDenominator,
)


@dataclass(frozen=True)
class TimeSeriesTrace:
    """Uniformly sampled multi-channel stream: ``values`` is T x M."""

    timestamps: np.ndarray
    values: np.ndarray
    channel_names: tuple[str, ...]

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] == 0:
            raise EmptyTrace("trace has no rows")
        if vals.shape[0] < 2:
            raise TraceTooShort("trace needs at least 2 rows")
        if ts.shape != (vals.shape[0],):
            raise ShapeError(f"{ts.shape[0]} timestamps for {vals.shape[0]} rows")
        if len(self.channel_names) != vals.shape[1]:
            raise ShapeError(f"{len(self.channel_names)} names for {vals.shape[1]} channels")
        if not np.all(np.isfinite(vals)):
            row = int(np.argwhere(~np.isfinite(vals))[0, 0])
            raise MalformedValue(f"non-finite value at row {row}")
        gaps = np.diff(ts)
        if gaps[0] <= 0 or np.any(gaps != gaps[0]):
            bad = int(np.argmax(gaps != gaps[0])) + 1 if gaps[0] > 0 else 1
            raise IrregularSampling(f"timestamp gap at row {bad} differs from interval {gaps[0]}")
        vals.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def interval(self) -> int:
        return int(self.timestamps[1] - self.timestamps[0])

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n_rows

    def slice(self, start: int, stop: int) -> "TimeSeriesTrace":
        return TimeSeriesTrace(self.timestamps[start:stop], self.values[start:stop], self.channel_names)

    @classmethod
    def from_array(cls, values, interval: int = 60, start: int = 0, names=None) -> "TimeSeriesTrace":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if names is None:
            names = [f"ch{i}" for i in range(values.shape[1])]
        ts = start + interval * np.arange(values.shape[0], dtype=np.int64)
        return cls(ts, values, tuple(names))


@dataclass(frozen=True)
class Window:
    history: np.ndarray  # L x M
    target: np.ndarray  # H x M
    anchor_index: int


@dataclass
class MetricReport:
    mse: float
    mae: float
    wmape: float
    per_step_losses: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        return cls(float(d["mse"]), float(d["mae"]), float(d["wmape"]), [float(x) for x in d["per_step_losses"]])


def load_trace(path, format: str = "csv") -> TimeSeriesTrace:
    """Read a trace file: header ``timestamp,<name1>,...`` then integer epoch seconds and values."""
    if format != "csv":
        raise ValueError(f"unsupported trace format {format!r}")
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptyTrace(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "timestamp":
        raise MalformedValue(f"{path}: header must start with 'timestamp' and name at least one channel")
    body = rows[1:]
    if not body:
        raise EmptyTrace(f"{path}: no data rows")
    m = len(header) - 1
    ts = np.empty(len(body), dtype=np.int64)
    vals = np.empty((len(body), m), dtype=np.float64)
    for i, row in enumerate(body, start=2):
        if len(row) != m + 1:
            raise MalformedValue(f"{path}:{i}: expected {m + 1} fields, got {len(row)}")
        try:
            ts[i - 2] = int(row[0].strip())
            vals[i - 2] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise MalformedValue(f"{path}:{i}: {exc}") from None
        if not np.all(np.isfinite(vals[i - 2])):
            raise MalformedValue(f"{path}:{i}: non-finite value")
    return TimeSeriesTrace(ts, vals, tuple(header[1:]))


def save_trace(trace: TimeSeriesTrace, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *trace.channel_names])
        for t, row in zip(trace.timestamps, trace.values):
            w.writerow([int(t), *(repr(float(v)) for v in row)])


def window_anchors(n_rows: int, L: int, H: int, stride: int) -> range:
    if L < 1 or H < 1:
        raise ValueError("L and H must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if L + H > n_rows:
        raise TraceTooShort(f"need L + H = {L + H} rows, trace has {n_rows}")
    return range(L, n_rows - H + 1, stride)


def window_stream(trace: TimeSeriesTrace, L: int, H: int, stride: int | None = None) -> Iterator[Window]:
    stride = H if stride is None else stride
    vals = trace.values
    for t in window_anchors(trace.n_rows, L, H, stride):
        yield Window(vals[t - L : t], vals[t : t + H], t)


def standard_stats(trace, start: int = 0, stop: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population stddev over rows ``[start, stop)``.

    A constant channel reports stddev 0; callers divide by :func:`safe_std`.
    """
    vals = trace.values if isinstance(trace, TimeSeriesTrace) else np.asarray(trace, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    seg = vals[start:stop]
    if seg.shape[0] == 0:
        raise EmptyRange(f"empty range [{start}, {stop})")
    return seg.mean(axis=0), seg.std(axis=0)


def safe_std(std: np.ndarray) -> np.ndarray:
    std = np.asarray(std, dtype=np.float64)
    return np.where(std == 0, 1.0, std)


def normalize(values, mean, std):
    return (np.asarray(values) - mean) / safe_std(std)


def denormalize(values, mean, std):
    return np.asarray(values) * safe_std(std) + mean


def _check(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def wmape(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    denom = float(np.sum(truth))
    if not denom > 0:
        raise UndefinedDenominator(f"sum of truth is {denom}; WMAPE needs a positive denominator")
    return float(np.sum(np.abs(pred - truth)) / denom)


class MetricAccumulator:
    """Running sums for MSE/MAE (normalized space) and WMAPE (original space)."""

    def __init__(self):
        self.sq = 0.0
        self.abs = 0.0
        self.count = 0
        self.abs_raw = 0.0
        self.truth_raw = 0.0
        self.per_step: list[float] = []

    def add(self, pred_norm, truth_norm, pred_raw, truth_raw, step_loss: float | None = None) -> None:
        pred_norm, truth_norm = _check(pred_norm, truth_norm)
        err = pred_norm - truth_norm
        self.sq += float(np.sum(err**2))
        self.abs += float(np.sum(np.abs(err)))
        self.count += err.size
        pred_raw, truth_raw = _check(pred_raw, truth_raw)
        self.abs_raw += float(np.sum(np.abs(pred_raw - truth_raw)))
        self.truth_raw += float(np.sum(truth_raw))
        self.per_step.append(float(np.mean(err**2)) if step_loss is None else float(step_loss))

    def report(self) -> MetricReport:
        if self.count == 0:
            return MetricReport(math.nan, math.nan, math.nan, [])
        w = self.abs_raw / self.truth_raw if self.truth_raw > 0 else math.nan
        return MetricReport(self.sq / self.count, self.abs / self.count, w, list(self.per_step))
