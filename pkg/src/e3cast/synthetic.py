"""Seeded synthetic workload traces used by the tests, scripts and acceptance checks."""

from __future__ import annotations

import numpy as np

from .series import TimeSeriesTrace


def _trace(values, interval: int, name: str) -> TimeSeriesTrace:
    return TimeSeriesTrace.from_array(np.asarray(values, dtype=np.float64).reshape(-1, 1), interval=interval, names=[name])


def sinusoid(n: int, period: float = 64.0, amplitude: float = 1.0, phase: float = 0.0, level: float = 0.0,
             noise: float = 0.0, seed: int = 0, interval: int = 60) -> TimeSeriesTrace:
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    x = level + amplitude * np.sin(2 * np.pi * t / period + phase) + noise * rng.standard_normal(n)
    return _trace(x, interval, "value")


def level_shift(n: int, shift_at: int | None = None, shift: float = 3.0, period: float = 48.0,
                amplitude: float = 1.0, noise: float = 0.1, seed: int = 0, interval: int = 60) -> TimeSeriesTrace:
    """Periodic signal whose level jumps by ``shift`` at row ``shift_at`` (default n // 2)."""
    rng = np.random.default_rng(seed)
    shift_at = n // 2 if shift_at is None else shift_at
    t = np.arange(n)
    x = amplitude * np.sin(2 * np.pi * t / period) + noise * rng.standard_normal(n)
    x[shift_at:] += shift
    return _trace(x, interval, "value")


def superposed(n: int, periods=(12.0, 80.0), amplitudes=(1.0, 1.0), noise: float = 0.1, seed: int = 0,
               interval: int = 60) -> TimeSeriesTrace:
    """Sum of sinusoids with distinct periods; the random phases make seeds differ in more than noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    x = noise * rng.standard_normal(n)
    for p, a in zip(periods, amplitudes):
        x = x + a * np.sin(2 * np.pi * t / p + rng.uniform(0, 2 * np.pi))
    return _trace(x, interval, "value")


def bursty_qps(n: int, base: float = 100.0, amplitude: float = 30.0, period: float = 120.0, burst_every: int = 60,
               burst_offset: int = 40, burst_len: int = 5, burst_height: float = 200.0, noise: float = 3.0,
               seed: int = 0, interval: int = 60) -> TimeSeriesTrace:
    """Requests/sec: a slow daily-like cycle plus short periodic bursts. Clipped at zero."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    burst = ((t % burst_every) >= burst_offset) & ((t % burst_every) < burst_offset + burst_len)
    x = base + amplitude * np.sin(2 * np.pi * t / period) + burst_height * burst + noise * rng.standard_normal(n)
    return _trace(np.maximum(x, 0.0), interval, "qps")


def transfer_pair(n_source: int, n_target: int, period: float = 48.0, target_period: float = 30.0,
                  phase: float = np.pi / 2, target_level: float = 1.5, target_amplitude: float = 1.5,
                  noise: float = 0.1, seed: int = 0, interval: int = 60) -> tuple[TimeSeriesTrace, TimeSeriesTrace]:
    """A source regime and a shifted target regime (period, phase, level and amplitude all moved)."""
    src = sinusoid(n_source, period, 1.0, 0.0, 0.0, noise, seed, interval)
    tgt = sinusoid(n_target, target_period, target_amplitude, phase, target_level, noise, seed + 1000, interval)
    return src, tgt
