"""Discrete-time horizontal pod autoscaling simulator with a fluid FIFO latency model.

Each tick: pending pods whose startup delay has elapsed become ready; at a
scale-interval boundary the policy sets the desired pod count; the tick's
arrivals join the queue as one cohort; ready pods drain the queue in FIFO
order. A request served k ticks after it arrived has latency
``base_latency + k * tick``.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import MalformedValue
from .series import TimeSeriesTrace

POLICIES = ("naive", "ideal", "predictive")
UTILIZATION_CAP = 1e6


@dataclass(frozen=True)
class SimConfig:
    pod_capacity: float = 10.0  # requests/sec per pod
    target_utilization: float = 0.7
    pod_startup_delay: float = 60.0
    scale_interval: float = 60.0
    min_pods: int = 1
    max_pods: int = 100
    base_latency: float = 0.05
    tick: float = 1.0
    initial_pods: int | None = None  # None: sized for the first sample
    feedback_interval: int = 10  # scale intervals between forecaster updates

    def __post_init__(self):
        if not self.pod_capacity > 0:
            raise ValueError("pod_capacity must be > 0")
        if not 0 < self.target_utilization <= 1:
            raise ValueError("target_utilization must be in (0, 1]")
        if not 1 <= self.min_pods <= self.max_pods:
            raise ValueError("need 1 <= min_pods <= max_pods")
        if self.tick <= 0 or self.scale_interval < self.tick or self.pod_startup_delay < 0:
            raise ValueError("tick must be > 0, scale_interval >= tick, startup delay >= 0")

    @property
    def interval_ticks(self) -> int:
        return max(1, int(round(self.scale_interval / self.tick)))

    @property
    def delay_ticks(self) -> int:
        return int(math.ceil(self.pod_startup_delay / self.tick - 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        return cls(**d)


def _clamp(n: int, cfg: SimConfig) -> int:
    return int(min(max(n, cfg.min_pods), cfg.max_pods))


def policy_predictive(forecast, cfg: SimConfig) -> int:
    peak = float(np.max(forecast)) if np.size(forecast) else 0.0
    if peak < 0:
        raise ValueError("forecast must be nonnegative")
    return _clamp(math.ceil(peak / (cfg.pod_capacity * cfg.target_utilization) - 1e-9), cfg)


def policy_ideal(future_truth, cfg: SimConfig) -> int:
    return policy_predictive(future_truth, cfg)


def policy_naive(observed_utilization: float, current: float, cfg: SimConfig) -> int:
    if observed_utilization < 0:
        raise ValueError("utilization must be >= 0")
    return _clamp(math.ceil(current * observed_utilization / cfg.target_utilization - 1e-9), cfg)


class Forecaster(Protocol):
    def forecast(self, index: int, steps: int) -> np.ndarray:
        """Predicted rates for trace rows ``index .. index + steps - 1`` using rows before ``index`` only."""

    def observe(self, index: int) -> None:
        """Rows before ``index`` are now observed; the forecaster may update itself."""


class PerfectForecaster:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64).ravel()

    def forecast(self, index, steps):
        idx = np.minimum(np.arange(index, index + steps), len(self.values) - 1)
        return self.values[idx]

    def observe(self, index):
        pass


@dataclass
class SimReport:
    ave_lat: float
    max_lat: float
    p999_lat: float
    p99_lat: float
    p90_lat: float
    ave_pod: float
    max_pod: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "Ave-Lat(s)": self.ave_lat,
                "Max-Lat(s)": self.max_lat,
                "99.9-Lat(s)": self.p999_lat,
                "99-Lat(s)": self.p99_lat,
                "90-Lat(s)": self.p90_lat,
                "AvePod": self.ave_pod,
                "MaxPod": self.max_pod,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        d = json.loads(text)
        return cls(
            d["Ave-Lat(s)"], d["Max-Lat(s)"], d["99.9-Lat(s)"], d["99-Lat(s)"], d["90-Lat(s)"], d["AvePod"], int(d["MaxPod"])
        )


def weighted_percentile(values, weights, q: float) -> float:
    """Nearest-rank percentile of a weighted sample: smallest value whose cumulative weight reaches q * total."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    target = q * cum[-1]
    i = int(np.searchsorted(cum, target - 1e-9 * cum[-1], side="left"))
    return float(v[min(i, len(v) - 1)])


@dataclass
class SimResult:
    report: SimReport
    log: np.ndarray  # columns of LOG_COLUMNS
    latency_values: np.ndarray
    latency_weights: np.ndarray

    def write_log(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in self.log:
                w.writerow([int(row[0]), *(repr(float(x)) for x in row[1:3]), int(row[3]), *(repr(float(x)) for x in row[4:])])


def summarize(values, weights, pods, base_latency: float) -> SimReport:
    """Table-style report from a weighted latency sample and per-tick pod occupancy (ready + pending)."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    pods = np.asarray(pods, dtype=np.float64)
    ave_pod = float(pods.mean()) if pods.size else 0.0
    max_pod = int(pods.max()) if pods.size else 0
    if values.size == 0 or weights.sum() <= 0:
        b = base_latency
        return SimReport(b, b, b, b, b, ave_pod, max_pod)
    mask = weights > 1e-9
    return SimReport(
        ave_lat=float(np.sum(values * weights) / np.sum(weights)),
        max_lat=float(values[mask].max()) if mask.any() else float(values.max()),
        p999_lat=weighted_percentile(values, weights, 0.999),
        p99_lat=weighted_percentile(values, weights, 0.99),
        p90_lat=weighted_percentile(values, weights, 0.90),
        ave_pod=ave_pod,
        max_pod=max_pod,
    )


LOG_COLUMNS = ("tick", "arrival_rate", "ready_pods", "pending_pods", "backlog", "served", "mean_latency")


def simulate(policy: str, workload: TimeSeriesTrace, cfg: SimConfig, forecaster: Forecaster | None = None, drain: bool = True) -> SimResult:
    """Replay a single-channel requests/sec trace under one scaling policy."""
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    rates = np.asarray(workload.values, dtype=np.float64)
    if rates.ndim == 2:
        if rates.shape[1] != 1:
            raise MalformedValue("workload trace must have exactly one channel")
        rates = rates[:, 0]
    if np.any(rates < 0):
        raise MalformedValue("workload rates must be nonnegative")
    dt = float(workload.interval)
    if policy == "predictive" and forecaster is None:
        forecaster = PerfectForecaster(rates)
    tick = cfg.tick
    n_ticks = int(round(len(rates) * dt / tick))
    interval, delay = cfg.interval_ticks, cfg.delay_ticks

    def row_at(k):
        return min(int(k * tick // dt), len(rates) - 1)

    def window(k, seconds):
        """Trace rows covering [k*tick, k*tick + seconds)."""
        first = row_at(k)
        last = int(math.ceil((k * tick + seconds) / dt - 1e-9))
        return first, max(last - first, 1)

    if cfg.initial_pods is not None:
        ready = _clamp(cfg.initial_pods, cfg)
    else:
        ready = policy_ideal(rates[:1], cfg)
    pending: deque = deque()  # [count, ready_tick]
    queue: deque = deque()  # [arrival_tick, amount]
    backlog = 0.0
    arrived_total = served_total = 0.0
    arr_sum, cap_sum, ready_sum, util_n = 0.0, 0.0, 0.0, 0
    lat: dict[float, float] = {}
    log_rows = []
    lookahead = cfg.scale_interval + (cfg.pod_startup_delay if policy == "predictive" else 0.0)
    decisions = 0

    k = 0
    while k < n_ticks or (drain and backlog > 1e-9):
        live = k < n_ticks
        while pending and pending[0][1] <= k:
            ready += pending.popleft()[0]
        # naive has no elapsed interval to observe at k == 0
        if live and k % interval == 0 and (k > 0 or policy != "naive"):
            n_pending = sum(c for c, _ in pending)
            if policy == "naive":
                # ratio of sums over the interval, paired with the mean ready count it was measured on
                if cap_sum > 0:
                    util = min(arr_sum / cap_sum, UTILIZATION_CAP)
                    desired = policy_naive(util, ready_sum / util_n, cfg)
                else:
                    desired = cfg.max_pods if arr_sum > 0 else cfg.min_pods
                arr_sum, cap_sum, ready_sum, util_n = 0.0, 0.0, 0.0, 0
            elif policy == "ideal":
                first, n = window(k, lookahead)
                desired = policy_ideal(rates[first : first + n], cfg)
            else:
                first, n = window(k, lookahead)
                forecaster.observe(first)
                fc = np.maximum(np.asarray(forecaster.forecast(first, n), dtype=np.float64), 0.0)
                desired = policy_predictive(fc, cfg)
            decisions += 1
            total = ready + n_pending
            if desired > total:
                if policy == "ideal" or delay == 0:
                    ready += desired - total
                else:
                    pending.append([desired - total, k + delay])
            elif desired < total:
                excess = total - desired
                while excess and pending:
                    take = min(excess, pending[-1][0])
                    pending[-1][0] -= take
                    excess -= take
                    if pending[-1][0] == 0:
                        pending.pop()
                ready -= excess

        rate = rates[row_at(k)] if live else 0.0
        arrivals = rate * tick
        if arrivals > 0:
            queue.append([k, arrivals])
            arrived_total += arrivals
        if live:
            arr_sum += arrivals
            cap_sum += ready * cfg.pod_capacity * tick
            ready_sum += ready
            util_n += 1
        budget = ready * cfg.pod_capacity * tick
        served = 0.0
        lat_num = 0.0
        while queue and budget > 1e-12:
            cohort = queue[0]
            take = min(budget, cohort[1])
            latency = cfg.base_latency + (k - cohort[0]) * tick
            lat[latency] = lat.get(latency, 0.0) + take
            lat_num += latency * take
            served += take
            budget -= take
            cohort[1] -= take
            if cohort[1] <= 1e-12:
                queue.popleft()
        served_total += served
        backlog = sum(c[1] for c in queue)
        n_pend = sum(c for c, _ in pending)
        log_rows.append((k, rate, ready, n_pend, backlog, served, lat_num / served if served > 0 else 0.0))
        k += 1
        if not live and ready == 0:
            break

    values = np.array(sorted(lat))
    weights = np.array([lat[v] for v in values])
    pods = np.array([r[2] + r[3] for r in log_rows[:n_ticks]], dtype=np.float64)
    report = summarize(values, weights, pods, cfg.base_latency)
    if values.size == 0:
        values, weights = np.array([cfg.base_latency]), np.array([0.0])
    return SimResult(report, np.array(log_rows, dtype=np.float64), values, weights)
