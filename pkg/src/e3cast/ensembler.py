"""Expert combination: exponentiated-gradient weights, online scaling, FTPL, regret accounting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adapter as adp
from .backbone import mhsa_backward, mhsa_forward, softmax
from .errors import ShapeError


# -- exponentiated gradient ---------------------------------------------------


@dataclass
class EgdState:
    log_w: np.ndarray
    eta: float = 1.0
    scale_free: bool = True
    loss_sum: float = 0.0
    n_updates: int = 0

    @classmethod
    def uniform(cls, d: int, eta: float = 1.0, scale_free: bool = True) -> "EgdState":
        return cls(np.full(d, -np.log(d)), eta, scale_free)

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.log_w)

    def scaled_losses(self, losses: np.ndarray) -> np.ndarray:
        """Losses in units of the running mean loss when scale-free; dividing the losses rather
        than eta keeps subnormal means finite."""
        if not self.scale_free:
            return losses
        mean = (self.loss_sum + float(np.mean(losses))) / (self.n_updates + 1)
        return losses / mean if mean > 0 else losses


def egd_update(state: EgdState, losses) -> EgdState:
    """w_i <- w_i exp(-eta * loss_i) / Z, carried out on log-weights."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != state.log_w.shape:
        raise ShapeError(f"{losses.shape[0]} losses for {state.log_w.shape[0]} experts")
    if np.any(losses < 0) or not np.all(np.isfinite(losses)):
        raise ValueError("expert losses must be finite and nonnegative")
    z = state.log_w - state.eta * state.scaled_losses(losses)
    z = z - np.logaddexp.reduce(z)
    return EgdState(z, state.eta, state.scale_free, state.loss_sum + float(np.mean(losses)), state.n_updates + 1)


# -- follow the perturbed leader ----------------------------------------------


@dataclass
class FtplState:
    cumulative: np.ndarray
    m: int = 8
    scale: float | None = None  # None: mean cumulative loss / sqrt(t)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    t: int = 0

    @classmethod
    def fresh(cls, d: int, m: int = 8, scale: float | None = None, seed: int = 0) -> "FtplState":
        return cls(np.zeros(d), m, scale, np.random.default_rng(seed))

    def perturbation_scale(self) -> float:
        if self.scale is not None:
            return float(self.scale)
        if self.t == 0:
            return 0.0
        return float(np.mean(self.cumulative)) / np.sqrt(self.t)


def ftpl_select(state: FtplState) -> int:
    """0-based index of the chosen expert. Advances the state's generator."""
    d = state.cumulative.shape[0]
    if d == 1:
        return 0
    b = state.perturbation_scale()
    if b == 0:
        return int(np.argmin(state.cumulative))
    noise = state.rng.uniform(0.0, b, size=(state.m, d))
    decisions = np.argmin(state.cumulative[None, :] + noise, axis=1)
    return int(decisions[state.rng.integers(state.m)])


def ftpl_accumulate(state: FtplState, losses) -> FtplState:
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0):
        raise ValueError("expert losses must be nonnegative")
    return FtplState(state.cumulative + losses, state.m, state.scale, state.rng, state.t + 1)


# -- online scaling -----------------------------------------------------------


def init_online_scaling(d: int, H: int, D: int, Dp: int, h: int, rng: np.random.Generator) -> dict:
    p = {
        "os.embed.W": rng.uniform(-1, 1, (H, D)) / np.sqrt(H),
        "os.embed.b": np.zeros(D),
        "os.out.W": np.zeros(((d + 1) * D, d)),
        "os.out.b": np.zeros(d),
        "os.adapter.W": np.zeros((3 * h * D * Dp, 6 * h * Dp)),
        "os.adapter.b": np.zeros(6 * h * Dp),
    }
    for k in ("WQ", "WK", "WV"):
        p[f"os.{k}"] = rng.uniform(-1, 1, (h, D, Dp)) / np.sqrt(D)
    p["os.WO"] = rng.uniform(-1, 1, (h * Dp, D)) / np.sqrt(h * Dp)
    return p


def online_scale(F, latest_truth, w, params: dict, ema=None):
    """Combine expert forecasts F (d, B, H) using the latest truth (B, H) and EGD weights w (d,).

    Returns ``(s, combined, cache)`` with s (B, d) and combined (B, H).
    The output map is initialized at zero, so an untrained module returns softmax(w).
    """
    F = np.asarray(F, dtype=np.float64)
    d, B, H = F.shape
    latest_truth = np.asarray(latest_truth, dtype=np.float64).reshape(B, H)
    rows = np.concatenate([F.transpose(1, 0, 2), latest_truth[:, None, :]], axis=1)  # (B, d+1, H)
    E = rows @ params["os.embed.W"] + params["os.embed.b"]
    coeffs = None
    if ema is not None:
        coeffs = adp.compute_coeffs(ema, params["os.adapter.W"], params["os.adapter.b"])
    att, c_att = mhsa_forward(E, params["os.WQ"], params["os.WK"], params["os.WV"], params["os.WO"], coeffs)
    flat = att.reshape(B, -1)
    logits = flat @ params["os.out.W"] + params["os.out.b"] + w[None, :]
    s = softmax(logits, axis=-1)
    combined = np.einsum("bd,dbh->bh", s, F)
    cache = dict(F=F, rows=rows, c_att=c_att, flat=flat, s=s, ema=ema, shape=att.shape)
    return s, combined, cache


def online_scale_backward(dcombined, cache, params: dict) -> dict:
    """Gradients for the online-scaling parameters only; the expert forecasts are held constant."""
    F, s = cache["F"], cache["s"]
    ds = np.einsum("bh,dbh->bd", dcombined, F)
    dlogits = s * (ds - np.sum(ds * s, axis=-1, keepdims=True))
    g = {"os.out.W": cache["flat"].T @ dlogits, "os.out.b": dlogits.sum(axis=0)}
    datt = (dlogits @ params["os.out.W"].T).reshape(cache["shape"])
    dE, ga, dc = mhsa_backward(datt, cache["c_att"])
    for k, v in ga.items():
        g[f"os.{k}"] = v
    g["os.embed.W"] = np.einsum("bkh,bkd->hd", cache["rows"], dE)
    g["os.embed.b"] = dE.sum(axis=(0, 1))
    if dc is not None:
        g["os.adapter.W"], g["os.adapter.b"] = adp.coeffs_backward(cache["ema"], *dc)
    else:
        g["os.adapter.W"] = np.zeros_like(params["os.adapter.W"])
        g["os.adapter.b"] = np.zeros_like(params["os.adapter.b"])
    return g


# -- regret -------------------------------------------------------------------


@dataclass
class RegretLedger:
    combined: list[float] = field(default_factory=list)
    experts: list[np.ndarray] = field(default_factory=list)

    def record(self, combined_loss: float, expert_losses) -> None:
        self.combined.append(float(combined_loss))
        self.experts.append(np.asarray(expert_losses, dtype=np.float64).copy())

    def __len__(self) -> int:
        return len(self.combined)

    def cumulative(self) -> tuple[np.ndarray, np.ndarray]:
        return np.cumsum(self.combined), np.cumsum(np.array(self.experts), axis=0)

    def to_csv(self, path) -> None:
        d = len(self.experts[0]) if self.experts else 0
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "combined_loss", *(f"expert_{i + 1}" for i in range(d))])
            for t, (c, e) in enumerate(zip(self.combined, self.experts), start=1):
                w.writerow([t, repr(c), *(repr(float(x)) for x in e)])

    @classmethod
    def from_csv(cls, path) -> "RegretLedger":
        led = cls()
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        for row in rows[1:]:
            led.record(float(row[1]), [float(x) for x in row[2:]])
        return led


@dataclass
class RegretReport:
    curve: np.ndarray
    best_expert: int
    slope: float


def regret_report(ledger: RegretLedger) -> RegretReport:
    """Regret against the best fixed expert in hindsight, plus a log-log growth slope.

    The slope is fitted over the second half of the run on log max(regret, 1e-9).
    """
    if len(ledger) < 2:
        raise ValueError("need at least two recorded steps")
    comb, exp = ledger.cumulative()
    best = int(np.argmin(exp[-1]))
    curve = comb - exp[:, best]
    T = len(curve)
    t = np.arange(1, T + 1)
    half = slice(T // 2, T)
    if T - T // 2 >= 2:
        slope = float(np.polyfit(np.log(t[half]), np.log(np.maximum(curve[half], 1e-9)), 1)[0])
    else:
        slope = float("nan")
    return RegretReport(curve, best, slope)
