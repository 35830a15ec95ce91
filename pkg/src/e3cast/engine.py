"""Offline pretraining, the online predict -> feedback -> update loop, transfer runs, checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import model as mdl
from .adapter import EmaGradState, ema_initialize, ema_update
from .backbone import attention_gradient
from .ensembler import (
    EgdState,
    FtplState,
    RegretLedger,
    egd_update,
    ftpl_accumulate,
    ftpl_select,
    init_online_scaling,
    online_scale,
    online_scale_backward,
)
from .errors import CorruptCheckpoint, TraceTooShort, VersionMismatch
from .series import MetricAccumulator, MetricReport, TimeSeriesTrace, safe_std, standard_stats

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ENSEMBLE_MODES = ("os", "ftpl", "none")


@dataclass(frozen=True)
class EngineConfig:
    lookback: int = 1440
    horizon: int = 60
    patch_sizes: tuple[int, ...] = (16, 32, 64, 128)
    d_model: int = 16
    d_head: int = 8
    n_heads: int = 4
    d_ff: int = 32
    n_layers: int = 2
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    online_lr: float | None = None  # None: 0.1 x lr
    weight_decay: float = 0.01
    offline_stride: int = 1
    val_fraction: float = 0.2
    gamma: float = 0.9
    eta: float = 1.0
    ftpl_m: int = 8
    ftpl_scale: float | None = None  # None: mean cumulative loss / sqrt(t)
    ensemble: str = "os"
    disable_mimo: bool = False
    disable_adapter: bool = False
    freeze: bool = False
    update_interval: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(int(p) for p in self.patch_sizes))
        if self.ensemble not in ENSEMBLE_MODES:
            raise ValueError(f"ensemble must be one of {ENSEMBLE_MODES}, got {self.ensemble!r}")
        if self.horizon < 1 or self.batch_size < 1 or self.update_interval < 1:
            raise ValueError("horizon, batch_size and update_interval must be >= 1")
        if self.lookback < max(self.active_patch_sizes):
            raise ValueError(f"lookback {self.lookback} shorter than largest patch size")

    @property
    def active_patch_sizes(self) -> tuple[int, ...]:
        return self.patch_sizes[:1] if self.disable_mimo else self.patch_sizes

    @property
    def model(self) -> mdl.ModelConfig:
        return mdl.ModelConfig(
            self.lookback, self.horizon, self.active_patch_sizes, self.d_model, self.d_head, self.n_heads, self.d_ff, self.n_layers
        )

    @property
    def effective_online_lr(self) -> float:
        return 0.1 * self.lr if self.online_lr is None else self.online_lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_sizes"] = list(self.patch_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown engine config keys: {sorted(unknown)}")
        return cls(**d)

    def structural_hash(self) -> str:
        m = self.model
        key = json.dumps(
            [m.lookback, m.horizon, list(m.patch_sizes), m.d_model, m.d_head, m.n_heads, m.d_ff, m.n_layers, self.ensemble],
        )
        return hashlib.sha256(key.encode()).hexdigest()[:16]


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamW:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, lr: float) -> None:
        """Decoupled weight decay applies to matrices only; vectors (biases, gains, RevIN) are not decayed."""
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            p = params[name]
            if p.ndim >= 2 and self.weight_decay:
                p *= 1 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- state --------------------------------------------------------------------


@dataclass
class ModelState:
    config: EngineConfig
    params: dict
    buffers: dict
    ema: EmaGradState
    os_ema: EmaGradState
    egd: EgdState
    ftpl: FtplState
    opt: AdamW
    norm_mean: np.ndarray
    norm_std: np.ndarray
    latest_truth: np.ndarray | None = None
    version: int = 0
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    pending: dict | None = field(default=None, repr=False)
    n_pending: int = 0

    @property
    def n_experts(self) -> int:
        return self.config.model.n_experts


def init_state(config: EngineConfig, n_channels: int = 1) -> ModelState:
    rng = np.random.default_rng(config.seed)
    mc = config.model
    params, buffers = mdl.init_params(mc, rng)
    if config.ensemble == "os":
        params.update(init_online_scaling(mc.n_experts, mc.horizon, mc.d_model, mc.d_head, mc.n_heads, rng))
    ema = EmaGradState.zeros(mc.n_layers, mc.n_heads, mc.d_model, mc.d_head, config.gamma)
    os_ema = EmaGradState.zeros(1, mc.n_heads, mc.d_model, mc.d_head, config.gamma)
    return ModelState(
        config=config,
        params=params,
        buffers=buffers,
        ema=ema,
        os_ema=os_ema,
        egd=EgdState.uniform(mc.n_experts, config.eta),
        ftpl=FtplState.fresh(mc.n_experts, config.ftpl_m, config.ftpl_scale, seed=config.seed + 1),
        opt=AdamW(weight_decay=config.weight_decay),
        norm_mean=np.zeros(n_channels),
        norm_std=np.ones(n_channels),
    )


def _batch_windows(z: np.ndarray, anchors, L: int, H: int):
    """Stack windows of the normalized trace into channel-independent rows: (n*M, L), (n*M, H)."""
    idx = np.asarray(anchors)
    hist = np.stack([z[t - L : t] for t in idx])  # (n, L, M)
    targ = np.stack([z[t : t + H] for t in idx])
    n, _, M = hist.shape
    return hist.transpose(0, 2, 1).reshape(n * M, L), targ.transpose(0, 2, 1).reshape(n * M, H)


def _expert_loss_grads(outs, Y):
    """Per-expert MSE and its gradient; each expert is trained only on its own loss."""
    n = Y.size
    losses = np.array([float(np.mean((o - Y) ** 2)) for o in outs])
    douts = [2.0 * (o - Y) / n for o in outs]
    return losses, douts


def evaluate_loss(state: ModelState, z: np.ndarray, anchors, batch: int = 256) -> float:
    mc = state.config.model
    total, count = 0.0, 0
    anchors = list(anchors)
    for s in range(0, len(anchors), batch):
        X, Y = _batch_windows(z, anchors[s : s + batch], mc.lookback, mc.horizon)
        outs, _ = mdl.forward(mc, state.params, state.buffers, X, record=False)
        total += sum(float(np.sum((o - Y) ** 2)) for o in outs)
        count += Y.size * len(outs)
    return total / count


def pretrain(trace: TimeSeriesTrace, config: EngineConfig, state: ModelState | None = None) -> ModelState:
    """Minibatch training over shuffled stride-``offline_stride`` windows; best validation epoch kept."""
    mc = config.model
    L, H = mc.lookback, mc.horizon
    if L + H > trace.n_rows:
        raise TraceTooShort(f"pretraining needs {L + H} rows, trace has {trace.n_rows}")
    state = init_state(config, trace.n_channels) if state is None else state
    split = int(round(trace.n_rows * (1 - config.val_fraction)))
    stats_stop = split if split >= 2 else trace.n_rows
    state.norm_mean, std = standard_stats(trace, 0, stats_stop)
    state.norm_std = std
    z = (trace.values - state.norm_mean) / safe_std(std)
    anchors = np.arange(L, trace.n_rows - H + 1, config.offline_stride)
    train_a = anchors[anchors + H <= split]
    val_a = anchors[anchors >= split]
    if len(train_a) == 0:
        train_a, val_a = anchors, anchors[:0]
    rng = np.random.default_rng(config.seed + 2)
    best = (np.inf, None)
    for epoch in range(config.epochs):
        order = rng.permutation(train_a)
        ep_loss = 0.0
        for s in range(0, len(order), config.batch_size):
            X, Y = _batch_windows(z, order[s : s + config.batch_size], L, H)
            outs, cache = mdl.forward(mc, state.params, state.buffers, X, train=True, version=state.version)
            losses, douts = _expert_loss_grads(outs, Y)
            grads = mdl.backward(mc, state.params, cache, douts, state.version)
            state.opt.step(state.params, grads, config.lr)
            mdl.commit_running_stats(mc, state.buffers, cache)
            state.version += 1
            ep_loss += float(losses.sum()) * len(X)
        state.train_loss.append(ep_loss / (len(order) * trace.n_channels))
        if len(val_a):
            vl = evaluate_loss(state, z, val_a)
            state.val_loss.append(vl)
            if vl < best[0]:
                best = (vl, (_copy(state.params), _copy(state.buffers)))
        log.info("epoch %d train %.5f val %s", epoch, state.train_loss[-1], state.val_loss[-1] if state.val_loss else "-")
    if best[1] is not None:
        state.params, state.buffers = best[1]
    state.opt = AdamW(weight_decay=config.weight_decay)
    return state


def _copy(d: dict) -> dict:
    return {k: v.copy() for k, v in d.items()}


# -- online loop --------------------------------------------------------------


@dataclass
class StepRecord:
    anchor: int
    wmape_num: float
    wmape_den: float
    expert_losses: np.ndarray
    combined_loss: float
    selection: str


@dataclass
class OnlineResult:
    metrics: MetricReport
    ledger: RegretLedger
    steps: list[StepRecord]
    audit: list[tuple[str, int, int, int]]  # (kind, start, end, clock)
    forecasts: list[tuple[int, np.ndarray, np.ndarray]]  # (anchor, emitted raw (H, M), truth raw (H, M))
    weights: list[np.ndarray]

    def write_step_log(self, path) -> None:
        d = len(self.steps[0].expert_losses) if self.steps else 0
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["anchor", "wmape_num", "wmape_den", *(f"expert_{i + 1}" for i in range(d)), "combined_loss", "selected_or_weights"])
            for s in self.steps:
                w.writerow([s.anchor, repr(s.wmape_num), repr(s.wmape_den), *(repr(float(x)) for x in s.expert_losses), repr(s.combined_loss), s.selection])

    def write_forecasts(self, path, channel_names) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["anchor", "step", "channel", "forecast", "truth"])
            for anchor, pred, truth in self.forecasts:
                for k in range(pred.shape[0]):
                    for j, name in enumerate(channel_names):
                        w.writerow([anchor, k, name, repr(float(pred[k, j])), repr(float(truth[k, j]))])


def predict(state: ModelState, history: np.ndarray, adapted: bool = True):
    """Forecast from raw history (L, M). Returns ``(emitted (H, M), experts (d, H, M), weights)``.

    Read-only: no state changes except FTPL's generator when it samples an expert.
    """
    cfg = state.config
    z = (np.asarray(history, dtype=np.float64) - state.norm_mean) / safe_std(state.norm_std)
    X = z.T
    outs, _ = mdl.forward(cfg.model, state.params, state.buffers, X, ema=_ema_for_forward(state, adapted), record=False)
    F = np.stack(outs)
    comb, weights, _ = _combine(state, F, adapted)
    emitted = comb.T * safe_std(state.norm_std) + state.norm_mean
    experts = F.transpose(0, 2, 1) * safe_std(state.norm_std) + state.norm_mean
    return emitted, experts, weights


def _ema_for_forward(state: ModelState, adapted: bool = True):
    if state.config.disable_adapter or not adapted or not state.ema.initialized:
        return None
    return state.ema.grads


def _combine(state: ModelState, F: np.ndarray, adapted: bool = True):
    cfg = state.config
    d, B, H = F.shape
    if cfg.ensemble == "os":
        truth = state.latest_truth if state.latest_truth is not None else np.zeros((B, H))
        os_ema = None
        if not cfg.disable_adapter and adapted and state.os_ema.initialized:
            os_ema = state.os_ema.grads[0]
        s, comb, cache = online_scale(F, truth, state.egd.w, state.params, os_ema)
        return comb, s.mean(axis=0), cache
    if cfg.ensemble == "ftpl":
        idx = ftpl_select(state.ftpl)
        w = np.zeros(d)
        w[idx] = 1.0
        return F[idx], w, idx
    return F.mean(axis=0), np.full(d, 1.0 / d), None


@dataclass
class StepOutcome:
    combined: np.ndarray  # (M, H), normalized space
    experts: np.ndarray  # (d, M, H)
    expert_losses: np.ndarray
    combined_loss: float
    weights: np.ndarray


def online_step(state: ModelState, history: np.ndarray, target: np.ndarray) -> StepOutcome:
    """One forecast/feedback event on normalized data: history (L, M), target (H, M).

    The forecast is computed before ``target`` is touched. Then the ensemble
    state, EMA gradients and (every ``update_interval`` events) the parameters
    are updated. Gradient accumulation between optimizer steps lives on the
    state object but is not checkpointed.
    """
    cfg = state.config
    mc = cfg.model
    outs, cache = mdl.forward(
        mc, state.params, state.buffers, history.T, ema=_ema_for_forward(state), version=state.version, record=not cfg.freeze
    )
    F = np.stack(outs)
    comb, w_used, os_cache = _combine(state, F)

    Y = np.asarray(target, dtype=np.float64).T
    losses, douts = _expert_loss_grads(outs, Y)
    comb_loss = float(np.mean((comb - Y) ** 2))
    if not cfg.freeze:
        state.egd = egd_update(state.egd, losses)
        state.ftpl = ftpl_accumulate(state.ftpl, losses)
        grads = mdl.backward(mc, state.params, cache, douts, state.version)
        if cfg.ensemble == "os":
            grads.update(online_scale_backward(2.0 * (comb - Y) / Y.size, os_cache, state.params))
        layer_grads = [attention_gradient(grads, f"layer.{l}") for l in range(mc.n_layers)]
        state.ema = ema_update(state.ema, layer_grads) if state.ema.initialized else ema_initialize(state.ema, layer_grads)
        if cfg.ensemble == "os":
            os_grad = [attention_gradient(grads, "os")]
            state.os_ema = ema_update(state.os_ema, os_grad) if state.os_ema.initialized else ema_initialize(state.os_ema, os_grad)
        if state.pending is None:
            state.pending = grads
        else:
            for k, g in grads.items():
                state.pending[k] = state.pending[k] + g
        state.n_pending += 1
        if state.n_pending == cfg.update_interval:
            step = state.pending
            if state.n_pending > 1:
                step = {k: g / state.n_pending for k, g in step.items()}
            state.opt.step(state.params, step, cfg.effective_online_lr)
            state.version += 1
            state.pending, state.n_pending = None, 0
    state.latest_truth = Y.copy()
    return StepOutcome(comb, F, losses, comb_loss, np.asarray(w_used, dtype=np.float64))


def online_run(state: ModelState, trace: TimeSeriesTrace, start: int | None = None) -> OnlineResult:
    """Run the online protocol over ``trace`` with stride H, mutating ``state``.

    Anchors run from ``start`` (default L) in steps of H. At each anchor the
    model forecasts from the trailing L rows only; the target rows are read
    afterwards for losses, ensemble updates, EMA gradients and one optimizer
    step per ``update_interval`` feedback events.
    """
    cfg = state.config
    mc = cfg.model
    L, H = mc.lookback, mc.horizon
    if trace.n_channels != state.norm_mean.shape[0]:
        raise ValueError(f"trace has {trace.n_channels} channels, model was fit on {state.norm_mean.shape[0]}")
    start = L if start is None else start
    if start < L:
        raise ValueError(f"first anchor {start} leaves less than L={L} rows of history")
    if start + H > trace.n_rows:
        raise TraceTooShort(f"online run needs {start + H} rows, trace has {trace.n_rows}")
    std = safe_std(state.norm_std)
    z = (trace.values - state.norm_mean) / std
    acc = MetricAccumulator()
    ledger = RegretLedger()
    steps, audit, forecasts, weights_log = [], [], [], []

    for t in range(start, trace.n_rows - H + 1, H):
        audit.append(("forecast", t - L, t, t))
        # the target block is read only after the forecast above is fixed
        audit.append(("update", t, t + H, t + H))
        out = online_step(state, z[t - L : t], z[t : t + H])
        pred_raw = out.combined.T * std + state.norm_mean
        truth_raw = trace.values[t : t + H]
        acc.add(out.combined.T, z[t : t + H], pred_raw, truth_raw, out.combined_loss)
        ledger.record(out.combined_loss, out.expert_losses)
        weights_log.append(out.weights)
        forecasts.append((t, pred_raw, truth_raw.copy()))
        if cfg.ensemble == "ftpl":
            sel = str(int(np.argmax(out.weights)) + 1)
        else:
            sel = ";".join(repr(float(x)) for x in out.weights)
        steps.append(
            StepRecord(t, float(np.sum(np.abs(pred_raw - truth_raw))), float(np.sum(truth_raw)), out.expert_losses, out.combined_loss, sel)
        )

    return OnlineResult(acc.report(), ledger, steps, audit, forecasts, weights_log)


def transfer_run(source: TimeSeriesTrace, target: TimeSeriesTrace, config: EngineConfig) -> tuple[ModelState, OnlineResult]:
    """Pretrain on ``source`` and run online on ``target`` with no offline pass over the target."""
    state = pretrain(source, config)
    return state, online_run(state, target)


class EngineForecaster:
    """Adapts a trained state to the simulator's forecaster protocol.

    ``values`` holds ``offset`` rows of history followed by the simulated
    workload, so simulator row ``index`` is ``values[offset + index]``.
    ``forecast(index, n)`` uses only rows before ``index``. ``observe`` is called
    once per scale decision; every ``feedback_interval`` calls, all complete
    H-row targets seen since the last update are fed back in order.
    """

    def __init__(self, state: ModelState, values, feedback_interval: int = 10, offset: int = 0):
        self.state = state
        self.values = np.asarray(values, dtype=np.float64).reshape(len(values), -1)
        self.feedback_interval = max(1, int(feedback_interval))
        self.offset = int(offset)
        self.next_anchor = max(state.config.lookback, self.offset)
        self.n_observed = 0
        self.n_updates = 0

    def observe(self, index: int) -> None:
        self.n_observed += 1
        if self.n_observed % self.feedback_interval:
            return
        L, H = self.state.config.lookback, self.state.config.horizon
        std = safe_std(self.state.norm_std)
        index += self.offset
        while self.next_anchor + H <= index:
            t = self.next_anchor
            z = (self.values[t - L : t + H] - self.state.norm_mean) / std
            online_step(self.state, z[:L], z[L:])
            self.next_anchor += H
            self.n_updates += 1

    def forecast(self, index: int, steps: int) -> np.ndarray:
        L, H = self.state.config.lookback, self.state.config.horizon
        index += self.offset
        if index < L:
            last = self.values[index - 1, 0] if index > 0 else 0.0
            return np.full(steps, last)
        emitted, _, _ = predict(self.state, self.values[index - L : index])
        out = emitted[:, 0]
        if steps > H:
            out = np.concatenate([out, np.full(steps - H, out[-1])])
        return out[:steps]


# -- checkpoints --------------------------------------------------------------


def _entries(state: ModelState) -> dict[str, np.ndarray]:
    e: dict[str, np.ndarray] = {}
    for k, v in state.params.items():
        e[f"param/{k}"] = v
    for k, v in state.buffers.items():
        e[f"buffer/{k}"] = v
    for l, g in enumerate(state.ema.grads):
        e[f"ema/{l}"] = g
    e["os_ema/0"] = state.os_ema.grads[0]
    for k, v in state.opt.m.items():
        e[f"opt.m/{k}"] = v
        e[f"opt.v/{k}"] = state.opt.v[k]
    e["egd/log_w"] = state.egd.log_w
    e["ftpl/cumulative"] = state.ftpl.cumulative
    e["norm/mean"] = np.asarray(state.norm_mean, dtype=np.float64)
    e["norm/std"] = np.asarray(state.norm_std, dtype=np.float64)
    if state.latest_truth is not None:
        e["latest_truth"] = state.latest_truth
    e["history/train_loss"] = np.asarray(state.train_loss, dtype=np.float64)
    e["history/val_loss"] = np.asarray(state.val_loss, dtype=np.float64)
    return e


def save_checkpoint(state: ModelState, path) -> None:
    meta = {
        "version": state.version,
        "ema_initialized": state.ema.initialized,
        "os_ema_initialized": state.os_ema.initialized,
        "opt_t": state.opt.t,
        "egd": {"eta": state.egd.eta, "scale_free": state.egd.scale_free, "loss_sum": state.egd.loss_sum, "n_updates": state.egd.n_updates},
        "ftpl": {"m": state.ftpl.m, "scale": state.ftpl.scale, "t": state.ftpl.t, "rng": state.ftpl.rng.bit_generator.state},
    }
    entries = [
        {"name": k, "shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
        for k, v in _entries(state).items()
    ]
    doc = {
        "header": {"format_version": FORMAT_VERSION, "structural_hash": state.config.structural_hash()},
        "config": state.config.to_dict(),
        "meta": meta,
        "entries": entries,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path, expected: EngineConfig | None = None) -> ModelState:
    try:
        doc = json.loads(Path(path).read_text())
        header = doc["header"]
        version = header["format_version"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        config = EngineConfig.from_dict(doc["config"])
        if config.structural_hash() != header["structural_hash"]:
            raise CorruptCheckpoint(f"{path}: structural hash does not match stored config")
        if expected is not None and expected.structural_hash() != header["structural_hash"]:
            raise VersionMismatch(f"{path}: checkpoint structure {header['structural_hash']} != expected {expected.structural_hash()}")
        arrays = {}
        for ent in doc["entries"]:
            a = np.asarray(ent["data"], dtype=np.float64)
            arrays[ent["name"]] = a.reshape(ent["shape"])
        meta = doc["meta"]
        state = init_state(config, arrays["norm/mean"].shape[0])
        for prefix, target in (("param/", state.params), ("buffer/", state.buffers)):
            loaded = {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}
            if set(loaded) != set(target):
                raise CorruptCheckpoint(f"{path}: {prefix[:-1]} set does not match the configured model")
            for k, v in loaded.items():
                if v.shape != target[k].shape:
                    raise CorruptCheckpoint(f"{path}: {k} has shape {v.shape}, expected {target[k].shape}")
                target[k] = v
        state.ema = EmaGradState([arrays[f"ema/{l}"] for l in range(config.n_layers)], config.gamma, meta["ema_initialized"])
        state.os_ema = EmaGradState([arrays["os_ema/0"]], config.gamma, meta["os_ema_initialized"])
        state.opt.t = meta["opt_t"]
        for k, v in arrays.items():
            if k.startswith("opt.m/"):
                state.opt.m[k[6:]] = v
            elif k.startswith("opt.v/"):
                state.opt.v[k[6:]] = v
        state.egd = EgdState(arrays["egd/log_w"], **meta["egd"])
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["ftpl"]["rng"]
        state.ftpl = FtplState(arrays["ftpl/cumulative"], meta["ftpl"]["m"], meta["ftpl"]["scale"], rng, meta["ftpl"]["t"])
        state.norm_mean = arrays["norm/mean"]
        state.norm_std = arrays["norm/std"]
        state.latest_truth = arrays.get("latest_truth")
        state.version = meta["version"]
        state.train_loss = arrays["history/train_loss"].tolist()
        state.val_loss = arrays["history/val_loss"].tolist()
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
    return state
