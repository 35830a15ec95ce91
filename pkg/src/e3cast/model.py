"""The multi-resolution forecaster: RevIN -> patches -> alignment -> shared encoder -> heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter as adp
from .backbone import backbone_backward, backbone_forward, layer_buffers, update_running_stats
from .errors import NonInvertibleAffine, ShapeError
from .representer import PatchConfig, patchify_backward, represent


@dataclass(frozen=True)
class ModelConfig:
    lookback: int = 1440
    horizon: int = 60
    patch_sizes: tuple[int, ...] = (16, 32, 64, 128)
    d_model: int = 16
    d_head: int = 8
    n_heads: int = 4
    d_ff: int = 32
    n_layers: int = 2

    def __post_init__(self):
        object.__setattr__(self, "patch_sizes", tuple(int(p) for p in self.patch_sizes))
        if self.lookback < max(self.patch_sizes):
            raise ValueError(f"lookback {self.lookback} shorter than largest patch {max(self.patch_sizes)}")
        if self.horizon < 1 or self.n_layers < 1:
            raise ValueError("horizon and n_layers must be >= 1")

    @property
    def patch(self) -> PatchConfig:
        return PatchConfig(self.patch_sizes, self.d_model)

    @property
    def n_experts(self) -> int:
        return len(self.patch_sizes)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> tuple[dict, dict]:
    """Fresh parameters and batch-norm buffers. Adapter maps start at zero (identity adaptation)."""
    D, Dp, h, F = cfg.d_model, cfg.d_head, cfg.n_heads, cfg.d_ff
    p: dict[str, np.ndarray] = {"revin.r1": np.ones(1), "revin.r2": np.zeros(1)}
    buffers: dict[str, np.ndarray] = {}
    for i, (P, N) in enumerate(zip(cfg.patch_sizes, cfg.patch.n_patches(cfg.lookback))):
        p[f"align.{i}.W"] = _uniform(rng, (P, D), 1 / np.sqrt(P))
        p[f"align.{i}.b"] = _uniform(rng, (D,), 1 / np.sqrt(P))
        p[f"pos.{i}"] = _uniform(rng, (N, D), 0.02)
        p[f"head.{i}.W"] = _uniform(rng, (N * D, cfg.horizon), 1 / np.sqrt(N * D))
        p[f"head.{i}.b"] = _uniform(rng, (cfg.horizon,), 1 / np.sqrt(N * D))
    for l in range(cfg.n_layers):
        for k in ("WQ", "WK", "WV"):
            p[f"layer.{l}.{k}"] = _uniform(rng, (h, D, Dp), 1 / np.sqrt(D))
        p[f"layer.{l}.WO"] = _uniform(rng, (h * Dp, D), 1 / np.sqrt(h * Dp))
        p[f"layer.{l}.W1"] = _uniform(rng, (D, F), 1 / np.sqrt(D))
        p[f"layer.{l}.b1"] = _uniform(rng, (F,), 1 / np.sqrt(D))
        p[f"layer.{l}.W2"] = _uniform(rng, (F, D), 1 / np.sqrt(F))
        p[f"layer.{l}.b2"] = _uniform(rng, (D,), 1 / np.sqrt(F))
        for bn in ("bn1", "bn2"):
            p[f"layer.{l}.{bn}.gamma"] = np.ones(D)
            p[f"layer.{l}.{bn}.beta"] = np.zeros(D)
            # affine shared, running statistics kept per resolution (token statistics differ by patch size)
            for i in range(cfg.n_experts):
                buffers[f"layer.{l}.{bn}.mean.{i}"] = np.zeros(D)
                buffers[f"layer.{l}.{bn}.var.{i}"] = np.ones(D)
        p[f"adapter.{l}.W"] = np.zeros((3 * h * D * Dp, 6 * h * Dp))
        p[f"adapter.{l}.b"] = np.zeros(6 * h * Dp)
    return p, buffers


@dataclass
class ModelCache:
    rep: object
    trace: object
    norm_out: list
    ema: list | None
    version: int


def forward(cfg: ModelConfig, params: dict, buffers: dict, history: np.ndarray, ema=None, train=False, version=0, record=True):
    """history (B, L) -> list of d forecasts (B, H) in the input's scale.

    ``ema`` is a list of per-layer smoothed gradients; when given, the adapter
    computes (alpha, beta) for every layer and the encoder runs adapted.
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[1] != cfg.lookback:
        raise ShapeError(f"history must be (B, {cfg.lookback}), got {history.shape}")
    r1, r2 = params["revin.r1"][0], params["revin.r2"][0]
    if r1 == 0:
        raise NonInvertibleAffine("RevIN scale r1 is zero")
    rep = represent(history, cfg.patch, params)
    coeffs = None
    if ema is not None:
        coeffs = [adp.compute_coeffs(ema[l], params[f"adapter.{l}.W"], params[f"adapter.{l}.b"]) for l in range(cfg.n_layers)]
    norm_out, trace = backbone_forward(rep.aligned, params, buffers, cfg.n_layers, coeffs, train, version, record)
    out = [rep.stats.sigma * ((f - r2) / r1) + rep.stats.mu for f in norm_out]
    return out, ModelCache(rep, trace, norm_out, ema, version)


def backward(cfg: ModelConfig, params: dict, cache: ModelCache, dout, version=None) -> dict:
    """Exact gradients of every parameter given d(loss)/d(forecast_i) for each expert."""
    r1, r2 = params["revin.r1"][0], params["revin.r2"][0]
    sigma = cache.rep.stats.sigma
    dnorm = []
    dr1 = dr2 = 0.0
    for f, dy in zip(cache.norm_out, dout):
        dy = np.zeros_like(f) if dy is None else dy
        ds = dy * sigma
        dnorm.append(ds / r1)
        dr2 -= float(np.sum(ds)) / r1
        dr1 -= float(np.sum(ds * (f - r2))) / r1**2
    grads, daligned, dcoeffs = backbone_backward(cache.trace, dnorm, params, cfg.n_layers, version)
    L = cfg.lookback
    dxn = np.zeros_like(cache.rep.normalized)
    for i, dZ in enumerate(daligned):
        patches = cache.rep.patches[i]
        grads[f"align.{i}.W"] = np.einsum("bnp,bnd->pd", patches, dZ)
        grads[f"align.{i}.b"] = dZ.sum(axis=(0, 1))
        dxn += patchify_backward(dZ @ params[f"align.{i}.W"].T, L, cfg.patch_sizes[i])
    dr1 += float(np.sum(dxn * cache.rep.normalized))
    dr2 += float(np.sum(dxn))
    grads["revin.r1"] = np.array([dr1])
    grads["revin.r2"] = np.array([dr2])
    for l in range(cfg.n_layers):
        if cache.ema is not None and dcoeffs[l] is not None:
            gW, gb = adp.coeffs_backward(cache.ema[l], *dcoeffs[l])
        else:
            gW = np.zeros_like(params[f"adapter.{l}.W"])
            gb = np.zeros_like(params[f"adapter.{l}.b"])
        grads[f"adapter.{l}.W"] = gW
        grads[f"adapter.{l}.b"] = gb
    for name in params:
        if name not in grads:
            grads[name] = np.zeros_like(params[name])
    return grads


def commit_running_stats(cfg: ModelConfig, buffers: dict, cache: ModelCache) -> None:
    """Fold the batch statistics of a train-mode forward into the running averages."""
    for i, res_caches in enumerate(cache.trace.layer_caches):
        for l, c in enumerate(res_caches):
            sub = layer_buffers(buffers, l, i)
            update_running_stats(sub, c)
            for k, v in sub.items():
                buffers[f"layer.{l}.{k}.{i}"] = v
