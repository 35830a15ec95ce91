"""RevIN, multi-resolution patching and per-resolution alignment.

All functions take a leading batch axis: under channel independence the M
channels of a window (or a minibatch of windows x channels) are just B
univariate series that share every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonInvertibleAffine, ShapeError


@dataclass(frozen=True)
class PatchConfig:
    patch_sizes: tuple[int, ...] = (16, 32, 64, 128)
    hidden_dim: int = 16

    def __post_init__(self):
        ps = tuple(int(p) for p in self.patch_sizes)
        if not ps:
            raise ValueError("need at least one patch size")
        if any(p < 1 for p in ps) or len(set(ps)) != len(ps):
            raise ValueError(f"patch sizes must be distinct and >= 1, got {ps}")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        object.__setattr__(self, "patch_sizes", ps)

    def n_patches(self, L: int) -> tuple[int, ...]:
        return tuple(-(-L // p) for p in self.patch_sizes)


@dataclass
class RevInStats:
    mu: np.ndarray  # (B, 1)
    sigma: np.ndarray  # (B, 1), zero-variance windows substituted by 1


def revin_stats(x: np.ndarray) -> RevInStats:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sigma = x.std(axis=-1, keepdims=True)
    return RevInStats(mu, np.where(sigma == 0, 1.0, sigma))


def revin_normalize(x, r1: float = 1.0, r2: float = 0.0) -> tuple[np.ndarray, RevInStats]:
    stats = revin_stats(x)
    return r1 * (np.asarray(x, dtype=np.float64) - stats.mu) / stats.sigma + r2, stats


def revin_denormalize(y, stats: RevInStats, r1: float = 1.0, r2: float = 0.0) -> np.ndarray:
    if np.any(np.asarray(r1) == 0):
        raise NonInvertibleAffine("RevIN scale r1 is zero")
    return stats.sigma * ((np.asarray(y, dtype=np.float64) - r2) / r1) + stats.mu


def patch_index(L: int, P: int) -> np.ndarray:
    """Gather index (N, P) into a length-L series; the tail repeats the last position."""
    if P < 1:
        raise ValueError("patch size must be >= 1")
    n = -(-L // P)
    return np.minimum(np.arange(n * P), L - 1).reshape(n, P)


def patchify(x, P: int) -> np.ndarray:
    """Split the last axis into ceil(L/P) patches of width P, padding with the last value."""
    x = np.asarray(x)
    return x[..., patch_index(x.shape[-1], P)]


def unpatchify(patches: np.ndarray, L: int) -> np.ndarray:
    return patches.reshape(*patches.shape[:-2], -1)[..., :L]


def patchify_backward(dpatches: np.ndarray, L: int, P: int) -> np.ndarray:
    idx = patch_index(L, P).ravel()
    flat = dpatches.reshape(-1, idx.size)
    out = np.zeros((flat.shape[0], L))
    # padded slots all map to position L-1
    out[:, : min(L, idx.size)] = flat[:, :L]
    if idx.size > L:
        out[:, L - 1] += flat[:, L:].sum(axis=1)
    return out.reshape(*dpatches.shape[:-2], L)


def align(patches: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if patches.shape[-1] != W.shape[0]:
        raise ShapeError(f"patch width {patches.shape[-1]} does not match alignment input {W.shape[0]}")
    return patches @ W + b


@dataclass
class Representation:
    aligned: list[np.ndarray]  # per resolution, (B, N_i, D)
    patches: list[np.ndarray]  # per resolution, (B, N_i, P_i)
    normalized: np.ndarray  # (B, L) before the affine
    stats: RevInStats


def represent(history: np.ndarray, config: PatchConfig, params: dict) -> Representation:
    """history: (B, L) batch of univariate series -> aligned token matrices per resolution."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[None, :]
    stats = revin_stats(history)
    xhat = (history - stats.mu) / stats.sigma
    xn = params["revin.r1"][0] * xhat + params["revin.r2"][0]
    aligned, patches = [], []
    for i, P in enumerate(config.patch_sizes):
        p = patchify(xn, P)
        patches.append(p)
        aligned.append(align(p, params[f"align.{i}.W"], params[f"align.{i}.b"]))
    return Representation(aligned, patches, xhat, stats)
