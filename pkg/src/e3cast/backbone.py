"""Shared attention encoder with hand-written reverse-mode gradients.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
consumes the cache and the upstream gradient. Token tensors are (B, N, D).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalInstability, ShapeError, TraceMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalInstability(f"non-finite values in {what}")
    return x


# -- multi-head self-attention ------------------------------------------------


def mhsa_forward(X, WQ, WK, WV, WO, coeffs=None):
    """Multi-head self-attention.

    WQ/WK/WV are (h, D, D'), WO is (h*D', D). ``coeffs`` is ``(alpha, beta)``
    with both (3, h, D') for the Q/K/V projections: alpha scales the output
    columns of each projection matrix, beta scales the projected embeddings.
    """
    h, D, Dp = WQ.shape
    if X.shape[-1] != D:
        raise ShapeError(f"token width {X.shape[-1]} != projection input {D}")
    Ws = (WQ, WK, WV)
    if coeffs is not None:
        alpha, beta = coeffs
        if alpha.shape != (3, h, Dp) or beta.shape != (3, h, Dp):
            raise ShapeError(f"adaptation coefficients must be (3, {h}, {Dp})")
        Wt = tuple(W * alpha[j][:, None, :] for j, W in enumerate(Ws))
    else:
        alpha = beta = None
        Wt = Ws
    raw = [np.einsum("bnd,hde->bhne", X, W) for W in Wt]
    if beta is not None:
        Q, K, V = (r * beta[j][None, :, None, :] for j, r in enumerate(raw))
    else:
        Q, K, V = raw
    scale = 1.0 / np.sqrt(Dp)
    A = softmax(np.einsum("bhne,bhme->bhnm", Q, K) * scale)
    heads = A @ V  # (B, h, N, D')
    B_, _, N, _ = heads.shape
    concat = heads.transpose(0, 2, 1, 3).reshape(B_, N, h * Dp)
    out = _finite(concat @ WO, "attention output")
    cache = dict(X=X, Ws=Ws, Wt=Wt, WO=WO, raw=raw, Q=Q, K=K, V=V, A=A, concat=concat, alpha=alpha, beta=beta)
    return out, cache


def mhsa_backward(dout, cache):
    """Returns ``(dX, grads, dcoeffs)``; grads has keys WQ, WK, WV, WO."""
    X, Ws, Wt, WO = cache["X"], cache["Ws"], cache["Wt"], cache["WO"]
    Q, K, V, A, concat = cache["Q"], cache["K"], cache["V"], cache["A"], cache["concat"]
    alpha, beta = cache["alpha"], cache["beta"]
    h, D, Dp = Ws[0].shape
    B_, N, _ = X.shape
    scale = 1.0 / np.sqrt(Dp)

    dWO = np.einsum("bnk,bnd->kd", concat, dout)
    dheads = (dout @ WO.T).reshape(B_, N, h, Dp).transpose(0, 2, 1, 3)
    dA = dheads @ V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dheads
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) * scale
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q

    dX = np.zeros_like(X)
    grads = {}
    dalpha = np.zeros((3, h, Dp)) if alpha is not None else None
    dbeta = np.zeros((3, h, Dp)) if beta is not None else None
    for j, (name, demb) in enumerate((("WQ", dQ), ("WK", dK), ("WV", dV))):
        if beta is not None:
            dbeta[j] = np.einsum("bhne,bhne->he", demb, cache["raw"][j])
            demb = demb * beta[j][None, :, None, :]
        dWt = np.einsum("bnd,bhne->hde", X, demb)
        dX += np.einsum("bhne,hde->bnd", demb, Wt[j])
        if alpha is not None:
            dalpha[j] = np.einsum("hde,hde->he", dWt, Ws[j])
            dWt = dWt * alpha[j][:, None, :]
        grads[name] = dWt
    grads["WO"] = dWO
    dcoeffs = (dalpha, dbeta) if alpha is not None else None
    return dX, grads, dcoeffs


# -- batch normalization over (batch, token) per feature ----------------------


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool):
    if train:
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    out = gamma * xhat + beta
    return out, dict(xhat=xhat, inv=inv, gamma=gamma, train=train, batch_mean=mean, batch_var=var)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma = cache["xhat"], cache["inv"], cache["gamma"]
    dgamma = np.sum(dout * xhat, axis=(0, 1))
    dbeta = np.sum(dout, axis=(0, 1))
    dxhat = dout * gamma
    if cache["train"]:
        m = dout.shape[0] * dout.shape[1]
        dx = inv / m * (m * dxhat - dxhat.sum(axis=(0, 1)) - xhat * np.sum(dxhat * xhat, axis=(0, 1)))
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta


# -- attention layer ----------------------------------------------------------

LAYER_KEYS = ("WQ", "WK", "WV", "WO", "W1", "b1", "W2", "b2", "bn1.gamma", "bn1.beta", "bn2.gamma", "bn2.beta")


def attention_layer_forward(X, p: dict, buffers: dict, coeffs=None, train: bool = False):
    """X_A = BN(X + MHSA(X)); out = BN(X_A + FFN(X_A)). ``p`` holds the layer's tensors by short name."""
    att, c_att = mhsa_forward(X, p["WQ"], p["WK"], p["WV"], p["WO"], coeffs)
    XA, c_bn1 = batchnorm_forward(X + att, p["bn1.gamma"], p["bn1.beta"], buffers["bn1.mean"], buffers["bn1.var"], train)
    pre = XA @ p["W1"] + p["b1"]
    hid = np.maximum(pre, 0.0)
    ffn = hid @ p["W2"] + p["b2"]
    out, c_bn2 = batchnorm_forward(XA + ffn, p["bn2.gamma"], p["bn2.beta"], buffers["bn2.mean"], buffers["bn2.var"], train)
    _finite(out, "attention layer output")
    return out, dict(att=c_att, bn1=c_bn1, bn2=c_bn2, XA=XA, pre=pre, hid=hid, W1=p["W1"], W2=p["W2"])


def attention_layer_backward(dout, cache):
    g = {}
    dz2, g["bn2.gamma"], g["bn2.beta"] = batchnorm_backward(dout, cache["bn2"])
    g["W2"] = np.einsum("bnf,bnd->fd", cache["hid"], dz2)
    g["b2"] = dz2.sum(axis=(0, 1))
    dpre = (dz2 @ cache["W2"].T) * (cache["pre"] > 0)
    g["W1"] = np.einsum("bnd,bnf->df", cache["XA"], dpre)
    g["b1"] = dpre.sum(axis=(0, 1))
    dXA = dz2 + dpre @ cache["W1"].T
    dz1, g["bn1.gamma"], g["bn1.beta"] = batchnorm_backward(dXA, cache["bn1"])
    dX_att, ga, dcoeffs = mhsa_backward(dz1, cache["att"])
    g.update(ga)
    return dz1 + dX_att, g, dcoeffs


def update_running_stats(buffers: dict, cache, momentum: float = BN_MOMENTUM) -> None:
    for key in ("bn1", "bn2"):
        c = cache[key]
        if not c["train"]:
            continue
        buffers[f"{key}.mean"] = (1 - momentum) * buffers[f"{key}.mean"] + momentum * c["batch_mean"]
        buffers[f"{key}.var"] = (1 - momentum) * buffers[f"{key}.var"] + momentum * c["batch_var"]


# -- shared encoder with per-resolution heads ---------------------------------


@dataclass
class ForwardTrace:
    version: int
    layer_caches: list = field(default_factory=list)  # [resolution][layer]
    flat: list = field(default_factory=list)  # per resolution (B, N_i*D)
    shapes: list = field(default_factory=list)


def layer_params(params: dict, l: int) -> dict:
    return {k: params[f"layer.{l}.{k}"] for k in LAYER_KEYS}


def layer_buffers(buffers: dict, l: int, i: int) -> dict:
    """Running statistics of layer ``l`` as seen by resolution ``i``."""
    return {k: buffers[f"layer.{l}.{k}.{i}"] for k in ("bn1.mean", "bn1.var", "bn2.mean", "bn2.var")}


def backbone_forward(
    aligned, params: dict, buffers: dict, n_layers: int, coeffs=None, train: bool = False, version: int = 0, record: bool = True
):
    """aligned: list of (B, N_i, D). Returns per-resolution forecasts (B, H) and a trace.

    With ``record=False`` no activations are kept and the returned trace is None.
    """
    trace = ForwardTrace(version) if record else None
    forecasts = []
    lps = [layer_params(params, l) for l in range(n_layers)]
    for i, Z in enumerate(aligned):
        pos = params[f"pos.{i}"]
        if Z.shape[1:] != pos.shape:
            raise ShapeError(f"resolution {i}: tokens {Z.shape[1:]} but positional table {pos.shape}")
        X = Z + pos
        caches = []
        for l in range(n_layers):
            X, c = attention_layer_forward(X, lps[l], layer_buffers(buffers, l, i), None if coeffs is None else coeffs[l], train)
            caches.append(c)
        flat = X.reshape(X.shape[0], -1)
        forecasts.append(flat @ params[f"head.{i}.W"] + params[f"head.{i}.b"])
        if trace is None:
            continue
        trace.layer_caches.append(caches)
        trace.flat.append(flat)
        trace.shapes.append(X.shape)
    return forecasts, trace


def backbone_backward(trace: ForwardTrace, dforecasts, params: dict, n_layers: int, version: int | None = None):
    """Returns ``(grads, daligned, dcoeffs)``. Heads only see their own expert's gradient."""
    if version is not None and trace.version != version:
        raise TraceMismatch(f"trace from parameter version {trace.version}, current is {version}")
    grads: dict[str, np.ndarray] = {}
    daligned = []
    dcoeffs = [None] * n_layers

    def acc(name, g):
        if name in grads:
            grads[name] = grads[name] + g
        else:
            grads[name] = g

    for i, dy in enumerate(dforecasts):
        flat = trace.flat[i]
        acc(f"head.{i}.W", flat.T @ dy)
        acc(f"head.{i}.b", dy.sum(axis=0))
        dX = (dy @ params[f"head.{i}.W"].T).reshape(trace.shapes[i])
        for l in reversed(range(n_layers)):
            dX, g, dc = attention_layer_backward(dX, trace.layer_caches[i][l])
            for k, v in g.items():
                acc(f"layer.{l}.{k}", v)
            if dc is not None:
                dcoeffs[l] = dc if dcoeffs[l] is None else (dcoeffs[l][0] + dc[0], dcoeffs[l][1] + dc[1])
        acc(f"pos.{i}", dX.sum(axis=0))
        daligned.append(dX)
    return grads, daligned, dcoeffs


def attention_gradient(grads: dict, prefix: str) -> np.ndarray:
    """Concatenated Q/K/V projection gradient under ``prefix`` (e.g. "layer.0"), shape (3, h, D, D')."""
    return np.stack([grads[f"{prefix}.{k}"] for k in ("WQ", "WK", "WV")])
