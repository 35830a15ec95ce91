import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from e3cast import model as mdl
from e3cast.backbone import (
    attention_layer_backward,
    attention_layer_forward,
    backbone_backward,
    batchnorm_backward,
    batchnorm_forward,
    mhsa_backward,
    mhsa_forward,
    softmax,
)
from e3cast.errors import NumericalInstability, ShapeError, TraceMismatch
from gradcheck import fd_check, model_problem, os_problem

TOL = 1e-4


def mhsa_loop(X, WQ, WK, WV, WO, alpha=None, beta=None):
    """Reference implementation with explicit loops over batch and head."""
    B, N, D = X.shape
    h, _, Dp = WQ.shape
    out = np.zeros((B, N, D))
    for b in range(B):
        heads = []
        for j in range(h):
            proj = []
            for k, W in enumerate((WQ, WK, WV)):
                Wj = W[j].copy()
                if alpha is not None:
                    for c in range(Dp):
                        Wj[:, c] *= alpha[k, j, c]
                E = X[b] @ Wj
                if beta is not None:
                    E = E * beta[k, j]
                proj.append(E)
            Q, K, V = proj
            S = Q @ K.T / np.sqrt(Dp)
            A = np.exp(S - S.max(axis=1, keepdims=True))
            A /= A.sum(axis=1, keepdims=True)
            heads.append(A @ V)
        out[b] = np.concatenate(heads, axis=1) @ WO
    return out


def _weights(rng, h=2, D=6, Dp=3):
    return [rng.normal(size=(h, D, Dp)) * 0.5 for _ in range(3)] + [rng.normal(size=(h * Dp, D)) * 0.5]


def test_mhsa_matches_loop_reference(rng):
    X = rng.normal(size=(2, 5, 6))
    W = _weights(rng)
    out, _ = mhsa_forward(X, *W)
    np.testing.assert_allclose(out, mhsa_loop(X, *W), rtol=1e-12, atol=1e-12)


def test_adapted_mhsa_matches_loop_reference(rng):
    X = rng.normal(size=(2, 5, 6))
    W = _weights(rng)
    alpha, beta = 1 + 0.3 * rng.normal(size=(2, 3, 2, 3))
    out, _ = mhsa_forward(X, *W, coeffs=(alpha, beta))
    np.testing.assert_allclose(out, mhsa_loop(X, *W, alpha, beta), rtol=1e-12, atol=1e-12)


def test_identity_coefficients_are_bit_identical(rng):
    X = rng.normal(size=(3, 7, 6))
    W = _weights(rng)
    ones = np.ones((3, 2, 3))
    a, _ = mhsa_forward(X, *W)
    b, _ = mhsa_forward(X, *W, coeffs=(ones, ones.copy()))
    np.testing.assert_array_equal(a, b)


def test_zero_alpha_gives_uniform_attention(rng):
    X = rng.normal(size=(1, 4, 6))
    W = _weights(rng)
    alpha = np.zeros((3, 2, 3))
    alpha[2] = 1.0  # keep V so the output is not trivially zero
    _, cache = mhsa_forward(X, *W, coeffs=(alpha, np.ones((3, 2, 3))))
    np.testing.assert_allclose(cache["A"], 0.25, atol=1e-15)


def test_mhsa_shape_checks(rng):
    W = _weights(rng)
    with pytest.raises(ShapeError):
        mhsa_forward(np.zeros((1, 3, 5)), *W)
    with pytest.raises(ShapeError):
        mhsa_forward(np.zeros((1, 3, 6)), *W, coeffs=(np.ones((3, 2, 2)), np.ones((3, 2, 2))))


def test_non_finite_input_raises(rng):
    X = rng.normal(size=(1, 3, 6))
    X[0, 0, 0] = np.inf
    with pytest.raises(NumericalInstability):
        mhsa_forward(X, *_weights(rng))


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)), elements=st.floats(-500, 500)))
def test_softmax_rows_on_simplex(x):
    s = softmax(x)
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_batchnorm_train_normalizes_each_feature(rng):
    x = rng.normal(3, 2, size=(4, 6, 5))
    out, _ = batchnorm_forward(x, np.ones(5), np.zeros(5), np.zeros(5), np.ones(5), train=True)
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 1)), 1, atol=1e-4)


def test_batchnorm_eval_uses_running_stats(rng):
    x = rng.normal(size=(2, 3, 4))
    mean, var = rng.normal(size=4), 1 + rng.random(4)
    out, _ = batchnorm_forward(x, np.full(4, 2.0), np.full(4, 0.5), mean, var, train=False)
    np.testing.assert_allclose(out, 2.0 * (x - mean) / np.sqrt(var + 1e-5) + 0.5)


def _fd_array(f, x, eps=1e-6):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + eps
        a = f()
        flat[i] = o - eps
        b = f()
        flat[i] = o
        gf[i] = (a - b) / (2 * eps)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_input_gradient(rng, train):
    x = rng.normal(size=(2, 3, 4))
    gamma, beta = 1 + rng.random(4), rng.normal(size=4)
    rm, rv = rng.normal(size=4), 1 + rng.random(4)
    G = rng.normal(size=x.shape)
    out, cache = batchnorm_forward(x, gamma, beta, rm, rv, train)
    dx, dg, db = batchnorm_backward(G, cache)
    f = lambda: np.sum(G * batchnorm_forward(x, gamma, beta, rm, rv, train)[0])
    assert _rel(dx, _fd_array(f, x)) < TOL
    assert _rel(dg, _fd_array(f, gamma)) < TOL
    assert _rel(db, _fd_array(f, beta)) < TOL


@pytest.mark.parametrize("adapted", [True, False])
def test_mhsa_gradients(rng, adapted):
    X = rng.normal(size=(2, 4, 6))
    W = _weights(rng)
    coeffs = (1 + 0.2 * rng.normal(size=(3, 2, 3)), 1 + 0.2 * rng.normal(size=(3, 2, 3))) if adapted else None
    G = rng.normal(size=(2, 4, 6))
    out, cache = mhsa_forward(X, *W, coeffs=coeffs)
    dX, grads, dc = mhsa_backward(G, cache)
    f = lambda: np.sum(G * mhsa_forward(X, *W, coeffs=coeffs)[0])
    assert _rel(dX, _fd_array(f, X)) < TOL
    for name, w in zip(("WQ", "WK", "WV", "WO"), W):
        assert _rel(grads[name], _fd_array(f, w)) < TOL, name
    if adapted:
        assert _rel(dc[0], _fd_array(f, coeffs[0])) < TOL
        assert _rel(dc[1], _fd_array(f, coeffs[1])) < TOL
    else:
        assert dc is None


def test_attention_layer_input_gradient(rng):
    D = 6
    p = dict(zip(("WQ", "WK", "WV", "WO"), _weights(rng, D=D)))
    p.update(W1=rng.normal(size=(D, 8)), b1=rng.normal(size=8), W2=rng.normal(size=(8, D)), b2=rng.normal(size=D))
    p.update({"bn1.gamma": 1 + rng.random(D), "bn1.beta": rng.normal(size=D), "bn2.gamma": 1 + rng.random(D), "bn2.beta": rng.normal(size=D)})
    buf = {"bn1.mean": np.zeros(D), "bn1.var": np.ones(D), "bn2.mean": np.zeros(D), "bn2.var": np.ones(D)}
    X = rng.normal(size=(3, 4, D))
    G = rng.normal(size=X.shape)
    _, cache = attention_layer_forward(X, p, buf, None, True)
    dX, _, _ = attention_layer_backward(G, cache)
    f = lambda: np.sum(G * attention_layer_forward(X, p, buf, None, True)[0])
    assert _rel(dX, _fd_array(f, X)) < TOL


@pytest.mark.parametrize("train", [True, False])
@pytest.mark.parametrize("adapted", [True, False])
def test_full_model_gradients(train, adapted):
    params, loss, grads = model_problem(seed=3, train=train, adapted=adapted)
    errs = fd_check(params, loss, grads, max_entries=8)
    worst = max(errs, key=errs.get)
    assert errs[worst] <= TOL, (worst, errs[worst])


def test_online_scaling_gradients():
    params, loss, grads = os_problem(seed=4)
    errs = fd_check(params, loss, grads, max_entries=10)
    assert max(errs.values()) <= TOL


def test_backward_rejects_stale_trace(rng):
    cfg = mdl.ModelConfig(lookback=16, horizon=2, patch_sizes=(4,), d_model=4, d_head=2, n_heads=2, d_ff=4, n_layers=1)
    params, buffers = mdl.init_params(cfg, rng)
    _, cache = mdl.forward(cfg, params, buffers, rng.normal(size=(1, 16)), version=3)
    with pytest.raises(TraceMismatch):
        backbone_backward(cache.trace, [np.ones((1, 2))], params, 1, version=4)


def test_running_stats_are_kept_per_resolution(rng):
    cfg = mdl.ModelConfig(lookback=16, horizon=2, patch_sizes=(2, 8), d_model=4, d_head=2, n_heads=2, d_ff=4, n_layers=1)
    params, buffers = mdl.init_params(cfg, rng)
    _, cache = mdl.forward(cfg, params, buffers, rng.normal(size=(4, 16)), train=True)
    mdl.commit_running_stats(cfg, buffers, cache)
    for i in range(2):
        bm = cache.trace.layer_caches[i][0]["bn1"]["batch_mean"]
        np.testing.assert_allclose(buffers[f"layer.0.bn1.mean.{i}"], 0.1 * bm)
    assert not np.allclose(buffers["layer.0.bn1.mean.0"], buffers["layer.0.bn1.mean.1"])


def test_single_token_attention_is_value_projection(rng):
    X = rng.normal(size=(1, 1, 6))
    WQ, WK, WV, WO = _weights(rng)
    beta = 1 + 0.2 * rng.normal(size=(3, 2, 3))
    alpha = np.ones((3, 2, 3))
    out, _ = mhsa_forward(X, WQ, WK, WV, WO, coeffs=(alpha, beta))
    heads = [beta[2, j] * (X[0] @ WV[j]) for j in range(2)]
    np.testing.assert_allclose(out[0], np.concatenate(heads, axis=1) @ WO, rtol=1e-12)


def test_zero_query_key_gives_mean_of_values_and_permutation_invariance(rng):
    X = rng.normal(size=(1, 5, 6))
    WQ, WK, WV, WO = _weights(rng)
    WQ[:] = 0
    WK[:] = 0
    out, cache = mhsa_forward(X, WQ, WK, WV, WO)
    ref = np.concatenate([(X[0] @ WV[j]).mean(axis=0) for j in range(2)]) @ WO
    np.testing.assert_allclose(out[0], np.tile(ref, (5, 1)), rtol=1e-12)
    perm, _ = mhsa_forward(X[:, ::-1], WQ, WK, WV, WO)
    np.testing.assert_allclose(perm, out, rtol=1e-12)
    np.testing.assert_allclose(cache["A"].sum(axis=-1), 1.0, atol=1e-9)


def _layer(rng, D=6, scale=1.0):
    p = dict(zip(("WQ", "WK", "WV", "WO"), _weights(rng, D=D)))
    p.update(W1=rng.normal(size=(D, 8)) * scale, b1=rng.normal(size=8), W2=rng.normal(size=(8, D)) * scale, b2=rng.normal(size=D))
    p.update({"bn1.gamma": np.ones(D), "bn1.beta": np.zeros(D), "bn2.gamma": np.ones(D), "bn2.beta": np.zeros(D)})
    buf = {"bn1.mean": np.zeros(D), "bn1.var": np.ones(D), "bn2.mean": np.zeros(D), "bn2.var": np.ones(D)}
    return p, buf


def test_degenerate_layer_is_norm_of_norm(rng):
    p, buf = _layer(rng)
    for k in ("WQ", "WK", "WV", "WO", "W1", "b1", "W2", "b2"):
        p[k] = np.zeros_like(p[k])
    X = rng.normal(size=(2, 4, 6))
    out, _ = attention_layer_forward(X, p, buf, None, True)
    norm = lambda x: (x - x.mean(axis=(0, 1))) / np.sqrt(x.var(axis=(0, 1)) + 1e-5)
    np.testing.assert_allclose(out, norm(norm(X)), rtol=1e-12, atol=1e-12)


def test_layer_matches_straight_line_reimplementation(rng):
    p, buf = _layer(rng, scale=0.1)
    X = rng.normal(size=(1, 4, 6))
    out, _ = attention_layer_forward(X, p, buf, None, False)
    bn = lambda x: x / np.sqrt(1 + 1e-5)  # identity running stats and affine
    XA = bn(X + mhsa_loop(X, p["WQ"], p["WK"], p["WV"], p["WO"]))
    ffn = np.maximum(0, XA @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"]
    np.testing.assert_allclose(out, bn(XA + ffn), rtol=1e-12, atol=1e-12)


def test_ffn_relu_absorbs_positive_shift(rng):
    # when every pre-activation is positive, ReLU is linear: shifting b1 by c and b2 by -c*sum(W2) cancels
    p, buf = _layer(rng)
    X = rng.normal(size=(1, 3, 6))
    p["b1"] = np.full(8, 50.0)
    a, _ = attention_layer_forward(X, p, buf, None, False)
    q = dict(p)
    q["b1"] = p["b1"] + 3.0
    q["b2"] = p["b2"] - 3.0 * p["W2"].sum(axis=0)
    b, _ = attention_layer_forward(X, q, buf, None, False)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


def test_default_shape_chain_for_a_day_of_minutes(rng):
    cfg = mdl.ModelConfig(lookback=1440, horizon=60, patch_sizes=(16, 32, 64, 128), d_model=16, d_head=4, n_heads=4, d_ff=32, n_layers=1)
    params, buffers = mdl.init_params(cfg, rng)
    outs, cache = mdl.forward(cfg, params, buffers, rng.normal(size=(1, 1440)))
    assert [o.shape for o in outs] == [(1, 60)] * 4
    assert [a.shape for a in cache.rep.aligned] == [(1, n, 16) for n in (90, 45, 23, 12)]


def _small(rng, patches=(4, 8)):
    cfg = mdl.ModelConfig(lookback=16, horizon=2, patch_sizes=patches, d_model=4, d_head=2, n_heads=2, d_ff=4, n_layers=1)
    params, buffers = mdl.init_params(cfg, rng)
    return cfg, params, buffers


def test_zero_loss_gradient_and_masked_head(rng):
    cfg, params, buffers = _small(rng)
    X = rng.normal(size=(2, 16))
    outs, cache = mdl.forward(cfg, params, buffers, X, train=True)
    g0 = mdl.backward(cfg, params, cache, [np.zeros((2, 2)), np.zeros((2, 2))])
    assert all(not np.any(v) for v in g0.values())
    g1 = mdl.backward(cfg, params, cache, [rng.normal(size=(2, 2)), np.zeros((2, 2))])
    unused = [k for k in g1 if k.startswith("head.1.") or k.startswith("align.1.") or k == "pos.1"]
    assert unused and all(not np.any(g1[k]) for k in unused)


def test_doubling_a_head_doubles_its_normalized_output(rng):
    cfg, params, buffers = _small(rng, patches=(4,))
    params["head.0.b"] = np.zeros_like(params["head.0.b"])
    params["revin.r1"], params["revin.r2"] = np.array([1.0]), np.array([0.0])
    X = np.tile(np.array([0.0, 1.0]), 8)[None]  # mean 0.5, std 0.5
    a = (mdl.forward(cfg, params, buffers, X, record=False)[0][0] - 0.5) / 0.5
    params["head.0.W"] = 2 * params["head.0.W"]
    b = (mdl.forward(cfg, params, buffers, X, record=False)[0][0] - 0.5) / 0.5
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-14)


def test_eval_forward_is_deterministic_and_skips_the_trace(rng):
    cfg, params, buffers = _small(rng)
    X = rng.normal(size=(2, 16))
    a, ca = mdl.forward(cfg, params, buffers, X, record=False)
    b, _ = mdl.forward(cfg, params, buffers, X, record=False)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert ca.trace is None
