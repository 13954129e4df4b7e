"""Numpy building blocks with exact analytic backward passes.

Every forward returns ``(output, cache)`` and the matching backward consumes
``(cache, dout)``. All arithmetic is 64-bit; forward passes are deterministic
given identical inputs, and attention masking zeroes blocked weights exactly
so masked positions carry no weight and receive no gradient.
"""

import numpy as np
from scipy.special import erf

MASK_VALUE = -1e9
LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(cache, dout):
    x, w = cache
    dx = dout @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dx, x2.T @ d2, d2.sum(axis=0)


def gelu_forward(x):
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * phi, (x, phi)


def gelu_backward(cache, dout):
    x, phi = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dout * (phi + x * pdf)


def layer_norm_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(cache, dout):
    xhat, inv, gamma = cache
    d = xhat.shape[-1]
    d2 = dout.reshape(-1, d)
    dgamma = (d2 * xhat.reshape(-1, d)).sum(axis=0)
    dbeta = d2.sum(axis=0)
    dxhat = dout * gamma
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def masked_softmax(scores, mask=None):
    """Row softmax; ``mask`` marks blocked positions (True = blocked).

    Blocked scores get an additive -1e9 before the softmax and their weights
    are then zeroed exactly, so rows renormalize over unblocked keys only.
    """
    if mask is not None:
        scores = scores + np.where(mask, MASK_VALUE, 0.0)
    s = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(s)
    if mask is not None:
        w = np.where(mask, 0.0, w)
    return w / w.sum(axis=-1, keepdims=True)


def softmax_backward(w, dw):
    return w * (dw - (dw * w).sum(axis=-1, keepdims=True))


def attention(q, k, v, mask=None):
    """Scaled dot-product attention on already-projected per-head tensors.

    q: (..., Lq, d_h), k/v: (..., Lk, d_h). Returns (context, weights);
    weights rows sum to 1 over unblocked keys.
    """
    d_h = q.shape[-1]
    scores = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(d_h)
    w = masked_softmax(scores, mask)
    return w @ v, w


def split_heads(x, n_head):
    b, length, d = x.shape
    return x.reshape(b, length, n_head, d // n_head).transpose(0, 2, 1, 3)


def merge_heads(x):
    b, n_head, length, d_h = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, length, n_head * d_h)


def mha_forward(params, pfx, xq, xkv, mask, n_head):
    """Multi-head attention: project, attend per head, concat, project out.

    ``xq`` supplies the queries; ``xkv`` the keys/values (equal to ``xq``
    for self-attention). ``mask`` broadcasts to (B, H, Lq, Lk).
    """
    q, cq = linear_forward(xq, params[pfx + ".w_q"], params[pfx + ".b_q"])
    k, ck = linear_forward(xkv, params[pfx + ".w_k"], params[pfx + ".b_k"])
    v, cv = linear_forward(xkv, params[pfx + ".w_v"], params[pfx + ".b_v"])
    qh, kh, vh = (split_heads(t, n_head) for t in (q, k, v))
    ctx, w = attention(qh, kh, vh, mask)
    merged = merge_heads(ctx)
    out, co = linear_forward(merged, params[pfx + ".w_o"], params[pfx + ".b_o"])
    cache = (pfx, cq, ck, cv, co, qh, kh, vh, w, n_head)
    return out, cache, w


def mha_backward(cache, dout, grads):
    pfx, cq, ck, cv, co, qh, kh, vh, w, n_head = cache
    dmerged, dwo, dbo = linear_backward(co, dout)
    grads[pfx + ".w_o"] += dwo
    grads[pfx + ".b_o"] += dbo
    dctx = split_heads(dmerged, n_head)
    dw = dctx @ np.swapaxes(vh, -1, -2)
    dvh = np.swapaxes(w, -1, -2) @ dctx
    dscores = softmax_backward(w, dw) / np.sqrt(qh.shape[-1])
    dqh = dscores @ kh
    dkh = np.swapaxes(dscores, -1, -2) @ qh
    dq, dk, dv = (merge_heads(t) for t in (dqh, dkh, dvh))
    dxq, dwq, dbq = linear_backward(cq, dq)
    grads[pfx + ".w_q"] += dwq
    grads[pfx + ".b_q"] += dbq
    dxk, dwk, dbk = linear_backward(ck, dk)
    grads[pfx + ".w_k"] += dwk
    grads[pfx + ".b_k"] += dbk
    dxv, dwv, dbv = linear_backward(cv, dv)
    grads[pfx + ".w_v"] += dwv
    grads[pfx + ".b_v"] += dbv
    return dxq, dxk + dxv


def ff_forward(params, pfx, x):
    h1, c1 = linear_forward(x, params[pfx + ".w1"], params[pfx + ".b1"])
    act, cg = gelu_forward(h1)
    out, c2 = linear_forward(act, params[pfx + ".w2"], params[pfx + ".b2"])
    return out, (pfx, c1, cg, c2)


def ff_backward(cache, dout, grads):
    pfx, c1, cg, c2 = cache
    dact, dw2, db2 = linear_backward(c2, dout)
    grads[pfx + ".w2"] += dw2
    grads[pfx + ".b2"] += db2
    dh1 = gelu_backward(cg, dact)
    dx, dw1, db1 = linear_backward(c1, dh1)
    grads[pfx + ".w1"] += dw1
    grads[pfx + ".b1"] += db1
    return dx


def ln_forward(params, pfx, x):
    out, cache = layer_norm_forward(x, params[pfx + ".g"], params[pfx + ".b"])
    return out, (pfx, cache)


def ln_backward(cache, dout, grads):
    pfx, inner = cache
    dx, dg, db = layer_norm_backward(inner, dout)
    grads[pfx + ".g"] += dg
    grads[pfx + ".b"] += db
    return dx


def sinusoidal_table(max_len: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional encodings, shape (max_len, dim)."""
    if dim % 2 != 0:
        raise ValueError("positional width must be even")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(0, dim, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i / dim)
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x):
    """Numerically stable logistic clamped into the open interval (0, 1)."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _SIG_LO, _SIG_HI)
