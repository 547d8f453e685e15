"""Plain-numpy full-attention forward used as an oracle.

Written without the autodiff Tensor, the mask builders or the accelerated
kernels: explicit loops for padding and moving averages, ordinary softmax.
"""

import math

import numpy as np


def moving_average_loop(series, k):
    T = len(series)
    half = k // 2
    out = np.empty(T)
    for t in range(T):
        acc = 0.0
        for s in range(t - half, t + half + 1):
            acc += series[min(max(s, 0), T - 1)]
        out[t] = acc / k
    return out


def decompose_ref(x, kernels):
    T, D = x.shape
    trend = np.zeros_like(x)
    for d in range(D):
        trend[:, d] = np.mean([moving_average_loop(x[:, d], k) for k in kernels], axis=0)
    return x - trend, trend


def conv3_ref(series, w, b):
    # series (T,), w (3, c), b (c,) -> (c, T)
    T = len(series)
    c = w.shape[1]
    out = np.zeros((c, T))
    for t in range(T):
        prev = series[max(t - 1, 0)]
        nxt = series[min(t + 1, T - 1)]
        out[:, t] = w[0] * prev + w[1] * series[t] + w[2] * nxt + b
    return out


def tokens_ref(maps, p):
    # maps (c, T) -> (N, c*p), zero padded at the end, flattened feature-major
    c, T = maps.shape
    n = math.ceil(T / p)
    padded = np.zeros((c, n * p))
    padded[:, :T] = maps
    return np.stack([padded[:, i * p:(i + 1) * p].reshape(-1) for i in range(n)])


def softmax_rows(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mha_ref(xq, xkv, P, heads):
    d = xq.shape[1]
    dk = d // heads
    q = xq @ P["w_q"] + P["b_q"]
    k = xkv @ P["w_k"] + P["b_k"]
    v = xkv @ P["w_v"] + P["b_v"]
    outs = []
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        a = softmax_rows(q[:, sl] @ k[:, sl].T / math.sqrt(dk))
        outs.append(a @ v[:, sl])
    return np.concatenate(outs, axis=1) @ P["w_o"] + P["b_o"]


def ln_ref(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gelu_ref(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def ffn_ref(x, P):
    return gelu_ref(x @ P["w1"] + P["b1"]) @ P["w2"] + P["b2"]


def sub(P, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in P.items() if k.startswith(prefix + ".")}


def forward_ref(x, cfg, params):
    """Full-attention forecast for one (I, D) history; params are numpy arrays."""
    P = {k: np.asarray(getattr(v, "data", v)) for k, v in params.items()}
    I, D = x.shape
    seasonal, trend = decompose_ref(x, cfg.kernels)
    out = np.zeros((cfg.O, D))
    for d in range(D):
        w_t = P["trend.w"][d] if P["trend.w"].ndim == 3 else P["trend.w"]
        b_t = P["trend.b"][d] if P["trend.b"].ndim == 2 else P["trend.b"]
        trend_pred = trend[:, d] @ w_t + b_t

        enc = tokens_ref(conv3_ref(seasonal[:, d], P["embed.w"], P["embed.b"]), cfg.p)
        dec_series = np.concatenate([seasonal[I - cfg.L:, d], np.zeros(cfg.O)])
        dec = tokens_ref(conv3_ref(dec_series, P["embed.w"], P["embed.b"]), cfg.p)

        h = enc
        for layer in range(cfg.enc_layers):
            pre = f"enc{layer}"
            h = ln_ref(h + mha_ref(h, h, sub(P, f"{pre}.attn"), cfg.heads), P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"])
            h = ln_ref(h + ffn_ref(h, sub(P, f"{pre}.ff")), P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"])
        g = dec
        for layer in range(cfg.dec_layers):
            pre = f"dec{layer}"
            g = ln_ref(g + mha_ref(g, g, sub(P, f"{pre}.self"), cfg.heads), P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"])
            g = ln_ref(g + mha_ref(g, h, sub(P, f"{pre}.cross"), cfg.heads), P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"])
            g = ln_ref(g + ffn_ref(g, sub(P, f"{pre}.ff")), P[f"{pre}.ln3.g"], P[f"{pre}.ln3.b"])

        n_dec = g.shape[0]
        maps = g.reshape(n_dec, cfg.c, cfg.p)  # (N, c, p)
        series = np.einsum("ncp,c->np", maps, P["head.w"]).reshape(-1) + P["head.b"]
        out[:, d] = series[-cfg.O:] + trend_pred
    return out
