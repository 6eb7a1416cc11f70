"""Straight-line reference implementations written with scalar loops.

They share no code with the package: plain Python floats, ``math.exp`` and
``math.erf``, explicit index arithmetic. Inputs are nested lists or arrays.
"""

import math


def _mm(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def _cols(m, lo, hi):
    return [row[lo:hi] for row in m]


def crl(x, theta, w_k, w_v, w_o, t, heads):
    """Temporal-query channel attention for one window ``x`` (N_c x L_in)."""
    n_c, L = len(x), len(x[0])
    W = len(theta[0])
    q = [[theta[c][(t + j) % W] for j in range(L)] for c in range(n_c)]
    k = _mm(x, w_k)
    v = _mm(x, w_v)
    d = L // heads
    concat = [[0.0] * L for _ in range(n_c)]
    for h in range(heads):
        lo = h * d
        for i in range(n_c):
            scores = [sum(q[i][lo + m] * k[j][lo + m] for m in range(d)) / math.sqrt(L) for j in range(n_c)]
            top = max(scores)
            e = [math.exp(s - top) for s in scores]
            z = sum(e)
            for m in range(d):
                concat[i][lo + m] = sum(e[j] / z * v[j][lo + m] for j in range(n_c))
    return _mm(concat, w_o)


def _layer_norm(row, scale, shift, eps):
    n = len(row)
    mean = sum(row) / n
    var = sum((r - mean) ** 2 for r in row) / n
    return [(r - mean) / math.sqrt(var + eps) * scale[i] + shift[i] for i, r in enumerate(row)]


def _gelu(u):
    return 0.5 * u * (1.0 + math.erf(u / math.sqrt(2.0)))


def block(z, w, heads, eps=1e-5):
    """Transformer block on one token matrix ``z`` (n_tokens x F).

    ``w`` maps the block's parameter names to nested lists.
    """
    n, F = len(z), len(z[0])
    q, k, v = _mm(z, w["w_q"]), _mm(z, w["w_k"]), _mm(z, w["w_v"])
    d = F // heads
    concat = [[0.0] * F for _ in range(n)]
    for h in range(heads):
        lo = h * d
        # right-grouped: the d x d context first
        ctx = [[sum(k[r][lo + a] / math.sqrt(n) * v[r][lo + b] for r in range(n)) for b in range(d)] for a in range(d)]
        for i in range(n):
            for b in range(d):
                concat[i][lo + b] = sum(q[i][lo + a] / math.sqrt(d) * ctx[a][b] for a in range(d))
    e = _mm(concat, w["w_o"])
    mid = [_layer_norm([z[i][j] + e[i][j] for j in range(F)], w["ln1_scale"], w["ln1_shift"], eps) for i in range(n)]
    hid = _mm(mid, w["ffn_w1"])
    hid = [[_gelu(hid[i][j] + w["ffn_b1"][j]) for j in range(len(hid[0]))] for i in range(n)]
    ffn = _mm(hid, w["ffn_w2"])
    return [
        _layer_norm([mid[i][j] + ffn[i][j] + w["ffn_b2"][j] for j in range(F)], w["ln2_scale"], w["ln2_shift"], eps)
        for i in range(n)
    ]


def block_weights(module):
    return {name: p.data.tolist() for name, p in module.named_parameters()}


def efficient_attention_left(q, k, v):
    """Scores-first grouping ``((q / sqrt(d)) (k^T / sqrt(n))) v`` for one head."""
    n, d = len(q), len(q[0])
    scores = [[sum(q[i][a] / math.sqrt(d) * k[j][a] / math.sqrt(n) for a in range(d)) for j in range(n)] for i in range(n)]
    return _mm(scores, v)
