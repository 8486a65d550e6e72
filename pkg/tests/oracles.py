"""Independent reference implementations written as plain loops over nodes.

Nothing here touches the autodiff engine; every quantity is rebuilt from
numpy arrays so a shared bug cannot hide in both routes.
"""

import math

import numpy as np


def softmax_list(xs):
    top = max(xs)
    ex = [math.exp(x - top) for x in xs]
    z = sum(ex)
    return [e / z for e in ex]


def closed_neighborhood(edges, n, i):
    nb = {i}
    for u, v in edges:
        if u == i:
            nb.add(int(v))
        elif v == i:
            nb.add(int(u))
    return sorted(nb)


def memory_layer(m, H, wq, wk, wv, w1, b1, w2, b2, k_iters=1):
    m = np.array(m, dtype=float).reshape(-1)
    n = H.shape[0]
    d = wq.shape[1]
    keys = [H[j] @ wk for j in range(n)]
    vals = [H[j] @ wv for j in range(n)]
    for _ in range(k_iters):
        q = m @ wq
        scores = [float(q @ keys[j]) / math.sqrt(d) for j in range(n)]
        att = softmax_list(scores)
        read = np.zeros(d)
        for j in range(n):
            read = read + att[j] * vals[j]
        hidden = np.maximum(read @ w1 + b1, 0.0)
        m = m + hidden @ w2 + b2
    return m


def saliency(m, H, wq_s, wk_s):
    m = np.array(m, dtype=float).reshape(-1)
    d = wq_s.shape[1]
    q = m @ wq_s
    scores = [float(q @ (H[j] @ wk_s)) / math.sqrt(d) for j in range(H.shape[0])]
    return np.array(softmax_list(scores))


def fuse(a, s, edges, n, mode, beta=1.0, gamma=1.0):
    """Row i holds the fused distribution over i's closed neighborhood, zero elsewhere."""
    out = np.zeros((n, n))
    for i in range(n):
        nb = closed_neighborhood(edges, n, i)
        if mode == "weighted_sum":
            scores = [a[i][j] + beta * s[j] for j in nb]
        else:
            scores = [(1.0 + s[j]) ** gamma * a[i][j] for j in nb]
        for j, w in zip(nb, softmax_list(scores)):
            out[i][j] = w
    return out


def gcn_norm(edges, n):
    nbs = [closed_neighborhood(edges, n, i) for i in range(n)]
    out = np.zeros((n, n))
    for i in range(n):
        for j in nbs[i]:
            out[i][j] = 1.0 / math.sqrt(len(nbs[i]) * len(nbs[j]))
    return out


def gat_layer(edges, n, H, W, a_src, a_dst):
    """Textbook single-head GAT with ReLU output."""
    z = H @ W
    out = np.zeros_like(z)
    for i in range(n):
        nb = closed_neighborhood(edges, n, i)
        e = []
        for j in nb:
            x = float(z[i] @ a_src[:, 0] + z[j] @ a_dst[:, 0])
            e.append(x if x > 0 else 0.2 * x)
        att = softmax_list(e)
        for j, w in zip(nb, att):
            out[i] += w * z[j]
    return np.maximum(out, 0.0)
