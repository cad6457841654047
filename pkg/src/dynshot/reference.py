"""Straight-line numpy recomputation of the classifier, independent of the graph engine.

Reads weights straight out of a parameter mapping and loops over pairs
explicitly; used as the oracle for assembled-graph forwards.
"""

from __future__ import annotations

import itertools

import numpy as np


def _act(x, kind):
    return np.maximum(x, 0.0) if kind == "relu" else np.tanh(x)


def mlp_forward(params, prefix, x, n_layers, activation):
    h = x
    for k in range(n_layers):
        h = h @ params[f"{prefix}/layer{k}/W"] + params[f"{prefix}/layer{k}/b"]
        if k != n_layers - 1:
            h = _act(h, activation)
    return h


def g_forward(params, a, b, arch_g):
    layers = len(arch_g.hidden_sizes) + 1
    out = mlp_forward(params, "g", np.concatenate([a, b]), layers, arch_g.activation)
    if arch_g.symmetrize:
        swapped = mlp_forward(params, "g", np.concatenate([b, a]), layers, arch_g.activation)
        out = (out + swapped) / 2.0
    return out


def class_embedding(params, support, arch_g, reduce="mean"):
    outs = [g_forward(params, support[i], support[j], arch_g)
            for i, j in itertools.combinations(range(len(support)), 2)]
    total = np.sum(outs, axis=0)
    return total if reduce == "sum" else total / len(outs)


def logits(params, support, query, arch_g, arch_f):
    emb = class_embedding(params, np.asarray(support, dtype=np.float64), arch_g)
    layers = len(arch_f.hidden_sizes) + 1
    return mlp_forward(params, "f", np.concatenate([query, emb]), layers, arch_f.activation)


def member_prob(params, support, query, arch_g, arch_f):
    z = logits(params, support, query, arch_g, arch_f)
    e = np.exp(z - z.max())
    return float(e[1] / e.sum())
