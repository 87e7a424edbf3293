"""Post-norm transformer blocks shared by the classifier and the language model.

Parameters are passed as a mapping of name to Tensor. Every function works
on activations with arbitrary leading axes, and a parameter may carry extra
leading axes of its own (broadcasting against the activations), which is how
several independent attack trials share one tape.
"""
from __future__ import annotations

import numpy as np

from ..core import ops

NEG_INF = -1e9


def init_block(rng, prefix, dim, ff, std=0.1):
    p = {}
    for name in ("q", "k", "v", "o"):
        p[f"{prefix}.{name}.w"] = rng.normal(0.0, std, (dim, dim))
        p[f"{prefix}.{name}.b"] = np.zeros(dim)
    p[f"{prefix}.ln1.g"] = np.ones(dim)
    p[f"{prefix}.ln1.b"] = np.zeros(dim)
    p[f"{prefix}.ff1.w"] = rng.normal(0.0, std, (dim, ff))
    p[f"{prefix}.ff1.b"] = np.zeros(ff)
    p[f"{prefix}.ff2.w"] = rng.normal(0.0, std, (ff, dim))
    p[f"{prefix}.ff2.b"] = np.zeros(dim)
    p[f"{prefix}.ln2.g"] = np.ones(dim)
    p[f"{prefix}.ln2.b"] = np.zeros(dim)
    return p


def linear(h, p, prefix):
    return ops.add(ops.matmul(h, p[prefix + ".w"]), p[prefix + ".b"])


def _split_heads(h, heads):
    *lead, length, dim = h.shape
    h = ops.reshape(h, (*lead, length, heads, dim // heads))
    nd = h.ndim
    return ops.transpose(h, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))


def _merge_heads(h):
    nd = h.ndim
    h = ops.transpose(h, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    *lead, length, heads, dh = h.shape
    return ops.reshape(h, (*lead, length, heads * dh))


def attention(h, p, prefix, heads, bias=None):
    """Multi-head self-attention. ``bias`` is an additive score mask (constant)."""
    dim = h.shape[-1]
    q = _split_heads(linear(h, p, prefix + ".q"), heads)
    k = _split_heads(linear(h, p, prefix + ".k"), heads)
    v = _split_heads(linear(h, p, prefix + ".v"), heads)
    scores = ops.mul(ops.matmul(q, ops.swap_last(k)), 1.0 / np.sqrt(dim / heads))
    if bias is not None:
        scores = ops.add(scores, bias)
    ctx = _merge_heads(ops.matmul(ops.softmax(scores, -1), v))
    return linear(ctx, p, prefix + ".o")


def block(h, p, prefix, heads, bias=None):
    h = ops.layer_norm(ops.add(h, attention(h, p, prefix, heads, bias)), p[prefix + ".ln1.g"], p[prefix + ".ln1.b"])
    f = linear(ops.gelu(linear(h, p, prefix + ".ff1")), p, prefix + ".ff2")
    return ops.layer_norm(ops.add(h, f), p[prefix + ".ln2.g"], p[prefix + ".ln2.b"])


def key_padding_bias(mask):
    """Score bias of shape (..., 1, 1, L) that hides keys where ``mask`` is 0."""
    mask = np.asarray(mask, dtype=np.float64)
    return ops.Tensor(((1.0 - mask) * NEG_INF)[..., None, None, :])


def causal_bias(length):
    return ops.Tensor(np.triu(np.full((length, length), NEG_INF), k=1))
