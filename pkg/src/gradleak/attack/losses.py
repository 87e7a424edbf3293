"""Gradient-matching and embedding-length losses.

The ``*_per_trial`` functions take lists of Tensors whose leading axis indexes
independent trials and return one loss per trial; the plain versions compare
two GradientSets and return a float.
"""
from __future__ import annotations

import numpy as np

from ..core import Tensor, ops


def _reduce_axes(t):
    return tuple(range(1, t.ndim))


def tag_per_trial(targets, grads, alpha_tag):
    """sum_i ||g*_i - g_i||_2 + alpha_tag * ||g*_i - g_i||_1, per trial."""
    total = None
    for gt, g in zip(targets, grads):
        diff = ops.sub(gt, g)
        axes = _reduce_axes(diff)
        ss = ops.sum(ops.mul(diff, diff), axes)
        # d||v||/dv is undefined at v=0; a zero difference contributes 0 with zero slope
        zero = ss.data == 0.0
        term = ops.sqrt(ops.add(ss, zero.astype(np.float64))) if zero.any() else ops.sqrt(ss)
        if zero.any():
            term = ops.mul(term, (~zero).astype(np.float64))
        if alpha_tag:
            term = ops.add(term, ops.mul(ops.sum(ops.abs(diff), axes), alpha_tag))
        total = term if total is None else ops.add(total, term)
    return total


def cos_per_trial(targets, grads, diagnostics=None):
    """1 - mean_i cos(g*_i, g_i), per trial. A zero-norm layer has cosine 0."""
    total = None
    for i, (gt, g) in enumerate(zip(targets, grads)):
        axes = _reduce_axes(g)
        dot = ops.sum(ops.mul(gt, g), axes)
        ss_t = ops.sum(ops.mul(gt, gt), axes)
        ss_g = ops.sum(ops.mul(g, g), axes)
        zero = (ss_t.data == 0.0) | (ss_g.data == 0.0)
        if zero.any():
            if diagnostics is not None:
                diagnostics.append({"layer": i, "trials": np.flatnonzero(np.atleast_1d(zero)).tolist()})
            pad = zero.astype(np.float64)
            ss_t = ops.add(ss_t, pad)
            ss_g = ops.add(ss_g, pad)
            dot = ops.mul(dot, 1.0 - pad)
        c = ops.div(dot, ops.sqrt(ops.mul(ss_t, ss_g)))
        total = c if total is None else ops.add(total, c)
    return ops.sub(1.0, ops.mul(total, 1.0 / len(targets)))


def grad_loss_per_trial(kind, targets, grads, alpha_tag=0.01, diagnostics=None):
    if kind == "cos":
        return cos_per_trial(targets, grads, diagnostics)
    if kind == "tag":
        return tag_per_trial(targets, grads, alpha_tag)
    if kind == "l2":
        return tag_per_trial(targets, grads, 0.0)
    raise ValueError(f"unknown gradient loss {kind!r}; expected cos, tag or l2")


def reg_per_trial(x, mask, vocab_mean_norm):
    """(mean real-slot ||x_i|| - mean_j ||e_j||)^2 per trial.

    ``x`` is (T, B, n, d); ``mask`` (T, B, n) marks real slots.
    """
    mask = np.asarray(mask, dtype=np.float64)
    norms = ops.sqrt(ops.sum(ops.mul(x, x), -1))
    count = mask.sum(axis=tuple(range(1, mask.ndim)))
    mean_norm = ops.div(ops.sum(ops.mul(norms, mask), tuple(range(1, mask.ndim))), count)
    gap = ops.sub(mean_norm, vocab_mean_norm)
    return ops.mul(gap, gap)


def vocab_mean_norm(embed):
    return float(np.linalg.norm(embed, axis=1).mean())


def _stack(gs, names):
    return [Tensor(np.asarray(gs[k], dtype=np.float64)[None]) for k in names]


def _check(g_star, g):
    if list(g_star) != list(g):
        raise ValueError("gradient sets have different layers")
    for k in g_star:
        if np.shape(g_star[k]) != np.shape(g[k]):
            raise ValueError(f"layer {k!r}: shapes {np.shape(g_star[k])} and {np.shape(g[k])}")


def loss_tag(g_star, g, alpha_tag=0.01) -> float:
    _check(g_star, g)
    names = list(g_star)
    with ops.no_record():
        return float(tag_per_trial(_stack(g_star, names), _stack(g, names), alpha_tag).data[0])


def loss_l2(g_star, g) -> float:
    return loss_tag(g_star, g, 0.0)


def loss_cos(g_star, g, diagnostics=None) -> float:
    _check(g_star, g)
    names = list(g_star)
    with ops.no_record():
        return float(cos_per_trial(_stack(g_star, names), _stack(g, names), diagnostics).data[0])


def loss_reg(x, embed, mask=None) -> float:
    """Embedding-length regulariser for x of shape (n, d) or (B, n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if mask is None:
        mask = np.ones(x.shape[:-1])
    with ops.no_record():
        out = reg_per_trial(Tensor(x[None]), np.asarray(mask)[None], vocab_mean_norm(embed))
    return float(out.data[0])
