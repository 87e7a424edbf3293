"""Auxiliary causal language models used to score how natural a token sequence is."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import Tensor, ops
from . import nn


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    dim: int = 32
    layers: int = 2
    heads: int = 2
    ff: int = 64
    max_len: int = 32
    weight_std: float = 0.1

    def to_dict(self):
        return asdict(self)


@dataclass
class LmParams:
    config: LMConfig
    arrays: dict = field(default_factory=dict)

    def copy(self):
        return LmParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def tensors(self, requires_grad=False):
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def next_log_probs(self, ids):
        """log p(next token | prefix) for every prefix: (N, L) ids -> (N, L, V)."""
        ids = np.asarray(ids, dtype=np.int64)
        with ops.no_record():
            z = lm_logits(self.tensors(), self.config, ids).data
        z = z - z.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def init_lm(config: LMConfig, seed: int = 0) -> LmParams:
    rng = np.random.default_rng(seed)
    d = config.dim
    a = {
        "embed": rng.normal(0.0, 0.3, (config.vocab_size, d)),
        "pos": rng.normal(0.0, 0.1, (config.max_len, d)),
        "emb_ln.g": np.ones(d),
        "emb_ln.b": np.zeros(d),
    }
    for i in range(config.layers):
        a.update(nn.init_block(rng, f"layer{i}", d, config.ff, config.weight_std))
    a["out.w"] = rng.normal(0.0, config.weight_std, (d, config.vocab_size))
    a["out.b"] = np.zeros(config.vocab_size)
    return LmParams(config, a)


def lm_logits(p, config: LMConfig, ids):
    ids = np.asarray(ids, dtype=np.int64)
    length = ids.shape[-1]
    if length > config.max_len:
        raise ValueError(f"sequence length {length} exceeds LM context {config.max_len}")
    h = ops.add(ops.take_rows(p["embed"], ids), p["pos"][0:length])
    h = ops.layer_norm(h, p["emb_ln.g"], p["emb_ln.b"])
    bias = nn.causal_bias(length)
    for i in range(config.layers):
        h = nn.block(h, p, f"layer{i}", config.heads, bias)
    return nn.linear(h, p, "out")


def lm_loss(p, config: LMConfig, ids, mask):
    """Mean next-token cross-entropy over real (mask=1) target positions."""
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    z = lm_logits(p, config, ids[:, :-1])
    targets = np.eye(config.vocab_size)[ids[:, 1:]]
    w = mask[:, 1:]
    per = ops.cross_entropy(z, targets)
    return ops.mul(ops.sum(ops.mul(per, w)), 1.0 / max(w.sum(), 1.0))


class BigramLM:
    """Table LM: p(t_{l+1} | t_1..t_l) = table[t_l, t_{l+1}]."""

    def __init__(self, probs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
            raise ValueError("bigram table must be V x V")
        if not np.allclose(probs.sum(axis=1), 1.0):
            raise ValueError("bigram table rows must sum to 1")
        self.probs = probs

    @classmethod
    def fit(cls, sequences, vocab_size, smoothing=0.01):
        counts = np.full((vocab_size, vocab_size), smoothing)
        for ids in sequences:
            for a, b in zip(ids[:-1], ids[1:]):
                counts[a, b] += 1.0
        return cls(counts / counts.sum(axis=1, keepdims=True))

    def next_log_probs(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        with np.errstate(divide="ignore"):
            return np.log(self.probs)[ids]


class UniformLM:
    """Every next token equally likely."""

    def __init__(self, vocab_size):
        self.vocab_size = vocab_size

    def next_log_probs(self, ids):
        ids = np.asarray(ids)
        return np.full(ids.shape + (self.vocab_size,), -np.log(self.vocab_size))


def lm_perplexity(lm, ids) -> float:
    """-(1/n) * sum_{l=1}^{n-1} log p(t_{l+1} | t_1..t_l).

    The divisor is n although only n-1 conditionals are summed; this is the
    normalisation the attack's selection rule uses, kept as is.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 2:
        raise ValueError("perplexity needs a 1-d sequence of at least 2 tokens")
    return float(lm_perplexity_batch(lm, ids[None])[0])


def lm_perplexity_batch(lm, ids, lengths=None) -> np.ndarray:
    """Row-wise perplexity of an (N, L) id array; ``lengths`` trims padded rows."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows, length = ids.shape
    if lengths is None:
        lengths = np.full(n_rows, length)
    lengths = np.asarray(lengths)
    if np.any(lengths < 2):
        raise ValueError("perplexity needs at least 2 tokens per sequence")
    logp = lm.next_log_probs(ids)
    picked = np.take_along_axis(logp[:, :-1], ids[:, 1:, None], axis=-1)[..., 0]
    valid = np.arange(1, length)[None, :] < lengths[:, None]
    return -np.where(valid, picked, 0.0).sum(axis=1) / lengths
