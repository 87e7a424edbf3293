"""BERT-style binary classifier: the model whose gradients are attacked."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import Tensor, ops
from . import nn
from .vocab import CLS, PAD


@dataclass(frozen=True)
class ClassifierConfig:
    vocab_size: int
    dim: int = 16
    layers: int = 2
    heads: int = 2
    ff: int = 64
    max_len: int = 32
    # token and position tables start small next to the unit-variance attack
    # initialization, as in pretrained BERT-style encoders
    embed_std: float = 0.02
    pos_std: float = 0.01
    weight_std: float = 0.3

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    def to_dict(self):
        return asdict(self)


@dataclass
class ModelParams:
    """Classifier parameters. ``arrays`` is ordered; the order defines the layer list."""

    config: ClassifierConfig
    arrays: dict = field(default_factory=dict)

    @property
    def embed(self):
        return self.arrays["embed"]

    @property
    def pos(self):
        return self.arrays["pos"]

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def tensors(self, requires_grad=False):
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def shapes(self):
        return {k: v.shape for k, v in self.arrays.items()}

    def matched_names(self):
        """Layers whose gradients an attacker compares.

        The token table is left out (its gradient rows name the tokens that
        occur), and so are key biases: attention softmax ignores a constant
        shift of every score in a row, so their gradient is identically zero
        and only floating-point noise would be matched.
        """
        return [k for k in self.arrays if k != "embed" and not k.endswith(".k.b")]


def init_classifier(config: ClassifierConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    d = config.dim
    a = {
        "embed": rng.normal(0.0, config.embed_std, (config.vocab_size, d)),
        "pos": rng.normal(0.0, config.pos_std, (config.max_len, d)),
        "emb_ln.g": np.ones(d),
        "emb_ln.b": np.zeros(d),
    }
    for i in range(config.layers):
        a.update(nn.init_block(rng, f"layer{i}", d, config.ff, config.weight_std))
    a["pool.w"] = rng.normal(0.0, config.weight_std, (d, d))
    a["pool.b"] = np.zeros(d)
    a["cls.w"] = rng.normal(0.0, config.weight_std, (d, 2))
    a["cls.b"] = np.zeros(2)
    return ModelParams(config, a)


def embed(params: ModelParams, ids) -> np.ndarray:
    """Model input rows e_{t_i} + p_i for an id sequence (positions from the first row)."""
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.shape[-1]
    if n > params.config.max_len:
        raise ValueError(f"sequence length {n} exceeds positional table size {params.config.max_len}")
    return params.embed[ids] + params.pos[:n]


def token_embeddings(params: ModelParams, ids) -> np.ndarray:
    """Token-embedding rows e_{t_i} (no positions): the attacker's search space."""
    return params.embed[np.asarray(ids, dtype=np.int64)]


def pooled_output(p: Mapping, config: ClassifierConfig, x, mask=None):
    """Pooler activations tanh(W h_CLS + b) for token embeddings ``x`` (..., n, d).

    A CLS row is prepended and positions added inside; ``mask`` (..., n)
    marks real tokens, zeros are hidden from attention.
    """
    x = ops.as_tensor(x)
    *lead, n, d = x.shape
    if d != config.dim:
        raise ValueError(f"embedding width {d} does not match model dim {config.dim}")
    length = n + 1
    if length > config.max_len:
        raise ValueError(f"sequence length {n} (+CLS) exceeds max_len {config.max_len}")
    cls = ops.broadcast_to(p["embed"][(Ellipsis, slice(CLS, CLS + 1), slice(None))], (*lead, 1, d))
    h = ops.add(ops.concat([cls, x], axis=-2), p["pos"][(Ellipsis, slice(0, length), slice(None))])
    h = ops.layer_norm(h, p["emb_ln.g"], p["emb_ln.b"])
    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if not np.all(mask == 1.0):
            full = np.concatenate([np.ones(mask.shape[:-1] + (1,)), mask], axis=-1)
            bias = nn.key_padding_bias(full)
    for i in range(config.layers):
        h = nn.block(h, p, f"layer{i}", config.heads, bias)
    first = h[(Ellipsis, slice(0, 1), slice(None))]
    return ops.tanh(nn.linear(first, p, "pool"))


def forward(p: Mapping, config: ClassifierConfig, x, mask=None):
    """Two logits per sequence, shape (..., 2)."""
    pooled = pooled_output(p, config, x, mask)
    logits = nn.linear(pooled, p, "cls")
    return ops.reshape(logits, logits.shape[:-2] + (2,))


def one_hot(labels, classes=2):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got {np.unique(labels)}")
    return np.eye(classes)[labels]


def loss_from_embeddings(p, config, x, labels, mask=None):
    """Mean cross-entropy over the batch axis (-1 of ``labels``), summed over any
    further leading axes (independent trials)."""
    logits = forward(p, config, x, mask)
    per = ops.cross_entropy(logits, one_hot(labels))
    per_trial = ops.mean(per, axis=-1) if per.ndim else per
    return ops.sum(per_trial)


def loss_from_tokens(p, config, ids, labels, mask=None):
    """Same loss, starting from token ids (B, n) via embedding lookup."""
    ids = np.asarray(ids, dtype=np.int64)
    if mask is None:
        mask = (ids != PAD).astype(np.float64)
    x = ops.take_rows(p["embed"], ids)
    return loss_from_embeddings(p, config, x, labels, mask)


def predict(params: ModelParams, ids, mask=None) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if mask is None:
        mask = (ids != PAD).astype(np.float64)
    with ops.no_record():
        logits = forward(params.tensors(), params.config, params.embed[ids], mask)
    return logits.data.argmax(axis=-1)
