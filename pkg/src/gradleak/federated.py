"""Honest-but-curious FedSGD exchange: client gradients, aggregation, noise defense."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import backward, tape
from .models import classifier
from .models.checkpoint import CheckpointError, decode_arrays, dumps, loads
from .models.vocab import TokenSequence, pad_ids


class GradientSet(dict):
    """Ordered mapping parameter name -> gradient array."""

    def check_against(self, shapes):
        if list(self) != list(shapes):
            raise ValueError(f"gradient keys {list(self)} differ from parameters {list(shapes)}")
        for k, shape in shapes.items():
            if self[k].shape != tuple(shape):
                raise ValueError(f"gradient {k!r} has shape {self[k].shape}, expected {tuple(shape)}")

    def copy(self):
        return GradientSet((k, v.copy()) for k, v in self.items())


@dataclass
class Batch:
    sequences: list
    ids: np.ndarray = field(init=False)
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sequences = [s if isinstance(s, TokenSequence) else TokenSequence(*s) for s in self.sequences]
        if not self.sequences:
            raise ValueError("batch must hold at least one sequence")
        self.ids, self.mask = pad_ids(self.sequences)

    @property
    def labels(self):
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    @property
    def lengths(self):
        return [len(s) for s in self.sequences]

    def __len__(self):
        return len(self.sequences)


@dataclass(frozen=True)
class DefenseConfig:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"noise sigma must be non-negative, got {self.sigma}")


def client_gradient(params: classifier.ModelParams, batch: Batch) -> GradientSet:
    """Exact gradient of the mean batch loss w.r.t. every parameter tensor."""
    max_len = params.config.max_len - 1
    if batch.ids.shape[1] > max_len:
        raise ValueError(f"batch length {batch.ids.shape[1]} exceeds model limit {max_len}")
    with tape():
        p = params.tensors(requires_grad=True)
        loss = classifier.loss_from_tokens(p, params.config, batch.ids, batch.labels, batch.mask)
        grads = backward(loss, list(p.values()))
    return GradientSet((k, g.data) for k, g in zip(p, grads))


def fedsgd_aggregate(params: classifier.ModelParams, client_grads, rate: float) -> classifier.ModelParams:
    """theta - rate * mean_c(g_c)."""
    client_grads = list(client_grads)
    if not client_grads:
        raise ValueError("need at least one client gradient")
    shapes = params.shapes()
    for g in client_grads:
        GradientSet(g).check_against(shapes)
    new = {}
    for k, v in params.arrays.items():
        new[k] = v - rate * np.mean([g[k] for g in client_grads], axis=0)
    return classifier.ModelParams(params.config, new)


def apply_defense(grads: GradientSet, cfg: DefenseConfig) -> GradientSet:
    """Add i.i.d. N(0, sigma^2) noise to every entry, seeded by ``cfg.seed``."""
    if cfg.sigma == 0:
        return grads.copy()
    rng = np.random.default_rng(cfg.seed)
    return GradientSet((k, v + rng.normal(0.0, cfg.sigma, v.shape)) for k, v in grads.items())


def save_gradients(path, grads: GradientSet, meta=None):
    Path(path).write_text(dumps("gradients", grads, meta=meta))


def load_gradients(path):
    doc = loads(Path(path).read_text())
    if doc["kind"] != "gradients":
        raise CheckpointError(f"expected a gradient capture, got {doc['kind']!r}")
    return GradientSet(decode_arrays(doc["arrays"])), doc["meta"]


def gradients_to_json(grads: GradientSet, meta=None) -> str:
    return dumps("gradients", grads, meta=meta)


def gradients_from_json(text):
    doc = loads(text)
    return GradientSet(decode_arrays(doc["arrays"])), doc["meta"]


__all__ = [
    "Batch",
    "DefenseConfig",
    "GradientSet",
    "apply_defense",
    "client_gradient",
    "fedsgd_aggregate",
    "load_gradients",
    "save_gradients",
]
