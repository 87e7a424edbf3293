"""Versioned JSON container for model parameters and captured gradients.

Layout::

    {"format": "gradleak", "version": 1, "kind": "classifier" | "lm" | "gradients",
     "config": {...}, "vocab": [...], "meta": {...},
     "arrays": {name: {"shape": [...], "data": [flat row-major floats]}}}

Floats are written with ``repr`` precision, so a save/load round trip is exact
and re-saving produces identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .classifier import ClassifierConfig, ModelParams, init_classifier
from .lm import LMConfig, LmParams, init_lm
from .vocab import Vocab

FORMAT = "gradleak"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_arrays(arrays):
    return {k: {"shape": list(v.shape), "data": np.asarray(v, dtype=np.float64).ravel().tolist()} for k, v in arrays.items()}


def decode_arrays(blob):
    out = {}
    for k, v in blob.items():
        data = np.asarray(v["data"], dtype=np.float64)
        shape = tuple(v["shape"])
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"array {k!r}: {data.size} values do not fill shape {shape}")
        out[k] = data.reshape(shape)
    return out


def dumps(kind, arrays, config=None, vocab=None, meta=None):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "config": config or {},
        "vocab": list(vocab.tokens) if vocab is not None else None,
        "meta": meta or {},
        "arrays": encode_arrays(arrays),
    }
    return json.dumps(doc)


def loads(text):
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not a {FORMAT} container")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported container version {doc.get('version')}")
    return doc


def _check_shapes(kind, arrays, expected):
    if list(arrays) != list(expected):
        raise CheckpointError(f"{kind}: parameter names {list(arrays)} differ from config {list(expected)}")
    for k, shape in expected.items():
        if arrays[k].shape != shape:
            raise CheckpointError(f"{kind}: {k!r} has shape {arrays[k].shape}, config expects {shape}")


def save_classifier(path, params: ModelParams, vocab: Vocab):
    Path(path).write_text(dumps("classifier", params.arrays, params.config.to_dict(), vocab))


def load_classifier(path):
    doc = loads(Path(path).read_text())
    if doc["kind"] != "classifier":
        raise CheckpointError(f"expected a classifier checkpoint, got {doc['kind']!r}")
    cfg = ClassifierConfig(**doc["config"])
    arrays = decode_arrays(doc["arrays"])
    _check_shapes("classifier", arrays, init_classifier(cfg).shapes())
    return ModelParams(cfg, arrays), Vocab(doc["vocab"])


def save_lm(path, params: LmParams, vocab: Vocab):
    Path(path).write_text(dumps("lm", params.arrays, params.config.to_dict(), vocab))


def load_lm(path):
    doc = loads(Path(path).read_text())
    if doc["kind"] != "lm":
        raise CheckpointError(f"expected an lm checkpoint, got {doc['kind']!r}")
    cfg = LMConfig(**doc["config"])
    arrays = decode_arrays(doc["arrays"])
    ref = init_lm(cfg)
    _check_shapes("lm", arrays, {k: v.shape for k, v in ref.arrays.items()})
    return LmParams(cfg, arrays), Vocab(doc["vocab"])
