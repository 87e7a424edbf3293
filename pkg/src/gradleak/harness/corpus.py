"""Labelled-sentence corpora: loading, vocabulary and the train/hyper/test split."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..models.vocab import UNK, TokenSequence, Vocab

log = logging.getLogger(__name__)


def bundled_corpus_path() -> Path:
    return Path(str(resources.files("gradleak") / "data" / "toy_corpus.tsv"))


@dataclass
class Corpus:
    vocab: Vocab
    sequences: list
    texts: list


def read_tsv(path):
    """Parse ``label<TAB>text`` lines into (label, text) pairs; blank lines are skipped."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected 'label<TAB>text', got {line!r}")
            label, text = parts
            if label.strip() not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            rows.append((int(label), text))
    return rows


def load_corpus(path=None, vocab: Vocab | None = None) -> Corpus:
    """Tokenize a TSV corpus; the vocabulary is built from it unless one is given."""
    path = bundled_corpus_path() if path is None else Path(path)
    rows = read_tsv(path)
    if vocab is None:
        vocab = Vocab.build(text for _, text in rows)
    seqs = []
    for label, text in rows:
        ids = vocab.encode(text)
        if not ids:
            raise ValueError(f"{path}: text {text!r} has no tokens")
        if all(i == UNK for i in ids):
            log.warning("all tokens unknown in %r", text)
        seqs.append(TokenSequence(tuple(ids), label))
    return Corpus(vocab, seqs, [text for _, text in rows])


@dataclass
class Split:
    train: list
    hyper: list
    test: list


def length_quartiles(lengths):
    """Bin index 0..3 of each length by the quartiles of ``lengths``."""
    lengths = np.asarray(lengths)
    edges = np.quantile(lengths, [0.25, 0.5, 0.75])
    return np.searchsorted(edges, lengths, side="left")


def _stratified_pick(idx, bins, k, rng):
    """Pick k of ``idx`` so every length bin is represented in proportion."""
    idx = np.asarray(idx)
    if k > len(idx):
        raise ValueError(f"asked for {k} sequences but only {len(idx)} are eligible")
    groups = [idx[bins == b] for b in np.unique(bins)]
    quota = np.array([k * len(g) / len(idx) for g in groups])
    take = np.floor(quota).astype(int)
    for g in np.argsort(-(quota - take), kind="stable")[: k - take.sum()]:
        take[g] += 1
    picked = [rng.choice(g, size=t, replace=False) for g, t in zip(groups, take) if t]
    return sorted(int(i) for i in np.concatenate(picked)) if picked else []


def split_corpus(sequences, n_test, n_hyper=10, seed=0, min_len=1, max_len=None) -> Split:
    """Length-stratified test and hyperparameter pools; everything else is training data.

    Test sequences are drawn among those with min_len <= length <= max_len.
    Training data excludes every sequence whose tokens equal a held-out one.
    """
    seqs = list(sequences)
    rng = np.random.default_rng(seed)
    lengths = np.array([len(s) for s in seqs])
    hi = lengths.max() if max_len is None else max_len
    eligible = np.flatnonzero((lengths >= min_len) & (lengths <= hi))
    test_idx = _stratified_pick(eligible, length_quartiles(lengths[eligible]), n_test, rng)
    held_ids = {seqs[i].ids for i in test_idx}
    rest = np.array([i for i in range(len(seqs)) if seqs[i].ids not in held_ids], dtype=int)
    hyper_idx = _stratified_pick(rest, length_quartiles(lengths[rest]), n_hyper, rng) if n_hyper else []
    held_ids |= {seqs[i].ids for i in hyper_idx}
    train = [s for s in seqs if s.ids not in held_ids]
    return Split(train=train, hyper=[seqs[i] for i in hyper_idx], test=[seqs[i] for i in test_idx])
