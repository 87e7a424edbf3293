"""Reconstruction quality (ROUGE F-scores) and classifier utility (MCC)."""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .models.vocab import PAD


@dataclass(frozen=True)
class RougeScores:
    r1: float
    r2: float
    rL: float

    def to_dict(self):
        return {"r1": self.r1, "r2": self.r2, "rL": self.rL}


def _tokens(seq):
    ids = getattr(seq, "ids", seq)
    return [int(t) for t in ids if int(t) != PAD]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap, n_ref, n_cand):
    if overlap == 0 or n_ref == 0 or n_cand == 0:
        return 0.0
    p = overlap / n_cand
    r = overlap / n_ref
    return 100.0 * 2 * p * r / (p + r)


def lcs_length(a, b):
    """Longest common subsequence length by dynamic programming."""
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _counts(ref, cand):
    """Raw overlap counts behind one pair's scores, used for micro-averaging."""
    out = {}
    for n in (1, 2):
        rg, cg = _ngrams(ref, n), _ngrams(cand, n)
        out[n] = (sum((rg & cg).values()), sum(rg.values()), sum(cg.values()))
    out["L"] = (lcs_length(ref, cand), len(ref), len(cand))
    return out


def _scores(counts):
    return RougeScores(*(_f1(*counts[k]) for k in (1, 2, "L")))


def rouge(reference, candidate) -> RougeScores:
    """ROUGE-1/2/L F1 (percent) of one candidate against one reference.

    Accepts TokenSequences or plain id lists; PAD ids are dropped from both.
    """
    ref, cand = _tokens(reference), _tokens(candidate)
    if not ref:
        raise ValueError("reference sequence is empty")
    return _scores(_counts(ref, cand))


def edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def match_batch(references, candidates):
    """Assignment of candidates to references with the least total edit distance.

    Returns ``order`` with candidates[order[i]] paired to references[i]. All
    assignments are enumerated, which is fine for the small batches used here.
    """
    refs = [_tokens(r) for r in references]
    cands = [_tokens(c) for c in candidates]
    if len(refs) != len(cands):
        raise ValueError(f"{len(refs)} references but {len(cands)} candidates")
    cost = [[edit_distance(r, c) for c in cands] for r in refs]
    best, best_cost = None, None
    for order in itertools.permutations(range(len(cands))):
        total = sum(cost[i][j] for i, j in enumerate(order))
        if best_cost is None or total < best_cost:
            best, best_cost = order, total
    return list(best)


def rouge_batch(references, candidates) -> RougeScores:
    """Micro-averaged ROUGE over a batch after pairing by least edit distance."""
    order = match_batch(references, candidates)
    totals = {k: [0, 0, 0] for k in (1, 2, "L")}
    for i, j in enumerate(order):
        ref, cand = _tokens(references[i]), _tokens(candidates[j])
        if not ref:
            raise ValueError(f"reference {i} is empty")
        for k, c in _counts(ref, cand).items():
            for a in range(3):
                totals[k][a] += c[a]
    return _scores(totals)


def aggregate(scores, mode="macro") -> RougeScores:
    """Mean of per-run RougeScores ("macro"); see ``aggregate_micro`` for pooled counts."""
    scores = list(scores)
    if not scores:
        raise ValueError("nothing to aggregate")
    if mode != "macro":
        raise ValueError(f"unknown aggregation {mode!r}")
    return RougeScores(*(float(np.mean([getattr(s, k) for s in scores])) for k in ("r1", "r2", "rL")))


def aggregate_micro(pairs) -> RougeScores:
    """F-scores from overlap counts pooled over all (reference, candidate) pairs."""
    totals = {k: [0, 0, 0] for k in (1, 2, "L")}
    for ref, cand in pairs:
        for k, c in _counts(_tokens(ref), _tokens(cand)).items():
            for a in range(3):
                totals[k][a] += c[a]
    return _scores(totals)


def mcc(predictions, truths) -> float:
    """Matthews correlation for binary labels; 0 when any confusion marginal is empty."""
    p = np.asarray(predictions).astype(int).ravel()
    t = np.asarray(truths).astype(int).ravel()
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions but {t.size} truths")
    if p.size == 0:
        raise ValueError("mcc needs at least one label")
    tp = int(np.sum((p == 1) & (t == 1)))
    tn = int(np.sum((p == 0) & (t == 0)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / np.sqrt(denom))
