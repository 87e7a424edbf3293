"""Order-changing edits proposed during the discrete search.

Each edit is expressed as an index permutation of the n token slots, so it
can be applied to embedding rows and token ids alike. Positions are 0-based.
"""
from __future__ import annotations

import numpy as np

KINDS = ("swap", "move_token", "move_subseq", "move_prefix")


def swap_perm(n, i, j):
    order = list(range(n))
    order[i], order[j] = order[j], order[i]
    return order


def move_token_perm(n, i, j):
    """Take the token at i and reinsert it right after the token originally at j."""
    order = [k for k in range(n) if k != i]
    if i == j:
        return list(range(n))
    at = order.index(j) + 1
    return order[:at] + [i] + order[at:]


def move_subseq_perm(n, i, j, slot):
    """Cut the block i..j (inclusive) and reinsert it at ``slot`` of the remainder."""
    if not 0 <= i <= j < n:
        raise ValueError(f"invalid block [{i}, {j}] for length {n}")
    rest = [k for k in range(n) if k < i or k > j]
    if not 0 <= slot <= len(rest):
        raise ValueError(f"slot {slot} out of range for remainder of length {len(rest)}")
    return rest[:slot] + list(range(i, j + 1)) + rest[slot:]


def move_prefix_perm(n, i):
    """Move the first i tokens to the end (i == n leaves the sequence unchanged)."""
    if not 1 <= i <= n:
        raise ValueError(f"prefix length {i} out of range for length {n}")
    return list(range(i, n)) + list(range(i))


def random_perm(kind, n, rng):
    """Draw positions uniformly for ``kind`` and return the permutation."""
    if n < 2:
        raise ValueError("transformations need a sequence of at least 2 tokens")
    if kind == "swap":
        i, j = rng.integers(0, n, size=2)
        return swap_perm(n, int(i), int(j))
    if kind == "move_token":
        i, j = rng.integers(0, n, size=2)
        return move_token_perm(n, int(i), int(j))
    if kind == "move_subseq":
        i, j = sorted(rng.choice(n, size=2, replace=False))
        slot = rng.integers(0, n - (j - i + 1) + 1)
        return move_subseq_perm(n, int(i), int(j), int(slot))
    if kind == "move_prefix":
        return move_prefix_perm(n, int(rng.integers(1, n + 1)))
    raise ValueError(f"unknown transformation {kind!r}; expected one of {KINDS}")


def transform(x, kind, rng):
    """Return a reordered copy of the rows of ``x`` (n, ...); ``x`` is untouched."""
    x = np.asarray(x)
    perm = random_perm(kind, x.shape[0], rng)
    return x[perm].copy()
