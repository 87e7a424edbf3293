from __future__ import annotations

import logging

import numpy as np

from ..core import AdamState, Tensor, adam_step, backward, tape
from . import classifier, lm
from .vocab import pad_ids

log = logging.getLogger(__name__)


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def _fit(arrays, loss_fn, n_items, epochs, lr, batch_size, seed, noise_sigma=0.0):
    """Generic Adam loop; returns (new arrays, per-step losses).

    ``noise_sigma`` adds N(0, sigma^2) to every gradient entry before the step.
    """
    rng = np.random.default_rng(seed)
    noise = np.random.default_rng([seed, 1])
    arrays = {k: v.copy() for k, v in arrays.items()}
    states = {k: AdamState(lr=lr) for k in arrays}
    losses = []
    for _ in range(epochs):
        for idx in _minibatches(n_items, batch_size, rng):
            with tape():
                p = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
                loss = loss_fn(p, idx)
                grads = backward(loss, list(p.values()))
            for (k, v), g in zip(arrays.items(), grads):
                g = g.data
                if noise_sigma:
                    g = g + noise.normal(0.0, noise_sigma, g.shape)
                arrays[k] = adam_step(states[k], v, g)
            losses.append(loss.item())
    return arrays, losses


def train_classifier(params, corpus, epochs, lr=3e-3, batch_size=16, seed=0, noise_sigma=0.0):
    """Fine-tune the classifier on labelled TokenSequences. Returns (params, losses).

    A positive ``noise_sigma`` trains with noisy gradients, as a client using
    the noise defense would.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    cfg = params.config
    labels = np.array([s.label for s in corpus])

    def loss_fn(p, idx):
        ids, mask = pad_ids([corpus[i] for i in idx])
        return classifier.loss_from_tokens(p, cfg, ids, labels[idx], mask)

    arrays, losses = _fit(params.arrays, loss_fn, len(corpus), epochs, lr, batch_size, seed, noise_sigma)
    if losses:
        log.info("classifier: %d steps, loss %.4f -> %.4f", len(losses), losses[0], losses[-1])
    return classifier.ModelParams(cfg, arrays), losses


def train_lm(lm_params, corpus, epochs, lr=3e-3, batch_size=16, seed=0):
    """Fit the causal LM by next-token cross-entropy. Returns (params, losses)."""
    corpus = [s for s in corpus if len(s) >= 2]
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    cfg = lm_params.config

    def loss_fn(p, idx):
        ids, mask = pad_ids([corpus[i] for i in idx])
        return lm.lm_loss(p, cfg, ids, mask)

    arrays, losses = _fit(lm_params.arrays, loss_fn, len(corpus), epochs, lr, batch_size, seed)
    if losses:
        log.info("lm: %d steps, loss %.4f -> %.4f", len(losses), losses[0], losses[-1])
    return lm.LmParams(cfg, arrays), losses


def accuracy(params, corpus):
    corpus = list(corpus)
    ids, mask = pad_ids(corpus)
    pred = classifier.predict(params, ids, mask)
    return float(np.mean(pred == np.array([s.label for s in corpus])))
