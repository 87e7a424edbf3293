"""Alternating continuous/discrete reconstruction of token sequences from gradients.

Independent runs (test sequences, label assignments, length guesses) with the
same batch size are stacked along a leading axis and share one tape per step.
Each run keeps its own random stream and its own slice of every array, so the
stacking changes wall time only.
"""
from __future__ import annotations

import itertools
import logging
import time
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from ..core import AdamState, Tensor, adam_step, backward, ops, tape
from ..models import classifier
from ..models.lm import lm_perplexity_batch
from ..models.vocab import CLS, PAD, UNK
from .config import AttackConfig
from .losses import grad_loss_per_trial, reg_per_trial, vocab_mean_norm
from .project import project_to_vocabulary
from .transforms import KINDS, random_perm

log = logging.getLogger(__name__)

SPECIAL_IDS = (CLS, PAD, UNK)
EVAL_CHUNK = 128


@dataclass
class AttackProblem:
    """What the attacker observes for one client update."""

    target: Mapping
    lengths: tuple
    labels: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        self.lengths = tuple(int(n) for n in self.lengths)
        if self.labels is not None:
            self.labels = tuple(int(y) for y in self.labels)
            if len(self.labels) != len(self.lengths):
                raise ValueError("labels and lengths must have one entry per batch element")


@dataclass
class Snapshot:
    step: int
    phase: str
    rec_loss: float
    lm_loss: float | None
    tokens: list

    def to_dict(self):
        return {
            "step": self.step,
            "phase": self.phase,
            "rec_loss": self.rec_loss,
            "lm_loss": self.lm_loss,
            "tokens": [list(t) for t in self.tokens],
        }


@dataclass
class ReconstructionResult:
    tokens: list
    labels: tuple
    lengths: tuple
    rec_loss: float
    snapshots: list = field(default_factory=list)
    truncated: bool = False
    wall_time: float = 0.0
    diagnostics: list = field(default_factory=list)
    alternatives: list = field(default_factory=list)
    padded_length: int = 0

    def to_dict(self):
        # wall time is left out so result files are reproducible byte for byte
        return {
            "tokens": [list(t) for t in self.tokens],
            "labels": list(self.labels),
            "lengths": list(self.lengths),
            "rec_loss": self.rec_loss,
            "truncated": self.truncated,
            "snapshots": [s.to_dict() for s in self.snapshots],
            "alternatives": self.alternatives,
            "padded_length": self.padded_length,
            "diagnostics": self.diagnostics,
        }


def _tiled(shape):
    return (1, 1) + (1,) * (2 - len(shape)) + tuple(shape)


class StackedObjective:
    """L_rec for a stack of runs, each with its own target gradient and labels."""

    def __init__(self, victim: classifier.ModelParams, targets, labels, mask, cfg: AttackConfig):
        self.victim = victim
        self.cfg = cfg
        self.names = victim.matched_names()
        self.params = {k: victim.arrays[k].reshape(_tiled(victim.arrays[k].shape)) for k in self.names}
        self.targets = {}
        for k in self.names:
            shape = _tiled(victim.arrays[k].shape)[1:]
            self.targets[k] = np.stack([np.asarray(t[k], dtype=np.float64).reshape(shape) for t in targets])
        self.labels = np.asarray(labels, dtype=np.int64)
        self.mask = np.asarray(mask, dtype=np.float64)
        self.embed = victim.embed
        self.vocab_norm = vocab_mean_norm(victim.embed)
        self.diagnostics = []

    def _select(self, arr, rows, k):
        if np.isscalar(rows):
            return np.broadcast_to(arr[rows : rows + 1], (k,) + arr.shape[1:])
        return arr[rows]

    def evaluate(self, x, rows=None, grad_x=False):
        """Return (L_rec, L_grad[, dL_rec/dx]) for candidate stack ``x`` (K, B, n, d).

        ``rows`` maps each candidate to its run (an int applies one run to all).
        """
        x = np.asarray(x, dtype=np.float64)
        k = x.shape[0]
        diagnostics = None
        if rows is None:
            rows = np.arange(k)
            diagnostics = self.diagnostics
        mask = self._select(self.mask, rows, k)
        labels = self._select(self.labels, rows, k)
        cfg = self.cfg
        with tape():
            p = {name: Tensor(a) for name, a in self.victim.arrays.items() if name not in self.params}
            leaves = []
            for name in self.names:
                a = self.params[name]
                leaf = Tensor(np.broadcast_to(a, (k,) + a.shape[1:]), requires_grad=True)
                p[name] = leaf
                leaves.append(leaf)
            xt = Tensor(x, requires_grad=grad_x)
            loss = classifier.loss_from_embeddings(p, self.victim.config, xt, labels, mask)
            grads = backward(loss, leaves, create_graph=grad_x)
            targets = [Tensor(self._select(self.targets[n], rows, k)) for n in self.names]
            lgrad = grad_loss_per_trial(cfg.loss, targets, grads, cfg.alpha_tag, diagnostics)
            lrec = lgrad
            if cfg.alpha_reg:
                lrec = ops.add(lgrad, ops.mul(reg_per_trial(xt, mask, self.vocab_norm), cfg.alpha_reg))
            if grad_x:
                (gx,) = backward(ops.sum(lrec), [xt])
                return lrec.data.copy(), lgrad.data.copy(), gx.data
        return lrec.data.copy(), lgrad.data.copy()

    def evaluate_chunked(self, x, row):
        out_rec, out_grad = [], []
        for lo in range(0, x.shape[0], EVAL_CHUNK):
            r, g = self.evaluate(x[lo : lo + EVAL_CHUNK], rows=row)
            out_rec.append(r)
            out_grad.append(g)
        return np.concatenate(out_rec), np.concatenate(out_grad)


class _PerplexityCache:
    def __init__(self, lm):
        self.lm = lm
        self.cache = {}

    def batch(self, ids, lengths):
        """Mean perplexity over batch elements with >= 2 tokens, per run: (R,)."""
        r_n, b_n = lengths.shape
        todo = {}
        for r in range(r_n):
            for b in range(b_n):
                n = lengths[r, b]
                if n >= 2:
                    key = tuple(ids[r, b, :n].tolist())
                    if key not in self.cache:
                        todo[key] = None
        if todo:
            keys = list(todo)
            width = max(len(k) for k in keys)
            arr = np.full((len(keys), width), PAD, dtype=np.int64)
            for i, key in enumerate(keys):
                arr[i, : len(key)] = key
            vals = lm_perplexity_batch(self.lm, arr, [len(k) for k in keys])
            self.cache.update(zip(keys, vals.tolist()))
        out = np.zeros(r_n)
        for r in range(r_n):
            vals = [self.cache[tuple(ids[r, b, : lengths[r, b]].tolist())] for b in range(b_n) if lengths[r, b] >= 2]
            out[r] = float(np.mean(vals)) if vals else 0.0
        return out


def _masked(x, mask, pad_row):
    return np.where(mask[..., None] > 0, x, pad_row)


def _permute_real_slots(x, lengths, rng):
    out = x.copy()
    for b, n in enumerate(lengths):
        if n >= 2:
            out[b, :n] = x[b, rng.permutation(n)]
    return out


def initialize(obj: StackedObjective, row: int, lengths, rng, cfg: AttackConfig, record=None):
    """Best of ``n_init`` Gaussian draws by L_grad, then best of ``n_perm`` slot permutations.

    ``record`` (a list) receives the L_grad of every evaluated candidate.
    """
    b_n, n = obj.mask.shape[1:]
    d = obj.embed.shape[1]
    mask = obj.mask[row]
    pad_row = obj.embed[PAD]
    # noise is drawn at the run's own length so padding for stacking leaves it unchanged
    own = int(max(lengths))
    noise = np.zeros((cfg.n_init, b_n, n, d))
    noise[:, :, :own] = rng.standard_normal((cfg.n_init, b_n, own, d))
    cands = _masked(noise, mask, pad_row)
    _, lg = obj.evaluate_chunked(cands, row)
    if record is not None:
        record.extend(lg.tolist())
    best = cands[int(np.argmin(lg))]
    best_val = float(lg.min())
    if cfg.n_perm:
        perms = np.stack([_permute_real_slots(best, lengths, rng) for _ in range(cfg.n_perm)])
        _, lg = obj.evaluate_chunked(perms, row)
        if record is not None:
            record.extend(lg.tolist())
        i = int(np.argmin(lg))
        if lg[i] < best_val:
            best, best_val = perms[i], float(lg[i])
    return best.copy(), best_val


def select_candidate(rec, rec_prime, lm_loss, lm_loss_prime, alpha_lm):
    """Accept x' iff L_rec(x') + a*L_lm(t') < L_rec(x) + a*L_lm(t) (strict)."""
    return rec_prime + alpha_lm * lm_loss_prime < rec + alpha_lm * lm_loss


def _expand(problems, cfg):
    runs = []
    for pi, prob in enumerate(problems):
        if cfg.label_mode == "enumerate" or prob.labels is None:
            assignments = list(itertools.product((0, 1), repeat=len(prob.lengths)))
        else:
            assignments = [prob.labels]
        for ai, labels in enumerate(assignments):
            runs.append((pi, ai, tuple(labels), prob.lengths))
    return runs


def run_attacks(victim, problems, lm, cfg: AttackConfig, exclude=SPECIAL_IDS, pad_to=None, on_accept=None):
    """Attack several observed updates; returns one ReconstructionResult per problem.

    Runs with equal batch size are stacked and padded to a common length (at
    least ``pad_to``); ``padded_length`` on each result records it for replay.
    ``on_accept`` is handed to ``discrete_phase`` for inspection.
    """
    problems = list(problems)
    runs = _expand(problems, cfg)
    by_batch = {}
    for run in runs:
        by_batch.setdefault(len(run[3]), []).append(run)
    outcomes = {}
    for group in by_batch.values():
        outcomes.update(_run_group(victim, problems, group, lm, cfg, exclude, pad_to, on_accept))
    results = []
    for pi in range(len(problems)):
        mine = sorted((o for (p, _), o in outcomes.items() if p == pi), key=lambda o: o["order"])
        best = min(mine, key=lambda o: o["result"].rec_loss)
        res = best["result"]
        res.alternatives = [{"labels": list(o["result"].labels), "rec_loss": o["result"].rec_loss} for o in mine]
        results.append(res)
    return results


def run_attack(victim, target, lm, cfg: AttackConfig, lengths, labels=None, seed=0, exclude=SPECIAL_IDS, pad_to=None):
    prob = AttackProblem(target=target, lengths=tuple(lengths), labels=labels, seed=seed)
    return run_attacks(victim, [prob], lm, cfg, exclude, pad_to)[0]


def discrete_phase(obj, x, ids, rec, lengths, rngs, cfg, ppl=None, deadline=None, on_accept=None):
    """``n_d`` reordering proposals per run, each kept iff it lowers L_rec + alpha_lm * L_lm.

    One proposal per run is drawn at a time: a batch element, a transformation
    kind and its positions, all uniform. ``on_accept(run, value)`` sees the
    combined objective at the start (run=None, values for all runs) and after
    every accepted proposal. Returns (x, ids, rec, truncated).
    """
    r_n, b_n = lengths.shape
    x, ids, rec = x.copy(), ids.copy(), rec.copy()
    cur_lm = ppl.batch(ids, lengths) if ppl is not None else np.zeros(r_n)
    if on_accept is not None:
        on_accept(None, rec + cfg.alpha_lm * cur_lm)
    for _ in range(cfg.n_d):
        if deadline is not None and time.perf_counter() > deadline:
            return x, ids, rec, True
        x_new = x.copy()
        ids_new = ids.copy()
        for r in range(r_n):
            rng = rngs[r]
            b = int(rng.integers(b_n)) if b_n > 1 else 0
            kind = KINDS[int(rng.integers(len(KINDS)))]
            m = int(lengths[r, b])
            if m < 2:
                continue
            perm = random_perm(kind, m, rng)
            x_new[r, b, :m] = x[r, b, perm]
            ids_new[r, b, :m] = ids[r, b, perm]
        rec_new, _ = obj.evaluate(x_new)
        lm_new = ppl.batch(ids_new, lengths) if ppl is not None else np.zeros(r_n)
        accept = select_candidate(rec, rec_new, cur_lm, lm_new, cfg.alpha_lm)
        if accept.any():
            x[accept] = x_new[accept]
            ids[accept] = ids_new[accept]
            rec[accept] = rec_new[accept]
            cur_lm[accept] = lm_new[accept]
            if on_accept is not None:
                for r in np.flatnonzero(accept):
                    on_accept(int(r), float(rec[r] + cfg.alpha_lm * cur_lm[r]))
    return x, ids, rec, False


def _run_group(victim, problems, runs, lm, cfg, exclude, pad_to=None, on_accept=None):
    t0 = time.perf_counter()
    r_n = len(runs)
    b_n = len(runs[0][3])
    n = max(max(run[3]) for run in runs)
    if pad_to is not None:
        n = max(n, int(pad_to))
    d = victim.config.dim
    lengths = np.array([run[3] for run in runs], dtype=np.int64)
    mask = (np.arange(n)[None, None, :] < lengths[:, :, None]).astype(np.float64)
    labels = np.array([run[2] for run in runs], dtype=np.int64)
    obj = StackedObjective(victim, [problems[run[0]].target for run in runs], labels, mask, cfg)
    rngs = [np.random.default_rng([cfg.seed, problems[run[0]].seed, run[1]]) for run in runs]
    ppl = _PerplexityCache(lm) if (lm is not None and cfg.alpha_lm) else None
    deadline = None if cfg.time_budget is None else t0 + cfg.time_budget
    truncated = False

    def project(xs):
        ids = project_to_vocabulary(xs, obj.embed, exclude)
        return np.where(mask > 0, ids, PAD)

    def lm_values(ids):
        if ppl is not None:
            return ppl.batch(ids, lengths)
        if lm is not None:
            return _PerplexityCache(lm).batch(ids, lengths)
        return np.full(r_n, np.nan)

    x = np.empty((r_n, b_n, n, d))
    for r in range(r_n):
        x[r], _ = initialize(obj, r, lengths[r], rngs[r], cfg)

    snapshots = [[] for _ in range(r_n)]

    def snap(step, phase, rec, ids, lm_vals):
        for r in range(r_n):
            toks = [tuple(ids[r, b, : lengths[r, b]].tolist()) for b in range(b_n)]
            lm_v = None if np.isnan(lm_vals[r]) else float(lm_vals[r])
            snapshots[r].append(Snapshot(step, phase, float(rec[r]), lm_v, toks))

    rec, _ = obj.evaluate(x)
    ids = project(x)
    snap(0, "init", rec, ids, lm_values(ids))

    state = AdamState(lr=cfg.lr, gamma=cfg.gamma)
    step = 0
    for _ in range(cfg.iterations):
        for _ in range(cfg.n_c):
            if deadline is not None and time.perf_counter() > deadline:
                truncated = True
                break
            _, _, gx = obj.evaluate(x, grad_x=True)
            x = adam_step(state, x, gx * mask[..., None])
            step += 1
            if cfg.snapshot_every and step % cfg.snapshot_every == 0 and step % cfg.n_c:
                rec, _ = obj.evaluate(x)
                ids = project(x)
                snap(step, "continuous", rec, ids, lm_values(ids))
        if truncated:
            break
        rec, _ = obj.evaluate(x)
        ids = project(x)
        x, ids, rec, truncated = discrete_phase(obj, x, ids, rec, lengths, rngs, cfg, ppl, deadline, on_accept)
        if truncated:
            break
        snap(step, "discrete" if cfg.n_d else "continuous", rec, ids, lm_values(ids))

    rec, _ = obj.evaluate(x)
    ids = project(x)
    if truncated:
        snap(step, "truncated", rec, ids, lm_values(ids))
    wall = time.perf_counter() - t0
    log.info("attack group: %d runs, %d steps, %.1fs", r_n, step, wall)
    out = {}
    for r, (pi, ai, labs, lens) in enumerate(runs):
        toks = [tuple(ids[r, b, : lens[b]].tolist()) for b in range(b_n)]
        res = ReconstructionResult(
            tokens=toks,
            labels=labs,
            lengths=lens,
            rec_loss=float(rec[r]),
            snapshots=snapshots[r],
            truncated=truncated,
            wall_time=wall,
            diagnostics=[dg for dg in obj.diagnostics if r in dg["trials"]][:10],
            padded_length=n,
        )
        out[(pi, ai)] = {"order": ai, "result": res}
    return out
