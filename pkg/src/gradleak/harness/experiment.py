"""End-to-end experiments: train the victim and LM, capture updates, attack, score, report.

Everything written to disk is a deterministic function of the config, so a
rerun with the same config produces byte-identical files. Wall-clock times
are logged but never stored.
"""
from __future__ import annotations

import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics
from ..attack import AttackConfig, AttackProblem, preset, run_attacks
from ..federated import Batch, DefenseConfig, apply_defense, client_gradient, save_gradients
from ..models import (
    BigramLM,
    ClassifierConfig,
    LMConfig,
    init_classifier,
    init_lm,
    pad_ids,
    predict,
    train_classifier,
    train_lm,
)
from ..models.checkpoint import load_classifier, load_lm, save_classifier, save_lm
from .corpus import load_corpus, split_corpus

log = logging.getLogger(__name__)

WORKERS_ENV = "GRADLEAK_WORKERS"


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    corpus: str | None = None
    out_dir: str = "results"
    model: dict = field(default_factory=dict)
    lm: dict = field(default_factory=dict)
    lm_kind: str = "transformer"  # transformer | bigram
    victim_epochs: int = 2
    victim_lr: float = 3e-3
    lm_epochs: int = 10
    train_noise_sigma: float = 0.0
    victim_checkpoint: str | None = None
    lm_checkpoint: str | None = None
    variants: list = field(default_factory=lambda: ["lamp-cos"])
    sigmas: list = field(default_factory=lambda: [0.0])
    batch_sizes: list = field(default_factory=lambda: [1])
    slices: list | None = None  # [sigma, batch size] pairs to run; default: every combination
    n_test: int = 20
    n_hyper: int = 10
    min_len: int = 1
    max_len: int | None = None
    label_mode: str = "known"
    seed: int = 0
    trace_batches: int = 1
    checks: list = field(default_factory=list)

    def __post_init__(self):
        names = [variant_name(v) for v in self.variants]
        if len(set(names)) != len(names):
            raise ValueError(f"variant names must be unique, got {names}")
        if not names:
            raise ValueError("at least one attack variant is required")
        for key in ("corpus", "victim_checkpoint", "lm_checkpoint"):
            path = getattr(self, key)
            if path is not None and not Path(path).exists():
                raise ValueError(f"{key} path {path!r} does not exist")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("defense sigmas must be non-negative")
        if any(b < 1 for b in self.batch_sizes):
            raise ValueError("batch sizes must be positive")
        if self.slices is not None:
            self.slices = [[float(sg), int(b)] for sg, b in self.slices]
            if not self.slices:
                raise ValueError("slices must not be empty")
            for sg, b in self.slices:
                if sg not in self.sigmas or b not in self.batch_sizes:
                    raise ValueError(f"slice sigma={sg:g}, B={b} is not in sigmas x batch_sizes")
        if self.lm_kind not in ("transformer", "bigram"):
            raise ValueError(f"lm_kind must be transformer or bigram, got {self.lm_kind!r}")

    def to_dict(self):
        return asdict(self)

    def cells(self):
        """(sigma, batch size) slices in a fixed order."""
        if self.slices is not None:
            return [tuple(c) for c in self.slices]
        return [(sg, b) for sg in self.sigmas for b in self.batch_sizes]

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def variant_name(entry):
    return entry if isinstance(entry, str) else entry.get("name", entry.get("preset"))


def resolve_variant(entry, seed=0, label_mode="known") -> AttackConfig:
    """A preset name, or a dict {"preset": ..., "name": ..., <AttackConfig overrides>}."""
    if isinstance(entry, str):
        return preset(entry, seed=seed, label_mode=label_mode)
    entry = dict(entry)
    base = entry.pop("preset", entry.get("name"))
    entry.setdefault("name", base)
    entry.setdefault("seed", seed)
    entry.setdefault("label_mode", label_mode)
    return preset(base, **entry)


def _seed_int(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _dump(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _slice_key(sigma, batch_size):
    return f"sigma{sigma:g}__B{batch_size}"


@dataclass
class Setup:
    """Everything the attacks need: models, pools and captured updates."""

    vocab: object
    victim: object
    lm: object
    split: object
    batches: dict  # batch size -> list of Batch
    targets: dict  # (sigma, batch size) -> list of GradientSet
    utility: dict


def prepare(cfg: ExperimentConfig, out: Path | None = None) -> Setup:
    corpus = load_corpus(cfg.corpus)
    vocab = corpus.vocab
    if cfg.victim_checkpoint:
        victim, vocab = load_classifier(cfg.victim_checkpoint)
        corpus = load_corpus(cfg.corpus, vocab)
    split = split_corpus(corpus.sequences, cfg.n_test, cfg.n_hyper, cfg.seed, cfg.min_len, cfg.max_len)
    if not cfg.victim_checkpoint:
        mcfg = ClassifierConfig(vocab_size=len(vocab), **cfg.model)
        victim, _ = train_classifier(
            init_classifier(mcfg, cfg.seed),
            split.train,
            cfg.victim_epochs,
            lr=cfg.victim_lr,
            seed=cfg.seed,
            noise_sigma=cfg.train_noise_sigma,
        )
    if cfg.lm_checkpoint:
        lm, lm_vocab = load_lm(cfg.lm_checkpoint)
        if lm_vocab != vocab:
            raise ValueError("language model and victim use different vocabularies")
    elif cfg.lm_kind == "bigram":
        lm = BigramLM.fit([s.ids for s in split.train], len(vocab))
    else:
        lm, _ = train_lm(init_lm(LMConfig(vocab_size=len(vocab), **cfg.lm), cfg.seed), split.train, cfg.lm_epochs, seed=cfg.seed)

    utility = {}
    for pool in ("train", "test"):
        seqs = getattr(split, pool)
        ids, mask = pad_ids(seqs)
        pred = predict(victim, ids, mask)
        truth = [s.label for s in seqs]
        utility[pool] = {"accuracy": float(np.mean(pred == truth)), "mcc": metrics.mcc(pred, truth)}

    batches, targets = {}, {}
    for b in cfg.batch_sizes:
        n = len(split.test) // b * b
        if n < len(split.test):
            log.warning("batch size %d: dropping %d test sequences", b, len(split.test) - n)
        batches[b] = [Batch(split.test[i : i + b]) for i in range(0, n, b)]
        for si, sigma in enumerate(cfg.sigmas):
            if (sigma, b) not in cfg.cells():
                continue
            targets[(sigma, b)] = [
                apply_defense(client_gradient(victim, batch), DefenseConfig(sigma, _seed_int(cfg.seed, si, b, bi)))
                for bi, batch in enumerate(batches[b])
            ]
    if out is not None:
        (out / "gradients").mkdir(parents=True, exist_ok=True)
        save_classifier(out / "victim.json", victim, vocab)
        if not isinstance(lm, BigramLM):
            save_lm(out / "lm.json", lm, vocab)
        for (sigma, b), grads in targets.items():
            for bi, g in enumerate(grads):
                batch = batches[b][bi]
                meta = {
                    "sigma": sigma,
                    "batch_size": b,
                    "index": bi,
                    "lengths": batch.lengths,
                    "labels": [int(y) for y in batch.labels],
                    "reference": [vocab.decode(s.ids) for s in batch.sequences],
                    "reference_ids": [list(s.ids) for s in batch.sequences],
                }
                save_gradients(out / "gradients" / f"{_slice_key(sigma, b)}__{bi:03d}.json", g, meta)
    return Setup(vocab, victim, lm, split, batches, targets, utility)


def _attack_job(args):
    victim, lm, acfg, problems = args
    try:
        return run_attacks(victim, problems, lm, acfg), None
    except Exception as exc:  # recorded per run; the experiment keeps going
        log.exception("attack %s failed", acfg.name)
        return None, f"{type(exc).__name__}: {exc}"


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def workers_from_env():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer") from None


def score_run(batch: Batch, tokens):
    scores = metrics.rouge_batch(batch.sequences, tokens)
    order = metrics.match_batch(batch.sequences, tokens)
    exact = all(tuple(tokens[j]) == batch.sequences[i].ids for i, j in enumerate(order))
    return {**scores.to_dict(), "exact": bool(exact)}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Run every (variant, sigma, batch size) cell and write results under ``cfg.out_dir``.

    Returns the summary dict (also written as summary.json).
    """
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", cfg.to_dict())
    setup = prepare(cfg, out)
    workers = workers_from_env() if workers is None else workers
    variants = [resolve_variant(v, cfg.seed, cfg.label_mode) for v in cfg.variants]

    cells, jobs = [], []
    for acfg in variants:
        for sigma, b in cfg.cells():
            batches = setup.batches[b]
            problems = [
                AttackProblem(g, tuple(batch.lengths), tuple(int(y) for y in batch.labels), seed=bi)
                for bi, (g, batch) in enumerate(zip(setup.targets[(sigma, b)], batches))
            ]
            cells.append((acfg, sigma, b))
            jobs.append((setup.victim, setup.lm, acfg, problems))
    outcomes = _map(_attack_job, jobs, workers)

    runs, failures = [], []
    traces = {}
    for (acfg, sigma, b), (results, error) in zip(cells, outcomes):
        for bi, batch in enumerate(setup.batches[b]):
            key = _slice_key(sigma, b)
            run_id = f"{acfg.name}__{key}__{bi:03d}"
            manifest = {
                "victim_checkpoint": "victim.json",
                "lm_checkpoint": None if isinstance(setup.lm, BigramLM) else "lm.json",
                "gradient_capture": f"gradients/{key}__{bi:03d}.json",
                "attack": acfg.to_dict(),
                "seed": bi,
                "padded_length": None if error is not None else results[bi].padded_length,
                "lengths": list(batch.lengths),
                "labels": [int(y) for y in batch.labels],
            }
            record = {"run": run_id, "variant": acfg.name, "sigma": sigma, "batch_size": b, "index": bi, "manifest": manifest}
            record["reference"] = [setup.vocab.decode(s.ids) for s in batch.sequences]
            record["reference_ids"] = [list(s.ids) for s in batch.sequences]
            if error is not None:
                record["error"] = error
                failures.append({"run": run_id, "error": error})
            else:
                res = results[bi]
                record["recovered"] = [setup.vocab.decode(t) for t in res.tokens]
                record["result"] = res.to_dict()
                record["scores"] = score_run(batch, res.tokens)
                runs.append(record)
                if bi < cfg.trace_batches:
                    traces.setdefault((sigma, b, bi), {})[acfg.name] = [
                        (s.step, s.phase, [setup.vocab.decode(t) for t in s.tokens]) for s in res.snapshots
                    ]
            _dump(out / "runs" / f"{run_id}.json", record)

    summary = summarize(cfg, runs, failures, setup.utility)
    summary["checks"] = evaluate_checks(cfg.checks, runs, cfg)
    _dump(out / "summary.json", summary)
    (out / "summary.txt").write_text(format_table(summary))
    (out / "traces.txt").write_text(format_traces(traces, setup, cfg))
    log.info("experiment %s: %d runs, %d failures, %.1fs", cfg.name, len(runs), len(failures), time.perf_counter() - t0)
    return summary


def _select(runs, variant, sigma, batch_size):
    return [r for r in runs if r["variant"] == variant and r["sigma"] == sigma and r["batch_size"] == batch_size]


def _stats(values):
    v = np.asarray(values, dtype=np.float64)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def summarize(cfg, runs, failures, utility):
    rows = []
    for v in cfg.variants:
        name = variant_name(v)
        for sigma, b in cfg.cells():
            sel = _select(runs, name, sigma, b)
            if not sel:
                continue
            row = {"variant": name, "sigma": sigma, "batch_size": b, "runs": len(sel)}
            for m in ("r1", "r2", "rL"):
                row[m], row[m + "_se"] = _stats([r["scores"][m] for r in sel])
            row["exact"] = float(np.mean([r["scores"]["exact"] for r in sel]))
            pairs = [(ref, rec) for r in sel for ref, rec in _aligned_pairs(r)]
            row["micro"] = metrics.aggregate_micro(pairs).to_dict()
            rows.append(row)
    return {"name": cfg.name, "rows": rows, "failures": failures, "n_failures": len(failures), "utility": utility}


def _aligned_pairs(record):
    refs, cands = record["reference_ids"], record["result"]["tokens"]
    order = metrics.match_batch(refs, cands)
    return [(refs[i], cands[j]) for i, j in enumerate(order)]


# ---- directional checks ---------------------------------------------------

def _per_run(runs, sel, metric, cfg):
    variant = sel.get("variant", variant_name(cfg.variants[0]))
    sigma = sel.get("sigma", cfg.sigmas[0])
    b = sel.get("batch_size", cfg.batch_sizes[0])
    chosen = sorted(_select(runs, variant, sigma, b), key=lambda r: r["index"])
    return [float(r["scores"][metric]) for r in chosen]


def evaluate_checks(checks, runs, cfg):
    """Evaluate comparative checks over per-run scores.

    kinds: ``greater`` (left mean exceeds right mean by more than ``slack``
    standard errors of the paired difference), ``at_most`` (left <= right plus
    ``slack`` standard errors), ``ratio`` (left mean >= ratio * right mean) and
    ``threshold`` (left mean >= value). ``slack`` defaults to 1.
    """
    out = []
    for chk in checks:
        kind, metric = chk["kind"], chk.get("metric", "r2")
        left = _per_run(runs, chk.get("left", {}), metric, cfg)
        res = {"name": chk.get("name", kind), "kind": kind, "metric": metric, "acceptance": bool(chk.get("acceptance", True))}
        if not left:
            res.update(passed=False, detail="no runs for left side")
            out.append(res)
            continue
        lm = float(np.mean(left))
        res["left_mean"] = lm
        if kind == "threshold":
            res["value"] = chk["value"]
            res["passed"] = bool(lm >= chk["value"])
        else:
            right = _per_run(runs, chk.get("right", {}), metric, cfg)
            if not right:
                res.update(passed=False, detail="no runs for right side")
                out.append(res)
                continue
            rm = float(np.mean(right))
            res["right_mean"] = rm
            if kind == "ratio":
                res["ratio"] = chk["ratio"]
                res["passed"] = bool(lm >= chk["ratio"] * rm)
            elif kind in ("greater", "at_most"):
                if len(left) != len(right):
                    raise ValueError(f"check {res['name']}: paired comparison needs equal run counts")
                _, se = _stats(np.subtract(left, right))
                slack = float(chk.get("slack", 1.0))
                res["se"], res["slack"] = se, slack
                res["passed"] = bool(lm - rm > slack * se) if kind == "greater" else bool(lm <= rm + slack * se)
            else:
                raise ValueError(f"unknown check kind {kind!r}")
        out.append(res)
    return out


def failed_acceptance(summary):
    return [c["name"] for c in summary.get("checks", []) if c["acceptance"] and not c["passed"]]


# ---- text reports -----------------------------------------------------------

def format_table(summary):
    head = f"{'variant':<20} {'sigma':>7} {'B':>3} {'runs':>5} {'R-1':>7} {'R-2':>7} {'R-L':>7} {'exact':>6}"
    lines = [f"experiment: {summary['name']}", head, "-" * len(head)]
    for r in summary["rows"]:
        lines.append(
            f"{r['variant']:<20} {r['sigma']:>7g} {r['batch_size']:>3} {r['runs']:>5} "
            f"{r['r1']:>7.1f} {r['r2']:>7.1f} {r['rL']:>7.1f} {100 * r['exact']:>5.0f}%"
        )
    u = summary["utility"]
    lines.append("")
    lines.append(f"victim: train acc {u['train']['accuracy']:.3f}, test MCC {u['test']['mcc']:.3f}")
    if summary["n_failures"]:
        lines.append(f"failed runs: {summary['n_failures']}")
    for c in summary.get("checks", []):
        lines.append(f"check {c['name']}: {'PASS' if c['passed'] else 'FAIL'}")
    return "\n".join(lines) + "\n"


def format_traces(traces, setup, cfg):
    """Step -> projected text for each variant, one block per traced batch."""
    lines = []
    for (sigma, b, bi), by_variant in sorted(traces.items()):
        batch = setup.batches[b][bi]
        lines.append(f"== sigma={sigma:g} B={b} batch {bi}")
        lines.append(f"reference: {' | '.join(setup.vocab.decode(s.ids) for s in batch.sequences)}")
        for name, snaps in by_variant.items():
            lines.append(f"-- {name}")
            for step, phase, texts in snaps:
                lines.append(f"{step:>6} {phase:<10} {' | '.join(texts)}")
        lines.append("")
    return "\n".join(lines)


# ---- hyperparameter search ---------------------------------------------------

def run_grid_search(cfg: ExperimentConfig, grid: dict, base=None, n=10, metric="r2") -> dict:
    """Score every combination of ``grid`` values on up to ``n`` held-out sequences.

    The sequences come from the hyperparameter pool, never the test pool. The
    base variant defaults to the first one in the config. Returns the table
    sorted best first and writes grid.json / grid.txt under ``cfg.out_dir``.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = prepare(cfg)
    pool = setup.split.hyper[:n]
    if not pool:
        raise ValueError("the hyperparameter pool is empty; raise n_hyper")
    base = cfg.variants[0] if base is None else base
    base_cfg = resolve_variant(base, cfg.seed, cfg.label_mode)
    batches = [Batch([s]) for s in pool]
    problems = [
        AttackProblem(client_gradient(setup.victim, b), tuple(b.lengths), tuple(int(y) for y in b.labels), seed=i)
        for i, b in enumerate(batches)
    ]
    keys = sorted(grid)
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    jobs = [(setup.victim, setup.lm, base_cfg.with_(**c), problems) for c in combos]
    rows = []
    for combo, (results, error) in zip(combos, _map(_attack_job, jobs, workers_from_env())):
        row = {"params": combo}
        if error is not None:
            row["error"] = error
        else:
            scores = [score_run(b, r.tokens) for b, r in zip(batches, results)]
            for m in ("r1", "r2", "rL"):
                row[m] = float(np.mean([s[m] for s in scores]))
        rows.append(row)
    rows.sort(key=lambda r: -r.get(metric, -1.0))
    report = {"base": base_cfg.to_dict(), "metric": metric, "sequences": len(pool), "rows": rows}
    _dump(out / "grid.json", report)
    lines = [f"grid search over {keys} on {len(pool)} held-out sequences (sorted by {metric})"]
    for r in rows:
        vals = " ".join(f"{k}={r['params'][k]}" for k in keys)
        lines.append(f"{vals:<50} " + (r["error"] if "error" in r else f"R-1 {r['r1']:.1f} R-2 {r['r2']:.1f} R-L {r['rL']:.1f}"))
    (out / "grid.txt").write_text("\n".join(lines) + "\n")
    return report
