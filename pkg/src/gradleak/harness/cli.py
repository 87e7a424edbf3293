"""Command-line entry point: ``gradleak <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import metrics
from ..attack import AttackConfig, preset, run_attack
from ..federated import Batch, DefenseConfig, apply_defense, client_gradient, load_gradients, save_gradients
from ..models import BigramLM
from ..models.checkpoint import load_classifier, load_lm, save_classifier, save_lm
from ..models.vocab import TokenSequence
from .experiment import (
    ExperimentConfig,
    _dump,
    failed_acceptance,
    format_table,
    prepare,
    run_experiment,
    run_grid_search,
)

log = logging.getLogger("gradleak")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs):
    """``key=value`` strings to a dict; values are parsed as JSON when possible."""
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit(f"expected key=value, got {pair!r}")
        out[key.replace("-", "_")] = _parse_value(value)
    return out


def _experiment_config(args) -> ExperimentConfig:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("corpus", "out_dir", "n_test", "n_hyper", "seed", "min_len", "max_len", "label_mode", "lm_kind", "victim_epochs", "lm_epochs"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    for key in ("variants", "sigmas", "batch_sizes"):
        val = getattr(args, key, None)
        if val:
            d[key] = val
    d.update(_overrides(getattr(args, "set", None)))
    return ExperimentConfig.from_dict(d)


def _add_experiment_flags(p):
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--corpus", help="TSV corpus (label<TAB>text); defaults to the bundled toy corpus")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--n-hyper", dest="n_hyper", type=int)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--label-mode", dest="label_mode", choices=["known", "enumerate"])
    p.add_argument("--lm-kind", dest="lm_kind", choices=["transformer", "bigram"])
    p.add_argument("--victim-epochs", dest="victim_epochs", type=int)
    p.add_argument("--lm-epochs", dest="lm_epochs", type=int)
    p.add_argument("--variants", nargs="+", help="attack presets to run")
    p.add_argument("--sigmas", nargs="+", type=float, help="gradient-noise levels")
    p.add_argument("--batch-sizes", dest="batch_sizes", nargs="+", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any other config field (JSON value)")


def cmd_train(args):
    cfg = _experiment_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = prepare(cfg)
    save_classifier(out / "victim.json", setup.victim, setup.vocab)
    if isinstance(setup.lm, BigramLM):
        log.warning("bigram LMs are refitted on demand and not saved")
    else:
        save_lm(out / "lm.json", setup.lm, setup.vocab)
    _dump(out / "split.json", {pool: [setup.vocab.decode(s.ids) for s in getattr(setup.split, pool)] for pool in ("train", "hyper", "test")})
    print(f"victim: train acc {setup.utility['train']['accuracy']:.3f}, test MCC {setup.utility['test']['mcc']:.3f}")
    print(f"wrote {out / 'victim.json'}")
    return 0


def cmd_capture(args):
    victim, vocab = load_classifier(args.victim)
    if len(args.text) != len(args.label):
        raise SystemExit("give one --label per --text")
    seqs = [TokenSequence(tuple(vocab.encode(t)), y) for t, y in zip(args.text, args.label)]
    grads = client_gradient(victim, Batch(seqs))
    grads = apply_defense(grads, DefenseConfig(args.sigma, args.noise_seed))
    meta = {
        "sigma": args.sigma,
        "lengths": [len(s) for s in seqs],
        "labels": [s.label for s in seqs],
        # kept for scoring only; the attack reads lengths and labels
        "reference": [vocab.decode(s.ids) for s in seqs],
        "reference_ids": [list(s.ids) for s in seqs],
    }
    save_gradients(args.out, grads, meta)
    print(f"wrote {args.out} ({len(seqs)} sequence(s), sigma={args.sigma:g})")
    return 0


def _resolve(base, path):
    return None if path is None else str((base / path) if not Path(path).is_absolute() else Path(path))


def cmd_attack(args):
    if args.manifest:
        doc = json.loads(Path(args.manifest).read_text())
        doc = doc.get("manifest", doc)
        base = Path(args.manifest).parent
        if "victim_checkpoint" not in doc:
            raise SystemExit("manifest lacks victim_checkpoint")
        # run result files sit one directory below the checkpoints they name
        if not Path(_resolve(base, doc["victim_checkpoint"])).exists():
            base = base.parent
        victim_path = _resolve(base, doc["victim_checkpoint"])
        grad_path = _resolve(base, doc["gradient_capture"])
        lm_path = _resolve(base, doc.get("lm_checkpoint"))
        acfg = AttackConfig(**doc["attack"])
        seed = int(doc.get("seed", 0))
        pad_to = doc.get("padded_length")
        known = {"lengths": doc.get("lengths"), "labels": doc.get("labels")}
    else:
        if not (args.victim and args.gradients):
            raise SystemExit("attack needs --manifest or both --victim and --gradients")
        victim_path, grad_path, lm_path = args.victim, args.gradients, args.lm
        acfg = preset(args.preset, **_overrides(args.set))
        seed, pad_to, known = args.seed, None, {}
    victim, vocab = load_classifier(victim_path)
    grads, meta = load_gradients(grad_path)
    if lm_path:
        lm, _ = load_lm(lm_path)
    else:
        lm = None
        if acfg.alpha_lm:
            log.warning("no language model given; the discrete phase ranks by reconstruction loss only")
    lengths = args.lengths or known.get("lengths") or meta.get("lengths")
    if lengths is None:
        raise SystemExit("sequence lengths are unknown; pass --lengths")
    labels = None if acfg.label_mode == "enumerate" else (known.get("labels") or meta.get("labels"))
    res = run_attack(victim, grads, lm, acfg, lengths, labels, seed=seed, pad_to=pad_to)
    record = {
        "manifest": {
            "victim_checkpoint": victim_path,
            "lm_checkpoint": lm_path,
            "gradient_capture": grad_path,
            "attack": acfg.to_dict(),
            "seed": seed,
            "padded_length": res.padded_length,
        },
        "recovered": [vocab.decode(t) for t in res.tokens],
        "result": res.to_dict(),
    }
    if "reference_ids" in meta:
        record["reference"] = meta.get("reference")
        record["reference_ids"] = meta["reference_ids"]
        record["scores"] = metrics.rouge_batch(meta["reference_ids"], res.tokens).to_dict()
    for text in record["recovered"]:
        print(text)
    if args.out:
        _dump(args.out, record)
    return 0


def cmd_evaluate(args):
    if args.reference is not None:
        _, vocab = load_classifier(args.victim) if args.victim else (None, None)
        if vocab is None:
            # plain whitespace words; ids start past the special tokens
            words = {}
            ref, cand = ([words.setdefault(w, len(words) + 3) for w in text.split()] for text in (args.reference, args.candidate))
        else:
            ref, cand = vocab.encode(args.reference), vocab.encode(args.candidate)
        s = metrics.rouge(ref, cand)
        print(f"R-1 {s.r1:.1f}  R-2 {s.r2:.1f}  R-L {s.rL:.1f}")
        return 0
    scores, pairs = [], []
    for path in args.results:
        doc = json.loads(Path(path).read_text())
        if "reference_ids" not in doc:
            raise SystemExit(f"{path}: no reference recorded, cannot score")
        refs, cands = doc["reference_ids"], doc["result"]["tokens"]
        scores.append(metrics.rouge_batch(refs, cands))
        order = metrics.match_batch(refs, cands)
        pairs.extend((refs[i], cands[j]) for i, j in enumerate(order))
    macro = metrics.aggregate(scores)
    micro = metrics.aggregate_micro(pairs)
    print(f"{len(scores)} result file(s)")
    print(f"macro  R-1 {macro.r1:.1f}  R-2 {macro.r2:.1f}  R-L {macro.rL:.1f}")
    print(f"micro  R-1 {micro.r1:.1f}  R-2 {micro.r2:.1f}  R-L {micro.rL:.1f}")
    return 0


def cmd_experiment(args):
    cfg = _experiment_config(args)
    summary = run_experiment(cfg, workers=args.workers)
    print(format_table(summary), end="")
    failed = failed_acceptance(summary)
    if failed:
        print(f"acceptance checks failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_grid(args):
    cfg = _experiment_config(args)
    grid = {}
    for spec in args.param:
        key, sep, values = spec.partition("=")
        if not sep:
            raise SystemExit(f"expected key=v1,v2,..., got {spec!r}")
        grid[key.replace("-", "_")] = [_parse_value(v) for v in values.split(",")]
    report = run_grid_search(cfg, grid, base=args.base, n=args.n)
    print(Path(cfg.out_dir, "grid.txt").read_text(), end="")
    return 0 if report["rows"] else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="gradleak", description="Reconstruct text from transformer gradient updates.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the victim classifier and the auxiliary LM")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("capture-gradients", help="compute (and optionally noise) a client update")
    p.add_argument("--victim", required=True)
    p.add_argument("--text", action="append", required=True, help="client sentence (repeat for a batch)")
    p.add_argument("--label", action="append", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian noise std of the defense")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("attack", help="reconstruct text from a captured update")
    p.add_argument("--manifest", help="run manifest or result file from an experiment")
    p.add_argument("--victim")
    p.add_argument("--gradients")
    p.add_argument("--lm")
    p.add_argument("--preset", default="lamp-cos")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lengths", type=int, nargs="+")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="attack config override")
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="ROUGE of result files or of one sentence pair")
    p.add_argument("results", nargs="*")
    p.add_argument("--reference")
    p.add_argument("--candidate")
    p.add_argument("--victim", help="checkpoint whose vocabulary tokenizes --reference/--candidate")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="full pipeline with summary, traces and checks")
    _add_experiment_flags(p)
    p.add_argument("--workers", type=int, help="parallel attack jobs (default: $GRADLEAK_WORKERS or 1)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("grid-search", help="tune attack hyperparameters on the held-out pool")
    _add_experiment_flags(p)
    p.add_argument("--base", help="preset to vary (default: first variant)")
    p.add_argument("--param", action="append", required=True, metavar="KEY=V1,V2", help="values to try")
    p.add_argument("-n", type=int, default=10, help="held-out sequences to score on")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "evaluate" and args.reference is None and not args.results:
        raise SystemExit("evaluate needs result files or --reference/--candidate")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
