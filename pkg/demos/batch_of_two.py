"""Two sentences in one update: the attack returns both, in whichever order it likes.

Recovered sentences are paired with the originals by least edit distance
before scoring, so a swapped order costs nothing.

    python3 demos/batch_of_two.py --text "boring scene" --label 0 --text "moving music ." --label 1
"""
import argparse

from gradleak.attack import preset, run_attack
from gradleak.federated import Batch, client_gradient
from gradleak.harness import ExperimentConfig
from gradleak.harness.experiment import prepare
from gradleak.metrics import match_batch, rouge, rouge_batch
from gradleak.models import TokenSequence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--text", action="append")
    ap.add_argument("--label", action="append", type=int)
    ap.add_argument("--label-mode", choices=["known", "enumerate"], default="known")
    args = ap.parse_args()
    texts = args.text or ["boring scene", "moving music ."]
    labels = args.label or [0, 1]

    setup = prepare(ExperimentConfig(n_test=20, max_len=4))
    vocab = setup.vocab
    seqs = [TokenSequence(tuple(vocab.encode(t)), y) for t, y in zip(texts, labels)]
    update = client_gradient(setup.victim, Batch(seqs))
    cfg = preset("lamp-cos", label_mode=args.label_mode)
    known = None if args.label_mode == "enumerate" else [s.label for s in seqs]
    res = run_attack(setup.victim, update, setup.lm, cfg, [len(s) for s in seqs], known)
    if args.label_mode == "enumerate":
        for alt in res.alternatives:
            print(f"labels {alt['labels']}: final L_rec {alt['rec_loss']:.5f}")
        print(f"kept labels {list(res.labels)}\n")
    order = match_batch(seqs, res.tokens)
    for i, j in enumerate(order):
        s = rouge(seqs[i], res.tokens[j])
        print(f"{vocab.decode(seqs[i].ids)!r:<30} <- {vocab.decode(res.tokens[j])!r:<30} R-1 {s.r1:.0f} R-2 {s.r2:.0f}")
    total = rouge_batch(seqs, res.tokens)
    print(f"batch: R-1 {total.r1:.1f}, R-2 {total.r2:.1f}, R-L {total.rL:.1f}")


if __name__ == "__main__":
    main()
