"""Watch a single client sentence come back out of its gradient.

Trains the toy victim and LM, captures the update of one sentence, then runs
the attack and prints the projected text after every outer iteration.

    python3 demos/one_sentence.py --text "a boring villain" --label 0
"""
import argparse
import time

from gradleak.attack import preset, run_attack
from gradleak.federated import Batch, client_gradient
from gradleak.harness import ExperimentConfig
from gradleak.harness.experiment import prepare
from gradleak.metrics import rouge
from gradleak.models import TokenSequence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--text", default="a boring villain")
    ap.add_argument("--label", type=int, default=0)
    ap.add_argument("--preset", default="lamp-cos")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    setup = prepare(ExperimentConfig(n_test=20, max_len=4))
    vocab = setup.vocab
    seq = TokenSequence(tuple(vocab.encode(args.text)), args.label)
    print(f"client sentence: {vocab.decode(seq.ids)!r} (label {seq.label})")
    print(f"victim accuracy on its training data: {setup.utility['train']['accuracy']:.3f}")

    update = client_gradient(setup.victim, Batch([seq]))
    cfg = preset(args.preset, snapshot_every=0, seed=args.seed)
    t0 = time.perf_counter()
    res = run_attack(setup.victim, update, setup.lm, cfg, [len(seq)], [seq.label])
    print(f"\n{'step':>6}  {'phase':<10} {'L_rec':>9}  text")
    for snap in res.snapshots:
        print(f"{snap.step:>6}  {snap.phase:<10} {snap.rec_loss:>9.5f}  {vocab.decode(snap.tokens[0])}")
    s = rouge(seq, res.tokens[0])
    print(f"\nrecovered {vocab.decode(res.tokens[0])!r} in {time.perf_counter() - t0:.0f}s: "
          f"R-1 {s.r1:.0f}, R-2 {s.r2:.0f}, R-L {s.rL:.0f}")


if __name__ == "__main__":
    main()
