"""How much Gaussian gradient noise does it take to stop the attack, and what does it cost?

For each noise level the same short test sentences are attacked through their
noised updates, and a victim is trained with noised updates to measure how
much classification quality survives.

    python3 demos/noise_tradeoff.py --sigmas 0 0.05 0.2 0.5 --runs 6
"""
import argparse

import numpy as np

from gradleak.attack import AttackProblem, preset, run_attacks
from gradleak.federated import Batch, DefenseConfig, apply_defense, client_gradient
from gradleak.harness import ExperimentConfig
from gradleak.harness.experiment import prepare
from gradleak.metrics import mcc, rouge
from gradleak.models import ClassifierConfig, init_classifier, pad_ids, predict, train_classifier


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.002, 0.05, 0.2, 0.5])
    ap.add_argument("--runs", type=int, default=6, help="test sentences attacked per level")
    ap.add_argument("--epochs", type=int, default=4, help="victim epochs for the utility column")
    args = ap.parse_args()

    setup = prepare(ExperimentConfig(n_test=args.runs, max_len=4))
    test = setup.split.test
    ids, mask = pad_ids(test)
    truth = [s.label for s in test]
    cfg = preset("lamp-cos")
    print(f"{'sigma':>7} {'R-1':>6} {'R-2':>6} {'test MCC':>9}")
    for i, sigma in enumerate(args.sigmas):
        problems = [
            AttackProblem(apply_defense(client_gradient(setup.victim, Batch([s])), DefenseConfig(sigma, i)), (len(s),), (s.label,), seed=k)
            for k, s in enumerate(test)
        ]
        results = run_attacks(setup.victim, problems, setup.lm, cfg)
        scores = [rouge(s, r.tokens[0]) for s, r in zip(test, results)]
        noisy, _ = train_classifier(
            init_classifier(ClassifierConfig(vocab_size=len(setup.vocab)), 0),
            setup.split.train, args.epochs, noise_sigma=sigma,
        )
        util = mcc(predict(noisy, ids, mask), truth)
        print(f"{sigma:>7g} {np.mean([s.r1 for s in scores]):>6.1f} {np.mean([s.r2 for s in scores]):>6.1f} {util:>9.3f}")


if __name__ == "__main__":
    main()
