"""The eleven acceptance criteria, one test each, each printing a PASS/FAIL line.

The three experiment-backed criteria groups read their settings from
configs/*.json, the same files ``gradleak experiment --config`` takes.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from fd_cases import PRIMITIVES, first_order_error, second_order_error
from gradleak.attack import AttackConfig, StackedObjective, loss_cos, loss_reg, loss_tag, transform
from gradleak.attack.transforms import KINDS, random_perm
from gradleak.federated import Batch, client_gradient
from gradleak.harness import ExperimentConfig, run_experiment
from gradleak.metrics import mcc, rouge
from gradleak.models import ClassifierConfig, TokenSequence, init_classifier
from gradleak.models.classifier import loss_from_embeddings
from gradleak.core import Tensor, backward, no_record, tape
from gradleak.models.lm import UniformLM, lm_perplexity
from oracles import central_diff, lcs_f1, mcc_direct, overlap_f1, random_pairs, rel_err

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        line = f"C{number:<2} {'PASS' if ok else 'FAIL'}  {title}" + (f" ({detail})" if detail else "")
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return emit


def _experiment(name, out):
    d = json.loads((CONFIGS / f"{name}.json").read_text())
    d["out_dir"] = str(out)
    cfg = ExperimentConfig.from_dict(d)
    t0 = time.perf_counter()
    summary = run_experiment(cfg)
    return summary, time.perf_counter() - t0


@pytest.fixture(scope="module")
def short(tmp_path_factory):
    return _experiment("short", tmp_path_factory.mktemp("short"))


@pytest.fixture(scope="module")
def defense_batch(tmp_path_factory):
    return _experiment("defense_batch", tmp_path_factory.mktemp("defense_batch"))[0]


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    return _experiment("ablation", tmp_path_factory.mktemp("ablation"))[0]


def _check(summary, name):
    (c,) = [c for c in summary["checks"] if c["name"] == name]
    return c


def _row(summary, **sel):
    (r,) = [r for r in summary["rows"] if all(r[k] == v for k, v in sel.items())]
    return r


def _network_cases(count):
    """(first-order error, second-order error) on a small classifier, per seed.

    First order: d loss / d x against differences of the loss. Second order:
    d L_rec / d x, where L_rec itself differentiates the loss w.r.t. weights,
    against differences of L_rec.
    """
    cfg = ClassifierConfig(vocab_size=10, dim=8, layers=1, heads=2, ff=12, embed_std=0.3, pos_std=0.1)
    out = []
    for seed in range(count):
        rng = np.random.default_rng(seed)
        victim = init_classifier(cfg, seed)
        x = rng.standard_normal((3, cfg.dim))
        label = [seed % 2]
        with tape():
            xt = Tensor(x[None], requires_grad=True)
            (gx,) = backward(loss_from_embeddings(victim.tensors(), cfg, xt, label), [xt])

        def loss_at(v):
            with no_record():
                return loss_from_embeddings(victim.tensors(), cfg, Tensor(v[None]), label).item()

        first = rel_err(gx.data[0], central_diff(loss_at, x))
        target = client_gradient(victim, Batch([TokenSequence((3, 4, 5), seed % 2)]))
        obj = StackedObjective(victim, [target], [label], np.ones((1, 1, 3)), AttackConfig())
        _, _, g2 = obj.evaluate(x[None, None], grad_x=True)
        second = rel_err(g2, central_diff(lambda v: obj.evaluate(v)[0][0], x[None, None]))
        out.append((first, second))
    return out


def test_c01_autodiff_soundness(report):
    t0 = time.perf_counter()
    prim = [(name, seed) for seed in range(4) for name in PRIMITIVES][:92]
    first = [first_order_error(n, s) for n, s in prim]
    second = [second_order_error(n, s) for n, s in prim]
    net = _network_cases(8)
    first += [a for a, _ in net]
    second += [b for _, b in net]
    elapsed = time.perf_counter() - t0
    ok = len(first) == 100 and max(first) <= 1e-4 and max(second) <= 1e-3 and elapsed < 60
    report(1, "autodiff matches finite differences", ok,
           f"100 cases, worst first {max(first):.1e}, worst second {max(second):.1e}, {elapsed:.1f}s")


def test_c02_loss_identities(report):
    rng = np.random.default_rng(2)
    worst_tag = worst_cos = worst_reg = 0.0
    in_range = True
    for _ in range(100):
        shapes = [tuple(rng.integers(1, 6, rng.integers(1, 3))) for _ in range(int(rng.integers(1, 5)))]
        g = {f"l{i}": rng.standard_normal(s) for i, s in enumerate(shapes)}
        h = {f"l{i}": rng.standard_normal(s) for i, s in enumerate(shapes)}
        c = float(np.exp(rng.uniform(-6, 6)))
        worst_tag = max(worst_tag, abs(loss_tag(g, g)))
        worst_cos = max(worst_cos, abs(loss_cos(g, {k: c * v for k, v in g.items()})))
        in_range &= 0.0 <= loss_cos(g, h) <= 2.0
        embed = rng.standard_normal((int(rng.integers(2, 30)), 6)) * rng.uniform(0.1, 3)
        x = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 9)), 6))
        x *= np.linalg.norm(embed, axis=1).mean() / np.linalg.norm(x, axis=-1).mean()
        worst_reg = max(worst_reg, loss_reg(x, embed))
    ok = worst_tag <= 1e-10 and worst_cos <= 1e-10 and worst_reg <= 1e-10 and in_range
    report(2, "loss identities on 100 random sets", ok,
           f"tag {worst_tag:.1e}, cos {worst_cos:.1e}, reg {worst_reg:.1e}, cos range ok={in_range}")


def test_c03_uniform_perplexity(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        v, n = int(rng.integers(2, 500)), int(rng.integers(2, 40))
        ids = rng.integers(0, v, n)
        worst = max(worst, abs(lm_perplexity(UniformLM(v), ids) - (n - 1) / n * np.log(v)))
    report(3, "uniform LM perplexity is ((n-1)/n) ln V", worst <= 1e-12, f"worst error {worst:.1e}")


def _single_move_outcomes(n):
    out = set()
    for i in range(n):
        rest = [k for k in range(n) if k != i]
        for at in range(n):
            out.add(tuple(rest[:at] + [i] + rest[at:]))
    return out


def test_c04_transformations(report):
    rng = np.random.default_rng(4)
    preserved = True
    for kind in KINDS:
        for _ in range(1000):
            n = int(rng.integers(2, 12))
            x = rng.standard_normal((n, 4))
            before = x.copy()
            y = transform(x, kind, rng)
            preserved &= y.shape == x.shape and np.array_equal(x, before)
            preserved &= sorted(map(tuple, y)) == sorted(map(tuple, x))
    reachable = True
    for n in range(2, 6):
        allowed = _single_move_outcomes(n)
        reachable &= all(tuple(random_perm("move_token", n, rng)) in allowed for _ in range(1000))
    report(4, "transformations preserve rows; MoveToken stays reachable", preserved and reachable,
           f"4 x 1000 applications preserved={preserved}, reachable={reachable}")


@pytest.mark.slow
def test_c05_oracle_recovery(report, short):
    summary, elapsed = short
    row = _row(summary, variant="lamp-cos")
    ok = row["runs"] == 20 and row["exact"] >= 0.6 and row["r1"] >= 90.0 and elapsed <= 600
    report(5, "short sequences recovered exactly", ok,
           f"{row['runs']} runs, exact {100 * row['exact']:.0f}%, R-1 {row['r1']:.1f}, {elapsed:.0f}s")


@pytest.mark.slow
def test_c06_ablation_direction(report, ablation):
    a = _check(ablation, "lamp-cos > no-discrete by 1 SE")
    b = _check(ablation, "lamp-cos > no-lm by 1 SE")
    runs = _row(ablation, variant="lamp-cos")["runs"]
    report(6, "R-2: lamp-cos beats no-discrete and no-lm by > 1 SE", a["passed"] and b["passed"] and runs >= 20,
           f"{runs} runs, R-2 {a['left_mean']:.1f} vs no-discrete {a['right_mean']:.1f} (se {a['se']:.1f}), "
           f"vs no-lm {b['right_mean']:.1f} (se {b['se']:.1f})")


@pytest.mark.slow
def test_c07_baseline_direction(report, ablation):
    a = _check(ablation, "lamp-cos > tag")
    b = _check(ablation, "lamp-cos > dlg")
    report(7, "R-2: lamp-cos beats TAG and DLG", a["passed"] and b["passed"],
           f"R-2 {a['left_mean']:.1f} vs tag {a['right_mean']:.1f}, dlg {b['right_mean']:.1f}")


@pytest.mark.slow
def test_c08_defense_direction(report, defense_batch):
    names = ["R-2 at sigma 0.002 <= sigma 0.001", "R-2 at sigma 0.001 <= undefended", "R-2 at sigma 0.002 <= undefended"]
    checks = [_check(defense_batch, n) for n in names]
    means = [_row(defense_batch, sigma=s, batch_size=1)["r2"] for s in (0.0, 0.001, 0.002)]
    runs = _row(defense_batch, sigma=0.002, batch_size=1)["runs"]
    report(8, "R-2 does not rise with more gradient noise", all(c["passed"] for c in checks) and runs >= 20,
           f"{runs} runs, R-2 at sigma 0/0.001/0.002: " + "/".join(f"{m:.1f}" for m in means))


@pytest.mark.slow
def test_c09_batch_capability(report, defense_batch):
    c = _check(defense_batch, "B=2 R-1 at least half of B=1")
    report(9, "B=2 keeps at least half of the B=1 R-1", c["passed"],
           f"R-1 B=2 {c['left_mean']:.1f} vs B=1 {c['right_mean']:.1f}")


def test_c10_metric_oracles(report):
    rng = np.random.default_rng(10)
    bad = 0
    for ref, cand in random_pairs(rng, 200):
        s = rouge(ref, cand)
        bad += s.r1 != pytest.approx(overlap_f1(ref, cand, 1), abs=1e-12)
        bad += s.r2 != pytest.approx(overlap_f1(ref, cand, 2), abs=1e-12)
        bad += s.rL != pytest.approx(lcs_f1(ref, cand), abs=1e-12)
    bad_mcc = 0
    for _ in range(200):
        n = int(rng.integers(1, 40))
        p, t = rng.integers(0, 2, n), rng.integers(0, 2, n)
        bad_mcc += mcc(p, t) != pytest.approx(mcc_direct(p.tolist(), t.tolist()), abs=1e-12)
    report(10, "ROUGE and MCC match independent oracles", bad == 0 and bad_mcc == 0,
           f"200 pairs, {bad} ROUGE mismatches; 200 label vectors, {bad_mcc} MCC mismatches")


@pytest.mark.slow
def test_c11_determinism(report, tmp_path):
    cfg = ExperimentConfig(
        name="determinism",
        out_dir=str(tmp_path),
        n_test=4,
        max_len=6,
        lm_epochs=2,
        variants=[{"preset": "lamp-cos", "iterations": 2, "n_c": 10, "n_d": 10, "n_init": 16, "n_perm": 16},
                  {"preset": "tag", "iterations": 2}],
        sigmas=[0.0, 0.001],
        batch_sizes=[1, 2],
    )

    def snapshot():
        return {str(p.relative_to(tmp_path)): p.read_bytes() for p in sorted(tmp_path.rglob("*")) if p.is_file()}

    run_experiment(cfg)
    first = snapshot()
    run_experiment(cfg)
    second = snapshot()
    differ = sorted(k for k in first if first[k] != second.get(k))
    ok = first.keys() == second.keys() and not differ
    report(11, "rerun gives byte-identical files", ok, f"{len(first)} files, {len(differ)} differ")
