import itertools

import numpy as np
import pytest

from gradleak.attack import (
    AttackConfig,
    AttackProblem,
    StackedObjective,
    initialize,
    loss_cos,
    loss_l2,
    loss_reg,
    loss_tag,
    preset,
    project_to_vocabulary,
    run_attack,
    run_attacks,
    select_candidate,
    transform,
)
from gradleak.attack.transforms import KINDS, move_prefix_perm, move_subseq_perm, move_token_perm, random_perm, swap_perm
from gradleak.federated import Batch, client_gradient
from gradleak.models import ClassifierConfig, TokenSequence, init_classifier
from gradleak.models.classifier import token_embeddings
from gradleak.models.lm import BigramLM, lm_perplexity
from oracles import central_diff, rel_err

SMALL = ClassifierConfig(vocab_size=12, dim=8, layers=1, heads=2, ff=16, embed_std=0.3, pos_std=0.1)
QUICK = AttackConfig(n_init=8, n_perm=8, iterations=3, n_c=5, n_d=10)


@pytest.fixture(scope="module")
def victim():
    return init_classifier(SMALL, 3)


def _gset(rng, shapes=((3, 4), (5,), (2, 2, 2))):
    return {f"l{i}": rng.standard_normal(s) for i, s in enumerate(shapes)}


# gradient-matching losses


def test_tag_examples():
    g = {"w": np.array([1.0, 2.0])}
    assert loss_tag(g, g) == 0.0
    assert loss_tag({"w": np.array([3.0, 4.0])}, {"w": np.zeros(2)}, 0.01) == pytest.approx(5.07, abs=1e-12)
    one = loss_tag({"w": np.array([3.0, 4.0])}, {"w": np.zeros(2)})
    two = loss_tag({"w": np.array([6.0, 8.0])}, {"w": np.zeros(2)})
    assert two == pytest.approx(2 * one, rel=1e-12)


def test_l2_is_tag_without_l1(rng):
    a, b = _gset(rng), _gset(rng)
    assert loss_l2(a, b) == pytest.approx(loss_tag(a, b, 0.0), rel=1e-14)
    oracle = sum(np.linalg.norm((a[k] - b[k]).ravel()) for k in a)
    assert loss_l2(a, b) == pytest.approx(oracle, rel=1e-12)


def test_cos_examples():
    g = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 2.0, 0.0])}
    orth = {"a": np.array([0.0, 3.0]), "b": np.array([1.0, 0.0, 0.0])}
    neg = {k: -v for k, v in g.items()}
    assert loss_cos(g, orth) == pytest.approx(1.0, abs=1e-15)
    assert loss_cos(g, neg) == pytest.approx(2.0, abs=1e-15)


def test_cos_scale_invariant_and_bounded(rng):
    for _ in range(100):
        g = _gset(rng)
        c = float(np.exp(rng.uniform(-5, 5)))
        assert abs(loss_cos(g, {k: c * v for k, v in g.items()})) < 1e-10
        assert 0.0 <= loss_cos(g, _gset(rng)) <= 2.0


def test_cos_zero_layer_counts_as_zero_cosine_and_is_reported():
    g = {"a": np.array([1.0, 0.0]), "b": np.array([1.0, 1.0])}
    h = {"a": np.zeros(2), "b": np.array([2.0, 2.0])}
    diag = []
    assert loss_cos(g, h, diag) == pytest.approx(0.5, abs=1e-15)
    assert diag == [{"layer": 0, "trials": [0]}]


def test_tag_identity_on_random_sets(rng):
    for _ in range(100):
        g = _gset(rng)
        assert loss_tag(g, g) == 0.0


def test_mismatched_layers_rejected(rng):
    with pytest.raises(ValueError, match="shapes"):
        loss_cos({"w": np.ones(2)}, {"w": np.ones(3)})


def test_reg_examples(rng):
    embed = rng.standard_normal((10, 4))
    assert loss_reg(embed[rng.permutation(10)], embed) < 1e-20
    unit = embed / np.linalg.norm(embed, axis=1, keepdims=True)
    x = 2 * unit[:3]
    assert loss_reg(x, unit) == pytest.approx(1.0, abs=1e-12)


def test_reg_zero_at_matched_mean_norm(rng):
    for _ in range(100):
        embed = rng.standard_normal((int(rng.integers(3, 20)), 5))
        x = rng.standard_normal((2, int(rng.integers(1, 8)), 5))
        target = np.linalg.norm(embed, axis=1).mean()
        x *= target / np.linalg.norm(x, axis=-1).mean()
        assert loss_reg(x, embed) < 1e-10


def test_reg_is_quadratic_in_scale_with_known_minimum(rng):
    embed = rng.standard_normal((10, 4))
    x = rng.standard_normal((5, 4))
    t_star = np.linalg.norm(embed, axis=1).mean() / np.linalg.norm(x, axis=1).mean()
    ts = np.linspace(0.2, 3.0, 7) * t_star
    vals = [loss_reg(t * x, embed) for t in ts]
    coef = np.polyfit(ts, vals, 2)
    np.testing.assert_allclose(np.polyval(coef, ts), vals, atol=1e-10)
    assert -coef[1] / (2 * coef[0]) == pytest.approx(t_star, rel=1e-8)
    assert loss_reg(t_star * x, embed) < 1e-20


def test_reg_mask_ignores_padding_slots(rng):
    embed = rng.standard_normal((6, 3))
    x = rng.standard_normal((1, 4, 3))
    mask = np.array([[1, 1, 0, 0]])
    assert loss_reg(x, embed, mask) == pytest.approx(loss_reg(x[:, :2], embed), rel=1e-13)


# transformations


def test_transform_examples():
    assert swap_perm(4, 2, 2) == [0, 1, 2, 3]
    assert move_prefix_perm(4, 4) == [0, 1, 2, 3]
    assert move_prefix_perm(4, 1) == [1, 2, 3, 0]
    seq = np.array(list("abcd"))
    assert "".join(seq[move_token_perm(4, 0, 2)]) == "bcad"
    assert "".join(np.array(list("abcde"))[move_subseq_perm(5, 1, 2, 3)]) == "adebc"


def _single_move_outcomes(n):
    """Every order reachable by lifting one token out and reinserting it anywhere."""
    out = set()
    for i in range(n):
        rest = [k for k in range(n) if k != i]
        for at in range(n):
            out.add(tuple(rest[:at] + [i] + rest[at:]))
    return out


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_move_token_outcomes_are_reachable(n):
    reachable = _single_move_outcomes(n)
    got = {tuple(move_token_perm(n, i, j)) for i in range(n) for j in range(n)}
    assert got <= reachable
    rng = np.random.default_rng(n)
    assert all(tuple(random_perm("move_token", n, rng)) in reachable for _ in range(200))


@pytest.mark.parametrize("kind", KINDS)
def test_transforms_preserve_rows(kind):
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        x = rng.standard_normal((n, 3))
        before = x.copy()
        out = transform(x, kind, rng)
        np.testing.assert_array_equal(x, before)
        assert out.shape == x.shape
        key = lambda a: sorted(map(tuple, a))  # noqa: E731
        assert key(out) == key(x)


def test_transform_rejects_short_and_unknown():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="at least 2"):
        transform(np.zeros((1, 3)), "swap", rng)
    with pytest.raises(ValueError, match="unknown"):
        transform(np.zeros((3, 3)), "reverse", rng)


# projection


def test_projection_recovers_vocabulary_rows(rng):
    embed = rng.standard_normal((10, 6))
    ids = rng.integers(0, 10, size=(3, 5))
    np.testing.assert_array_equal(project_to_vocabulary(embed[ids], embed), ids)
    np.testing.assert_array_equal(project_to_vocabulary(7 * embed[ids], embed), ids)


def test_projection_matches_exhaustive_scan(rng):
    for _ in range(20):
        embed = rng.standard_normal((10, 4))
        x = rng.standard_normal((8, 4))
        got = project_to_vocabulary(x, embed)
        for row, tok in zip(x, got):
            sims = [row @ e / (np.linalg.norm(row) * np.linalg.norm(e)) for e in embed]
            assert tok == int(np.argmax(sims))


def test_projection_invariant_to_row_scaling(rng):
    embed = rng.standard_normal((10, 4))
    x = rng.standard_normal((6, 4))
    scales = np.exp(rng.uniform(-3, 3, (6, 1)))
    np.testing.assert_array_equal(project_to_vocabulary(x * scales, embed), project_to_vocabulary(x, embed))


def test_projection_ties_and_exclusions():
    embed = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    assert project_to_vocabulary(np.array([[1.0, 0.1]]), embed).tolist() == [0]
    assert project_to_vocabulary(np.array([[1.0, 0.1]]), embed, exclude=(0,)).tolist() == [1]


def test_projection_rejects_zero_row():
    with pytest.raises(ValueError, match=r"position \[1\]"):
        project_to_vocabulary(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2))


# candidate selection


def test_select_is_strict_and_alpha_zero_ignores_lm():
    assert not select_candidate(1.0, 1.0, 2.0, 2.0, 0.2)
    assert not select_candidate(1.0, 1.5, 2.0, 0.0, 0.0)
    assert select_candidate(1.0, 0.9, 0.0, 50.0, 0.0)
    assert select_candidate(1.0, 1.0, 2.0, 1.0, 0.2)


def test_select_never_increases_combined_objective(rng):
    rec, rec2, lm, lm2 = rng.uniform(0, 2, (4, 1000))
    alpha = rng.uniform(0, 1, 1000)
    take = select_candidate(rec, rec2, lm, lm2, alpha)
    chosen = np.where(take, rec2 + alpha * lm2, rec + alpha * lm)
    assert np.all(chosen <= rec + alpha * lm)
    only_rec = np.where(select_candidate(rec, rec2, lm, lm2, 0.0), rec2, rec)
    assert np.all(only_rec <= rec)


def test_select_prefers_the_language_model_sentence_on_a_tie(rng):
    embed = rng.standard_normal((8, 5))
    sentence = [4, 5, 6, 7]
    lm = BigramLM.fit([sentence], 8)
    shuffled = [6, 4, 7, 5]
    x_prime, x = 3 * embed[sentence], embed[shuffled]
    t_prime, t = project_to_vocabulary(x_prime, embed), project_to_vocabulary(x, embed)
    assert t_prime.tolist() == sentence and t.tolist() == shuffled
    assert select_candidate(0.4, 0.4, lm_perplexity(lm, t), lm_perplexity(lm, t_prime), 0.2)


# reconstruction objective


def _objective(victim, seqs, cfg, pad=None):
    target = client_gradient(victim, Batch(seqs))
    n = pad or max(len(s) for s in seqs)
    lengths = np.array([len(s) for s in seqs])
    mask = (np.arange(n)[None, None] < lengths[None, :, None]).astype(float)
    return StackedObjective(victim, [target], [[s.label for s in seqs]], mask, cfg)


def test_gradient_term_vanishes_at_the_true_input(victim):
    seqs = [TokenSequence((4, 5, 6), 1)]
    for loss in ("cos", "tag", "l2"):
        obj = _objective(victim, seqs, AttackConfig(loss=loss))
        _, lgrad = obj.evaluate(token_embeddings(victim, [[4, 5, 6]])[None])
        assert abs(lgrad[0]) < 1e-10, loss


def test_gradient_term_vanishes_for_a_padded_batch(victim):
    seqs = [TokenSequence((4, 5, 6), 1), TokenSequence((7, 8), 0)]
    obj = _objective(victim, seqs, AttackConfig(), pad=4)
    x = token_embeddings(victim, [[4, 5, 6, 0], [7, 8, 0, 0]])[None]
    assert abs(obj.evaluate(x)[1][0]) < 1e-10


def test_without_reg_rec_equals_grad_term(victim, rng):
    obj = _objective(victim, [TokenSequence((4, 5, 6), 0)], AttackConfig(alpha_reg=0.0))
    rec, lgrad = obj.evaluate(rng.standard_normal((2, 1, 3, SMALL.dim)), rows=0)
    np.testing.assert_array_equal(rec, lgrad)


@pytest.mark.parametrize("loss", ["cos", "tag"])
def test_rec_gradient_matches_finite_differences(victim, rng, loss):
    seqs = [TokenSequence((4, 5, 6), 1)]
    obj = _objective(victim, seqs, AttackConfig(loss=loss, alpha_reg=1.0))
    x = rng.standard_normal((1, 1, 3, SMALL.dim))
    _, _, gx = obj.evaluate(x, grad_x=True)
    fd = central_diff(lambda v: obj.evaluate(v)[0][0], x)
    assert rel_err(gx, fd) < 1e-3


def test_stacked_rows_are_independent(victim, rng):
    obj = _objective(victim, [TokenSequence((4, 5, 6), 1)], AttackConfig())
    x = rng.standard_normal((3, 1, 3, SMALL.dim))
    rec_all, _, gx_all = obj.evaluate(x, rows=0, grad_x=True)
    for k in range(3):
        rec, _, gx = obj.evaluate(x[k : k + 1], rows=0, grad_x=True)
        assert rec[0] == pytest.approx(rec_all[k], rel=1e-12)
        np.testing.assert_allclose(gx[0], gx_all[k], rtol=1e-10, atol=1e-14)


# initialisation


def test_single_draw_initialisation_is_the_gaussian_draw(victim):
    obj = _objective(victim, [TokenSequence((4, 5, 6), 1)], AttackConfig())
    cfg = AttackConfig(n_init=1, n_perm=0)
    x, _ = initialize(obj, 0, [3], np.random.default_rng(5), cfg)
    np.testing.assert_array_equal(x, np.random.default_rng(5).standard_normal((1, 3, SMALL.dim)))


def test_initialisation_is_the_argmin_and_deterministic(victim):
    obj = _objective(victim, [TokenSequence((4, 5, 6), 1)], AttackConfig())
    cfg = AttackConfig(n_init=20, n_perm=20)
    seen = []
    x, val = initialize(obj, 0, [3], np.random.default_rng(1), cfg, record=seen)
    assert len(seen) == 40 and val == min(seen)
    assert obj.evaluate(x[None])[1][0] == pytest.approx(val, rel=1e-12)
    x2, _ = initialize(obj, 0, [3], np.random.default_rng(1), cfg)
    np.testing.assert_array_equal(x, x2)


# full attack


def _target(victim, seqs):
    return client_gradient(victim, Batch(seqs))


def test_attack_is_deterministic(victim):
    seqs = [TokenSequence((4, 5, 6), 1)]
    a = run_attack(victim, _target(victim, seqs), None, QUICK, [3], [1], seed=2)
    b = run_attack(victim, _target(victim, seqs), None, QUICK, [3], [1], seed=2)
    assert a.to_dict() == b.to_dict()
    assert [s.phase for s in a.snapshots] == ["init", "discrete", "discrete", "discrete"]


def test_no_discrete_phase_means_no_reordering(victim):
    seqs = [TokenSequence((4, 5, 6), 1)]
    events = []
    res = run_attack(victim, _target(victim, seqs), None, QUICK.with_(n_d=0), [3], [1])
    run_attacks(victim, [AttackProblem(_target(victim, seqs), (3,), (1,))], None, QUICK.with_(n_d=0),
                on_accept=lambda r, v: events.append(r))
    assert all(r is None for r in events)
    assert {s.phase for s in res.snapshots} == {"init", "continuous"}


def test_combined_objective_never_rises_during_discrete_search(victim):
    seqs = [TokenSequence((4, 5, 6, 7, 8), 0)]
    lm = BigramLM.fit([[4, 5, 6, 7, 8]], SMALL.vocab_size)
    events = []
    cfg = QUICK.with_(n_d=60, alpha_lm=0.2)
    problems = [AttackProblem(_target(victim, seqs), (5,), (0,), seed=s) for s in range(3)]
    run_attacks(victim, problems, lm, cfg, on_accept=lambda r, v: events.append((r, v)))
    accepted = 0
    current = None
    for r, v in events:
        if r is None:
            current = np.array(v, dtype=float)
            continue
        assert v < current[r]
        current[r] = v
        accepted += 1
    assert accepted > 0


def test_label_enumeration_keeps_the_best_assignment(victim):
    seqs = [TokenSequence((4, 5), 1), TokenSequence((6, 7), 0)]
    res = run_attack(victim, _target(victim, seqs), None, QUICK.with_(label_mode="enumerate"), [2, 2])
    assert [tuple(a["labels"]) for a in res.alternatives] == list(itertools.product((0, 1), repeat=2))
    assert res.rec_loss == min(a["rec_loss"] for a in res.alternatives)


def test_time_budget_truncates(victim):
    seqs = [TokenSequence((4, 5, 6), 1)]
    res = run_attack(victim, _target(victim, seqs), None, QUICK.with_(iterations=1000, time_budget=0.2), [3], [1])
    assert res.truncated and res.snapshots[-1].phase == "truncated"
    assert len(res.tokens[0]) == 3


def test_padding_for_stacking_does_not_change_a_run(victim):
    seqs = [TokenSequence((4, 5, 6), 1)]
    a = run_attack(victim, _target(victim, seqs), None, QUICK, [3], [1], seed=4, pad_to=3)
    b = run_attack(victim, _target(victim, seqs), None, QUICK, [3], [1], seed=4, pad_to=6)
    assert a.tokens == b.tokens
    assert a.rec_loss == pytest.approx(b.rec_loss, rel=1e-6)
    assert (a.padded_length, b.padded_length) == (3, 6)


def test_config_validation_and_presets():
    with pytest.raises(ValueError, match="loss"):
        AttackConfig(loss="kl")
    with pytest.raises(ValueError, match="alpha_lm"):
        AttackConfig(alpha_lm=-1)
    with pytest.raises(KeyError, match="unknown preset"):
        preset("lamp-xyz")
    assert preset("lamp-cos").continuous_steps == 2000
    assert preset("lamp-no-discrete").n_d == 0 and preset("lamp-no-lm").alpha_lm == 0
    assert preset("tag", lr=0.5).lr == 0.5 and preset("dlg", name="x").name == "x"
