import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfr import losses as L
from ltfr import numerics as nx
from ltfr.relations import LabelAssignment, RelationGraph
from oracles import mine_brute, mr_oracle, ms_oracle, prior_oracle

MIN = L.MiningConfig(0.1, "paper_min")


def example_S():
    # anchor 0: [1, 0.8, 0.75]
    return np.array([[1.0, 0.8, 0.75], [0.8, 1.0, 0.3], [0.75, 0.3, 1.0]])


def unit_rows(rng, n, d=6):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_similarity_matrix_examples():
    E = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1 / math.sqrt(2), 1 / math.sqrt(2)]])
    S = L.similarity_matrix(E)
    assert S[0, 1] == 1.0 and S[0, 2] == 0.0
    assert abs(S[0, 3] - 0.70710678) < 1e-8
    with pytest.raises(ValueError):
        L.similarity_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_positive_mining_examples():
    Y = np.array([0, 0, 1])
    assert L.mine_positive_set(example_S(), Y, 0, MIN) == {1}
    assert L.mine_positive_set(example_S(), Y, 0, L.MiningConfig(0.0)) == set()
    assert L.mine_positive_set(example_S(), np.array([0, 1, 1]), 0, MIN) == set()


def test_negative_mining_examples():
    Y = np.array([0, 0, 1])
    assert L.mine_negative_set(example_S(), Y, 0, MIN) == {2}
    S = example_S()
    S[0, 2] = S[2, 0] = 0.5
    assert L.mine_negative_set(S, Y, 0, L.MiningConfig(0.0)) == set()
    assert L.mine_negative_set(example_S(), np.array([0, 1, 1]), 0, MIN) == set()


def test_no_negatives_keeps_all_positives():
    assert L.mine_positive_set(example_S(), np.array([0, 0, 0]), 0, MIN) == {1, 2}


def test_unlabeled_anchor_rejected():
    with pytest.raises(L.UnlabeledAnchorError):
        L.mine_positive_set(example_S(), np.array([-1, 0, 1]), 0, MIN)
    with pytest.raises(L.UnlabeledAnchorError):
        L.mine_negative_set(example_S(), np.array([-1, 0, 1]), 0, MIN)


def test_mining_config_validation():
    with pytest.raises(ValueError):
        L.MiningConfig(float("nan"))
    with pytest.raises(ValueError):
        L.MiningConfig(0.1, "median")
    with pytest.raises(ValueError):
        L.MsHyper(0.0, 1.0, 1.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 24), st.integers(1, 5), st.sampled_from(["paper_min", "original_max"]),
       st.floats(0, 0.5), st.integers(0, 2**31 - 1))
def test_mined_sets_match_brute_force_scan(n, n_labels, variant, delta, seed):
    rng = np.random.default_rng(seed)
    S = L.similarity_matrix(unit_rows(rng, n))
    Y = rng.integers(-1, n_labels, size=n)
    cfg = L.MiningConfig(delta, variant)
    pos_mask, neg_mask = L.mined_masks(S, Y, cfg)
    for i in range(n):
        if Y[i] < 0:
            assert not pos_mask[i].any() and not neg_mask[i].any()
            continue
        pos, neg = mine_brute(S, Y, i, delta, variant)
        assert L.mine_positive_set(S, Y, i, cfg) == pos == set(np.flatnonzero(pos_mask[i]))
        assert L.mine_negative_set(S, Y, i, cfg) == neg == set(np.flatnonzero(neg_mask[i]))


def test_relation_matrix_equals_label_vector_for_partitions(rng):
    S = L.similarity_matrix(unit_rows(rng, 10))
    Y = rng.integers(0, 3, size=10)
    R = Y[:, None] == Y[None, :]
    for variant in ("paper_min", "original_max"):
        cfg = L.MiningConfig(0.1, variant)
        a = L.mined_masks(S, Y, cfg)
        b = L.mined_masks(S, R, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert L.ms_loss(S, Y, cfg=cfg)[0] == L.ms_loss(S, R, cfg=cfg)[0]


def test_ms_loss_zero_when_nothing_mined():
    S = np.eye(3)
    loss, dS = L.ms_loss(S, np.array([0, 1, 2]))
    assert loss == 0.0 and not dS.any()


def test_ms_loss_three_point_example():
    S, Y = example_S(), np.array([0, 0, 1])
    loss, _ = L.ms_loss(S, Y, L.MsHyper(2, 50, 1), MIN)
    assert abs(loss - ms_oracle(S, Y, 2, 50, 1, 0.1, "paper_min")) < 1e-9


def test_ms_loss_duplicated_batch_mines_consistently(rng):
    S = L.similarity_matrix(unit_rows(rng, 6))
    Y = np.array([0, 0, 1, 1, 2, 2])
    S2 = np.block([[S, S], [S, S]])
    Y2 = np.concatenate([Y, Y])
    for variant in ("paper_min", "original_max"):
        cfg = L.MiningConfig(0.1, variant)
        pos, neg = L.mined_masks(S2, Y2, cfg)
        for i in range(12):
            p, q = mine_brute(S2, Y2, i, 0.1, variant)
            assert set(np.flatnonzero(pos[i])) == p and set(np.flatnonzero(neg[i])) == q
        assert abs(L.ms_loss(S2, Y2, cfg=cfg)[0] - ms_oracle(S2, Y2, 2, 50, 1, 0.1, variant)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 20), st.sampled_from(["paper_min", "original_max"]), st.integers(0, 2**31 - 1))
def test_loss_values_match_direct_evaluation(n, variant, seed):
    rng = np.random.default_rng(seed)
    S = L.similarity_matrix(unit_rows(rng, n))
    Y_A = rng.integers(-1, 3, size=n)
    Y_P = rng.integers(0, 3, size=n)
    cfg = L.MiningConfig(0.1, variant)
    ms, _ = L.ms_loss(S, np.where(Y_A < 0, 0, Y_A), cfg=cfg)
    assert abs(ms - ms_oracle(S, np.where(Y_A < 0, 0, Y_A), 2, 50, 1, 0.1, variant)) < 1e-9
    pr, _ = L.prior_loss(S, Y_P)
    assert abs(pr - prior_oracle(S, Y_P, 2, 40, 0.5)) < 1e-9
    mr, _, _ = L.multi_relationship_loss(S, Y_A, Y_P, L.LossHypers(mining=cfg), 0.3)
    assert abs(mr - mr_oracle(S, Y_A, Y_P, (2, 50, 1), (2, 40, 0.5), 0.1, variant, 0.3)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.integers(0, 2**31 - 1))
def test_ms_loss_nonnegative_and_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    S = L.similarity_matrix(unit_rows(rng, n))
    Y = rng.integers(0, 3, size=n)
    loss, _ = L.ms_loss(S, Y)
    assert loss >= 0
    pos, neg = L.mined_masks(S, Y)
    assert (loss == 0) == (not pos.any() and not neg.any())
    perm = rng.permutation(n)
    loss_p, _ = L.ms_loss(S[np.ix_(perm, perm)], Y[perm])
    assert abs(loss - loss_p) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.floats(0, 2), st.floats(0, 2), st.integers(0, 2**31 - 1))
def test_total_loss_monotone_in_lambda(n, lam1, lam2, seed):
    rng = np.random.default_rng(seed)
    S = L.similarity_matrix(unit_rows(rng, n))
    Y_A, Y_P = rng.integers(-1, 2, size=n), rng.integers(0, 2, size=n)
    lo, hi = sorted((lam1, lam2))
    a = L.multi_relationship_loss(S, Y_A, Y_P, lam=lo)[0]
    b = L.multi_relationship_loss(S, Y_A, Y_P, lam=hi)[0]
    assert b >= a - 1e-12


def test_prior_loss_edge_cases(rng):
    S = L.similarity_matrix(unit_rows(rng, 5))
    hyper = L.DEFAULT_PRIOR
    same, _ = L.prior_loss(S, np.zeros(5, int))
    expect = sum(math.log(1 + sum(math.exp(-hyper.alpha * (S[i, j] - hyper.gamma))
                                  for j in range(5) if j != i)) / hyper.alpha for i in range(5)) / 5
    assert abs(same - expect) < 1e-12
    distinct, _ = L.prior_loss(S, np.arange(5))
    expect = sum(math.log(1 + sum(math.exp(hyper.beta * (S[i, j] - hyper.gamma))
                                  for j in range(5) if j != i)) / hyper.beta for i in range(5)) / 5
    assert abs(distinct - expect) < 1e-12


def test_mr_loss_lambda_zero_and_one(rng):
    S = L.similarity_matrix(unit_rows(rng, 8))
    Y_A, Y_P = rng.integers(0, 3, size=8), rng.integers(0, 3, size=8)
    ms, _ = L.ms_loss(S, Y_A)
    pr, _ = L.prior_loss(S, Y_P)
    assert L.multi_relationship_loss(S, Y_A, Y_P, lam=0.0)[0] == ms
    assert abs(L.multi_relationship_loss(S, Y_A, Y_P, lam=1.0)[0] - (ms + pr)) < 1e-15
    with pytest.raises(ValueError):
        L.multi_relationship_loss(S, Y_A, Y_P, lam=-0.1)


def test_long_tail_only_batch(rng):
    S = L.similarity_matrix(unit_rows(rng, 6))
    Y_A = -np.ones(6, int)
    Y_P = np.array([0, 0, 1, 1, 2, 2])
    total, dS, parts = L.multi_relationship_loss(S, Y_A, Y_P, lam=0.5)
    assert parts["ms"] == 0.0
    assert abs(total - 0.5 * L.prior_loss(S, Y_P)[0]) < 1e-15
    assert np.abs(dS).sum() > 0
    _, dS0, _ = L.multi_relationship_loss(S, Y_A, Y_P, lam=0.0)
    assert not dS0.any()


def _loss_gradcheck(rng, fn, n=6, d=4):
    p = nx.ParameterSet()
    p.add("E", rng.normal(size=(n, d)))

    def model(q):
        E = nx.l2_normalize(q.leaf("E"))
        S = L.similarity_tensor(E)
        val, dS = fn(S.data)[:2]
        return L.loss_on_tape(S, val, dS)

    return nx.gradcheck(model, p)


def test_loss_gradients_pass_finite_differences(rng):
    Y = np.array([0, 0, 1, 1, 2, -1])
    Y_P = np.array([0, 1, 0, 1, 1, 0])
    soft = L.LossHypers(L.MsHyper(2, 5, 0.5), L.MsHyper(2, 4, 0.2), L.MiningConfig(2.0))
    assert _loss_gradcheck(rng, lambda S: L.ms_loss(S, np.where(Y < 0, 2, Y), soft.ms, soft.mining)) < 1e-4
    assert _loss_gradcheck(rng, lambda S: L.prior_loss(S, Y_P, soft.prior)) < 1e-4
    assert _loss_gradcheck(rng, lambda S: L.multi_relationship_loss(S, Y, Y_P, soft, 0.7)) < 1e-4


def test_sample_batch_shapes_and_determinism():
    labels = LabelAssignment("A", {f"x{i}": i % 4 for i in range(16)},
                             frozenset(f"t{i}" for i in range(6)))
    b = L.sample_batch(labels, 4, 4, 0.0, seed=1)
    assert len(b) == 16
    counts = {}
    for x in b:
        counts[labels.get(x)] = counts.get(labels.get(x), 0) + 1
    assert all(v % 4 == 0 for v in counts.values())
    b2 = L.sample_batch(labels, 4, 4, 0.25, seed=1)
    assert len(b2) == 20 and sum(x.startswith("t") for x in b2) == 4
    assert L.sample_batch(labels, 4, 4, 0.25, seed=1) == b2


def test_sample_batch_errors():
    singles = LabelAssignment("A", {"a": 0, "b": 1})
    with pytest.raises(L.BatchError):
        L.sample_batch(singles, 1, 2)
    pair = LabelAssignment("A", {"a": 0, "b": 0})
    with pytest.raises(L.BatchError):
        L.sample_batch(pair, 2, 2)


def test_neighborhood_batch_with_partners():
    g = RelationGraph([("a", "b"), ("b", "c"), ("c", "d")])
    rng = np.random.default_rng(0)
    tail = ["t1", "t2", "t3"]
    partners = {"t1": ["p1"], "t2": ["p2"], "t3": []}
    b = L.sample_neighborhood_batch(g, g.linked(), 2, 3, tail, 0.5, rng, partners)
    assert len(b) == 2 * 3 + 3
    block = b[6:]
    for k, x in enumerate(block):
        if x in partners and partners[x] and k + 1 < len(block):
            assert block[k + 1] == partners[x][0]
    with pytest.raises(L.BatchError):
        L.sample_neighborhood_batch(g, [], 2, 3)
