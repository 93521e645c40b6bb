"""Ranking metrics against brute-force oracles, masking and baseline behavior."""

import math

import numpy as np
import pytest

from recdcl import corpus, evaluation, model
from recdcl.evaluation import EvalError
from recdcl.graph import build

from conftest import make_table


# ---------------------------------------------------------------------------
# rank_items


def test_rank_best_first_ties_by_id():
    scores = np.array([1.0, 3.0, 3.0, 0.5])
    assert evaluation.rank_items(scores).tolist() == [1, 2, 0, 3]


def test_rank_handles_neg_inf():
    scores = np.array([-np.inf, 2.0, -np.inf, 1.0])
    ranked = evaluation.rank_items(scores)
    assert ranked[:2].tolist() == [1, 3]


# ---------------------------------------------------------------------------
# recall / ndcg hand cases


def test_recall_perfect():
    assert evaluation.recall_at_k(np.array([5, 2, 9]), {2, 5}, 3) == 1.0


def test_recall_one_of_four():
    ranked = np.array([7, 1, 3])
    assert evaluation.recall_at_k(ranked, {1, 10, 11, 12}, 3) == 0.25


def test_recall_capacity_bound():
    # K=2 smaller than |T|=5, both top-K are hits -> 2/5
    ranked = np.array([0, 1, 2])
    assert evaluation.recall_at_k(ranked, {0, 1, 5, 6, 7}, 2) == 2 / 5


def test_ndcg_ideal_ordering():
    assert evaluation.ndcg_at_k(np.array([4, 8, 1]), {4, 8}, 3) == 1.0


def test_ndcg_single_hit_rank1():
    v = evaluation.ndcg_at_k(np.array([3, 9]), {9}, 2)
    assert np.isclose(v, math.log2(2) / math.log2(3))
    assert np.isclose(v, 0.6309297535714574)


def test_ndcg_no_hits():
    assert evaluation.ndcg_at_k(np.array([1, 2, 3]), {8}, 3) == 0.0


def test_metrics_reject_bad_input():
    with pytest.raises(EvalError):
        evaluation.recall_at_k(np.array([1]), {1}, 0)
    with pytest.raises(EvalError):
        evaluation.ndcg_at_k(np.array([1]), set(), 2)


# ---------------------------------------------------------------------------
# oracle agreement on random instances


def oracle_recall(scores, test, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return len(set(order[:k]) & test) / len(test)


def oracle_ndcg(scores, test, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    dcg = sum(1 / math.log2(p + 2) for p in range(k) if p < len(order) and order[p] in test)
    ideal = sum(1 / math.log2(p + 2) for p in range(min(k, len(test))))
    return dcg / ideal


def test_metrics_match_oracle_exactly_1000():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(5, 40))
        scores = np.round(rng.standard_normal(n), 2)  # rounding forces ties
        n_test = int(rng.integers(1, max(2, n // 3)))
        test = set(rng.choice(n, size=n_test, replace=False).tolist())
        k = int(rng.integers(1, n + 1))
        ranked = evaluation.rank_items(scores)
        assert evaluation.recall_at_k(ranked, test, k) == oracle_recall(scores, test, k)
        assert evaluation.ndcg_at_k(ranked, test, k) == oracle_ndcg(scores, test, k)


# ---------------------------------------------------------------------------
# score_all / evaluate


@pytest.fixture
def eval_setting():
    table = make_table(
        [0, 0, 0, 1, 1, 1, 2, 2, 2],
        [0, 1, 2, 1, 2, 3, 0, 3, 4],
        split=[0, 0, 2, 0, 0, 2, 0, 0, 2],
    )
    graph = build(table)
    state = model.init(3, 5, dim=4, n_layers=2, seed=0)
    return table, graph, state


def test_score_all_masks_train_items(eval_setting):
    table, graph, state = eval_setting
    scores = evaluation.score_all(state, graph, table, user=0)
    assert scores[0] == -np.inf and scores[1] == -np.inf
    assert np.isfinite(scores[2])  # held-out test item stays scoreable


def test_score_all_matches_inner_products(eval_setting):
    table, graph, state = eval_setting
    e = model.final_embeddings(state, graph)
    scores = evaluation.score_all(state, graph, table, user=1)
    want = e[state.n_users :] @ e[1]
    unmasked = np.ones(table.item_count, dtype=bool)
    unmasked[[1, 2]] = False
    assert np.allclose(scores[unmasked], want[unmasked])


def test_evaluate_matches_bruteforce(eval_setting):
    table, graph, state = eval_setting
    ks = (1, 2, 3)
    got = evaluation.evaluate(state, graph, table, corpus.TEST, ks)
    e = model.final_embeddings(state, graph)
    recalls = {k: [] for k in ks}
    ndcgs = {k: [] for k in ks}
    for u in range(table.user_count):
        test = set(table.items[(table.users == u) & (table.split == corpus.TEST)].tolist())
        if not test:
            continue
        scores = (e[state.n_users :] @ e[u]).tolist()
        train = table.items[(table.users == u) & (table.split == corpus.TRAIN)].tolist()
        for t in train:
            scores[t] = -np.inf
        for k in ks:
            recalls[k].append(oracle_recall(scores, test, k))
            ndcgs[k].append(oracle_ndcg(scores, test, k))
    for k in ks:
        assert got.recall[k] == np.mean(recalls[k])
        assert got.ndcg[k] == np.mean(ndcgs[k])
    assert got.n_users_evaluated == 3


def test_evaluate_ignores_other_split(eval_setting):
    """Relabeling test items must not change valid-split metrics."""
    table, graph, state = eval_setting
    with_valid = make_table(
        table.users, table.items,
        split=np.where(table.split == corpus.TEST, corpus.TEST, table.split),
    )
    # give user 0 a valid item by flipping one train pair
    s = with_valid.split.copy()
    s[1] = corpus.VALID
    with_valid = make_table(table.users, table.items, split=s)
    before = evaluation.evaluate(state, graph, with_valid, corpus.VALID, (2,))
    s2 = s.copy()
    s2[s2 == corpus.TEST] = corpus.TRAIN  # move test into train
    # Train-mask changes would alter scores; instead drop test pairs entirely
    keep = s != corpus.TEST
    smaller = make_table(
        table.users[keep], table.items[keep],
        n_users=table.user_count, n_items=table.item_count, split=s[keep],
    )
    after = evaluation.evaluate(state, graph, smaller, corpus.VALID, (2,))
    assert before.recall[2] == after.recall[2]
    assert before.ndcg[2] == after.ndcg[2]


def test_evaluate_no_eligible_users(eval_setting):
    table, graph, state = eval_setting
    all_train = make_table(table.users, table.items)
    with pytest.raises(EvalError):
        evaluation.evaluate(state, graph, all_train, corpus.TEST, (2,))


def test_evaluate_chunking_consistent(eval_setting, monkeypatch):
    table, graph, state = eval_setting
    full = evaluation.evaluate(state, graph, table, corpus.TEST, (2,))
    monkeypatch.setattr(evaluation, "_USER_CHUNK", 1)
    tiny = evaluation.evaluate(state, graph, table, corpus.TEST, (2,))
    assert full.recall[2] == tiny.recall[2]


# ---------------------------------------------------------------------------
# popularity baseline


def test_pop_baseline_counts_and_ties():
    t = make_table([0, 1, 2, 0, 1, 0], [0, 0, 0, 1, 2, 3], n_items=5)
    ranked = evaluation.pop_baseline(t)
    # counts: i0=3, i1=1, i2=1, i3=1, i4=0; ties by id ascending
    assert ranked.tolist() == [0, 1, 2, 3, 4]


def test_pop_dominant_item_tops_every_list():
    users = [0, 1, 2, 3, 0, 1]
    items = [0, 0, 0, 0, 1, 2]
    split = [0, 0, 0, 0, 0, 2]
    t = make_table(users, items, split=split)
    ranked = evaluation.pop_baseline(t)
    assert ranked[0] == 0
    # user 1 gets item 0 at the top (not a train item of theirs -> unmasked)
    m = evaluation.evaluate_pop(t, corpus.TEST, (1,))
    assert m.n_users_evaluated == 1


def test_evaluate_pop_matches_manual():
    t = make_table(
        [0, 0, 0, 1, 1, 1],
        [0, 1, 2, 0, 3, 2],
        split=[0, 0, 2, 0, 0, 2],
    )
    got = evaluation.evaluate_pop(t, corpus.TEST, (2,))
    # counts: i0=2, i1=1, i3=1 (train only). user0 masks {0,1} -> ranked [3,2,...]
    # wait: unmasked counts for user0: i2=0, i3=1, i4.. none -> top2 = [3, 2]
    # user0 test={2}: recall 1.0 at rank 1 (0-indexed), ndcg 1/log2(3)
    # user1 masks {0,3} -> top2 = [1, 2]; test={2}: hit at rank 1
    assert got.recall[2] == 1.0
    want_ndcg = (1 / math.log2(3)) / 1.0
    assert np.isclose(got.ndcg[2], want_ndcg)
