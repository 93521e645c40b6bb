"""Full-catalog top-K ranking metrics and the popularity baseline.

Scoring uses the unnormalized final embeddings by default (a flag switches to
row-normalized ones). Train items are masked to -inf, score ties break by
item id ascending, and users without items in the target split are skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from recdcl import model
from recdcl.corpus import TRAIN, VALID, InteractionTable
from recdcl.graph import BipartiteGraph

_USER_CHUNK = 512


class EvalError(ValueError):
    """No eligible users or malformed evaluation input."""


@dataclass
class RankingMetrics:
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_users_evaluated: int

    def as_dict(self) -> dict:
        out = {f"recall@{k}": self.recall[k] for k in sorted(self.recall)}
        out.update({f"ndcg@{k}": self.ndcg[k] for k in sorted(self.ndcg)})
        out["n_users_evaluated"] = self.n_users_evaluated
        return out


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Item ids best-first; equal scores order by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def recall_at_k(ranked: np.ndarray, test_set, k: int) -> float:
    """|top-K hits| / |test set|."""
    if k < 1:
        raise EvalError("K must be >= 1")
    test = set(int(t) for t in test_set)
    if not test:
        raise EvalError("empty test set; user should have been skipped upstream")
    hits = sum(1 for item in ranked[:k] if int(item) in test)
    return hits / len(test)


def ndcg_at_k(ranked: np.ndarray, test_set, k: int) -> float:
    """Binary-relevance NDCG with 0-indexed discount log2(rank + 2)."""
    if k < 1:
        raise EvalError("K must be >= 1")
    test = set(int(t) for t in test_set)
    if not test:
        raise EvalError("empty test set; user should have been skipped upstream")
    dcg = 0.0
    for pos in range(min(k, len(ranked))):
        if int(ranked[pos]) in test:
            dcg += 1.0 / math.log2(pos + 2)
    ideal = 0.0
    for pos in range(min(k, len(test))):
        ideal += 1.0 / math.log2(pos + 2)
    return dcg / ideal


def score_all(
    state: model.ModelState,
    graph: BipartiteGraph,
    table: InteractionTable,
    user: int,
    normalized: bool = False,
    embeddings: np.ndarray | None = None,
) -> np.ndarray:
    """Inner-product scores of one user against the full catalog, with that
    user's train items set to -inf. Pass a precomputed embedding table to
    avoid re-running the encoder per user."""
    e = embeddings if embeddings is not None else _embedding_table(state, graph, normalized)
    scores = e[state.n_users :] @ e[user]
    train_items = table.items[(table.users == user) & (table.split == TRAIN)]
    scores[train_items] = -np.inf
    return scores


def _embedding_table(
    state: model.ModelState, graph: BipartiteGraph, normalized: bool
) -> np.ndarray:
    _, e, _, etilde = model.embed(state, graph)
    return etilde if normalized else e


def _metrics_over_users(
    score_rows,  # iterable of (user, masked score vector)
    targets: list[np.ndarray],
    ks: tuple[int, ...],
) -> RankingMetrics:
    recall_sums = {k: 0.0 for k in ks}
    ndcg_sums = {k: 0.0 for k in ks}
    n = 0
    for user, scores in score_rows:
        test = targets[user]
        ranked = rank_items(scores)[: max(ks)]
        for k in ks:
            recall_sums[k] += recall_at_k(ranked, test, k)
            ndcg_sums[k] += ndcg_at_k(ranked, test, k)
        n += 1
    if n == 0:
        raise EvalError("no users with items in the requested split")
    return RankingMetrics(
        recall={k: recall_sums[k] / n for k in ks},
        ndcg={k: ndcg_sums[k] / n for k in ks},
        n_users_evaluated=n,
    )


def evaluate(
    state: model.ModelState,
    graph: BipartiteGraph,
    table: InteractionTable,
    split: int = VALID,
    ks: tuple[int, ...] = (10, 20, 50),
    normalized: bool = False,
) -> RankingMetrics:
    """Mean Recall@K / NDCG@K over users holding >= 1 item in `split`."""
    e = _embedding_table(state, graph, normalized)
    user_emb = e[: state.n_users]
    item_emb = e[state.n_users :]
    targets = table.items_by_user(split)
    train_lists = table.items_by_user(TRAIN)
    eligible = [u for u in range(table.user_count) if len(targets[u])]

    def rows():
        for start in range(0, len(eligible), _USER_CHUNK):
            chunk = eligible[start : start + _USER_CHUNK]
            scores = user_emb[chunk] @ item_emb.T
            for j, u in enumerate(chunk):
                row = scores[j]
                row[train_lists[u]] = -np.inf
                yield u, row

    return _metrics_over_users(rows(), targets, tuple(ks))


def pop_baseline(table: InteractionTable) -> np.ndarray:
    """Items ranked by train interaction count, ties by id ascending."""
    _, items = table.pairs_of(TRAIN)
    counts = np.bincount(items, minlength=table.item_count)
    return rank_items(counts.astype(np.float64))


def evaluate_pop(
    table: InteractionTable,
    split: int = VALID,
    ks: tuple[int, ...] = (10, 20, 50),
) -> RankingMetrics:
    """Popularity scorer under the same protocol (train items masked)."""
    _, items = table.pairs_of(TRAIN)
    counts = np.bincount(items, minlength=table.item_count).astype(np.float64)
    targets = table.items_by_user(split)
    train_lists = table.items_by_user(TRAIN)
    eligible = [u for u in range(table.user_count) if len(targets[u])]

    def rows():
        for u in eligible:
            scores = counts.copy()
            scores[train_lists[u]] = -np.inf
            yield u, scores

    return _metrics_over_users(rows(), targets, tuple(ks))
