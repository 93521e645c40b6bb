"""scikit-learn-style estimator facade over the training engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from recdcl import corpus as corpus_mod
from recdcl import evaluation, model, trainer
from recdcl.corpus import InteractionTable
from recdcl.graph import build


def check_pairs(X, n_users: int | None = None, n_items: int | None = None) -> np.ndarray:
    """Validate an (n, 2) integer array of (user, item) interaction pairs."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of (user, item) pairs, got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("need at least one interaction pair")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(np.asarray(arr, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(arr, dtype=np.float64)):
            raise ValueError("pair ids must be integers")
        arr = rounded.astype(np.int64)
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise ValueError("pair ids must be nonnegative")
    if n_users is not None and arr[:, 0].max() >= n_users:
        raise ValueError("user id out of range")
    if n_items is not None and arr[:, 1].max() >= n_items:
        raise ValueError("item id out of range")
    return arr


def check_users(users, n_users: int) -> np.ndarray:
    arr = np.asarray(users, dtype=np.int64).ravel()
    if arr.size and (arr.min() < 0 or arr.max() >= n_users):
        raise ValueError("user id out of range")
    return arr


class RecDCL(BaseEstimator):
    """Implicit-feedback recommender trained with dual contrastive objectives.

    fit() takes an (n, 2) integer array of (user, item) pairs (or an
    InteractionTable); predict() scores (user, item) pairs; recommend()
    returns top-k item ids per user. Ids are dense nonnegative integers.

    Parameters mirror the training config: embedding_dim (F), n_layers (L),
    batch_size (B), the objective weights, and the historical-mix ratio tau.
    """

    def __init__(
        self,
        embedding_dim: int = 64,
        n_layers: int = 2,
        batch_size: int = 256,
        learning_rate: float = 1e-3,
        epochs: int = 20,
        gamma: float = 0.01,
        alpha: float = 0.2,
        beta: float = 5.0,
        tau: float = 0.1,
        kernel_a: float = 1.0,
        kernel_c: float = 1e-7,
        kernel_e: int = 4,
        lambda_dcl: float = 1.0,
        gamma_au: float = 1.0,
        objective: str = "recdcl",
        validation_fraction: float = 0.0,
        eval_every: int = 1,
        patience: int = 10,
        uuii_include_diagonal: bool = False,
        projector_identity: bool = False,
        score_normalized: bool = False,
        random_state: int = 0,
    ):
        self.embedding_dim = embedding_dim
        self.n_layers = n_layers
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.gamma = gamma
        self.alpha = alpha
        self.beta = beta
        self.tau = tau
        self.kernel_a = kernel_a
        self.kernel_c = kernel_c
        self.kernel_e = kernel_e
        self.lambda_dcl = lambda_dcl
        self.gamma_au = gamma_au
        self.objective = objective
        self.validation_fraction = validation_fraction
        self.eval_every = eval_every
        self.patience = patience
        self.uuii_include_diagonal = uuii_include_diagonal
        self.projector_identity = projector_identity
        self.score_normalized = score_normalized
        self.random_state = random_state

    def _config(self) -> trainer.TrainConfig:
        has_valid = self.validation_fraction > 0
        return trainer.TrainConfig(
            F=self.embedding_dim,
            L=self.n_layers,
            B=self.batch_size,
            lr=self.learning_rate,
            epochs=self.epochs,
            gamma=self.gamma,
            alpha=self.alpha,
            beta=self.beta,
            tau=self.tau,
            kernel_a=self.kernel_a,
            kernel_c=self.kernel_c,
            kernel_e=self.kernel_e,
            lambda_dcl=self.lambda_dcl,
            gamma_au=self.gamma_au,
            objective=self.objective,
            eval_every=self.eval_every if has_valid else 0,
            patience=self.patience,
            seed=self.random_state,
            uuii_include_diagonal=self.uuii_include_diagonal,
            projector_identity=self.projector_identity,
            score_normalized=self.score_normalized,
        ).validate()

    def fit(self, X, y=None):
        """Train on interaction pairs. y is ignored (implicit feedback)."""
        if isinstance(X, InteractionTable):
            table = X
        else:
            pairs = check_pairs(X)
            n_users = int(pairs[:, 0].max()) + 1
            n_items = int(pairs[:, 1].max()) + 1
            keep = sorted(set(zip(pairs[:, 0].tolist(), pairs[:, 1].tolist())))
            users = np.asarray([p[0] for p in keep], dtype=np.int64)
            items = np.asarray([p[1] for p in keep], dtype=np.int64)
            table = InteractionTable(
                user_count=n_users, item_count=n_items,
                users=users, items=items,
                split=np.zeros(len(users), dtype=np.int8),
                user_tokens=[str(u) for u in range(n_users)],
                item_tokens=[str(i) for i in range(n_items)],
            )
        if self.validation_fraction > 0:
            v = float(self.validation_fraction)
            if not v < 1.0:
                raise ValueError("validation_fraction must be < 1")
            table = corpus_mod.split(table, (1.0 - v, v, 0.0), seed=self.random_state)

        config = self._config()
        result = trainer.fit(config, table)
        self.table_ = table
        self.graph_ = build(table)
        self.model_ = result.state
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_users_ = table.user_count
        self.n_items_ = table.item_count
        e = model.final_embeddings(result.state, self.graph_)
        self.user_embeddings_ = e[: table.user_count]
        self.item_embeddings_ = e[table.user_count :]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def predict(self, X) -> np.ndarray:
        """Inner-product scores for (user, item) pairs."""
        self._check_fitted()
        pairs = check_pairs(X, self.n_users_, self.n_items_)
        u = self.user_embeddings_[pairs[:, 0]]
        i = self.item_embeddings_[pairs[:, 1]]
        return np.einsum("ij,ij->i", u, i)

    def transform(self, users) -> np.ndarray:
        """User embedding rows (the final encoder output)."""
        self._check_fitted()
        idx = check_users(users, self.n_users_)
        return self.user_embeddings_[idx]

    def score_items(self, users) -> np.ndarray:
        """Full catalog scores per user, nothing masked."""
        self._check_fitted()
        idx = check_users(users, self.n_users_)
        return self.user_embeddings_[idx] @ self.item_embeddings_.T

    def recommend(self, users, k: int = 10, exclude_seen: bool = True) -> np.ndarray:
        """Top-k item ids per user, ties by item id; seen items skipped by default.

        k larger than the catalog returns every item ranked.
        """
        self._check_fitted()
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        k = min(k, self.n_items_)
        idx = check_users(users, self.n_users_)
        scores = self.score_items(idx)
        if exclude_seen:
            seen = self.table_.items_by_user(corpus_mod.TRAIN)
            for j, u in enumerate(idx.tolist()):
                scores[j, seen[u]] = -np.inf
        out = np.empty((len(idx), k), dtype=np.int64)
        for j in range(len(idx)):
            out[j] = evaluation.rank_items(scores[j])[:k]
        return out

    def score(self, X, y=None) -> float:
        """Mean Recall@20 treating X's pairs as held-out items per user."""
        self._check_fitted()
        pairs = check_pairs(X, self.n_users_, self.n_items_)
        targets: dict[int, list[int]] = {}
        for u, i in pairs.tolist():
            targets.setdefault(u, []).append(i)
        seen = self.table_.items_by_user(corpus_mod.TRAIN)
        total = 0.0
        for u, test_items in targets.items():
            scores = self.user_embeddings_[u] @ self.item_embeddings_.T
            scores[seen[u]] = -np.inf
            ranked = evaluation.rank_items(scores)[:20]
            total += evaluation.recall_at_k(ranked, test_items, 20)
        return total / len(targets)
