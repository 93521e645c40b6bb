"""Symmetric-normalized user-item bipartite adjacency and sparse propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from recdcl.corpus import TRAIN, InteractionTable


class GraphError(ValueError):
    """Invalid graph construction input or shape mismatch in propagation."""


@dataclass
class BipartiteGraph:
    """CSR adjacency over n_users + n_items nodes, users first.

    Edge (u, i) carries weight 1/sqrt(deg(u) * deg(i)) in both directions,
    where degrees count train pairs only. The matrix is symmetric.
    """

    n_users: int
    n_items: int
    adj: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def n_edges(self) -> int:
        """Stored directed edges (twice the number of train pairs)."""
        return int(self.adj.nnz)


def build(table: InteractionTable) -> BipartiteGraph:
    """Build the normalized adjacency from a table's train pairs."""
    users, items = table.pairs_of(TRAIN)
    if len(users) == 0:
        raise GraphError("cannot build a graph without train pairs")
    n_users, n_items = table.user_count, table.item_count
    n = n_users + n_items

    deg_u = np.bincount(users, minlength=n_users).astype(np.float64)
    deg_i = np.bincount(items, minlength=n_items).astype(np.float64)
    w = 1.0 / np.sqrt(deg_u[users] * deg_i[items])

    rows = np.concatenate([users, items + n_users])
    cols = np.concatenate([items + n_users, users])
    vals = np.concatenate([w, w])
    adj = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return BipartiteGraph(n_users=n_users, n_items=n_items, adj=adj)


def propagate(graph: BipartiteGraph, x: np.ndarray) -> np.ndarray:
    """One smoothing step: adj @ x. Rows 0..n_users-1 are users."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != graph.n_nodes:
        raise GraphError(f"expected ({graph.n_nodes}, F) input, got {x.shape}")
    return np.ascontiguousarray(graph.adj @ x)


def propagate_transpose(graph: BipartiteGraph, g: np.ndarray) -> np.ndarray:
    """Adjoint of propagate (equal to it here, the adjacency is symmetric).

    Kept as a separate op so gradient code reads as the adjoint it means.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != graph.n_nodes:
        raise GraphError(f"expected ({graph.n_nodes}, F) input, got {g.shape}")
    return np.ascontiguousarray(graph.adj.T @ g)
