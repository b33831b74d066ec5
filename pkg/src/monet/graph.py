"""User-item bipartite graph over the training interactions and the
normalized neighborhood-aggregation kernel.

One propagation layer maps item embeddings to the coefficient-weighted sum of
their neighbors' user embeddings plus an unnormalized ``alpha``-scaled copy of
their own previous embedding, and symmetrically for users.  The coefficient of
edge (u, i) is ``1 / sqrt(deg(u) * deg(i))``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .datasets import InteractionDataset
from .errors import GraphError


@dataclass
class BipartiteGraph:
    """Compressed sorted adjacency in both directions with per-edge
    normalization coefficients (stored in 64-bit, applied in the embedding
    precision)."""

    num_users: int
    num_items: int
    user_indptr: np.ndarray   # (num_users + 1,)
    user_items: np.ndarray    # ascending neighbor items per user
    user_coeff: np.ndarray    # float64, aligned with user_items
    item_indptr: np.ndarray
    item_users: np.ndarray
    item_coeff: np.ndarray
    user_degree: np.ndarray
    item_degree: np.ndarray
    _mats: dict = field(default_factory=dict, repr=False)

    def items_of(self, u: int) -> np.ndarray:
        return self.user_items[self.user_indptr[u]:self.user_indptr[u + 1]]

    def users_of(self, i: int) -> np.ndarray:
        return self.item_users[self.item_indptr[i]:self.item_indptr[i + 1]]

    def _matrix(self, direction: str, dtype) -> sp.csr_matrix:
        key = (direction, np.dtype(dtype))
        if key not in self._mats:
            if direction == "item_from_user":
                mat = sp.csr_matrix(
                    (self.item_coeff.astype(dtype), self.item_users, self.item_indptr),
                    shape=(self.num_items, self.num_users),
                )
            else:
                mat = sp.csr_matrix(
                    (self.user_coeff.astype(dtype), self.user_items, self.user_indptr),
                    shape=(self.num_users, self.num_items),
                )
            self._mats[key] = mat
        return self._mats[key]


def build_graph(dataset: InteractionDataset) -> BipartiteGraph:
    """Build the graph over exactly the training edges; adjacency lists are
    sorted ascending so summation order is reproducible."""
    train = dataset.train
    if train.shape[0] == 0:
        raise GraphError("training partition is empty")
    num_users, num_items = dataset.num_users, dataset.num_items
    user_degree = np.bincount(train[:, 0], minlength=num_users)
    item_degree = np.bincount(train[:, 1], minlength=num_items)
    if (user_degree == 0).any():
        raise GraphError(f"user {int(np.flatnonzero(user_degree == 0)[0])} has no training interactions")
    if (item_degree == 0).any():
        raise GraphError(f"item {int(np.flatnonzero(item_degree == 0)[0])} has no training interactions")

    coeff_all = 1.0 / np.sqrt(
        user_degree[train[:, 0]].astype(np.float64) * item_degree[train[:, 1]].astype(np.float64)
    )

    by_user = np.lexsort((train[:, 1], train[:, 0]))
    user_indptr = np.zeros(num_users + 1, dtype=np.int64)
    np.cumsum(user_degree, out=user_indptr[1:])
    user_items = train[by_user, 1].copy()
    user_coeff = coeff_all[by_user]

    by_item = np.lexsort((train[:, 0], train[:, 1]))
    item_indptr = np.zeros(num_items + 1, dtype=np.int64)
    np.cumsum(item_degree, out=item_indptr[1:])
    item_users = train[by_item, 0].copy()
    item_coeff = coeff_all[by_item]

    return BipartiteGraph(
        num_users=num_users,
        num_items=num_items,
        user_indptr=user_indptr,
        user_items=user_items,
        user_coeff=user_coeff,
        item_indptr=item_indptr,
        item_users=item_users,
        item_coeff=item_coeff,
        user_degree=user_degree,
        item_degree=item_degree,
    )


def propagate(graph: BipartiteGraph, user_emb: np.ndarray, item_emb: np.ndarray, alpha: float):
    """One simultaneous propagation layer: both outputs read the previous
    layer.  The self term is deliberately left unnormalized."""
    if user_emb.shape[0] != graph.num_users or item_emb.shape[0] != graph.num_items:
        raise ValueError(
            f"embedding rows ({user_emb.shape[0]}, {item_emb.shape[0]}) do not match "
            f"graph nodes ({graph.num_users}, {graph.num_items})"
        )
    if user_emb.shape[1] != item_emb.shape[1]:
        raise ValueError("user and item embeddings must share dimensionality")
    dtype = np.result_type(user_emb.dtype, item_emb.dtype)
    new_item = graph._matrix("item_from_user", dtype) @ user_emb
    new_user = graph._matrix("user_from_item", dtype) @ item_emb
    if alpha != 0.0:
        new_item = new_item + alpha * item_emb
        new_user = new_user + alpha * user_emb
    return new_user, new_item


def propagate_dense_oracle(adjacency: np.ndarray, user_emb: np.ndarray, item_emb: np.ndarray, alpha: float):
    """Reference propagation through an explicitly built dense normalized
    adjacency plus ``alpha`` times the identity.  Small graphs only; used to
    cross-check :func:`propagate` in tests."""
    adjacency = np.asarray(adjacency)
    num_users, num_items = adjacency.shape
    if num_users + num_items > 64:
        raise ValueError("dense oracle is restricted to graphs with at most 64 nodes")
    if user_emb.shape[0] != num_users or item_emb.shape[0] != num_items:
        raise ValueError("embedding rows do not match adjacency shape")
    user_degree = adjacency.sum(axis=1)
    item_degree = adjacency.sum(axis=0)
    if (user_degree == 0).any() or (item_degree == 0).any():
        raise ValueError("dense oracle requires every node to have degree >= 1")
    coeff = adjacency / np.sqrt(np.outer(user_degree, item_degree))
    new_user = coeff @ item_emb + alpha * user_emb
    new_item = coeff.T @ user_emb + alpha * item_emb
    return new_user, new_item
