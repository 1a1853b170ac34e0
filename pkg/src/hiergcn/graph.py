"""Normalized bipartite adjacency with per-layer Bernoulli edge masks.

Node ids: users occupy ``[0, M)``, items ``[M, M + N)``. The propagation
operator is ``D~^-1/2 (A + I) D~^-1/2`` stored in CSR form. Masks select a
subset of the stored nonzeros (self-loops included) and are applied without
``1/p`` rescaling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .interactions import InteractionSet


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    degrees: np.ndarray  # augmented degree d + 1 (plain degree when self_loops is False)
    self_loops: bool = True

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def nnz(self) -> int:
        return len(self.values)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes))

    @cached_property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nodes), np.diff(self.indptr))

    @cached_property
    def mirror(self) -> np.ndarray:
        """Position of stored entry (b, a) for every stored entry (a, b)."""
        order = np.lexsort((self.rows, self.indices))  # sort by (col, row)
        mirror = np.empty(self.nnz, dtype=np.int64)
        mirror[order] = np.arange(self.nnz)
        return mirror

    @cached_property
    def diagonal_positions(self) -> np.ndarray:
        return np.flatnonzero(self.rows == self.indices)

    def astype(self, dtype) -> "NormalizedAdjacency":
        return replace(self, values=self.values.astype(dtype))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def build_adjacency(data: InteractionSet, source: str = "train", self_loops: bool = True) -> NormalizedAdjacency:
    """Symmetric-normalised adjacency built from ``train`` (default) or ``all`` pairs.

    With ``self_loops=False`` the raw ``D^-1/2 A D^-1/2`` is built instead;
    isolated nodes then have empty rows. That variant exists for spectral
    diagnostics only.
    """
    if source == "train":
        pairs = data.train_pairs
    elif source in ("all", "train+test"):
        pairs = np.concatenate([data.train_pairs, data.test_pairs])
    else:
        raise ValueError(f"unknown adjacency source {source!r}")
    M, N = data.num_users, data.num_items
    n = M + N
    u = pairs[:, 0]
    i = pairs[:, 1] + M
    rows = [u, i]
    cols = [i, u]
    if self_loops:
        diag = np.arange(n, dtype=np.int64)
        rows.append(diag)
        cols.append(diag)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    deg = np.bincount(rows, minlength=n).astype(np.float64)

    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    values = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return NormalizedAdjacency(M, N, indptr, cols.astype(np.int64), values, deg, self_loops)


@dataclass(eq=False)
class EdgeMask:
    """Keep/drop decision for every stored nonzero of an adjacency."""

    keep_prob: float
    kept: np.ndarray  # bool, one entry per stored value
    seed_state: Optional[dict] = field(default=None, repr=False)

    @property
    def n_kept(self) -> int:
        return int(self.kept.sum())


def full_mask(adj: NormalizedAdjacency) -> EdgeMask:
    return EdgeMask(1.0, np.ones(adj.nnz, dtype=bool))


def sample_mask(adj: NormalizedAdjacency, p: float, rng: np.random.Generator,
                preserve_self_loops: bool = False, symmetric: bool = False) -> EdgeMask:
    """Keep each stored nonzero independently with probability ``p``.

    ``symmetric`` ties (a, b) and (b, a) to one draw; ``preserve_self_loops``
    never drops diagonal entries.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"keep probability must lie in (0, 1], got {p}")
    state = rng.bit_generator.state
    if p == 1.0:
        kept = np.ones(adj.nnz, dtype=bool)
    else:
        kept = rng.random(adj.nnz) < p
        if symmetric:
            kept = kept[np.minimum(np.arange(adj.nnz), adj.mirror)]
    if preserve_self_loops:
        kept[adj.diagonal_positions] = True
    return EdgeMask(p, kept, state)


def masked_matrix(adj: NormalizedAdjacency, mask: Optional[EdgeMask]) -> sp.csr_matrix:
    if mask is None:
        return adj.matrix
    if len(mask.kept) != adj.nnz:
        raise ValueError(f"mask has {len(mask.kept)} entries, adjacency stores {adj.nnz}")
    return sp.csr_matrix((np.where(mask.kept, adj.values, adj.values.dtype.type(0)), adj.indices, adj.indptr),
                         shape=(adj.n_nodes, adj.n_nodes))


def _check_rows(adj, X):
    X = np.asarray(X)
    if X.shape[0] != adj.n_nodes:
        raise ValueError(f"operand has {X.shape[0]} rows, adjacency has {adj.n_nodes} nodes")
    return X


def masked_spmm(adj: NormalizedAdjacency, mask: Optional[EdgeMask], X) -> np.ndarray:
    """Row a of the result is ``sum_b kept(a, b) * A[a, b] * X[b]``."""
    X = _check_rows(adj, X)
    return np.asarray(masked_matrix(adj, mask) @ X)


def masked_spmm_transpose(adj: NormalizedAdjacency, mask: Optional[EdgeMask], G) -> np.ndarray:
    """Row b of the result is ``sum_a kept(a, b) * A[a, b] * G[a]``."""
    G = _check_rows(adj, G)
    return np.asarray(masked_matrix(adj, mask).T @ G)


def dump_adjacency(adj: NormalizedAdjacency, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r, c, v in zip(adj.rows, adj.indices, adj.values):
            fh.write(f"{r}\t{c}\t{v:.17g}\n")


def warn_if_raw(adj: NormalizedAdjacency) -> None:
    if not adj.self_loops:
        warnings.warn("adjacency has no self-loops; bipartite propagation will oscillate (eigenvalue -1)",
                      RuntimeWarning, stacklevel=3)
