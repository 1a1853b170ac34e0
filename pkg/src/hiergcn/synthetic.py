"""Small synthetic interaction sets used by tests, scripts and ``analyze --synthetic``."""

from __future__ import annotations

import numpy as np

from .interactions import InteractionSet, RawRecord, SplitConfig, build_split, from_pairs


def planted_blocks(n_users: int = 20, n_items: int = 20, n_blocks: int = 2, noise: float = 0.1, seed: int = 0):
    """Block-diagonal preferences with each matrix cell flipped with probability ``noise``.

    Returns raw records (string keys) so the result can go through
    :func:`build_split` like a file would.
    """
    rng = np.random.default_rng(seed)
    ub = np.arange(n_users) * n_blocks // n_users
    ib = np.arange(n_items) * n_blocks // n_items
    R = ub[:, None] == ib[None, :]
    R ^= rng.random(R.shape) < noise
    # every user keeps at least one interaction
    for u in np.flatnonzero(~R.any(axis=1)):
        R[u, rng.choice(np.flatnonzero(ib == ub[u]))] = True
    return [RawRecord(f"u{u}", f"i{i}") for u, i in zip(*np.nonzero(R))]


def planted_split(n_users=20, n_items=20, n_blocks=2, noise=0.1, seed=0, split_seed=0) -> InteractionSet:
    recs = planted_blocks(n_users, n_items, n_blocks, noise, seed)
    return build_split(recs, SplitConfig(0.8, split_seed))


def random_bipartite(n_users: int, n_items: int, n_edges: int, seed: int = 0, zipf: float = 0.0,
                     connected: bool = True) -> InteractionSet:
    """Random bipartite train graph with ``n_edges`` distinct edges.

    ``connected=True`` first lays down a path through every node. ``zipf > 0``
    skews user and item popularity like real interaction logs.
    """
    rng = np.random.default_rng(seed)
    edges = set()
    if connected:
        for k in range(max(n_users, n_items)):
            edges.add((k % n_users, k % n_items))
            edges.add((k % n_users, (k + 1) % n_items))
    if n_edges > n_users * n_items:
        raise ValueError("more edges requested than user-item pairs")
    pu = 1.0 / np.arange(1, n_users + 1) ** zipf
    pi = 1.0 / np.arange(1, n_items + 1) ** zipf
    pu, pi = pu / pu.sum(), pi / pi.sum()
    while len(edges) < n_edges:
        need = n_edges - len(edges)
        us = rng.choice(n_users, size=need, p=pu)
        its = rng.choice(n_items, size=need, p=pi)
        for e in zip(us.tolist(), its.tolist()):
            edges.add(e)
            if len(edges) == n_edges:
                break
    return from_pairs(sorted(edges), num_users=n_users, num_items=n_items)
