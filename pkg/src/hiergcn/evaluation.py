"""Full-ranking top-k evaluation and the two robustness attacks."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from .graph import NormalizedAdjacency, sample_mask
from .interactions import InteractionSet
from .model import ModelParams, NodeRepresentation, forward


@dataclass(frozen=True)
class RankingMetrics:
    k: int
    recall: float
    ndcg: float
    n_users_evaluated: int


@dataclass(frozen=True)
class AttackConfig:
    kind: str  # "gaussian_embedding" | "edge_sparsify"
    sigma: float = 0.0
    keep_prob: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian_embedding", "edge_sparsify"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")

    @property
    def param(self) -> float:
        return self.sigma if self.kind == "gaussian_embedding" else self.keep_prob


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def recall_at_k(ranked_items, test_set, k: int, truncated: bool = False) -> Optional[float]:
    """Fraction of the user's test items found in the top ``k``; None if there are none."""
    test = set(int(t) for t in test_set)
    if not test:
        return None
    hits = sum(1 for it in list(ranked_items)[:k] if int(it) in test)
    return hits / (min(k, len(test)) if truncated else len(test))


def ndcg_at_k(ranked_items, test_set, k: int) -> Optional[float]:
    """Binary-relevance ndcg with a log2 discount starting at rank 1."""
    test = set(int(t) for t in test_set)
    if not test:
        return None
    disc = _discounts(k)
    # correctly rounded sums keep dcg <= idcg, so the ratio never exceeds 1
    dcg = math.fsum(disc[r] for r, it in enumerate(list(ranked_items)[:k]) if int(it) in test)
    idcg = math.fsum(disc[:min(k, len(test))])
    return dcg / idcg


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the ``k`` best scores; ties go to the lower index.

    Positions whose score is ``-inf`` (excluded items) are returned as -1.
    """
    k = min(k, scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    picked = np.take_along_axis(scores, order, axis=1)
    order[np.isneginf(picked)] = -1
    return order


def _user_metrics(topk: np.ndarray, data: InteractionSet, users: np.ndarray, ks, truncated: bool):
    """Per-user recall/ndcg arrays for every cutoff, computed vectorised."""
    n_test = np.array([len(data.test_items(u)) for u in users], dtype=np.float64)
    hit = (topk >= 0) & data.in_test(users[:, None], np.maximum(topk, 0))
    disc = _discounts(topk.shape[1])
    out = {}
    for k in ks:
        h = hit[:, :k]
        denom = np.minimum(n_test, k) if truncated else n_test
        recall = h.sum(axis=1) / denom
        dcg = (h * disc[:h.shape[1]]).sum(axis=1)
        idcg = np.cumsum(_discounts(k))[np.minimum(n_test, k).astype(np.int64) - 1]
        out[k] = (recall, np.minimum(dcg / idcg, 1.0))  # clip summation-order rounding
    return out


def rank_users(rep: NodeRepresentation, data: InteractionSet, users: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` item lists for ``users`` with their training items excluded."""
    scores = rep.O[users] @ rep.items.T
    counts = data.train_counts()[users]
    rows = np.repeat(np.arange(len(users)), counts)
    cols = np.concatenate([data.train_items(u) for u in users]) if len(users) else np.zeros(0, np.int64)
    scores[rows, cols] = -np.inf
    return top_k(scores, k)


def evaluate_representation(rep: NodeRepresentation, data: InteractionSet, ks: Sequence[int] = (10, 20),
                            threads: int = 1, chunk: int = 512,
                            truncated_recall: bool = False) -> Dict[int, RankingMetrics]:
    """Mean recall/ndcg over users that have test items.

    Per-user values are reduced in user order, so the result does not depend
    on ``threads``.
    """
    ks = sorted(set(int(k) for k in ks))
    users = np.flatnonzero(np.array([len(data.test_items(u)) for u in range(data.num_users)]) > 0)
    chunks = [users[s:s + chunk] for s in range(0, len(users), chunk)]

    def work(us):
        return _user_metrics(rank_users(rep, data, us, max(ks)), data, us, ks, truncated_recall)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    result = {}
    for k in ks:
        rec = np.concatenate([p[k][0] for p in parts]) if parts else np.zeros(0)
        nd = np.concatenate([p[k][1] for p in parts]) if parts else np.zeros(0)
        n = len(rec)
        result[k] = RankingMetrics(k, math.fsum(rec) / n if n else 0.0, math.fsum(nd) / n if n else 0.0, n)
    return result


def evaluate(params: ModelParams, adj: NormalizedAdjacency, data: InteractionSet,
             ks: Sequence[int] = (10, 20), threads: int = 1, truncated_recall: bool = False,
             masks=None) -> Dict[int, RankingMetrics]:
    """Rank every non-train item for each test user using the full adjacency."""
    _, rep = forward(params, adj, masks)
    return evaluate_representation(rep, data, ks, threads=threads, truncated_recall=truncated_recall)


def attacked_representation(params: ModelParams, adj: NormalizedAdjacency, attack: AttackConfig) -> NodeRepresentation:
    rng = np.random.default_rng(attack.seed)
    if attack.kind == "edge_sparsify":
        mask = sample_mask(adj, attack.keep_prob, rng)
        _, rep = forward(params, adj, [mask] * params.K)
        return rep
    _, rep = forward(params, adj)
    if attack.sigma > 0:
        # per-layer outputs feed straight into the concatenation, so noising O
        # block-wise is the same as noising each H_k
        rep = NodeRepresentation(rep.O + rng.normal(0.0, attack.sigma, size=rep.O.shape), rep.n_users, rep.d)
    return rep


def evaluate_under_attack(params: ModelParams, adj: NormalizedAdjacency, data: InteractionSet,
                          attack: AttackConfig, ks: Sequence[int] = (10, 20),
                          threads: int = 1) -> Dict[int, RankingMetrics]:
    """Gaussian noise on every layer output, or one fixed edge mask reused at all layers."""
    rep = attacked_representation(params, adj, attack)
    return evaluate_representation(rep, data, ks, threads=threads)


def degradation_pct(clean: float, attacked: float) -> float:
    return 100.0 * (clean - attacked) / clean if clean else 0.0


def random_ranking_expectation(data: InteractionSet, k: int = 10, n_trials: int = 200, seed: int = 0):
    """Monte-Carlo mean (recall@k, ndcg@k) of a uniformly random ranking of non-train items."""
    rng = np.random.default_rng(seed)
    rec, nd = [], []
    for u in range(data.num_users):
        test = data.test_items(u)
        if len(test) == 0:
            continue
        candidates = np.setdiff1d(np.arange(data.num_items), data.train_items(u))
        r = n = 0.0
        for _ in range(n_trials):
            ranked = rng.permutation(candidates)[:k]
            r += recall_at_k(ranked, test, k)
            n += ndcg_at_k(ranked, test, k)
        rec.append(r / n_trials)
        nd.append(n / n_trials)
    return float(np.mean(rec)), float(np.mean(nd))


def write_metrics_csv(metrics: Dict[int, RankingMetrics], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "recall", "ndcg", "n_users"])
        for k in sorted(metrics):
            m = metrics[k]
            w.writerow([k, repr(m.recall), repr(m.ndcg), m.n_users_evaluated])


def write_attack_csv(rows: Iterable[tuple], path) -> None:
    """``rows`` are ``(kind, param, k, recall, ndcg, degradation_pct)`` tuples."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "param", "k", "recall", "ndcg", "degradation_pct"])
        for kind, param, k, rec, nd, deg in rows:
            w.writerow([kind, repr(float(param)), k, repr(rec), repr(nd), repr(deg)])
