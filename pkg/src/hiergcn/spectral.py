"""Over-smoothing diagnostics for the normalized adjacency.

Powers of the self-loop augmented operator collapse onto the eigenspace of
eigenvalue 1, which is spanned per connected component by the restriction of
``D~^1/2 1``. The convergence curve measures, per node, the cosine between the
propagated row and that limit; edge dropout keeps the curve from reaching 1.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import NormalizedAdjacency, masked_spmm, sample_mask, warn_if_raw


class ConvergenceError(ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class ConvergenceCurve:
    keep_prob: float
    ks: np.ndarray
    ratio_mean: np.ndarray
    ratio_min: np.ndarray
    n_trials: int

    @property
    def points(self):
        return list(zip(self.ks.tolist(), self.ratio_mean.tolist()))

    def at(self, k: int) -> float:
        return float(self.ratio_mean[k - 1])


@dataclass
class SpectralSummary:
    lambda_max: float
    residual: float
    n_components: int
    rayleigh_min: float
    rayleigh_max: float


def dominant_eigenpair(adj: NormalizedAdjacency, tol: float = 1e-10, max_iter: int = 100_000):
    """Power iteration from the all-ones vector; returns ``(lambda, unit vector)``.

    Stops when ``||A v - lambda v|| <= tol`` with ``lambda`` the Rayleigh
    quotient of ``v``.
    """
    warn_if_raw(adj)
    if adj.n_nodes == 0:
        raise ValueError("empty graph")
    A = adj.matrix
    v = np.full(adj.n_nodes, 1.0 / np.sqrt(adj.n_nodes))
    res = np.inf
    for _ in range(max_iter):
        w = A @ v
        lam = float(v @ w)
        res = float(np.linalg.norm(w - lam * v))
        if res <= tol:
            return lam, v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise ConvergenceError("iterate vanished", res)
        v = w / norm
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps (residual {res:.3e})", res)


def components(adj: NormalizedAdjacency):
    return connected_components(adj.matrix, directed=False)


def limit_vectors(adj: NormalizedAdjacency) -> np.ndarray:
    """Unit eigenvectors of eigenvalue 1, one column per connected component."""
    n_comp, labels = components(adj)
    s = np.sqrt(adj.degrees)
    X = np.zeros((adj.n_nodes, n_comp))
    X[np.arange(adj.n_nodes), labels] = s
    return X / np.linalg.norm(X, axis=0)


def limit_reference(adj: NormalizedAdjacency) -> np.ndarray:
    """Dense limit of ``A^k``: ``sum_c x_c x_c^T``. Row n is node n's converged vector."""
    X = limit_vectors(adj)
    return X @ X.T


def apply_limit(adj: NormalizedAdjacency, P: np.ndarray) -> np.ndarray:
    """``limit_reference(adj) @ P`` without materialising the n x n matrix."""
    X = limit_vectors(adj)
    return X @ (X.T @ P)


def row_cosines(P: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Cosine between matching rows; a zero row scores 0."""
    num = np.einsum("ij,ij->i", P, R)
    den = np.linalg.norm(P, axis=1) * np.linalg.norm(R, axis=1)
    out = np.zeros(len(P))
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def _trial(adj, p, k_max, probe, ref, seed_seq, preserve_self_loops):
    rng = np.random.default_rng(seed_seq)
    P = probe
    means = np.empty(k_max)
    mins = np.empty(k_max)
    for k in range(k_max):
        mask = None if p == 1.0 else sample_mask(adj, p, rng, preserve_self_loops)
        P = masked_spmm(adj, mask, P)
        c = row_cosines(P, ref)
        means[k] = c.mean()
        mins[k] = c.min()
    return means, mins


def convergence_curve(adj: NormalizedAdjacency, p: float, k_max: int = 20, n_trials: int = 10, seed: int = 0,
                      dense_limit: int = 1000, probe_cols: int = 32, threads: int = 1,
                      preserve_self_loops: bool = False) -> ConvergenceCurve:
    """Mean/min per-node cosine between ``A_drop^(k) ... A_drop^(1)`` rows and the limit.

    Each multiplication draws a fresh mask. Graphs with at most ``dense_limit``
    nodes propagate the identity exactly; larger ones propagate a fixed
    Gaussian probe with ``probe_cols`` columns, which is enough because the
    limit has rank equal to the number of components.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"keep probability must lie in (0, 1], got {p}")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    warn_if_raw(adj)
    root = np.random.SeedSequence(seed)
    probe_seq, trials_seq = root.spawn(2)
    if adj.n_nodes <= dense_limit:
        probe = np.eye(adj.n_nodes)
    else:
        probe = np.random.default_rng(probe_seq).standard_normal((adj.n_nodes, probe_cols))
    ref = apply_limit(adj, probe)
    n_run = 1 if p == 1.0 else n_trials
    seqs = trials_seq.spawn(n_run)

    def run(s):
        return _trial(adj, p, k_max, probe, ref, s, preserve_self_loops)

    if threads > 1 and n_run > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, seqs))
    else:
        results = [run(s) for s in seqs]
    means = np.mean([r[0] for r in results], axis=0)
    mins = np.mean([r[1] for r in results], axis=0)
    return ConvergenceCurve(p, np.arange(1, k_max + 1), means, mins, n_run)


def rayleigh_range_check(adj: NormalizedAdjacency, n_samples: int = 10_000, seed: int = 0, chunk: int = 1024):
    """Min and max of ``v^T A v`` over random unit vectors ``v``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, -np.inf
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        V = rng.standard_normal((adj.n_nodes, m))
        V /= np.linalg.norm(V, axis=0)
        q = np.einsum("ij,ij->j", V, adj.matrix @ V)
        lo, hi = min(lo, float(q.min())), max(hi, float(q.max()))
    return lo, hi


def numerical_rank(M: np.ndarray, rel_tol: float = 1e-8) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rel_tol * s[0])) if len(s) and s[0] > 0 else 0


def power_rank(adj: NormalizedAdjacency, k: int = 50, rel_tol: float = 1e-8) -> int:
    """Numerical rank of the dense ``A^k``; intended for small graphs."""
    return numerical_rank(np.linalg.matrix_power(adj.dense(), k), rel_tol)


def spectral_summary(adj: NormalizedAdjacency, n_samples: int = 10_000, seed: int = 0,
                     tol: float = 1e-10, max_iter: int = 100_000) -> SpectralSummary:
    lam, v = dominant_eigenpair(adj, tol, max_iter)
    residual = float(np.linalg.norm(adj.matrix @ v - lam * v))
    n_comp, _ = components(adj)
    lo, hi = rayleigh_range_check(adj, n_samples, seed)
    return SpectralSummary(lam, residual, int(n_comp), lo, hi)


def write_convergence_csv(curves: Sequence[ConvergenceCurve], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "k", "ratio_mean", "ratio_min", "trials"])
        for c in curves:
            for k, m, lo in zip(c.ks, c.ratio_mean, c.ratio_min):
                w.writerow([repr(float(c.keep_prob)), int(k), repr(float(m)), repr(float(lo)), c.n_trials])


def write_spectral_csv(summary: SpectralSummary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda_max", "residual", "n_components", "rayleigh_min", "rayleigh_max"])
        w.writerow([repr(summary.lambda_max), repr(summary.residual), summary.n_components,
                    repr(summary.rayleigh_min), repr(summary.rayleigh_max)])
