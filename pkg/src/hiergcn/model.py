"""Hierarchical linear graph convolution: propagation, concat aggregation, scoring.

Layer k propagates ``Z_k = A_drop_k @ Z_{k-1}`` starting from ``Z_0 = E`` and
emits ``H_k = Z_k @ W_k``; ``H_0 = E`` is passed through untransformed. The
node representation is the concatenation ``[H_0, H_1, ..., H_K]`` and a
user/item score is the dot product of the two concatenated rows. There is no
nonlinearity anywhere, so gradients are a short chain of transposed sparse
products.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .graph import EdgeMask, NormalizedAdjacency, masked_spmm, masked_spmm_transpose

CHECKPOINT_MAGIC = "hiergcn-v1"


@dataclass
class ModelParams:
    n_users: int
    n_items: int
    E: np.ndarray
    W: List[np.ndarray] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.E.shape[1]

    @property
    def K(self) -> int:
        return len(self.W)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def copy(self) -> "ModelParams":
        return ModelParams(self.n_users, self.n_items, self.E.copy(), [w.copy() for w in self.W])

    def tensors(self) -> List[np.ndarray]:
        return [self.E, *self.W]

    def sq_norm(self) -> float:
        return float(sum(np.vdot(t, t) for t in self.tensors()))


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    # variance 2 / (fan_in + fan_out)
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(M: int, N: int, d: int = 64, K: int = 3, seed: int = 0, w_init: str = "xavier") -> ModelParams:
    """Xavier-uniform embeddings and layer transforms.

    ``w_init="identity"`` starts each transform at ``I`` plus a small
    Xavier perturbation instead.
    """
    if d < 1 or K < 0:
        raise ValueError("need d >= 1 and K >= 0")
    rng = np.random.default_rng(seed)
    E = xavier_uniform(rng, M + N, d)
    W = []
    for _ in range(K):
        w = xavier_uniform(rng, d, d)
        if w_init == "identity":
            w = np.eye(d) + 0.01 * w
        elif w_init != "xavier":
            raise ValueError(f"unknown w_init {w_init!r}")
        W.append(w)
    return ModelParams(M, N, E, W)


@dataclass
class ForwardTrace:
    Z: List[np.ndarray]
    H: List[np.ndarray]
    masks: List[Optional[EdgeMask]]


@dataclass
class NodeRepresentation:
    O: np.ndarray
    n_users: int
    d: int

    @property
    def n_items(self) -> int:
        return self.O.shape[0] - self.n_users

    @property
    def users(self) -> np.ndarray:
        return self.O[:self.n_users]

    @property
    def items(self) -> np.ndarray:
        return self.O[self.n_users:]

    def block(self, k: int) -> np.ndarray:
        return self.O[:, k * self.d:(k + 1) * self.d]


def forward(params: ModelParams, adj: NormalizedAdjacency, masks: Optional[Sequence[Optional[EdgeMask]]] = None):
    """Run all K layers; ``masks=None`` propagates with the full adjacency."""
    if adj.n_nodes != params.n_nodes:
        raise ValueError(f"graph has {adj.n_nodes} nodes, parameters cover {params.n_nodes}")
    if masks is None:
        masks = [None] * params.K
    elif len(masks) != params.K:
        raise ValueError(f"expected {params.K} masks, got {len(masks)}")
    Z = [params.E]
    H = [params.E]
    for W, mask in zip(params.W, masks):
        Z.append(masked_spmm(adj, mask, Z[-1]))
        H.append(Z[-1] @ W)
    trace = ForwardTrace(Z, H, list(masks))
    rep = NodeRepresentation(np.concatenate(H, axis=1), params.n_users, params.d)
    return trace, rep


def score(rep: NodeRepresentation, u: int, i: int) -> float:
    if not 0 <= u < rep.n_users or not 0 <= i < rep.n_items:
        raise IndexError(f"(u={u}, i={i}) outside {rep.n_users} users x {rep.n_items} items")
    return float(rep.O[u] @ rep.O[rep.n_users + i])


def score_all_items(rep: NodeRepresentation, u: int, exclude=()) -> np.ndarray:
    """Scores of user ``u`` against every item, ``-inf`` at excluded items."""
    s = rep.items @ rep.O[u]
    exclude = np.asarray(list(exclude) if not isinstance(exclude, np.ndarray) else exclude, dtype=np.int64)
    s[exclude] = -np.inf
    return s


def backward(params: ModelParams, adj: NormalizedAdjacency, trace: ForwardTrace, grad_O: np.ndarray):
    """Exact gradients of a loss w.r.t. E and each W_k given dL/dO.

    Uses the recorded masks; the E gradient is accumulated Horner-style so
    only K transposed products are needed in total.
    """
    d, K = params.d, params.K
    if grad_O.shape != (params.n_nodes, (K + 1) * d):
        raise ValueError(f"grad_O has shape {grad_O.shape}, expected {(params.n_nodes, (K + 1) * d)}")
    blocks = [grad_O[:, k * d:(k + 1) * d] for k in range(K + 1)]
    gW = [trace.Z[k].T @ blocks[k] for k in range(1, K + 1)]
    if K == 0:
        return blocks[0].copy(), gW
    # gZ holds dL/dZ_k, pulled back one layer at a time
    gZ = blocks[K] @ params.W[K - 1].T
    for k in range(K, 0, -1):
        gZ = masked_spmm_transpose(adj, trace.masks[k - 1], gZ)
        gZ += blocks[k - 1] @ params.W[k - 2].T if k > 1 else blocks[0]
    return gZ, gW


def save_checkpoint(params: ModelParams, path) -> None:
    """Text checkpoint: header line then E and W_1..W_K rows at 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {params.n_users} {params.n_items} {params.d} {params.K}\n")
        for t in params.tensors():
            np.savetxt(fh, t, fmt="%.17g", delimiter=" ")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
        M, N, d, K = (int(x) for x in header[1:])
        flat = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    expected = (M + N) + K * d
    if flat.shape != (expected, d):
        raise CheckpointError(f"{path}: expected {expected}x{d} values, found {flat.shape}")
    E = flat[:M + N].copy()
    W = [flat[M + N + k * d:M + N + (k + 1) * d].copy() for k in range(K)]
    return ModelParams(M, N, E, W)
