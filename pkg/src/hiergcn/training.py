"""BPR training with plain SGD and per-layer edge dropout."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from .graph import NormalizedAdjacency, sample_mask
from .interactions import InteractionSet, sample_triplets
from .model import ModelParams, backward, forward, save_checkpoint

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    reg_lambda: float = 1e-3
    keep_prob: float = 0.9
    K: int = 3
    d: int = 64
    epochs: int = 50
    batch_size: int = 1024
    seed: int = 0
    mask_refresh: str = "step"  # or "epoch"
    reduction: str = "sum"  # "mean" divides the batch gradient by its size
    reg_scope: str = "batch"  # or "full"
    preserve_self_loops: bool = False
    symmetric_mask: bool = False
    w_init: str = "xavier"
    eval_every: int = 0
    patience: int = 0
    checkpoint_every: int = 0
    dtype: str = "float64"  # "float32" roughly halves step time

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.mask_refresh not in ("step", "epoch"):
            raise ValueError("mask_refresh must be 'step' or 'epoch'")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")
        if self.reg_scope not in ("batch", "full"):
            raise ValueError("reg_scope must be 'batch' or 'full'")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")
        if self.batch_size < 1 or self.K < 0 or self.d < 1 or self.epochs < 0:
            raise ValueError("batch_size, d must be positive and K, epochs non-negative")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bpr_loss(r_ui, r_uj, params: Optional[ModelParams] = None, lam: float = 0.0):
    """``-ln sigmoid(r_ui - r_uj) + lam * ||Theta||^2`` over all parameters."""
    loss = -log_sigmoid(np.asarray(r_ui, dtype=np.float64) - np.asarray(r_uj, dtype=np.float64))
    if params is not None and lam:
        loss = loss + lam * params.sq_norm()
    return loss


def sample_layer_masks(adj, cfg: TrainConfig, rng):
    return [sample_mask(adj, cfg.keep_prob, rng, cfg.preserve_self_loops, cfg.symmetric_mask)
            for _ in range(cfg.K)]


def batch_objective(params: ModelParams, adj: NormalizedAdjacency, triplets: np.ndarray, masks,
                    lam: float = 0.0, reduction: str = "sum", reg_scope: str = "batch"):
    """Loss and exact gradients of one batch for fixed masks.

    Data term: ``sum_b -ln sigmoid(o_u . (o_i - o_j))`` (divided by the batch
    size when ``reduction="mean"``). Regulariser with ``reg_scope="batch"``:
    ``lam * sum_b (||e_u||^2 + ||e_i||^2 + ||e_j||^2)``, scaled the
    same way as the data term; ``"full"`` uses ``lam * ||Theta||^2``.
    The transforms contribute ``lam * ||W_k||^2`` once per batch either way.
    Returns ``(total_loss, data_loss, gE, gW)``.
    """
    trace, rep = forward(params, adj, masks)
    M = params.n_users
    u, i, j = triplets[:, 0], triplets[:, 1] + M, triplets[:, 2] + M
    O = rep.O
    ou, oi, oj = O[u], O[i], O[j]
    x = np.einsum("bd,bd->b", ou, oi - oj)
    scale = 1.0 / len(triplets) if reduction == "mean" else 1.0
    data_loss = float(np.sum(-log_sigmoid(x)))
    coef = -np.exp(log_sigmoid(-x)) * scale  # d/dx of -ln sigmoid(x) = -sigmoid(-x)

    B = len(triplets)
    rows = np.concatenate([u, i, j])
    scatter = sp.csr_matrix((np.ones(3 * B, dtype=O.dtype), (rows, np.arange(3 * B))), shape=(O.shape[0], 3 * B))
    cu = coef.astype(O.dtype)[:, None]
    grad_O = np.asarray(scatter @ np.concatenate([cu * (oi - oj), cu * ou, -cu * ou]))
    gE, gW = backward(params, adj, trace, grad_O)

    if reg_scope == "batch":
        reg = lam * scale * float(np.sum(params.E[rows] ** 2))
        gE += scatter @ (2.0 * lam * scale * params.E[rows])
    else:
        reg = lam * float(np.vdot(params.E, params.E))
        gE += 2.0 * lam * params.E
    # shared transforms are charged once per step in both scopes
    for W, g in zip(params.W, gW):
        reg += lam * float(np.vdot(W, W))
        g += 2.0 * lam * W
    return data_loss * scale + reg, data_loss, gE, gW


def sgd_step(params: ModelParams, gE, gW, lr: float) -> None:
    params.E -= lr * gE
    for W, g in zip(params.W, gW):
        W -= lr * g


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float
    recall10: float = float("nan")
    ndcg10: float = float("nan")


def train_epoch(params: ModelParams, adj: NormalizedAdjacency, data: InteractionSet, cfg: TrainConfig,
                rng: np.random.Generator, epoch: int = 1) -> EpochStats:
    """One pass of ``|train_pairs|`` sampled triplets, updating ``params`` in place.

    Reported loss is the mean BPR data term per triplet.
    """
    start = time.perf_counter()
    n_total = len(data.train_pairs)
    masks = sample_layer_masks(adj, cfg, rng) if cfg.mask_refresh == "epoch" else None
    total = 0.0
    done = 0
    while done < n_total:
        b = min(cfg.batch_size, n_total - done)
        triplets = sample_triplets(data, b, rng)
        step_masks = masks if masks is not None else sample_layer_masks(adj, cfg, rng)
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            _, data_loss, gE, gW = batch_objective(params, adj, triplets, step_masks, cfg.reg_lambda,
                                                   cfg.reduction, cfg.reg_scope)
        if not math.isfinite(data_loss) or not np.all(np.isfinite(gE)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} after {done} triplets; "
                                   f"learning rate {cfg.learning_rate} is probably too high")
        sgd_step(params, gE, gW, cfg.learning_rate)
        total += data_loss
        done += b
    return EpochStats(epoch, total / max(n_total, 1), time.perf_counter() - start)


@dataclass
class TrainReport:
    epochs: List[EpochStats] = field(default_factory=list)

    HEADER = ("epoch", "loss", "recall10", "ndcg10", "seconds")

    @property
    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]

    def to_csv(self, path, timing: bool = True) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.loss), _fmt(e.recall10), _fmt(e.ndcg10),
                            f"{e.seconds:.4f}" if timing else ""])


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def train(params: ModelParams, adj: NormalizedAdjacency, data: InteractionSet, cfg: TrainConfig,
          checkpoint_path=None, validate: Optional[Callable[[ModelParams], tuple]] = None):
    """Run ``cfg.epochs`` epochs; returns ``(params, report)``.

    ``validate`` maps params to ``(recall@10, ndcg@10)`` and is called every
    ``cfg.eval_every`` epochs. With ``cfg.patience > 0`` training stops once
    ndcg@10 has not improved for that many evaluations.
    """
    if params.K != cfg.K or params.d != cfg.d:
        raise ValueError(f"params have K={params.K}, d={params.d}; config asks for K={cfg.K}, d={cfg.d}")
    rng = np.random.default_rng(cfg.seed)
    if cfg.dtype != "float64":
        adj = adj.astype(cfg.dtype)
        params.E = params.E.astype(cfg.dtype)
        params.W = [w.astype(cfg.dtype) for w in params.W]
    report = TrainReport()
    best, stale = -np.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        stats = train_epoch(params, adj, data, cfg, rng, epoch)
        if validate is not None and cfg.eval_every and epoch % cfg.eval_every == 0:
            stats.recall10, stats.ndcg10 = validate(params)
        report.epochs.append(stats)
        log.info("epoch %d loss %.5f ndcg@10 %s (%.2fs)", epoch, stats.loss, stats.ndcg10, stats.seconds)
        if checkpoint_path and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(params, checkpoint_path)
        if cfg.patience and not math.isnan(stats.ndcg10):
            if stats.ndcg10 > best:
                best, stale = stats.ndcg10, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at epoch %d", epoch)
                    break
    params.E = params.E.astype(np.float64)
    params.W = [w.astype(np.float64) for w in params.W]
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path)
    return params, report
