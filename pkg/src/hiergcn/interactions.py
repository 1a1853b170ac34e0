"""Implicit-feedback ingestion, per-user train/test splitting and BPR sampling."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent interaction data."""


@dataclass(frozen=True)
class RawRecord:
    user_key: str
    item_key: str
    weight: Optional[float] = None
    timestamp: Optional[int] = None

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise DataError("user and item keys must be non-empty")


@dataclass(frozen=True)
class FieldLayout:
    """Column positions of a whitespace separated interaction file."""

    user_col: int = 0
    item_col: int = 1
    weight_col: Optional[int] = 2
    timestamp_col: Optional[int] = 3
    comment: str = "#"
    # records with weight <= threshold are dropped; implicit files carry no weight
    threshold: float = 0.0


@dataclass(frozen=True)
class SplitConfig:
    split_ratio: float = 0.8
    seed: int = 0
    per_user: bool = True

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")


@dataclass
class InteractionSet:
    """Dense-ID user/item interactions partitioned into train and test.

    ``train_pairs`` and ``test_pairs`` are int64 arrays of shape (n, 2), sorted
    by (user, item). ``user_keys``/``item_keys`` map internal ids back to the
    original keys when the set came from raw records.
    """

    num_users: int
    num_items: int
    train_pairs: np.ndarray
    test_pairs: np.ndarray
    user_keys: list = field(default_factory=list)
    item_keys: list = field(default_factory=list)

    def __post_init__(self):
        self.train_pairs = _sorted_pairs(self.train_pairs)
        self.test_pairs = _sorted_pairs(self.test_pairs)
        for name, pairs in (("train", self.train_pairs), ("test", self.test_pairs)):
            if len(pairs) and (pairs[:, 0].max() >= self.num_users or pairs[:, 1].max() >= self.num_items
                               or pairs.min() < 0):
                raise DataError(f"{name} pair ids out of range for M={self.num_users}, N={self.num_items}")
        self._train_ptr, self._train_items = _index(self.train_pairs, self.num_users)
        self._test_ptr, self._test_items = _index(self.test_pairs, self.num_users)
        self._train_codes = self.train_pairs[:, 0] * self.num_items + self.train_pairs[:, 1]
        self._test_codes = self.test_pairs[:, 0] * self.num_items + self.test_pairs[:, 1]

    @property
    def n_nodes(self) -> int:
        return self.num_users + self.num_items

    def train_items(self, u: int) -> np.ndarray:
        return self._train_items[self._train_ptr[u]:self._train_ptr[u + 1]]

    def test_items(self, u: int) -> np.ndarray:
        return self._test_items[self._test_ptr[u]:self._test_ptr[u + 1]]

    @property
    def user_train_index(self) -> list:
        return [self.train_items(u) for u in range(self.num_users)]

    @property
    def user_test_index(self) -> list:
        return [self.test_items(u) for u in range(self.num_users)]

    def train_counts(self) -> np.ndarray:
        return np.diff(self._train_ptr)

    def in_train(self, users, items) -> np.ndarray:
        """Vectorised membership test of (user, item) pairs in the train set."""
        return _member(self._train_codes, users, items, self.num_items)

    def in_test(self, users, items) -> np.ndarray:
        return _member(self._test_codes, users, items, self.num_items)


def _member(codes_sorted, users, items, num_items) -> np.ndarray:
    codes = np.asarray(users, dtype=np.int64) * num_items + np.asarray(items, dtype=np.int64)
    if len(codes_sorted) == 0:
        return np.zeros(codes.shape, dtype=bool)
    pos = np.minimum(np.searchsorted(codes_sorted, codes), len(codes_sorted) - 1)
    return codes_sorted[pos] == codes


def _sorted_pairs(pairs) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return np.ascontiguousarray(pairs[order])


def _index(pairs: np.ndarray, num_users: int):
    counts = np.bincount(pairs[:, 0], minlength=num_users) if len(pairs) else np.zeros(num_users, np.int64)
    ptr = np.zeros(num_users + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, pairs[:, 1].copy()


def ingest(source, layout: FieldLayout = FieldLayout()) -> list:
    """Parse ``user item [rating] [timestamp]`` lines into deduplicated records.

    ``source`` may be raw bytes, a binary/text stream or a path.
    The first occurrence of a (user, item) pair wins.
    """
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    else:
        with open(source, "rb") as fh:
            data = fh.read()

    records = []
    seen = set()
    for lineno, raw in enumerate(io.BytesIO(data), start=1):
        line = raw.decode("utf-8").strip()
        if not line or line.startswith(layout.comment):
            continue
        fields = line.split()
        needed = max(layout.user_col, layout.item_col) + 1
        if len(fields) < needed:
            raise DataError(f"line {lineno}: expected at least {needed} fields, got {len(fields)}")
        weight = timestamp = None
        try:
            if layout.weight_col is not None and len(fields) > layout.weight_col:
                weight = float(fields[layout.weight_col])
            if layout.timestamp_col is not None and len(fields) > layout.timestamp_col:
                timestamp = int(float(fields[layout.timestamp_col]))
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if weight is not None and not weight > layout.threshold:
            continue
        key = (fields[layout.user_col], fields[layout.item_col])
        if key in seen:
            continue
        seen.add(key)
        records.append(RawRecord(key[0], key[1], weight, timestamp))
    if not records:
        raise DataError("no interactions found in input")
    return records


def _n_train(n: int, ratio: float) -> int:
    if n <= 1:
        return n
    return min(n, max(1, int(math.floor(ratio * n + 0.5))))


def build_split(records: Sequence[RawRecord], cfg: SplitConfig = SplitConfig()) -> InteractionSet:
    """Assign dense ids (order of first appearance) and split the pairs.

    Per-user mode shuffles each user's pairs and keeps ``round(ratio * n)`` of
    them (at least one) for training. Global mode shuffles all pairs once and
    then moves one pair back to train for any user left without training data.
    """
    if not records:
        raise DataError("cannot split an empty record set")
    user_ids: dict = {}
    item_ids: dict = {}
    pairs = []
    seen = set()
    for rec in records:
        u = user_ids.setdefault(rec.user_key, len(user_ids))
        i = item_ids.setdefault(rec.item_key, len(item_ids))
        if (u, i) in seen:
            continue
        seen.add((u, i))
        pairs.append((u, i))
    pairs = np.asarray(pairs, dtype=np.int64)
    M, N = len(user_ids), len(item_ids)
    rng = np.random.default_rng(cfg.seed)

    by_user = [[] for _ in range(M)]
    for u, i in pairs:
        by_user[u].append(i)

    train, test = [], []
    if cfg.per_user:
        for u in range(M):
            items = np.asarray(by_user[u], dtype=np.int64)
            items = items[rng.permutation(len(items))]
            k = _n_train(len(items), cfg.split_ratio)
            train.extend((u, i) for i in items[:k])
            test.extend((u, i) for i in items[k:])
    else:
        perm = rng.permutation(len(pairs))
        k = int(math.floor(cfg.split_ratio * len(pairs) + 0.5))
        is_train = np.zeros(len(pairs), dtype=bool)
        is_train[perm[:k]] = True
        has_train = np.zeros(M, dtype=bool)
        has_train[pairs[is_train, 0]] = True
        # repair users that ended up with test pairs only
        for idx in perm[k:]:
            u = pairs[idx, 0]
            if not has_train[u]:
                is_train[idx] = True
                has_train[u] = True
        train = pairs[is_train]
        test = pairs[~is_train]

    return InteractionSet(
        num_users=M,
        num_items=N,
        train_pairs=np.asarray(train, dtype=np.int64).reshape(-1, 2),
        test_pairs=np.asarray(test, dtype=np.int64).reshape(-1, 2),
        user_keys=list(user_ids),
        item_keys=list(item_ids),
    )


class SamplingError(RuntimeError):
    pass


def _eligible_users(data: InteractionSet) -> np.ndarray:
    counts = data.train_counts()
    eligible = np.flatnonzero((counts > 0) & (counts < data.num_items))
    if len(eligible) == 0:
        raise SamplingError("every user with training data has interacted with all items; no negatives exist")
    return eligible


def sample_triplet(data: InteractionSet, rng: np.random.Generator):
    """Draw one (u, i, j): uniform user, uniform positive, uniform non-train negative."""
    counts = data.train_counts()
    users = np.flatnonzero(counts > 0)
    if len(users) == 0:
        raise SamplingError("no user has training interactions")
    saturated = 0
    while True:
        u = int(users[rng.integers(len(users))])
        pos = data.train_items(u)
        if len(pos) >= data.num_items:
            saturated += 1
            if saturated > 10 * len(users):
                _eligible_users(data)  # raises if truly saturated
            continue
        i = int(pos[rng.integers(len(pos))])
        while True:
            j = int(rng.integers(data.num_items))
            if not data.in_train(u, j):
                return u, i, j


def sample_triplets(data: InteractionSet, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised version of :func:`sample_triplet`, returning an (n, 3) array.

    Saturated users are excluded from the user pool up front, which has the
    same distribution as rejecting and resampling them.
    """
    eligible = _eligible_users(data)
    counts = data.train_counts()
    u = eligible[rng.integers(len(eligible), size=n)]
    offs = (rng.random(n) * counts[u]).astype(np.int64)
    i = data._train_items[data._train_ptr[u] + offs]
    j = rng.integers(data.num_items, size=n)
    bad = np.flatnonzero(data.in_train(u, j))
    while len(bad):
        j[bad] = rng.integers(data.num_items, size=len(bad))
        bad = bad[data.in_train(u[bad], j[bad])]
    return np.stack([u, i, j], axis=1)


def write_split(data: InteractionSet, out_dir) -> None:
    """Write ``train.tsv``, ``test.tsv`` (internal ids) and ``idmap.tsv``."""
    os.makedirs(out_dir, exist_ok=True)
    for name, pairs in (("train.tsv", data.train_pairs), ("test.tsv", data.test_pairs)):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{u}\t{i}\n" for u, i in pairs)
    user_keys = data.user_keys or [str(u) for u in range(data.num_users)]
    item_keys = data.item_keys or [str(i) for i in range(data.num_items)]
    with open(os.path.join(out_dir, "idmap.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{n}\t{k}\tuser\n" for n, k in enumerate(user_keys))
        fh.writelines(f"{n}\t{k}\titem\n" for n, k in enumerate(item_keys))


def _read_pairs(path) -> np.ndarray:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            try:
                pairs.append((int(fields[0]), int(fields[1])))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: expected two integer ids") from None
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def read_idmap(path):
    users, items = {}, {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3 or fields[2] not in ("user", "item"):
                raise DataError(f"{path}:{lineno}: malformed idmap line")
            (users if fields[2] == "user" else items)[int(fields[0])] = fields[1]
    return [users[k] for k in sorted(users)], [items[k] for k in sorted(items)]


def read_split(train_path, test_path=None, idmap_path=None) -> InteractionSet:
    """Load split files written by :func:`write_split`.

    Counts come from ``idmap.tsv`` (looked up next to the train file when not
    given); without one they are inferred as max id + 1.
    """
    train = _read_pairs(train_path)
    test = _read_pairs(test_path) if test_path else np.zeros((0, 2), dtype=np.int64)
    if idmap_path is None:
        candidate = os.path.join(os.path.dirname(os.path.abspath(train_path)), "idmap.tsv")
        idmap_path = candidate if os.path.exists(candidate) else None
    user_keys: list = []
    item_keys: list = []
    both = np.concatenate([train, test])
    if idmap_path:
        user_keys, item_keys = read_idmap(idmap_path)
        M, N = len(user_keys), len(item_keys)
    else:
        if len(both) == 0:
            raise DataError("empty split files and no idmap")
        M, N = int(both[:, 0].max()) + 1, int(both[:, 1].max()) + 1
    overlap = np.intersect1d(train[:, 0] * max(N, 1) + train[:, 1], test[:, 0] * max(N, 1) + test[:, 1])
    if len(overlap):
        raise DataError(f"{len(overlap)} pairs appear in both train and test")
    return InteractionSet(M, N, train, test, user_keys, item_keys)


def from_pairs(train: Iterable, test: Iterable = (), num_users=None, num_items=None) -> InteractionSet:
    """Build an InteractionSet directly from internal-id pairs."""
    train = np.asarray(list(train), dtype=np.int64).reshape(-1, 2)
    test = np.asarray(list(test), dtype=np.int64).reshape(-1, 2)
    both = np.concatenate([train, test])
    M = num_users if num_users is not None else int(both[:, 0].max()) + 1
    N = num_items if num_items is not None else int(both[:, 1].max()) + 1
    return InteractionSet(M, N, train, test)
