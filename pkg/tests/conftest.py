import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from hiergcn.interactions import from_pairs

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ML100K = os.path.join(ROOT, "data", "ml-100k.tsv")


def random_graph(rng, max_nodes=30, density=None):
    """Random bipartite InteractionSet with at most ``max_nodes`` nodes; may be disconnected."""
    M = int(rng.integers(1, max_nodes - 1))
    N = int(rng.integers(1, max_nodes - M + 1))
    dens = rng.uniform(0.05, 0.6) if density is None else density
    R = rng.random((M, N)) < dens
    R[0, 0] = True  # at least one edge
    return from_pairs(np.argwhere(R), num_users=M, num_items=N)


def dense_normalized(data, self_loops=True):
    """Independent dense D~^-1/2 (A + I) D~^-1/2 built from the pair list."""
    M, N = data.num_users, data.num_items
    A = np.zeros((M + N, M + N))
    for u, i in data.train_pairs:
        A[u, M + i] = A[M + i, u] = 1.0
    if self_loops:
        A += np.eye(M + N)
    deg = A.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    return inv[:, None] * A * inv[None, :]


@st.composite
def graphs(draw, max_nodes=30):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_graph(np.random.default_rng(seed), max_nodes)


@pytest.fixture(scope="session")
def ml100k_path():
    """MovieLens-100k as `user item rating timestamp`; extracted on first use."""
    if not os.path.exists(ML100K):
        script = os.path.join(ROOT, "scripts", "fetch_ml100k.py")
        subprocess.run([sys.executable, script], check=False)
    if not os.path.exists(ML100K):
        pytest.fail(f"{ML100K} missing and could not be fetched; run scripts/fetch_ml100k.py")
    return ML100K


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
