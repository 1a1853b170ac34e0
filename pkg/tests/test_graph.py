import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dense_normalized, graphs, random_graph
from hiergcn.graph import (EdgeMask, build_adjacency, dump_adjacency, full_mask, masked_matrix, masked_spmm,
                           masked_spmm_transpose, sample_mask, warn_if_raw)
from hiergcn.interactions import from_pairs


def _dense_masked(adj, mask):
    """Dense oracle for a masked operator, assembled entry by entry."""
    D = np.zeros((adj.n_nodes, adj.n_nodes))
    for pos, (r, c) in enumerate(zip(adj.rows, adj.indices)):
        if mask.kept[pos]:
            D[r, c] = adj.values[pos]
    return D


def test_single_edge_hand_values():
    adj = build_adjacency(from_pairs([(0, 0)]))
    assert np.array_equal(adj.dense(), np.full((2, 2), 0.5))
    assert adj.degrees.tolist() == [2.0, 2.0]


def test_one_user_two_items_hand_values():
    A = build_adjacency(from_pairs([(0, 0), (0, 1)])).dense()
    assert A[0, 0] == pytest.approx(1 / 3, abs=1e-15)
    assert A[0, 1] == A[1, 0] == A[0, 2] == pytest.approx(1 / np.sqrt(6), abs=1e-15)
    assert A[1, 1] == A[2, 2] == 0.5
    assert A[1, 2] == 0.0


def test_isolated_node_row_is_unit_diagonal():
    adj = build_adjacency(from_pairs([(0, 0)], num_users=2, num_items=1))
    row = slice(adj.indptr[1], adj.indptr[2])
    assert adj.indices[row].tolist() == [1] and adj.values[row].tolist() == [1.0]


def test_test_pairs_never_enter_default_graph():
    s = from_pairs([(0, 0)], test=[(0, 1)], num_users=1, num_items=2)
    assert build_adjacency(s).dense()[0, 2] == 0.0
    assert build_adjacency(s, source="all").dense()[0, 2] > 0.0
    with pytest.raises(ValueError):
        build_adjacency(s, source="bogus")


@given(graphs())
@settings(max_examples=100, deadline=None)
def test_structure_invariants(data):
    adj = build_adjacency(data)
    A = adj.dense()
    assert np.array_equal(A, A.T)  # bit-identical
    assert np.abs(A - dense_normalized(data)).max() <= 1e-15
    for r in range(adj.n_nodes):
        cols = adj.indices[adj.indptr[r]:adj.indptr[r + 1]]
        assert np.all(np.diff(cols) > 0)
    assert np.array_equal(np.diag(A), 1.0 / adj.degrees)
    # pattern = bipartite edges plus the diagonal
    M = data.num_users
    expect = np.eye(adj.n_nodes, dtype=bool)
    for u, i in data.train_pairs:
        expect[u, M + i] = expect[M + i, u] = True
    assert np.array_equal(A != 0, expect)
    assert np.array_equal(adj.values[adj.mirror], adj.values)


@given(graphs())
@settings(max_examples=50, deadline=None)
def test_dominant_eigenvector_fixed_point(data):
    adj = build_adjacency(data)
    s = np.sqrt(adj.degrees)
    assert np.abs(adj.matrix @ s - s).max() <= 1e-10


@given(graphs(), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_rayleigh_quotients_in_range(data, seed):
    adj = build_adjacency(data)
    V = np.random.default_rng(seed).standard_normal((adj.n_nodes, 200))
    V /= np.linalg.norm(V, axis=0)
    q = np.einsum("ij,ij->j", V, adj.matrix @ V)
    assert q.min() > -1.0 and q.max() <= 1.0 + 1e-12


def test_mask_validation_and_identity():
    adj = build_adjacency(from_pairs([(0, 0), (1, 1), (0, 1)]))
    rng = np.random.default_rng(0)
    for p in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            sample_mask(adj, p, rng)
    m = sample_mask(adj, 1.0, rng)
    assert m.kept.all() and len(m.kept) == adj.nnz
    X = rng.standard_normal((adj.n_nodes, 3))
    assert np.array_equal(masked_spmm(adj, m, X), masked_spmm(adj, None, X))


def test_mask_keep_rate():
    adj = build_adjacency(from_pairs([(0, 0), (0, 1), (1, 1)]))
    rng = np.random.default_rng(1)
    rate = np.mean([sample_mask(adj, 0.5, rng).kept for _ in range(100_000)], axis=0)
    assert np.all(np.abs(rate - 0.5) <= 0.01)


def test_mask_determinism_and_asymmetry():
    adj = build_adjacency(random_graph(np.random.default_rng(4), 30, 0.5))
    a = sample_mask(adj, 0.7, np.random.default_rng(9))
    b = sample_mask(adj, 0.7, np.random.default_rng(9))
    assert np.array_equal(a.kept, b.kept)
    # independent draws: some (a,b) kept while (b,a) dropped
    assert (a.kept != a.kept[adj.mirror]).any()


def test_symmetric_and_self_loop_options():
    adj = build_adjacency(random_graph(np.random.default_rng(4), 30, 0.5))
    m = sample_mask(adj, 0.5, np.random.default_rng(2), preserve_self_loops=True, symmetric=True)
    assert np.array_equal(m.kept, m.kept[adj.mirror])
    assert m.kept[adj.diagonal_positions].all()
    D = _dense_masked(adj, m)
    assert np.array_equal(D, D.T)


def test_masked_spmm_two_node_example():
    adj = build_adjacency(from_pairs([(0, 0)]))
    assert masked_spmm(adj, None, np.array([[1.0], [0.0]])).tolist() == [[0.5], [0.5]]


def test_empty_mask_gives_zero():
    adj = build_adjacency(random_graph(np.random.default_rng(0), 20))
    m = EdgeMask(0.5, np.zeros(adj.nnz, dtype=bool))
    X = np.ones((adj.n_nodes, 4))
    assert not masked_spmm(adj, m, X).any() and not masked_spmm_transpose(adj, m, X).any()


def test_dimension_mismatch():
    adj = build_adjacency(from_pairs([(0, 0)]))
    with pytest.raises(ValueError):
        masked_spmm(adj, None, np.ones((3, 2)))
    with pytest.raises(ValueError):
        masked_spmm_transpose(adj, None, np.ones((1, 2)))
    with pytest.raises(ValueError):
        masked_matrix(adj, EdgeMask(0.5, np.ones(adj.nnz + 1, dtype=bool)))


def test_twenty_node_unmasked_matches_dense_oracle():
    rng = np.random.default_rng(20)
    data = random_graph(rng, 20)
    X = rng.standard_normal((data.n_nodes, 5))
    assert np.abs(masked_spmm(build_adjacency(data), None, X) - dense_normalized(data) @ X).max() <= 1e-12


@given(graphs(), st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
@settings(max_examples=100, deadline=None)
def test_masked_products_match_dense_and_are_adjoint(data, seed, p):
    adj = build_adjacency(data)
    rng = np.random.default_rng(seed)
    m = sample_mask(adj, p, rng)
    X = rng.standard_normal((adj.n_nodes, 3))
    G = rng.standard_normal((adj.n_nodes, 3))
    D = _dense_masked(adj, m)
    AX = masked_spmm(adj, m, X)
    ATG = masked_spmm_transpose(adj, m, G)
    assert np.abs(AX - D @ X).max() <= 1e-12
    assert np.abs(ATG - D.T @ G).max() <= 1e-12
    assert abs(np.vdot(AX, G) - np.vdot(X, ATG)) <= 1e-12 * max(1.0, abs(np.vdot(AX, G)))


def test_transpose_all_ones_equals_forward():
    rng = np.random.default_rng(8)
    adj = build_adjacency(random_graph(rng, 25))
    G = rng.standard_normal((adj.n_nodes, 4))
    assert np.allclose(masked_spmm_transpose(adj, full_mask(adj), G), masked_spmm(adj, None, G), atol=1e-15)


def test_transpose_single_kept_entry():
    adj = build_adjacency(from_pairs([(0, 0), (0, 1), (1, 1)]))
    kept = np.zeros(adj.nnz, dtype=bool)
    pos = int(np.flatnonzero(adj.rows != adj.indices)[0])
    kept[pos] = True
    out = masked_spmm_transpose(adj, EdgeMask(0.5, kept), np.ones((adj.n_nodes, 2)))
    nz = np.flatnonzero(np.abs(out).sum(axis=1))
    assert nz.tolist() == [adj.indices[pos]]


def test_float32_fast_path_close():
    rng = np.random.default_rng(3)
    adj = build_adjacency(random_graph(rng, 30))
    X = rng.standard_normal((adj.n_nodes, 4))
    lo = masked_spmm(adj.astype(np.float32), None, X.astype(np.float32))
    assert lo.dtype == np.float32
    assert np.abs(lo - masked_spmm(adj, None, X)).max() < 1e-5


def test_dump_adjacency(tmp_path):
    adj = build_adjacency(from_pairs([(0, 0), (0, 1)]))
    dump_adjacency(adj, tmp_path / "adjacency.tsv")
    rows = [line.split("\t") for line in (tmp_path / "adjacency.tsv").read_text().splitlines()]
    assert len(rows) == adj.nnz
    assert all(float(v) == adj.dense()[int(r), int(c)] for r, c, v in rows)


def test_raw_adjacency_warns():
    adj = build_adjacency(from_pairs([(0, 0)]), self_loops=False)
    assert adj.dense().tolist() == [[0.0, 1.0], [1.0, 0.0]]
    with pytest.warns(RuntimeWarning):
        warn_if_raw(adj)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        warn_if_raw(build_adjacency(from_pairs([(0, 0)])))
