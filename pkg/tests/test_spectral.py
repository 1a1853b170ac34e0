import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dense_normalized, graphs, random_graph
from hiergcn.graph import build_adjacency
from hiergcn.interactions import from_pairs
from hiergcn.spectral import (ConvergenceError, convergence_curve, dominant_eigenpair, limit_reference,
                              components, limit_vectors, numerical_rank, power_rank, rayleigh_range_check, row_cosines,
                              spectral_summary, write_convergence_csv, write_spectral_csv)
from hiergcn.synthetic import random_bipartite


def _connected(data):
    return components(build_adjacency(data))[0] == 1


def test_single_edge_eigenpair():
    lam, v = dominant_eigenpair(build_adjacency(from_pairs([(0, 0)])))
    assert abs(lam - 1) <= 1e-12 and np.allclose(v, [2 ** -0.5] * 2, atol=1e-12)


@given(graphs())
@settings(max_examples=40, deadline=None)
def test_eigenvector_is_sqrt_degree(data):
    adj = build_adjacency(data)
    lam, v = dominant_eigenpair(adj)
    assert abs(lam - 1) <= 1e-8
    assert np.linalg.norm(adj.matrix @ v - lam * v) <= 1e-10
    if _connected(data):
        s = np.sqrt(adj.degrees)
        assert abs(v @ s) / np.linalg.norm(s) >= 1 - 1e-8


def test_two_disconnected_edges():
    adj = build_adjacency(from_pairs([(0, 0), (1, 1)]))
    lam, v = dominant_eigenpair(adj)
    assert abs(lam - 1) <= 1e-12 and np.linalg.norm(adj.matrix @ v - v) <= 1e-10
    assert limit_vectors(adj).shape == (4, 2)


def test_non_convergence_reports_residual():
    adj = build_adjacency(from_pairs([(0, i) for i in range(5)] + [(1, 0)]))
    with pytest.raises(ConvergenceError) as err:
        dominant_eigenpair(adj, tol=1e-14, max_iter=1)
    assert err.value.residual > 0


def test_limit_reference_connected_is_rank_one_outer_product():
    data = random_bipartite(6, 7, 20, seed=1)
    adj = build_adjacency(data)
    s = np.sqrt(adj.degrees)
    R = limit_reference(adj)
    assert np.allclose(R, np.outer(s, s) / (s @ s), atol=1e-15)
    assert numerical_rank(R) == 1


@given(graphs())
@settings(max_examples=40, deadline=None)
def test_limit_reference_rank_equals_components(data):
    adj = build_adjacency(data)
    c = components(adj)[0]
    R = limit_reference(adj)
    assert numerical_rank(R) == c
    assert np.allclose(R @ R, R, atol=1e-12)
    # spectral projector onto eigenvalue 1 computed by a dense eigensolver
    lam, V = np.linalg.eigh(dense_normalized(data))
    top = V[:, np.abs(lam - 1) < 1e-9]
    assert top.shape[1] == c
    assert np.abs(top @ top.T - R).max() < 1e-10


def test_single_node_reference():
    adj = build_adjacency(from_pairs([(0, 0)], num_users=2, num_items=1))
    R = limit_reference(adj)
    assert R[1, 1] == pytest.approx(1.0) and R[1, 0] == 0.0


def test_row_cosines_zero_rows():
    assert row_cosines(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [2.0, 0.0]])).tolist() == [0, 1]


def test_single_edge_curve_is_flat_at_one():
    adj = build_adjacency(from_pairs([(0, 0)]))
    c = convergence_curve(adj, 1.0, k_max=5)
    assert np.allclose(c.ratio_mean, 1.0, atol=1e-12) and c.n_trials == 1


def test_curve_monotone_at_p1():
    for seed in range(5):
        adj = build_adjacency(random_bipartite(15, 15, 60, seed=seed))
        c = convergence_curve(adj, 1.0, k_max=40)
        assert np.all(np.diff(c.ratio_mean) >= -1e-6)
        assert c.ratio_mean[-1] > 0.99


def test_probe_approximates_exact_identity():
    adj = build_adjacency(random_bipartite(40, 40, 200, seed=1))
    exact = convergence_curve(adj, 1.0, 10)
    probe = convergence_curve(adj, 1.0, 10, dense_limit=0, probe_cols=32)
    assert np.abs(exact.ratio_mean - probe.ratio_mean).max() < 0.1


def test_curve_validation_determinism_and_threads():
    adj = build_adjacency(random_bipartite(10, 10, 30, seed=0))
    for p in (0.0, 1.5):
        with pytest.raises(ValueError):
            convergence_curve(adj, p)
    with pytest.raises(ValueError):
        convergence_curve(adj, 0.5, k_max=0)
    a = convergence_curve(adj, 0.7, 8, n_trials=4, seed=3)
    b = convergence_curve(adj, 0.7, 8, n_trials=4, seed=3, threads=3)
    assert np.array_equal(a.ratio_mean, b.ratio_mean) and np.array_equal(a.ratio_min, b.ratio_min)
    assert np.all(np.abs(a.ratio_mean) <= 1 + 1e-12)
    assert a.points[0][0] == 1 and a.at(8) == a.ratio_mean[-1]


def test_dropout_slows_convergence_ordering():
    adj = build_adjacency(random_bipartite(60, 60, 300, seed=2))
    r = [convergence_curve(adj, p, 20, n_trials=10, seed=0).at(20) for p in (1.0, 0.9, 0.7, 0.5)]
    assert r[0] >= r[1] >= r[2] >= r[3]
    assert r[1] < 1.0


def test_rayleigh_single_edge_and_bounds():
    lo, hi = rayleigh_range_check(build_adjacency(from_pairs([(0, 0)])), 2000, seed=0)
    assert 0.0 <= lo and hi <= 1.0 + 1e-12
    with pytest.raises(ValueError):
        rayleigh_range_check(build_adjacency(from_pairs([(0, 0)])), 0)


def test_rayleigh_star_above_smallest_eigenvalue():
    star = from_pairs([(0, i) for i in range(5)])
    adj = build_adjacency(star)
    lo, hi = rayleigh_range_check(adj, 10_000, seed=1)
    ev = np.linalg.eigvalsh(adj.dense())
    assert lo >= ev[0] - 1e-12 and hi <= ev[-1] + 1e-12
    assert lo > -1 and hi <= 1 + 1e-10


@given(graphs())
@settings(max_examples=60, deadline=None)
def test_power_rank_matches_eigen_oracle(data):
    # A^k is symmetric, so its singular values are |lambda_i|^k
    adj = build_adjacency(data)
    lam = np.abs(np.linalg.eigvalsh(adj.dense()))
    expect = int(np.sum(lam ** 50 > 1e-8 * lam.max() ** 50))
    assert power_rank(adj, 50) == expect


@given(graphs())
@settings(max_examples=60, deadline=None)
def test_power_rank_reaches_component_count(data):
    adj = build_adjacency(data)
    n_comp = components(adj)[0]
    lam = np.sort(np.abs(np.linalg.eigvalsh(adj.dense())))[::-1]
    assert power_rank(adj, 50) >= n_comp
    if n_comp < len(lam) and lam[n_comp] > 1e-3:
        # first power at which every non-unit mode sits below the rank threshold
        k = int(np.ceil(np.log(1e-9) / np.log(lam[n_comp])))
        if k <= 2000:
            assert power_rank(adj, k) == n_comp


def test_raw_adjacency_analysis_warns():
    adj = build_adjacency(from_pairs([(0, 0), (0, 1), (1, 1)]), self_loops=False)
    with pytest.warns(RuntimeWarning):
        convergence_curve(adj, 1.0, 3)


def test_summary_and_csv(tmp_path):
    adj = build_adjacency(random_bipartite(8, 8, 20, seed=0))
    s = spectral_summary(adj, 500)
    assert abs(s.lambda_max - 1) <= 1e-8 and s.residual <= 1e-10 and s.n_components == 1
    assert -1 < s.rayleigh_min <= s.rayleigh_max <= 1 + 1e-10
    write_spectral_csv(s, tmp_path / "spectral.csv")
    assert (tmp_path / "spectral.csv").read_text().splitlines()[0] == \
        "lambda_max,residual,n_components,rayleigh_min,rayleigh_max"
    curves = [convergence_curve(adj, p, 3, n_trials=2) for p in (1.0, 0.5)]
    write_convergence_csv(curves, tmp_path / "convergence.csv")
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines[0] == "p,k,ratio_mean,ratio_min,trials" and len(lines) == 7
    assert lines[1].startswith("1.0,1,") and lines[-1].endswith(",2")


def test_random_bipartite_shape():
    data = random_bipartite(250, 250, 3000, seed=0, zipf=0.8)
    assert len(data.train_pairs) == 3000 and _connected(data)
    with pytest.raises(ValueError):
        random_bipartite(2, 2, 5)
