import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gaussplit.casestudy import (
    ClusterExperiment,
    ar1_kalman_loglik,
    block_truth,
    cov_to_corr,
    estimate_delta_rho,
    estimate_rho,
    hier_cluster,
    moment_delta,
    repair_pd,
    run_cluster_experiment,
    select_clusters,
    validate_clusters,
    zero_between,
)
from gaussplit.inference import MatrixNormalModel, sample_rowcov, split_matrix
from gaussplit.laws import fast_log_density_pair
from gaussplit.linalg import AR1, Dense, Kronecker, ar1_matrix


def test_moment_delta_limit_and_floor():
    S = np.array([[2.0, 0.6], [0.6, 0.5]])
    np.testing.assert_allclose(moment_delta(S, 1.0), cov_to_corr(S), atol=1e-14)
    # S - (1 - q1^2) I has a negative eigenvalue here
    S = np.array([[1.0, 0.9], [0.9, 1.0]])
    q1 = 0.5
    D = moment_delta(S, q1)
    raw = (S - 0.75 * np.eye(2)) / 0.25
    w, V = np.linalg.eigh(raw)
    assert w[0] < 0
    ref = (V * np.where(w < 0, 0.1, w)) @ V.T
    np.testing.assert_allclose(D, cov_to_corr(ref), atol=1e-14)
    np.testing.assert_allclose(np.diag(D), 1.0)


def test_fold_one_moment_identity():
    # E[S] = q1^2 Delta + (1 - q1^2) I for the fold-1 sample row covariance
    rng = np.random.default_rng(0)
    Delta = block_truth((2, 1), 0.7)
    q1, b, reps = 0.8, 40, 400
    acc = np.zeros((3, 3))
    for _ in range(reps):
        X1, _ = split_matrix(MatrixNormalModel(Delta, 0.3, b).sample(rng), q1, rng)
        acc += sample_rowcov(X1)
    np.testing.assert_allclose(acc / reps, q1 ** 2 * Delta + (1 - q1 ** 2) * np.eye(3), atol=0.03)


def test_block_recovery_large_b():
    rng = np.random.default_rng(1)
    Delta = block_truth((3, 3), 0.8)
    q1 = 0.5 ** 0.25
    X1, _ = split_matrix(MatrixNormalModel(Delta, 0.2, 4000).sample(rng), q1, rng)
    D, rho = estimate_delta_rho(X1, q1, 6, 4000)
    np.testing.assert_allclose(D, Delta, atol=0.08)


@pytest.mark.parametrize("innovation_var", [1.0, 0.3])
@pytest.mark.parametrize("rho", [-0.4, 0.0, 0.7, 0.95])
def test_kalman_matches_dense_gaussian(rho, innovation_var):
    rng = np.random.default_rng(2)
    a, b, ev = 3, 9, 0.4
    Y = rng.standard_normal((a, b))
    cov = innovation_var / (1 - rho ** 2) * ar1_matrix(rho, b) + ev * np.eye(b)
    ref = stats.multivariate_normal(np.zeros(b), cov).logpdf(Y).sum()
    assert ar1_kalman_loglik(Y, rho, ev, innovation_var) == pytest.approx(ref, abs=1e-9)


def test_estimate_rho_consistency():
    rng = np.random.default_rng(3)
    q1 = 0.8
    X1, _ = split_matrix(MatrixNormalModel(np.eye(10), 0.6, 400).sample(rng), q1, rng)
    assert abs(estimate_rho(X1, q1, "stationary") - 0.6) < 0.05
    with pytest.raises(ValueError):
        estimate_rho(X1, q1, "bogus")


def test_hier_cluster_cases():
    path = hier_cluster(block_truth((2, 3), 0.9))
    assert path.clusters(1) == [[0, 1, 2, 3, 4]]
    assert path.clusters(2) == [[0, 1], [2, 3, 4]]
    assert path.clusters(5) == [[0], [1], [2], [3], [4]]
    ident = hier_cluster(np.eye(4))
    assert all(len(ident.clusters(h)) == h for h in range(1, 5))
    assert hier_cluster(np.eye(1)).clusters(1) == [[0]]


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1))
def test_cluster_path_nested(a, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((a, a + 2))
    path = hier_cluster(cov_to_corr(A @ A.T))
    for h in range(1, a):
        coarse, fine = path.assignments[h], path.assignments[h + 1]
        assert len(np.unique(fine)) == h + 1
        # each fine cluster sits inside one coarse cluster
        for k in np.unique(fine):
            assert len(np.unique(coarse[fine == k])) == 1


def test_zero_between_exact():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((5, 7))
    D = cov_to_corr(A @ A.T)
    lab = np.array([0, 1, 0, 2, 1])
    Z = zero_between(D, lab)
    for i in range(5):
        for j in range(5):
            assert Z[i, j] == (D[i, j] if lab[i] == lab[j] else 0.0)


def test_repair_pd():
    D = np.eye(3)
    assert repair_pd(D) == (D, 0.0)
    bad = np.array([[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]])
    fixed, change = repair_pd(bad)
    assert np.linalg.eigvalsh(fixed).min() > 0
    np.testing.assert_allclose(np.diag(fixed), 1.0)
    assert change == pytest.approx(np.linalg.norm(fixed - bad))
    assert change > 0.1 * np.linalg.norm(bad)


def _example(seed, a=6, b=50):
    rng = np.random.default_rng(seed)
    q1 = 0.5 ** 0.25
    X1, X2 = split_matrix(MatrixNormalModel(block_truth((3, 3), 0.8), 0.5, b).sample(rng), q1, rng)
    return X1, X2, q1


def test_singleton_level_is_independence():
    X1, X2, q1 = _example(5)
    a, b = X1.shape
    D, rho = estimate_delta_rho(X1, q1, a, b)
    curve = select_clusters(hier_cluster(D), D, rho, X1, X2, q1, b)
    ref = fast_log_density_pair(X1.ravel(order="F"), X2.ravel(order="F"), np.zeros(a * b),
                                Kronecker(AR1(rho, b), Dense(np.eye(a))), 1.0, q1, math.sqrt(1 - q1 ** 2))[1]
    assert curve.cll[-1] == pytest.approx(ref, abs=1e-9)
    assert curve.h_hat == int(curve.h[np.argmax(curve.cll)])


def test_selection_invariant_to_relabeling():
    X1, X2, q1 = _example(6)
    perm = np.array([4, 1, 5, 0, 3, 2])
    r1 = validate_clusters(X1, X2, q1, 6, 50)
    r2 = validate_clusters(X1[perm], X2[perm], q1, 6, 50)
    assert r1.h_hat == r2.h_hat
    np.testing.assert_allclose(r1.curve.cll, r2.curve.cll, atol=1e-8)
    c1 = sorted(sorted(int(perm[i]) for i in c) for c in r2.path.clusters(r2.h_hat))
    assert c1 == sorted(sorted(c) for c in r1.path.clusters(r1.h_hat))


def test_small_experiment():
    cfg = ClusterExperiment(sizes=(3, 3), replicates=10, seed=2, b=50)
    rows = run_cluster_experiment(cfg)
    assert [r["replicate"] for r in rows] == list(range(10))
    assert sum(r["h_hat"] == 2 for r in rows) >= 7
    assert rows == run_cluster_experiment(cfg)
    with pytest.raises(ValueError):
        ClusterExperiment(innovation="other")
