import numpy as np
import pytest

from gaussplit.decompose import general_decompose, make_plan_dependent, make_plan_identity, make_plan_thinning
from gaussplit.gp import (
    Matern32,
    SquaredExponential,
    UserKernel,
    WhiteNoise,
    gp_conditional,
    gp_decompose,
    gp_fold_marginal,
    gp_joint,
    kernel_from_dict,
)
from gaussplit.laws import conditional_law, fold_marginal, joint_law, log_density
from gaussplit.linalg import CovarianceError, Dense


def se_gram(T, var, ell):
    # oracle: explicit double loop
    T = np.atleast_2d(np.asarray(T, float).T).T
    d = len(T)
    G = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            G[i, j] = var * np.exp(-0.5 * np.sum((T[i] - T[j]) ** 2) / ell ** 2)
    return G


def random_kernel(rng):
    if rng.random() < 0.5:
        return SquaredExponential(rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0))
    return Matern32(rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0))


def test_kernel_grams():
    T = np.array([0.0, 0.5, 2.0])
    np.testing.assert_allclose(SquaredExponential(1.5, 0.7).gram(T), se_gram(T, 1.5, 0.7), atol=1e-14)
    r = np.sqrt(3) * 0.5 / 0.8
    assert Matern32(2.0, 0.8).gram(T)[0, 1] == pytest.approx(2.0 * (1 + r) * np.exp(-r))
    np.testing.assert_array_equal(WhiteNoise(0.3).gram(T), 0.3 * np.eye(3))
    user = UserKernel(lambda a, b: float(np.exp(-abs(a - b).sum())))
    assert user.gram(T)[0, 2] == pytest.approx(np.exp(-2.0))
    assert kernel_from_dict({"kind": "matern32", "variance": 2.0, "lengthscale": 0.8}) == Matern32(2.0, 0.8)
    with pytest.raises(ValueError):
        kernel_from_dict({"kind": "cosine"})


def test_identity_plan_returns_values():
    x = np.array([1.0, 2.0, 3.0])
    g = gp_decompose(x, [0.0, 1.0, 2.0], make_plan_identity(1), WhiteNoise(1.0), seed=0)
    np.testing.assert_array_equal(g.folds, x[None, :])


def test_duplicate_points_rejected():
    with pytest.raises(CovarianceError):
        gp_decompose([1.0, 2.0], [0.5, 0.5], make_plan_thinning([0.5, 0.5]), WhiteNoise(1.0), seed=0)


def test_reconstruction_and_reduction():
    rng = np.random.default_rng(0)
    T = rng.uniform(0, 3, (6, 2))
    x = rng.standard_normal(6)
    plan = make_plan_dependent(1, 3, np.array([0.6, 0.0, 0.8]))
    kern = SquaredExponential(1.0, 0.5)
    g = gp_decompose(x, T, plan, kern, seed=11)
    np.testing.assert_allclose(g.reconstruct(), x, atol=1e-12)
    np.testing.assert_allclose(plan.Q.T @ g.folds, np.vstack([x, (plan.Q.T @ g.folds)[1:]]), atol=1e-12)
    # finite-dimensional reduction: same seed, Gram as noise covariance
    fs = general_decompose(x, plan, Dense(kern.gram(T)), seed=11)
    np.testing.assert_allclose(g.folds, np.vstack(fs.folds), atol=1e-14)


def test_known_kernel_thinning_independent_folds():
    rng = np.random.default_rng(1)
    T = np.array([0.0, 0.4, 1.0])
    kern = Matern32(1.0, 0.6)
    G = kern.gram(T)
    L = np.linalg.cholesky(G)
    mu = np.array([1.0, 0.5, -1.0])
    plan = make_plan_thinning([0.25, 0.75])
    reps = 10_000
    F1 = np.empty((reps, 3))
    F2 = np.empty((reps, 3))
    for i in range(reps):
        g = gp_decompose(mu + L @ rng.standard_normal(3), T, plan, kern, seed=rng)
        F1[i], F2[i] = g.folds
    se = np.sqrt(np.diag(G) / reps)
    assert np.all(np.abs(F1.mean(0) - 0.5 * mu) < 4 * se)
    assert np.all(np.abs(F2.mean(0) - np.sqrt(0.75) * mu) < 4 * se)
    cross = (F1 - F1.mean(0)).T @ (F2 - F2.mean(0)) / reps
    assert np.all(np.abs(cross) < 4 * np.sqrt(np.outer(np.diag(G), np.diag(G)) / reps))
    np.testing.assert_allclose(np.cov(F1.T), G, atol=0.06)


def test_fold_marginal_examples():
    T = np.linspace(0, 1, 4)
    kern = SquaredExponential(1.2, 0.4)
    mu_fn = lambda t: np.sin(t[:, 0])
    plan1 = make_plan_identity(1)
    law = gp_fold_marginal(0, plan1, mu_fn, kern, WhiteNoise(1.0), T)
    np.testing.assert_allclose(law.cov.materialize(), se_gram(T, 1.2, 0.4), atol=1e-14)
    q1 = 0.5 ** 0.25
    plan = make_plan_dependent(1, 2, [q1, np.sqrt(1 - q1 ** 2)])
    law = gp_fold_marginal(0, plan, mu_fn, kern, WhiteNoise(0.5), T)
    np.testing.assert_allclose(law.cov.materialize(),
                               q1 ** 2 * se_gram(T, 1.2, 0.4) + (1 - q1 ** 2) * 0.5 * np.eye(4), atol=1e-14)
    np.testing.assert_allclose(law.mean, q1 * np.sin(T), atol=1e-15)


def test_conditional_equal_kernels_ignores_x1():
    T = np.array([0.0, 0.3, 0.9])
    kern = Matern32(1.0, 0.5)
    plan = make_plan_dependent(1, 2, [0.6, 0.8])
    a = gp_conditional([1.0, 2.0, 3.0], plan, None, kern, kern, T)
    b = gp_conditional([-5.0, 0.0, 9.0], plan, None, kern, kern, T)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.cov.materialize(), kern.gram(T), atol=1e-12)


def test_conditional_scalar_point():
    kern = SquaredExponential(2.0, 1.0)
    s = 1 / np.sqrt(2)
    plan = make_plan_dependent(1, 2, [s, s])
    law = gp_conditional([1.0], plan, None, kern, WhiteNoise(1.0), [0.7])
    np.testing.assert_allclose(law.mean, [1 / 3], atol=1e-14)
    np.testing.assert_allclose(law.cov.materialize(), [[4 / 3]], atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_gp_laws_match_finite_dimensional(seed):
    rng = np.random.default_rng(seed)
    T = rng.uniform(-2, 2, 5)
    C, Cp = random_kernel(rng), WhiteNoise(rng.uniform(0.3, 2.0))
    q1 = rng.uniform(0.2, 0.95)
    plan = make_plan_dependent(1, 2, [q1, np.sqrt(1 - q1 ** 2)])
    mu_fn = lambda t: t[:, 0] ** 2
    S, Sp, mu = C.gram(T), Cp.variance * np.eye(5), T ** 2
    joint = gp_joint(plan, mu_fn, C, Cp, T)
    x = joint.mean + np.linalg.cholesky(joint.cov.materialize()) @ rng.standard_normal(10)
    x1, x2 = x[:5], x[5:]
    cond = gp_conditional(x1, plan, mu_fn, C, Cp, T)
    ref = conditional_law(x1, plan.q_col()[0], plan.q_col()[1], mu, S, Sp)
    np.testing.assert_allclose(cond.mean, ref.mean, atol=1e-10)
    np.testing.assert_allclose(cond.cov.materialize(), ref.cov.materialize(), atol=1e-10)
    marg = gp_fold_marginal(1, plan, mu_fn, C, Cp, T)
    ref_m = fold_marginal(plan.q_col()[1], mu, S, Sp)
    np.testing.assert_allclose(marg.cov.materialize(), ref_m.cov.materialize(), atol=1e-10)
    factored = log_density(gp_fold_marginal(0, plan, mu_fn, C, Cp, T), x1) + log_density(cond, x2)
    assert abs(log_density(joint, x) - factored) < 1e-9
    np.testing.assert_allclose(joint.cov.materialize(), joint_law(plan.q_col(), mu, S, Sp).cov.materialize(),
                               atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_projective_consistency(seed):
    rng = np.random.default_rng(100 + seed)
    T = rng.uniform(0, 5, 6)
    sub = np.sort(rng.choice(6, 3, replace=False))
    C, Cp = random_kernel(rng), SquaredExponential(0.7, 0.3)
    plan = make_plan_dependent(1, 3, rng.dirichlet(np.ones(3)) ** 0.5)
    for k in range(3):
        full = gp_fold_marginal(k, plan, np.cos, C, Cp, T)
        direct = gp_fold_marginal(k, plan, np.cos, C, Cp, T[sub])
        np.testing.assert_allclose(full.mean[sub], direct.mean, atol=1e-10)
        np.testing.assert_allclose(full.cov.materialize()[np.ix_(sub, sub)], direct.cov.materialize(), atol=1e-10)
    J_full = gp_joint(plan, np.cos, C, Cp, T)
    J_sub = gp_joint(plan, np.cos, C, Cp, T[sub])
    idx = np.concatenate([k * 6 + sub for k in range(3)])
    np.testing.assert_allclose(J_full.cov.materialize()[np.ix_(idx, idx)], J_sub.cov.materialize(), atol=1e-10)


def test_conditional_needs_two_folds():
    plan = make_plan_dependent(1, 3, np.ones(3) / np.sqrt(3))
    with pytest.raises(Exception, match="K=2"):
        gp_conditional([0.0], plan, None, SquaredExponential(), WhiteNoise(), [0.0])
