"""Decomposition of a Gaussian process observed on a finite index set.

A noise process is realized only at the declared index points, where it is a
Gaussian vector with the Gram matrix of the noise covariance function. Every
law therefore reduces to the finite-dimensional one on Gram matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from .decompose import DecompositionError, FoldSet, OrthogonalPlan, general_decompose, reconstruct
from .laws import ConditionalLaw, GaussianLaw, condition_joint, fold_marginal, joint_law
from .linalg import CovarianceError, CovModel, Dense, Isotropic, SeedLike


def as_index_set(T: ArrayLike) -> NDArray:
    """Index points as a ``(d, dim)`` array."""
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if T.ndim != 2:
        raise ValueError("index set must be a vector or a (d, dim) array")
    return T


def _has_duplicates(T: NDArray) -> bool:
    return np.unique(T, axis=0).shape[0] < T.shape[0]


class CovFunction:
    """Covariance function ``C(t, t')`` on points of ``R^dim``."""

    kind = "user"

    def __call__(self, T1: ArrayLike, T2: ArrayLike) -> NDArray:
        raise NotImplementedError

    def gram(self, T: ArrayLike) -> NDArray:
        T = as_index_set(T)
        G = self(T, T)
        return 0.5 * (G + G.T)

    def gram_model(self, T: ArrayLike) -> CovModel:
        """Gram matrix on ``T`` as a covariance model, checked for PD."""
        G = self.gram(T)
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(f"{self.kind} Gram matrix is not positive definite on this index set") from exc
        return Dense(G)

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class WhiteNoise(CovFunction):
    """``C'(t, t') = variance * 1{t = t'}``."""

    variance: float = 1.0
    kind = "white_noise"

    def __post_init__(self):
        if not self.variance > 0:
            raise CovarianceError("white-noise variance must be positive")

    def __call__(self, T1, T2):
        T1, T2 = as_index_set(T1), as_index_set(T2)
        return self.variance * (cdist(T1, T2) == 0).astype(float)

    def gram_model(self, T):
        T = as_index_set(T)
        if _has_duplicates(T):
            raise CovarianceError("white-noise Gram matrix is singular: index set has duplicate points")
        return Isotropic(self.variance, T.shape[0])

    def to_dict(self):
        return {"kind": self.kind, "variance": self.variance}


@dataclass(frozen=True)
class SquaredExponential(CovFunction):
    variance: float = 1.0
    lengthscale: float = 1.0
    kind = "squared_exponential"

    def __call__(self, T1, T2):
        r = cdist(as_index_set(T1), as_index_set(T2)) / self.lengthscale
        return self.variance * np.exp(-0.5 * r * r)

    def to_dict(self):
        return {"kind": self.kind, "variance": self.variance, "lengthscale": self.lengthscale}


@dataclass(frozen=True)
class Matern32(CovFunction):
    variance: float = 1.0
    lengthscale: float = 1.0
    kind = "matern32"

    def __call__(self, T1, T2):
        r = np.sqrt(3.0) * cdist(as_index_set(T1), as_index_set(T2)) / self.lengthscale
        return self.variance * (1.0 + r) * np.exp(-r)

    def to_dict(self):
        return {"kind": self.kind, "variance": self.variance, "lengthscale": self.lengthscale}


@dataclass(frozen=True)
class UserKernel(CovFunction):
    """Wraps ``fn(t, t')`` evaluated pointwise on rows of the index arrays."""

    fn: Callable[[NDArray, NDArray], float]
    kind = "user"

    def __call__(self, T1, T2):
        T1, T2 = as_index_set(T1), as_index_set(T2)
        return np.array([[self.fn(a, b) for b in T2] for a in T1], dtype=float)


KERNELS = {"white_noise": WhiteNoise, "squared_exponential": SquaredExponential, "matern32": Matern32}


def kernel_from_dict(d: dict) -> CovFunction:
    d = dict(d)
    kind = d.pop("kind")
    try:
        return KERNELS[kind](**d)
    except KeyError:
        raise ValueError(f"unknown kernel kind {kind!r}; choose from {sorted(KERNELS)}") from None


def _mean_on(mu_fn: Optional[Callable], T: NDArray) -> NDArray:
    if mu_fn is None:
        return np.zeros(T.shape[0])
    m = np.asarray(mu_fn(T), dtype=float).ravel()
    if m.size != T.shape[0]:
        raise ValueError("mean function must return one value per index point")
    return m


@dataclass(frozen=True, eq=False)
class GPFoldSet:
    index_set: NDArray
    foldset: FoldSet
    cprime: CovFunction

    @property
    def folds(self) -> NDArray:
        """``K x d`` array of fold values at the index points."""
        return np.vstack([f.reshape(1, -1) for f in self.foldset.folds])

    @property
    def plan(self) -> OrthogonalPlan:
        return self.foldset.plan

    def reconstruct(self) -> NDArray:
        return reconstruct(self.foldset)[0]


def _check_plan(plan: OrthogonalPlan) -> None:
    if plan.n != 1 or any(len(g) != 1 for g in plan.groups):
        raise DecompositionError("process decomposition needs a single-observation plan with one row per fold")


def gp_decompose(x_values: ArrayLike, T: ArrayLike, plan: OrthogonalPlan, Cprime: CovFunction,
                 seed: SeedLike = None) -> GPFoldSet:
    """Split one process observed at ``T`` into ``K = r + 1`` fold processes."""
    T = as_index_set(T)
    x = np.asarray(x_values, dtype=float).ravel()
    if x.size != T.shape[0]:
        raise ValueError(f"{x.size} values for {T.shape[0]} index points")
    _check_plan(plan)
    if _has_duplicates(T):
        raise CovarianceError("index set has duplicate points")
    fs = general_decompose(x[None, :], plan, Cprime.gram_model(T), seed=seed)
    return GPFoldSet(T, fs, Cprime)


def gp_joint(plan: OrthogonalPlan, mu_fn, C: CovFunction, Cprime: CovFunction, T: ArrayLike) -> GaussianLaw:
    """Joint law of all fold values at ``T``, folds stacked in order."""
    _check_plan(plan)
    T = as_index_set(T)
    return joint_law(plan.q_col(), _mean_on(mu_fn, T), C.gram_model(T), Cprime.gram_model(T))


def gp_fold_marginal(k: int, plan: OrthogonalPlan, mu_fn, C: CovFunction, Cprime: CovFunction,
                     T: ArrayLike) -> GaussianLaw:
    """Law of fold ``k`` (0-based) at ``T``."""
    _check_plan(plan)
    T = as_index_set(T)
    q = plan.q_col()
    return fold_marginal(q[k], _mean_on(mu_fn, T), C.gram_model(T), Cprime.gram_model(T))


def gp_conditional(x1_values: ArrayLike, plan: OrthogonalPlan, mu_fn, C: CovFunction, Cprime: CovFunction,
                   T: ArrayLike) -> ConditionalLaw:
    """Law of fold 2 at ``T`` given fold 1 at ``T`` (two-fold plans).

    Computed by conditioning the joint law of both folds, independently of
    the closed form in :func:`gaussplit.laws.conditional_law`.
    """
    if plan.K != 2:
        raise DecompositionError(f"conditional law needs K=2 folds, got {plan.K}")
    T = as_index_set(T)
    d = T.shape[0]
    x1 = np.asarray(x1_values, dtype=float).ravel()
    joint = gp_joint(plan, mu_fn, C, Cprime, T)
    try:
        base = condition_joint(joint, range(d), x1)
    except CovarianceError as exc:
        raise CovarianceError("q1^2 Sigma + (1 - q1^2) SigmaP is singular on this index set") from exc
    q = plan.q_col()
    return ConditionalLaw(base, x1.copy(), {"q1": float(q[0]), "q2": float(q[1])})
