"""Exact Gaussian laws of folds: joint, marginal, conditional and collapsed.

Covariances stay :class:`~gaussplit.linalg.CovModel` objects where the
structure survives (a fold of an isotropic model is isotropic); anything else
is materialized dense. Log-densities use Cholesky factors for dense models and
closed forms or eigendecompositions otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg as sla

from .decompose import DecompositionError, FoldSet
from .linalg import (
    CovarianceError,
    CovModel,
    Dense,
    Diagonal,
    EigenPair,
    Isotropic,
    Kronecker,
    as_cov,
    eig_sym,
)

LOG_2PI = np.log(2.0 * np.pi)

CovLike = Union[CovModel, ArrayLike]


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    mean: NDArray
    cov: CovModel

    def __post_init__(self):
        m = np.array(self.mean, dtype=float).ravel()
        c = as_cov(self.cov)
        if m.size != c.dim:
            raise ValueError(f"mean has length {m.size} but covariance has dimension {c.dim}")
        m.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, x: ArrayLike) -> float:
        return log_density(self, x)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.to_dict()}


@dataclass(frozen=True, eq=False)
class ConditionalLaw:
    """Law of one fold given another. ``base`` is the Gaussian law at the
    stored conditioning value; only its mean depends on that value."""

    base: GaussianLaw
    conditioning_value: NDArray
    coefficients: dict = field(default_factory=dict)

    @property
    def mean(self) -> NDArray:
        return self.base.mean

    @property
    def cov(self) -> CovModel:
        return self.base.cov

    def log_density(self, x: ArrayLike) -> float:
        return log_density(self.base, x)

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "conditioning_value": np.asarray(self.conditioning_value).tolist(),
            "coefficients": self.coefficients,
        }


def law_to_json(law: Union[GaussianLaw, ConditionalLaw]) -> str:
    return json.dumps(law.to_dict())


# ---------------------------------------------------------------------------
# dense helpers
# ---------------------------------------------------------------------------


def _dense(c: CovLike) -> NDArray:
    return as_cov(c).materialize()


def stable_cholesky(A: NDArray) -> NDArray:
    """Lower Cholesky factor; one retry with ``1e-10 * trace/d`` jitter."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        d = A.shape[0]
        jitter = 1e-10 * np.trace(A) / d
        try:
            return np.linalg.cholesky(A + jitter * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise CovarianceError("covariance is not positive definite, even after jitter") from exc


def _mix(w_sigma: float, sigma: CovModel, w_prime: float, sigma_p: CovModel) -> CovModel:
    """``w_sigma * sigma + w_prime * sigma_p``, keeping simple structure."""
    if w_prime == 0.0:
        return _scale(sigma, w_sigma)
    if w_sigma == 0.0:
        return _scale(sigma_p, w_prime)
    if isinstance(sigma, Isotropic) and isinstance(sigma_p, Isotropic):
        return Isotropic(w_sigma * sigma.variance + w_prime * sigma_p.variance, sigma.size)
    diag_like = (Isotropic, Diagonal)
    if isinstance(sigma, diag_like) and isinstance(sigma_p, diag_like):
        return Diagonal(w_sigma * np.diag(sigma.materialize()) + w_prime * np.diag(sigma_p.materialize()))
    return Dense(w_sigma * sigma.materialize() + w_prime * sigma_p.materialize())


def _scale(c: CovModel, w: float) -> CovModel:
    if w == 1.0:
        return c
    if isinstance(c, Isotropic):
        return Isotropic(w * c.variance, c.size)
    if isinstance(c, Diagonal):
        return Diagonal(w * c.variances)
    return Dense(w * c.materialize())


def _vec(x: ArrayLike) -> NDArray:
    return np.asarray(x, dtype=float).ravel()


# ---------------------------------------------------------------------------
# log-densities
# ---------------------------------------------------------------------------


def log_density(law: Union[GaussianLaw, ConditionalLaw], x: ArrayLike) -> float:
    """Exact Gaussian log-density of ``x``."""
    if isinstance(law, ConditionalLaw):
        law = law.base
    x = _vec(x)
    if x.size != law.dim:
        raise ValueError(f"x has length {x.size}, law has dimension {law.dim}")
    r = x - law.mean
    cov = law.cov
    d = law.dim
    if isinstance(cov, Isotropic):
        return float(-0.5 * (d * LOG_2PI + d * np.log(cov.variance) + r @ r / cov.variance))
    if isinstance(cov, Diagonal):
        v = cov.variances
        return float(-0.5 * (d * LOG_2PI + np.log(v).sum() + np.sum(r * r / v)))
    if isinstance(cov, Kronecker):
        eig = eig_sym(cov, lazy=True)
        if eig.values[-1] <= 0:
            raise CovarianceError("Kronecker covariance is not positive definite")
        z = eig.rotate(r)
        return float(-0.5 * (d * LOG_2PI + np.log(eig.values).sum() + np.sum(z * z / eig.values)))
    L = stable_cholesky(cov.materialize())
    z = sla.solve_triangular(L, r, lower=True)
    return float(-0.5 * (d * LOG_2PI + 2.0 * np.log(np.diag(L)).sum() + z @ z))


# ---------------------------------------------------------------------------
# laws of folds
# ---------------------------------------------------------------------------


def _check_unit(q: NDArray, what: str = "q_col") -> None:
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise ValueError(f"{what} must have unit norm, got {np.linalg.norm(q)}")


def joint_law(q_col: ArrayLike, mu: ArrayLike, Sigma: CovLike, SigmaP: CovLike) -> GaussianLaw:
    """Joint law of the K stacked folds of a single observation.

    Mean ``(q_1 mu, ..., q_K mu)`` and covariance
    ``q q' ⊗ Sigma + (I - q q') ⊗ SigmaP``.
    """
    q = _vec(q_col)
    _check_unit(q)
    mu = _vec(mu)
    S, Sp = _dense(Sigma), _dense(SigmaP)
    if not (S.shape[0] == Sp.shape[0] == mu.size):
        raise ValueError("mu, Sigma and SigmaP dimensions disagree")
    qq = np.outer(q, q)
    cov = np.kron(qq, S) + np.kron(np.eye(q.size) - qq, Sp)
    return GaussianLaw(np.kron(q, mu), Dense(cov))


def fold_marginal(q_k: float, mu: ArrayLike, Sigma: CovLike, SigmaP: CovLike) -> GaussianLaw:
    """``N_p(q_k mu, q_k^2 Sigma + (1 - q_k^2) SigmaP)``."""
    q_k = float(q_k)
    if abs(q_k) > 1.0 + 1e-12:
        raise ValueError(f"|q_k| must be <= 1, got {q_k}")
    q2 = min(q_k * q_k, 1.0)
    S, Sp = as_cov(Sigma), as_cov(SigmaP)
    if S.dim != Sp.dim or S.dim != _vec(mu).size:
        raise ValueError("mu, Sigma and SigmaP dimensions disagree")
    return GaussianLaw(q_k * _vec(mu), _mix(q2, S, 1.0 - q2, Sp))


def _cond_from_blocks(
    x_given: NDArray,
    mean_given: NDArray,
    mean_target: NDArray,
    cov_given: NDArray,
    cross: NDArray,
    cov_target: NDArray,
) -> Tuple[NDArray, NDArray]:
    """Mean and covariance of target | given via the Schur complement.
    ``cross`` is Cov(target, given)."""
    L = stable_cholesky(cov_given)
    A = sla.cho_solve((L, True), cross.T).T  # cross @ cov_given^{-1}
    mean = mean_target + A @ (x_given - mean_given)
    cov = cov_target - A @ cross.T
    return mean, 0.5 * (cov + cov.T)


def condition_joint(law: GaussianLaw, given: Iterable[int], x_given: ArrayLike) -> GaussianLaw:
    """Condition a joint Gaussian on the coordinates ``given``."""
    given = np.asarray(list(given), dtype=int)
    rest = np.setdiff1d(np.arange(law.dim), given)
    C = law.cov.materialize()
    m = law.mean
    mean, cov = _cond_from_blocks(
        _vec(x_given), m[given], m[rest], C[np.ix_(given, given)], C[np.ix_(rest, given)], C[np.ix_(rest, rest)]
    )
    return GaussianLaw(mean, Dense(cov))


def conditional_law(
    x1: ArrayLike, q1: float, q2: float, mu: ArrayLike, Sigma: CovLike, SigmaP: CovLike
) -> ConditionalLaw:
    """Law of the second fold given the first fold equals ``x1`` (K=2)."""
    q1, q2 = float(q1), float(q2)
    if abs(q1 * q1 + q2 * q2 - 1.0) > 1e-10:
        raise ValueError(f"q1^2 + q2^2 must equal 1, got {q1 * q1 + q2 * q2}")
    x1, mu = _vec(x1), _vec(mu)
    S, Sp = _dense(Sigma), _dense(SigmaP)
    D = S - Sp
    M = q1 * q1 * S + (1.0 - q1 * q1) * Sp
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("q1^2 Sigma + (1 - q1^2) SigmaP is singular") from exc
    MinvD = sla.cho_solve((L, True), D)
    mean = q2 * mu + q1 * q2 * MinvD.T @ (x1 - q1 * mu)
    cov = q2 * q2 * S + (1.0 - q2 * q2) * Sp - q1 * q1 * q2 * q2 * D @ MinvD
    cov = Dense(0.5 * (cov + cov.T))
    return ConditionalLaw(GaussianLaw(mean, cov), x1.copy(), {"q1": q1, "q2": q2})


@dataclass(frozen=True, eq=False)
class Collapsed:
    """Two disjoint groups of folds of an n=1 decomposition, each collapsed to
    a single vector ``x_A = sum_{k in A} q_k X^(k)``."""

    x_A: NDArray
    x_B: NDArray
    d_A: float
    d_B: float
    sigma_prime: CovModel

    def joint_law(self, mu: ArrayLike, Sigma: CovLike) -> GaussianLaw:
        dA, dB = self.d_A, self.d_B
        mu = _vec(mu)
        S, Sp = _dense(Sigma), self.sigma_prime.materialize()
        cross = dA * dB * (S - Sp)
        cov = np.block([
            [dA * dA * S + dA * (1 - dA) * Sp, cross],
            [cross, dB * dB * S + dB * (1 - dB) * Sp],
        ])
        return GaussianLaw(np.concatenate([dA * mu, dB * mu]), Dense(cov))

    def conditional_law(self, mu: ArrayLike, Sigma: CovLike) -> ConditionalLaw:
        """Law of ``x_B`` given ``x_A``."""
        dA, dB = self.d_A, self.d_B
        if dA <= 0:
            raise CovarianceError("group A carries no data weight (d_A = 0); cannot condition on it")
        mu = _vec(mu)
        S, Sp = _dense(Sigma), self.sigma_prime.materialize()
        D = S - Sp
        M = dA * S + (1 - dA) * Sp
        L = stable_cholesky(M)
        MinvD = sla.cho_solve((L, True), D)
        mean = dB * mu + dB * MinvD.T @ (self.x_A - dA * mu)
        cov = dB * dB * S + dB * (1 - dB) * Sp - dA * dB * dB * D @ MinvD
        base = GaussianLaw(mean, Dense(0.5 * (cov + cov.T)))
        return ConditionalLaw(base, self.x_A.copy(), {"d_A": dA, "d_B": dB})


def collapse(fs: FoldSet, A: Iterable[int], B: Iterable[int]) -> Collapsed:
    """Collapse fold groups ``A`` and ``B`` (0-based fold indices)."""
    A, B = sorted(set(A)), sorted(set(B))
    if set(A) & set(B):
        raise ValueError(f"fold groups overlap: {sorted(set(A) & set(B))}")
    if fs.n != 1:
        raise DecompositionError("collapse is defined for single-observation (n=1) decompositions")
    if any(not 0 <= k < fs.K for k in A + B):
        raise ValueError(f"fold indices must lie in 0..{fs.K - 1}")
    q = fs.plan.q_col()
    folds = np.vstack([f.reshape(1, -1) for f in fs.folds])
    qA = np.zeros(fs.K)
    qA[A] = q[A]
    qB = np.zeros(fs.K)
    qB[B] = q[B]
    return Collapsed(folds.T @ qA, folds.T @ qB, float(qA @ qA), float(qB @ qB), fs.sigma_prime)


# ---------------------------------------------------------------------------
# eigenbasis fast path
# ---------------------------------------------------------------------------


def fast_log_density_pair(
    x1: ArrayLike,
    x2: ArrayLike,
    mu: ArrayLike,
    sigma_star: Union[CovModel, EigenPair],
    sigma_prime: float,
    q1: float,
    q2: float,
) -> Tuple[float, float]:
    """Log-densities of fold 1 and of fold 2 given fold 1 when the noise
    covariance is ``sigma_prime**2 * I``.

    In the eigenbasis of the candidate covariance both laws are diagonal, so
    each is a sum of univariate Gaussian log-densities. Kronecker candidates
    are decomposed factor-wise and never materialized.
    """
    if isinstance(sigma_star, EigenPair):
        eig = sigma_star
    else:
        eig = eig_sym(sigma_star, lazy=True)
    if not np.isscalar(sigma_prime) or sigma_prime <= 0:
        raise ValueError("fast path needs an isotropic noise covariance sigma_prime**2 * I")
    s2 = float(sigma_prime) ** 2
    lam = eig.values
    mu = _vec(mu)
    z1 = eig.rotate(_vec(x1) - q1 * mu)
    z2 = eig.rotate(_vec(x2) - q2 * mu)
    m1 = q1 * q1 * lam + (1.0 - q1 * q1) * s2
    gain = q1 * q2 * (lam - s2) / m1
    v2 = q2 * q2 * lam + (1.0 - q2 * q2) * s2 - q1 * q1 * q2 * q2 * (lam - s2) ** 2 / m1
    if np.any(m1 <= 0) or np.any(v2 <= 0):
        raise CovarianceError("fold covariance is not positive definite")
    r2 = z2 - gain * z1
    ll1 = -0.5 * np.sum(LOG_2PI + np.log(m1) + z1 * z1 / m1)
    ll2 = -0.5 * np.sum(LOG_2PI + np.log(v2) + r2 * r2 / v2)
    return float(ll1), float(ll2)


def dense_log_density_pair(x1, x2, mu, Sigma, sigma_prime: float, q1: float, q2: float) -> Tuple[float, float]:
    """Reference path for :func:`fast_log_density_pair` via dense Cholesky."""
    p = _vec(mu).size
    Sp = Isotropic(float(sigma_prime) ** 2, p)
    marg = fold_marginal(q1, mu, as_cov(Sigma).materialize(), Sp)
    ll1 = log_density(GaussianLaw(marg.mean, Dense(marg.cov.materialize())), x1)
    ll2 = log_density(conditional_law(x1, q1, q2, mu, Sigma, Sp), x2)
    return ll1, ll2


# ---------------------------------------------------------------------------
# latent form for diagonal noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LatentForm:
    """Fold 1 as a latent Gaussian with an independent observation layer:
    ``X1_j | Y ~ N(scale * Y_j, emission_var_j)``, ``Y ~ latent``."""

    scale: float
    emission_var: NDArray
    latent: GaussianLaw
    degenerate: bool
    isotropic: bool

    def marginal(self) -> GaussianLaw:
        S = self.latent.cov.materialize()
        cov = self.scale ** 2 * S + np.diag(self.emission_var)
        return GaussianLaw(self.scale * self.latent.mean, Dense(cov))


def latent_form(q1: float, mu: ArrayLike, Sigma: CovLike, sigma_diag: ArrayLike) -> LatentForm:
    """Two-layer representation of fold 1 for a diagonal noise covariance
    ``diag(sigma_diag)`` (entries are variances)."""
    if isinstance(sigma_diag, CovModel):
        if not isinstance(sigma_diag, (Diagonal, Isotropic)):
            raise ValueError("latent form needs a diagonal noise covariance")
        sd = np.diag(sigma_diag.materialize())
    else:
        sd = np.asarray(sigma_diag, dtype=float)
        if sd.ndim == 2:
            if np.any(sd - np.diag(np.diag(sd))):
                raise ValueError("latent form needs a diagonal noise covariance")
            sd = np.diag(sd)
    emission = (1.0 - q1 * q1) * sd
    return LatentForm(
        scale=float(q1),
        emission_var=emission,
        latent=GaussianLaw(_vec(mu), as_cov(Sigma)),
        degenerate=bool(np.any(emission <= 0)),
        isotropic=bool(np.all(sd == sd[0])),
    )
