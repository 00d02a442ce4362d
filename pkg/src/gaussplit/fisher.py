"""Fisher-information bookkeeping for decompositions.

``fisher_split`` reports the shares carried by each fold of an
information-preserving plan; ``fisher_fission`` reports the information about
mean and covariance parameters in the first fold and in the second fold given
the first; ``tune_sigma_prime`` picks an isotropic noise scale that makes the
covariance-information allocation as uniform across parameters as possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg as sla

from .decompose import DecompositionError, OrthogonalPlan
from .linalg import ORTH_TOL, CovarianceError, CovModel, as_cov, is_orthogonal


def _fd_step(x: float) -> float:
    return 1e-5 * max(1.0, abs(x))


@dataclass
class ParamModel:
    """Mean ``mu(theta)`` and covariance ``Sigma(phi)`` with their Jacobians.

    ``dmu`` (returning a ``p x M`` matrix) and ``dSigma`` (returning a list of
    ``N`` matrices) are optional; central finite differences with step
    ``1e-5 * max(1, |param|)`` are used when they are absent.
    """

    theta: NDArray
    phi: NDArray
    mu_of_theta: Callable[[NDArray], ArrayLike]
    Sigma_of_phi: Callable[[NDArray], Union[CovModel, ArrayLike]]
    dmu: Optional[Callable[[NDArray], ArrayLike]] = None
    dSigma: Optional[Callable[[NDArray], Sequence[ArrayLike]]] = None

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        p = self.mu().size
        S = self.Sigma()
        if S.shape != (p, p):
            raise ValueError(f"mean has length {p} but covariance is {S.shape}")
        if self.theta.size > p or self.phi.size > p * (p + 1) // 2:
            raise ValueError("too many parameters for the dimension")

    @property
    def p(self) -> int:
        return self.mu().size

    def mu(self, theta: Optional[NDArray] = None) -> NDArray:
        theta = self.theta if theta is None else theta
        return np.asarray(self.mu_of_theta(theta), dtype=float).ravel()

    def Sigma(self, phi: Optional[NDArray] = None) -> NDArray:
        phi = self.phi if phi is None else phi
        return as_cov(self.Sigma_of_phi(phi)).materialize()

    def mean_jacobian(self) -> NDArray:
        """``p x M`` matrix of ``d mu / d theta_i``."""
        if self.dmu is not None:
            return np.asarray(self.dmu(self.theta), dtype=float).reshape(self.p, -1)
        cols = []
        for i, t in enumerate(self.theta):
            h = _fd_step(t)
            e = np.zeros_like(self.theta)
            e[i] = h
            cols.append((self.mu(self.theta + e) - self.mu(self.theta - e)) / (2 * h))
        return np.column_stack(cols) if cols else np.zeros((self.p, 0))

    def cov_derivatives(self) -> List[NDArray]:
        """List of ``d Sigma / d phi_j``."""
        if self.dSigma is not None:
            return [np.asarray(d, dtype=float) for d in self.dSigma(self.phi)]
        out = []
        for j, f in enumerate(self.phi):
            h = _fd_step(f)
            e = np.zeros_like(self.phi)
            e[j] = h
            out.append((self.Sigma(self.phi + e) - self.Sigma(self.phi - e)) / (2 * h))
        return out


def gaussian_information(J: NDArray, dC: Sequence[NDArray], C: NDArray) -> Tuple[NDArray, NDArray]:
    """Standard Gaussian Fisher information for mean Jacobian ``J`` and
    covariance derivatives ``dC`` at covariance ``C``."""
    try:
        cf = sla.cho_factor(C, lower=True)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("covariance is singular") from exc
    info_mean = J.T @ sla.cho_solve(cf, J)
    A = [sla.cho_solve(cf, d) for d in dC]
    N = len(A)
    info_cov = np.empty((N, N))
    for j in range(N):
        for k in range(j, N):
            info_cov[j, k] = info_cov[k, j] = 0.5 * np.sum(A[j] * A[k].T)
    return info_mean, info_cov


@dataclass(frozen=True)
class FisherReport:
    I1_theta: NDArray
    I2_theta: NDArray
    I1_phi: NDArray
    I2_phi: NDArray
    total_theta: NDArray
    total_phi: NDArray
    q1: float

    def fractions(self) -> dict:
        """Diagonal share of the total carried by the first fold."""
        def share(a, t):
            d = np.diag(t)
            return np.divide(np.diag(a), d, out=np.full(d.shape, np.nan), where=d != 0).tolist()
        return {"theta": share(self.I1_theta, self.total_theta), "phi": share(self.I1_phi, self.total_phi)}

    def to_dict(self) -> dict:
        return {
            "q1": self.q1,
            "I1_theta": self.I1_theta.tolist(),
            "I2_theta": self.I2_theta.tolist(),
            "I1_phi": self.I1_phi.tolist(),
            "I2_phi": self.I2_phi.tolist(),
            "total_theta": self.total_theta.tolist(),
            "total_phi": self.total_phi.tolist(),
            "fraction_fold1": self.fractions(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"q1 = {self.q1:.6g}", f"{'param':<10}{'fold 1':>14}{'fold 2|1':>14}{'total':>14}{'share 1':>10}"]
        fr = self.fractions()
        for name, a, b, t, f in (("theta", self.I1_theta, self.I2_theta, self.total_theta, fr["theta"]),
                                 ("phi", self.I1_phi, self.I2_phi, self.total_phi, fr["phi"])):
            for i in range(t.shape[0]):
                lines.append(f"{name}[{i}]".ljust(10) + f"{a[i, i]:>14.6g}{b[i, i]:>14.6g}{t[i, i]:>14.6g}{f[i]:>10.4f}")
        return "\n".join(lines)


def fisher_fission(pm: ParamModel, q1: float, SigmaP: Union[CovModel, ArrayLike]) -> FisherReport:
    """Information about ``theta`` and ``phi`` in fold 1 and in fold 2 given
    fold 1, for a single observation split into two folds."""
    q1 = float(q1)
    if not 0.0 < q1 < 1.0:
        raise ValueError(f"q1 must lie in (0, 1), got {q1}")
    S = pm.Sigma()
    Sp = as_cov(SigmaP).materialize()
    if Sp.shape != S.shape:
        raise ValueError("SigmaP dimension does not match Sigma")
    J = pm.mean_jacobian()
    dS = pm.cov_derivatives()
    total_theta, total_phi = gaussian_information(J, dS, S)
    M = q1 * q1 * S + (1.0 - q1 * q1) * Sp
    try:
        m_theta, m_phi = gaussian_information(J, dS, M)
    except CovarianceError as exc:
        raise CovarianceError("q1^2 Sigma + (1 - q1^2) SigmaP is singular") from exc
    I1_theta = q1 ** 2 * m_theta
    I1_phi = q1 ** 4 * m_phi
    return FisherReport(I1_theta, total_theta - I1_theta, I1_phi, total_phi - I1_phi, total_theta, total_phi, q1)


def fisher_split(plan_or_Q, partition: Optional[Sequence[Sequence[int]]] = None) -> List[Tuple[float, float]]:
    """Per-fold ``(mean, covariance)`` information fractions of an
    information-preserving plan (``r = 0``).

    The mean fraction of fold ``k`` is ``1' Q_k' Q_k 1 / n`` where ``Q_k`` are
    the rows of ``Q`` in that fold; the covariance fraction is ``n_k / n``.
    """
    if isinstance(plan_or_Q, OrthogonalPlan):
        if plan_or_Q.r != 0:
            raise DecompositionError("fisher_split needs a plan without noise rows (r = 0)")
        Q = plan_or_Q.Q
        partition = plan_or_Q.groups if partition is None else partition
    else:
        Q = np.asarray(plan_or_Q, dtype=float)
        if partition is None:
            raise ValueError("partition is required when passing a bare matrix")
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not is_orthogonal(Q, ORTH_TOL):
        raise DecompositionError("Q must be square orthogonal")
    n = Q.shape[0]
    rows = sorted(i for g in partition for i in g)
    if rows != list(range(n)):
        raise DecompositionError("partition must cover each row exactly once")
    out = []
    for g in partition:
        v = Q[list(g)].sum(axis=1)
        out.append((float(v @ v) / n, len(g) / n))
    return out


def tuning_objective(c: float, gamma: float, S: NDArray, dS: Sequence[NDArray], include_diagonal: bool = False) -> float:
    """Sum over parameter pairs of the squared mismatch between the
    information traces at ``S`` and at ``sqrt(gamma) S + (1 - sqrt(gamma)) c^2 I``."""
    p = S.shape[0]
    g = math.sqrt(gamma)
    M = g * S + (1.0 - g) * c * c * np.eye(p)
    cS = sla.cho_factor(S, lower=True)
    cM = sla.cho_factor(M, lower=True)
    AS = [sla.cho_solve(cS, d) for d in dS]
    AM = [sla.cho_solve(cM, d) for d in dS]
    N = len(dS)
    total = 0.0
    for j in range(N):
        for k in range(j if include_diagonal else j + 1, N):
            diff = np.sum(AS[j] * AS[k].T) - np.sum(AM[j] * AM[k].T)
            total += diff * diff
    return total


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f: Callable[[float], float], lo: float, hi: float, rtol: float = 1e-6,
                   maxiter: int = 500) -> Tuple[float, float, int]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``; stop when the bracket width
    falls below ``rtol * max(1, |x|)``. Returns ``(x, f(x), iterations)``."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > rtol * max(1.0, abs(0.5 * (a + b))) and it < maxiter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        it += 1
    x = 0.5 * (a + b)
    return x, f(x), it


@dataclass(frozen=True)
class TuneResult:
    q1: float
    sigma_prime: float
    objective: float
    iterations: int
    converged: bool

    def __iter__(self):
        return iter((self.q1, self.sigma_prime))


def tune_sigma_prime(gamma: float, S_guess: Union[CovModel, ArrayLike], pm: Optional[ParamModel] = None,
                     include_diagonal: bool = False, dSigma: Optional[Sequence[ArrayLike]] = None,
                     bounds: Tuple[float, float] = (1e-3, 1e3), rtol: float = 1e-6) -> TuneResult:
    """Choose ``q1 = gamma**0.25`` and the isotropic noise scale ``sigma'``.

    The covariance derivatives come from ``pm`` (or ``dSigma``); the unknown
    covariance is replaced by ``S_guess``. Minimization is golden-section on
    ``log sigma'`` over ``bounds``. Only pairs ``j < j'`` enter the objective
    unless ``include_diagonal`` is set.
    """
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    S = as_cov(S_guess).materialize()
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("S_guess is not positive definite") from exc
    if dSigma is None:
        if pm is None:
            raise ValueError("need a ParamModel or explicit covariance derivatives")
        dSigma = pm.cov_derivatives()
    dS = [np.asarray(d, dtype=float) for d in dSigma]
    if len(dS) < 2 and not include_diagonal:
        raise ValueError("with fewer than two covariance parameters the pairwise objective is empty; "
                         "set include_diagonal=True")
    obj = lambda logc: tuning_objective(math.exp(logc), gamma, S, dS, include_diagonal)
    x, fx, it = golden_section(obj, math.log(bounds[0]), math.log(bounds[1]), rtol=rtol)
    converged = it < 500
    return TuneResult(gamma ** 0.25, math.exp(x), fx, it, converged)
