"""Fit-and-validate pipeline for the row covariance of a matrix-variate
Gaussian observed once.

Fold 1 gives estimates ``(Delta_hat, rho_hat)``; electrodes (rows) are
clustered hierarchically on ``1 - Delta_hat``; the number of clusters is then
chosen by the conditional log-likelihood of fold 2 given fold 1 under the
block-zeroed ``Delta_hat(h)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform

from .inference import MatrixNormalModel, sample_rowcov, split_matrix
from .laws import fast_log_density_pair
from .linalg import AR1, Dense, Kronecker

EIG_FLOOR = 0.1
REPAIR_FLOOR = 1e-6
REPAIR_FLAG = 0.1
INNOVATIONS = ("unit", "stationary")


def _as_matrix(x: ArrayLike, a: int, b: int) -> NDArray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        if x.shape != (a, b):
            raise ValueError(f"expected an {a} x {b} matrix, got {x.shape}")
        return x
    if x.size != a * b:
        raise ValueError(f"expected {a * b} values, got {x.size}")
    return x.reshape((a, b), order="F")


def cov_to_corr(C: NDArray) -> NDArray:
    d = np.sqrt(np.diag(C))
    D = C / np.outer(d, d)
    np.fill_diagonal(D, 1.0)
    return 0.5 * (D + D.T)


def moment_delta(S: NDArray, q1: float, floor: float = EIG_FLOOR) -> NDArray:
    """``(S - (1 - q1^2) I) / q1^2`` with negative eigenvalues replaced by
    ``floor``, returned as a correlation matrix."""
    a = S.shape[0]
    Dstar = (S - (1.0 - q1 * q1) * np.eye(a)) / (q1 * q1)
    w, V = np.linalg.eigh(0.5 * (Dstar + Dstar.T))
    if w[0] < 0:
        w = np.where(w < 0, floor, w)
        Dstar = (V * w) @ V.T
    return cov_to_corr(Dstar)


def ar1_kalman_loglik(Ym: NDArray, rho: float, emission_var: float, innovation_var: float) -> float:
    """Log-likelihood of the rows of ``Ym`` as independent series
    ``y_t = s_t + e_t``, ``s_t = rho s_{t-1} + w_t``, with the latent state
    started from its stationary law.

    All rows share the variance recursion, so it runs once; the state means
    are filtered for all rows together.
    """
    a, b = Ym.shape
    P = innovation_var / (1.0 - rho * rho)  # prior variance of s_0
    m = np.zeros(a)
    ll = 0.0
    for t in range(b):
        if t > 0:
            m = rho * m
            P = rho * rho * P + innovation_var
        F = P + emission_var
        v = Ym[:, t] - m
        ll -= 0.5 * (a * math.log(2.0 * math.pi * F) + v @ v / F)
        K = P / F
        m = m + K * v
        P = (1.0 - K) * P
    return ll


def estimate_rho(Ym: NDArray, q1: float, innovation: str = "unit", bounds=(-0.999, 0.999)) -> float:
    """Maximum-likelihood AR(1) coefficient of a latent series observed with
    emission variance ``1 - q1^2``.

    ``innovation="unit"`` fixes the innovation variance at 1;
    ``"stationary"`` uses ``q1^2 (1 - rho^2)`` so that the latent series has
    the marginal variance ``q1^2`` implied by a correlation-scale ``Delta``.
    """
    if innovation not in INNOVATIONS:
        raise ValueError(f"innovation must be one of {INNOVATIONS}")
    ev = 1.0 - q1 * q1

    def nll(r):
        iv = 1.0 if innovation == "unit" else q1 * q1 * (1.0 - r * r)
        return -ar1_kalman_loglik(Ym, r, ev, iv)

    res = optimize.minimize_scalar(nll, bounds=bounds, method="bounded", options={"xatol": 1e-8})
    return float(res.x)


def estimate_delta_rho(x1: ArrayLike, q1: float, a: int, b: int, innovation: str = "unit") -> Tuple[NDArray, float]:
    """``(Delta_hat, rho_hat)`` from fold 1 of a split with unit isotropic noise."""
    if not 0.0 < q1 < 1.0:
        raise ValueError(f"q1 must lie in (0, 1), got {q1}")
    Ym = _as_matrix(x1, a, b)
    return moment_delta(sample_rowcov(Ym), q1), estimate_rho(Ym, q1, innovation)


@dataclass(frozen=True, eq=False)
class ClusterPath:
    """``assignments[h]`` labels the rows with ``h`` clusters; labels are
    numbered in order of first appearance."""

    linkage: NDArray
    assignments: Dict[int, NDArray]
    method: str

    @property
    def a(self) -> int:
        return self.linkage.shape[0] + 1

    def clusters(self, h: int) -> List[List[int]]:
        lab = self.assignments[h]
        return [list(np.flatnonzero(lab == k)) for k in range(h)]


def _canonical(labels: NDArray) -> NDArray:
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=int)
    remap[order] = np.arange(order.size)
    return remap[np.searchsorted(np.unique(labels), labels)]


def hier_cluster(Delta_hat: ArrayLike, method: str = "average") -> ClusterPath:
    """Agglomerative clustering with distance ``1 - Delta_hat``."""
    D = np.asarray(Delta_hat, dtype=float)
    dist = np.clip(1.0 - D, 0.0, None)
    np.fill_diagonal(dist, 0.0)
    dist = 0.5 * (dist + dist.T)
    a = D.shape[0]
    if a == 1:
        return ClusterPath(np.zeros((0, 4)), {1: np.zeros(1, dtype=int)}, method)
    Z = hierarchy.linkage(squareform(dist, checks=False), method=method)
    # replay merges; cut_tree mislabels linkages with tied heights
    members = {i: [i] for i in range(a)}
    labels = np.arange(a)
    assignments = {a: _canonical(labels)}
    for m, (u, v) in enumerate(Z[:, :2].astype(int)):
        members[a + m] = members.pop(u) + members.pop(v)
        for k, rows in enumerate(members.values()):
            labels[rows] = k
        assignments[a - m - 1] = _canonical(labels)
    return ClusterPath(Z, assignments, method)


def zero_between(Delta_hat: NDArray, labels: NDArray) -> NDArray:
    same = labels[:, None] == labels[None, :]
    return np.where(same, Delta_hat, 0.0)


def repair_pd(D: NDArray, floor: float = REPAIR_FLOOR) -> Tuple[NDArray, float]:
    """Floor eigenvalues at ``floor`` and rescale to unit diagonal. Returns
    the repaired matrix and the Frobenius norm of the change (0 if none)."""
    w, V = np.linalg.eigh(D)
    if w[0] > floor:
        return D, 0.0
    fixed = cov_to_corr((V * np.maximum(w, floor)) @ V.T)
    return fixed, float(np.linalg.norm(fixed - D))


@dataclass(frozen=True, eq=False)
class ValidationCurve:
    h: NDArray
    cll: NDArray
    h_hat: int
    repaired: Dict[int, float] = field(default_factory=dict)
    flagged: Tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"h": self.h.tolist(), "cll": self.cll.tolist(), "h_hat": self.h_hat,
                "repaired": {str(k): v for k, v in self.repaired.items()}, "flagged": list(self.flagged)}


def select_clusters(path: ClusterPath, Delta_hat: NDArray, rho_hat: float, x1: ArrayLike, x2: ArrayLike,
                    q1: float, b: int, sigma_prime: float = 1.0) -> ValidationCurve:
    """Conditional log-likelihood of fold 2 given fold 1 for each cluster
    count; ``h_hat`` is the argmax (smallest ``h`` on ties)."""
    a = Delta_hat.shape[0]
    q2 = math.sqrt(1.0 - q1 * q1)
    v1 = _as_matrix(x1, a, b).ravel(order="F")
    v2 = _as_matrix(x2, a, b).ravel(order="F")
    mu = np.zeros(a * b)
    hs = np.arange(1, a + 1)
    cll = np.empty(a)
    repaired, flagged = {}, []
    scale = np.linalg.norm(Delta_hat)
    gamma = AR1(rho_hat, b)
    for k, h in enumerate(hs):
        Dh = zero_between(Delta_hat, path.assignments[int(h)])
        Dh, change = repair_pd(Dh)
        if change:
            repaired[int(h)] = change
            if change > REPAIR_FLAG * scale:
                flagged.append(int(h))
        cll[k] = fast_log_density_pair(v1, v2, mu, Kronecker(gamma, Dense(Dh)), sigma_prime, q1, q2)[1]
    h_hat = int(hs[int(np.argmax(cll))])
    return ValidationCurve(hs, cll, h_hat, repaired, tuple(flagged))


@dataclass(frozen=True, eq=False)
class ClusterValidation:
    Delta_hat: NDArray
    rho_hat: float
    path: ClusterPath
    curve: ValidationCurve

    @property
    def h_hat(self) -> int:
        return self.curve.h_hat

    def summary(self) -> dict:
        return {"h_hat": self.h_hat, "rho_hat": self.rho_hat, "flagged": list(self.curve.flagged),
                "clusters": [[int(i) for i in c] for c in self.path.clusters(self.h_hat)]}


def validate_clusters(X1m: ArrayLike, X2m: ArrayLike, q1: float, a: int, b: int, innovation: str = "unit",
                      linkage: str = "average") -> ClusterValidation:
    D, rho = estimate_delta_rho(X1m, q1, a, b, innovation)
    path = hier_cluster(D, linkage)
    curve = select_clusters(path, D, rho, X1m, X2m, q1, b)
    return ClusterValidation(D, rho, path, curve)


def block_truth(sizes: Sequence[int], within: float) -> NDArray:
    """Block-diagonal correlation matrix with constant ``within`` correlation."""
    a = int(sum(sizes))
    D = np.zeros((a, a))
    start = 0
    for s in sizes:
        D[start:start + s, start:start + s] = within
        start += s
    np.fill_diagonal(D, 1.0)
    return D


@dataclass(frozen=True)
class ClusterExperiment:
    sizes: Tuple[int, ...] = (4, 4, 4)
    within: float = 0.8
    rho: float = 0.5
    b: int = 60
    q1: float = 0.5 ** 0.25
    replicates: int = 100
    seed: int = 0
    innovation: str = "unit"
    linkage: str = "average"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not 0.0 < self.q1 < 1.0:
            raise ValueError("q1 must lie in (0, 1)")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.innovation not in INNOVATIONS:
            raise ValueError(f"innovation must be one of {INNOVATIONS}")
        MatrixNormalModel(block_truth(self.sizes, self.within), self.rho, self.b)

    @property
    def a(self) -> int:
        return sum(self.sizes)


def cluster_replicate(cfg: ClusterExperiment, index: int) -> dict:
    seed = cfg.seed + index
    rng = np.random.default_rng(seed)
    model = MatrixNormalModel(block_truth(cfg.sizes, cfg.within), cfg.rho, cfg.b)
    Xm = model.sample(rng)
    X1m, X2m = split_matrix(Xm, cfg.q1, rng)
    res = validate_clusters(X1m, X2m, cfg.q1, cfg.a, cfg.b, cfg.innovation, cfg.linkage)
    return {"replicate": index, "seed": seed, "h_hat": res.h_hat, "rho_hat": res.rho_hat,
            "flagged": len(res.curve.flagged)}


def _chunk(args):
    cfg, idx = args
    return [cluster_replicate(cfg, i) for i in idx]


def run_cluster_experiment(cfg: ClusterExperiment, workers: int = 1) -> List[dict]:
    idx = list(range(cfg.replicates))
    if workers <= 1:
        rows = _chunk((cfg, idx))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [r for part in pool.map(_chunk, [(cfg, idx[k::workers]) for k in range(workers)]) for r in part]
    return sorted(rows, key=lambda r: r["replicate"])
