"""Augment-rotate-partition decomposition of Gaussian data into folds.

A decomposition is fully described by an :class:`OrthogonalPlan`: the
orthogonal matrix ``Q``, how many auxiliary noise rows ``r`` are appended,
where the data rows sit inside the augmented matrix, and which rows of the
rotated matrix make up each fold. Every named strategy (sample splitting,
thinning, fission, information-preserving splits, block plans) is just a
plan constructor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .linalg import (
    ORTH_TOL,
    CovModel,
    Isotropic,
    SeedLike,
    as_cov,
    as_rng,
    complete_orthogonal,
    cov_from_dict,
    haar_orthogonal,
    sample_gaussian_rows,
)

PLAN_KINDS = ("sample_split", "thinning", "fission", "info_preserving", "dependent", "block", "custom")


class DecompositionError(ValueError):
    pass


class ImpossibleDecompositionError(DecompositionError):
    """A single multivariate Gaussian with unknown covariance cannot be split
    into independent, non-trivial pieces; use a dependent plan instead."""


IMPOSSIBLE_MSG = (
    "no non-trivial independent decomposition exists for a single (n=1) "
    "multivariate Gaussian with unknown covariance; use make_plan_dependent "
    "and the conditional laws in gaussplit.laws instead"
)


@dataclass(frozen=True, eq=False)
class OrthogonalPlan:
    """Inputs of one decomposition.

    Attributes
    ----------
    Q : (n+r, n+r) orthogonal matrix.
    r : number of auxiliary noise rows.
    data_slots : positions of the ``n`` data rows inside the augmented matrix;
        the remaining positions hold noise rows in increasing order.
    groups : row indices of ``Q @ X_aug`` collected by each fold.
    """

    Q: NDArray
    r: int
    data_slots: Tuple[int, ...]
    groups: Tuple[Tuple[int, ...], ...]
    kind: str = "custom"
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        q = np.array(self.Q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "data_slots", tuple(int(i) for i in self.data_slots))
        object.__setattr__(self, "groups", tuple(tuple(int(i) for i in g) for g in self.groups))
        m = q.shape[0]
        if q.ndim != 2 or q.shape != (m, m):
            raise DecompositionError(f"Q must be square, got {q.shape}")
        err = np.abs(q.T @ q - np.eye(m)).max() if m else 0.0
        if err > ORTH_TOL:
            raise DecompositionError(f"Q is not orthogonal (max |Q'Q - I| = {err:.2e})")
        n = len(self.data_slots)
        if n + self.r != m:
            raise DecompositionError(f"n + r = {n + self.r} but Q has {m} rows")
        if len(set(self.data_slots)) != n or any(not 0 <= s < m for s in self.data_slots):
            raise DecompositionError("data_slots must be distinct row positions")
        flat = sorted(i for g in self.groups for i in g)
        if flat != list(range(m)):
            raise DecompositionError("fold groups must partition the rows of X'")
        if self.r < max(self.K - n, 0):
            raise DecompositionError(f"r = {self.r} is too small for K = {self.K} folds of n = {n} rows")
        if self.kind not in PLAN_KINDS:
            raise DecompositionError(f"unknown plan kind {self.kind!r}")

    @property
    def n(self) -> int:
        return len(self.data_slots)

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def partition(self) -> Tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def noise_slots(self) -> Tuple[int, ...]:
        used = set(self.data_slots)
        return tuple(i for i in range(self.n + self.r) if i not in used)

    def fold_rows(self, k: int) -> NDArray:
        """Rows of ``Q`` producing fold ``k``."""
        return self.Q[list(self.groups[k])]

    def q_col(self) -> NDArray:
        """Weights of the (single) data row in each fold; requires n=1 and
        one row per fold."""
        if self.n != 1 or any(len(g) != 1 for g in self.groups):
            raise DecompositionError("q_col is defined for n=1 plans with one row per fold")
        col = self.Q[:, self.data_slots[0]]
        return np.array([col[g[0]] for g in self.groups])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "Q": self.Q.tolist(),
            "r": self.r,
            "data_slots": list(self.data_slots),
            "groups": [list(g) for g in self.groups],
            "partition": list(self.partition),
            "seed": self.seed,
            "params": self.params,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "OrthogonalPlan":
        return cls(
            Q=np.asarray(d["Q"], dtype=float),
            r=int(d["r"]),
            data_slots=tuple(d["data_slots"]),
            groups=tuple(tuple(g) for g in d["groups"]),
            kind=d.get("kind", "custom"),
            seed=d.get("seed"),
            params=d.get("params", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "OrthogonalPlan":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class FoldSet:
    folds: Tuple[NDArray, ...]
    plan: OrthogonalPlan
    sigma_prime: CovModel
    n: int
    p: int

    @property
    def K(self) -> int:
        return len(self.folds)

    def rotated(self) -> NDArray:
        """Reassemble ``X' = Q X_aug`` from the folds."""
        xp = np.empty((self.n + self.plan.r, self.p))
        for fold, g in zip(self.folds, self.plan.groups):
            xp[list(g)] = fold
        return xp


def _consecutive_groups(sizes: Sequence[int]) -> Tuple[Tuple[int, ...], ...]:
    bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return tuple(tuple(range(bounds[k], bounds[k + 1])) for k in range(len(sizes)))


def _check_sizes(sizes: Sequence[int], n: int) -> Tuple[int, ...]:
    sizes = tuple(int(s) for s in sizes)
    if not sizes or any(s <= 0 for s in sizes) or sum(sizes) != n:
        raise DecompositionError(f"fold sizes {sizes} must be positive and sum to n={n}")
    return sizes


def _as_data(X: ArrayLike) -> NDArray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DecompositionError(f"X must be a vector or an n x p matrix, got shape {X.shape}")
    return X


# ---------------------------------------------------------------------------
# the algorithm
# ---------------------------------------------------------------------------


def general_decompose(
    X: ArrayLike,
    plan: OrthogonalPlan,
    sigma_prime: Union[CovModel, ArrayLike, None] = None,
    seed: SeedLike = None,
) -> FoldSet:
    """Decompose ``X`` (n x p, or a length-p vector for n=1) into folds.

    Draws ``plan.r`` rows from ``N_p(0, sigma_prime)``, interleaves them with
    the data rows, premultiplies by ``plan.Q`` and splits the rows into the
    plan's fold groups. ``sigma_prime`` defaults to the identity.
    """
    X = _as_data(X)
    n, p = X.shape
    if n != plan.n:
        raise DecompositionError(f"plan expects n={plan.n} data rows, got {n}")
    sigma_prime = Isotropic(1.0, p) if sigma_prime is None else as_cov(sigma_prime)
    if sigma_prime.dim != p:
        raise DecompositionError(f"sigma_prime has dimension {sigma_prime.dim}, data has p={p}")
    rng = as_rng(seed)
    aug = np.empty((n + plan.r, p))
    aug[list(plan.data_slots)] = X
    if plan.r:
        aug[list(plan.noise_slots)] = sample_gaussian_rows(plan.r, sigma_prime, rng)
    xp = plan.Q @ aug
    folds = tuple(xp[list(g)] for g in plan.groups)
    return FoldSet(folds=folds, plan=plan, sigma_prime=sigma_prime, n=n, p=p)


def reconstruct(fs: FoldSet) -> NDArray:
    """Recover the original ``n x p`` data from a fold set."""
    plan = fs.plan
    if len(fs.folds) != plan.K or any(f.shape != (len(g), fs.p) for f, g in zip(fs.folds, plan.groups)):
        raise DecompositionError("fold shapes do not match the plan metadata")
    aug = plan.Q.T @ fs.rotated()
    return aug[list(plan.data_slots)]


# ---------------------------------------------------------------------------
# plan constructors
# ---------------------------------------------------------------------------


def make_plan_identity(n: int = 1) -> OrthogonalPlan:
    return OrthogonalPlan(np.eye(n), 0, tuple(range(n)), (tuple(range(n)),), kind="custom")


def make_plan_sample_split(n: int, sizes: Sequence[int], seed: SeedLike = None) -> OrthogonalPlan:
    """Uniformly random permutation ``Q``: the folds are a random partition of
    the rows of ``X``."""
    if n <= 1:
        raise DecompositionError("sample splitting needs n > 1 rows")
    sizes = _check_sizes(sizes, n)
    perm = as_rng(seed).permutation(n)
    Q = np.eye(n)[perm]
    return OrthogonalPlan(Q, 0, tuple(range(n)), _consecutive_groups(sizes), kind="sample_split",
                          seed=seed if isinstance(seed, int) else None, params={"sizes": list(sizes)})


def _block_plan(q_small: NDArray, n: int, kind: str, params: dict, seed=None) -> OrthogonalPlan:
    """``Q = I_n ⊗ q_small``; each data row is followed by its K-1 noise rows
    and fold k collects rows k, k+K, k+2K, ..."""
    K = q_small.shape[0]
    Q = np.kron(np.eye(n), q_small)
    data_slots = tuple(i * K for i in range(n))
    groups = tuple(tuple(i * K + k for i in range(n)) for k in range(K))
    return OrthogonalPlan(Q, n * (K - 1), data_slots, groups, kind=kind, seed=seed, params=params)


def _check_eps(eps: ArrayLike) -> NDArray:
    eps = np.asarray(eps, dtype=float).ravel()
    if eps.size == 0 or np.any(~np.isfinite(eps)) or np.any(eps <= 0) or abs(eps.sum() - 1.0) > 1e-12:
        raise DecompositionError(f"eps must be positive and sum to 1, got {eps.tolist()}")
    return eps


def make_plan_thinning(eps: ArrayLike, n: int = 1) -> OrthogonalPlan:
    """K-fold Gaussian thinning. Independent folds only when the noise
    covariance equals the true covariance of the rows."""
    eps = _check_eps(eps)
    q_small = complete_orthogonal(np.sqrt(eps))
    return _block_plan(q_small, n, "thinning", {"eps": eps.tolist()})


def make_plan_fission(n: int = 1) -> OrthogonalPlan:
    """Two-fold fission: ``(X + W)/sqrt(2)`` and ``(X - W)/sqrt(2)``."""
    s = 1.0 / np.sqrt(2.0)
    return _block_plan(np.array([[s, s], [s, -s]]), n, "fission", {})


def make_plan_dependent(n: int, K: int, q_col: ArrayLike, seed: SeedLike = None) -> OrthogonalPlan:
    """K dependent folds whose data weights are ``q_col`` (a unit vector).

    For n > 1 the block form ``I_n ⊗ Q'`` is used so rows within a fold stay
    independent and identically distributed.
    """
    q = np.asarray(q_col, dtype=float).ravel()
    if q.size != K:
        raise DecompositionError(f"q_col has {q.size} entries but K={K}")
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise DecompositionError(f"q_col must have unit norm, got {np.linalg.norm(q)}")
    if n < 1:
        raise DecompositionError("n must be >= 1")
    kind = "dependent" if n == 1 else "block"
    return _block_plan(complete_orthogonal(q), n, kind, {"q_col": q.tolist()})


def make_plan_info_preserving(n: int, sizes: Sequence[int], seed: SeedLike = None) -> OrthogonalPlan:
    """Random orthogonal ``Q`` with ``Q 1 = 1``: the rotated rows are again iid
    ``N_p(mu, Sigma)`` without knowledge of either parameter."""
    if n == 1:
        raise ImpossibleDecompositionError(IMPOSSIBLE_MSG)
    if n < 1:
        raise DecompositionError("n must be >= 1")
    sizes = _check_sizes(sizes, n)
    V = complete_orthogonal(np.full(n, 1.0 / np.sqrt(n)))
    inner = np.eye(n)
    inner[1:, 1:] = haar_orthogonal(n - 1, seed)
    Q = V @ inner @ V.T
    return OrthogonalPlan(Q, 0, tuple(range(n)), _consecutive_groups(sizes), kind="info_preserving",
                          seed=seed if isinstance(seed, int) else None, params={"sizes": list(sizes)})


def independent_split(
    X: ArrayLike,
    sizes: Optional[Sequence[int]] = None,
    eps: Optional[ArrayLike] = None,
    sigma: Union[CovModel, ArrayLike, None] = None,
    seed: SeedLike = None,
) -> FoldSet:
    """Split ``X`` into mutually independent folds when that is possible.

    * known ``sigma``: thinning with weights ``eps`` (noise covariance = sigma);
    * n > 1, unknown ``sigma``: information-preserving split into ``sizes``;
    * n = 1, p > 1, unknown ``sigma``: raises :class:`ImpossibleDecompositionError`.
    """
    X = _as_data(X)
    n, p = X.shape
    rng = as_rng(seed)
    if sigma is not None:
        if eps is None:
            raise DecompositionError("thinning with known sigma needs eps")
        return general_decompose(X, make_plan_thinning(eps, n), sigma, rng)
    if n == 1:
        raise ImpossibleDecompositionError(IMPOSSIBLE_MSG)
    if sizes is None:
        raise DecompositionError("an information-preserving split needs fold sizes")
    return general_decompose(X, make_plan_info_preserving(n, sizes, rng), None, rng)


def gamma_dirichlet_thin(x: float, mu: float, eps: ArrayLike, seed: SeedLike = None) -> NDArray:
    """Split ``(x - mu)**2`` of a scalar Gaussian with known mean into K
    independent Gamma(eps_k/2, rate 1/(2 sigma^2)) pieces."""
    eps = _check_eps(eps)
    rng = as_rng(seed)
    g = rng.standard_gamma(eps / 2.0)
    total = g.sum()
    if total == 0.0:
        # all shape-eps/2 draws underflowed; redraw is the only unbiased fix
        return gamma_dirichlet_thin(x, mu, eps, rng)
    return (float(x) - float(mu)) ** 2 * (g / total)


def plan_from_spec(spec: dict, n: int, seed: SeedLike = None) -> OrthogonalPlan:
    """Build a plan from a config mapping, e.g. ``{"kind": "thinning",
    "eps": [0.5, 0.5]}``."""
    kind = spec.get("kind")
    if kind == "thinning":
        return make_plan_thinning(spec["eps"], n)
    if kind == "fission":
        return make_plan_fission(n)
    if kind in ("dependent", "block"):
        q = spec["q_col"]
        return make_plan_dependent(n, len(q), q, seed)
    if kind == "sample_split":
        return make_plan_sample_split(n, spec["sizes"], seed)
    if kind == "info_preserving":
        return make_plan_info_preserving(n, spec["sizes"], seed)
    if kind in ("identity", None):
        return make_plan_identity(n)
    if kind == "custom":
        return OrthogonalPlan.from_dict(spec)
    raise DecompositionError(f"unknown plan kind {kind!r}")


def foldset_to_dict(fs: FoldSet) -> dict:
    return {
        "plan": fs.plan.to_dict(),
        "sigma_prime": fs.sigma_prime.to_dict(),
        "n": fs.n,
        "p": fs.p,
    }


def foldset_from_parts(folds: Sequence[NDArray], meta: dict) -> FoldSet:
    plan = OrthogonalPlan.from_dict(meta["plan"])
    p = int(meta["p"])
    folds = tuple(np.asarray(f, dtype=float).reshape(len(g), p) for f, g in zip(folds, plan.groups))
    return FoldSet(folds, plan, cov_from_dict(meta["sigma_prime"]), int(meta["n"]), p)
