"""Structured covariance models, eigendecompositions and Gaussian sampling.

Every covariance in the package is carried as a :class:`CovModel` so that
structure (isotropic, AR(1), Kronecker) survives until a routine actually
needs a dense matrix.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg as sla

SeedLike = Union[int, np.random.Generator, None]

ORTH_TOL = 1e-10


class CovarianceError(ValueError):
    """Raised for covariance parameters that cannot give a PD matrix."""


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# covariance models
# ---------------------------------------------------------------------------


class CovModel:
    """Base class; subclasses are frozen dataclasses."""

    @property
    def dim(self) -> int:  # pragma: no cover - abstract
        raise NotImplementedError

    def materialize(self) -> NDArray:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_dict(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Dense(CovModel):
    matrix: NDArray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise CovarianceError(f"dense covariance must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise CovarianceError("dense covariance has non-finite entries")
        if not np.allclose(m, m.T, rtol=0, atol=1e-10 * max(1.0, np.abs(m).max())):
            raise CovarianceError("dense covariance is not symmetric")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def materialize(self) -> NDArray:
        return self.matrix.copy()

    def to_dict(self) -> dict:
        return {"kind": "dense", "matrix": self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class Diagonal(CovModel):
    variances: NDArray

    def __post_init__(self):
        v = np.array(self.variances, dtype=float).ravel()
        if v.size == 0 or not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise CovarianceError("diagonal variances must be finite and > 0")
        v.setflags(write=False)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.variances.size

    def materialize(self) -> NDArray:
        return np.diag(self.variances)

    def to_dict(self) -> dict:
        return {"kind": "diagonal", "variances": self.variances.tolist()}


@dataclass(frozen=True)
class Isotropic(CovModel):
    """``variance * I`` of dimension ``size``."""

    variance: float
    size: int

    def __post_init__(self):
        if not np.isfinite(self.variance) or self.variance <= 0:
            raise CovarianceError(f"isotropic variance must be > 0, got {self.variance}")
        if int(self.size) < 1:
            raise CovarianceError("isotropic dimension must be >= 1")
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "size", int(self.size))

    @property
    def dim(self) -> int:
        return self.size

    def materialize(self) -> NDArray:
        return self.variance * np.eye(self.size)

    def to_dict(self) -> dict:
        return {"kind": "isotropic", "variance": self.variance, "size": self.size}


@dataclass(frozen=True)
class AR1(CovModel):
    """First-order autoregressive correlation matrix, entries ``rho**|i-j|``."""

    rho: float
    size: int

    def __post_init__(self):
        if not (-1.0 < self.rho < 1.0):
            raise CovarianceError(f"AR(1) requires rho in (-1, 1), got {self.rho}")
        if int(self.size) < 1:
            raise CovarianceError("AR(1) dimension must be >= 1")
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "size", int(self.size))

    @property
    def dim(self) -> int:
        return self.size

    def materialize(self) -> NDArray:
        return ar1_matrix(self.rho, self.size)

    def to_dict(self) -> dict:
        return {"kind": "ar1", "rho": self.rho, "size": self.size}


@dataclass(frozen=True)
class Kronecker(CovModel):
    """``left ⊗ right``; with column-stacked ``vec`` this is the covariance of a
    matrix-normal whose column covariance is ``left`` and row covariance is
    ``right``."""

    left: CovModel
    right: CovModel

    @property
    def dim(self) -> int:
        return self.left.dim * self.right.dim

    def materialize(self) -> NDArray:
        return np.kron(self.left.materialize(), self.right.materialize())

    def to_dict(self) -> dict:
        return {"kind": "kronecker", "left": self.left.to_dict(), "right": self.right.to_dict()}


def cov_from_dict(d: dict) -> CovModel:
    kind = d["kind"]
    if kind == "dense":
        return Dense(np.asarray(d["matrix"], dtype=float))
    if kind == "diagonal":
        return Diagonal(np.asarray(d["variances"], dtype=float))
    if kind == "isotropic":
        return Isotropic(d["variance"], d["size"])
    if kind == "ar1":
        return AR1(d["rho"], d["size"])
    if kind == "kronecker":
        return Kronecker(cov_from_dict(d["left"]), cov_from_dict(d["right"]))
    raise CovarianceError(f"unknown covariance kind {kind!r}")


def as_cov(cov: Union[CovModel, ArrayLike]) -> CovModel:
    """Wrap a plain array as :class:`Dense`; pass models through."""
    if isinstance(cov, CovModel):
        return cov
    arr = np.asarray(cov, dtype=float)
    if arr.ndim == 0:
        return Dense(arr.reshape(1, 1))
    return Dense(arr)


def ar1_matrix(rho: float, size: int) -> NDArray:
    lags = np.abs(np.subtract.outer(np.arange(size), np.arange(size)))
    return rho ** lags


def ar1_matrix_deriv(rho: float, size: int) -> NDArray:
    """Entrywise d/drho of :func:`ar1_matrix`."""
    lags = np.abs(np.subtract.outer(np.arange(size), np.arange(size)))
    out = np.zeros((size, size))
    nz = lags > 0
    out[nz] = lags[nz] * rho ** (lags[nz] - 1)
    return out


def materialize(cov: CovModel) -> NDArray:
    """Dense symmetric matrix equal to ``cov``."""
    return as_cov(cov).materialize()


# ---------------------------------------------------------------------------
# eigendecomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EigenPair:
    """``vectors @ diag(values) @ vectors.T``; values sorted descending.

    For Kronecker models ``factors`` holds the per-factor pairs so callers can
    rotate vectors without forming the full ``vectors`` matrix.
    """

    vectors: Optional[NDArray]
    values: NDArray
    factors: Optional[tuple] = None
    order: Optional[NDArray] = None

    def full_vectors(self) -> NDArray:
        if self.vectors is not None:
            return self.vectors
        left, right = self.factors
        return np.kron(left.full_vectors(), right.full_vectors())[:, self.order]

    def rotate(self, x: NDArray) -> NDArray:
        """Return ``P.T @ x`` for a vector ``x`` (eigenvalue order)."""
        x = np.asarray(x, dtype=float)
        if self.factors is None:
            return self.vectors.T @ x
        left, right = self.factors
        b, a = left.values.size, right.values.size
        xm = x.reshape((a, b), order="F")
        pl = left.full_vectors()
        pr = right.full_vectors()
        z = (pr.T @ xm @ pl).ravel(order="F")
        return z[self.order]

    def reconstruct(self) -> NDArray:
        p = self.full_vectors()
        return (p * self.values) @ p.T


def _sorted_pair(vals: NDArray, vecs: NDArray) -> EigenPair:
    # eigh returns ascending; stable sort on -vals keeps index order for ties
    order = np.argsort(-vals, kind="stable")
    return EigenPair(vectors=vecs[:, order], values=vals[order])


def eig_sym(cov: Union[CovModel, ArrayLike], lazy: bool = False) -> EigenPair:
    """Eigendecomposition of a symmetric PD covariance model.

    Kronecker models are decomposed factor-wise: ``P = P_left ⊗ P_right`` and
    ``values = values_left ⊗ values_right``. With ``lazy=True`` the full
    Kronecker eigenvector matrix is not formed.
    """
    cov = as_cov(cov)
    if isinstance(cov, Isotropic):
        return EigenPair(np.eye(cov.size), np.full(cov.size, cov.variance))
    if isinstance(cov, Diagonal):
        v = cov.variances
        order = np.argsort(-v, kind="stable")
        return EigenPair(np.eye(v.size)[:, order], v[order])
    if isinstance(cov, Kronecker):
        left = eig_sym(cov.left, lazy=lazy)
        right = eig_sym(cov.right, lazy=lazy)
        vals = np.kron(left.values, right.values)
        order = np.argsort(-vals, kind="stable")
        pair = EigenPair(None, vals[order], factors=(left, right), order=order)
        if lazy:
            return pair
        return EigenPair(pair.full_vectors(), pair.values)
    m = cov.materialize()
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(f"symmetric eigensolver failed: {exc}") from exc
    if vals[0] <= 0:
        raise CovarianceError(f"covariance is not positive definite (min eigenvalue {vals[0]:.3g})")
    return _sorted_pair(vals, vecs)


# ---------------------------------------------------------------------------
# orthogonal matrices
# ---------------------------------------------------------------------------


def orth_complete(v: ArrayLike) -> NDArray:
    """Orthonormal basis (K x (K-1)) of the complement of a unit vector ``v``.

    Uses the Householder reflection sending ``e1`` to ``v``, so ``[v, U]`` is
    symmetric. For K=2 this gives ``[[v1, v2], [v2, -v1]]``.
    """
    v = np.asarray(v, dtype=float).ravel()
    norm = np.linalg.norm(v)
    if v.size == 0 or abs(norm - 1.0) > 1e-10:
        raise ValueError(f"orth_complete needs a unit vector, got norm {norm}")
    k = v.size
    if k == 1:
        return np.zeros((1, 0))
    u = v.copy()
    tail = float(np.dot(v[1:], v[1:]))
    if v[0] > 0:
        # v0 - 1 without cancellation, using ||v|| = 1
        u[0] = -tail / (1.0 + v[0])
    else:
        u[0] = v[0] - 1.0
    unorm2 = u[0] ** 2 + tail
    if unorm2 == 0.0:
        return np.eye(k)[:, 1:]
    h = np.eye(k) - 2.0 * np.outer(u, u) / unorm2
    return h[:, 1:]


def complete_orthogonal(v: ArrayLike) -> NDArray:
    """Square orthogonal matrix whose first column is ``v``."""
    v = np.asarray(v, dtype=float).ravel()
    return np.column_stack([v, orth_complete(v)])


def haar_orthogonal(n: int, seed: SeedLike = None) -> NDArray:
    """Haar-distributed ``n x n`` orthogonal matrix (QR with sign fix)."""
    rng = as_rng(seed)
    if n == 0:
        return np.zeros((0, 0))
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def is_orthogonal(q: NDArray, tol: float = ORTH_TOL) -> bool:
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        return False
    return bool(np.abs(q.T @ q - np.eye(q.shape[0])).max() <= tol)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def cov_sqrt(cov: CovModel) -> NDArray:
    """Lower Cholesky factor of a covariance model (dense)."""
    cov = as_cov(cov)
    if isinstance(cov, Isotropic):
        return np.sqrt(cov.variance) * np.eye(cov.size)
    if isinstance(cov, Diagonal):
        return np.diag(np.sqrt(cov.variances))
    if isinstance(cov, Kronecker):
        return np.kron(cov_sqrt(cov.left), cov_sqrt(cov.right))
    try:
        return np.linalg.cholesky(cov.materialize())
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("covariance is not positive definite") from exc


def sample_gaussian_rows(n: int, cov: CovModel, seed: SeedLike = None) -> NDArray:
    """``n`` independent rows from ``N_p(0, cov)`` as an ``n x p`` array."""
    rng = as_rng(seed)
    cov = as_cov(cov)
    z = rng.standard_normal((n, cov.dim))
    if isinstance(cov, Isotropic):
        return np.sqrt(cov.variance) * z
    if isinstance(cov, Diagonal):
        return z * np.sqrt(cov.variances)
    return z @ cov_sqrt(cov).T


def sample_matrix_normal(
    mean: ArrayLike,
    rowcov: Union[CovModel, ArrayLike],
    colcov: Union[CovModel, ArrayLike],
    seed: SeedLike = None,
) -> NDArray:
    """One draw from the matrix normal ``N_{a x b}(mean, rowcov, colcov)``."""
    rng = as_rng(seed)
    rowcov, colcov = as_cov(rowcov), as_cov(colcov)
    mean = np.asarray(mean, dtype=float)
    a, b = rowcov.dim, colcov.dim
    if mean.ndim == 0:
        mean = np.full((a, b), float(mean))
    if mean.shape != (a, b):
        raise ValueError(f"mean shape {mean.shape} does not match covariances ({a}, {b})")
    z = rng.standard_normal((a, b))
    return mean + cov_sqrt(rowcov) @ z @ cov_sqrt(colcov).T


# ---------------------------------------------------------------------------
# CSV matrices
# ---------------------------------------------------------------------------


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_matrix_csv(path: Union[str, Path, io.TextIOBase]) -> NDArray:
    """Read a numeric matrix from CSV.

    Lines starting with ``#`` are ignored; a first row that does not parse as
    numbers is taken as a header.
    """
    if isinstance(path, (str, Path)):
        text = Path(path).read_text()
    else:
        text = path.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise ValueError("CSV contains no numeric rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("ragged CSV rows")
    return np.array([[float(c) for c in r] for r in rows], dtype=float)


def write_matrix_csv(
    path: Union[str, Path],
    matrix: ArrayLike,
    header: Optional[Sequence[str]] = None,
    comments: Sequence[str] = (),
) -> None:
    """Write a matrix with round-trip float precision (``repr``)."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="") as fh:
        for c in comments:
            for line in str(c).splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\r\n")
        if header is not None:
            w.writerow(list(header))
        for row in m:
            w.writerow([repr(float(x)) for x in row])
