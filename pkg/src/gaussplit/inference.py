"""Selective inference on the largest row-covariance entry of a
matrix-variate Gaussian with AR(1) column covariance.

Data ``X`` is ``a x b`` with ``vec(X) ~ N(0, Gamma(rho) ⊗ Delta)`` (column-major
``vec``), ``Delta`` a correlation matrix. The largest off-diagonal entry of a
sample row-covariance is selected and tested for being zero with a
likelihood-ratio test built from one of three likelihoods:

* ``"a"``: the full data (selection and test reuse ``X``),
* ``"b"``: the marginal law of fold 2,
* ``"c"``: the conditional law of fold 2 given fold 1.

Every likelihood is a sum of terms ``log N(vec(Y); 0, s (Gamma ⊗ Delta) + t I)``
evaluated in the joint eigenbasis of ``Gamma`` and ``Delta``, so a
log-likelihood and its gradient cost two small symmetric eigensolves.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg as sla
from scipy import optimize, stats

from .decompose import general_decompose, make_plan_dependent
from .linalg import AR1, CovarianceError, Dense, Isotropic, Kronecker, SeedLike, ar1_matrix_deriv, sample_matrix_normal

LOG_2PI = math.log(2.0 * math.pi)
PENALTY = 5e5
METHODS = ("a", "b", "c")


class OptimizationError(RuntimeError):
    """A likelihood fit did not converge; ``diagnostics`` holds the best iterate."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True, eq=False)
class MatrixNormalModel:
    """Zero-mean ``N_{a x b}(0, Delta, Gamma(rho))``."""

    Delta: NDArray
    rho: float
    b: int

    def __post_init__(self):
        D = np.array(self.Delta, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ValueError("Delta must be square")
        if not np.allclose(np.diag(D), 1.0, atol=1e-10) or not np.allclose(D, D.T, atol=1e-12):
            raise ValueError("Delta must be a symmetric matrix with unit diagonal")
        if np.linalg.eigvalsh(D)[0] <= 0:
            raise CovarianceError("Delta is not positive definite")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        object.__setattr__(self, "Delta", D)

    @property
    def a(self) -> int:
        return self.Delta.shape[0]

    def cov(self) -> Kronecker:
        return Kronecker(AR1(self.rho, self.b), Dense(self.Delta))

    def sample(self, seed: SeedLike = None) -> NDArray:
        return sample_matrix_normal(0.0, self.Delta, AR1(self.rho, self.b), seed)


def block_delta(a: int, omega: float, size: int = 2) -> NDArray:
    """``diag(omega 11' + (1 - omega) I_size, I_{a - size})``."""
    D = np.eye(a)
    D[:size, :size] = omega + (1.0 - omega) * np.eye(size)
    return D


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------


def sample_rowcov(Xm: ArrayLike, centered: bool = False) -> NDArray:
    """``(1/b) sum_j x_j x_j'`` over the columns ``x_j`` of ``Xm``; with
    ``centered`` the row means are removed first."""
    Xm = np.asarray(Xm, dtype=float)
    if Xm.ndim != 2 or Xm.shape[1] < 2:
        raise ValueError("need an a x b matrix with b >= 2")
    if centered:
        Xm = Xm - Xm.mean(axis=1, keepdims=True)
    return Xm @ Xm.T / Xm.shape[1]


@dataclass(frozen=True)
class SelectionResult:
    i: int
    j: int
    value: float
    source: str

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.i, self.j)


def select_entry(Delta_hat: ArrayLike, source: str = "X") -> SelectionResult:
    """Off-diagonal entry of largest magnitude; ties go to the
    lexicographically smallest ``(i, j)`` with ``i < j``."""
    D = np.asarray(Delta_hat, dtype=float)
    if D.shape[0] < 2:
        raise ValueError("need at least two rows")
    iu, ju = np.triu_indices(D.shape[0], k=1)
    vals = np.abs(D[iu, ju])
    k = int(np.argmax(vals))  # first maximum in row-major order
    return SelectionResult(int(iu[k]), int(ju[k]), float(D[iu[k], ju[k]]), source)


# ---------------------------------------------------------------------------
# correlation-matrix parameterization
# ---------------------------------------------------------------------------


def _tril(a: int) -> Tuple[NDArray, NDArray]:
    return np.tril_indices(a, k=-1)


def corr_cholesky(y: NDArray, a: int) -> Tuple[NDArray, NDArray, NDArray]:
    """Unit-row Cholesky factor from unconstrained ``y``.

    Canonical partial correlations ``z = tanh(y)`` fill the strict lower
    triangle; row ``i`` is ``L_ij = z_ij r_ij`` (``j < i``) and ``L_ii = r_ii``
    with ``r_ij = prod_{k<j} sqrt(1 - z_ik^2)``. Returns ``(L, Z, R)``.
    """
    Z = np.zeros((a, a))
    Z[_tril(a)] = np.tanh(y)
    s = np.sqrt(1.0 - Z * Z)
    R = np.ones((a, a))
    R[:, 1:] = np.cumprod(s[:, :-1], axis=1)
    L = np.tril(Z * R, k=-1) + np.diag(np.diag(R))
    return L, Z, R


def corr_from_unconstrained(y: NDArray, a: int) -> NDArray:
    L = corr_cholesky(y, a)[0]
    D = L @ L.T
    np.fill_diagonal(D, 1.0)
    return D


def unconstrained_from_corr(D: NDArray) -> NDArray:
    """Inverse of :func:`corr_from_unconstrained`."""
    a = D.shape[0]
    L = np.linalg.cholesky(D)
    L = L / np.linalg.norm(L, axis=1, keepdims=True)
    Z = np.zeros((a, a))
    for i in range(1, a):
        rem = 1.0
        for j in range(i):
            z = L[i, j] / math.sqrt(rem)
            z = min(max(z, -1.0 + 1e-15), 1.0 - 1e-15)
            Z[i, j] = z
            rem *= 1.0 - z * z
    return np.arctanh(Z[_tril(a)])


def _corr_backprop(G: NDArray, L: NDArray, Z: NDArray, R: NDArray) -> NDArray:
    """Gradient wrt ``y`` given ``G = d f / d Delta`` (symmetric)."""
    gL = 2.0 * G @ L
    gL = np.tril(gL)
    S = gL * L
    # T_im = sum_{m < j <= i} S_ij
    T = np.cumsum(S[:, ::-1], axis=1)[:, ::-1] - S
    gy = (1.0 - Z * Z) * gL * R - Z * T
    return gy[_tril(L.shape[0])]


# ---------------------------------------------------------------------------
# likelihood in the eigenbasis
# ---------------------------------------------------------------------------


def ar1_eig(rho: float, b: int) -> Tuple[NDArray, NDArray]:
    """Eigenpairs of the AR(1) correlation matrix via its tridiagonal inverse."""
    if b == 1:
        return np.ones(1), np.ones((1, 1))
    d = np.full(b, 1.0 + rho * rho)
    d[0] = d[-1] = 1.0
    e = np.full(b - 1, -rho)
    w, V = sla.eigh_tridiagonal(d, e)
    return (1.0 - rho * rho) / w, V


@dataclass
class _Eig:
    alpha: NDArray  # Gamma eigenvalues (b)
    P: NDArray
    beta: NDArray  # Delta eigenvalues (a)
    R: NDArray
    dGamma: Optional[NDArray]


def _eig(Delta: NDArray, rho: float, b: int, need_grad: bool) -> _Eig:
    alpha, P = ar1_eig(rho, b)
    beta, R = np.linalg.eigh(Delta)
    dG = ar1_matrix_deriv(rho, b) if need_grad else None
    return _Eig(alpha, P, beta, R, dG)


def _block(Ym: NDArray, s: float, t: float, e: _Eig, need_grad: bool):
    """``log N(vec(Ym); 0, s (Gamma ⊗ Delta) + t I)`` with gradients wrt
    ``Delta`` (a x a, symmetric) and ``rho``."""
    a, b = Ym.shape
    Z = e.R.T @ Ym @ e.P
    c = s * np.outer(e.beta, e.alpha) + t
    if c.min() <= 0:
        raise CovarianceError("covariance is not positive definite")
    W = Z / c
    ll = -0.5 * (a * b * LOG_2PI + np.log(c).sum() + np.sum(Z * W))
    if not need_grad:
        return ll, None, None
    inv = 1.0 / c
    # d/dDelta = s/2 [U Gamma U' - R diag(sum_j alpha_j / c_kj) R']
    A = (W * e.alpha) @ W.T
    dvec = inv @ e.alpha
    gD = 0.5 * s * (e.R @ (A - np.diag(dvec)) @ e.R.T)
    # d/drho = s/2 [tr(B W' diag(beta) W) - sum_jk B_jj beta_k / c_kj]
    B = e.P.T @ e.dGamma @ e.P
    Wb = W.T @ (W * e.beta[:, None])
    grho = 0.5 * s * (np.sum(B * Wb) - np.diag(B) @ (e.beta @ inv))
    return ll, 0.5 * (gD + gD.T), grho


@dataclass(frozen=True, eq=False)
class LikelihoodSpec:
    """A log-likelihood in ``(Delta, rho)``.

    ``terms`` is a list of ``(sign, Ym, s, t)``: the log-likelihood is
    ``sum sign * log N(vec(Ym); 0, s (Gamma ⊗ Delta) + t I) + const``.
    """

    method: str
    terms: Tuple[Tuple[float, NDArray, float, float], ...]
    const: float = 0.0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.terms[0][1].shape

    def loglik(self, Delta: NDArray, rho: float, need_grad: bool = False):
        a, b = self.shape
        e = _eig(Delta, rho, b, need_grad)
        ll = self.const
        gD = np.zeros((a, a)) if need_grad else None
        grho = 0.0
        for sign, Ym, s, t in self.terms:
            v, g, r = _block(Ym, s, t, e, need_grad)
            ll += sign * v
            if need_grad:
                gD += sign * g
                grho += sign * r
        if need_grad:
            return ll, gD, grho
        return ll


def _vec_to_mat(x: NDArray, a: int, b: int) -> NDArray:
    return np.asarray(x, dtype=float).reshape((a, b), order="F")


def naive_likelihood(Xm: ArrayLike) -> LikelihoodSpec:
    Xm = np.asarray(Xm, dtype=float)
    return LikelihoodSpec("a", ((1.0, Xm, 1.0, 0.0),))


def marginal_likelihood(X2m: ArrayLike, q1: float) -> LikelihoodSpec:
    """Law of fold 2 with unit isotropic noise: ``q2^2 (Gamma ⊗ Delta) + q1^2 I``."""
    X2m = np.asarray(X2m, dtype=float)
    return LikelihoodSpec("b", ((1.0, X2m, 1.0 - q1 * q1, q1 * q1),))


def conditional_likelihood(X1m: ArrayLike, X2m: ArrayLike, q1: float, q2: float) -> LikelihoodSpec:
    """Law of fold 2 given fold 1 with unit isotropic noise.

    With ``x = q1 x1 + q2 x2`` and ``w = q2 x1 - q1 x2`` the pair ``(x, w)``
    is an orthogonal image of ``(x1, x2)``, so
    ``log p(x2 | x1) = log N(x; Sigma) + log N(w; I) - log N(x1; q1^2 Sigma + q2^2 I)``.
    """
    X1m, X2m = np.asarray(X1m, dtype=float), np.asarray(X2m, dtype=float)
    if abs(q1 * q1 + q2 * q2 - 1.0) > 1e-10:
        raise ValueError("q1^2 + q2^2 must equal 1")
    Xm = q1 * X1m + q2 * X2m
    Wm = q2 * X1m - q1 * X2m
    const = -0.5 * (Wm.size * LOG_2PI + np.sum(Wm * Wm))
    return LikelihoodSpec("c", ((1.0, Xm, 1.0, 0.0), (-1.0, X1m, q1 * q1, q2 * q2)), const)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _expit(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


@dataclass
class FitResult:
    Delta: NDArray
    rho: float
    loglik: float
    objective: float
    iterations: int
    converged: bool
    grad_norm: float
    message: str
    x: NDArray = field(repr=False)

    def diagnostics(self) -> dict:
        return {"loglik": self.loglik, "objective": self.objective, "iterations": self.iterations,
                "converged": self.converged, "grad_norm": self.grad_norm, "message": self.message}


GTOL = 1e-6
MAXITER = 500
ACCEPT_GRAD = 1e-3


def _permutation(a: int, pair: Optional[Tuple[int, int]]) -> NDArray:
    """Row order that moves ``pair`` to positions (0, 1)."""
    if pair is None:
        return np.arange(a)
    i, j = pair
    rest = [k for k in range(a) if k not in (i, j)]
    return np.array([i, j] + rest)


def optimize_model(spec: LikelihoodSpec, init: Optional[MatrixNormalModel] = None,
                   pair: Optional[Tuple[int, int]] = None, penalty: float = 0.0,
                   x0: Optional[NDArray] = None, gtol: float = GTOL, maxiter: int = MAXITER) -> FitResult:
    """Maximize the log-likelihood over ``logit(rho)`` and the canonical
    partial correlations of ``Delta`` with BFGS.

    Rows are internally reordered so that ``pair`` comes first; then
    ``Delta[pair] = tanh(x[1])`` and ``penalty > 0`` adds
    ``-penalty * Delta[pair]^2`` to the objective, approximating the
    constraint ``Delta[pair] = 0``. ``x0`` (unconstrained, in that internal
    order) overrides ``init``. A fit counts as converged when BFGS reports
    success, or when it stops on precision loss with gradient infinity-norm at
    most ``1e-3``.
    """
    a, b = spec.shape
    perm = _permutation(a, pair)
    inv = np.argsort(perm)
    terms = tuple((sg, Ym[perm], s, t) for sg, Ym, s, t in spec.terms)
    pspec = LikelihoodSpec(spec.method, terms, spec.const)
    if x0 is None:
        if init is None:
            init = MatrixNormalModel(np.eye(a), 0.5, b)
        D0 = init.Delta[np.ix_(perm, perm)]
        x0 = np.concatenate([[_logit(init.rho)], unconstrained_from_corr(D0)])
    pen = penalty if pair is not None else 0.0

    def f(x):
        rho = _expit(x[0])
        if not 0.0 < rho < 1.0:
            return np.inf, np.zeros_like(x)
        L, Zc, Rc = corr_cholesky(x[1:], a)
        D = L @ L.T
        np.fill_diagonal(D, 1.0)
        try:
            ll, gD, grho = pspec.loglik(D, rho, need_grad=True)
        except (CovarianceError, np.linalg.LinAlgError):
            return np.inf, np.zeros_like(x)
        g = np.empty_like(x)
        g[0] = grho * rho * (1.0 - rho)
        g[1:] = _corr_backprop(gD, L, Zc, Rc)
        obj = -ll
        grad = -g
        if pen:
            delta = D[1, 0]  # = tanh(x[1])
            obj += pen * delta * delta
            grad[1] += pen * 2.0 * delta * (1.0 - delta * delta)
        return obj, grad

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = optimize.minimize(f, np.asarray(x0, dtype=float), jac=True, method="BFGS",
                                options={"gtol": gtol, "maxiter": maxiter})
        obj, grad = f(res.x)
    gnorm = float(np.max(np.abs(grad))) if np.all(np.isfinite(grad)) and np.isfinite(obj) else float("inf")
    converged = bool(res.success) or (res.status == 2 and gnorm <= ACCEPT_GRAD)
    rho = _expit(res.x[0])
    Dp = corr_from_unconstrained(res.x[1:], a)
    ll = pspec.loglik(Dp, rho) if np.isfinite(obj) else -np.inf
    return FitResult(Dp[np.ix_(inv, inv)], rho, float(ll), float(obj), int(res.nit), converged, gnorm,
                     str(res.message), res.x)


# ---------------------------------------------------------------------------
# tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    method: str
    statistic: float
    p_value: float
    pair: Tuple[int, int]
    null: dict
    alt: dict
    delta_null: float

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)


def lrt_test(spec: LikelihoodSpec, pair: Tuple[int, int], init: Optional[MatrixNormalModel] = None,
             penalty: float = PENALTY, strict: bool = True) -> TestResult:
    """Likelihood-ratio test of ``Delta_pair = 0``.

    The null supremum is approximated by the penalized fit (started at
    ``init``, default ``Delta = I, rho = 0.5``); the alternative fit starts at
    the null optimum. ``T = 2 (alt loglik - null loglik)`` with the null
    log-likelihood taken without the penalty term, clamped at 0.
    """
    i, j = sorted(pair)
    if i == j:
        raise ValueError("pair must be off-diagonal")
    null = optimize_model(spec, init, pair=(i, j), penalty=penalty)
    alt = optimize_model(spec, pair=(i, j), x0=null.x)
    if strict and not (null.converged and alt.converged):
        raise OptimizationError(
            f"likelihood fit for method {spec.method} did not converge",
            {"null": null.diagnostics(), "alt": alt.diagnostics()},
        )
    T = max(0.0, 2.0 * (alt.loglik - null.loglik))
    p = float(stats.chi2.sf(T, 1))
    return TestResult(spec.method, T, p, (i, j), null.diagnostics(), alt.diagnostics(), float(null.Delta[i, j]))


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    a: int = 10
    b: int = 50
    rho: float = 0.9
    omega: float = 0.0
    q1: float = 0.71
    methods: Tuple[str, ...] = METHODS
    replicates: int = 400
    seed: int = 0
    centered: bool = False

    def __post_init__(self):
        if self.a < 2 or self.b < 2:
            raise ValueError("need a >= 2 and b >= 2")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not -1.0 < self.omega < 1.0:
            raise ValueError("omega must lie in (-1, 1)")
        if not 0.0 < self.q1 < 1.0:
            raise ValueError("q1 must lie in (0, 1)")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be drawn from {METHODS}, got {self.methods}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        object.__setattr__(self, "methods", tuple(self.methods))

    def model(self) -> MatrixNormalModel:
        return MatrixNormalModel(block_delta(self.a, self.omega), self.rho, self.b)


def split_matrix(Xm: NDArray, q1: float, seed: SeedLike = None) -> Tuple[NDArray, NDArray]:
    """Two dependent folds of ``vec(Xm)`` with unit isotropic noise."""
    a, b = Xm.shape
    q2 = math.sqrt(1.0 - q1 * q1)
    plan = make_plan_dependent(1, 2, [q1, q2])
    fs = general_decompose(Xm.ravel(order="F"), plan, Isotropic(1.0, a * b), seed=seed)
    return _vec_to_mat(fs.folds[0], a, b), _vec_to_mat(fs.folds[1], a, b)


def run_replicate(cfg: SimConfig, index: int) -> List[dict]:
    """All requested methods on one replicate; seed is ``cfg.seed + index``."""
    seed = cfg.seed + index
    rng = np.random.default_rng(seed)
    Xm = cfg.model().sample(rng)
    q1 = cfg.q1
    q2 = math.sqrt(1.0 - q1 * q1)
    rows = []
    X1m = X2m = None
    if any(m in cfg.methods for m in ("b", "c")):
        X1m, X2m = split_matrix(Xm, q1, rng)
    for method in cfg.methods:
        if method == "a":
            sel = select_entry(sample_rowcov(Xm, cfg.centered), "X")
            spec = naive_likelihood(Xm)
        else:
            sel = select_entry(sample_rowcov(X1m, cfg.centered), "X1")
            spec = marginal_likelihood(X2m, q1) if method == "b" else conditional_likelihood(X1m, X2m, q1, q2)
        row = {"replicate": index, "seed": seed, "method": method, "omega": cfg.omega, "q1": q1,
               "i": sel.i, "j": sel.j, "detected": int(sel.pair == (0, 1)),
               "statistic": float("nan"), "p_value": float("nan"), "converged": 0, "error": ""}
        try:
            res = lrt_test(spec, sel.pair)
            row.update(statistic=res.statistic, p_value=res.p_value, converged=1,
                       null_iterations=res.null["iterations"], alt_iterations=res.alt["iterations"],
                       delta_null=res.delta_null)
        except (OptimizationError, CovarianceError, np.linalg.LinAlgError, FloatingPointError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _run_chunk(args):
    cfg, indices = args
    return [r for i in indices for r in run_replicate(cfg, i)]


def simulate(cfg: SimConfig, workers: int = 1) -> List[dict]:
    """Replicate table ordered by replicate index then method."""
    indices = list(range(cfg.replicates))
    if workers <= 1:
        rows = _run_chunk((cfg, indices))
    else:
        chunks = [indices[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [r for part in pool.map(_run_chunk, [(cfg, c) for c in chunks]) for r in part]
    order = {m: k for k, m in enumerate(cfg.methods)}
    rows.sort(key=lambda r: (r["replicate"], order[r["method"]]))
    return rows


def summarize(rows: Sequence[dict]) -> Dict[str, dict]:
    """Per-method KS uniformity test, detection rate and conditional power."""
    out = {}
    for method in sorted({r["method"] for r in rows}):
        rs = [r for r in rows if r["method"] == method]
        ok = [r for r in rs if r["converged"]]
        p = np.array([r["p_value"] for r in ok])
        det = np.array([r["detected"] for r in rs])
        rej_det = [r["p_value"] <= 0.05 for r in ok if r["detected"]]
        ks = stats.kstest(p, "uniform") if p.size else None
        out[method] = {
            "replicates": len(rs),
            "failures": len(rs) - len(ok),
            "ks_statistic": float(ks.statistic) if ks else float("nan"),
            "ks_pvalue": float(ks.pvalue) if ks else float("nan"),
            "detection": float(det.mean()) if det.size else float("nan"),
            "conditional_power": float(np.mean(rej_det)) if rej_det else float("nan"),
            "rejection_rate": float(np.mean(p <= 0.05)) if p.size else float("nan"),
        }
    return out


SIM_COLUMNS = ["replicate", "seed", "method", "omega", "q1", "i", "j", "detected", "statistic", "p_value",
               "converged", "null_iterations", "alt_iterations", "delta_null", "error"]


def write_rows_csv(path, rows: Sequence[dict], comments: Iterable[str] = (),
                   columns: Sequence[str] = SIM_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\r\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def power_sweep(base: SimConfig, omegas: Sequence[float], q1s: Sequence[float], workers: int = 1) -> List[dict]:
    """Detection rate and conditional power of method (c) over a grid of
    ``(q1, omega)``; each cell reuses ``base.seed`` so cells share draws of
    the underlying noise."""
    out = []
    for q1 in q1s:
        for omega in omegas:
            cfg = SimConfig(a=base.a, b=base.b, rho=base.rho, omega=float(omega), q1=float(q1), methods=("c",),
                            replicates=base.replicates, seed=base.seed, centered=base.centered)
            rows = simulate(cfg, workers)
            det = np.array([r["detected"] for r in rows], dtype=float)
            hits = [r["p_value"] <= 0.05 for r in rows if r["detected"] and r["converged"]]
            out.append({"q1": float(q1), "omega": float(omega), "replicates": len(rows),
                        "failures": sum(1 for r in rows if not r["converged"]),
                        "detection": float(det.mean()), "detected": int(det.sum()),
                        "conditional_power": float(np.mean(hits)) if hits else float("nan")})
    return out
