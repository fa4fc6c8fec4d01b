"""Nuisance-function fits: propensity score and per-arm outcome regressions.

Three routes to the same per-observation fitted values (p_hat, m1_hat,
m0_hat): parametric (logistic MLE / per-arm least squares), fully
nonparametric (kernel regression on all covariates), and semiparametric
(kernel regression after projecting the covariates onto an estimated or
supplied low-dimensional subspace).  `assemble_nuisance` wires one method per
component and applies propensity trimming uniformly.

Kernel-regression sums include every training row; a query that is itself a
training point is not excluded.  Empty kernel windows (possible with
compactly supported kernels) raise `EmptyWindowError` from the single-query
entry point; the vector fits substitute the arm mean and count the event in a
diagnostics mapping, so callers can decide whether the fallback rate is
acceptable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .kernels import KernelSpec, kernel_values

__all__ = [
    "Dataset",
    "ParametricSpec",
    "SdrSpec",
    "ComponentSpec",
    "NuisanceConfig",
    "NuisanceFit",
    "OracleValues",
    "EstimationError",
    "NonConvergenceError",
    "RankError",
    "EmptyWindowError",
    "DegenerateStructureError",
    "FEATURE_MAPS",
    "build_features",
    "fit_logistic_mle",
    "fit_linear_ls",
    "nw_regress",
    "nw_values",
    "fit_propensity_np",
    "fit_outcome_np",
    "estimate_sdr_matrix",
    "fit_semiparametric",
    "assemble_nuisance",
    "DEFAULT_TRIM",
]

DEFAULT_TRIM = (0.005, 0.995)

# Near-cancellation threshold for kernel-sum denominators, relative to the
# total absolute kernel mass at the query (higher-order kernels take negative
# values, so a denominator can vanish without the window being empty).
_DENOM_RTOL = 1e-12


class EstimationError(Exception):
    """Base class for recoverable estimation failures."""


class NonConvergenceError(EstimationError):
    """Iterative fit failed to converge (e.g. separated logistic data)."""


class RankError(EstimationError):
    """Design matrix or Hessian is rank deficient."""


class EmptyWindowError(EstimationError):
    """No kernel mass at the query point."""


class DegenerateStructureError(EstimationError):
    """Dimension-reduction matrix could not be extracted."""


@dataclass(frozen=True)
class Dataset:
    """Observations (X, Y, D) with the conditioning columns marked.

    X is n x d; `x1_indices` selects the k < d conditioning columns; Y is the
    observed response and D the binary treatment indicator.
    """

    X: np.ndarray
    x1_indices: tuple[int, ...]
    Y: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        D = np.asarray(self.D)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "x1_indices", tuple(int(i) for i in self.x1_indices))
        if X.ndim != 2:
            raise ValueError("X must be a 2-D matrix")
        n, d = X.shape
        if n < 2:
            raise ValueError("need at least two observations")
        k = len(self.x1_indices)
        if k < 1 or k >= d:
            raise ValueError(f"need 1 <= k < d conditioning columns, got k={k}, d={d}")
        if len(set(self.x1_indices)) != k:
            raise ValueError("x1_indices must be distinct")
        if any(i < 0 or i >= d for i in self.x1_indices):
            raise ValueError("x1_indices out of range")
        if Y.shape != (n,) or D.shape != (n,):
            raise ValueError("Y and D must be length-n vectors")
        dvals = np.unique(D)
        if not np.isin(dvals, (0, 1)).all():
            raise ValueError("D must contain only 0 and 1")
        if dvals.size < 2:
            raise ValueError("need at least one treated and one control observation")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return len(self.x1_indices)

    @property
    def X1(self) -> np.ndarray:
        return self.X[:, list(self.x1_indices)]


@dataclass(frozen=True)
class ParametricSpec:
    """Named parametric family for one nuisance component."""

    role: str  # "propensity", "outcome1", "outcome0"
    feature_map: str
    link: str  # "logistic" or "identity"

    def __post_init__(self) -> None:
        if self.role not in ("propensity", "outcome1", "outcome0"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.feature_map not in FEATURE_MAPS:
            raise ValueError(f"unknown feature map {self.feature_map!r}")
        if self.role == "propensity" and self.link != "logistic":
            raise ValueError("propensity fits require the logistic link")
        if self.role != "propensity" and self.link != "identity":
            raise ValueError("outcome fits require the identity link")

    def design(self, data: "Dataset") -> np.ndarray:
        return build_features(data, self.feature_map)


@dataclass(frozen=True)
class SdrSpec:
    """Dimension-reduction request: target dimension and matrix source."""

    target_dim: int
    source: str = "oracle"  # "oracle" or "opg"
    matrix: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.target_dim < 1:
            raise ValueError("target_dim must be >= 1")
        if self.source not in ("oracle", "opg"):
            raise ValueError(f"unknown sdr source {self.source!r}")
        if self.source == "oracle":
            if self.matrix is None:
                raise ValueError("oracle sdr requires a matrix")
            m = np.asarray(self.matrix, dtype=float)
            if m.ndim != 2 or m.shape[1] != self.target_dim:
                raise ValueError("oracle matrix must have target_dim columns")
            object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class ComponentSpec:
    """Method choice for a single nuisance component."""

    method: str  # "oracle", "parametric", "nonparametric", "semiparametric"
    features: str | None = None
    kernel: KernelSpec | None = None
    h: float | None = None
    sdr: SdrSpec | None = None
    label: str | None = None

    def __post_init__(self) -> None:
        if self.method not in ("oracle", "parametric", "nonparametric", "semiparametric"):
            raise ValueError(f"unknown nuisance method {self.method!r}")
        if self.method == "parametric" and self.features is None:
            raise ValueError("parametric components need a feature map name")
        if self.method in ("nonparametric", "semiparametric"):
            if self.kernel is None or self.h is None:
                raise ValueError(f"{self.method} components need kernel and h")
            if self.h <= 0:
                raise ValueError("bandwidth must be positive")
        if self.method == "semiparametric" and self.sdr is None:
            raise ValueError("semiparametric components need an SdrSpec")

    def tag(self) -> str:
        if self.label is not None:
            return self.label
        return {"oracle": "O", "parametric": "P", "nonparametric": "N", "semiparametric": "S"}[
            self.method
        ]


@dataclass(frozen=True)
class NuisanceConfig:
    propensity: ComponentSpec
    outcome1: ComponentSpec
    outcome0: ComponentSpec
    trim: tuple[float, float] = DEFAULT_TRIM

    def __post_init__(self) -> None:
        lo, hi = self.trim
        if not (0.0 < lo < hi < 1.0):
            raise ValueError("trim bounds must satisfy 0 < lo < hi < 1")


@dataclass(frozen=True)
class OracleValues:
    """True nuisance values at the sample points, for oracle components."""

    p: np.ndarray
    m1: np.ndarray
    m0: np.ndarray


@dataclass(frozen=True)
class NuisanceFit:
    """Per-observation fitted nuisances with provenance."""

    p_hat: np.ndarray
    m1_hat: np.ndarray
    m0_hat: np.ndarray
    labels: Mapping[str, str]
    params: Mapping[str, np.ndarray] = field(default_factory=dict)
    projections: Mapping[str, np.ndarray] = field(default_factory=dict)
    trim_bounds: tuple[float, float] = DEFAULT_TRIM
    diagnostics: Mapping[str, int] = field(default_factory=dict)


def _with_intercept(*cols: np.ndarray) -> np.ndarray:
    n = cols[0].shape[0]
    return np.column_stack([np.ones(n), *cols])


FEATURE_MAPS = {
    # intercept plus every covariate
    "intercept+all": lambda data: _with_intercept(data.X),
    # intercept plus the conditioning columns only
    "intercept+x1": lambda data: _with_intercept(data.X1),
    # intercept, every covariate, and their full product
    "intercept+all+prod": lambda data: _with_intercept(data.X, data.X.prod(axis=1)),
    "intercept": lambda data: np.ones((data.n, 1)),
}


def build_features(data: Dataset, name: str) -> np.ndarray:
    """Materialize a named feature map as an n x q design matrix."""
    try:
        builder = FEATURE_MAPS[name]
    except KeyError:
        raise ValueError(f"unknown feature map {name!r}") from None
    return builder(data)


def _bernoulli_loglik(eta: np.ndarray, t: np.ndarray) -> float:
    # sum t*eta - log(1 + exp(eta)), stable in both tails
    return float(np.sum(t * eta - np.logaddexp(0.0, eta)))


def fit_logistic_mle(
    features: np.ndarray,
    targets: np.ndarray,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Logistic regression coefficients by Newton-Raphson.

    Parameters
    ----------
    features : (n, q) design matrix.
    targets : length-n vector in [0, 1].  Binary treatment indicators in the
        usual case; fractional values are accepted so the same routine can
        compute quasi-likelihood limits against known probabilities.

    Returns
    -------
    Coefficient vector of length q once the score max-norm drops below
    `tol`.

    Raises
    ------
    NonConvergenceError
        Separated data (coefficient norm above 1e6) or no convergence within
        `max_iter` iterations.
    RankError
        Singular Hessian (rank-deficient design).
    """
    F = np.asarray(features, dtype=float)
    t = np.asarray(targets, dtype=float)
    if F.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    n, q = F.shape
    if q < 1 or n <= q:
        raise ValueError(f"need n > q >= 1, got n={n}, q={q}")
    if t.shape != (n,):
        raise ValueError("targets must be a length-n vector")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("targets must lie in [0, 1]")
    tbar = t.mean()
    if not (0.0 < tbar < 1.0):
        raise NonConvergenceError("all targets identical: likelihood unbounded")

    binary = np.all((t == 0.0) | (t == 1.0))
    beta = np.zeros(q)
    loglik = _bernoulli_loglik(F @ beta, t)
    for _ in range(max_iter):
        eta = F @ beta
        mu = expit(eta)
        score = F.T @ (t - mu)
        if np.max(np.abs(score)) < tol:
            # a binary response fit exactly means the MLE ran off to
            # infinity and the score only vanished by saturation
            if binary and np.max(np.abs(t - mu)) < 1e-6:
                raise NonConvergenceError("perfectly separated data: MLE does not exist")
            return beta
        w = mu * (1.0 - mu)
        hessian = F.T @ (F * w[:, None])
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError as exc:
            raise RankError("singular Hessian in logistic fit") from exc
        # numerically stationary: the scores can sit above `tol` at large n
        # simply because beta has no more representable digits to give
        if np.max(np.abs(step)) < 1e-12 * (1.0 + np.max(np.abs(beta))):
            return beta
        # halve the step until the log-likelihood stops decreasing; the
        # slack is relative because the log-likelihood's own resolution
        # grows with n
        slack = 1e-11 * max(1.0, abs(loglik))
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            cand_ll = _bernoulli_loglik(F @ cand, t)
            if cand_ll >= loglik - slack:
                break
            scale *= 0.5
        beta = beta + scale * step
        loglik = _bernoulli_loglik(F @ beta, t)
        if np.linalg.norm(beta) > 1e6:
            raise NonConvergenceError("diverging coefficients: separated data")
    raise NonConvergenceError(f"no convergence in {max_iter} Newton iterations")


def fit_linear_ls(
    features: np.ndarray,
    y: np.ndarray,
    subset: np.ndarray | None = None,
    *,
    sample_weight: np.ndarray | None = None,
) -> np.ndarray:
    """Least-squares coefficients, optionally on a row subset.

    `subset` is an index array (or boolean mask) selecting the rows to fit
    on; predictions at other rows are the caller's business.  Optional
    nonnegative `sample_weight` (same length as the selected rows after
    subsetting applies to the full arrays) turns this into weighted least
    squares.
    """
    F = np.asarray(features, dtype=float)
    y = np.asarray(y, dtype=float)
    if F.ndim != 2 or y.shape != (F.shape[0],):
        raise ValueError("features must be (n, q) with matching y")
    w = None
    if sample_weight is not None:
        w = np.asarray(sample_weight, dtype=float)
        if w.shape != y.shape or np.any(w < 0):
            raise ValueError("sample_weight must be a nonnegative length-n vector")
    if subset is not None:
        subset = np.asarray(subset)
        F = F[subset]
        y = y[subset]
        if w is not None:
            w = w[subset]
    n, q = F.shape
    if n == 0:
        raise ValueError("empty fitting subset")
    if n <= q:
        raise ValueError(f"need more rows than features, got n={n}, q={q}")
    if w is not None:
        sw = np.sqrt(w)
        F = F * sw[:, None]
        y = y * sw
    coef, _, rank, _ = np.linalg.lstsq(F, y, rcond=None)
    if rank < q:
        raise RankError(f"design matrix rank {rank} < {q}")
    return coef


def nw_values(
    train: np.ndarray,
    targets: np.ndarray,
    queries: np.ndarray,
    kernel: KernelSpec,
    h: float,
    sample_weight: np.ndarray | None = None,
    *,
    chunk: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-regression estimates at each query point.

    Returns `(values, empty)` where `values[i]` is
    sum_j w_j t_j K((z_j - q_i)/h) / sum_j w_j K((z_j - q_i)/h) and
    `empty[i]` marks queries whose denominator carries no kernel mass
    (values are NaN there).  All training rows enter every sum.
    """
    train = np.asarray(train, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if train.ndim == 1:
        train = train[:, None]
    m, r = train.shape
    if kernel.dim != r:
        raise ValueError(f"kernel dim {kernel.dim} != input dim {r}")
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    if targets.shape != (m,):
        raise ValueError("targets must match training rows")
    queries = np.asarray(queries, dtype=float)
    if queries.ndim == 1:
        queries = queries[:, None]
    if queries.shape[1] != r:
        raise ValueError("queries must match training dimension")
    w = np.ones(m) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w.shape != (m,):
        raise ValueError("sample_weight must match training rows")

    nq = queries.shape[0]
    values = np.full(nq, np.nan)
    empty = np.zeros(nq, dtype=bool)
    wt = w * targets
    for start in range(0, nq, chunk):
        q = queries[start : start + chunk]
        diffs = (train[None, :, :] - q[:, None, :]) / h
        kv = kernel_values(kernel, diffs.reshape(-1, r)).reshape(q.shape[0], m)
        # row-wise sums rather than matmul: the reduction order is then
        # fixed per query, so results do not depend on the chunk size
        den = np.sum(kv * w, axis=1)
        num = np.sum(kv * wt, axis=1)
        mass = np.sum(np.abs(kv) * w, axis=1)
        bad = (mass == 0.0) | (np.abs(den) <= _DENOM_RTOL * np.maximum(mass, 1.0))
        sl = slice(start, start + q.shape[0])
        empty[sl] = bad
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = num / den
        vals[bad] = np.nan
        values[sl] = vals
    return values, empty


def nw_regress(
    train_inputs: np.ndarray,
    train_targets: np.ndarray,
    query: np.ndarray,
    kernel: KernelSpec,
    h: float,
) -> float:
    """Kernel-regression estimate at a single query point."""
    query = np.atleast_1d(np.asarray(query, dtype=float))
    values, empty = nw_values(train_inputs, train_targets, query[None, :], kernel, h)
    if empty[0]:
        raise EmptyWindowError(f"no kernel mass at query {query!r}")
    return float(values[0])


def _trim(p: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    return np.clip(p, bounds[0], bounds[1])


def fit_propensity_np(
    data: Dataset,
    kernel: KernelSpec,
    h2: float,
    trim_bounds: tuple[float, float] = DEFAULT_TRIM,
) -> np.ndarray:
    """Kernel-regression propensity fitted at every sample point, trimmed."""
    values, empty = nw_values(data.X, data.D.astype(float), data.X, kernel, h2)
    if empty.any():
        raise EmptyWindowError(f"{int(empty.sum())} empty propensity windows")
    return _trim(values, trim_bounds)


def fit_outcome_np(
    data: Dataset,
    arm: int,
    kernel: KernelSpec,
    h: float,
    *,
    diagnostics: dict[str, int] | None = None,
    on_empty: str = "fallback",
) -> np.ndarray:
    """Kernel regression of Y on X within one treatment arm, at every row.

    Queries whose window holds no same-arm point get the arm sample mean
    when `on_empty="fallback"` (the event count lands in `diagnostics`), or
    raise `EmptyWindowError` when `on_empty="error"`.
    """
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    if on_empty not in ("fallback", "error"):
        raise ValueError("on_empty must be 'fallback' or 'error'")
    w = data.D.astype(float) if arm == 1 else 1.0 - data.D.astype(float)
    if w.sum() == 0:
        raise ValueError(f"arm {arm} has no observations")
    values, empty = nw_values(data.X, data.Y, data.X, kernel, h, sample_weight=w)
    if empty.any():
        if on_empty == "error":
            raise EmptyWindowError(
                f"{int(empty.sum())} empty windows in arm-{arm} outcome fit"
            )
        arm_mean = float(np.average(data.Y, weights=w))
        values = np.where(empty, arm_mean, values)
        if diagnostics is not None:
            key = f"empty_window_fallbacks_m{arm}"
            diagnostics[key] = diagnostics.get(key, 0) + int(empty.sum())
    return values


def _orthonormal_columns(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if np.linalg.matrix_rank(m) < m.shape[1]:
        raise ValueError("projection matrix must have full column rank")
    q, _ = np.linalg.qr(m)
    q = q[:, : m.shape[1]]
    # deterministic sign: largest-magnitude entry of each column positive
    for j in range(q.shape[1]):
        i = int(np.argmax(np.abs(q[:, j])))
        if q[i, j] < 0:
            q[:, j] = -q[:, j]
    return q


def _opg_bandwidth(m: int, d: int) -> float:
    # standard normal-reference rate for gradient estimation on
    # standardized covariates
    return 2.34 * m ** (-1.0 / (d + 6.0))


def _opg_directions(X: np.ndarray, t: np.ndarray, target_dim: int) -> np.ndarray:
    m, d = X.shape
    if m <= d + 1:
        raise DegenerateStructureError("too few rows for gradient estimation")
    sd = X.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DegenerateStructureError("constant covariate column")
    Z = (X - X.mean(axis=0)) / sd
    h = _opg_bandwidth(m, d)
    A = np.column_stack([np.ones(m), Z])

    slopes = np.empty((m, d))
    chunk = 256
    for start in range(0, m, chunk):
        Q = Z[start : start + chunk]
        sq = ((Z[None, :, :] - Q[:, None, :]) ** 2).sum(axis=2)
        W = np.exp(-0.5 * sq / (h * h))
        G = np.einsum("im,mp,mq->ipq", W, A, A)
        rhs = (W * t[None, :]) @ A
        try:
            sol = np.linalg.solve(G, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise DegenerateStructureError("singular local-linear system") from exc
        slopes[start : start + Q.shape[0]] = sol[:, 1:]

    M = slopes.T @ slopes / m
    try:
        eigvals, eigvecs = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise DegenerateStructureError("eigen-decomposition failed") from exc
    if eigvals[-1] < 1e-10:
        raise DegenerateStructureError("gradient outer-product spectrum is null")
    top = eigvecs[:, ::-1][:, :target_dim]
    # back to the original covariate scale
    top = top / sd[:, None]
    return _orthonormal_columns(top)


def estimate_sdr_matrix(data: Dataset, response: str, spec: SdrSpec) -> np.ndarray:
    """Orthonormal d x target_dim projection for one nuisance component.

    `response` selects what the reduced space must explain: "treatment"
    (propensity), "treated-outcome", or "control-outcome".  Oracle specs
    return their matrix orthonormalized; "opg" estimates the span via
    averaged outer products of local-linear gradient estimates.
    """
    if response not in ("treatment", "treated-outcome", "control-outcome"):
        raise ValueError(f"unknown sdr response {response!r}")
    if spec.target_dim > data.d:
        raise ValueError("target_dim cannot exceed the covariate dimension")
    if spec.source == "oracle":
        matrix = spec.matrix
        if matrix.shape[0] != data.d:
            raise ValueError("oracle matrix row count must equal d")
        return _orthonormal_columns(matrix)

    if response == "treatment":
        X, t = data.X, data.D.astype(float)
    elif response == "treated-outcome":
        mask = data.D == 1
        X, t = data.X[mask], data.Y[mask]
    else:
        mask = data.D == 0
        X, t = data.X[mask], data.Y[mask]
    return _opg_directions(X, t, spec.target_dim)


def fit_semiparametric(
    data: Dataset,
    component: str,
    sdr: SdrSpec,
    kernel: KernelSpec,
    h: float,
    *,
    trim_bounds: tuple[float, float] = DEFAULT_TRIM,
    diagnostics: dict[str, int] | None = None,
    matrix: np.ndarray | None = None,
) -> np.ndarray:
    """Kernel fit of one component in the reduced space defined by `sdr`.

    A precomputed orthonormal `matrix` may be supplied to skip estimation
    (used when one matrix serves several calls).
    """
    if component not in ("propensity", "outcome1", "outcome0"):
        raise ValueError(f"unknown component {component!r}")
    if kernel.dim != sdr.target_dim:
        raise ValueError(
            f"kernel dim {kernel.dim} must equal sdr target_dim {sdr.target_dim}"
        )
    if matrix is None:
        response = {
            "propensity": "treatment",
            "outcome1": "treated-outcome",
            "outcome0": "control-outcome",
        }[component]
        matrix = estimate_sdr_matrix(data, response, sdr)
    Z = data.X @ matrix

    if component == "propensity":
        values, empty = nw_values(Z, data.D.astype(float), Z, kernel, h)
        if empty.any():
            raise EmptyWindowError(f"{int(empty.sum())} empty propensity windows")
        return _trim(values, trim_bounds)

    arm = 1 if component == "outcome1" else 0
    w = data.D.astype(float) if arm == 1 else 1.0 - data.D.astype(float)
    if w.sum() == 0:
        raise ValueError(f"arm {arm} has no observations")
    values, empty = nw_values(Z, data.Y, Z, kernel, h, sample_weight=w)
    if empty.any():
        arm_mean = float(np.average(data.Y, weights=w))
        values = np.where(empty, arm_mean, values)
        if diagnostics is not None:
            key = f"empty_window_fallbacks_m{arm}"
            diagnostics[key] = diagnostics.get(key, 0) + int(empty.sum())
    return values


def _fit_component(
    data: Dataset,
    component: str,
    spec: ComponentSpec,
    oracle: OracleValues | None,
    trim: tuple[float, float],
    params: dict,
    projections: dict,
    diagnostics: dict,
) -> np.ndarray:
    if spec.method == "oracle":
        if oracle is None:
            raise ValueError("oracle method requested but no oracle values supplied")
        return {
            "propensity": oracle.p,
            "outcome1": oracle.m1,
            "outcome0": oracle.m0,
        }[component]

    if spec.method == "parametric":
        link = "logistic" if component == "propensity" else "identity"
        pspec = ParametricSpec(component, spec.features, link)
        F = pspec.design(data)
        if component == "propensity":
            beta = fit_logistic_mle(F, data.D.astype(float))
            params["propensity"] = beta
            return expit(F @ beta)
        arm = 1 if component == "outcome1" else 0
        subset = np.flatnonzero(data.D == arm)
        gamma = fit_linear_ls(F, data.Y, subset)
        params[component] = gamma
        return F @ gamma

    if spec.method == "nonparametric":
        if component == "propensity":
            return fit_propensity_np(data, spec.kernel, spec.h, trim)
        arm = 1 if component == "outcome1" else 0
        return fit_outcome_np(data, arm, spec.kernel, spec.h, diagnostics=diagnostics)

    # semiparametric
    response = {
        "propensity": "treatment",
        "outcome1": "treated-outcome",
        "outcome0": "control-outcome",
    }[component]
    matrix = estimate_sdr_matrix(data, response, spec.sdr)
    projections[component] = matrix
    return fit_semiparametric(
        data,
        component,
        spec.sdr,
        spec.kernel,
        spec.h,
        trim_bounds=trim,
        diagnostics=diagnostics,
        matrix=matrix,
    )


def assemble_nuisance(
    data: Dataset,
    config: NuisanceConfig,
    oracle: OracleValues | None = None,
) -> NuisanceFit:
    """Fit all three nuisance components and trim the propensity."""
    params: dict = {}
    projections: dict = {}
    diagnostics: dict = {}
    p_raw = _fit_component(
        data, "propensity", config.propensity, oracle, config.trim, params, projections, diagnostics
    )
    m1 = _fit_component(
        data, "outcome1", config.outcome1, oracle, config.trim, params, projections, diagnostics
    )
    m0 = _fit_component(
        data, "outcome0", config.outcome0, oracle, config.trim, params, projections, diagnostics
    )
    p_hat = _trim(np.asarray(p_raw, dtype=float), config.trim)
    return NuisanceFit(
        p_hat=p_hat,
        m1_hat=np.asarray(m1, dtype=float),
        m0_hat=np.asarray(m0, dtype=float),
        labels={
            "propensity": config.propensity.tag(),
            "outcome1": config.outcome1.tag(),
            "outcome0": config.outcome0.tag(),
        },
        params=params,
        projections=projections,
        trim_bounds=config.trim,
        diagnostics=diagnostics,
    )
