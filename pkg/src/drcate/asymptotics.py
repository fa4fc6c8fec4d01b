"""Asymptotic variance and misspecification-bias diagnostics.

The smoothed pseudo-outcome estimator is asymptotically normal with variance
sigma^2(x1) * R(K1) / f(x1) scaled by n*h1^k, where sigma^2 is the
conditional second moment of the pseudo-outcome built from whichever
nuisance functions (true or limiting parametric) the scenario prescribes.
This module computes the plug-in version on data, the population version on
large simulated samples, the closed-form variance-difference diagnostic
vd(p1, p2), and the bias curve that appears when both nuisance models are
misspecified.

Population quantities are estimated by Monte Carlo: draw a large sample with
known truths, evaluate the relevant transform per observation, and smooth it
over the conditioning covariates.  Every such estimate is returned together
with its Monte Carlo standard error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .estimator import CateCurve
from .kernels import KernelSpec, kernel_values, roughness
from .nuisance import Dataset, NuisanceFit, build_features, fit_linear_ls, fit_logistic_mle

__all__ = [
    "PseudoOutcomeKind",
    "MisspecificationSpec",
    "LimitingParams",
    "SmoothedValue",
    "sigma_sq_plugin",
    "fill_plugin_variance",
    "v_of",
    "vd",
    "sigma2_minus_sigma1_homoscedastic",
    "calibrate_limits",
    "pseudo_outcome_values",
    "bias_integrand",
    "bias_formula",
    "tau_tilde",
    "sigma_sq_population",
    "variance_bias_table",
    "smooth_conditional",
    "POP_KERNEL",
    "POP_SMOOTH_H",
]

# defaults for population conditional smoothing: positive second-order kernel
# so the linearized standard error is meaningful
POP_KERNEL = KernelSpec("gaussian", 2, 1)
POP_SMOOTH_H = 0.02


class PseudoOutcomeKind(enum.Enum):
    """Which nuisance components use the true functions versus the limiting
    parametric fits when forming the pseudo-outcome."""

    TRUE_BOTH = "true-both"
    LIMIT_PROPENSITY = "limit-propensity"
    LIMIT_OUTCOMES = "limit-outcomes"
    LIMIT_BOTH = "limit-both"


@dataclass(frozen=True)
class MisspecificationSpec:
    """Vanishing (or fixed) perturbation of a correctly specified model.

    The generating propensity becomes base_p(x) * (1 + c * a(x)) and the arm
    means become base_m1(x) + d1 * b1(x), base_m0(x) + d0 * b0(x).  c = 0
    (resp. d1 = d0 = 0) means the propensity (resp. outcome) model is
    correctly specified.  The base families name the parametric forms that
    are exact at zero perturbation.
    """

    c: float = 0.0
    d1: float = 0.0
    d0: float = 0.0
    a: Callable[[np.ndarray], np.ndarray] | None = None
    b1: Callable[[np.ndarray], np.ndarray] | None = None
    b0: Callable[[np.ndarray], np.ndarray] | None = None
    prop_family: str = "intercept+all"
    out1_family: str = "intercept+all+prod"
    out0_family: str = "intercept"

    def propensity_factor(self, X: np.ndarray) -> np.ndarray:
        if self.c == 0.0 or self.a is None:
            return np.ones(X.shape[0])
        return 1.0 + self.c * np.asarray(self.a(X), dtype=float)

    def outcome_shift(self, X: np.ndarray, arm: int) -> np.ndarray:
        d, b = (self.d1, self.b1) if arm == 1 else (self.d0, self.b0)
        if d == 0.0 or b is None:
            return np.zeros(X.shape[0])
        return d * np.asarray(b(X), dtype=float)


@dataclass(frozen=True)
class LimitingParams:
    """Quasi-MLE limits of the analyst's parametric nuisance families."""

    beta: np.ndarray
    gamma1: np.ndarray
    gamma0: np.ndarray
    prop_family: str
    out1_family: str
    out0_family: str

    def propensity_at(self, data: Dataset) -> np.ndarray:
        return expit(build_features(data, self.prop_family) @ self.beta)

    def outcome1_at(self, data: Dataset) -> np.ndarray:
        return build_features(data, self.out1_family) @ self.gamma1

    def outcome0_at(self, data: Dataset) -> np.ndarray:
        return build_features(data, self.out0_family) @ self.gamma0


@dataclass(frozen=True)
class SmoothedValue:
    """A conditional-expectation estimate with its Monte Carlo standard error."""

    value: float
    se: float

    def __iter__(self):
        yield self.value
        yield self.se


def smooth_conditional(
    x1_values: np.ndarray,
    targets: np.ndarray,
    x1,
    kernel: KernelSpec = POP_KERNEL,
    h: float = POP_SMOOTH_H,
) -> SmoothedValue:
    """Kernel estimate of E[target | X1 = x1] with a linearized standard error.

    The error is sqrt(sum w_i^2 (t_i - mu)^2) / sum w_i, the standard
    weighted-mean approximation; it covers Monte Carlo noise, not smoothing
    bias, so keep h small relative to the target's curvature scale.
    """
    x1_values = np.asarray(x1_values, dtype=float)
    if x1_values.ndim == 1:
        x1_values = x1_values[:, None]
    point = np.atleast_1d(np.asarray(x1, dtype=float))
    if point.shape != (x1_values.shape[1],):
        raise ValueError("x1 must match the conditioning dimension")
    targets = np.asarray(targets, dtype=float)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    w = kernel_values(kernel, (x1_values - point) / h)
    den = w.sum()
    if den <= 0 or np.abs(w).sum() == 0.0:
        return SmoothedValue(float("nan"), float("nan"))
    mu = float(w @ targets) / den
    se = float(np.sqrt(np.sum((w * (targets - mu)) ** 2))) / den
    return SmoothedValue(mu, se)


def sigma_sq_plugin(
    data: Dataset,
    psi_values: np.ndarray,
    tau_at: float,
    x1,
    K1: KernelSpec,
    h1: float,
) -> float:
    """Plug-in conditional second moment of the pseudo-outcome residual.

    Smooths (psi_i - tau_at)^2 over X1 at x1 with the second-step kernel;
    returns NaN when the window is empty, and never a negative number
    (higher-order kernel weights can push the raw smooth below zero).
    """
    psi_values = np.asarray(psi_values, dtype=float)
    if psi_values.shape != (data.n,):
        raise ValueError("psi_values must have one entry per observation")
    if h1 <= 0:
        raise ValueError("h1 must be positive")
    point = np.atleast_1d(np.asarray(x1, dtype=float))
    w = kernel_values(K1, (data.X1 - point) / h1)
    den = w.sum()
    if np.abs(w).sum() == 0.0 or den <= 0.0:
        return float("nan")
    val = float(w @ (psi_values - tau_at) ** 2) / den
    return max(val, 0.0)


def v_of(sigma_sq: float, f_hat: float, K1: KernelSpec) -> float:
    """Asymptotic variance sigma^2 * R(K1) / f, with R(K1) = int K1^2."""
    if not f_hat > 0:
        raise ValueError("density must be positive")
    if sigma_sq < 0:
        raise ValueError("sigma_sq must be nonnegative")
    return sigma_sq * roughness(K1) / f_hat


def fill_plugin_variance(curve: CateCurve, data: Dataset, fit: NuisanceFit) -> CateCurve:
    """Fill the curve's v_hat with sigma_sq_plugin * R(K1) / f_hat per point."""
    from .estimator import pseudo_outcomes

    psi = pseudo_outcomes(fit, data)
    rough = roughness(curve.kernel)
    for i in range(curve.grid.shape[0]):
        if curve.missing[i]:
            continue
        s2 = sigma_sq_plugin(
            data, psi, float(curve.tau_hat[i]), curve.grid[i], curve.kernel, curve.h1
        )
        if np.isnan(s2):
            continue
        curve.v_hat[i] = s2 * rough / curve.f_hat[i]
    return curve


def _check_prob(p, name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"{name} must lie strictly in (0,1)")
    return arr


def vd(p1, p2):
    """Variance-difference factor of propensity misspecification.

    (p1^2 - p2^2)/(p1 p2^2) + ((1-p1)^2 - (1-p2)^2)/((1-p1)(1-p2)^2), where
    p1 is the true propensity and p2 the limiting misspecified one.  Zero at
    p1 = p2; negative values mean the misspecified fit shrinks the
    asymptotic variance.  Accepts scalars or arrays.
    """
    a1 = _check_prob(p1, "p1")
    a2 = _check_prob(p2, "p2")
    q1, q2 = 1.0 - a1, 1.0 - a2
    out = (a1**2 - a2**2) / (a1 * a2**2) + (q1**2 - q2**2) / (q1 * q2**2)
    if np.isscalar(p1) and np.isscalar(p2):
        return float(out)
    return out


def sigma2_minus_sigma1_homoscedastic(p1, p2, xi_sq: float):
    """sigma2^2 - sigma1^2 under homoscedastic arms with common variance xi_sq."""
    if not xi_sq > 0:
        raise ValueError("xi_sq must be positive")
    out = xi_sq * vd(p1, p2)
    return out


def calibrate_limits(
    sample,
    prop_family: str,
    out1_family: str,
    out0_family: str,
    *,
    rao_blackwell: bool = True,
) -> LimitingParams:
    """Fit the analyst's parametric families on a large calibration sample.

    `sample` carries `.data` (a Dataset) and `.truth` (true per-row p, m1,
    m0).  With `rao_blackwell=True` the logistic fit targets the true
    probabilities and the outcome fits regress the true arm means weighted
    by the arm probability: same limits as fitting the observable (D, Y),
    with the irreducible draw noise integrated out.
    """
    data: Dataset = sample.data
    Fp = build_features(data, prop_family)
    F1 = build_features(data, out1_family)
    F0 = build_features(data, out0_family)
    if rao_blackwell:
        truth = sample.truth
        beta = fit_logistic_mle(Fp, truth.p)
        gamma1 = fit_linear_ls(F1, truth.m1, sample_weight=truth.p)
        gamma0 = fit_linear_ls(F0, truth.m0, sample_weight=1.0 - truth.p)
    else:
        beta = fit_logistic_mle(Fp, data.D.astype(float))
        gamma1 = fit_linear_ls(F1, data.Y, np.flatnonzero(data.D == 1))
        gamma0 = fit_linear_ls(F0, data.Y, np.flatnonzero(data.D == 0))
    return LimitingParams(beta, gamma1, gamma0, prop_family, out1_family, out0_family)


def pseudo_outcome_values(sample, kind: PseudoOutcomeKind, limits: LimitingParams | None) -> np.ndarray:
    """Per-observation pseudo-outcomes under one true/limiting combination."""
    data: Dataset = sample.data
    truth = sample.truth
    use_limit_p = kind in (PseudoOutcomeKind.LIMIT_PROPENSITY, PseudoOutcomeKind.LIMIT_BOTH)
    use_limit_m = kind in (PseudoOutcomeKind.LIMIT_OUTCOMES, PseudoOutcomeKind.LIMIT_BOTH)
    if (use_limit_p or use_limit_m) and limits is None:
        raise ValueError(f"{kind} requires limiting parameters")
    p = limits.propensity_at(data) if use_limit_p else np.asarray(truth.p, dtype=float)
    m1 = limits.outcome1_at(data) if use_limit_m else np.asarray(truth.m1, dtype=float)
    m0 = limits.outcome0_at(data) if use_limit_m else np.asarray(truth.m0, dtype=float)
    _check_prob(p, "propensity")
    d = data.D.astype(float)
    return d * (data.Y - m1) / p - (1.0 - d) * (data.Y - m0) / (1.0 - p) + m1 - m0


def bias_integrand(sample, limits: LimitingParams) -> np.ndarray:
    """Per-observation integrand of the all-misspecified bias curve.

    (m1 - m1~)(p - p~)/p~ - (m0 - m0~)(p~ - p)/(1 - p~), deterministic in X;
    its conditional mean given X1 is the asymptotic bias of the smoothed
    estimator when both nuisance models are (locally or globally) wrong.
    """
    data: Dataset = sample.data
    truth = sample.truth
    p_t = limits.propensity_at(data)
    m1_t = limits.outcome1_at(data)
    m0_t = limits.outcome0_at(data)
    _check_prob(p_t, "limiting propensity")
    p = np.asarray(truth.p, dtype=float)
    return (truth.m1 - m1_t) * (p - p_t) / p_t - (truth.m0 - m0_t) * (p_t - p) / (1.0 - p_t)


def bias_formula(
    sample,
    limits: LimitingParams,
    x1,
    *,
    kernel: KernelSpec = POP_KERNEL,
    h: float = POP_SMOOTH_H,
) -> SmoothedValue:
    """Asymptotic bias at x1, smoothed from a large Monte Carlo sample."""
    vals = bias_integrand(sample, limits)
    return smooth_conditional(sample.data.X1, vals, x1, kernel, h)


def tau_tilde(
    sample,
    limits: LimitingParams,
    x1,
    *,
    kernel: KernelSpec = POP_KERNEL,
    h: float = POP_SMOOTH_H,
) -> SmoothedValue:
    """Probability limit of the smoothed estimator: E[psi | X1 = x1] with both
    nuisances at their limiting fits; equals tau(x1) + bias(x1)."""
    vals = pseudo_outcome_values(sample, PseudoOutcomeKind.LIMIT_BOTH, limits)
    return smooth_conditional(sample.data.X1, vals, x1, kernel, h)


def sigma_sq_population(
    sample,
    kind: PseudoOutcomeKind,
    limits: LimitingParams | None,
    x1,
    center: float,
    *,
    kernel: KernelSpec = POP_KERNEL,
    h: float = POP_SMOOTH_H,
) -> SmoothedValue:
    """Population conditional second moment E[(psi_kind - center)^2 | X1 = x1].

    `center` is tau(x1) for the first three kinds and tau_tilde(x1) when
    both nuisances sit at misspecified limits.
    """
    vals = pseudo_outcome_values(sample, kind, limits)
    return smooth_conditional(sample.data.X1, (vals - center) ** 2, x1, kernel, h)


def variance_bias_table(
    sample,
    limits: LimitingParams,
    x1_grid,
    tau_values,
    K1: KernelSpec,
    *,
    kernel: KernelSpec = POP_KERNEL,
    h: float = POP_SMOOTH_H,
) -> dict[str, np.ndarray]:
    """Population variance curves V1..V4 and the bias curve on a grid.

    V_j(x1) = sigma_j^2(x1) * R(K1) / f(x1) with f estimated from the same
    sample; `tau_values` supplies the centering tau(x1) per grid point.
    """
    x1_grid = np.asarray(x1_grid, dtype=float)
    tau_values = np.asarray(tau_values, dtype=float)
    if x1_grid.ndim != 1 or tau_values.shape != x1_grid.shape:
        raise ValueError("x1_grid and tau_values must be matching 1-D arrays")
    X1 = sample.data.X1
    rough = roughness(K1)
    kinds = (
        PseudoOutcomeKind.TRUE_BOTH,
        PseudoOutcomeKind.LIMIT_PROPENSITY,
        PseudoOutcomeKind.LIMIT_OUTCOMES,
        PseudoOutcomeKind.LIMIT_BOTH,
    )
    out = {
        "x1": x1_grid,
        "bias": np.empty_like(x1_grid),
        "v1": np.empty_like(x1_grid),
        "v2": np.empty_like(x1_grid),
        "v3": np.empty_like(x1_grid),
        "v4": np.empty_like(x1_grid),
    }
    for i, x1 in enumerate(x1_grid):
        b = bias_formula(sample, limits, x1, kernel=kernel, h=h)
        out["bias"][i] = b.value
        # density of X1 at x1 from the same draw
        w = kernel_values(kernel, (X1 - x1) / h)
        f = float(w.sum()) / (sample.data.n * h ** X1.shape[1])
        for j, kind in enumerate(kinds, start=1):
            center = tau_values[i]
            if kind is PseudoOutcomeKind.LIMIT_BOTH:
                center = tau_values[i] + b.value
            s2 = sigma_sq_population(sample, kind, limits, x1, center, kernel=kernel, h=h)
            out[f"v{j}"][i] = v_of(max(s2.value, 0.0), f, K1)
    return out
