"""Benchmark data-generating models and the Monte Carlo replication engine.

Two bundled DGPs share the same effect curve tau(x1) = x1 (1+2 x1)^2 (x1-1)^2
but differ in covariate dimension (d = 2 vs d = 4).  The engine draws
replications on independent counter-based substreams (key = seed XOR r), so
any two runs with the same seed see identical data regardless of combination
label, thread count, or execution order; results aggregate in replication
order and are bit-reproducible.

Estimator combinations are named "(propensity,outcome)" with parts O (oracle
truth), cP (correctly specified parametric), mP (misspecified parametric:
logistic on the conditioning covariate alone, or linear outcome without the
product term), N (kernel regression on all covariates), and S (kernel
regression after projection onto a one- or full-dimensional subspace).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.special import expit, ndtri

from .asymptotics import MisspecificationSpec
from .estimator import estimate_cate, standardized_stat
from .kernels import BandwidthRule, BandwidthSchedule, KernelSpec
from .nuisance import (
    ComponentSpec,
    Dataset,
    DegenerateStructureError,
    EstimationError,
    NuisanceConfig,
    OracleValues,
    SdrSpec,
    assemble_nuisance,
    estimate_sdr_matrix,
    DEFAULT_TRIM,
)
from .rng import MAX_SEED, normals, substream, uniforms

__all__ = [
    "MODEL1",
    "MODEL2",
    "COMBINATIONS",
    "SampleWithTruth",
    "DgpSpec",
    "ModelDefaults",
    "McConfig",
    "McReport",
    "McResult",
    "gen_model1",
    "gen_model2",
    "generate",
    "true_tau",
    "model1_x2_mean",
    "default_schedule",
    "combination_config",
    "run_mc",
    "DEFAULT_GRID",
]

MODEL1 = "model1"
MODEL2 = "model2"

DEFAULT_GRID = (-0.4, -0.2, 0.0, 0.2, 0.4)

COMBINATIONS = (
    "(O,O)",
    "(cP,cP)",
    "(N,N)",
    "(S,S)",
    "(mP,cP)",
    "(mP,N)",
    "(mP,S)",
    "(cP,mP)",
    "(N,mP)",
    "(S,mP)",
)

_Z95 = float(ndtri(0.95))

_NOISE_SD = 0.25


@dataclass(frozen=True)
class SampleWithTruth:
    """One generated dataset with the demiurge's view attached."""

    data: Dataset
    truth: OracleValues
    y1: np.ndarray
    y0: np.ndarray
    model: str


@dataclass(frozen=True)
class DgpSpec:
    model: str
    n: int
    seed: int

    def __post_init__(self) -> None:
        if self.model not in (MODEL1, MODEL2):
            raise ValueError(f"unknown model {self.model!r}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not (0 <= self.seed <= MAX_SEED):
            raise ValueError("seed must fit in 64 bits")


def model1_x2_mean(x1):
    """Conditional mean of the second covariate given the first (model 1)."""
    x1 = np.asarray(x1, dtype=float)
    return (1.0 + 2.0 * x1) ** 2 * (-1.0 + x1) ** 2


def true_tau(x1):
    """Effect curve shared by both bundled models."""
    x1 = np.asarray(x1, dtype=float)
    out = x1 * (1.0 + 2.0 * x1) ** 2 * (x1 - 1.0) ** 2
    if out.ndim == 0:
        return float(out)
    return out


def _finish_sample(
    X: np.ndarray,
    p: np.ndarray,
    m1: np.ndarray,
    m0: np.ndarray,
    eps: np.ndarray,
    u_treat: np.ndarray,
    model: str,
) -> SampleWithTruth:
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("perturbed propensity left (0,1); shrink the perturbation")
    y1 = m1 + eps
    y0 = m0.copy()
    D = (u_treat < p).astype(np.int8)
    Y = np.where(D == 1, y1, y0)
    data = Dataset(X=X, x1_indices=(0,), Y=Y, D=D)
    truth = OracleValues(p=p, m1=m1, m0=m0)
    return SampleWithTruth(data=data, truth=truth, y1=y1, y0=y0, model=model)


def gen_model1(n: int, rng, misspec: MisspecificationSpec | None = None) -> SampleWithTruth:
    """Two covariates: X1 uniform, X2 a quartic in X1 plus uniform noise.

    Y(1) = X1*X2 + eps, Y(0) = 0, treatment probability expit(X1 + X2).
    Draw order is fixed (X1 noise, X2 noise, outcome noise, treatment
    uniform) so substreams reproduce bit-identically.  An optional
    `misspec` perturbs the propensity multiplicatively and shifts the arm
    means, leaving the base model as its zero-perturbation case.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x1 = uniforms(rng, n, -0.5, 0.5)
    rho2 = uniforms(rng, n, -0.5, 0.5)
    eps = normals(rng, n, _NOISE_SD)
    u_treat = rng.random(n)
    x2 = model1_x2_mean(x1) + rho2
    X = np.column_stack([x1, x2])
    p = expit(x1 + x2)
    m1 = x1 * x2
    m0 = np.zeros(n)
    if misspec is not None:
        p = p * misspec.propensity_factor(X)
        m1 = m1 + misspec.outcome_shift(X, 1)
        m0 = m0 + misspec.outcome_shift(X, 0)
    return _finish_sample(X, p, m1, m0, eps, u_treat, MODEL1)


def gen_model2(n: int, rng, misspec: MisspecificationSpec | None = None) -> SampleWithTruth:
    """Four covariates built from X1 with uniform noise on each.

    Y(1) = X1*X2*X3*X4 + eps, Y(0) = 0, treatment probability
    expit((X1+X2+X3+X4)/2).  Same fixed draw order conventions as the
    two-covariate model.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x1 = uniforms(rng, n, -0.5, 0.5)
    rho2 = uniforms(rng, n, -0.5, 0.5)
    rho3 = uniforms(rng, n, -0.5, 0.5)
    rho4 = uniforms(rng, n, -0.5, 0.5)
    eps = normals(rng, n, _NOISE_SD)
    u_treat = rng.random(n)
    x2 = 1.0 + 2.0 * x1 + rho2
    x3 = 1.0 + 2.0 * x1 + rho3
    x4 = (-1.0 + x1) ** 2 + rho4
    X = np.column_stack([x1, x2, x3, x4])
    p = expit(0.5 * (x1 + x2 + x3 + x4))
    m1 = x1 * x2 * x3 * x4
    m0 = np.zeros(n)
    if misspec is not None:
        p = p * misspec.propensity_factor(X)
        m1 = m1 + misspec.outcome_shift(X, 1)
        m0 = m0 + misspec.outcome_shift(X, 0)
    return _finish_sample(X, p, m1, m0, eps, u_treat, MODEL2)


def generate(model: str, n: int, rng, misspec: MisspecificationSpec | None = None) -> SampleWithTruth:
    if model == MODEL1:
        return gen_model1(n, rng, misspec)
    if model == MODEL2:
        return gen_model2(n, rng, misspec)
    raise ValueError(f"unknown model {model!r}")


@dataclass(frozen=True)
class ModelDefaults:
    """Bandwidth schedule, kernel specs, and oracle projections for a model."""

    model: str
    d: int
    schedule: BandwidthSchedule
    orders: Mapping[str, int]
    kernels: Mapping[str, KernelSpec]
    sdr_propensity: np.ndarray  # single-index direction of the treatment model
    sdr_outcome1: np.ndarray  # treated-arm mean needs the full space
    sdr_outcome0: np.ndarray  # control-arm mean is constant; any direction


def default_schedule(model: str) -> ModelDefaults:
    """Benchmark bandwidths and kernels.

    The second-step kernel is Gaussian (order 4 for the two-covariate
    model, 6 for the four-covariate one); the first-step kernels are
    Epanechnikov of order 2 resp. 4.  Exponents: h1 shrinks at n^(-1/9)
    resp. n^(-1/13), the first-step bandwidths at n^(-1/4) resp. n^(-1/8).
    The control-arm constants reuse the treated-arm ones (the bundled
    models have a constant control mean, so those fits are insensitive).
    """
    if model == MODEL1:
        d = 2
        s1, s_first = 4, 2
        eta1, eta_first = 1.0 / 9.0, 1.0 / 4.0
        scales = {"h2": 0.7, "h3": 1.5, "h4": 1.5, "h5": 0.5, "h6": 1.0, "h7": 1.0}
        d_out1 = 2
    elif model == MODEL2:
        d = 4
        s1, s_first = 6, 4
        eta1, eta_first = 1.0 / 13.0, 1.0 / 8.0
        scales = {"h2": 2.0, "h3": 2.5, "h4": 2.5, "h5": 2.8, "h6": 1.0, "h7": 1.0}
        d_out1 = 4
    else:
        raise ValueError(f"unknown model {model!r}")

    rules = {"h1": BandwidthRule(0.1, eta1)}
    for role, a in scales.items():
        rules[role] = BandwidthRule(a, eta_first)
    schedule = BandwidthSchedule(rules)
    orders = {"s1": s1, **{f"s{j}": s_first for j in range(2, 8)}}
    kernels = {
        "K1": KernelSpec("gaussian", s1, 1),
        "K2": KernelSpec("epanechnikov", s_first, d),
        "K3": KernelSpec("epanechnikov", s_first, d),
        "K4": KernelSpec("epanechnikov", s_first, d),
        "K5": KernelSpec("epanechnikov", s_first, 1),
        "K6": KernelSpec("epanechnikov", s_first, d_out1),
        "K7": KernelSpec("epanechnikov", s_first, 1),
    }
    e1 = np.zeros((d, 1))
    e1[0, 0] = 1.0
    return ModelDefaults(
        model=model,
        d=d,
        schedule=schedule,
        orders=orders,
        kernels=kernels,
        sdr_propensity=np.ones((d, 1)),
        sdr_outcome1=np.eye(d),
        sdr_outcome0=e1,
    )


# feature maps realizing the correctly and incorrectly specified families
_PROPENSITY_FEATURES = {"cP": "intercept+all", "mP": "intercept+x1"}
_OUTCOME1_FEATURES = {"cP": "intercept+all+prod", "mP": "intercept+all"}


def _split_label(label: str) -> tuple[str, str]:
    if label not in COMBINATIONS:
        raise ValueError(f"unknown combination {label!r}; expected one of {COMBINATIONS}")
    inner = label.strip("()")
    prop, out = inner.split(",")
    return prop, out


def combination_config(
    label: str,
    defaults: ModelDefaults,
    n: int,
    *,
    sdr_source: str = "oracle",
    trim: tuple[float, float] = DEFAULT_TRIM,
) -> NuisanceConfig:
    """Nuisance wiring for one combination label at sample size n."""
    prop_part, out_part = _split_label(label)
    sched = defaults.schedule

    if prop_part == "O":
        prop = ComponentSpec(method="oracle", label="O")
    elif prop_part in _PROPENSITY_FEATURES:
        prop = ComponentSpec(
            method="parametric", features=_PROPENSITY_FEATURES[prop_part], label=prop_part
        )
    elif prop_part == "N":
        prop = ComponentSpec(
            method="nonparametric",
            kernel=defaults.kernels["K2"],
            h=sched.value("h2", n),
            label="N",
        )
    else:  # S
        sdr = SdrSpec(
            target_dim=defaults.sdr_propensity.shape[1],
            source=sdr_source,
            matrix=defaults.sdr_propensity if sdr_source == "oracle" else None,
        )
        prop = ComponentSpec(
            method="semiparametric",
            sdr=sdr,
            kernel=defaults.kernels["K5"],
            h=sched.value("h5", n),
            label="S",
        )

    if out_part == "O":
        out1 = ComponentSpec(method="oracle", label="O")
        out0 = ComponentSpec(method="oracle", label="O")
    elif out_part in _OUTCOME1_FEATURES:
        out1 = ComponentSpec(
            method="parametric", features=_OUTCOME1_FEATURES[out_part], label=out_part
        )
        # control-arm mean: intercept-only family (correct for the bundled
        # models under either label, since Y(0) is identically zero)
        out0 = ComponentSpec(method="parametric", features="intercept", label=out_part)
    elif out_part == "N":
        out1 = ComponentSpec(
            method="nonparametric",
            kernel=defaults.kernels["K3"],
            h=sched.value("h3", n),
            label="N",
        )
        out0 = ComponentSpec(
            method="nonparametric",
            kernel=defaults.kernels["K4"],
            h=sched.value("h4", n),
            label="N",
        )
    else:  # S
        sdr1 = SdrSpec(
            target_dim=defaults.sdr_outcome1.shape[1],
            source=sdr_source,
            matrix=defaults.sdr_outcome1 if sdr_source == "oracle" else None,
        )
        kernel6 = defaults.kernels["K6"]
        out1 = ComponentSpec(
            method="semiparametric",
            sdr=sdr1,
            kernel=kernel6,
            h=sched.value("h6", n),
            label="S",
        )
        sdr0 = SdrSpec(
            target_dim=defaults.sdr_outcome0.shape[1],
            source=sdr_source,
            matrix=defaults.sdr_outcome0 if sdr_source == "oracle" else None,
        )
        out0 = ComponentSpec(
            method="semiparametric",
            sdr=sdr0,
            kernel=defaults.kernels["K7"],
            h=sched.value("h7", n),
            label="S",
        )
    return NuisanceConfig(propensity=prop, outcome1=out1, outcome0=out0, trim=trim)


@dataclass(frozen=True)
class McConfig:
    dgp: DgpSpec
    combination: str
    grid: tuple[float, ...] = DEFAULT_GRID
    replications: int = 500
    sdr_source: str = "oracle"
    trim: tuple[float, float] = DEFAULT_TRIM
    threads: int = 1

    def __post_init__(self) -> None:
        if self.combination not in COMBINATIONS:
            raise ValueError(
                f"unknown combination {self.combination!r}; expected one of {COMBINATIONS}"
            )
        if self.replications < 2:
            raise ValueError("need at least 2 replications")
        if len(self.grid) < 1:
            raise ValueError("grid must be nonempty")
        if self.sdr_source not in ("oracle", "opg"):
            raise ValueError("sdr_source must be 'oracle' or 'opg'")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class McReport:
    """Per-grid-point Monte Carlo metrics plus run accounting."""

    model: str
    combination: str
    n: int
    seed: int
    replications: int
    x1: np.ndarray
    bias: np.ndarray
    sam_sd: np.ndarray
    mse: np.ndarray
    p05: np.ndarray
    p95: np.ndarray
    n_used: np.ndarray
    failures: int
    valid: bool
    runtime_s: float
    h1: float
    diagnostics: Mapping[str, int] = field(default_factory=dict)
    first_error: str | None = None


@dataclass(frozen=True)
class McResult:
    report: McReport
    tau_hat: np.ndarray  # (R, G), NaN for failed replications or missing points
    t_stat: np.ndarray  # (R, G)
    failed: np.ndarray  # (R,) bool


def _replicate(config: McConfig, defaults: ModelDefaults, nuis: NuisanceConfig, r: int):
    """One replication: returns (tau_hats, diagnostics, error message or None)."""
    G = len(config.grid)
    diag: dict[str, int] = {}
    try:
        rng = substream(config.dgp.seed, r)
        sample = generate(config.dgp.model, config.dgp.n, rng)
        cfg = nuis
        out0 = cfg.outcome0
        if (
            out0.method == "semiparametric"
            and out0.sdr.source == "opg"
        ):
            # a constant control arm makes the gradient spectrum null; fall
            # back to a fixed direction since the projection then cannot
            # matter for the fit
            try:
                estimate_sdr_matrix(sample.data, "control-outcome", out0.sdr)
            except DegenerateStructureError:
                diag["sdr_outcome0_fallbacks"] = 1
                fallback = SdrSpec(
                    target_dim=defaults.sdr_outcome0.shape[1],
                    source="oracle",
                    matrix=defaults.sdr_outcome0,
                )
                cfg = replace(cfg, outcome0=replace(out0, sdr=fallback))
        fit = assemble_nuisance(sample.data, cfg, oracle=sample.truth)
        curve = estimate_cate(
            sample.data,
            fit,
            np.asarray(config.grid, dtype=float),
            defaults.kernels["K1"],
            defaults.schedule.value("h1", config.dgp.n),
        )
        for key, cnt in fit.diagnostics.items():
            diag[key] = diag.get(key, 0) + cnt
        return curve.tau_hat, diag, None
    except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
        return np.full(G, np.nan), diag, f"r={r}: {exc}"


def _summaries(
    config: McConfig,
    tau: np.ndarray,
    failed: np.ndarray,
    h1: float,
    diagnostics: dict[str, int],
    runtime_s: float,
    first_error: str | None,
) -> McResult:
    grid = np.asarray(config.grid, dtype=float)
    G = grid.size
    R = config.replications
    n = config.dgp.n
    tau_true = true_tau(grid)
    t = standardized_stat(tau, tau_true[None, :], n, h1, 1)

    bias = np.full(G, np.nan)
    sam_sd = np.full(G, np.nan)
    mse = np.full(G, np.nan)
    p05 = np.full(G, np.nan)
    p95 = np.full(G, np.nan)
    n_used = np.zeros(G, dtype=int)
    max_missing = 0
    for g in range(G):
        col = t[:, g]
        ok = ~np.isnan(col)
        n_used[g] = int(ok.sum())
        max_missing = max(max_missing, R - n_used[g])
        if n_used[g] < 2:
            continue
        tg = col[ok]
        bias[g] = float(np.mean(tau[ok, g] - tau_true[g]))
        sd = float(np.std(tg, ddof=1))
        sam_sd[g] = sd
        mse[g] = float(np.mean(tg**2))
        if sd > 0:
            z = (tg - tg.mean()) / sd
            p05[g] = float(np.mean(z < -_Z95))
            p95[g] = float(np.mean(z > _Z95))

    failures = int(failed.sum())
    valid = (failures <= 0.01 * R) and (max_missing <= 0.01 * R)
    report = McReport(
        model=config.dgp.model,
        combination=config.combination,
        n=n,
        seed=config.dgp.seed,
        replications=R,
        x1=grid,
        bias=bias,
        sam_sd=sam_sd,
        mse=mse,
        p05=p05,
        p95=p95,
        n_used=n_used,
        failures=failures,
        valid=valid,
        runtime_s=runtime_s,
        h1=h1,
        diagnostics=diagnostics,
        first_error=first_error,
    )
    return McResult(report=report, tau_hat=tau, t_stat=t, failed=failed)


def run_mc(config: McConfig) -> McResult:
    """Run the full replication loop and summarize.

    Replication r uses substream seed XOR r, so runs differing only in the
    combination label see identical data (common random numbers).  With
    `threads > 1` replications are distributed over processes; the
    aggregation order is fixed by replication index either way.
    """
    start = time.perf_counter()
    defaults = default_schedule(config.dgp.model)
    n = config.dgp.n
    nuis = combination_config(
        config.combination, defaults, n, sdr_source=config.sdr_source, trim=config.trim
    )
    h1 = defaults.schedule.value("h1", n)
    R = config.replications
    G = len(config.grid)
    tau = np.full((R, G), np.nan)
    failed = np.zeros(R, dtype=bool)
    diagnostics: dict[str, int] = {}
    errors: list[str] = []

    if config.threads == 1:
        results = (_replicate(config, defaults, nuis, r) for r in range(1, R + 1))
    else:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial

        task = partial(_replicate, config, defaults, nuis)
        pool = ProcessPoolExecutor(max_workers=config.threads)
        chunk = max(1, R // (config.threads * 8))
        results = pool.map(task, range(1, R + 1), chunksize=chunk)

    try:
        for idx, (tau_r, diag, err) in enumerate(results):
            tau[idx] = tau_r
            if err is not None:
                failed[idx] = True
                errors.append(err)
            for key, cnt in diag.items():
                diagnostics[key] = diagnostics.get(key, 0) + cnt
    finally:
        if config.threads > 1:
            pool.shutdown()

    runtime_s = time.perf_counter() - start
    first_error = errors[0] if errors else None
    return _summaries(config, tau, failed, h1, diagnostics, runtime_s, first_error)
