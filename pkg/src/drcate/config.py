"""Run configuration: YAML parsing, validation, serialization, hashing.

The config file is YAML with one section per subcommand plus a shared `run`
section.  Parsing is fail-closed: an unknown key anywhere is an error, not a
warning.  Every parsed config serializes back to YAML and re-parses to an
equal object, and the run manifest records a hash over the semantic fields
(everything except output directory and parallelism degree, which cannot
change results).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .kernels import BandwidthRule, KernelSpec
from .nuisance import (
    ComponentSpec,
    NuisanceConfig,
    SdrSpec,
    DEFAULT_TRIM,
    FEATURE_MAPS,
)
from .simulation import (
    COMBINATIONS,
    DEFAULT_GRID,
    DgpSpec,
    McConfig,
    MODEL1,
    MODEL2,
)

__all__ = [
    "ConfigError",
    "RunSection",
    "BandwidthConfig",
    "SdrConfig",
    "ComponentConfig",
    "EstimateConfig",
    "SimulateConfig",
    "VarianceCurvesConfig",
    "CheckRatesConfig",
    "RunConfig",
    "parse_config",
    "load_config",
    "serialize_config",
    "config_hash",
    "build_nuisance",
    "build_mc_config",
    "DEFAULT_OUT_ENV",
]

DEFAULT_OUT_ENV = "DRCATE_OUT"

_METHODS = ("oracle", "parametric", "nonparametric", "semiparametric")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _check_keys(section: str, mapping: dict, allowed: tuple[str, ...]) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(mapping).__name__}")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}; allowed keys: {sorted(allowed)}")


def _as_float_tuple(section: str, value) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{section}: expected a list of numbers")
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}: expected a list of numbers") from None


@dataclass(frozen=True)
class RunSection:
    out_dir: str | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("run.seed: must be a nonnegative integer")
        if self.seed >= 2**64:
            raise ConfigError("run.seed: must fit in 64 bits")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("run.threads: must be a positive integer")


@dataclass(frozen=True)
class BandwidthConfig:
    """Either a literal value or an (a, eta) rule evaluated at sample size."""

    value: float | None = None
    a: float | None = None
    eta: float | None = None

    def __post_init__(self) -> None:
        has_rule = self.a is not None or self.eta is not None
        if self.value is not None and has_rule:
            raise ConfigError("bandwidth: give either a literal value or {a, eta}, not both")
        if self.value is None and (self.a is None or self.eta is None):
            raise ConfigError("bandwidth: need a literal value or both a and eta")
        if self.value is not None and self.value <= 0:
            raise ConfigError("bandwidth: literal value must be positive")

    def resolve(self, n: int) -> float:
        if self.value is not None:
            return float(self.value)
        return BandwidthRule(self.a, self.eta)(n)


def _parse_bandwidth(section: str, value) -> BandwidthConfig:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return BandwidthConfig(value=float(value))
    if isinstance(value, dict):
        _check_keys(section, value, ("a", "eta"))
        a = value.get("a")
        eta = value.get("eta")
        return BandwidthConfig(a=None if a is None else float(a), eta=None if eta is None else float(eta))
    raise ConfigError(f"{section}: expected a number or a mapping with keys a, eta")


def _bandwidth_dict(bw: BandwidthConfig):
    if bw.value is not None:
        return bw.value
    return {"a": bw.a, "eta": bw.eta}


@dataclass(frozen=True)
class SdrConfig:
    target_dim: int
    source: str = "oracle"
    matrix: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.source not in ("oracle", "opg"):
            raise ConfigError("sdr.source: must be 'oracle' or 'opg'")
        if self.source == "oracle" and self.matrix is None:
            raise ConfigError("sdr: oracle source requires a matrix")
        if self.source == "opg" and self.matrix is not None:
            raise ConfigError("sdr: opg source estimates its matrix; remove the matrix key")


def _parse_sdr(section: str, value) -> SdrConfig:
    _check_keys(section, value, ("target_dim", "source", "matrix"))
    if "target_dim" not in value:
        raise ConfigError(f"{section}: target_dim is required")
    matrix = value.get("matrix")
    if matrix is not None:
        if not isinstance(matrix, list) or not all(isinstance(r, list) for r in matrix):
            raise ConfigError(f"{section}.matrix: expected a list of rows")
        matrix = tuple(tuple(float(v) for v in row) for row in matrix)
    return SdrConfig(
        target_dim=int(value["target_dim"]),
        source=value.get("source", "oracle"),
        matrix=matrix,
    )


@dataclass(frozen=True)
class ComponentConfig:
    method: str
    features: str | None = None
    kernel: str | None = None
    h: BandwidthConfig | None = None
    sdr: SdrConfig | None = None

    def __post_init__(self) -> None:
        if self.method not in _METHODS:
            raise ConfigError(f"component.method: must be one of {_METHODS}")
        if self.method == "parametric" and self.features not in FEATURE_MAPS:
            raise ConfigError(
                f"component.features: parametric method needs one of {sorted(FEATURE_MAPS)}"
            )
        if self.method in ("nonparametric", "semiparametric"):
            if self.kernel is None or self.h is None:
                raise ConfigError(f"component: {self.method} method needs kernel and h")
        if self.method == "semiparametric" and self.sdr is None:
            raise ConfigError("component: semiparametric method needs an sdr mapping")


def _parse_component(section: str, value) -> ComponentConfig:
    _check_keys(section, value, ("method", "features", "kernel", "h", "sdr"))
    if "method" not in value:
        raise ConfigError(f"{section}: method is required")
    h = value.get("h")
    sdr = value.get("sdr")
    return ComponentConfig(
        method=value["method"],
        features=value.get("features"),
        kernel=value.get("kernel"),
        h=None if h is None else _parse_bandwidth(f"{section}.h", h),
        sdr=None if sdr is None else _parse_sdr(f"{section}.sdr", sdr),
    )


def _component_dict(comp: ComponentConfig) -> dict:
    out: dict = {"method": comp.method}
    if comp.features is not None:
        out["features"] = comp.features
    if comp.kernel is not None:
        out["kernel"] = comp.kernel
    if comp.h is not None:
        out["h"] = _bandwidth_dict(comp.h)
    if comp.sdr is not None:
        sdr: dict = {"target_dim": comp.sdr.target_dim, "source": comp.sdr.source}
        if comp.sdr.matrix is not None:
            sdr["matrix"] = [list(row) for row in comp.sdr.matrix]
        out["sdr"] = sdr
    return out


@dataclass(frozen=True)
class EstimateConfig:
    data: str
    x1_columns: tuple[str, ...] = ("x1",)
    grid: tuple[float, ...] | None = None
    propensity: ComponentConfig = field(
        default_factory=lambda: ComponentConfig(method="parametric", features="intercept+all")
    )
    outcome1: ComponentConfig = field(
        default_factory=lambda: ComponentConfig(method="parametric", features="intercept+all")
    )
    outcome0: ComponentConfig = field(
        default_factory=lambda: ComponentConfig(method="parametric", features="intercept+all")
    )
    kernel1: str = "gaussian:4"
    h1: BandwidthConfig = field(default_factory=lambda: BandwidthConfig(a=0.1, eta=1.0 / 9.0))
    trim: tuple[float, float] = DEFAULT_TRIM

    def __post_init__(self) -> None:
        if not self.x1_columns:
            raise ConfigError("estimate.x1_columns: must name at least one column")
        if self.grid is not None and len(self.grid) == 0:
            raise ConfigError("estimate.grid: must be nonempty when given")


def _parse_estimate(value) -> EstimateConfig:
    allowed = (
        "data",
        "x1_columns",
        "grid",
        "propensity",
        "outcome1",
        "outcome0",
        "kernel1",
        "h1",
        "trim",
    )
    _check_keys("estimate", value, allowed)
    if "data" not in value:
        raise ConfigError("estimate.data: path to the dataset CSV is required")
    kwargs: dict = {"data": str(value["data"])}
    if "x1_columns" in value:
        cols = value["x1_columns"]
        if not isinstance(cols, list) or not all(isinstance(c, str) for c in cols):
            raise ConfigError("estimate.x1_columns: expected a list of column names")
        kwargs["x1_columns"] = tuple(cols)
    if "grid" in value and value["grid"] is not None:
        kwargs["grid"] = _as_float_tuple("estimate.grid", value["grid"])
    for key in ("propensity", "outcome1", "outcome0"):
        if key in value:
            kwargs[key] = _parse_component(f"estimate.{key}", value[key])
    if "kernel1" in value:
        kwargs["kernel1"] = str(value["kernel1"])
    if "h1" in value:
        kwargs["h1"] = _parse_bandwidth("estimate.h1", value["h1"])
    if "trim" in value:
        trim = _as_float_tuple("estimate.trim", value["trim"])
        if len(trim) != 2:
            raise ConfigError("estimate.trim: expected [lo, hi]")
        kwargs["trim"] = trim
    return EstimateConfig(**kwargs)


def _estimate_dict(est: EstimateConfig) -> dict:
    out: dict = {
        "data": est.data,
        "x1_columns": list(est.x1_columns),
        "kernel1": est.kernel1,
        "h1": _bandwidth_dict(est.h1),
        "trim": list(est.trim),
        "propensity": _component_dict(est.propensity),
        "outcome1": _component_dict(est.outcome1),
        "outcome0": _component_dict(est.outcome0),
    }
    if est.grid is not None:
        out["grid"] = list(est.grid)
    return out


@dataclass(frozen=True)
class SimulateConfig:
    model: str = MODEL1
    n: int = 500
    combination: str = "(O,O)"
    replications: int = 500
    grid: tuple[float, ...] = DEFAULT_GRID
    sdr_source: str = "oracle"
    trim: tuple[float, float] = DEFAULT_TRIM

    def __post_init__(self) -> None:
        if self.model not in (MODEL1, MODEL2):
            raise ConfigError(f"simulate.model: must be {MODEL1!r} or {MODEL2!r}")
        if self.combination not in COMBINATIONS:
            raise ConfigError(
                f"simulate.combination: unknown label {self.combination!r}; "
                f"expected one of {list(COMBINATIONS)}"
            )


def _parse_simulate(value) -> SimulateConfig:
    allowed = ("model", "n", "combination", "replications", "grid", "sdr_source", "trim")
    _check_keys("simulate", value, allowed)
    kwargs: dict = {}
    if "model" in value:
        kwargs["model"] = str(value["model"])
    if "n" in value:
        kwargs["n"] = int(value["n"])
    if "combination" in value:
        kwargs["combination"] = str(value["combination"])
    if "replications" in value:
        kwargs["replications"] = int(value["replications"])
    if "grid" in value:
        kwargs["grid"] = _as_float_tuple("simulate.grid", value["grid"])
    if "sdr_source" in value:
        kwargs["sdr_source"] = str(value["sdr_source"])
    if "trim" in value:
        trim = _as_float_tuple("simulate.trim", value["trim"])
        if len(trim) != 2:
            raise ConfigError("simulate.trim: expected [lo, hi]")
        kwargs["trim"] = trim
    return SimulateConfig(**kwargs)


def _simulate_dict(sim: SimulateConfig) -> dict:
    return {
        "model": sim.model,
        "n": sim.n,
        "combination": sim.combination,
        "replications": sim.replications,
        "grid": list(sim.grid),
        "sdr_source": sim.sdr_source,
        "trim": list(sim.trim),
    }


@dataclass(frozen=True)
class VarianceCurvesConfig:
    p1: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    p2_start: float = 0.01
    p2_stop: float = 0.99
    p2_count: int = 99
    xi_sq: float = 1.0

    def __post_init__(self) -> None:
        if not self.p1:
            raise ConfigError("variance_curves.p1: must be nonempty")
        if not (0 < self.p2_start <= self.p2_stop < 1):
            raise ConfigError("variance_curves: need 0 < p2_start <= p2_stop < 1")
        if self.p2_count < 1:
            raise ConfigError("variance_curves.p2_count: must be >= 1")
        if self.xi_sq <= 0:
            raise ConfigError("variance_curves.xi_sq: must be positive")
        bad = [p for p in self.p1 if not 0 < p < 1]
        if bad:
            raise ConfigError(f"variance_curves.p1: values must lie in (0,1), got {bad}")

    def p2_grid(self) -> np.ndarray:
        return np.linspace(self.p2_start, self.p2_stop, self.p2_count)


def _parse_variance_curves(value) -> VarianceCurvesConfig:
    allowed = ("p1", "p2_start", "p2_stop", "p2_count", "xi_sq")
    _check_keys("variance_curves", value, allowed)
    kwargs: dict = {}
    if "p1" in value:
        kwargs["p1"] = _as_float_tuple("variance_curves.p1", value["p1"])
    for key in ("p2_start", "p2_stop", "xi_sq"):
        if key in value:
            kwargs[key] = float(value[key])
    if "p2_count" in value:
        kwargs["p2_count"] = int(value["p2_count"])
    return VarianceCurvesConfig(**kwargs)


def _variance_curves_dict(vc: VarianceCurvesConfig) -> dict:
    return {
        "p1": list(vc.p1),
        "p2_start": vc.p2_start,
        "p2_stop": vc.p2_stop,
        "p2_count": vc.p2_count,
        "xi_sq": vc.xi_sq,
    }


@dataclass(frozen=True)
class CheckRatesConfig:
    """Rate-condition checker inputs.

    A `model` prefills the benchmark schedule and orders; explicit
    `orders`/`bandwidths` entries override role by role.
    """

    model: str | None = None
    d: int | None = None
    k: int = 1
    scenario: str = "full"
    orders: tuple[tuple[str, int], ...] = ()
    bandwidths: tuple[tuple[str, BandwidthConfig], ...] = ()

    def __post_init__(self) -> None:
        if self.model is None and self.d is None:
            raise ConfigError("check_rates: give a model or an explicit d")
        for role, bw in self.bandwidths:
            if bw.value is not None:
                raise ConfigError(
                    f"check_rates.bandwidths.{role}: rate checking needs {{a, eta}} rules, "
                    "not literal values"
                )


def _parse_check_rates(value) -> CheckRatesConfig:
    allowed = ("model", "d", "k", "scenario", "orders", "bandwidths")
    _check_keys("check_rates", value, allowed)
    kwargs: dict = {}
    if "model" in value:
        kwargs["model"] = str(value["model"])
    if "d" in value:
        kwargs["d"] = int(value["d"])
    if "k" in value:
        kwargs["k"] = int(value["k"])
    if "scenario" in value:
        kwargs["scenario"] = str(value["scenario"])
    if "orders" in value:
        ordmap = value["orders"]
        if not isinstance(ordmap, dict):
            raise ConfigError("check_rates.orders: expected a mapping like {s1: 4}")
        kwargs["orders"] = tuple(sorted((str(k_), int(v)) for k_, v in ordmap.items()))
    if "bandwidths" in value:
        bwmap = value["bandwidths"]
        if not isinstance(bwmap, dict):
            raise ConfigError("check_rates.bandwidths: expected a mapping of roles")
        kwargs["bandwidths"] = tuple(
            sorted(
                (str(role), _parse_bandwidth(f"check_rates.bandwidths.{role}", bw))
                for role, bw in bwmap.items()
            )
        )
    return CheckRatesConfig(**kwargs)


def _check_rates_dict(cr: CheckRatesConfig) -> dict:
    out: dict = {"k": cr.k, "scenario": cr.scenario}
    if cr.model is not None:
        out["model"] = cr.model
    if cr.d is not None:
        out["d"] = cr.d
    if cr.orders:
        out["orders"] = {k_: v for k_, v in cr.orders}
    if cr.bandwidths:
        out["bandwidths"] = {role: _bandwidth_dict(bw) for role, bw in cr.bandwidths}
    return out


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    estimate: EstimateConfig | None = None
    simulate: SimulateConfig | None = None
    variance_curves: VarianceCurvesConfig | None = None
    check_rates: CheckRatesConfig | None = None


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if raw is None:
        raw = {}
    _check_keys("config", raw, ("run", "estimate", "simulate", "variance_curves", "check_rates"))
    run_raw = raw.get("run", {})
    _check_keys("run", run_raw, ("out_dir", "seed", "threads"))
    run = RunSection(
        out_dir=None if run_raw.get("out_dir") is None else str(run_raw["out_dir"]),
        seed=run_raw.get("seed", 0),
        threads=run_raw.get("threads", 1),
    )
    return RunConfig(
        run=run,
        estimate=None if "estimate" not in raw else _parse_estimate(raw["estimate"]),
        simulate=None if "simulate" not in raw else _parse_simulate(raw["simulate"]),
        variance_curves=(
            None if "variance_curves" not in raw else _parse_variance_curves(raw["variance_curves"])
        ),
        check_rates=None if "check_rates" not in raw else _parse_check_rates(raw["check_rates"]),
    )


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _to_dict(config: RunConfig, *, semantic_only: bool = False) -> dict:
    run: dict = {"seed": config.run.seed}
    if not semantic_only:
        run["threads"] = config.run.threads
        if config.run.out_dir is not None:
            run["out_dir"] = config.run.out_dir
    out: dict = {"run": run}
    if config.estimate is not None:
        out["estimate"] = _estimate_dict(config.estimate)
    if config.simulate is not None:
        out["simulate"] = _simulate_dict(config.simulate)
    if config.variance_curves is not None:
        out["variance_curves"] = _variance_curves_dict(config.variance_curves)
    if config.check_rates is not None:
        out["check_rates"] = _check_rates_dict(config.check_rates)
    return out


def serialize_config(config: RunConfig) -> str:
    return yaml.safe_dump(_to_dict(config), sort_keys=True, default_flow_style=False)


def config_hash(config: RunConfig) -> str:
    """Hash of the semantic fields; output dir and thread count excluded."""
    canonical = yaml.safe_dump(_to_dict(config, semantic_only=True), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_nuisance(est: EstimateConfig, n: int, d: int) -> NuisanceConfig:
    """Realize the three nuisance components with kernel dimensions bound.

    Nonparametric kernels smooth over all d covariates; semiparametric
    kernels smooth over the sdr target dimension.
    """

    def realize(comp: ComponentConfig, section: str) -> ComponentSpec:
        kernel = None
        if comp.kernel is not None:
            dim = comp.sdr.target_dim if comp.method == "semiparametric" else d
            kernel = KernelSpec.parse(comp.kernel, dim=dim)
        sdr = None
        if comp.sdr is not None:
            matrix = None
            if comp.sdr.matrix is not None:
                matrix = np.asarray(comp.sdr.matrix, dtype=float)
                if matrix.shape != (d, comp.sdr.target_dim):
                    raise ConfigError(
                        f"{section}.sdr.matrix: expected shape ({d}, {comp.sdr.target_dim}), "
                        f"got {matrix.shape}"
                    )
            sdr = SdrSpec(target_dim=comp.sdr.target_dim, source=comp.sdr.source, matrix=matrix)
        return ComponentSpec(
            method=comp.method,
            features=comp.features,
            kernel=kernel,
            h=None if comp.h is None else comp.h.resolve(n),
            sdr=sdr,
        )

    return NuisanceConfig(
        propensity=realize(est.propensity, "estimate.propensity"),
        outcome1=realize(est.outcome1, "estimate.outcome1"),
        outcome0=realize(est.outcome0, "estimate.outcome0"),
        trim=est.trim,
    )


def build_mc_config(config: RunConfig) -> McConfig:
    if config.simulate is None:
        raise ConfigError("config has no simulate section")
    sim = config.simulate
    return McConfig(
        dgp=DgpSpec(model=sim.model, n=sim.n, seed=config.run.seed),
        combination=sim.combination,
        grid=sim.grid,
        replications=sim.replications,
        sdr_source=sim.sdr_source,
        trim=sim.trim,
        threads=config.run.threads,
    )
