"""Higher-order product kernels and bandwidth-rate validation.

Univariate members are even polynomials times a base window (Gaussian density
or Epanechnikov parabola), giving kernels of order 2, 4, or 6: all moments
below the order vanish, the order-th moment does not.  Multivariate kernels
are products of one univariate factor per coordinate.  Bandwidths follow the
power schedule h_j(n) = a_j * n**(-eta_j), one entry per smoothing role.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.integrate import quad

__all__ = [
    "KernelSpec",
    "BandwidthRule",
    "BandwidthSchedule",
    "RateViolation",
    "kernel_eval",
    "kernel_values",
    "kernel_moment",
    "roughness",
    "check_rate_conditions",
    "RATE_SCENARIOS",
]

GAUSSIAN = "gaussian"
EPANECHNIKOV = "epanechnikov"

_FAMILIES = (GAUSSIAN, EPANECHNIKOV)
_ORDERS = (2, 4, 6)

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Quadrature support for moment integrals: Epanechnikov is exact on its unit
# support; the Gaussian tail beyond |u| = 12 is below 1e-12 for every moment
# used here.
_GAUSSIAN_CUTOFF = 12.0


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, order, and product dimension."""

    family: str
    order: int
    dim: int = 1

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.order not in _ORDERS:
            raise ValueError(f"kernel order must be one of {_ORDERS}, got {self.order}")
        if self.dim < 1:
            raise ValueError(f"kernel dim must be >= 1, got {self.dim}")

    @classmethod
    def parse(cls, text: str, dim: int = 1) -> "KernelSpec":
        """Parse a ``"family:order"`` string such as ``"gaussian:4"``."""
        try:
            family, order = text.split(":")
            return cls(family.strip().lower(), int(order), dim)
        except ValueError as exc:
            raise ValueError(f"cannot parse kernel spec {text!r}") from exc

    def tag(self) -> str:
        return f"{self.family}:{self.order}"


def _gaussian_poly(order: int, usq: np.ndarray) -> np.ndarray:
    if order == 2:
        return np.ones_like(usq)
    if order == 4:
        return (3.0 - usq) / 2.0
    return (15.0 - 10.0 * usq + usq * usq) / 8.0


def _epanechnikov_poly(order: int, usq: np.ndarray) -> np.ndarray:
    if order == 2:
        return np.full_like(usq, 0.75)
    if order == 4:
        return (15.0 / 32.0) * (3.0 - 7.0 * usq)
    return (105.0 / 256.0) * (5.0 - 30.0 * usq + 33.0 * usq * usq)


def univariate(family: str, order: int, u: np.ndarray) -> np.ndarray:
    """Evaluate the univariate order-`order` kernel at the points `u`."""
    u = np.asarray(u, dtype=float)
    usq = u * u
    if family == GAUSSIAN:
        base = np.exp(-0.5 * usq) / _SQRT_2PI
        return _gaussian_poly(order, usq) * base
    inside = usq <= 1.0
    vals = (1.0 - usq) * _epanechnikov_poly(order, usq)
    return np.where(inside, vals, 0.0)


def kernel_eval(spec: KernelSpec, u) -> float:
    """Product-kernel value at a single length-`spec.dim` point."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (spec.dim,):
        raise ValueError(f"expected a length-{spec.dim} point, got shape {u.shape}")
    factors = univariate(spec.family, spec.order, u)
    out = 1.0
    for f in factors:
        out *= float(f)
    return out


def kernel_values(spec: KernelSpec, U: np.ndarray) -> np.ndarray:
    """Vectorized product-kernel values for rows of an (m, dim) array.

    A 1-D input is accepted when dim = 1.  This is the hot path behind every
    kernel-regression sum.
    """
    U = np.asarray(U, dtype=float)
    if spec.dim == 1 and U.ndim == 1:
        U = U[:, None]
    if U.ndim != 2 or U.shape[1] != spec.dim:
        raise ValueError(f"expected (m, {spec.dim}) points, got shape {U.shape}")
    vals = univariate(spec.family, spec.order, U)
    return vals.prod(axis=1)


def kernel_moment(spec: KernelSpec, j: int) -> float:
    """j-th moment of the univariate kernel by adaptive quadrature."""
    if spec.dim != 1:
        raise ValueError("kernel_moment is defined for dim = 1 kernels")
    if j < 0:
        raise ValueError("moment index must be nonnegative")
    lim = 1.0 if spec.family == EPANECHNIKOV else _GAUSSIAN_CUTOFF

    def integrand(u: float) -> float:
        return u**j * float(univariate(spec.family, spec.order, np.array([u]))[0])

    val, err = quad(integrand, -lim, lim, epsabs=1e-12, epsrel=1e-12, limit=200)
    if err > 1e-9:
        raise RuntimeError(f"moment quadrature error {err:.2e} above tolerance")
    return val


@lru_cache(maxsize=None)
def _univariate_square_integral(family: str, order: int) -> float:
    # Closed forms for the order-2 members; quadrature for higher orders.
    if order == 2:
        if family == EPANECHNIKOV:
            return 0.6
        return 1.0 / (2.0 * math.sqrt(math.pi))
    lim = 1.0 if family == EPANECHNIKOV else _GAUSSIAN_CUTOFF

    def integrand(u: float) -> float:
        return float(univariate(family, order, np.array([u]))[0]) ** 2

    val, err = quad(integrand, -lim, lim, epsabs=1e-12, epsrel=1e-12, limit=200)
    if err > 1e-9:
        raise RuntimeError(f"square-integral quadrature error {err:.2e} above tolerance")
    return val


def roughness(spec: KernelSpec) -> float:
    """Integral of the squared product kernel over its full domain."""
    return _univariate_square_integral(spec.family, spec.order) ** spec.dim


class BandwidthRule:
    """One power-schedule entry h(n) = a * n**(-eta)."""

    __slots__ = ("a", "eta")

    def __init__(self, a: float, eta: float) -> None:
        if not a > 0:
            raise ValueError(f"bandwidth scale must be positive, got {a}")
        if not eta > 0:
            raise ValueError(f"bandwidth exponent must be positive, got {eta}")
        self.a = float(a)
        self.eta = float(eta)

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ValueError("sample size must be >= 1")
        return self.a * n ** (-self.eta)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BandwidthRule)
            and self.a == other.a
            and self.eta == other.eta
        )

    def __repr__(self) -> str:
        return f"BandwidthRule(a={self.a}, eta={self.eta})"


_ROLES = ("h1", "h2", "h3", "h4", "h5", "h6", "h7")


@dataclass(frozen=True)
class BandwidthSchedule:
    """Per-role bandwidth rules; roles h1..h7 cover the second-step smoother
    (h1), the propensity fits (h2 kernel, h5 reduced-space), and the two
    outcome arms (h3/h4 kernel, h6/h7 reduced-space)."""

    rules: Mapping[str, BandwidthRule]

    def __post_init__(self) -> None:
        for role in self.rules:
            if role not in _ROLES:
                raise ValueError(f"unknown bandwidth role {role!r}")

    def value(self, role: str, n: int) -> float:
        if role not in self.rules:
            raise ValueError(f"no bandwidth rule for role {role!r}")
        return self.rules[role](n)

    def exponent(self, role: str) -> float:
        if role not in self.rules:
            raise ValueError(f"no bandwidth rule for role {role!r}")
        return self.rules[role].eta


@dataclass(frozen=True)
class RateViolation:
    role: str
    rule: str
    detail: str

    def __str__(self) -> str:
        return f"{self.role} [{self.rule}]: {self.detail}"


# First-step roles by side: propensity smoothing vs outcome smoothing.  The
# cross-product conditions couple one role from each side.
_PS_ROLES = ("h2", "h5")
_OR_ROLES = ("h3", "h4", "h6", "h7")

# Scenario -> first-step roles whose conditions bind.  "full" is the
# everything-kernel-smoothed case and the only one with cross products;
# "parametric-propensity" keeps only outcome smoothing, "parametric-outcome"
# only propensity smoothing, and "either-parametric" is their union (one side
# parametric, possibly locally misspecified, so no cross products bind).
RATE_SCENARIOS: Mapping[str, tuple[tuple[str, ...], bool]] = {
    "full": (_PS_ROLES + _OR_ROLES, True),
    "parametric-propensity": (_OR_ROLES, False),
    "parametric-outcome": (_PS_ROLES, False),
    "either-parametric": (_PS_ROLES + _OR_ROLES, False),
}


def check_rate_conditions(
    schedule: BandwidthSchedule,
    orders: Mapping[str, int],
    d: int,
    k: int,
    scenario: str = "full",
) -> list[RateViolation]:
    """Evaluate the bandwidth-exponent inequalities symbolically.

    Returns the empty list iff every inequality of the scenario holds.  The
    second-step conditions are: eta1 > 0, k*eta1 < 1 (the effective local
    sample n*h1^k must diverge), and (2*s1 + k)*eta1 >= 1 (undersmoothing:
    n*h1^(2*s1+k) must stay bounded; equality admits the boundary schedules
    used by the bundled models).  Each first-step role j needs d*eta_j < 1
    for uniform consistency plus the strict bias-versus-h1 inequalities
    2*s_j*eta_j > (2*s_j + k)*eta_1 and 2*s_j*eta_j > 1 - k*eta_1; in the
    full scenario the propensity/outcome cross products additionally need
    s_i*eta_i + s_j*eta_j > 1 - k*eta_1.
    """
    if d < 1 or k < 1 or k >= d:
        raise ValueError(f"need 1 <= k < d, got k={k}, d={d}")
    if scenario not in RATE_SCENARIOS:
        raise ValueError(
            f"unknown scenario {scenario!r}; expected one of {sorted(RATE_SCENARIOS)}"
        )
    first_step, with_cross = RATE_SCENARIOS[scenario]

    required = ("h1",) + first_step
    for role in required:
        if role not in schedule.rules:
            raise ValueError(f"scenario {scenario!r} requires a rule for {role!r}")
        s_role = "s" + role[1:]
        if s_role not in orders:
            raise ValueError(f"scenario {scenario!r} requires order {s_role!r}")

    violations: list[RateViolation] = []
    eta1 = schedule.exponent("h1")
    s1 = int(orders["s1"])

    if k * eta1 >= 1.0:
        violations.append(
            RateViolation(
                "h1",
                "effective-sample",
                f"k*eta1 = {k * eta1:.4g} must be < 1 so n*h1^k diverges",
            )
        )
    if (2 * s1 + k) * eta1 < 1.0:
        violations.append(
            RateViolation(
                "h1",
                "undersmoothing",
                f"(2*s1+k)*eta1 = {(2 * s1 + k) * eta1:.4g} must be >= 1 "
                "so the smoothing bias is asymptotically negligible",
            )
        )

    for role in first_step:
        eta_j = schedule.exponent(role)
        s_j = int(orders["s" + role[1:]])
        if d * eta_j >= 1.0:
            violations.append(
                RateViolation(
                    role,
                    "first-step-consistency",
                    f"d*eta = {d * eta_j:.4g} must be < 1 for uniform consistency",
                )
            )
        if 2 * s_j * eta_j <= (2 * s_j + k) * eta1:
            violations.append(
                RateViolation(
                    role,
                    "bias-vs-h1",
                    f"2*s*eta = {2 * s_j * eta_j:.4g} must exceed "
                    f"(2*s+k)*eta1 = {(2 * s_j + k) * eta1:.4g}",
                )
            )
        if 2 * s_j * eta_j <= 1.0 - k * eta1:
            violations.append(
                RateViolation(
                    role,
                    "bias-vs-root",
                    f"2*s*eta = {2 * s_j * eta_j:.4g} must exceed "
                    f"1 - k*eta1 = {1.0 - k * eta1:.4g}",
                )
            )

    if with_cross:
        bound = 1.0 - k * eta1
        for ps_role in _PS_ROLES:
            eta_i = schedule.exponent(ps_role)
            s_i = int(orders["s" + ps_role[1:]])
            for or_role in _OR_ROLES:
                eta_j = schedule.exponent(or_role)
                s_j = int(orders["s" + or_role[1:]])
                total = s_i * eta_i + s_j * eta_j
                if total <= bound:
                    violations.append(
                        RateViolation(
                            f"{ps_role}*{or_role}",
                            "cross-product",
                            f"s_i*eta_i + s_j*eta_j = {total:.4g} must exceed "
                            f"1 - k*eta1 = {bound:.4g}",
                        )
                    )
    return violations
