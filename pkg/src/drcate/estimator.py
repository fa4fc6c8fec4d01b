"""Second-step smoothing of the doubly robust pseudo-outcome.

The pseudo-outcome psi = d*(y - m1)/p - (1-d)*(y - m0)/(1-p) + m1 - m0 has
conditional mean tau(x1) given the conditioning covariates whenever either
the propensity or the outcome regressions are correct.  Smoothing psi over
X1 with a (possibly higher-order) kernel yields the effect curve tau_hat,
together with the kernel density estimate f_hat and the scaled error
statistic T = sqrt(n*h1^k) * (tau_hat - tau).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, kernel_values
from .nuisance import Dataset, NuisanceFit

__all__ = [
    "CateCurve",
    "pseudo_outcome",
    "pseudo_outcomes",
    "estimate_cate",
    "standardized_stat",
]

_Z975 = 1.96

# relative near-cancellation threshold for the smoothing denominator
_DENOM_RTOL = 1e-12


def pseudo_outcome(p: float, m1: float, m0: float, y: float, d: int) -> float:
    """Doubly robust pseudo-outcome for one observation."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"propensity must lie strictly in (0,1), got {p}")
    if d not in (0, 1):
        raise ValueError("d must be 0 or 1")
    return d * (y - m1) / p - (1 - d) * (y - m0) / (1.0 - p) + m1 - m0


def pseudo_outcomes(fit: NuisanceFit, data: Dataset) -> np.ndarray:
    """Vector of pseudo-outcomes from fitted nuisances."""
    p = fit.p_hat
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("fitted propensities must lie strictly in (0,1)")
    d = data.D.astype(float)
    return (
        d * (data.Y - fit.m1_hat) / p
        - (1.0 - d) * (data.Y - fit.m0_hat) / (1.0 - p)
        + fit.m1_hat
        - fit.m0_hat
    )


@dataclass(frozen=True)
class CateCurve:
    """Effect curve on a grid of conditioning points.

    Grid points whose kernel window carries no positive density mass are
    missing: tau_hat and f_hat are NaN there and stay out of the CSV as
    numbers.  v_hat starts as NaN and is filled by the plug-in variance
    routine.
    """

    grid: np.ndarray  # (G, k)
    tau_hat: np.ndarray
    f_hat: np.ndarray
    v_hat: np.ndarray
    n_eff: np.ndarray
    n: int
    h1: float
    kernel: KernelSpec
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        G = self.grid.shape[0]
        for name in ("tau_hat", "f_hat", "v_hat"):
            if getattr(self, name).shape != (G,):
                raise ValueError(f"{name} must have one entry per grid point")
        if self.n_eff.shape != (G,):
            raise ValueError("n_eff must have one entry per grid point")
        ok = ~np.isnan(self.f_hat)
        if np.any(self.f_hat[ok] <= 0.0):
            raise ValueError("reported grid points must have positive density")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.tau_hat)

    def scale(self) -> float:
        """Effective local sample size n * h1^k."""
        return self.n * self.h1 ** self.grid.shape[1]

    def confidence_bounds(self, z: float = _Z975) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise normal bands tau_hat +/- z * sqrt(v_hat / (n h1^k)).

        Valid under undersmoothing (no bias-correction term is added).
        """
        half = z * np.sqrt(self.v_hat / self.scale())
        return self.tau_hat - half, self.tau_hat + half


def _as_grid(grid, k: int) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        if k != 1:
            raise ValueError(f"grid points must be length-{k} vectors")
        g = g[:, None]
    if g.ndim != 2 or g.shape[1] != k:
        raise ValueError(f"grid must be (G, {k})")
    return g


def estimate_cate(
    data: Dataset,
    fit: NuisanceFit,
    grid,
    K1: KernelSpec,
    h1: float,
) -> CateCurve:
    """Smooth the pseudo-outcomes over X1 at each grid point."""
    if K1.dim != data.k:
        raise ValueError(f"K1.dim {K1.dim} must equal conditioning dim {data.k}")
    if h1 <= 0:
        raise ValueError("h1 must be positive")
    g = _as_grid(grid, data.k)
    psi = pseudo_outcomes(fit, data)
    X1 = data.X1

    G = g.shape[0]
    tau = np.full(G, np.nan)
    f = np.full(G, np.nan)
    n_eff = np.zeros(G, dtype=int)
    n_missing = 0
    scale = data.n * h1**data.k
    for i in range(G):
        w = kernel_values(K1, (X1 - g[i]) / h1)
        den = w.sum()
        mass = np.abs(w).sum()
        n_eff[i] = int(np.count_nonzero(w))
        if mass == 0.0 or abs(den) <= _DENOM_RTOL * max(mass, 1.0) or den <= 0.0:
            n_missing += 1
            continue
        tau[i] = float(w @ psi) / den
        f[i] = den / scale
    diagnostics = {"missing_grid_points": n_missing}
    return CateCurve(
        grid=g,
        tau_hat=tau,
        f_hat=f,
        v_hat=np.full(G, np.nan),
        n_eff=n_eff,
        n=data.n,
        h1=float(h1),
        kernel=K1,
        diagnostics=diagnostics,
    )


def standardized_stat(tau_hat, tau_true, n: int, h1: float, k: int):
    """Scaled error statistic sqrt(n * h1^k) * (tau_hat - tau_true).

    Accepts scalars or arrays (broadcast); returns a float for scalar input.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if h1 <= 0:
        raise ValueError("h1 must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    out = np.sqrt(n * h1**k) * (np.asarray(tau_hat, dtype=float) - np.asarray(tau_true, dtype=float))
    if out.ndim == 0:
        return float(out)
    return out
