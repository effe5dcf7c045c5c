"""Cubic smoothing spline for within-pulse noise.

The spline has a knot at every sample and natural end conditions; the fit
minimises ``sum((y - g)**2) + factor * integral(g''**2)`` (Reinsch's
formulation, solved as a banded positive definite system).  When no factor
is given it is chosen by the discrepancy principle: the residual sum of
squares is matched to ``N * sigma**2`` with ``sigma`` estimated from the
signal tail.

Noise is treated as homoscedastic; the weighting that heteroscedastic
detector noise would call for is not modelled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError
from .flux import MIN_GRID_POINTS, Flux

MAD_TO_STD = 1.4826
BISECTION_STEPS = 30
# Bracket for the dimensionless penalty factor / step**3 (log10).
_LOG_P_RANGE = (-8.0, 12.0)


@dataclass(frozen=True, eq=False)
class SmoothResult:
    smoothed: Flux
    residuals: np.ndarray
    smoothing_factor: float
    residual_std: float


def estimate_noise_std(flux: Flux, tail_fraction: float = 0.1) -> float:
    """Robust white-noise level from first differences of the signal tail."""
    if not 0 < tail_fraction <= 0.5:
        raise DomainError("tail_fraction must lie in (0, 0.5]")
    n_tail = max(int(round(tail_fraction * flux.grid.count)), 3)
    d = np.diff(flux.values[-n_tail:])
    mad = np.median(np.abs(d - np.median(d)))
    return float(MAD_TO_STD * mad / np.sqrt(2.0))


class _Reinsch:
    """Banded solver for the smoothing spline on a uniform grid."""

    def __init__(self, y: np.ndarray, step: float):
        self.y = y
        self.h = step
        n = y.size
        # Q^T y: second differences scaled by 1/h.
        self.qty = (y[:-2] - 2 * y[1:-1] + y[2:]) / step
        self.n_inner = n - 2

    def _q_apply(self, gamma: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_inner + 2)
        out[:-2] += gamma
        out[1:-1] -= 2 * gamma
        out[2:] += gamma
        return out / self.h

    def fit(self, p: float) -> tuple[np.ndarray, np.ndarray]:
        """Fitted values and residuals for factor ``p * h**3``."""
        m = self.n_inner
        # (R + lam Q^T Q) / h with lam = p h^3; R has 2h/3 on the diagonal and h/6 beside it.
        ab = np.zeros((3, m))
        ab[2] = 2.0 / 3.0 + 6.0 * p
        ab[1, 1:] = 1.0 / 6.0 - 4.0 * p
        ab[0, 2:] = p
        gamma = linalg.solveh_banded(ab, self.qty / self.h, check_finite=False)
        resid = p * self.h**3 * self._q_apply(gamma)
        return self.y - resid, resid


def _spline_fit(y: np.ndarray, step: float, factor: float):
    if factor == 0:
        return y.copy(), np.zeros_like(y)
    return _Reinsch(y, step).fit(factor / step**3)


def smooth(flux: Flux, factor: float | None = None, tail_fraction: float = 0.5) -> SmoothResult:
    """Cubic smoothing spline of ``flux`` on its own grid.

    Parameters
    ----------
    flux : Flux
        Pulse response; at least 8 samples.
    factor : float, optional
        Roughness penalty weight.  ``None`` selects it automatically so the
        residual variance equals the tail noise estimate.
    tail_fraction : float
        Fraction of trailing samples used by :func:`estimate_noise_std`
        for the automatic factor.  The long default keeps the noise
        estimate within a few percent; a 10% tail scatters by ~13% at
        N = 1000 and the peak is then visibly flattened.
    """
    if flux.grid.count < MIN_GRID_POINTS:
        raise DomainError(f"smoothing needs at least {MIN_GRID_POINTS} samples")
    y = np.asarray(flux.values, dtype=float)
    h = flux.grid.step
    if factor is not None:
        if factor < 0:
            raise DomainError("smoothing factor must be nonnegative")
        fitted, _ = _spline_fit(y, h, float(factor))
    else:
        factor, fitted, _ = _discrepancy_fit(y, h, estimate_noise_std(flux, tail_fraction))
    resid = y - fitted
    return SmoothResult(
        smoothed=flux.with_values(fitted),
        residuals=resid,
        smoothing_factor=float(factor),
        residual_std=float(np.std(resid)),
    )


def _discrepancy_fit(y: np.ndarray, h: float, sigma: float):
    if sigma == 0:
        return 0.0, y.copy(), np.zeros_like(y)
    target = y.size * sigma**2
    solver = _Reinsch(y, h)
    lo, hi = _LOG_P_RANGE

    fit_hi = solver.fit(10.0**hi)
    if np.sum(fit_hi[1] ** 2) <= target:
        return 10.0**hi * h**3, *fit_hi
    fit_lo = solver.fit(10.0**lo)
    if np.sum(fit_lo[1] ** 2) >= target:
        return 10.0**lo * h**3, *fit_lo
    best = fit_lo
    best_p = lo
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        trial = solver.fit(10.0**mid)
        if np.sum(trial[1] ** 2) > target:
            hi = mid
        else:
            lo = mid
            best, best_p = trial, mid
    return 10.0**best_p * h**3, *best
