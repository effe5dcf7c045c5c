"""Calibration between gas species.

Two routes are provided.  The moment route regresses zeroth moments of a
gas on its Gamma area coefficient and on the inert zeroth moment across a
pulse series::

    m0_gas = mu + zeta1 * tau_A + zeta2 * m0_inert

The transient route (TCCO) finds, pulse by pulse, nonnegative coefficients
that map the independent-variable fluxes onto a dependent-variable flux
under the constraints in :mod:`teak.cqp`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cqp import POS_TOL, TccoProblem, TccoSolution, solve
from .errors import DomainError, NumericalError, RankDeficiencyError
from .flux import Flux

HUBER_C = 1.345
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
# Singular value ratio below which a column-normalised design is rank deficient.
RANK_RTOL = 1e-10
RELATIONSHIP_TOL_FRACTION = 0.02


@dataclass(frozen=True)
class MomentCalibModel:
    """Fitted coefficients of the moment regression.

    ``reduced`` marks the fallback fit without the ``tau_A`` column, in
    which case ``zeta1`` is 0 and its standard error is nan.
    """

    mu: float
    zeta1: float
    zeta2: float
    standard_errors: tuple[float, float, float]
    robust: bool = False
    reduced: bool = False
    iterations: int = 0

    @property
    def zeta2_physical(self) -> bool:
        return self.zeta2 > 0

    def predict(self, tau_area, m0_inert) -> np.ndarray:
        return self.mu + self.zeta1 * np.asarray(tau_area) + self.zeta2 * np.asarray(m0_inert)


class Relationship(str, enum.Enum):
    REVERSIBLE = "reversible_consistent"
    IRREVERSIBLE = "irreversible_consistent"
    NO_REACTION = "no_reaction"
    VIOLATION = "violation"


@dataclass(frozen=True)
class CalibrationReport:
    coefficient_per_pulse: tuple
    relationship_check: Relationship
    mass_balance_slack: float


def _full_rank(D: np.ndarray) -> bool:
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        return False
    s = np.linalg.svd(D / norms, compute_uv=False)
    return s[-1] > RANK_RTOL * s[0]


def _huber_weights(r: np.ndarray, scale: float) -> np.ndarray:
    a = np.abs(r)
    w = np.ones_like(r)
    big = a > HUBER_C * scale
    w[big] = HUBER_C * scale / a[big]
    return w


def _robust_scale(r: np.ndarray, floor: float) -> float:
    mad = np.median(np.abs(r - np.median(r))) / 0.6744897501960817
    return max(float(mad), floor)


def _wls(D, y, w):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(D * sw[:, None], y * sw, rcond=None)
    return coef


def _huber_irls(D: np.ndarray, y: np.ndarray):
    coef = _wls(D, y, np.ones_like(y))
    # Exact data give a zero MAD; the floor keeps the weights defined.
    floor = 1e-12 * (1.0 + float(np.max(np.abs(y))))
    for it in range(1, IRLS_MAX_ITER + 1):
        r = y - D @ coef
        w = _huber_weights(r, _robust_scale(r, floor))
        new = _wls(D, y, w)
        if np.max(np.abs(new - coef)) <= IRLS_TOL * (1.0 + np.max(np.abs(new))):
            return new, w, it
        coef = new
    raise NumericalError(f"Huber IRLS did not converge in {IRLS_MAX_ITER} iterations")


def _standard_errors(D, y, coef, w) -> np.ndarray:
    n, p = D.shape
    if n <= p:
        return np.full(p, np.nan)
    r = y - D @ coef
    s2 = float(np.sum(w * r**2)) / (n - p)
    cov = s2 * np.linalg.inv((D * w[:, None]).T @ D)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def fit_moment_calibration(
    m0_gas: Sequence[float],
    tau_area: Sequence[float],
    m0_inert: Sequence[float],
    robust: bool = False,
    allow_reduced: bool = False,
) -> MomentCalibModel:
    """Least-squares fit of ``m0_gas = mu + zeta1 tau_A + zeta2 m0_inert``.

    Parameters
    ----------
    m0_gas, tau_area, m0_inert : sequence of float
        Per-pulse values, equal lengths of at least 4.
    robust : bool
        Huber IRLS (tuning constant 1.345, MAD scale) instead of OLS; use it
        when outgassing inflates some pulses.
    allow_reduced : bool
        When ``tau_A`` is constant across the series (inert-like gas) drop
        that column and fit ``mu + zeta2 m0_inert`` instead of raising.

    Raises
    ------
    RankDeficiencyError
        The design is not of full column rank (and no reduced fit applies).
    NumericalError
        The robust iteration did not converge.
    """
    y = np.asarray(m0_gas, dtype=float)
    tau = np.asarray(tau_area, dtype=float)
    m0i = np.asarray(m0_inert, dtype=float)
    if not (y.ndim == tau.ndim == m0i.ndim == 1 and y.size == tau.size == m0i.size):
        raise DomainError("m0_gas, tau_area and m0_inert must be 1-D and of equal length")
    if y.size < 4:
        raise DomainError("moment calibration needs at least 4 pulses")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(tau)) and np.all(np.isfinite(m0i))):
        raise DomainError("moment calibration inputs must be finite")

    ones = np.ones_like(y)
    D = np.column_stack([ones, tau, m0i])
    reduced = False
    if not _full_rank(D):
        D = np.column_stack([ones, m0i])
        if not allow_reduced or not _full_rank(D):
            raise RankDeficiencyError(
                "moment-calibration design is rank deficient (is tau_A constant across pulses?)"
            )
        reduced = True

    if robust:
        coef, w, its = _huber_irls(D, y)
    else:
        coef, w, its = _wls(D, y, ones), ones, 0
    se = _standard_errors(D, y, coef, w)
    if reduced:
        coef = np.array([coef[0], 0.0, coef[1]])
        se = np.array([se[0], np.nan, se[1]])
    return MomentCalibModel(
        mu=float(coef[0]),
        zeta1=float(coef[1]),
        zeta2=float(coef[2]),
        standard_errors=tuple(float(v) for v in se),
        robust=robust,
        reduced=reduced,
        iterations=its,
    )


@dataclass(frozen=True)
class TccoConfig:
    """Solver options for one transient calibration."""

    enforce_pointwise: bool = True
    enforce_moment: bool = True
    feas_tol: float | None = None
    pos_tol: float = POS_TOL


def _same_grid(a: Flux, b: Flux) -> bool:
    ga, gb = a.grid, b.grid
    tol = 1e-9 * ga.step
    return ga.count == gb.count and abs(ga.start - gb.start) <= tol and abs(ga.step - gb.step) <= tol


def tcco_problem(dv: Flux, ivs: Sequence[Flux], config: TccoConfig | None = None) -> TccoProblem:
    """Transient calibration instance for ``dv`` against ``ivs`` (see :func:`tcco_calibrate`)."""
    config = config or TccoConfig()
    ivs = list(ivs)
    if not ivs:
        raise DomainError("need at least one independent-variable flux")
    for iv in ivs:
        if not _same_grid(dv, iv):
            raise DomainError(
                f"grid mismatch: {iv.species_label or 'IV'} pulse {iv.pulse_index} is not on the DV grid"
            )
    return TccoProblem(
        y=dv.values,
        X=np.column_stack([iv.values for iv in ivs]),
        quad_weights=dv.grid.trapezoid_weights(),
        enforce_pointwise=config.enforce_pointwise,
        enforce_moment=config.enforce_moment,
        feas_tol=config.feas_tol,
        pos_tol=config.pos_tol,
    )


def tcco_calibrate(dv: Flux, ivs: Sequence[Flux], config: TccoConfig | None = None) -> TccoSolution:
    """Coefficients ``b >= 0`` so that ``sum_j b_j ivs[j]`` best matches ``dv``.

    All fluxes must already be smoothed, baseline corrected and aligned to
    the grid of ``dv``; several ``ivs`` model fragments of one gas.
    """
    return solve(tcco_problem(dv, ivs, config))


def apply_coefficients(ivs: Sequence[Flux], b) -> list[Flux]:
    """Calibrated copy ``b_j * ivs[j]`` of each independent-variable flux."""
    return [iv.with_values(bj * iv.values, units="calibrated") for iv, bj in zip(ivs, np.asarray(b))]


def median_reference_index(m0_series: Sequence[float]) -> int:
    """Index of the pulse whose zeroth moment is the series median (lower median for even length)."""
    m0 = np.asarray(m0_series, dtype=float)
    if m0.size == 0:
        raise DomainError("empty series")
    order = np.argsort(m0, kind="stable")
    return int(order[(m0.size - 1) // 2])


def check_relationships(
    m0_r: float,
    m0_p: Sequence[float],
    m0_I: float,
    m1n_r: float,
    m1n_I: float,
    blend: float = 1.0,
    tol: float | None = None,
) -> Relationship:
    """Classify calibrated reactant/product/inert moments.

    ``tol`` is an absolute tolerance on zeroth moments, default 2% of
    ``blend * m0_I``.  Normalised first moments count as equal when they
    differ by no more than the same fraction of ``m1n_I``.
    """
    ref = blend * m0_I
    if tol is None:
        tol = RELATIONSHIP_TOL_FRACTION * abs(ref)
    rel = tol / abs(ref) if ref != 0 else 0.0
    areas_equal = abs(m0_r - ref) <= tol
    times_equal = abs(m1n_r - m1n_I) <= rel * abs(m1n_I)
    if areas_equal and times_equal:
        return Relationship.NO_REACTION
    if areas_equal and m1n_r > m1n_I:
        return Relationship.REVERSIBLE
    if m0_r < ref and m1n_r < m1n_I and m0_r + float(np.sum(m0_p)) <= ref + tol:
        return Relationship.IRREVERSIBLE
    return Relationship.VIOLATION


def mass_balance_slack(m0_r: float, m0_p: Sequence[float], m0_I: float, blend: float = 1.0) -> float:
    """``blend * m0_I - (m0_r + sum(m0_p))``; negative means more out than in."""
    return float(blend * m0_I - (m0_r + float(np.sum(m0_p))))
