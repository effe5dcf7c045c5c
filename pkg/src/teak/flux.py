"""Pulse-response flux containers and residence-time-distribution summaries.

Time is in seconds, masses in AMU, and flux values are volts until a
calibration stage marks them ``"calibrated"``.  All moments are computed
with the composite trapezoid rule on the uniform sampling grid.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy import special

from .errors import DegenerateFluxError, DomainError

Units = Literal["volts", "calibrated"]

MIN_GRID_POINTS = 8
CONVERSION_RANGE = (-0.05, 1.0)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid ``start + step * arange(count)``."""

    start: float
    step: float
    count: int

    def __post_init__(self):
        if not np.isfinite(self.start) or self.start < 0:
            raise DomainError(f"grid start must be >= 0, got {self.start}")
        if not np.isfinite(self.step) or self.step <= 0:
            raise DomainError(f"grid step must be > 0, got {self.step}")
        if int(self.count) != self.count or self.count < MIN_GRID_POINTS:
            raise DomainError(f"grid needs at least {MIN_GRID_POINTS} points, got {self.count}")

    @classmethod
    def spanning(cls, start: float, end: float, count: int) -> "TimeGrid":
        return cls(float(start), (float(end) - float(start)) / (count - 1), int(count))

    @property
    def end(self) -> float:
        return self.start + (self.count - 1) * self.step

    @property
    def duration(self) -> float:
        return (self.count - 1) * self.step

    @property
    def times(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.count, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w


@dataclass(frozen=True, eq=False)
class Flux:
    """One pulse response of one species."""

    grid: TimeGrid
    values: np.ndarray
    units: Units = "volts"
    species_label: str = ""
    pulse_index: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size != self.grid.count:
            raise DomainError(
                f"flux has {values.size} values but grid has {self.grid.count} points"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("flux values must be finite")
        if self.units not in ("volts", "calibrated"):
            raise DomainError(f"unknown units {self.units!r}")
        if self.pulse_index < 0:
            raise DomainError("pulse_index must be nonnegative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def replace(self, **changes) -> "Flux":
        return dataclasses.replace(self, **changes)

    def with_values(self, values, units: Units | None = None) -> "Flux":
        return dataclasses.replace(self, values=values, units=units or self.units)


@dataclass(frozen=True)
class GammaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"Gamma shape must be > 0, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise DomainError(f"Gamma scale must be > 0, got {self.beta}")

    @property
    def mean(self) -> float:
        return self.alpha * self.beta

    @property
    def variance(self) -> float:
        return self.alpha * self.beta**2

    @property
    def mode(self) -> float:
        return max(self.alpha - 1.0, 0.0) * self.beta

    @property
    def area_coefficient(self) -> float:
        return float(np.exp(special.gammaln(self.alpha) + self.alpha * np.log(self.beta)))


STANDARD_DIFFUSION_GAMMA = GammaParams(1.5, 1.0 / 3.0)


@dataclass(frozen=True)
class Moments:
    """Raw moments ``m_k = integral t**k F(t) dt``; orders not requested are NaN."""

    m0: float
    m1: float = float("nan")
    m2: float = float("nan")
    m3: float = float("nan")

    @property
    def m1_normalized(self) -> float:
        if self.m0 == 0:
            return float("nan")
        return self.m1 / self.m0


@dataclass(frozen=True)
class ResidenceProps:
    tau_mean: float
    tau_var: float
    tau_peak: float
    tau_area: float
    alpha: float
    beta: float

    @property
    def gamma(self) -> GammaParams:
        return GammaParams(self.alpha, self.beta)


def gamma_pdf(t, params: GammaParams):
    """Gamma density with shape ``params.alpha`` and scale ``params.beta``.

    Accepts a scalar or an array of times; returns the same shape.
    """
    if not isinstance(params, GammaParams):
        params = GammaParams(*params)
    t_arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t_arr)) or np.any(t_arr < 0):
        raise DomainError("gamma_pdf requires finite t >= 0")
    a, b = params.alpha, params.beta
    with np.errstate(divide="ignore"):
        log_t = np.log(t_arr)
    log_norm = special.gammaln(a) + a * np.log(b)
    out = np.exp((a - 1.0) * log_t - t_arr / b - log_norm)
    at_zero = t_arr == 0
    if np.any(at_zero):
        zero_val = 0.0 if a > 1 else (1.0 / b if a == 1 else np.inf)
        out = np.where(at_zero, zero_val, out)
    return out if out.ndim else float(out)


def moments(flux: Flux, max_order: int = 3) -> Moments:
    """Trapezoid moments of ``flux`` up to ``max_order`` (0..3)."""
    if max_order not in (0, 1, 2, 3):
        raise DomainError(f"max_order must be in 0..3, got {max_order}")
    t = flux.grid.times
    w = flux.grid.trapezoid_weights()
    weighted = w * flux.values
    ms = [float(np.sum(weighted * t**k)) for k in range(max_order + 1)]
    return Moments(*ms)


def peak_index(values: np.ndarray) -> int:
    """Index of the maximum; ties resolve to the earliest index."""
    return int(np.argmax(values))


def interior_peak_time(flux: Flux) -> float:
    i = peak_index(flux.values)
    if i == 0 or i == flux.grid.count - 1:
        raise DegenerateFluxError(
            f"flux maximum lies on the grid boundary (index {i}); no interior peak"
        )
    return float(flux.grid.times[i])


def residence_props(flux: Flux) -> ResidenceProps:
    """Residence-time properties from moments, with a method-of-moments Gamma fit."""
    tau_peak = interior_peak_time(flux)
    m = moments(flux, 2)
    if m.m0 <= 0:
        raise DegenerateFluxError(f"zeroth moment must be positive, got {m.m0:g}")
    tau_mean = m.m1 / m.m0
    tau_var = m.m2 / m.m0 - tau_mean**2
    if tau_mean <= 0 or tau_var <= 0:
        raise DegenerateFluxError(
            f"nonpositive residence time mean/variance ({tau_mean:g}, {tau_var:g})"
        )
    alpha = tau_mean**2 / tau_var
    beta = tau_var / tau_mean
    return ResidenceProps(
        tau_mean=tau_mean,
        tau_var=tau_var,
        tau_peak=tau_peak,
        tau_area=GammaParams(alpha, beta).area_coefficient,
        alpha=alpha,
        beta=beta,
    )


def conversion(reactant_m0: float, inert_m0: float, blend_ratio: float = 1.0) -> float:
    """Fractional conversion ``1 - m0_r / (blend * m0_I)``.

    The value is never clamped; use :func:`conversion_in_range` to flag
    results outside the physically reportable interval.
    """
    if not inert_m0 > 0:
        raise DomainError(f"inert zeroth moment must be > 0, got {inert_m0}")
    if not blend_ratio > 0:
        raise DomainError(f"blend ratio must be > 0, got {blend_ratio}")
    return 1.0 - reactant_m0 / (blend_ratio * inert_m0)


def conversion_in_range(chi: float) -> bool:
    lo, hi = CONVERSION_RANGE
    return lo <= chi <= hi


def graham_align(flux: Flux, mass_gas: float, mass_ref: float) -> Flux:
    """Map ``flux`` onto the transport time scale of a gas of mass ``mass_ref``.

    Knudsen diffusivity scales as ``mass**-0.5``, so the time axis is
    contracted by ``sqrt(mass_ref / mass_gas)`` and the values stretched by
    the inverse factor, which leaves the zeroth moment unchanged.  The result
    is linearly re-interpolated onto the original grid; samples beyond the
    data hold the edge value.
    """
    if not (mass_gas > 0 and mass_ref > 0):
        raise DomainError("masses must be positive")
    if mass_gas == mass_ref:
        return flux
    stretch = np.sqrt(mass_gas / mass_ref)
    t = flux.grid.times
    # Aligned value at t is the original value at t * stretch.
    values = stretch * np.interp(t * stretch, t, flux.values)
    return flux.with_values(values)


def standardize(m0_series: Sequence[float]) -> np.ndarray:
    """Center by the mean and scale by the sample standard deviation."""
    x = np.asarray(m0_series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("standardize needs at least two values")
    sd = np.std(x, ddof=1)
    if not sd > 0:
        raise DomainError("zero variance series cannot be standardized")
    return (x - x.mean()) / sd
