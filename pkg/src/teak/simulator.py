"""Synthetic TAP pulse responses for validation.

Two independent routes to the inert outlet flux are provided: the
one-zone series solution (:func:`standard_diffusion_curve`) and a finite
volume Crank-Nicolson solution of the diffusion-reaction equation
(:func:`simulate_outlet_flux`).  Neither is trusted alone; the test suite
checks them against each other.

Distortions mimic the instrument: per-pulse scaling and drift, delayed
outgassing, white noise and a constant voltage offset.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericalError
from .flux import Flux, TimeGrid, moments

SERIES_TOL = 1e-12
# Below this dimensionless time the image (short-time) series converges faster.
_SHORT_TIME_SWITCH = 0.25
_RANNACHER_HALF_STEPS = 4
RICHARDSON_TOL = 1e-4


def _long_time_series(tau: np.ndarray) -> np.ndarray:
    # pi * sum (-1)^n (2n+1) exp(-(n+1/2)^2 pi^2 tau)
    out = np.zeros_like(tau)
    n = 0
    while True:
        a = (n + 0.5) ** 2 * np.pi**2
        term = np.pi * (2 * n + 1) * np.exp(-a * tau)
        out += term if n % 2 == 0 else -term
        if np.max(term, initial=0.0) < SERIES_TOL:
            return out
        n += 1


def _short_time_series(tau: np.ndarray) -> np.ndarray:
    # (pi tau^3)^-1/2 * sum (-1)^n (2n+1) exp(-(n+1/2)^2 / tau)
    out = np.zeros_like(tau)
    pref = 1.0 / np.sqrt(np.pi * tau**3)
    n = 0
    while True:
        term = pref * (2 * n + 1) * np.exp(-((n + 0.5) ** 2) / tau)
        out += term if n % 2 == 0 else -term
        if np.max(term, initial=0.0) < SERIES_TOL:
            return out
        n += 1


def standard_diffusion_curve(dimensionless_t) -> np.ndarray:
    """Dimensionless outlet flux of a one-zone inert Knudsen reactor.

    Time is scaled by ``eps * L**2 / D`` and flux by ``D / (eps * L**2)``
    per unit pulse; the curve has unit area, mean 1/2 and mode 1/6.
    """
    tau = np.atleast_1d(np.asarray(dimensionless_t, dtype=float))
    if np.any(~np.isfinite(tau)) or np.any(tau < 0):
        raise DomainError("dimensionless times must be finite and >= 0")
    out = np.zeros_like(tau)
    short = (tau > 0) & (tau < _SHORT_TIME_SWITCH)
    long_ = tau >= _SHORT_TIME_SWITCH
    if np.any(short):
        out[short] = _short_time_series(tau[short])
    if np.any(long_):
        out[long_] = _long_time_series(tau[long_])
    if np.ndim(dimensionless_t) == 0:
        return float(out[0])
    return out


@dataclass(frozen=True)
class SimScenario:
    """Reactor geometry, transport and reaction for one simulated pulse.

    ``rate_constant`` is a first-order constant (1/s) acting on the gas
    concentration inside ``catalyst_zone``, given as fractions of the
    reactor length.
    """

    length: float = 1.0
    porosity: float = 0.5
    diffusivity: float = 0.5
    rate_constant: float = 0.0
    pulse_amount: float = 1.0
    duration: float = 3.0
    grid_points_space: int = 400
    grid_points_time: int = 4000
    catalyst_zone: tuple[float, float] = (0.475, 0.525)

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError("length must be > 0")
        if not 0 < self.porosity < 1:
            raise DomainError("porosity must lie in (0, 1)")
        if not self.diffusivity > 0:
            raise DomainError("diffusivity must be > 0")
        if self.rate_constant < 0:
            raise DomainError("rate_constant must be >= 0")
        if not self.pulse_amount > 0:
            raise DomainError("pulse_amount must be > 0")
        if not self.duration > 0:
            raise DomainError("duration must be > 0")
        if self.grid_points_space < 8 or self.grid_points_time < 8:
            raise DomainError("need at least 8 space cells and 8 time steps")
        lo, hi = self.catalyst_zone
        if not 0 <= lo < hi <= 1:
            raise DomainError("catalyst_zone must satisfy 0 <= start < end <= 1")
        object.__setattr__(self, "catalyst_zone", (float(lo), float(hi)))

    @property
    def residence_scale(self) -> float:
        """Time scale ``eps * L**2 / D`` that makes the standard curve dimensionless."""
        return self.porosity * self.length**2 / self.diffusivity

    def refined(self, factor: int = 2) -> "SimScenario":
        return replace(
            self,
            grid_points_space=self.grid_points_space * factor,
            grid_points_time=self.grid_points_time * factor,
        )


def _zone_overlap(edges_lo: np.ndarray, edges_hi: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(np.minimum(edges_hi, hi) - np.maximum(edges_lo, lo), 0.0, None)


def _outlet_flux(sc: SimScenario) -> np.ndarray:
    m = sc.grid_points_space
    dx = sc.length / m
    dt = sc.duration / sc.grid_points_time
    x = dx * np.arange(m)  # nodes 0..m-1; node m is the outlet, C = 0
    lo_edge = np.maximum(x - 0.5 * dx, 0.0)
    hi_edge = x + 0.5 * dx
    vol = hi_edge - lo_edge
    zlo, zhi = (f * sc.length for f in sc.catalyst_zone)
    react = sc.rate_constant * _zone_overlap(lo_edge, hi_edge, zlo, zhi)

    # Stiffness S (symmetric tridiagonal): diffusion between nodes plus the
    # outlet coupling and first-order consumption.
    g = sc.diffusivity / dx
    diag = np.full(m, 2 * g)
    diag[0] = g
    diag += react
    off = np.full(m - 1, -g)
    mass = sc.porosity * vol

    # Backward-Euler half steps and Crank-Nicolson full steps share the
    # matrix mass + dt/2 * S.
    upper = np.zeros((2, m))
    upper[0, 1:] = 0.5 * dt * off
    upper[1] = mass + 0.5 * dt * diag
    chol = linalg.cholesky_banded(upper)

    def apply_explicit(c):
        out = (mass - 0.5 * dt * diag) * c
        out[:-1] -= 0.5 * dt * off * c[1:]
        out[1:] -= 0.5 * dt * off * c[:-1]
        return out

    c = np.zeros(m)
    c[0] = sc.pulse_amount / mass[0]
    flux = np.empty(sc.grid_points_time + 1)
    flux[0] = g * c[-1]
    step = 0
    # Damp the high-wavenumber content of the pulse before switching to
    # Crank-Nicolson, which would otherwise let it oscillate.
    n_start = min(_RANNACHER_HALF_STEPS // 2, sc.grid_points_time)
    for step in range(1, n_start + 1):
        for _ in range(2):
            c = linalg.cho_solve_banded((chol, False), mass * c)
        flux[step] = g * c[-1]
    for step in range(n_start + 1, sc.grid_points_time + 1):
        c = linalg.cho_solve_banded((chol, False), apply_explicit(c))
        flux[step] = g * c[-1]
    return flux


def simulate_outlet_flux(
    scenario: SimScenario,
    check_accuracy: bool = True,
    species_label: str = "",
    pulse_index: int = 0,
) -> Flux:
    """Outlet flux (amount per second) of one pulse through the reactor.

    Solves ``eps dC/dt = D d2C/dx2 - k C 1[zone]`` with a reflecting inlet,
    zero concentration at the outlet and the whole pulse in the first
    cell.  With ``check_accuracy`` the run is repeated on a grid refined
    twofold in space and time and :class:`NumericalError` is raised if the
    zeroth moment moves by more than ``RICHARDSON_TOL`` relative.
    """
    values = _outlet_flux(scenario)
    grid = TimeGrid(0.0, scenario.duration / scenario.grid_points_time, scenario.grid_points_time + 1)
    flux = Flux(grid, values, "calibrated", species_label, pulse_index)
    if check_accuracy:
        fine = scenario.refined(2)
        fine_flux = Flux(
            TimeGrid(0.0, fine.duration / fine.grid_points_time, fine.grid_points_time + 1),
            _outlet_flux(fine),
        )
        m0, m0_fine = moments(flux, 0).m0, moments(fine_flux, 0).m0
        rel = abs(m0 - m0_fine) / max(abs(m0_fine), np.finfo(float).tiny)
        if rel > RICHARDSON_TOL:
            raise NumericalError(
                f"grid refinement changed m0 by {rel:.2e} (> {RICHARDSON_TOL:g}); "
                "increase grid_points_space / grid_points_time"
            )
    return flux


def ground_truth_conversion(scenario: SimScenario) -> float:
    """Exact-model conversion for ``scenario`` versus the same reactor with k = 0."""
    reacting = moments(simulate_outlet_flux(scenario, check_accuracy=False), 0).m0
    inert = moments(
        simulate_outlet_flux(replace(scenario, rate_constant=0.0), check_accuracy=False), 0
    ).m0
    return 1.0 - reacting / inert


@dataclass(frozen=True)
class Drift:
    """Multiplicative detector drift as a function of pulse index."""

    kind: str = "none"
    slope: float = 0.0
    amplitude: float = 0.0
    period_pulses: float = 100.0

    def __post_init__(self):
        if self.kind not in ("none", "linear", "sinusoidal"):
            raise DomainError(f"unknown drift kind {self.kind!r}")
        if self.kind == "sinusoidal" and not self.period_pulses > 0:
            raise DomainError("sinusoidal drift needs a positive period")

    def factor(self, pulse_index: int) -> float:
        if self.kind == "linear":
            return 1.0 + self.slope * pulse_index
        if self.kind == "sinusoidal":
            return 1.0 + self.amplitude * np.sin(2 * np.pi * pulse_index / self.period_pulses)
        return 1.0


@dataclass(frozen=True)
class OutgasEvent:
    pulse_index: int
    extra_fraction: float
    delay_s: float


@dataclass(frozen=True)
class DistortionSpec:
    noise_std: float = 0.0
    drift: Drift = field(default_factory=Drift)
    outgas_pulses: tuple[OutgasEvent, ...] = ()
    scale: float = 1.0
    baseline_offset: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be > 0")
        if self.noise_std < 0:
            raise DomainError("noise_std must be >= 0")
        object.__setattr__(
            self,
            "outgas_pulses",
            tuple(e if isinstance(e, OutgasEvent) else OutgasEvent(*e) for e in self.outgas_pulses),
        )


def outgas_component(flux: Flux, extra_fraction: float, delay_s: float) -> np.ndarray:
    """A delayed copy of ``flux`` carrying ``extra_fraction`` of its area."""
    t = flux.grid.times
    return extra_fraction * np.interp(t - delay_s, t, flux.values, left=0.0, right=0.0)


def apply_distortion(flux: Flux, spec: DistortionSpec, pulse_index: int, rng_seed: int = 0) -> Flux:
    """``scale * drift(i) * (flux + outgas) + noise + offset``; deterministic given the seed."""
    values = np.array(flux.values, dtype=float)
    for ev in spec.outgas_pulses:
        if ev.pulse_index == pulse_index:
            values = values + outgas_component(flux, ev.extra_fraction, ev.delay_s)
    gain = spec.scale * spec.drift.factor(pulse_index)
    if gain != 1.0:
        values = gain * values
    if spec.noise_std > 0:
        rng = np.random.default_rng([rng_seed, pulse_index])
        values = values + rng.normal(0.0, spec.noise_std, size=values.size)
    if spec.baseline_offset != 0:
        values = values + spec.baseline_offset
    return Flux(flux.grid, values, "volts", flux.species_label, pulse_index)


def simulate_series(
    scenario: SimScenario,
    spec: DistortionSpec,
    n_pulses: int,
    rng_seed: int = 0,
    rate_constants: Sequence[float] | None = None,
    species_label: str = "",
):
    """Distorted pulse series; returns ``(distorted, clean)`` lists of Flux.

    ``rate_constants`` optionally gives one rate constant per pulse (for
    example a deactivating catalyst); identical values share one solve.
    """
    if rate_constants is None:
        rate_constants = [scenario.rate_constant] * n_pulses
    if len(rate_constants) != n_pulses:
        raise DomainError("need one rate constant per pulse")
    cache: dict[float, Flux] = {}
    clean, distorted = [], []
    for i, k in enumerate(rate_constants):
        k = float(k)
        if k not in cache:
            cache[k] = simulate_outlet_flux(
                replace(scenario, rate_constant=k), check_accuracy=False, species_label=species_label
            )
        base = cache[k].replace(pulse_index=i)
        clean.append(base)
        distorted.append(apply_distortion(base, spec, i, rng_seed))
    return distorted, clean
