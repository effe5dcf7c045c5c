"""Baseline (constant voltage offset) removal for a single pulse."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .flux import Flux, GammaParams, gamma_pdf, interior_peak_time, moments

DEFAULT_SHAPE = 1.5
# Tail used for the provisional shift before the area estimate.
PRELIM_TAIL_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class BaselineResult:
    corrected: Flux
    shift: float
    gamma_tail_value: float
    tau_peak_used: float


def _gamma_tail(flux: Flux, shape: float, area: float) -> tuple[float, float]:
    tau_p = interior_peak_time(flux)
    # Mode of a Gamma density is (shape - 1) * scale; 2 * tau_p at shape 1.5.
    beta = tau_p / (shape - 1.0)
    return area * gamma_pdf(flux.grid.end, GammaParams(shape, beta)), tau_p


def _shift_to(flux: Flux, tail_value: float) -> tuple[Flux, float]:
    shift = flux.values[-1] - tail_value
    return flux.with_values(flux.values - flux.values[-1] + tail_value), float(shift)


def baseline_gamma(
    flux: Flux, shape: float = DEFAULT_SHAPE, area_estimate: float | None = None
) -> BaselineResult:
    """Shift ``flux`` so its last sample equals the Gamma tail density.

    The Gamma scale comes from the peak time of the (smoothed) flux.  The
    unit-area density is scaled by ``area_estimate``; when that is not
    given it is the zeroth moment after a provisional tail-mean shift,
    refined once from the corrected flux.
    """
    if not shape > 1:
        raise DomainError("shape must exceed 1 for the peak to determine the scale")
    if area_estimate is not None:
        tail, tau_p = _gamma_tail(flux, shape, area_estimate)
        corrected, shift = _shift_to(flux, tail)
        return BaselineResult(corrected, shift, tail, tau_p)

    prelim = baseline_tail_mean(flux, PRELIM_TAIL_FRACTION * flux.grid.duration).corrected
    area = moments(prelim, 0).m0
    tail, tau_p = _gamma_tail(flux, shape, area)
    corrected, _ = _shift_to(flux, tail)
    area = moments(corrected, 0).m0
    tail, tau_p = _gamma_tail(flux, shape, area)
    corrected, shift = _shift_to(flux, tail)
    return BaselineResult(corrected, shift, tail, tau_p)


def baseline_tail_mean(flux: Flux, tail_window: float) -> BaselineResult:
    """Subtract the mean of the samples in the final ``tail_window`` seconds."""
    if not 0 < tail_window < flux.grid.duration:
        raise DomainError(
            f"tail window {tail_window:g} s must be positive and shorter than "
            f"the {flux.grid.duration:g} s record"
        )
    t = flux.grid.times
    tail = flux.values[t >= flux.grid.end - tail_window - 1e-9 * flux.grid.step]
    shift = float(np.mean(tail))
    return BaselineResult(flux.with_values(flux.values - shift), shift, 0.0, float("nan"))
