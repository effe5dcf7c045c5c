"""Flag pulses whose zeroth moment is inflated by outgassing.

Each pulse is compared with its ``2 * half_width`` nearest neighbours by a
one-sided prediction t-test: a new draw from the neighbours' normal
population would give ``(m_i - mean) / (s sqrt(1 + 1/n))`` Student-t with
``n - 1`` degrees of freedom.  Windows shift inward at the series ends.

Spikes inflate the standard deviation of every window they fall in, so
neighbouring spikes can hide each other.  A robust screen (neighbour median
and MAD) first marks gross outliers, which are left out of every window of
the t-test; a second t-test pass also leaves out the first pass's flags.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DomainError

DEFAULT_HALF_WIDTH = 5
DEFAULT_SIGNIFICANCE = 0.01
# Robust z above which a pulse is kept out of its neighbours' windows.
SCREEN_Z = 6.0


@dataclass(frozen=True, eq=False)
class OutgasReport:
    flagged_indices: tuple[int, ...]
    t_statistics: np.ndarray
    p_values: np.ndarray
    window_half_width: int
    significance: float

    def to_dict(self) -> dict:
        return {
            "flagged_indices": list(self.flagged_indices),
            "t_statistics": [float(v) if np.isfinite(v) else str(v) for v in self.t_statistics],
            "window_half_width": self.window_half_width,
            "significance": self.significance,
        }


def _neighbours(i: int, n: int, size: int, masked: np.ndarray) -> np.ndarray:
    idx = np.arange(n)
    keep = (idx != i) & ~masked
    cand = idx[keep]
    # Nearest first, left before right on ties.
    order = np.lexsort((cand, np.abs(cand - i)))
    return cand[order[:size]]


def _pass(m0: np.ndarray, half_width: int, masked: np.ndarray):
    n = m0.size
    t = np.empty(n)
    p = np.empty(n)
    for i in range(n):
        nb = m0[_neighbours(i, n, 2 * half_width, masked)]
        k = nb.size
        diff = m0[i] - nb.mean()
        s = nb.std(ddof=1)
        # Relative guard so float noise on an exactly constant window reads as zero spread.
        if s <= 1e-12 * max(np.abs(nb).max(), np.finfo(float).tiny):
            t[i] = 0.0 if abs(diff) <= 1e-12 * max(abs(m0[i]), np.abs(nb).max()) else np.copysign(np.inf, diff)
        else:
            t[i] = diff / (s * np.sqrt(1.0 + 1.0 / k))
        p[i] = stats.t.sf(t[i], k - 1)
    return t, p


def _screen(m0: np.ndarray, half_width: int) -> np.ndarray:
    n = m0.size
    out = np.zeros(n, dtype=bool)
    none = np.zeros(n, dtype=bool)
    for i in range(n):
        nb = m0[_neighbours(i, n, 2 * half_width, none)]
        med = np.median(nb)
        mad = 1.4826 * np.median(np.abs(nb - med))
        out[i] = m0[i] - med > SCREEN_Z * mad if mad > 0 else m0[i] > med
    return out


def detect(
    m0_series: Sequence[float],
    window_half_width: int = DEFAULT_HALF_WIDTH,
    significance: float = DEFAULT_SIGNIFICANCE,
) -> OutgasReport:
    """Indices of pulses whose m0 is significantly above their neighbours.

    Raises
    ------
    DomainError
        Series shorter than ``2 * window_half_width + 3`` or bad parameters.
    """
    m0 = np.asarray(m0_series, dtype=float)
    if window_half_width < 1:
        raise DomainError("window_half_width must be at least 1")
    if not 0 < significance < 1:
        raise DomainError("significance must lie in (0, 1)")
    if m0.ndim != 1 or m0.size < 2 * window_half_width + 3:
        raise DomainError(
            f"series of length {m0.size} is too short for half-width {window_half_width} "
            f"(need {2 * window_half_width + 3})"
        )
    if not np.all(np.isfinite(m0)):
        raise DomainError("m0 series must be finite")
    screened = _screen(m0, window_half_width)
    _, p1 = _pass(m0, window_half_width, screened)
    t, p = _pass(m0, window_half_width, screened | (p1 < significance))
    flagged = tuple(int(i) for i in np.flatnonzero(p < significance))
    return OutgasReport(flagged, t, p, window_half_width, float(significance))
