"""Scenario builders shared by the experiment scripts."""
import numpy as np

from teak.pipeline import PulseSeries
from teak.scenario import parse_scenario, run_scenario

SIN = {"kind": "sinusoidal", "amplitude": 0.2, "period_pulses": 100}


def _run(doc, seed):
    sc = parse_scenario(doc)
    series, truth = run_scenario(sc, seed)
    return sc, {l: PulseSeries(l, tuple(v)) for l, v in series.items()}, truth


def oxidation(n, k=1.15, shared=None, seed=0, grid_points_time=1000):
    """Ar/O2 series from the thin-zone reactor, O2 recorded at 0.23 scale."""
    doc = {
        "reactor": {"grid_points_time": grid_points_time},
        "n_pulses": n,
        "species": [
            {"label": "Ar", "mass": 40, "role": "inert", "blend_fraction": 0.5},
            {"label": "O2", "mass": 32, "role": "reactant", "blend_fraction": 0.5,
             "rate_constant": k, "distortion": {"scale": 0.23}},
        ],
        "distortion": shared or {},
    }
    return _run(doc, seed)


def inert_series(n, distortion, seed=0):
    """Inert-only series on the default reactor grid."""
    doc = {
        "n_pulses": n,
        "species": [{"label": "Ar", "mass": 40, "role": "inert", "blend_fraction": 1.0}],
        "distortion": distortion,
    }
    return _run(doc, seed)


def true_conversion(truth, label="O2"):
    return np.asarray(truth["species"][label]["conversion"])
