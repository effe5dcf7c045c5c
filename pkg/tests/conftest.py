import json
import sys
from functools import lru_cache

from teak.pipeline import PulseSeries
from teak.scenario import parse_scenario, run_scenario


@lru_cache(maxsize=None)
def _simulate(doc: str, seed: int):
    sc = parse_scenario(json.loads(doc))
    series, truth = run_scenario(sc, seed)
    raw = {l: PulseSeries(l, tuple(v)) for l, v in series.items()}
    return sc, raw, truth


def oxidation(
    n=10,
    k=1.15,
    scale=0.23,
    shared=None,
    reactant=None,
    seed=0,
    grid_points_time=1000,
    duration=3.0,
    reactant_mass=32,
):
    """Ar/O2 series from the thin-zone reactor; returns (scenario, raw, truth)."""
    doc = {
        "reactor": {"grid_points_time": grid_points_time, "duration": duration},
        "n_pulses": n,
        "species": [
            {"label": "Ar", "mass": 40, "role": "inert", "blend_fraction": 0.5},
            {
                "label": "O2",
                "mass": reactant_mass,
                "role": "reactant",
                "blend_fraction": 0.5,
                "rate_constant": k,
                "distortion": {"scale": scale, **(reactant or {})},
            },
        ],
        "distortion": shared or {},
    }
    return _simulate(json.dumps(doc, sort_keys=True), seed)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        name, ok, detail = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:>2}. {name}: {detail}")
