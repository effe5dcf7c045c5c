"""Simulation scenario documents for the ``simulate`` command.

Example::

    {
      "reactor": {"length": 1.0, "porosity": 0.5, "diffusivity": 0.5,
                  "duration": 3.0, "catalyst_zone": [0.475, 0.525]},
      "n_pulses": 100,
      "output_every": 4,
      "species": [
        {"label": "Ar", "mass": 40, "role": "inert", "blend_fraction": 0.5},
        {"label": "O2", "mass": 32, "role": "reactant", "blend_fraction": 0.5,
         "rate_constant": {"start": 1.15, "decay_pulses": 50},
         "distortion": {"scale": 0.23}}
      ],
      "distortion": {"noise_std": 0.01,
                     "drift": {"kind": "sinusoidal", "amplitude": 0.2},
                     "outgas": [{"pulse_index": 9, "extra_fraction": 1.0, "delay_s": 0.3}]}
    }

``reactor.diffusivity`` belongs to the inert; other gases scale it by
``sqrt(mass_inert / mass)``.  Each fed species is pulsed in the amount
``pulse_amount * blend_fraction``.  A fragment is ``fraction`` times its
parent's clean flux.  Species-level ``distortion`` entries override the
shared block key by key.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .config import ExperimentConfig, _bool, _check_keys, _int, _number, _parse_species
from .errors import SchemaError
from .flux import Flux, TimeGrid
from .simulator import (
    DistortionSpec,
    Drift,
    OutgasEvent,
    SimScenario,
    apply_distortion,
    ground_truth_conversion,
    simulate_outlet_flux,
)

_DISTORTION_KEYS = ("noise_std", "drift", "outgas", "scale", "baseline_offset")


@dataclass(frozen=True)
class SpeciesSim:
    label: str
    mass: float
    role: str
    blend_fraction: float
    parent: str | None
    rate_constants: tuple[float, ...]
    fraction: float
    distortion: DistortionSpec


@dataclass(frozen=True)
class Scenario:
    reactor: SimScenario
    n_pulses: int
    output_every: int
    species: tuple[SpeciesSim, ...]
    check_accuracy: bool = False

    @property
    def inert(self) -> SpeciesSim:
        return next(s for s in self.species if s.role == "inert")

    def experiment_config(self) -> ExperimentConfig:
        """A TEAK configuration matching the simulated species."""
        species = []
        for s in self.species:
            d = {"label": s.label, "mass": s.mass, "role": s.role, "blend_fraction": s.blend_fraction}
            if s.parent:
                d["parent"] = s.parent
            species.append(d)
        return ExperimentConfig.from_dict({"species": species})


def _parse_distortion(d: Any, path: str, base: dict | None = None) -> DistortionSpec:
    _check_keys(d, _DISTORTION_KEYS, path)
    merged = dict(base or {})
    merged.update(d)
    drift_d = merged.get("drift", {"kind": "none"})
    _check_keys(drift_d, [f.name for f in fields(Drift)], f"{path}.drift")
    try:
        drift = Drift(
            kind=drift_d.get("kind", "none"),
            slope=_number(drift_d.get("slope", 0.0), f"{path}.drift.slope"),
            amplitude=_number(drift_d.get("amplitude", 0.0), f"{path}.drift.amplitude"),
            period_pulses=_number(drift_d.get("period_pulses", 100.0), f"{path}.drift.period_pulses"),
        )
    except ValueError as exc:
        raise SchemaError(f"{path}.drift: {exc}") from None
    events = []
    og = merged.get("outgas", [])
    if not isinstance(og, list):
        raise SchemaError(f"{path}.outgas: expected a list")
    for j, e in enumerate(og):
        p = f"{path}.outgas[{j}]"
        _check_keys(e, ("pulse_index", "extra_fraction", "delay_s"), p, ("pulse_index",))
        events.append(
            OutgasEvent(
                _int(e["pulse_index"], f"{p}.pulse_index"),
                _number(e.get("extra_fraction", 1.0), f"{p}.extra_fraction", nonneg=True),
                _number(e.get("delay_s", 0.0), f"{p}.delay_s", nonneg=True),
            )
        )
    try:
        return DistortionSpec(
            noise_std=_number(merged.get("noise_std", 0.0), f"{path}.noise_std", nonneg=True),
            drift=drift,
            outgas_pulses=tuple(events),
            scale=_number(merged.get("scale", 1.0), f"{path}.scale", positive=True),
            baseline_offset=_number(merged.get("baseline_offset", 0.0), f"{path}.baseline_offset"),
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def _rate_constants(v: Any, n: int, path: str) -> tuple[float, ...]:
    if isinstance(v, list):
        if len(v) != n:
            raise SchemaError(f"{path}: need {n} values, got {len(v)}")
        return tuple(_number(x, f"{path}[{i}]", nonneg=True) for i, x in enumerate(v))
    if isinstance(v, dict):
        _check_keys(v, ("start", "decay_pulses"), path, ("start", "decay_pulses"))
        k0 = _number(v["start"], f"{path}.start", nonneg=True)
        m = _int(v["decay_pulses"], f"{path}.decay_pulses", 1)
        return tuple(k0 * max(0.0, 1.0 - i / m) for i in range(n))
    return (_number(v, path, nonneg=True),) * n


def parse_scenario(data: Any) -> Scenario:
    _check_keys(
        data,
        ("reactor", "n_pulses", "output_every", "species", "distortion", "check_accuracy"),
        "scenario",
        ("species", "n_pulses"),
    )
    r = data.get("reactor", {})
    allowed = [f.name for f in fields(SimScenario) if f.name != "rate_constant"]
    _check_keys(r, allowed, "reactor")
    kw = {}
    for k, v in r.items():
        if k == "catalyst_zone":
            if not (isinstance(v, list) and len(v) == 2):
                raise SchemaError("reactor.catalyst_zone: expected [start_frac, end_frac]")
            kw[k] = (_number(v[0], "reactor.catalyst_zone[0]"), _number(v[1], "reactor.catalyst_zone[1]"))
        elif k in ("grid_points_space", "grid_points_time"):
            kw[k] = _int(v, f"reactor.{k}", 2)
        else:
            kw[k] = _number(v, f"reactor.{k}", positive=True)
    try:
        reactor = SimScenario(**kw)
    except ValueError as exc:
        raise SchemaError(f"reactor: {exc}") from None
    n = _int(data["n_pulses"], "n_pulses", 1)
    every = _int(data.get("output_every", 1), "output_every", 1)
    shared = data.get("distortion", {})
    _check_keys(shared, _DISTORTION_KEYS, "distortion")
    if not isinstance(data["species"], list) or not data["species"]:
        raise SchemaError("species: expected a non-empty list")
    out = []
    for i, s in enumerate(data["species"]):
        p = f"species[{i}]"
        _check_keys(
            s,
            ("label", "mass", "role", "blend_fraction", "parent", "rate_constant", "fraction", "distortion"),
            p,
        )
        base = {k: v for k, v in s.items() if k in ("label", "mass", "role", "blend_fraction", "parent")}
        sp = _parse_species(base, p)
        if sp.role == "reactant":
            ks = _rate_constants(s.get("rate_constant", 0.0), n, f"{p}.rate_constant")
        elif "rate_constant" in s:
            raise SchemaError(f"{p}.rate_constant: only reactants react")
        else:
            ks = (0.0,) * n
        if sp.role == "fragment":
            frac = _number(s.get("fraction", 1.0), f"{p}.fraction", positive=True)
        elif "fraction" in s:
            raise SchemaError(f"{p}.fraction: only fragments take a fraction")
        else:
            frac = 1.0
        if sp.role == "product":
            raise SchemaError(f"{p}.role: products are not simulated")
        dist = _parse_distortion(s.get("distortion", {}), f"{p}.distortion", shared)
        out.append(SpeciesSim(sp.label, sp.mass, sp.role, sp.blend_fraction, sp.parent, ks, frac, dist))
    sc = Scenario(reactor, n, every, tuple(out), _bool(data.get("check_accuracy", False), "check_accuracy"))
    sc.experiment_config()  # same species rules as the pipeline
    for s in sc.species:
        for e in s.distortion.outgas_pulses:
            if e.pulse_index >= n:
                raise SchemaError(f"{s.label}: outgas pulse {e.pulse_index} beyond {n} pulses")
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_scenario(data)


def _species_reactor(sc: Scenario, s: SpeciesSim, k: float) -> SimScenario:
    inert = sc.inert
    mass = s.mass
    if s.role == "fragment":
        mass = next(p for p in sc.species if p.label == s.parent).mass
    d = sc.reactor.diffusivity * np.sqrt(inert.mass / mass)
    return replace(sc.reactor, diffusivity=d, rate_constant=k)


def _decimate(f: Flux, every: int) -> Flux:
    if every == 1:
        return f
    g = f.grid
    idx = np.arange(0, g.count, every)
    grid = TimeGrid(g.start, g.step * every, idx.size)
    return Flux(grid, f.values[idx], f.units, f.species_label, f.pulse_index)


def run_scenario(sc: Scenario, seed: int = 0):
    """Simulated detector series per species plus ground truth.

    Returns ``(series, truth)`` where ``series`` maps label to a list of
    Flux and ``truth`` holds per-pulse rate constants and conversions.
    """
    clean: dict[str, dict[float, Flux]] = {}
    series: dict[str, list[Flux]] = {}
    truth: dict[str, Any] = {"seed": seed, "species": {}}
    by_label = {s.label: s for s in sc.species}
    for s in sc.species:
        src = by_label[s.parent] if s.role == "fragment" else s
        cache = clean.setdefault(src.label, {})
        amount = sc.reactor.pulse_amount * src.blend_fraction
        fl = []
        for i, k in enumerate(src.rate_constants):
            if k not in cache:
                base = simulate_outlet_flux(_species_reactor(sc, src, k), check_accuracy=sc.check_accuracy)
                cache[k] = base.with_values(amount * base.values)
            f = cache[k].replace(species_label=s.label, pulse_index=i)
            if s.role == "fragment":
                f = f.with_values(s.fraction * f.values)
            f = _decimate(f, sc.output_every)
            # Independent noise streams per species.
            fl.append(apply_distortion(f, s.distortion, i, rng_seed=_stream(seed, s.label)))
        series[s.label] = fl
        entry: dict[str, Any] = {"role": s.role}
        if s.role == "reactant":
            gt = {}
            for k in sorted(set(s.rate_constants)):
                gt[k] = ground_truth_conversion(_species_reactor(sc, s, k))
            entry["rate_constants"] = list(s.rate_constants)
            entry["conversion"] = [gt[k] for k in s.rate_constants]
        truth["species"][s.label] = entry
    return series, truth


def _stream(seed: int, label: str) -> int:
    # Stable across runs (unlike hash()).
    return int.from_bytes(f"{seed}:{label}".encode(), "little") % (2**63)
