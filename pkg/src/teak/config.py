"""Experiment configuration: a single JSON document, strictly validated.

Example::

    {
      "species": [
        {"label": "Ar", "mass": 40, "role": "inert", "blend_fraction": 0.5},
        {"label": "O2", "mass": 32, "role": "reactant", "blend_fraction": 0.5},
        {"label": "O2_16", "mass": 16, "role": "fragment", "parent": "O2"}
      ],
      "reference_dv": "auto_median",
      "baseline_method": "gamma",
      "smoothing": "auto",
      "tcco": {"enforce_pointwise": true, "enforce_moment": true,
               "feas_tol": null, "support_threshold": "auto"},
      "outgas": {"window_half_width": 5, "significance": 0.01, "auto_exclude": false}
    }

``reference_dv`` may also be ``{"pulse_index": n}``, ``baseline_method``
``{"tail_mean": seconds}`` and ``smoothing`` ``{"factor": value}``.
Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import SchemaError

ROLES = ("inert", "reactant", "product", "fragment")
_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.+-]*$")


def _check_keys(data: Any, allowed, path: str, required=()):
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise SchemaError(f"{path}: unknown key(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in data]
    if missing:
        raise SchemaError(f"{path}: missing key(s) {', '.join(missing)}")


def _number(v, path, positive=False, nonneg=False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if v != v or v in (float("inf"), float("-inf")):
        raise SchemaError(f"{path}: must be finite")
    if positive and not v > 0:
        raise SchemaError(f"{path}: must be > 0")
    if nonneg and v < 0:
        raise SchemaError(f"{path}: must be >= 0")
    return v


def _bool(v, path) -> bool:
    if not isinstance(v, bool):
        raise SchemaError(f"{path}: expected true/false, got {v!r}")
    return v


def _int(v, path, minimum=0) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise SchemaError(f"{path}: expected an integer >= {minimum}, got {v!r}")
    return v


@dataclass(frozen=True)
class Species:
    label: str
    mass: float
    role: str
    blend_fraction: float = 0.0
    parent: str | None = None


@dataclass(frozen=True)
class TccoSettings:
    enforce_pointwise: bool = True
    enforce_moment: bool = True
    feas_tol: float | None = None
    # "auto" scales the support threshold with the noise-to-peak ratio.
    support_threshold: float | str = "auto"


@dataclass(frozen=True)
class OutgasSettings:
    window_half_width: int = 5
    significance: float = 0.01
    auto_exclude: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    species: tuple[Species, ...]
    reference_pulse: int | None = None  # None: pulse with the median inert m0
    baseline_method: str = "gamma"
    tail_window: float | None = None
    smoothing_factor: float | None = None  # None: automatic
    tcco: TccoSettings = field(default_factory=TccoSettings)
    outgas: OutgasSettings = field(default_factory=OutgasSettings)

    def __post_init__(self):
        labels = [s.label for s in self.species]
        if len(set(labels)) != len(labels):
            raise SchemaError("species: labels must be unique")
        inert = [s for s in self.species if s.role == "inert"]
        if len(inert) != 1:
            raise SchemaError(f"species: exactly one inert required, found {len(inert)}")
        total = sum(s.blend_fraction for s in self.species)
        if abs(total - 1.0) > 1e-9:
            raise SchemaError(f"species: blend fractions must sum to 1, got {total:.12g}")
        if not inert[0].blend_fraction > 0:
            raise SchemaError("species: the inert needs a positive blend fraction")
        by_label = {s.label: s for s in self.species}
        for s in self.species:
            if s.role == "fragment":
                parent = by_label.get(s.parent)
                if parent is None or parent.role not in ("reactant", "product"):
                    raise SchemaError(
                        f"species {s.label}: fragment parent must name a reactant or product"
                    )
                if s.blend_fraction != 0:
                    raise SchemaError(f"species {s.label}: fragments carry no blend fraction")
            elif s.parent is not None:
                raise SchemaError(f"species {s.label}: only fragments take a parent")
        if self.baseline_method == "tail_mean" and self.tail_window is None:
            raise SchemaError("baseline_method: tail_mean needs a window")

    @property
    def inert(self) -> Species:
        return next(s for s in self.species if s.role == "inert")

    def species_by_label(self, label: str) -> Species:
        for s in self.species:
            if s.label == label:
                return s
        raise KeyError(label)

    def gases(self) -> list[Species]:
        """Reactants and products, in document order."""
        return [s for s in self.species if s.role in ("reactant", "product")]

    def fragments_of(self, label: str) -> list[Species]:
        return [s for s in self.species if s.role == "fragment" and s.parent == label]

    def blend_ratio(self, label: str) -> float:
        """Feed ratio of ``label`` to the inert; 1 for species that are not fed."""
        s = self.species_by_label(label)
        return s.blend_fraction / self.inert.blend_fraction if s.blend_fraction > 0 else 1.0

    def to_dict(self) -> dict:
        ref: Any = "auto_median" if self.reference_pulse is None else {"pulse_index": self.reference_pulse}
        base: Any = "gamma" if self.baseline_method == "gamma" else {"tail_mean": self.tail_window}
        smooth: Any = "auto" if self.smoothing_factor is None else {"factor": self.smoothing_factor}
        species = []
        for s in self.species:
            d = {"label": s.label, "mass": s.mass, "role": s.role, "blend_fraction": s.blend_fraction}
            if s.parent is not None:
                d["parent"] = s.parent
            species.append(d)
        return {
            "species": species,
            "reference_dv": ref,
            "baseline_method": base,
            "smoothing": smooth,
            "tcco": asdict(self.tcco),
            "outgas": asdict(self.outgas),
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: Any) -> "ExperimentConfig":
        _check_keys(
            data,
            ("species", "reference_dv", "baseline_method", "smoothing", "tcco", "outgas"),
            "config",
            required=("species",),
        )
        if not isinstance(data["species"], list) or not data["species"]:
            raise SchemaError("species: expected a non-empty list")
        species = tuple(_parse_species(s, f"species[{i}]") for i, s in enumerate(data["species"]))

        ref = data.get("reference_dv", "auto_median")
        if ref == "auto_median":
            ref_pulse = None
        else:
            _check_keys(ref, ("pulse_index",), "reference_dv", required=("pulse_index",))
            ref_pulse = _int(ref["pulse_index"], "reference_dv.pulse_index")

        base = data.get("baseline_method", "gamma")
        if base == "gamma":
            method, window = "gamma", None
        else:
            _check_keys(base, ("tail_mean",), "baseline_method", required=("tail_mean",))
            method = "tail_mean"
            window = _number(base["tail_mean"], "baseline_method.tail_mean", positive=True)

        sm = data.get("smoothing", "auto")
        if sm == "auto":
            factor = None
        else:
            _check_keys(sm, ("factor",), "smoothing", required=("factor",))
            factor = _number(sm["factor"], "smoothing.factor", nonneg=True)

        t = data.get("tcco", {})
        _check_keys(t, [f.name for f in fields(TccoSettings)], "tcco")
        thr = t.get("support_threshold", "auto")
        if thr != "auto":
            thr = _number(thr, "tcco.support_threshold", nonneg=True)
        feas = t.get("feas_tol")
        tcco = TccoSettings(
            enforce_pointwise=_bool(t.get("enforce_pointwise", True), "tcco.enforce_pointwise"),
            enforce_moment=_bool(t.get("enforce_moment", True), "tcco.enforce_moment"),
            feas_tol=None if feas is None else _number(feas, "tcco.feas_tol", nonneg=True),
            support_threshold=thr,
        )

        o = data.get("outgas", {})
        _check_keys(o, [f.name for f in fields(OutgasSettings)], "outgas")
        sig = _number(o.get("significance", 0.01), "outgas.significance")
        if not 0 < sig < 1:
            raise SchemaError("outgas.significance: must lie in (0, 1)")
        outgas = OutgasSettings(
            window_half_width=_int(o.get("window_half_width", 5), "outgas.window_half_width", 1),
            significance=sig,
            auto_exclude=_bool(o.get("auto_exclude", False), "outgas.auto_exclude"),
        )
        return cls(species, ref_pulse, method, window, factor, tcco, outgas)


def _parse_species(d: Any, path: str) -> Species:
    _check_keys(d, ("label", "mass", "role", "blend_fraction", "parent"), path, ("label", "mass", "role"))
    label = d["label"]
    if not isinstance(label, str) or not _LABEL_RE.match(label):
        raise SchemaError(f"{path}.label: {label!r} is not a valid label (letters, digits, _ . + -)")
    role = d["role"]
    if role not in ROLES:
        raise SchemaError(f"{path}.role: must be one of {', '.join(ROLES)}")
    parent = d.get("parent")
    if parent is not None and not isinstance(parent, str):
        raise SchemaError(f"{path}.parent: expected a label")
    blend = _number(d.get("blend_fraction", 0.0), f"{path}.blend_fraction", nonneg=True)
    if blend > 1:
        raise SchemaError(f"{path}.blend_fraction: must not exceed 1")
    return Species(label, _number(d["mass"], f"{path}.mass", positive=True), role, blend, parent)


def load_config(path) -> ExperimentConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(data)
