"""Reading pulse CSV files and writing run results.

Pulse files are wide: a ``time`` column followed by ``pulse_0``,
``pulse_1``, ... with one file per species.  Numbers are written in
Python's shortest round-trip form so files reproduce values exactly and
reruns are byte-identical.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import SchemaError
from .flux import CONVERSION_RANGE, Flux, TimeGrid, conversion_in_range
from .pipeline import PulseSeries, RunResult

SCHEMA_PATH = Path(__file__).with_name("summary.schema.json")
SCHEMA_VERSION = 1
# Largest deviation from a uniform step still treated as uniform (relative to the step).
UNIFORM_RTOL = 1e-6


class NonUniformGridWarning(UserWarning):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def ingest_csv(path, label: str | None = None) -> PulseSeries:
    """Read one species' pulses from a wide CSV file.

    Raises
    ------
    SchemaError
        Bad header, missing or non-numeric cells (with line and column),
        non-increasing times or too few samples.
    """
    path = Path(path)
    label = label or path.stem
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not UTF-8 text ({exc.reason})") from None
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    expected = ["time"] + [f"pulse_{i}" for i in range(len(header) - 1)]
    if len(header) < 2 or header != expected:
        raise SchemaError(f"{path}:1: header must be 'time,pulse_0,pulse_1,...', got {','.join(header)!r}")
    data = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:]):
        line = r + 2
        if len(row) != len(header):
            raise SchemaError(f"{path}:{line}: expected {len(header)} cells, found {len(row)}")
        for c, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise SchemaError(f"{path}:{line}: missing value in column {header[c]!r}")
            try:
                v = float(cell)
            except ValueError:
                raise SchemaError(f"{path}:{line}: non-numeric value {cell!r} in column {header[c]!r}") from None
            if not math.isfinite(v):
                raise SchemaError(f"{path}:{line}: non-finite value in column {header[c]!r}")
            data[r, c] = v
    if data.shape[0] < 8:
        raise SchemaError(f"{path}: need at least 8 time samples, found {data.shape[0]}")
    t = data[:, 0]
    dt = np.diff(t)
    if np.any(dt <= 0):
        bad = int(np.flatnonzero(dt <= 0)[0]) + 3
        raise SchemaError(f"{path}:{bad}: time column is not strictly increasing")
    grid = TimeGrid.spanning(float(t[0]), float(t[-1]), t.size)
    values = data[:, 1:]
    if np.max(np.abs(t - grid.times)) > UNIFORM_RTOL * grid.step:
        warnings.warn(
            f"{path}: time grid is not uniform; resampling linearly onto {t.size} uniform points",
            NonUniformGridWarning,
            stacklevel=2,
        )
        values = np.column_stack([np.interp(grid.times, t, values[:, j]) for j in range(values.shape[1])])
    fluxes = tuple(Flux(grid, values[:, j], "volts", label, j) for j in range(values.shape[1]))
    return PulseSeries(label, fluxes)


def emit_csv(series: PulseSeries | list, path) -> Path:
    """Write pulses in the wide CSV format."""
    fluxes = list(series.fluxes if isinstance(series, PulseSeries) else series)
    path = Path(path)
    times = fluxes[0].grid.times if fluxes else np.zeros(0)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"pulse_{j}" for j in range(len(fluxes))])
        for i, ti in enumerate(times):
            w.writerow([_fmt(ti)] + [_fmt(f.values[i]) for f in fluxes])
    return path


def load_directory(directory, labels) -> dict[str, PulseSeries]:
    """``<label>.csv`` for every label in ``labels``."""
    directory = Path(directory)
    out = {}
    for label in labels:
        p = directory / f"{label}.csv"
        if not p.is_file():
            raise SchemaError(f"{p}: missing input file for species {label!r}")
        out[label] = ingest_csv(p, label)
    return out


def _json_value(v):
    if isinstance(v, dict):
        return {str(k): _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    return v


def _model_dict(m):
    if isinstance(m, str):
        return {"status": m}
    return {
        "status": "ok",
        "mu": m.mu,
        "zeta1": m.zeta1,
        "zeta2": m.zeta2,
        "standard_errors": list(m.standard_errors),
        "robust": m.robust,
        "reduced": m.reduced,
    }


def summary_dict(result: RunResult, files: list[str]) -> dict:
    cfg = result.config
    conv = {}
    for label, chi in result.conversion.items():
        conv[label] = {
            "values": chi,
            "out_of_range_pulses": [i for i, c in enumerate(chi) if not conversion_in_range(c)],
        }
    outgas = None
    if result.outgas is not None:
        outgas = {
            "flagged_indices": list(result.outgas.flagged_indices),
            "t_statistics": result.outgas.t_statistics,
            "window_half_width": result.outgas.window_half_width,
            "significance": result.outgas.significance,
        }
    kkt = {}
    for label, v in result.kkt_residuals.items():
        finite = v[np.isfinite(v)] if v.size else v
        kkt[label] = float(finite.max()) if finite.size else None
    return _json_value(
        {
            "schema_version": SCHEMA_VERSION,
            "method": result.method,
            "n_pulses": result.n_pulses,
            "config": cfg.to_dict(),
            "reference_pulse": result.reference_pulse,
            "coefficients": result.coefficients,
            "conversion": conv,
            "conversion_range": list(CONVERSION_RANGE),
            "outgas": outgas,
            "excluded_pulses": list(result.excluded_pulses),
            "relationship": result.relationship,
            "relationship_per_pulse": result.relationship_per_pulse,
            "moment_models": {k: _model_dict(m) for k, m in result.moment_models.items()},
            "max_kkt_residual": kkt,
            "provenance": result.provenance,
            "failure": result.failure,
            "files": files,
        }
    )


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))


def emit_results(result: RunResult, out_dir) -> list[Path]:
    """Write calibrated fluxes, moment and conversion tables, a long-format
    CSV for plotting and ``summary.json``.  Returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    cfg = result.config
    n = result.n_pulses
    flagged = set(result.outgas.flagged_indices) if result.outgas else set()
    written: list[Path] = []
    for s in cfg.species:
        written.append(emit_csv(result.calibrated[s.label], out / f"{s.label}_calibrated.csv"))

    p = out / "moments.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pulse_index", "species", "m0", "m1", "m2", "m3", "m1_normalized", "coefficient", "outgas_flag"])
        for i in range(n):
            for s in cfg.species:
                m = result.moments[s.label][i]
                m1n = m[1] / m[0] if m[0] != 0 else float("nan")
                w.writerow(
                    [i, s.label, *(_fmt(v) for v in m), _fmt(m1n), _fmt(result.coefficients[s.label][i]), int(i in flagged)]
                )
    written.append(p)

    p = out / "conversion.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pulse_index", "species", "m0_reactant", "m0_inert", "blend_ratio", "conversion", "in_range", "outgas_flag"])
        for label, chi in result.conversion.items():
            blend = cfg.blend_ratio(label)
            for i in range(n):
                w.writerow(
                    [
                        i,
                        label,
                        _fmt(result.gas_m0[label][i]),
                        _fmt(result.inert_m0[i]),
                        _fmt(blend),
                        _fmt(chi[i]),
                        int(conversion_in_range(chi[i])),
                        int(i in flagged),
                    ]
                )
    written.append(p)

    p = out / "long_format.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pulse_index", "time", "species", "value"])
        for s in cfg.species:
            for f in result.calibrated[s.label]:
                for ti, v in zip(f.grid.times, f.values):
                    w.writerow([f.pulse_index, _fmt(ti), s.label, _fmt(v)])
    written.append(p)

    p = out / "summary.json"
    names = [q.name for q in written] + [p.name]
    text = json.dumps(summary_dict(result, names), indent=2, sort_keys=True, allow_nan=False)
    p.write_text(text + "\n", encoding="utf-8")
    written.append(p)
    return written


def read_table(path) -> list[dict]:
    """Rows of an emitted CSV table as dicts of strings."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def series_from_fluxes(label: str, fluxes) -> PulseSeries:
    return PulseSeries(label, tuple(f.replace(species_label=label, pulse_index=j) for j, f in enumerate(fluxes)))


def load_results_dir(directory) -> Mapping:
    """Summary plus moment and conversion tables of an output directory."""
    d = Path(directory)
    summary = d / "summary.json"
    if not summary.is_file():
        raise SchemaError(f"{summary}: not found; is {d} a run output directory?")
    return {
        "summary": json.loads(summary.read_text(encoding="utf-8")),
        "moments": read_table(d / "moments.csv"),
        "conversion": read_table(d / "conversion.csv"),
    }
