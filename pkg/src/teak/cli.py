"""Command-line interface.

Exit codes: 0 success, 2 schema/config/input error, 3 numerical failure,
4 infeasible calibration.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import InfeasibleError, SchemaError, TeakError
from .flux import moments, residence_props
from .io import emit_csv, emit_results, ingest_csv, load_directory, load_results_dir
from .outgas import DEFAULT_HALF_WIDTH, DEFAULT_SIGNIFICANCE, detect
from .pipeline import PulseSeries, StageError, run_teak, run_traditional
from .scenario import load_scenario, run_scenario

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, (SchemaError, FileNotFoundError, IsADirectoryError, PermissionError)):
        return EXIT_SCHEMA
    return EXIT_NUMERICAL


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False))


def _parse_coefficient(text: str):
    """``0.43`` or ``O2=0.43,O2_16=1.9``."""
    try:
        return float(text)
    except ValueError:
        pass
    out = {}
    for part in text.split(","):
        label, sep, value = part.partition("=")
        if not sep:
            raise SchemaError(f"--coefficient: expected a number or label=value pairs, got {text!r}")
        try:
            out[label.strip()] = float(value)
        except ValueError:
            raise SchemaError(f"--coefficient: {value!r} is not a number") from None
    return out


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    series, truth = run_scenario(sc, seed=args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for label, fl in series.items():
        emit_csv(fl, out / f"{label}.csv")
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cfg = sc.experiment_config().to_dict()
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(series)} species x {sc.n_pulses} pulses to {out}")
    return EXIT_OK


def _run_and_emit(args, runner) -> int:
    cfg = load_config(args.config)
    raw = load_directory(args.input, [s.label for s in cfg.species])
    try:
        result = runner(raw, cfg)
    except StageError as err:
        if err.partial is not None:
            emit_results(err.partial, args.output)
        print(f"error: {err}", file=sys.stderr)
        return exit_code_for(err)
    emit_results(result, args.output)
    print(f"{result.method}: {result.n_pulses} pulses written to {args.output}")
    if result.outgas and result.outgas.flagged_indices:
        print(f"outgas flags: {list(result.outgas.flagged_indices)}")
    return EXIT_OK


def cmd_teak(args) -> int:
    return _run_and_emit(args, lambda raw, cfg: run_teak(raw, cfg, seed=args.seed))


def cmd_traditional(args) -> int:
    coef = _parse_coefficient(args.coefficient)
    return _run_and_emit(args, lambda raw, cfg: run_traditional(raw, cfg, coef, seed=args.seed))


def cmd_moments(args) -> int:
    series = ingest_csv(args.input)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["pulse_index", "m0", "m1", "m2", "m3", "tau_mean", "tau_var", "tau_peak", "tau_area"])
    for f in series.fluxes:
        m = moments(f, 3)
        try:
            rp = residence_props(f)
            props = [rp.tau_mean, rp.tau_var, rp.tau_peak, rp.tau_area]
        except TeakError:
            props = [float("nan")] * 4
        w.writerow([f.pulse_index, *(repr(float(v)) for v in (m.m0, m.m1, m.m2, m.m3, *props))])
    return EXIT_OK


def cmd_detect_outgas(args) -> int:
    series = ingest_csv(args.input)
    m0 = [moments(f, 0).m0 for f in series.fluxes]
    rep = detect(m0, args.half_width, args.significance)
    _print_json(
        {
            "flagged_indices": list(rep.flagged_indices),
            "m0": m0,
            "window_half_width": rep.window_half_width,
            "significance": rep.significance,
        }
    )
    return EXIT_OK


def _series_stats(rows, species: str, exclude=()) -> dict:
    m0 = np.array([float(r["m0"]) for r in rows if r["species"] == species and int(r["pulse_index"]) not in exclude])
    if m0.size == 0:
        return {"n": 0}
    mean = float(m0.mean())
    var = float(m0.var(ddof=1)) if m0.size > 1 else 0.0
    return {"n": int(m0.size), "mean": mean, "variance": var, "cov": float(np.sqrt(var) / abs(mean)) if mean else None}


def cmd_compare(args) -> int:
    a = load_results_dir(args.teak_dir)
    b = load_results_dir(args.trad_dir)
    flagged = set()
    if a["summary"].get("outgas"):
        flagged = set(a["summary"]["outgas"]["flagged_indices"])
    species = [s["label"] for s in a["summary"]["config"]["species"]]
    report = {"excluded_pulses": sorted(flagged), "species": {}, "conversion": {}}
    for s in species:
        ta = _series_stats(a["moments"], s, flagged)
        tb = _series_stats(b["moments"], s, flagged)
        entry = {a["summary"]["method"]: ta, b["summary"]["method"]: tb}
        if ta.get("variance") and tb.get("variance") is not None:
            entry["variance_ratio"] = tb["variance"] / ta["variance"]
        report["species"][s] = entry
    for label in a["summary"]["conversion"]:
        ca = np.array(a["summary"]["conversion"][label]["values"], dtype=float)
        cb = np.array(b["summary"]["conversion"].get(label, {}).get("values", []), dtype=float)
        if ca.size and ca.size == cb.size:
            keep = [i for i in range(ca.size) if i not in flagged]
            report["conversion"][label] = {
                "mean_abs_difference": float(np.mean(np.abs(ca[keep] - cb[keep]))),
                "mean_" + a["summary"]["method"]: float(np.mean(ca[keep])),
                "mean_" + b["summary"]["method"]: float(np.mean(cb[keep])),
            }
    _print_json(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teak", description="TAP pulse-response preprocessing (TEAK).")
    p.add_argument("--seed", type=int, default=0, help="random seed for simulation noise (default 0)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic pulse CSVs from a scenario file")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("teak", help="run the TEAK workflow")
    s.add_argument("config")
    s.add_argument("-i", "--input", required=True, help="directory with <species>.csv files")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_teak)

    s = sub.add_parser("traditional", help="tail-mean baseline with a fixed calibration coefficient")
    s.add_argument("config")
    s.add_argument("--coefficient", required=True, help="number, or label=value pairs separated by commas")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_traditional)

    s = sub.add_parser("moments", help="per-pulse moments of one pulse CSV")
    s.add_argument("-i", "--input", required=True)
    s.set_defaults(func=cmd_moments)

    s = sub.add_parser("detect-outgas", help="moving-window t-test on per-pulse m0")
    s.add_argument("-i", "--input", required=True)
    s.add_argument("--half-width", type=int, default=DEFAULT_HALF_WIDTH)
    s.add_argument("--significance", type=float, default=DEFAULT_SIGNIFICANCE)
    s.set_defaults(func=cmd_detect_outgas)

    s = sub.add_parser("compare", help="compare a TEAK and a traditional output directory")
    s.add_argument("teak_dir")
    s.add_argument("trad_dir")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TeakError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
