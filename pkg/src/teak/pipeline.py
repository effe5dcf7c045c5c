"""TEAK workflow and the traditional comparison path.

TEAK, per pulse: smooth every species, remove the baseline with the Gamma
tail rule, align non-inert species to the inert transport time scale,
calibrate the inert pulse to a reference inert pulse, then calibrate each
reactant/product (with its fragments as extra regressors) against the
same-pulse calibrated inert.  Series-level steps (outgas detection,
relationship checks, the moment-regression cross-check) run once all
pulses are done.

Pulses are independent until the series-level steps, so the per-pulse
chain could be farmed out; it runs sequentially here for determinism.
"""
from __future__ import annotations

import platform
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .baseline import baseline_gamma, baseline_tail_mean
from .calibration import (
    MomentCalibModel,
    Relationship,
    TccoConfig,
    check_relationships,
    fit_moment_calibration,
    median_reference_index,
    tcco_calibrate,
)
from .config import ExperimentConfig
from .errors import SchemaError, TeakError
from .flux import Flux, conversion, graham_align, moments, residence_props
from .outgas import OutgasReport, detect
from .smoothing import estimate_noise_std, smooth

# Auto support threshold, as a fraction of the regressor's peak:
# SUPPORT_FLOOR + SUPPORT_SLOPE * sqrt(sigma / peak) with the noisiest of
# the fluxes being compared.  The ratio bound is a minimum over samples, so
# it is pulled down by any error; the low leading edge carries the largest
# baseline, smoothing and alignment errors relative to the signal and the
# threshold keeps it out.  Too high a threshold loses the samples where
# the true ratio is smallest.  Constants fitted on simulated thin-zone data.
SUPPORT_FLOOR = 0.14
SUPPORT_SLOPE = 1.6
NOISE_TAIL_FRACTION = 0.5
TRADITIONAL_TAIL_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class PulseSeries:
    """Ordered pulses of one species on a shared time grid."""

    label: str
    fluxes: tuple[Flux, ...]

    def __post_init__(self):
        fl = tuple(self.fluxes)
        if not fl:
            raise SchemaError(f"{self.label}: empty pulse series")
        g = fl[0].grid
        for f in fl[1:]:
            if f.grid != g:
                raise SchemaError(f"{self.label}: pulses do not share one time grid")
        object.__setattr__(self, "fluxes", fl)

    @property
    def grid(self):
        return self.fluxes[0].grid

    def __len__(self) -> int:
        return len(self.fluxes)

    def __getitem__(self, i) -> Flux:
        return self.fluxes[i]


@dataclass(eq=False)
class RunResult:
    method: str
    config: ExperimentConfig
    n_pulses: int
    calibrated: dict[str, list[Flux]]
    moments: dict[str, np.ndarray]  # (n_pulses, 4): m0..m3 of calibrated flux
    coefficients: dict[str, np.ndarray]
    conversion: dict[str, np.ndarray]
    gas_m0: dict[str, np.ndarray]  # parent + fragments, used in conversion
    inert_m0: np.ndarray
    outgas: OutgasReport | None
    relationship: dict[str, str]
    relationship_per_pulse: dict[str, list[str]]
    moment_models: dict[str, MomentCalibModel | str]
    excluded_pulses: tuple[int, ...] = ()
    reference_pulse: int | None = None
    kkt_residuals: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    failure: dict | None = None

    @property
    def m1_normalized(self) -> dict[str, np.ndarray]:
        out = {}
        for label, m in self.moments.items():
            with np.errstate(divide="ignore", invalid="ignore"):
                out[label] = m[:, 1] / m[:, 0]
        return out


class StageError(TeakError):
    """A per-pulse stage failed; ``partial`` holds the completed pulses."""

    def __init__(self, stage: str, pulse: int, species: str, cause: Exception, partial: RunResult | None = None):
        super().__init__(f"stage {stage!r} failed at pulse {pulse} ({species}): {cause}")
        self.stage = stage
        self.pulse = pulse
        self.species = species
        self.cause = cause
        self.partial = partial


def _check_inputs(raw: Mapping[str, PulseSeries], config: ExperimentConfig) -> int:
    want = {s.label for s in config.species}
    have = set(raw)
    if want - have:
        raise SchemaError(f"missing data for species: {', '.join(sorted(want - have))}")
    if have - want:
        raise SchemaError(f"data for species not in config: {', '.join(sorted(have - want))}")
    inert = raw[config.inert.label]
    for label, ser in raw.items():
        if len(ser) != len(inert):
            raise SchemaError(f"{label}: {len(ser)} pulses, inert has {len(inert)}")
        if ser.grid != inert.grid:
            raise SchemaError(f"{label}: time grid differs from the inert grid")
    return len(inert)


def _provenance(config: ExperimentConfig, seed) -> dict:
    return {
        "config_sha256": config.digest(),
        "seed": seed,
        "versions": {
            "teak": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _transport_mass(config: ExperimentConfig, label: str) -> float:
    s = config.species_by_label(label)
    # A fragment travels as its parent molecule.
    return config.species_by_label(s.parent).mass if s.role == "fragment" else s.mass


class _Run:
    """Mutable accumulator shared by the two paths."""

    def __init__(self, method: str, config: ExperimentConfig, n: int, seed):
        self.method = method
        self.config = config
        self.n = n
        self.seed = seed
        labels = [s.label for s in config.species]
        self.calibrated: dict[str, list[Flux]] = {l: [] for l in labels}
        self.coefs: dict[str, list[float]] = {l: [] for l in labels}
        self.kkt: dict[str, list[float]] = {l: [] for l in labels}
        self.baselined: dict[str, list[Flux]] = {l: [] for l in labels}
        self.reference: int | None = None

    def stage(self, stage: str, pulse: int, species: str, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except TeakError as exc:
            raise StageError(stage, pulse, species, exc, None) from exc

    def completed(self) -> int:
        return min(len(v) for v in self.calibrated.values())

    def finish(self, failure: dict | None = None) -> RunResult:
        cfg = self.config
        n = self.completed()
        calibrated = {l: v[:n] for l, v in self.calibrated.items()}
        mom = {
            l: np.array([[m.m0, m.m1, m.m2, m.m3] for m in (moments(f, 3) for f in v)]).reshape(n, 4)
            for l, v in calibrated.items()
        }
        inert_label = cfg.inert.label
        inert_m0 = mom[inert_label][:, 0].copy()
        gas_m0 = {}
        for g in cfg.gases():
            total = mom[g.label][:, 0].copy()
            for frag in cfg.fragments_of(g.label):
                total = total + mom[frag.label][:, 0]
            gas_m0[g.label] = total

        outgas = None
        hw = cfg.outgas.window_half_width
        if n >= 2 * hw + 3:
            outgas = detect(inert_m0, hw, cfg.outgas.significance)
        excluded = tuple(outgas.flagged_indices) if (outgas and cfg.outgas.auto_exclude) else ()
        keep = np.setdiff1d(np.arange(n), excluded)

        conv = {}
        rel, rel_pp = {}, {}
        products = [g for g in cfg.gases() if g.role == "product"]
        m1n_I = mom[inert_label][:, 1] / mom[inert_label][:, 0] if n else np.zeros(0)
        for g in cfg.gases():
            if g.role != "reactant":
                continue
            blend = cfg.blend_ratio(g.label)
            conv[g.label] = np.array([conversion(gas_m0[g.label][i], inert_m0[i], blend) for i in range(n)])
            m1n_r = _total_m1(mom, cfg, g.label) / gas_m0[g.label] if n else np.zeros(0)
            m0_p = [gas_m0[p.label] for p in products]
            rel_pp[g.label] = [
                check_relationships(
                    gas_m0[g.label][i], [mp[i] for mp in m0_p], inert_m0[i], m1n_r[i], m1n_I[i], blend
                ).value
                for i in range(n)
            ]
            if keep.size:
                rel[g.label] = check_relationships(
                    gas_m0[g.label][keep].mean(),
                    [mp[keep].mean() for mp in m0_p],
                    inert_m0[keep].mean(),
                    m1n_r[keep].mean(),
                    m1n_I[keep].mean(),
                    blend,
                ).value

        models: dict[str, MomentCalibModel | str] = {}
        for g in cfg.gases():
            models[g.label] = self._moment_fit(g.label, keep)

        return RunResult(
            method=self.method,
            config=cfg,
            n_pulses=n,
            calibrated=calibrated,
            moments=mom,
            coefficients={l: np.asarray(v[:n], dtype=float) for l, v in self.coefs.items()},
            conversion=conv,
            gas_m0=gas_m0,
            inert_m0=inert_m0,
            outgas=outgas,
            relationship=rel,
            relationship_per_pulse=rel_pp,
            moment_models=models,
            excluded_pulses=excluded,
            reference_pulse=self.reference,
            kkt_residuals={l: np.asarray(v[:n], dtype=float) for l, v in self.kkt.items()},
            provenance=_provenance(cfg, self.seed),
            failure=failure,
        )

    def _moment_fit(self, label: str, keep: np.ndarray):
        """Moment regression on baseline-corrected (uncalibrated) fluxes."""
        cfg = self.config
        gas = self.baselined[label]
        inert = self.baselined[cfg.inert.label]
        idx = [i for i in keep if i < len(gas) and i < len(inert)]
        if len(idx) < 4:
            return "skipped: fewer than 4 pulses"
        try:
            m0_g = [moments(gas[i], 0).m0 for i in idx]
            tau = [residence_props(gas[i]).tau_area for i in idx]
            m0_i = [moments(inert[i], 0).m0 for i in idx]
            return fit_moment_calibration(m0_g, tau, m0_i, robust=True, allow_reduced=True)
        except TeakError as exc:
            return f"failed: {exc}"


def _total_m1(mom, cfg: ExperimentConfig, label: str) -> np.ndarray:
    m1 = mom[label][:, 1].copy()
    for frag in cfg.fragments_of(label):
        m1 = m1 + mom[frag.label][:, 1]
    return m1


def _abort(run: _Run, err: StageError):
    err.partial = run.finish(
        failure={"stage": err.stage, "pulse": err.pulse, "species": err.species, "message": str(err.cause)}
    )
    raise err


def _preprocess(run: _Run, raw: Mapping[str, PulseSeries], i: int) -> tuple[dict[str, Flux], dict[str, float]]:
    """Smooth, baseline and align every species of pulse ``i``.

    All species share one roughness penalty (the largest automatic one).
    The spline is linear with an amplitude-free penalty, so a shared
    penalty blurs proportional fluxes alike and leaves their ratio intact;
    per-species penalties would blur the noisier signal's leading edge
    more and bias the pointwise ratio bounds.
    """
    cfg = run.config
    sigma, factors = {}, []
    for s in cfg.species:
        flux = raw[s.label][i]
        sigma[s.label] = run.stage("noise", i, s.label, estimate_noise_std, flux, NOISE_TAIL_FRACTION)
        if cfg.smoothing_factor is None:
            r = run.stage("smooth", i, s.label, smooth, flux, None, NOISE_TAIL_FRACTION)
            factors.append(r.smoothing_factor)
    factor = cfg.smoothing_factor if cfg.smoothing_factor is not None else max(factors)
    out = {}
    for s in cfg.species:
        sm = run.stage("smooth", i, s.label, smooth, raw[s.label][i], factor, NOISE_TAIL_FRACTION).smoothed
        if cfg.baseline_method == "gamma":
            base = run.stage("baseline", i, s.label, baseline_gamma, sm).corrected
        else:
            base = run.stage("baseline", i, s.label, baseline_tail_mean, sm, cfg.tail_window).corrected
        mass = _transport_mass(cfg, s.label)
        out[s.label] = run.stage("align", i, s.label, graham_align, base, mass, cfg.inert.mass)
    return out, sigma


def _support_threshold(cfg: ExperimentConfig, fluxes: Sequence[Flux], sigmas: Sequence[float]) -> float:
    thr = cfg.tcco.support_threshold
    if thr != "auto":
        return float(thr)
    ratio = max(
        (s / float(np.max(f.values)) if np.max(f.values) > 0 else 0.0) for f, s in zip(fluxes, sigmas)
    )
    return SUPPORT_FLOOR + SUPPORT_SLOPE * float(np.sqrt(ratio))


def run_teak(raw: Mapping[str, PulseSeries], config: ExperimentConfig, seed=None) -> RunResult:
    """Full TEAK preprocessing of a multi-species pulse series.

    Raises
    ------
    SchemaError
        Inputs do not match the configuration.
    StageError
        A stage failed; ``err.partial`` holds the pulses completed so far
        and a failure marker.
    """
    n = _check_inputs(raw, config)
    run = _Run("teak", config, n, seed)
    inert_label = config.inert.label
    # Preprocess up to the first failure so earlier pulses still get calibrated.
    pre_all, pending = [], None
    for i in range(n):
        try:
            pre_all.append(_preprocess(run, raw, i))
        except StageError as err:
            pending = err
            break
    try:
        if not pre_all:
            raise pending
        done_n = len(pre_all)
        inert_pre = [p[inert_label] for p, _ in pre_all]
        if config.reference_pulse is None:
            ref = median_reference_index([moments(f, 0).m0 for f in inert_pre])
        else:
            ref = config.reference_pulse
            if ref >= n:
                raise SchemaError(f"reference_dv.pulse_index {ref} out of range for {n} pulses")
            if ref >= done_n:
                raise pending
        run.reference = ref
        ref_cfg = TccoConfig(enforce_pointwise=False, enforce_moment=False, feas_tol=config.tcco.feas_tol)
        for i in range(done_n):
            pre, sig = pre_all[i]
            sol = run.stage("tcco", i, inert_label, tcco_calibrate, inert_pre[ref], [inert_pre[i]], ref_cfg)
            cal_inert = inert_pre[i].with_values(sol.b[0] * inert_pre[i].values, units="calibrated")
            done = {inert_label: (cal_inert, float(sol.b[0]), sol.kkt_residual)}
            for g in config.gases():
                labels = [g.label] + [f.label for f in config.fragments_of(g.label)]
                ivs = [pre[l] for l in labels]
                dv = cal_inert.with_values(config.blend_ratio(g.label) * cal_inert.values)
                tc = TccoConfig(
                    config.tcco.enforce_pointwise,
                    config.tcco.enforce_moment,
                    config.tcco.feas_tol,
                    _support_threshold(config, [inert_pre[i], *ivs], [sig[inert_label], *(sig[l] for l in labels)]),
                )
                sol = run.stage("tcco", i, g.label, tcco_calibrate, dv, ivs, tc)
                for l, iv, bj in zip(labels, ivs, sol.b):
                    done[l] = (iv.with_values(bj * iv.values, units="calibrated"), float(bj), sol.kkt_residual)
            for l, (f, b, kkt) in done.items():
                run.calibrated[l].append(f)
                run.coefs[l].append(b)
                run.kkt[l].append(kkt)
                run.baselined[l].append(pre[l])
        if pending is not None:
            raise pending
    except StageError as err:
        _abort(run, err)
    return run.finish()


def run_traditional(
    raw: Mapping[str, PulseSeries],
    config: ExperimentConfig,
    inert_calibration_coefficient: float | Mapping[str, float],
    seed=None,
) -> RunResult:
    """Tail-mean baseline and a fixed prior calibration coefficient.

    The inert stays in detector units; every other species is multiplied
    by the coefficient (a single number, or one per label).  No smoothing
    and no alignment are applied.  The tail window is the configured
    ``tail_mean`` window, else the last 10% of the record.
    """
    n = _check_inputs(raw, config)
    coef = inert_calibration_coefficient
    others = [s.label for s in config.species if s.role != "inert"]
    if isinstance(coef, Mapping):
        missing = [l for l in others if l not in coef]
        if missing:
            raise SchemaError(f"no calibration coefficient for: {', '.join(missing)}")
        coefs = {l: float(coef[l]) for l in others}
    else:
        coefs = {l: float(coef) for l in others}
    for l, c in coefs.items():
        if not (np.isfinite(c) and c > 0):
            raise SchemaError(f"calibration coefficient for {l} must be positive, got {c}")
    coefs[config.inert.label] = 1.0
    run = _Run("traditional", config, n, seed)
    grid = raw[config.inert.label].grid
    window = config.tail_window or TRADITIONAL_TAIL_FRACTION * grid.duration
    try:
        for i in range(n):
            for s in config.species:
                base = run.stage("baseline", i, s.label, baseline_tail_mean, raw[s.label][i], window).corrected
                c = coefs[s.label]
                run.baselined[s.label].append(base)
                run.calibrated[s.label].append(base.with_values(c * base.values, units="calibrated"))
                run.coefs[s.label].append(c)
                run.kkt[s.label].append(float("nan"))
    except StageError as err:
        _abort(run, err)
    return run.finish()
