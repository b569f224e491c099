"""
Command pipelines: each one runs a piece of the lab on a RunConfig, writes its
artifacts under the output directory and reports progress through an optional
writer callback taking {"step": ..., "message": ...} dicts.
"""
import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel

from core.config import settings
from core.errors import ConfigError, InsufficientDataError
from core.groups import (
    GroupSpec,
    enumerate_orbit,
    estimate_delta,
    invariant_horoball_system,
    parabolic_orbit,
    sample_limit_set,
)
from core.measure import GmfContext, gmf_residual_scan, patterson_measure, residual_band
from core.models import DensityTrace, MeasureValue, SeriesVerdict
from core.storage import config_hash, save_measure, write_csv, write_json
from lab.dichotomy import (
    ExcursionModel,
    KhinchinTarget,
    classify_khinchin_series,
    dichotomy_grid,
    khinchin_zero_one_estimate,
    predict_measure_values,
    simulate_khinchin_hits,
    synthetic_density_trace,
)
from lab.gauge import check_assumptions, derived_functions, preset
from lab.parse import RunConfig

logger = logging.getLogger(__name__)

Writer = Callable[[Dict[str, str]], None]

LIMIT_SET_DEPTH = 8


class StepResult(BaseModel):
    """Files written by a pipeline and the record summarizing them."""
    step: str
    paths: List[Path]
    summary: Dict


def _writer(writer: Optional[Writer]) -> Writer:
    return writer if writer is not None else (lambda event: logger.info("[%s] %s", event["step"], event["message"]))


def run_hash(cfg: RunConfig) -> str:
    """sha256 of the config text together with the effective run values, command-line overrides included."""
    effective = cfg.model_dump(mode="json", exclude={"group", "out", "source"})
    return config_hash({"source": cfg.source, "effective": effective})


def _traces_frame(traces: List[DensityTrace]) -> pd.DataFrame:
    rows = []
    for i, tr in enumerate(traces):
        for s in tr.samples:
            rows.append({"trace": i, "label": tr.label, "t": s.t,
                         "value": math.nan if s.value is None else s.value, "flag": s.flag or "",
                         "rank": s.rank if s.rank is not None else -1})
    return pd.DataFrame(rows, columns=["trace", "label", "t", "value", "flag", "rank"])


def _points_frame(points) -> pd.DataFrame:
    dirs = np.stack([p.direction for p in points])
    return pd.DataFrame({f"x{i}": dirs[:, i] for i in range(dirs.shape[1])})


# --- Orbits ---

def run_orbit(cfg: RunConfig, writer: Optional[Writer] = None) -> StepResult:
    write = _writer(writer)
    spec = cfg.require_group()
    write({"step": "orbit", "message": f"Enumerating the orbit of 0 under {spec.label} up to T={cfg.t_max:g}"})
    orbit = enumerate_orbit(spec, cfg.t_max, threads=cfg.threads)
    path = write_csv(cfg.out / "orbit.csv", orbit.to_frame(), run_hash(cfg), cfg.seed)
    write({"step": "orbit", "message": f"{len(orbit)} orbit points{' (truncated)' if orbit.truncated else ''}"})
    return StepResult(step="orbit", paths=[path],
                      summary={"label": spec.label, "points": len(orbit), "truncated": orbit.truncated})


def run_delta(cfg: RunConfig, writer: Optional[Writer] = None) -> StepResult:
    write = _writer(writer)
    spec = cfg.require_group()
    orbit = enumerate_orbit(spec, cfg.t_max, threads=cfg.threads)
    estimate = estimate_delta(orbit)
    write({"step": "delta", "message": f"delta({spec.label}) ~ {estimate.delta:.4f} "
                                       f"[{estimate.ci_low:.4f}, {estimate.ci_high:.4f}]"})
    path = write_json(cfg.out / "delta.json", estimate, run_hash(cfg), cfg.seed)
    return StepResult(step="delta", paths=[path], summary=estimate.model_dump(mode="json"))


def run_limitset(cfg: RunConfig, writer: Optional[Writer] = None) -> StepResult:
    write = _writer(writer)
    spec = cfg.require_group()
    points = sample_limit_set(spec, LIMIT_SET_DEPTH, cfg.samples, cfg.seed)
    path = write_csv(cfg.out / "limitset.csv", _points_frame(points), run_hash(cfg), cfg.seed)
    write({"step": "limitset", "message": f"Sampled {len(points)} limit points of {spec.label}"})
    return StepResult(step="limitset", paths=[path], summary={"label": spec.label, "samples": len(points)})


# --- Gauges ---

def run_gauge_classify(cfg: RunConfig, writer: Optional[Writer] = None) -> StepResult:
    write = _writer(writer)
    g = cfg.require_gauge()
    assumptions = check_assumptions(g)
    write({"step": "gauge", "message": f"Psi is eventually {assumptions.direction}, Psi' -> {assumptions.psi_prime_limit:g}"})
    verdict = predict_measure_values(g, cfg.kmin, cfg.kmax)
    for series in (verdict.hausdorff_series, verdict.packing_series):
        if series is not None:
            for line in series.trace:
                write({"step": f"gauge.{series.kind}", "message": line})
    write({"step": "gauge", "message": f"H^psi(mu): {verdict.hausdorff.value}, P^psi(mu): {verdict.packing.value}"})
    path = write_json(cfg.out / "verdict.json", verdict, run_hash(cfg), cfg.seed)
    return StepResult(step="gauge-classify", paths=[path], summary=verdict.model_dump(mode="json"))


# --- Measure checks ---

def _mu_sampled_etas(mu, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    picks = rng.choice(len(mu), size=count, replace=len(mu) < count, p=mu.weights / mu.total_mass)
    return mu.directions[picks]


def run_gmf_check(cfg: RunConfig, writer: Optional[Writer] = None) -> StepResult:
    """Residuals of log ball masses against the Global Measure Formula along mu-sampled rays."""
    write = _writer(writer)
    spec = cfg.require_group()
    orbit = enumerate_orbit(spec, cfg.t_max, threads=cfg.threads)
    estimate = estimate_delta(orbit)
    s = estimate.delta + settings.patterson_s_offset
    write({"step": "gmf", "message": f"Patterson measure at s={s:.4f} from {len(orbit)} orbit points"})
    mu = patterson_measure(orbit, s, delta=estimate.delta)
    system = invariant_horoball_system(spec, cfg.t_max) if spec.parabolic_reps else None
    ctx = GmfContext.from_system(estimate.delta, system, spec.dimension)

    start, stop, count = cfg.t_grid
    t_grid = np.linspace(start, stop, count)
    etas = _mu_sampled_etas(mu, cfg.samples, cfg.seed)
    traces = [gmf_residual_scan(mu, ctx, eta, t_grid) for eta in etas]
    band = residual_band(traces)
    unresolved = sum(len(tr) - len(tr.resolved()) for tr in traces)
    write({"step": "gmf", "message": f"Residual band {band:.3f} over {len(traces)} rays ({unresolved} unresolved samples)"})

    h = run_hash(cfg)
    paths = [
        write_csv(cfg.out / "gmf_residuals.csv", _traces_frame(traces), h, cfg.seed),
        save_measure(cfg.out / "measure.csv", mu, h, cfg.seed),
    ]
    summary = {
        "delta": estimate.model_dump(mode="json"),
        "s": s,
        "horoballs": 0 if system is None else len(system),
        "band": band,
        "within_band": bool(band <= settings.gmf_band),
        "unresolved": unresolved,
        "rays": len(traces),
    }
    paths.append(write_json(cfg.out / "gmf.json", summary, h, cfg.seed))
    return StepResult(step="gmf-check", paths=paths, summary=summary)


# --- Khinchin ---

def _target(cfg: RunConfig, spec: GroupSpec, delta: float) -> KhinchinTarget:
    kh = cfg.khinchin
    if kh.kind == "const":
        return KhinchinTarget.constant(kh.params[0])
    if kh.kind == "log_power":
        scale = kh.params[1] if len(kh.params) > 1 else 1.0
        return KhinchinTarget.log_power(kh.params[0], scale)
    g = cfg.require_gauge()
    rank = spec.parabolic_reps[kh.p_index].rank
    return KhinchinTarget.from_family(derived_functions(g.model_copy(update={"delta": delta}), rank), kh.params[0])


def run_khinchin(cfg: RunConfig, writer: Optional[Writer] = None) -> StepResult:
    """Shrinking-target hits around cusp images against the Khinchin series verdict."""
    write = _writer(writer)
    spec = cfg.require_group()
    kh = cfg.khinchin
    if kh.p_index >= len(spec.parabolic_reps):
        raise ConfigError(f"group {spec.label} has no cusp {kh.p_index}")
    rank = spec.parabolic_reps[kh.p_index].rank
    delta = estimate_delta(enumerate_orbit(spec, cfg.t_max, threads=cfg.threads)).delta
    target = _target(cfg, spec, delta)
    series = classify_khinchin_series(target, 2.0 * delta - rank, kh.lam)
    write({"step": "khinchin", "message": f"Series for {target.name} with Delta_p={2.0 * delta - rank:.4f}: "
                                          f"{series.verdict.value}"})

    orbit = parabolic_orbit(spec, kh.p_index, cfg.t_max)
    etas = sample_limit_set(spec, LIMIT_SET_DEPTH, cfg.samples, cfg.seed)
    records = simulate_khinchin_hits(spec, kh.p_index, target, etas, cfg.t_max, orbit=orbit)
    total = sum(r.count for r in records)
    write({"step": "khinchin", "message": f"{total} hits over {len(records)} points and {len(orbit)} targets"})

    report = None
    if series.verdict != SeriesVerdict.UNDECIDED:
        try:
            report = khinchin_zero_one_estimate(records, series.verdict, kh.thresholds)
            write({"step": "khinchin", "message": f"Tail-hit fractions {report.fractions} ({report.trend})"})
        except InsufficientDataError as e:
            write({"step": "khinchin", "message": f"No zero-one estimate: {e}"})

    rows = [{"eta_index": r.eta_index, "log_radius": lr} for r in records for lr in r.hit_log_radii]
    h = run_hash(cfg)
    paths = [write_csv(cfg.out / "khinchin_hits.csv",
                       pd.DataFrame(rows, columns=["eta_index", "log_radius"]), h, cfg.seed)]
    summary = {
        "target": target.name,
        "delta": delta,
        "series": series.model_dump(mode="json"),
        "hits": total,
        "report": None if report is None else report.model_dump(mode="json"),
    }
    paths.append(write_json(cfg.out / "khinchin.json", summary, h, cfg.seed))
    return StepResult(step="khinchin", paths=paths, summary=summary)


# --- Synthetic dichotomy ---

def run_dichotomy(cfg: RunConfig, writer: Optional[Writer] = None, progress: bool = False) -> StepResult:
    """Synthetic drift verdicts against the predictor over every (gauge, delta, kmin, kmax) cell."""
    write = _writer(writer)
    dc = cfg.dichotomy
    write({"step": "dichotomy", "message": f"{len(dc.gauges)} gauges x {len(dc.triples)} triples, "
                                           f"{dc.seeds} seeds, horizon {dc.horizon:g}"})
    cells = dichotomy_grid(dc.gauges, dc.triples, seeds=dc.seeds, horizon=dc.horizon, base_seed=cfg.seed,
                           intensity=dc.intensity, threads=cfg.threads, progress=progress)
    for cell in cells:
        write({"step": "dichotomy", "message": f"{cell.gauge} delta={cell.delta:g}: hausdorff "
                                               f"{cell.hausdorff_agree}/{cell.seeds}, packing "
                                               f"{cell.packing_agree}/{cell.seeds}"})

    traces = []
    for delta, kmin, kmax in dc.triples:
        for name in dc.gauges:
            g = preset(name, delta, kmin, kmax)
            model = ExcursionModel(delta, tuple(sorted({kmin, kmax})), intensity=dc.intensity,
                                   dimension=max(3, kmax + 1), seed=cfg.seed)
            traces.append(synthetic_density_trace(model, g, dc.horizon))

    h = run_hash(cfg)
    worst = min(cell.agreement for cell in cells)
    summary = {
        "cells": [cell.model_dump(mode="json") | {"agreement": cell.agreement} for cell in cells],
        "min_agreement": worst,
        "undecided": any(MeasureValue.UNDECIDED in (c.predicted.hausdorff, c.predicted.packing) for c in cells),
    }
    paths = [
        write_csv(cfg.out / "synthetic_traces.csv", _traces_frame(traces), h, cfg.seed),
        write_json(cfg.out / "dichotomy.json", summary, h, cfg.seed),
    ]
    return StepResult(step="dichotomy", paths=paths, summary=summary)
