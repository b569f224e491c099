import math

import numpy as np
import pytest

from core.config import settings
from core.errors import DomainError, InsufficientDataError, InvariantViolation
from core.geometry import BoundaryPoint
from core.groups import enumerate_orbit, estimate_delta, hecke, parabolic_orbit, sample_limit_set
from core.measure import AtomicMeasure
from core.models import GaugeSpec, HitRecord, MeasureValue, SeriesVerdict
from lab.dichotomy import (
    ExcursionHistory,
    ExcursionModel,
    KhinchinTarget,
    classify_khinchin_series,
    density_sup_alpha,
    density_trace,
    dichotomy_grid,
    drift_report,
    excursion_trace,
    history_trace,
    khinchin_zero_one_estimate,
    predict_measure_values,
    rtt_verdict,
    run_dichotomy_cell,
    simulate_excursions,
    simulate_khinchin_hits,
    synthetic_density_trace,
    synthetic_verdict,
)
from lab.gauge import big_psi, derived_functions, gauge_from_stratmann, preset

T_GRID = np.linspace(1.0, 6.0, 11)


@pytest.fixture(scope="module")
def hecke_cusp():
    spec = hecke(3.0)
    etas = sample_limit_set(spec, 8, 200, seed=1)
    return spec, etas


# --- Density traces and RTT ---

def test_dirac_trace_is_linear():
    eta = BoundaryPoint.from_angle(0.4)
    trace = density_trace(AtomicMeasure.dirac(eta), GaugeSpec(delta=1.25), eta, T_GRID, resolution=0.0)
    assert trace.source == "empirical"
    np.testing.assert_allclose(trace.values(), 1.25 * T_GRID, atol=1e-12)


def test_density_trace_needs_positive_times():
    eta = BoundaryPoint.from_angle(0.4)
    with pytest.raises(DomainError):
        density_trace(AtomicMeasure.dirac(eta), GaugeSpec(delta=1.0), eta, [0.0, 1.0])


def test_atomic_measure_has_zero_hausdorff_density_limit():
    mu = AtomicMeasure.uniform(20)
    g = GaugeSpec(delta=1.0)
    traces = [density_trace(mu, g, BoundaryPoint(d), T_GRID, resolution=0.0) for d in mu.directions]
    report = rtt_verdict(traces, "hausdorff")
    assert report.resolved_traces == 20
    assert report.drift == pytest.approx(3.5, abs=1e-9)
    assert report.verdict == MeasureValue.ZERO


@pytest.fixture(scope="module")
def uniform_traces():
    mu = AtomicMeasure.uniform(50_000)
    angles = np.linspace(0.0, 2.0 * math.pi, 20, endpoint=False) + 0.01
    return mu, [BoundaryPoint.from_angle(a) for a in angles]


@pytest.mark.parametrize("mode", ["hausdorff", "packing"])
def test_uniform_measure_is_positive_and_finite(uniform_traces, mode):
    mu, etas = uniform_traces
    g = GaugeSpec(delta=1.0)
    report = rtt_verdict([density_trace(mu, g, eta, T_GRID) for eta in etas], mode)
    assert report.verdict == MeasureValue.POSITIVE_FINITE
    assert report.bounds[0] <= report.bounds[1]


def test_verdict_ignores_scaling_and_constant_terms(uniform_traces):
    mu, etas = uniform_traces
    base = rtt_verdict([density_trace(mu, GaugeSpec(delta=1.0), eta, T_GRID) for eta in etas], "hausdorff")
    scaled = rtt_verdict([density_trace(mu.scaled(5.0), GaugeSpec(delta=1.0), eta, T_GRID) for eta in etas],
                         "hausdorff")
    shifted = rtt_verdict([density_trace(mu, GaugeSpec(delta=1.0, c_const=3.0), eta, T_GRID) for eta in etas],
                          "hausdorff")
    assert base.verdict == scaled.verdict == shifted.verdict
    assert scaled.drift == pytest.approx(base.drift, abs=1e-9)
    assert shifted.drift == pytest.approx(base.drift, abs=1e-9)


def test_a_minority_of_flat_traces_blocks_the_zero_verdict(uniform_traces):
    smooth, etas = uniform_traces
    atoms = AtomicMeasure.uniform(20)
    g = GaugeSpec(delta=1.0)
    traces = [density_trace(atoms, g, BoundaryPoint(d), T_GRID, resolution=0.0) for d in atoms.directions]
    traces += [density_trace(smooth, g, eta, T_GRID) for eta in etas[:5]]
    report = rtt_verdict(traces, "hausdorff")
    assert report.drift >= settings.drift_margin
    assert report.drift_low < settings.drift_margin <= report.drift_high
    assert report.verdict != MeasureValue.ZERO


def test_rtt_needs_enough_traces(uniform_traces):
    mu, etas = uniform_traces
    traces = [density_trace(mu, GaugeSpec(delta=1.0), eta, T_GRID) for eta in etas[:5]]
    with pytest.raises(InsufficientDataError):
        rtt_verdict(traces, "hausdorff")
    with pytest.raises(DomainError):
        rtt_verdict(traces, "upper")


# --- Predictor ---

def test_predictor_on_the_stratmann_gauge():
    verdict = predict_measure_values(gauge_from_stratmann(1.5, 2), 1, 2)
    assert verdict.hausdorff == MeasureValue.ZERO
    assert verdict.packing == MeasureValue.INFINITE
    assert verdict.hausdorff_series.summand == "1/(t·log log t)"
    assert len(verdict.limit_set) == 2


def test_predictor_on_bounded_psi():
    verdict = predict_measure_values(GaugeSpec(delta=1.5, c_const=2.0), 1, 2)
    assert (verdict.hausdorff, verdict.packing) == (MeasureValue.ZERO, MeasureValue.INFINITE)
    assert any("bounded Psi" in note for note in verdict.notes)


def test_predictor_on_hausdorff_p2():
    verdict = predict_measure_values(preset("hausdorff_p2", 1.5, 1, 2), 1, 2)
    assert (verdict.hausdorff, verdict.packing) == (MeasureValue.INFINITE, MeasureValue.INFINITE)


def test_predictor_outside_the_rank_window():
    verdict = predict_measure_values(GaugeSpec(delta=2.5), 1, 2)
    assert verdict.hausdorff == MeasureValue.NOT_APPLICABLE
    assert verdict.hausdorff_series is None
    assert verdict.packing == MeasureValue.INFINITE
    assert len(verdict.limit_set) == 1
    assert verdict.consequences[0].startswith("mu is proportional")


def test_predictor_with_a_linear_term():
    up = predict_measure_values(GaugeSpec(delta=1.5, c_lin=0.2), 1, 2)
    assert (up.hausdorff, up.packing) == (MeasureValue.INFINITE, MeasureValue.INFINITE)
    down = predict_measure_values(GaugeSpec(delta=1.5, c_lin=-0.2), 1, 2)
    assert (down.hausdorff, down.packing) == (MeasureValue.ZERO, MeasureValue.ZERO)
    flat = predict_measure_values(GaugeSpec(delta=1.5, c_lin=2.0), 1, 2)
    assert any("does not vanish" in note for note in flat.notes)


def test_predictor_rank_order():
    with pytest.raises(DomainError):
        predict_measure_values(GaugeSpec(delta=1.5), 2, 1)


# --- Khinchin targets ---

def test_zero_target_is_never_hit(hecke_cusp):
    spec, etas = hecke_cusp
    records = simulate_khinchin_hits(spec, 0, KhinchinTarget.constant(0.0), etas, 6.0)
    assert len(records) == len(etas)
    assert sum(r.count for r in records) == 0


def test_hits_accumulate_with_radius(hecke_cusp):
    spec, etas = hecke_cusp
    target = KhinchinTarget.constant(1.0)
    shallow = sum(r.count for r in simulate_khinchin_hits(spec, 0, target, etas, 4.0))
    deep = sum(r.count for r in simulate_khinchin_hits(spec, 0, target, etas, 7.0))
    assert deep >= shallow > 0


def test_hits_use_a_precomputed_orbit(hecke_cusp):
    spec, etas = hecke_cusp
    orbit = parabolic_orbit(spec, 0, 5.0)
    target = KhinchinTarget.constant(1.0)
    direct = simulate_khinchin_hits(spec, 0, target, etas, 5.0)
    reused = simulate_khinchin_hits(spec, 0, target, etas, 5.0, orbit=orbit)
    assert [r.hit_log_radii for r in direct] == [r.hit_log_radii for r in reused]


def test_target_constructors():
    assert KhinchinTarget.constant(2.0)(np.array([0.1, 0.01])) == pytest.approx([2.0, 2.0])
    assert KhinchinTarget.log_power(2.0)(math.exp(-3.0)) == pytest.approx(1.0 / 9.0)
    assert KhinchinTarget.constant(1.0).scaled(3.0)(0.5) == pytest.approx(3.0)
    with pytest.raises(DomainError):
        KhinchinTarget.constant(-1.0)
    with pytest.raises(DomainError):
        KhinchinTarget.constant(1.0).scaled(0.0)


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.7])
def test_khinchin_series_verdicts(lam):
    delta_p = 0.5
    constant = classify_khinchin_series(KhinchinTarget.constant(1.0), delta_p, lam)
    assert constant.verdict == SeriesVerdict.DIVERGES
    assert constant.kind == "khinchin"
    fast = KhinchinTarget.log_power(3.0 / delta_p)
    assert classify_khinchin_series(fast, delta_p, lam).verdict == SeriesVerdict.CONVERGES
    assert classify_khinchin_series(fast.scaled(10.0), delta_p, lam).verdict == SeriesVerdict.CONVERGES


def test_khinchin_series_rejects_bad_lambda():
    with pytest.raises(DomainError):
        classify_khinchin_series(KhinchinTarget.constant(1.0), 0.5, 1.0)


def fabricated(depths):
    return [HitRecord(eta_index=i, eta=[1.0, 0.0], hit_log_radii=[-d] if d is not None else [])
            for i, d in enumerate(depths)]


def test_zero_one_estimate_stable_for_divergent_series():
    report = khinchin_zero_one_estimate(fabricated([10.0] * 100), SeriesVerdict.DIVERGES)
    assert report.trend == "stable"
    assert report.agrees
    assert report.fractions == [1.0, 1.0, 1.0]


def test_zero_one_estimate_decreasing_for_convergent_series():
    records = fabricated([i / 10.0 for i in range(1, 101)])
    report = khinchin_zero_one_estimate(records, SeriesVerdict.CONVERGES)
    assert report.trend == "decreasing"
    assert report.agrees
    assert not khinchin_zero_one_estimate(records, SeriesVerdict.DIVERGES).agrees


def test_zero_one_estimate_counts_misses():
    report = khinchin_zero_one_estimate(fabricated([None] * 60), SeriesVerdict.CONVERGES, thresholds=[1.0, 2.0])
    assert report.fractions == [0.0, 0.0]
    assert report.trend == "mixed"


def test_zero_one_estimate_needs_samples():
    with pytest.raises(InsufficientDataError):
        khinchin_zero_one_estimate(fabricated([1.0] * 10), SeriesVerdict.DIVERGES)


@pytest.mark.slow
def test_simulated_hits_follow_the_series_verdict():
    spec = hecke(3.0)
    delta_p = 2.0 * estimate_delta(enumerate_orbit(spec, 14.0)).delta - 1.0
    orbit = parabolic_orbit(spec, 0, 14.0)
    etas = sample_limit_set(spec, 8, 50, 11)
    thresholds = [2.0, 4.0, 8.0]

    divergent = KhinchinTarget.constant(2.0)
    convergent = KhinchinTarget.log_power(3.0 / delta_p).scaled(1000.0)
    for target, expected in ((divergent, SeriesVerdict.DIVERGES), (convergent, SeriesVerdict.CONVERGES)):
        verdict = classify_khinchin_series(target, delta_p, 0.5).verdict
        assert verdict == expected
        records = simulate_khinchin_hits(spec, 0, target, etas, 14.0, orbit=orbit)
        report = khinchin_zero_one_estimate(records, verdict, thresholds=thresholds)
        assert report.agrees, report


def test_density_sup_alpha_takes_grid_values(hecke_cusp):
    spec, etas = hecke_cusp
    fam = derived_functions(GaugeSpec(delta=0.8), 1)
    values = density_sup_alpha(spec, 0, fam, etas[:50], 6.0)
    allowed = np.array([0.0] + [2.0 ** (0.2 * k) for k in range(-5, 6)])
    assert values.shape == (50,)
    assert all(np.any(np.isclose(v, allowed)) for v in values)


# --- Excursion histories ---

def single_excursion(delta=1.5, rank=2):
    return ExcursionHistory(delta, np.array([10.0]), np.array([3.0]), np.array([rank]), horizon=20.0)


def test_empty_history_trace_is_minus_psi():
    g = gauge_from_stratmann(1.5, 2)
    t = np.linspace(1.0, 100.0, 50)
    trace = history_trace(ExcursionHistory.empty(1.5, 100.0), g, t)
    assert trace.source == "synthetic"
    np.testing.assert_allclose(trace.values(), -big_psi(g, t))


def test_single_excursion_tent():
    history = single_excursion()
    k, b = history.depth_at([8.0, 10.0, 12.0, 13.0, 14.0])
    assert k.tolist() == [2, 2, 2, 0, 0]
    np.testing.assert_allclose(b, [1.0, 3.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(history.log_density(GaugeSpec(delta=1.5), [8.0, 10.0, 12.0, 13.0]),
                               [0.5, 1.5, 0.5, 0.0])


def test_rank_equal_to_delta_leaves_only_psi():
    g = GaugeSpec(delta=2.0, c_log=0.3)
    history = single_excursion(delta=2.0, rank=2)
    t = np.array([8.0, 10.0, 12.0])
    np.testing.assert_allclose(history.log_density(g, t), -big_psi(g, t))


def test_overlapping_excursions_are_rejected():
    with pytest.raises(InvariantViolation):
        ExcursionHistory(1.5, np.array([10.0, 12.0]), np.array([3.0, 3.0]), np.array([2, 1]), horizon=20.0)
    with pytest.raises(InvariantViolation):
        ExcursionHistory(1.5, np.array([10.0, 10.0]), np.array([0.0, 0.0]), np.array([2, 1]), horizon=20.0)


@pytest.mark.parametrize("kwargs", [
    dict(delta=1.0, ranks=(2,)),
    dict(delta=1.5, ranks=()),
    dict(delta=1.5, ranks=(3,)),
    dict(delta=1.5, ranks=(1, 2), weights=(1.0,)),
    dict(delta=1.5, ranks=(2,), intensity=0.0),
    dict(delta=0.0, ranks=(1,)),
])
def test_invalid_excursion_models(kwargs):
    with pytest.raises(DomainError):
        ExcursionModel(**kwargs)


def test_simulation_is_deterministic_per_seed():
    model = ExcursionModel(1.5, (1, 2), seed=3)
    a, b = simulate_excursions(model, 1000.0), simulate_excursions(model, 1000.0)
    assert np.array_equal(a.peak_times, b.peak_times)
    assert np.array_equal(a.depths, b.depths)
    other = simulate_excursions(model.with_stream(1), 1000.0)
    assert not np.array_equal(a.peak_times[:10], other.peak_times[:10])


def test_simulated_depths_follow_the_shadow_tail():
    history = simulate_excursions(ExcursionModel(1.5, (1, 2), seed=0), 1e5)
    assert history.peak_times.max() <= 1e5
    assert np.all(history.starts[1:] >= history.ends[:-1])
    # P(b >= x) = exp(-(2 delta - k) x): means 1/2 for rank 1 and 1 for rank 2
    assert history.depths[history.ranks == 1].mean() == pytest.approx(0.5, abs=0.03)
    assert history.depths[history.ranks == 2].mean() == pytest.approx(1.0, abs=0.05)


def test_synthetic_trace_includes_record_peaks():
    model = ExcursionModel(1.5, (1, 2), seed=4)
    g = GaugeSpec(delta=1.5)
    trace = synthetic_density_trace(model, g, 2000.0, points=256)
    history = simulate_excursions(model, 2000.0)
    assert len(trace) >= 256
    assert np.nanmax(trace.values()) == pytest.approx(history.peak_values(g).max())


# --- Drift verdicts ---

def test_drift_needs_enough_windows():
    history = simulate_excursions(ExcursionModel(1.5, (1, 2)), 32.0)
    trace = excursion_trace(history, GaugeSpec(delta=1.5))
    with pytest.raises(InsufficientDataError):
        drift_report(trace, "hausdorff", 1.5, history.horizon)
    with pytest.raises(DomainError):
        drift_report(trace, "upper", 1.5, 4096.0)


def test_excursion_trace_has_one_sample_per_peak():
    history = simulate_excursions(ExcursionModel(1.5, (1, 2), seed=2), 1000.0)
    g = gauge_from_stratmann(1.5, 2)
    trace = excursion_trace(history, g)
    assert len(trace) == len(history)
    np.testing.assert_allclose(trace.values(), history.peak_values(g))
    assert trace.ranks().tolist() == history.ranks.tolist()


@pytest.mark.parametrize("mode", ["hausdorff", "packing"])
@pytest.mark.parametrize("name", ["power", "stratmann", "hausdorff_p2"])
def test_trace_crossings_match_the_condensed_series(name, mode):
    g = preset(name, 1.5, 1, 2)
    history = simulate_excursions(ExcursionModel(1.5, (1, 2), seed=5), 2.0 ** 14)
    report = drift_report(excursion_trace(history, g), mode, 1.5, history.horizon)
    times, scores = history.scores(g, mode)
    expected, _ = np.histogram(times[scores >= -settings.exceedance_level], bins=2.0 ** np.arange(8, 15))
    assert report.window_counts == expected.tolist()


def test_running_extreme_is_the_deepest_window_max_of_the_trace():
    model = ExcursionModel(1.5, (1, 2), seed=2)
    g = GaugeSpec(delta=1.5)
    history = simulate_excursions(model, 4096.0)
    report = drift_report(excursion_trace(history, g), "hausdorff", 1.5, 4096.0)
    grid = np.union1d(np.linspace(1.0, 4096.0, 4096), history.peak_times)
    dense = synthetic_density_trace(model, g, 4096.0, t_grid=grid)
    t, v = dense.t_values(), dense.values()
    assert report.running_extreme == pytest.approx(v[t >= 2048.0].max())
    assert dense.ranks().max() == 2


def test_power_gauge_drifts_both_ways():
    history = simulate_excursions(ExcursionModel(1.5, (1, 2), seed=1), 2.0 ** 17)
    g = GaugeSpec(delta=1.5)
    hausdorff, report = synthetic_verdict(history, g, "hausdorff", (1, 2))
    assert hausdorff == MeasureValue.ZERO
    assert report.decay_slope > 0
    assert len(report.window_counts) == 6
    assert report.running_extreme > 0
    packing, _ = synthetic_verdict(history, g, "packing", (1, 2))
    assert packing == MeasureValue.INFINITE


def test_synthetic_verdict_outside_the_rank_window():
    history = simulate_excursions(ExcursionModel(2.5, (1, 2), dimension=3), 4096.0)
    verdict, report = synthetic_verdict(history, GaugeSpec(delta=2.5), "hausdorff", (1, 2))
    assert verdict == MeasureValue.NOT_APPLICABLE
    assert report is None


@pytest.mark.parametrize("name", ["power", "stratmann", "hausdorff_p2"])
def test_cell_agrees_with_the_predictor(name):
    cell = run_dichotomy_cell(preset(name, 1.5, 1, 2), 1, 2, seeds=10, horizon=2.0 ** 17)
    assert cell.agreement >= 0.9


def test_threaded_cell_matches_serial():
    g = gauge_from_stratmann(1.5, 2)
    serial = run_dichotomy_cell(g, 1, 2, seeds=4, horizon=4096.0)
    threaded = run_dichotomy_cell(g, 1, 2, seeds=4, horizon=4096.0, threads=2)
    assert (serial.hausdorff_agree, serial.packing_agree) == (threaded.hausdorff_agree, threaded.packing_agree)


@pytest.mark.slow
def test_dichotomy_grid_agreement():
    cells = dichotomy_grid(seeds=20, horizon=2.0 ** 17)
    assert len(cells) == 9
    for cell in cells:
        assert cell.agreement >= 0.9, cell
