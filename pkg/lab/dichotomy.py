"""
Density traces, Rogers-Taylor-Tricot sandwich verdicts, the zero-infinity
predictor, the Khinchin shrinking-target simulator and the synthetic cusp
excursion backend.

Along the ray to eta the log-density of mu against psi is
    log mu(B(eta, e^{-t})) - log psi(e^{-t}) ~ b(eta_t) (k(eta_t) - delta) - Psi(t),
so excursions into cusps of rank k > delta push the upper density up and
excursions into cusps of rank k < delta push the lower density down. The
synthetic backend draws those excursions directly: disjoint tent profiles whose
peak depths have the tail P(b >= x) = e^{-(2 delta - k) x} of the shadow
estimates, which is exactly the Borel-Cantelli structure of the Khinchin-type
series.
"""
import logging
import math
from dataclasses import dataclass, replace
from multiprocessing.pool import ThreadPool
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import spatial, stats
from tqdm import tqdm

from core.config import settings
from core.errors import DomainError, InsufficientDataError, InvariantViolation
from core.geometry import as_boundary_point
from core.groups import GroupSpec, parabolic_orbit
from core.measure import AtomicMeasure, log_ball_masses
from core.models import (
    DensityTrace,
    DichotomyCell,
    DriftReport,
    GaugeSpec,
    HitRecord,
    KhinchinReport,
    MeasureValue,
    RttReport,
    SeriesResult,
    SeriesVerdict,
    Verdict,
)
from lab.gauge import (
    DerivedGaugeFamily,
    big_psi,
    classify_hausdorff_series,
    classify_numeric,
    classify_packing_series,
    log_psi_t,
    preset,
    reduce_to_zero_slope,
)

logger = logging.getLogger(__name__)

ALPHA_GRID = tuple(2.0 ** k for k in range(-5, 6))
DEFAULT_TRIPLES = ((1.5, 1, 2), (1.25, 1, 2), (1.75, 1, 2))
DEFAULT_GAUGES = ("power", "stratmann", "hausdorff_p2")


# --- Density traces ---

def density_trace(mu: AtomicMeasure, g: GaugeSpec, eta, t_grid: Sequence[float],
                  resolution: Optional[float] = None) -> DensityTrace:
    """log(mu(B(eta, e^{-t})) / psi(e^{-t})) on the grid; empty and unresolved balls are flagged."""
    eta = as_boundary_point(eta)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise DomainError("density traces need t > 0 so that e^{-t} lies in (0, 1)")
    log_mass, flags = log_ball_masses(mu, eta, t_grid, resolution)
    values = log_mass - log_psi_t(g, t_grid)
    return DensityTrace.from_arrays(
        "empirical", t_grid, values, flags, label=f"{mu.label}/{g.label}", eta=eta.direction.tolist()
    )


def _window_proxies(trace: DensityTrace, mode: str) -> Optional[Tuple[float, float]]:
    """(deep, early) proxy: max or min over [t/2, t] and [t/4, t/2) for the deepest resolved t."""
    resolved = trace.resolved()
    t, v = resolved.t_values(), resolved.values()
    if len(t) < 4:
        return None
    top = t[-1]
    deep = v[t >= top / 2.0]
    early = v[(t >= top / 4.0) & (t < top / 2.0)]
    if len(deep) < 2 or len(early) < 2:
        return None
    pick = np.max if mode == "hausdorff" else np.min
    return float(pick(deep)), float(pick(early))


def rtt_verdict(traces: Sequence[DensityTrace], mode: str, min_traces: int = 20) -> RttReport:
    """
    Sandwich estimate of H^psi(mu) (mode "hausdorff", upper density) or
    P^psi(mu) (mode "packing", lower density).

    Each trace contributes its running max (min) over the deepest resolvable
    dyadic window; the change from the previous window is its drift. The
    measure is 0 when every trace drifts up by the margin and infinite when
    every trace drifts down by it, the essential infimum and supremum being
    read as min and max over traces. Otherwise a proxy spread within twice the
    margin is reported as compatible with a positive finite value.
    """
    if mode not in ("hausdorff", "packing"):
        raise DomainError(f"mode must be 'hausdorff' or 'packing', got {mode!r}")
    pairs = [p for p in (_window_proxies(tr, mode) for tr in traces) if p is not None]
    if len(pairs) < min_traces:
        raise InsufficientDataError(
            f"{len(pairs)} resolvable traces, at least {min_traces} needed for a {mode} verdict"
        )
    deep = np.array([p[0] for p in pairs])
    early = np.array([p[1] for p in pairs])
    drifts = deep - early
    drift = float(np.median(drifts))
    low, high = float(deep.min()), float(deep.max())
    margin = settings.drift_margin

    if drifts.min() >= margin:
        verdict = MeasureValue.ZERO
    elif drifts.max() <= -margin:
        verdict = MeasureValue.INFINITE
    elif high - low <= 2.0 * margin:
        verdict = MeasureValue.POSITIVE_FINITE
    else:
        verdict = MeasureValue.UNDECIDED

    with np.errstate(over="ignore"):
        bounds = (float(np.exp(-high)), float(np.exp(-low)))
    logger.info("RTT %s verdict from %d traces: %s (drift %.3g, band [%.3g, %.3g])",
                mode, len(pairs), verdict.value, drift, low, high)
    return RttReport(
        mode=mode,
        verdict=verdict,
        resolved_traces=len(pairs),
        proxies=deep.tolist(),
        early_proxies=early.tolist(),
        essential_low=low,
        essential_high=high,
        drift=drift,
        drift_low=float(drifts.min()),
        drift_high=float(drifts.max()),
        bounds=bounds,
    )


# --- Zero-infinity predictor ---

def intro_consequences(delta: float, kmin: int, kmax: int) -> List[str]:
    hausdorff = "is" if delta >= kmax else "is not"
    packing = "is" if delta <= kmin else "is not"
    return [
        f"mu {hausdorff} proportional to the delta-dimensional Hausdorff measure on the limit set "
        f"(delta={delta:g}, kmax={kmax})",
        f"mu {packing} proportional to the delta-dimensional packing measure on the limit set "
        f"(delta={delta:g}, kmin={kmin})",
    ]


def limit_set_verdict(verdict: Verdict) -> List[str]:
    """What the dichotomy says about the whole limit set; never a decided value."""
    out = []
    if verdict.delta < verdict.kmax:
        out.append("H^psi(limit set) is either 0 or infinite, never positive and finite")
    if verdict.delta > verdict.kmin:
        out.append("P^psi(limit set) is either 0 or infinite, never positive and finite")
    return out


def predict_measure_values(g: GaugeSpec, kmin: int, kmax: int) -> Verdict:
    """Values of H^psi(mu) and P^psi(mu) from the Hausdorff and packing series."""
    if not 1 <= kmin <= kmax:
        raise DomainError(f"need 1 <= kmin <= kmax, got kmin={kmin}, kmax={kmax}")
    delta = g.delta
    notes: List[str] = []
    hausdorff_series: Optional[SeriesResult] = None
    packing_series: Optional[SeriesResult] = None

    if g.c_lin != 0.0:
        # psi ~ r^(delta - c_lin): larger than r^delta near 0 when c_lin > 0
        value = MeasureValue.INFINITE if g.c_lin > 0 else MeasureValue.ZERO
        hausdorff = packing = value
        try:
            reduced, _ = reduce_to_zero_slope(g)
            notes.append(f"linear term c_lin={g.c_lin:g}: psi is r^{reduced.delta:g} times a slowly varying factor")
        except DomainError:
            notes.append(f"linear term c_lin={g.c_lin:g}: psi does not vanish at 0")
    else:
        if not any(g.log_coefficients):
            notes.append("bounded Psi: verdicts of the pure power gauge r^delta")
        if delta >= kmax:
            hausdorff = MeasureValue.NOT_APPLICABLE
        else:
            hausdorff_series = classify_hausdorff_series(g, kmax)
            hausdorff = hausdorff_series.consequence
        if delta <= kmin:
            packing = MeasureValue.NOT_APPLICABLE
        else:
            packing_series = classify_packing_series(g, kmin)
            packing = packing_series.consequence

    if delta >= kmax and hausdorff != MeasureValue.NOT_APPLICABLE:
        hausdorff = MeasureValue.NOT_APPLICABLE
    if delta <= kmin and packing != MeasureValue.NOT_APPLICABLE:
        packing = MeasureValue.NOT_APPLICABLE

    verdict = Verdict(
        gauge=g.label,
        delta=delta,
        kmin=kmin,
        kmax=kmax,
        hausdorff=hausdorff,
        packing=packing,
        hausdorff_series=hausdorff_series,
        packing_series=packing_series,
        consequences=intro_consequences(delta, kmin, kmax),
        notes=notes,
    )
    return verdict.model_copy(update={"limit_set": limit_set_verdict(verdict)})


# --- Khinchin shrinking targets ---

@dataclass(frozen=True)
class KhinchinTarget:
    """A Khinchin function phi given through s -> log phi(e^{-s})."""
    name: str
    log_phi_t: Callable[[np.ndarray], np.ndarray]

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.exp(self.log_phi_t(-np.log(r)))

    def scaled(self, factor: float) -> "KhinchinTarget":
        if not factor > 0:
            raise DomainError(f"scaling factor must be positive, got {factor!r}")
        shift = math.log(factor)
        return KhinchinTarget(f"{factor:g}*{self.name}", lambda s: self.log_phi_t(s) + shift)

    @classmethod
    def constant(cls, c: float) -> "KhinchinTarget":
        if c < 0:
            raise DomainError(f"target constant must be nonnegative, got {c!r}")
        level = math.log(c) if c > 0 else -math.inf
        return cls(f"const_{c:g}", lambda s: np.full(np.shape(s), level))

    @classmethod
    def log_power(cls, a: float, scale: float = 1.0) -> "KhinchinTarget":
        """phi(r) = scale * log(1/r)^(-a)."""
        shift = math.log(scale)
        return cls(f"{scale:g}*log^-{a:g}", lambda s: shift - a * np.log(np.asarray(s, dtype=float)))

    @classmethod
    def from_family(cls, fam: DerivedGaugeFamily, alpha: float) -> "KhinchinTarget":
        """phi_{p,alpha}, set to 0 above its monotone range."""
        floor = float(fam.u(fam.t0)) - math.log(alpha)

        def log_phi(s):
            s = np.asarray(s, dtype=float)
            out = np.full(np.shape(s), -np.inf)
            ok = s >= floor
            if np.any(ok):
                out[ok] = fam.log_phi_t(alpha, s[ok])
            return out
        return cls(f"phi[{fam.gauge.label},k={fam.rank},alpha={alpha:g}]", log_phi)


def _orbit_arrays(orbit) -> Tuple[np.ndarray, np.ndarray]:
    dirs = np.stack([xi.direction for xi, _ in orbit])
    radii = np.array([r for _, r in orbit])
    return dirs, radii


def simulate_khinchin_hits(spec: GroupSpec, p_index: int, phi: Callable, eta_samples: Sequence, T: float,
                           *, orbit: Optional[list] = None) -> List[HitRecord]:
    """For each eta the cusp images xi with ||xi - eta|| <= phi(r_xi) r_xi, as log r_xi."""
    orbit = parabolic_orbit(spec, p_index, T) if orbit is None else orbit
    etas = [as_boundary_point(e) for e in eta_samples]
    if not orbit:
        return [HitRecord(eta_index=i, eta=e.direction.tolist()) for i, e in enumerate(etas)]
    xi_dirs, radii = _orbit_arrays(orbit)
    targets = np.asarray(phi(radii), dtype=float) * radii
    targets = np.where(np.isfinite(targets), targets, 0.0)
    records = []
    if not np.any(targets > 0):
        return [HitRecord(eta_index=i, eta=e.direction.tolist()) for i, e in enumerate(etas)]
    tree = spatial.cKDTree(xi_dirs)
    reach = float(targets.max())
    for i, eta in enumerate(etas):
        candidates = np.asarray(tree.query_ball_point(eta.direction, r=reach), dtype=int)
        if len(candidates):
            gaps = np.linalg.norm(xi_dirs[candidates] - eta.direction, axis=1)
            hit = candidates[(gaps <= targets[candidates]) & (targets[candidates] > 0)]
        else:
            hit = candidates
        records.append(HitRecord(eta_index=i, eta=eta.direction.tolist(),
                                 hit_log_radii=sorted(np.log(radii[hit]).tolist())))
    logger.info("Khinchin scan %s cusp %d, T=%.3g: %d targets, %d etas, %d hits",
                spec.label, p_index, T, len(radii), len(etas), sum(r.count for r in records))
    return records


def classify_khinchin_series(target: KhinchinTarget, delta_p: float, lam: float,
                             n_terms: int = 100_000) -> SeriesResult:
    """Numeric verdict on sum_n phi(lam^n)^{Delta_p}."""
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (0, 1), got {lam!r}")
    step = -math.log(lam)

    def summand(n):
        with np.errstate(invalid="ignore"):
            return np.exp(delta_p * target.log_phi_t(n * step))

    result = classify_numeric(summand, n_terms, kind="khinchin")
    return result.model_copy(update={"multiplier": delta_p})


def khinchin_zero_one_estimate(records: Sequence[HitRecord], series_verdict: SeriesVerdict,
                               thresholds: Optional[Sequence[float]] = None,
                               min_samples: int = 50) -> KhinchinReport:
    """
    Fraction of eta hit by a target deeper than each depth threshold (depth = log 1/r_xi).

    A convergent series should show the fraction decaying as the threshold
    deepens; a divergent one keeps it near 1.
    """
    if len(records) < min_samples:
        raise InsufficientDataError(f"{len(records)} sampled points, at least {min_samples} needed")
    depths = [-np.asarray(r.hit_log_radii) for r in records]
    if thresholds is None:
        deepest = max((float(d.max()) for d in depths if len(d)), default=4.0)
        thresholds = [deepest * q for q in (0.25, 0.5, 0.75)]
    thresholds = sorted(float(x) for x in thresholds)
    fractions = [float(np.mean([bool(len(d)) and bool(np.any(d >= thr)) for d in depths])) for thr in thresholds]

    if min(fractions) >= settings.khinchin_stable_fraction:
        trend = "stable"
    elif all(b < a for a, b in zip(fractions, fractions[1:])):
        trend = "decreasing"
    else:
        trend = "mixed"
    agrees = ((series_verdict == SeriesVerdict.CONVERGES and trend == "decreasing")
              or (series_verdict == SeriesVerdict.DIVERGES and trend == "stable"))
    if not agrees:
        logger.warning("Khinchin trend %s disagrees with the %s series", trend, series_verdict.value)
    return KhinchinReport(
        thresholds=thresholds,
        fractions=fractions,
        trend=trend,
        series_verdict=series_verdict,
        agrees=agrees,
        samples=len(records),
    )


def density_sup_alpha(spec: GroupSpec, p_index: int, fam: DerivedGaugeFamily, eta_samples: Sequence, T: float,
                      alphas: Sequence[float] = ALPHA_GRID, tail_depth: Optional[float] = None,
                      *, orbit: Optional[list] = None) -> np.ndarray:
    """
    (sup{alpha : eta in Omega_p(phi_{p,alpha})})^{k_p - delta} per eta.

    "Infinitely many hits" is read as a hit deeper than tail_depth, by default
    half the deepest emitted horoball.
    """
    orbit = parabolic_orbit(spec, p_index, T) if orbit is None else orbit
    if tail_depth is None:
        tail_depth = 0.5 * max((-math.log(r) for _, r in orbit), default=0.0)
    best = np.zeros(len(eta_samples))
    for alpha in sorted(alphas):
        records = simulate_khinchin_hits(spec, p_index, KhinchinTarget.from_family(fam, alpha), eta_samples, T,
                                         orbit=orbit)
        member = np.array([any(-lr >= tail_depth for lr in r.hit_log_radii) for r in records])
        best = np.where(member, alpha, best)
    exponent = fam.rank - fam.gauge.delta
    with np.errstate(divide="ignore"):
        return np.where(best > 0, best ** exponent, 0.0 if exponent > 0 else np.inf)


# --- Synthetic excursions ---

@dataclass(frozen=True)
class ExcursionModel:
    """
    Marked point process of cusp excursions along a typical geodesic.

    Excursions follow each other after exponential waiting times of rate
    `intensity`; each picks a cusp with the given weights and a peak depth b
    with P(b >= x) = e^{-(2 delta - k) x}. An excursion of depth b is active on
    [t - b, t + b] around its peak time t, so they never overlap.
    """
    delta: float
    ranks: Tuple[int, ...]
    weights: Optional[Tuple[float, ...]] = None
    intensity: float = 0.5
    dimension: int = 3
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta!r}")
        if not self.ranks:
            raise DomainError("excursion model needs at least one cusp")
        for k in self.ranks:
            if not 1 <= k <= self.dimension - 1:
                raise DomainError(f"cusp rank {k} outside [1, {self.dimension - 1}]")
            if 2.0 * self.delta - k <= settings.threshold_tolerance:
                raise DomainError(f"2 delta - k = {2.0 * self.delta - k:g} for rank {k}: boundary case excluded")
        if self.weights is not None and (len(self.weights) != len(self.ranks) or min(self.weights) <= 0):
            raise DomainError("cusp weights must be positive, one per rank")
        if not self.intensity > 0:
            raise DomainError(f"intensity must be positive, got {self.intensity!r}")

    @property
    def delta_p(self) -> np.ndarray:
        return 2.0 * self.delta - np.asarray(self.ranks, dtype=float)

    @property
    def probabilities(self) -> np.ndarray:
        w = np.ones(len(self.ranks)) if self.weights is None else np.asarray(self.weights, dtype=float)
        return w / w.sum()

    def with_stream(self, stream: int) -> "ExcursionModel":
        return replace(self, stream=stream)


@dataclass(frozen=True, eq=False)
class ExcursionHistory:
    delta: float
    peak_times: np.ndarray
    depths: np.ndarray
    ranks: np.ndarray
    horizon: float
    seed: Optional[int] = None

    def __post_init__(self):
        if np.any(self.depths < 0):
            raise InvariantViolation("excursion depths must be nonnegative")
        if np.any(np.diff(self.peak_times) <= 0):
            raise InvariantViolation("excursion peaks must be strictly increasing")
        if np.any(self.starts[1:] < self.ends[:-1]):
            i = int(np.argmax(self.starts[1:] < self.ends[:-1]))
            raise InvariantViolation(
                f"excursions at t={self.peak_times[i]:.6g} and t={self.peak_times[i + 1]:.6g} overlap"
            )

    @classmethod
    def empty(cls, delta: float, horizon: float) -> "ExcursionHistory":
        return cls(delta, np.zeros(0), np.zeros(0), np.zeros(0, dtype=int), horizon)

    @property
    def starts(self) -> np.ndarray:
        return self.peak_times - self.depths

    @property
    def ends(self) -> np.ndarray:
        return self.peak_times + self.depths

    def __len__(self) -> int:
        return len(self.peak_times)

    def depth_at(self, t) -> Tuple[np.ndarray, np.ndarray]:
        """(k, b) along the ray: tent profile b - |t - t_peak| inside an excursion, (0, 0) outside."""
        t = np.asarray(t, dtype=float)
        k = np.zeros(t.shape, dtype=int)
        b = np.zeros(t.shape)
        if len(self) == 0:
            return k, b
        i = np.searchsorted(self.starts, t, side="right") - 1
        inside = (i >= 0) & (t < self.ends[np.clip(i, 0, None)])
        j = i[inside]
        k[inside] = self.ranks[j]
        b[inside] = self.depths[j] - np.abs(t[inside] - self.peak_times[j])
        return k, b

    def log_density(self, g: GaugeSpec, t) -> np.ndarray:
        k, b = self.depth_at(t)
        return b * (k - self.delta) - big_psi(g, np.asarray(t, dtype=float))

    def peak_values(self, g: GaugeSpec) -> np.ndarray:
        return self.depths * (self.ranks - self.delta) - big_psi(g, self.peak_times)

    def scores(self, g: GaugeSpec, mode: str) -> Tuple[np.ndarray, np.ndarray]:
        """
        Peak times and series-summand scores Delta_p b - Delta_p Psi(t) / (k_p - delta)
        for the excursions that move the upper (hausdorff) or lower (packing) density.
        """
        relevant = self.ranks > self.delta if mode == "hausdorff" else self.ranks < self.delta
        k = self.ranks[relevant].astype(float)
        t = self.peak_times[relevant]
        dp = 2.0 * self.delta - k
        return t, dp * self.depths[relevant] - dp * big_psi(g, t) / (k - self.delta)


def simulate_excursions(model: ExcursionModel, horizon: float) -> ExcursionHistory:
    """Excursions with peaks in (0, horizon]."""
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon!r}")
    rng = np.random.default_rng([model.seed, model.stream])
    ranks = np.asarray(model.ranks, dtype=int)
    rates = model.delta_p
    cycle = 1.0 / model.intensity + 2.0 * float(np.sum(model.probabilities / rates))
    batch = int(1.1 * horizon / cycle) + 64

    peaks, depths, cusps = [], [], []
    clock = 0.0
    while clock < horizon:
        gaps = rng.exponential(1.0 / model.intensity, batch)
        which = rng.choice(len(ranks), size=batch, p=model.probabilities)
        b = rng.exponential(1.0 / rates[which])
        lengths = gaps + 2.0 * b
        begins = clock + np.cumsum(lengths) - lengths
        peaks.append(begins + gaps + b)
        depths.append(b)
        cusps.append(which)
        clock = float(begins[-1] + lengths[-1])

    peak_times = np.concatenate(peaks)
    keep = peak_times <= horizon
    history = ExcursionHistory(
        delta=model.delta,
        peak_times=peak_times[keep],
        depths=np.concatenate(depths)[keep],
        ranks=ranks[np.concatenate(cusps)[keep]],
        horizon=float(horizon),
        seed=model.seed,
    )
    logger.debug("Simulated %d excursions up to t=%.3g (seed %d, stream %d)",
                 len(history), horizon, model.seed, model.stream)
    return history


def history_trace(history: ExcursionHistory, g: GaugeSpec, t_grid: Sequence[float], label: str = "") -> DensityTrace:
    t_grid = np.asarray(t_grid, dtype=float)
    k, _ = history.depth_at(t_grid)
    return DensityTrace.from_arrays("synthetic", t_grid, history.log_density(g, t_grid), ranks=k,
                                    label=label or g.label, seed=history.seed)


def excursion_trace(history: ExcursionHistory, g: GaugeSpec, label: str = "") -> DensityTrace:
    """The log-density sampled at every excursion peak, one sample per excursion."""
    return history_trace(history, g, history.peak_times, label)


def _record_peaks(history: ExcursionHistory, g: GaugeSpec) -> np.ndarray:
    """Peak times setting a new running max or running min of the trace."""
    if len(history) == 0:
        return np.zeros(0)
    values = history.peak_values(g)
    highs = values >= np.maximum.accumulate(values)
    lows = values <= np.minimum.accumulate(values)
    return history.peak_times[highs | lows]


def synthetic_density_trace(model: ExcursionModel, g: GaugeSpec, duration: float,
                            t_grid: Optional[Sequence[float]] = None, points: int = 4096) -> DensityTrace:
    """
    Log-density b(eta_t)(k(eta_t) - delta) - Psi(t) along a simulated excursion history.

    Without an explicit grid the trace is sampled on `points` equally spaced
    times plus the peaks of record excursions, so the running extremes are exact.
    """
    history = simulate_excursions(model, duration)
    if t_grid is None:
        grid = np.linspace(duration / points, duration, points)
        t_grid = np.unique(np.concatenate([grid, _record_peaks(history, g)]))
    return history_trace(history, g, t_grid, label=f"{g.label}/seed{model.seed}.{model.stream}")


def drift_report(trace: DensityTrace, mode: str, delta: float, horizon: float,
                 level: Optional[float] = None, windows: Optional[int] = None) -> DriftReport:
    """
    Level crossings of a synthetic density trace per dyadic time window
    [2^j, 2^{j+1}), over the deepest complete windows below the horizon.

    The trace is read at excursion peaks (see excursion_trace). A peak of
    rank k and log-density v crosses when (2 delta - k) v / (k - delta) >= -level;
    only ranks above delta move the upper density (hausdorff) and only ranks
    below it the lower density (packing). The counts are the condensed terms
    of the governing series, so the density drifts without bound unless they
    decay geometrically.
    """
    if mode not in ("hausdorff", "packing"):
        raise DomainError(f"mode must be 'hausdorff' or 'packing', got {mode!r}")
    level = settings.exceedance_level if level is None else level
    windows = settings.condensation_windows if windows is None else windows
    top = int(math.floor(math.log2(horizon))) - 1
    first = top - windows + 1
    if first < 0:
        raise InsufficientDataError(f"horizon {horizon:g} holds fewer than {windows} dyadic windows")

    t, v, k = trace.t_values(), trace.values(), trace.ranks()
    relevant = (k > delta) if mode == "hausdorff" else ((k > 0) & (k < delta))
    relevant &= np.isfinite(v)
    t, v, k = t[relevant], v[relevant], k[relevant].astype(float)
    scores = (2.0 * delta - k) * v / (k - delta)

    edges = 2.0 ** np.arange(first, top + 2)
    counts, _ = np.histogram(t[scores >= -level], bins=edges)
    slope = float(stats.linregress(np.arange(first, top + 1), np.log(counts + 0.5)).slope)
    unbounded = slope > settings.condensation_slope and float(np.mean(counts)) >= 1.0

    deep = v[t >= edges[-2]]
    extreme = None
    if len(deep):
        extreme = float(deep.max() if mode == "hausdorff" else deep.min())
    return DriftReport(window_counts=counts.tolist(), decay_slope=slope, unbounded=unbounded,
                       running_extreme=extreme)


def synthetic_verdict(history: ExcursionHistory, g: GaugeSpec, mode: str, ranks: Sequence[int],
                      trace: Optional[DensityTrace] = None) -> Tuple[MeasureValue, Optional[DriftReport]]:
    """Measure value implied by the drift of the upper (hausdorff) or lower (packing) density."""
    if mode == "hausdorff" and history.delta >= max(ranks):
        return MeasureValue.NOT_APPLICABLE, None
    if mode == "packing" and history.delta <= min(ranks):
        return MeasureValue.NOT_APPLICABLE, None
    trace = excursion_trace(history, g) if trace is None else trace
    report = drift_report(trace, mode, history.delta, history.horizon)
    logger.debug("%s drift of %s: counts %s, slope %.3g, deepest extreme %s",
                 mode, trace.label, report.window_counts, report.decay_slope, report.running_extreme)
    if mode == "hausdorff":
        return (MeasureValue.ZERO if report.unbounded else MeasureValue.INFINITE), report
    return (MeasureValue.INFINITE if report.unbounded else MeasureValue.ZERO), report


# --- Agreement runs ---

def _seed_verdicts(args) -> Tuple[MeasureValue, MeasureValue]:
    model, g, horizon = args
    history = simulate_excursions(model, horizon)
    trace = excursion_trace(history, g, label=f"{g.label}/seed{model.seed}.{model.stream}")
    hausdorff, _ = synthetic_verdict(history, g, "hausdorff", model.ranks, trace)
    packing, _ = synthetic_verdict(history, g, "packing", model.ranks, trace)
    return hausdorff, packing


def run_dichotomy_cell(g: GaugeSpec, kmin: int, kmax: int, seeds: int = 100, horizon: float = 1e6,
                       base_seed: int = 0, intensity: float = 0.5, threads: int = 1,
                       progress: bool = False) -> DichotomyCell:
    """Synthetic drift verdicts over many seeds against predict_measure_values."""
    predicted = predict_measure_values(g, kmin, kmax)
    ranks = tuple(sorted({kmin, kmax}))
    model = ExcursionModel(g.delta, ranks, intensity=intensity, dimension=max(3, kmax + 1), seed=base_seed)
    jobs = [(model.with_stream(i), g, horizon) for i in range(seeds)]
    desc = f"{g.label} delta={g.delta:g}"
    if threads > 1:
        with ThreadPool(threads) as pool:
            results = list(tqdm(pool.imap(_seed_verdicts, jobs), total=seeds, desc=desc, disable=not progress))
    else:
        results = [_seed_verdicts(job) for job in tqdm(jobs, desc=desc, disable=not progress)]

    hausdorff_agree = sum(h == predicted.hausdorff for h, _ in results)
    packing_agree = sum(p == predicted.packing for _, p in results)
    cell = DichotomyCell(gauge=g.label, delta=g.delta, kmin=kmin, kmax=kmax, predicted=predicted, seeds=seeds,
                         hausdorff_agree=hausdorff_agree, packing_agree=packing_agree)
    logger.info("Cell %s (delta=%g, ranks %d..%d): hausdorff %d/%d, packing %d/%d",
                g.label, g.delta, kmin, kmax, hausdorff_agree, seeds, packing_agree, seeds)
    return cell


def dichotomy_grid(gauges: Iterable[str] = DEFAULT_GAUGES,
                   triples: Iterable[Tuple[float, int, int]] = DEFAULT_TRIPLES,
                   **kwargs) -> List[DichotomyCell]:
    """run_dichotomy_cell for every shipped gauge preset and (delta, kmin, kmax) triple."""
    cells = []
    for delta, kmin, kmax in triples:
        for name in gauges:
            cells.append(run_dichotomy_cell(preset(name, delta, kmin, kmax), kmin, kmax, **kwargs))
    return cells
