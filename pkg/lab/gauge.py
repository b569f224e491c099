"""
Gauge functions psi(r) = r^delta exp(Psi(log 1/r)) with Psi over the basis

    t, L1 = log(e + t), L2 = log log(e^e + t), L3 = log log log(e^e^e + t), L4 = log L3, 1

evaluated at t = log(1/r). Each shift makes L_k(0) = 1 (L4(0) = 0), so every
term is smooth and increasing on t >= 0, and L_k agrees with the k-th iterated
logarithm of t up to o(1).

Series of the form sum_t exp(m Psi(t)) are classified symbolically: the
summand is comparable to t^{-a1} (log t)^{-a2} (log log t)^{-a3} (log log log t)^{-a4}
with a_k = -m c_k, which is decided by the Bertrand hierarchy.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize

from core.config import settings
from core.errors import DegenerateRankError, DomainError, NumericError
from core.models import (
    AssumptionReport,
    DoublingReport,
    GaugeSpec,
    IntegralCheck,
    MeasureValue,
    ScalingReport,
    SeriesComparison,
    SeriesResult,
    SeriesVerdict,
)

logger = logging.getLogger(__name__)

E1 = math.e
E2 = math.exp(E1)
E3 = math.exp(E2)
_TINY = float(np.nextafter(0.0, 1.0))

LEVEL_NAMES = ("t", "log t", "log log t", "log log log t")
GAUGE_FIELDS = ("delta", "c_lin", "c_log", "c_loglog", "c_logloglog", "c_log4", "c_const")
TERM_NAMES = ("t", "log(e+t)", "log log(e^e+t)", "log log log(e^e^e+t)", "log^4")


# --- Evaluation ---

def basis(t) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=float)
    l1 = np.log(E1 + t)
    l2 = np.log(np.log(E2 + t))
    l3 = np.log(np.log(np.log(E3 + t)))
    return l1, l2, l3, np.log(l3)


def basis_derivatives(t) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=float)
    d1 = 1.0 / (E1 + t)
    log2 = np.log(E2 + t)
    d2 = 1.0 / ((E2 + t) * log2)
    log3 = np.log(E3 + t)
    loglog3 = np.log(log3)
    d3 = 1.0 / ((E3 + t) * log3 * loglog3)
    return d1, d2, d3, d3 / np.log(loglog3)


def big_psi(g: GaugeSpec, t):
    """Psi(t)."""
    t = np.asarray(t, dtype=float)
    l1, l2, l3, l4 = basis(t)
    out = g.c_lin * t + g.c_log * l1 + g.c_loglog * l2 + g.c_logloglog * l3 + g.c_log4 * l4 + g.c_const
    return float(out) if out.ndim == 0 else out


def big_psi_prime(g: GaugeSpec, t):
    t = np.asarray(t, dtype=float)
    d1, d2, d3, d4 = basis_derivatives(t)
    out = g.c_lin + g.c_log * d1 + g.c_loglog * d2 + g.c_logloglog * d3 + g.c_log4 * d4
    return float(out) if out.ndim == 0 else out


def log_psi_t(g: GaugeSpec, t):
    """log psi(e^{-t})."""
    return -g.delta * np.asarray(t, dtype=float) + big_psi(g, t)


def _check_radius(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)) or np.any(~(r < 1)):
        raise DomainError("gauge argument must lie in (0, 1)")
    return r


def log_psi_of_r(g: GaugeSpec, r):
    r = _check_radius(r)
    out = log_psi_t(g, -np.log(r))
    return float(out) if np.ndim(out) == 0 else out


def psi_of_r(g: GaugeSpec, r):
    """r^delta exp(Psi(log 1/r))."""
    out = np.exp(log_psi_of_r(g, r))
    return float(out) if np.ndim(out) == 0 else out


def is_increasing_near_zero(g: GaugeSpec, r_max: float = 1e-2, decades: int = 30, points: int = 600) -> bool:
    """psi increasing on (r_max * 10^-decades, r_max), checked through d/dt log psi < 0."""
    t = np.linspace(-math.log(r_max), -math.log(r_max) + decades * math.log(10.0), points)
    return bool(np.all(big_psi_prime(g, t) - g.delta < 0))


# --- Presets ---

def gauge_from_stratmann(delta: float, kmax: int) -> GaugeSpec:
    """Psi(t) = c (log t + log log log t) with c = (kmax - delta) / (2 delta - kmax)."""
    if abs(2.0 * delta - kmax) <= settings.threshold_tolerance:
        raise DomainError(f"2 delta = kmax = {kmax}: the conjectured gauge is undefined")
    c = (kmax - delta) / (2.0 * delta - kmax)
    return GaugeSpec(delta=delta, c_log=c, c_logloglog=c, label="stratmann")


def gauge_presets(delta: float = 1.5, kmin: int = 1, kmax: int = 2) -> Dict[str, GaugeSpec]:
    presets = {"power": GaugeSpec(delta=delta, label="power")}
    if abs(2.0 * delta - kmax) > settings.threshold_tolerance:
        presets["stratmann"] = gauge_from_stratmann(delta, kmax)
        presets["hausdorff_p2"] = GaugeSpec(
            delta=delta, c_log=2.0 * (kmax - delta) / (2.0 * delta - kmax), label="hausdorff_p2")
    if abs(2.0 * delta - kmin) > settings.threshold_tolerance:
        c = (delta - kmin) / (2.0 * delta - kmin)
        presets["packing_p2"] = GaugeSpec(delta=delta, c_log=-2.0 * c, label="packing_p2")
        presets["packing_bertrand"] = GaugeSpec(delta=delta, c_log=-c, c_logloglog=-c, label="packing_bertrand")
    return presets


def preset(name: str, delta: float = 1.5, kmin: int = 1, kmax: int = 2) -> GaugeSpec:
    presets = gauge_presets(delta, kmin, kmax)
    if name not in presets:
        raise DomainError(f"unknown gauge preset {name!r}; available: {', '.join(sorted(presets))}")
    return presets[name]


# --- Assumptions ---

def check_assumptions(g: GaugeSpec) -> AssumptionReport:
    """Eventual monotonicity of Psi and lim Psi'(t) = c_lin."""
    terms = zip(TERM_NAMES, (g.c_lin,) + g.log_coefficients)
    dominant = next(((name, c) for name, c in terms if c != 0.0), None)
    if dominant is None:
        direction = "constant"
    else:
        direction = "increasing" if dominant[1] > 0 else "decreasing"
    return AssumptionReport(
        eventually_monotone=True,
        direction=direction,
        psi_prime_limit=g.c_lin,
        dominant_term=dominant[0] if dominant else None,
    )


def reduce_to_zero_slope(g: GaugeSpec) -> Tuple[GaugeSpec, float]:
    """
    Absorb the linear part of Psi into the exponent.

    r^delta exp(c t + rest) = r^(delta - c) exp(rest), so delta' = delta - c_lin.
    """
    if g.c_lin == 0.0:
        return g, 0.0
    new_delta = g.delta - g.c_lin
    if not new_delta > 0:
        raise DomainError(f"gauge with delta={g.delta} and c_lin={g.c_lin} does not vanish at 0")
    return g.model_copy(update={"delta": new_delta, "c_lin": 0.0}), g.c_lin


def _require_zero_slope(g: GaugeSpec) -> None:
    if g.c_lin != 0.0:
        raise DomainError(f"gauge {g.label!r} has c_lin={g.c_lin}; apply reduce_to_zero_slope first")


# --- Derived functions ---

@dataclass(frozen=True)
class DerivedGaugeFamily:
    """
    psi_p(r) = exp(-Psi(log 1/r) / (k - delta)), theta_p = r / psi_p and
    phi_{p,alpha}(r) = theta_p^{-1}(r / alpha) / r for one cusp rank k.

    In t = log(1/r) coordinates theta_p is exp(-u(t)) with
    u(t) = t - Psi(t) / (k - delta). Since |L_k'(t)| <= 1 / (e + t), u is
    increasing for t >= t0 = max(0, sum|c_k| / |k - delta| - e), which is
    where the inverse is taken.
    """
    gauge: GaugeSpec
    rank: int
    t0: float

    @property
    def delta_p(self) -> float:
        return 2.0 * self.gauge.delta - self.rank

    @property
    def gap(self) -> float:
        return self.rank - self.gauge.delta

    @property
    def r0(self) -> float:
        return math.exp(-self.t0)

    def u(self, t):
        t = np.asarray(t, dtype=float)
        return t - big_psi(self.gauge, t) / self.gap

    def psi_p(self, r):
        r = _check_radius(r)
        return np.exp(-big_psi(self.gauge, -np.log(r)) / self.gap)

    def theta_p(self, r):
        r = _check_radius(r)
        return np.exp(-self.u(-np.log(r)))

    def theta_inv_t(self, s) -> np.ndarray:
        """t with u(t) = s, by bisection on [t0, oo)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        floor = float(self.u(self.t0))
        if np.any(s < floor - 1e-12):
            raise NumericError(
                f"theta_p^-1 requested above theta_p(r0) = {math.exp(-floor):.6g} "
                f"(monotone range r <= {self.r0:.6g}, rank {self.rank}, gauge {self.gauge.label})"
            )
        lo = np.full_like(s, self.t0)
        hi = np.maximum(s, self.t0) + 1.0
        for _ in range(200):
            short = self.u(hi) < s
            if not short.any():
                break
            hi = np.where(short, self.t0 + 2.0 * (hi - self.t0) + 1.0, hi)
        else:
            raise NumericError("could not bracket theta_p^-1")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.u(mid) < s
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-13 * np.maximum(1.0, hi)):
                break
        return 0.5 * (lo + hi)

    def theta_inv(self, x):
        x = _check_radius(x)
        out = np.exp(-self.theta_inv_t(-np.log(x)))
        return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])

    def log_phi_t(self, alpha: float, s) -> np.ndarray:
        """log phi_{p,alpha}(e^{-s})."""
        if not alpha > 0:
            raise DomainError(f"alpha must be positive, got {alpha!r}")
        s = np.asarray(s, dtype=float)
        return s - self.theta_inv_t(s + math.log(alpha)).reshape(np.shape(s))

    def phi(self, alpha: float) -> Callable:
        def evaluate(r):
            r = _check_radius(r)
            out = np.exp(self.log_phi_t(alpha, -np.log(r)))
            return float(out) if np.ndim(out) == 0 else out
        return evaluate

    def phi_upper(self, alpha: float) -> float:
        """Largest r at which phi_{p,alpha} is defined."""
        return alpha * math.exp(-float(self.u(self.t0)))


def derived_functions(g: GaugeSpec, k_p: int) -> DerivedGaugeFamily:
    _require_zero_slope(g)
    if abs(k_p - g.delta) <= settings.threshold_tolerance:
        raise DegenerateRankError(f"cusp rank {k_p} equals delta={g.delta}")
    total = sum(abs(c) for c in g.log_coefficients)
    t0 = max(0.0, total / abs(k_p - g.delta) - E1)
    return DerivedGaugeFamily(g, k_p, t0)


# --- Doubling ---

def _sup_ratio(phi: Callable, r: np.ndarray, c1: float) -> float:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        values = np.asarray(phi(r), dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            return math.inf
        log_r = np.log(r)
        close = np.abs(log_r[:, None] - log_r[None, :]) <= math.log(c1) + 1e-12
        ratios = values[None, :] / values[:, None]
    ratios = np.where(close, ratios, 0.0)
    sup = float(np.max(ratios))
    return sup if math.isfinite(sup) else math.inf


def doubling_check(phi: Callable, c1: float, grid: Sequence[float]) -> DoublingReport:
    """
    Sup of phi(y)/phi(x) over grid pairs with y/x in [1/c1, c1].

    The refinement adds log-midpoints and one more decade towards 0; phi is
    called doubling when both sups are finite and agree within a factor 1.1.
    """
    if not c1 > 1:
        raise DomainError(f"C1 must exceed 1, got {c1!r}")
    r = np.unique(np.asarray(grid, dtype=float))
    if len(r) < 2:
        raise DomainError("doubling check needs at least two grid points")
    log_r = np.log(r)
    step = float(np.median(np.diff(log_r)))
    mids = 0.5 * (log_r[1:] + log_r[:-1])
    extension = log_r[0] - step * np.arange(1, int(math.ceil(math.log(10.0) / step)) + 1)
    refined = np.exp(np.unique(np.concatenate([log_r, mids, extension])))

    c2 = _sup_ratio(phi, r, c1)
    c2_refined = _sup_ratio(phi, refined, c1)
    stable = math.isfinite(c2) and math.isfinite(c2_refined) and c2_refined <= 1.1 * c2
    return DoublingReport(is_doubling=stable, c2=c2, c2_refined=c2_refined, c1=c1)


# --- Series classification ---

def _rational(x: float) -> Optional[Fraction]:
    f = Fraction(x).limit_denominator(10 ** 6)
    if abs(float(f) - x) <= settings.rational_tolerance * max(1.0, abs(x)):
        return f
    return None


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    return f"{x:.12g}"


def summand_form(exponents: Sequence) -> str:
    """t^{-a1} (log t)^{-a2} ... written as a fraction."""
    den, num = [], []
    for name, a in zip(LEVEL_NAMES, exponents):
        if a == 0:
            continue
        power = abs(a)
        factor = name if power == 1 else (f"{name}^{_fmt(power)}" if name == "t" else f"({name})^{_fmt(power)}")
        (den if a > 0 else num).append(factor)
    top = "·".join(num) if num else "1"
    if not den:
        return top
    bottom = den[0] if len(den) == 1 else "(" + "·".join(den) + ")"
    return f"{top}/{bottom}"


def classify_series(g: GaugeSpec, multiplier_parts: Tuple[float, float], kind: str) -> SeriesResult:
    """
    Decide sum_t exp(m Psi(t)) with m = numerator / denominator.

    Exponents a_k = -m c_k are compared with the threshold 1 level by level;
    the first level off the threshold decides. Exact rational arithmetic is
    used when every input is rational, otherwise ties within the tolerance
    are reported as undecided. An exact tie at every level is the Bertrand
    series with all exponents 1 and is reported as DIVERGES rather than
    UNDECIDED.
    """
    _require_zero_slope(g)
    num, den = multiplier_parts
    inputs = [num, den, *g.log_coefficients]
    exact_inputs = [_rational(x) for x in inputs]
    exact = all(x is not None for x in exact_inputs)
    if exact:
        m = exact_inputs[0] / exact_inputs[1]
        exponents = [-m * c for c in exact_inputs[2:]]
        one = Fraction(1)
    else:
        m = num / den
        exponents = [-m * c for c in g.log_coefficients]
        one = 1.0

    trace = [f"summand exp({_fmt(m)} * Psi(t)) ~ t^-a1 (log t)^-a2 (log log t)^-a3 (log log log t)^-a4",
             "exponents a = (" + ", ".join(_fmt(a) for a in exponents) + ")"]
    verdict = SeriesVerdict.DIVERGES
    for level, (name, a) in enumerate(zip(LEVEL_NAMES, exponents), start=1):
        tie = (a == one) if exact else abs(a - 1.0) <= settings.threshold_tolerance
        if tie:
            if not exact:
                trace.append(f"level {level} ({name}): exponent {_fmt(a)} within tolerance of 1; undecided")
                verdict = SeriesVerdict.UNDECIDED
                break
            trace.append(f"level {level} ({name}): exponent 1 at threshold, next level decides")
            if level == len(LEVEL_NAMES):
                trace.append("all levels at threshold: Bertrand series with exponent 1 diverges")
            continue
        if a > one:
            trace.append(f"level {level} ({name}): exponent {_fmt(a)} > 1, converges")
            verdict = SeriesVerdict.CONVERGES
        else:
            trace.append(f"level {level} ({name}): exponent {_fmt(a)} < 1, diverges")
        break

    summand = summand_form(exponents)
    trace.append(f"sum ~ {summand}")
    return SeriesResult(
        kind=kind,
        verdict=verdict,
        multiplier=float(m),
        summand=summand,
        exact=exact,
        trace=trace,
    )


def classify_hausdorff_series(g: GaugeSpec, kmax: int) -> SeriesResult:
    """sum exp(-((2 delta - kmax) / (kmax - delta)) Psi(t)): divergence gives H = 0, convergence H = oo."""
    if not g.delta < kmax:
        raise DomainError(f"Hausdorff series needs delta < kmax, got delta={g.delta}, kmax={kmax}")
    result = classify_series(g, (-(2.0 * g.delta - kmax), kmax - g.delta), "hausdorff")
    consequence = {SeriesVerdict.DIVERGES: MeasureValue.ZERO,
                   SeriesVerdict.CONVERGES: MeasureValue.INFINITE}.get(result.verdict, MeasureValue.UNDECIDED)
    return result.model_copy(update={"consequence": consequence})


def classify_packing_series(g: GaugeSpec, kmin: int) -> SeriesResult:
    """sum exp(((2 delta - kmin) / (delta - kmin)) Psi(t)): convergence gives P = 0, divergence P = oo."""
    if not g.delta > kmin:
        raise DomainError(f"packing series needs delta > kmin, got delta={g.delta}, kmin={kmin}")
    result = classify_series(g, (2.0 * g.delta - kmin, g.delta - kmin), "packing")
    consequence = {SeriesVerdict.CONVERGES: MeasureValue.ZERO,
                   SeriesVerdict.DIVERGES: MeasureValue.INFINITE}.get(result.verdict, MeasureValue.UNDECIDED)
    return result.model_copy(update={"consequence": consequence})


def classify_partial_sums(partial: np.ndarray, tolerance: float = 0.02) -> Tuple[SeriesVerdict, float]:
    """
    Heuristic verdict from the last two decades of partial sums.

    For summands ~ n^-a the decade increments shrink by 10^(1-a); the
    effective exponent 1 - log10(ratio) is compared with 1.
    """
    n = len(partial)
    if n < 1000:
        raise DomainError("need at least 1000 partial sums for a numeric verdict")
    a, b, c = n // 100, n // 10, n
    first = partial[b - 1] - partial[a - 1]
    second = partial[c - 1] - partial[b - 1]
    if first <= 0 or second <= 0:
        return SeriesVerdict.CONVERGES, math.inf
    effective = 1.0 - math.log10(second / first)
    if effective > 1.0 + tolerance:
        return SeriesVerdict.CONVERGES, effective
    if effective < 1.0 - tolerance:
        return SeriesVerdict.DIVERGES, effective
    return SeriesVerdict.UNDECIDED, effective


def classify_numeric(summand: Callable[[np.ndarray], np.ndarray], n_terms: int = 100_000,
                     kind: str = "numeric") -> SeriesResult:
    """Lower-confidence classification of an arbitrary positive summand sequence."""
    n = np.arange(1, n_terms + 1, dtype=float)
    partial = np.cumsum(summand(n))
    verdict, effective = classify_partial_sums(partial)
    return SeriesResult(
        kind=kind,
        verdict=verdict,
        multiplier=math.nan,
        summand=f"~ n^-{effective:.4g}",
        exact=False,
        confidence="heuristic",
        trace=[f"partial sum S({n_terms}) = {partial[-1]:.6g}", f"effective exponent {effective:.4g}"],
    )


def classify_tabulated(log_psi: Callable[[np.ndarray], np.ndarray], delta: float, rank: int,
                       n_terms: int = 100_000) -> SeriesResult:
    """Numeric classifier for a gauge given only through log psi(e^{-t})."""
    multiplier = -(2.0 * delta - rank) / (rank - delta)
    kind = "hausdorff" if rank > delta else "packing"

    def summand(t):
        return np.exp(multiplier * (np.asarray(log_psi(t)) + delta * t))

    result = classify_numeric(summand, n_terms, kind)
    return result.model_copy(update={"multiplier": multiplier})


# --- Khinchin-type series ---

def sigma_p_partial(g: GaugeSpec, k_p: int, n_terms: int) -> np.ndarray:
    """Partial sums of sum_t exp(-(Delta_p / (k_p - delta)) Psi(t)), t = 0 .. n_terms - 1."""
    _require_zero_slope(g)
    if abs(k_p - g.delta) <= settings.threshold_tolerance:
        raise DegenerateRankError(f"cusp rank {k_p} equals delta={g.delta}")
    delta_p = 2.0 * g.delta - k_p
    t = np.arange(n_terms, dtype=float)
    return np.cumsum(np.exp(-(delta_p / (k_p - g.delta)) * big_psi(g, t)))


def sigma_p_alpha_partial(fam: DerivedGaugeFamily, alpha: float, lam: float, n_terms: int) -> np.ndarray:
    """
    Partial sums of sum_n phi_{p,alpha}(lam^n)^{Delta_p}.

    Terms with lam^n outside the monotone range of theta_p are left out; they
    are finitely many and only shift the sum by a constant.
    """
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (0, 1), got {lam!r}")
    delta_p = fam.delta_p
    if abs(delta_p) <= settings.threshold_tolerance:
        logger.warning("Delta_p = 0 for rank %d: the Khinchin series has constant terms", fam.rank)
        return np.arange(1, n_terms + 1, dtype=float)
    s = np.arange(1, n_terms + 1, dtype=float) * -math.log(lam)
    valid = s + math.log(alpha) >= float(fam.u(fam.t0))
    terms = np.zeros(n_terms)
    terms[valid] = np.exp(delta_p * fam.log_phi_t(alpha, s[valid]))
    return np.cumsum(terms)


def compare_sigma_series(g: GaugeSpec, k_p: int, alphas: Sequence[float], lams: Sequence[float],
                         n_terms: int = 100_000, checkpoints: Optional[Sequence[int]] = None) -> List[SeriesComparison]:
    """Band of log S_{p,alpha}(N) - log S_p(N) and both numeric verdicts on an (alpha, lambda) grid."""
    fam = derived_functions(g, k_p)
    checkpoints = np.asarray(checkpoints or np.unique(np.geomspace(100, n_terms, 31).astype(int)))
    reference = sigma_p_partial(g, k_p, n_terms)
    gauge_verdict, _ = classify_partial_sums(reference)
    out = []
    for alpha in alphas:
        for lam in lams:
            partial = sigma_p_alpha_partial(fam, alpha, lam, n_terms)
            with np.errstate(divide="ignore"):
                gap = np.log(partial[checkpoints - 1]) - np.log(reference[checkpoints - 1])
            finite = gap[np.isfinite(gap)]
            band = float(finite.max() - finite.min()) if len(finite) else math.inf
            verdict, _ = classify_partial_sums(partial)
            out.append(SeriesComparison(alpha=alpha, lam=lam, band=band,
                                        alpha_verdict=verdict, gauge_verdict=gauge_verdict))
    return out


# --- Analytic checks ---

def numeric_inverse(f: Callable[[float], float]) -> Callable[[float], float]:
    """Inverse of a decreasing homeomorphism of (0, oo), solved in log coordinates."""
    def inverse(y: float) -> float:
        if not y > 0:
            raise DomainError(f"inverse evaluated at non-positive {y!r}")
        target = math.log(y)

        def gap(u):
            # floor at the smallest subnormal so an underflowing tail stays finite
            return math.log(max(f(math.exp(u)), _TINY)) - target

        lo, hi = -1.0, 1.0
        while gap(lo) < 0:
            lo *= 2.0
            if lo < -700:
                raise NumericError(f"cannot bracket the inverse at y={y}")
        while gap(hi) > 0:
            hi *= 2.0
            if hi > 700:
                raise NumericError(f"cannot bracket the inverse at y={y}")
        return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500))
    return inverse


def _integrate(fn: Callable[[float], float], lower: float, upper: float) -> float:
    """Adaptive quadrature split at 1 so that both an endpoint singularity and an infinite tail are handled."""
    pieces = []
    cut = min(max(lower, 1.0), upper) if math.isfinite(upper) else max(lower, 1.0)
    for a, b in ((lower, cut), (cut, upper)):
        if b > a:
            value, err = integrate.quad(fn, a, b, limit=500, epsabs=1e-13, epsrel=1e-12)
            logger.debug("quad on (%g, %g): %.15g +- %.2g", a, b, value, err)
            pieces.append(value)
    return float(sum(pieces))


def inverse_integral_check(f: Callable[[float], float], f_inv: Optional[Callable[[float], float]] = None,
                           lower: float = 0.0, upper: float = math.inf) -> IntegralCheck:
    """Integral of a decreasing homeomorphism against the integral of its inverse."""
    sample_lo = lower if lower > 0 else 1e-8
    sample_hi = upper if math.isfinite(upper) else 1e2
    samples = np.geomspace(sample_lo, sample_hi, 400)
    values = np.array([f(x) for x in samples])
    values = values[values > 0]
    if np.any(np.diff(values) >= 0):
        raise DomainError("f is not strictly decreasing on the sampled range")
    f_inv = f_inv or numeric_inverse(f)
    lhs = _integrate(f, lower, upper)
    rhs = _integrate(f_inv, lower, upper)
    return IntegralCheck(lhs=lhs, rhs=rhs, relative_gap=abs(lhs - rhs) / max(abs(lhs), 1e-300),
                         lower=lower, upper=upper)


def lipschitz_push_bound(g: GaugeSpec, lam: float, eps: float = 1e-2, decades: int = 20, points: int = 200) -> float:
    """sup over r <= eps of psi(lam r) / psi(r) on a log grid."""
    r = np.geomspace(eps * 10.0 ** -decades, eps, points)
    r = r[lam * r < 1.0]
    return float(np.max(np.exp(log_psi_of_r(g, lam * r) - log_psi_of_r(g, r))))


def scaling_limit_check(g: GaugeSpec, lam: float, r_grid: Sequence[float]) -> ScalingReport:
    """Deviation of psi(lam r) / psi(r) from lam^delta, largest r first."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam!r}")
    r = np.sort(np.asarray(r_grid, dtype=float))[::-1]
    if np.any(lam * r >= 1.0):
        raise DomainError("lambda * r must stay below 1 on the grid")
    ratios = np.exp(log_psi_of_r(g, lam * r) - log_psi_of_r(g, r))
    expected = lam ** g.delta
    deviations = np.abs(ratios - expected)
    precondition_ok = g.c_lin == 0.0
    if not precondition_ok:
        logger.warning("Gauge %s has c_lin=%g: the ratio tends to lam^(delta - c_lin), not lam^delta",
                       g.label, g.c_lin)
    vanishing = bool(deviations[-1] <= 0.5 * deviations[0]) if deviations[0] > 0 else bool(deviations[-1] == 0)
    return ScalingReport(
        lam=lam,
        r_grid=r.tolist(),
        deviations=deviations.tolist(),
        expected=expected,
        limit_ratio=lam ** (g.delta - g.c_lin),
        precondition_ok=precondition_ok,
        vanishing=vanishing and precondition_ok,
        sup_ratio=float(np.max(ratios)),
    )
