import math
from enum import Enum
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# --- Gauges ---

class GaugeSpec(BaseModel):
    """A gauge psi(r) = r^delta * exp(Psi(log 1/r)), Psi expanded over the iterated-log basis."""
    model_config = ConfigDict(frozen=True)

    delta: float = Field(gt=0, description="Exponent of the power part of the gauge.")
    c_lin: float = Field(default=0.0, description="Coefficient of t.")
    c_log: float = Field(default=0.0, description="Coefficient of log(e + t).")
    c_loglog: float = Field(default=0.0, description="Coefficient of log log(e^e + t).")
    c_logloglog: float = Field(default=0.0, description="Coefficient of log log log(e^e^e + t).")
    c_log4: float = Field(default=0.0, description="Coefficient of the fourth iterated logarithm.")
    c_const: float = Field(default=0.0, description="Constant term of Psi.")
    label: str = "gauge"

    @field_validator("delta", "c_lin", "c_log", "c_loglog", "c_logloglog", "c_log4", "c_const")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("gauge coefficients must be finite")
        return v

    @property
    def log_coefficients(self) -> Tuple[float, float, float, float]:
        """Coefficients of the four iterated logarithms, outermost first."""
        return (self.c_log, self.c_loglog, self.c_logloglog, self.c_log4)

    @property
    def coefficients(self) -> Tuple[float, ...]:
        return (self.c_lin, self.c_log, self.c_loglog, self.c_logloglog, self.c_log4, self.c_const)


class AssumptionReport(BaseModel):
    """Eventual monotonicity of Psi and the limit of its derivative."""
    eventually_monotone: bool
    direction: Literal["increasing", "decreasing", "constant"]
    psi_prime_limit: float
    dominant_term: Optional[str] = None


class DoublingReport(BaseModel):
    is_doubling: bool
    c2: float = Field(description="Sup of phi(y)/phi(x) on the coarse grid.")
    c2_refined: float = Field(description="Same sup on the refined grid.")
    c1: float


class IntegralCheck(BaseModel):
    lhs: float = Field(description="Integral of f.")
    rhs: float = Field(description="Integral of the inverse of f.")
    relative_gap: float
    lower: float
    upper: float


class ScalingReport(BaseModel):
    lam: float
    r_grid: List[float]
    deviations: List[float]
    expected: float = Field(description="lambda^delta, the limit demanded by the slope-zero hypothesis.")
    limit_ratio: float = Field(description="lambda^(delta - c_lin), the actual limit of the ratio.")
    precondition_ok: bool
    vanishing: bool = Field(description="Deviations shrink towards zero as r decreases.")
    sup_ratio: float = Field(description="sup over the grid of psi(lambda r) / psi(r).")

    @property
    def max_deviation(self) -> float:
        return max(self.deviations)


# --- Series and verdicts ---

class SeriesVerdict(str, Enum):
    CONVERGES = "converges"
    DIVERGES = "diverges"
    UNDECIDED = "undecided"


class MeasureValue(str, Enum):
    ZERO = "zero"
    INFINITE = "infinite"
    POSITIVE_FINITE = "positive_finite"
    NOT_APPLICABLE = "not_applicable"
    UNDECIDED = "undecided"


class SeriesResult(BaseModel):
    """Convergence decision for a series sum_t exp(sign * Psi(t)) with its decision trace."""
    kind: Literal["hausdorff", "packing", "khinchin", "numeric"]
    verdict: SeriesVerdict
    consequence: MeasureValue = MeasureValue.UNDECIDED
    multiplier: float = Field(description="Factor m in the summand exp(m * Psi(t)).")
    summand: str = Field(description="Asymptotic form of the summand.")
    exact: bool = Field(description="Threshold comparisons were done in rational arithmetic.")
    confidence: Literal["symbolic", "heuristic"] = "symbolic"
    trace: List[str] = Field(default_factory=list)


class Verdict(BaseModel):
    """Values of the psi-Hausdorff and psi-packing measures of mu."""
    gauge: str
    delta: float
    kmin: int
    kmax: int
    hausdorff: MeasureValue
    packing: MeasureValue
    hausdorff_series: Optional[SeriesResult] = None
    packing_series: Optional[SeriesResult] = None
    consequences: List[str] = Field(default_factory=list)
    limit_set: List[str] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


# --- Estimates ---

class DeltaEstimate(BaseModel):
    """Least-squares slope of log N(T) against T."""
    label: str
    delta: float
    stderr: float
    ci_low: float
    ci_high: float
    residual: float = Field(description="Root mean square residual of the regression.")
    window: Tuple[float, float]
    samples: int
    truncated: bool = False


# --- Density traces ---

class DensitySample(BaseModel):
    t: float
    value: Optional[float] = Field(default=None, description="Log-density; None when unresolved.")
    flag: Optional[Literal["empty", "below_resolution"]] = None
    rank: Optional[int] = Field(default=None, description="Rank of the cusp the ray is excursing into, 0 between excursions.")

    @property
    def unresolved(self) -> bool:
        return self.value is None


class DensityTrace(BaseModel):
    """Log-density samples along the geodesic ray towards eta."""
    source: Literal["empirical", "synthetic", "residual"]
    label: str = ""
    eta: Optional[List[float]] = None
    seed: Optional[int] = None
    samples: List[DensitySample]

    @model_validator(mode="after")
    def _increasing(self) -> "DensityTrace":
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trace times must be strictly increasing")
        return self

    @classmethod
    def from_arrays(cls, source, t, values, flags=None, ranks=None, **kwargs) -> "DensityTrace":
        flags = flags if flags is not None else [None] * len(t)
        ranks = ranks if ranks is not None else [None] * len(t)
        samples = [
            DensitySample(t=float(ti), value=None if (f is not None or not np.isfinite(v)) else float(v), flag=f,
                          rank=None if k is None else int(k))
            for ti, v, f, k in zip(t, values, flags, ranks)
        ]
        return cls(source=source, samples=samples, **kwargs)

    def t_values(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def values(self) -> np.ndarray:
        """Values with NaN at unresolved entries."""
        return np.array([np.nan if s.value is None else s.value for s in self.samples])

    def ranks(self) -> np.ndarray:
        """Cusp ranks per sample, 0 where none was recorded."""
        return np.array([s.rank or 0 for s in self.samples], dtype=int)

    def resolved(self) -> "DensityTrace":
        return self.model_copy(update={"samples": [s for s in self.samples if s.value is not None]})

    def __len__(self) -> int:
        return len(self.samples)


class RttReport(BaseModel):
    """Sandwich estimate for the Hausdorff or packing measure from many density traces."""
    mode: Literal["hausdorff", "packing"]
    verdict: MeasureValue
    resolved_traces: int
    proxies: List[float] = Field(description="Per-trace limsup (hausdorff) or liminf (packing) proxies.")
    early_proxies: List[float]
    essential_low: float
    essential_high: float
    drift: float = Field(description="Median change of the proxy between the early and the deep window.")
    drift_low: float = Field(description="Smallest per-trace drift.")
    drift_high: float = Field(description="Largest per-trace drift.")
    bounds: Tuple[float, float] = Field(description="Sandwich bounds on the measure, as reciprocals of the density extremes.")


# --- Khinchin simulation ---

class HitRecord(BaseModel):
    eta_index: int
    eta: List[float]
    hit_log_radii: List[float] = Field(default_factory=list, description="log r_xi of each target containing eta.")

    @property
    def count(self) -> int:
        return len(self.hit_log_radii)


class KhinchinReport(BaseModel):
    thresholds: List[float]
    fractions: List[float] = Field(description="Fraction of eta with a hit deeper than each threshold.")
    trend: Literal["decreasing", "stable", "mixed"]
    series_verdict: SeriesVerdict
    agrees: bool
    samples: int


# --- Synthetic dichotomy ---

class DriftReport(BaseModel):
    """Level crossings of a synthetic density trace per dyadic window and the resulting drift verdict."""
    window_counts: List[int]
    decay_slope: float
    unbounded: bool
    running_extreme: Optional[float] = Field(
        default=None, description="Max (hausdorff) or min (packing) of the trace in the deepest window."
    )


class DichotomyCell(BaseModel):
    gauge: str
    delta: float
    kmin: int
    kmax: int
    predicted: Verdict
    seeds: int
    hausdorff_agree: int
    packing_agree: int

    @property
    def agreement(self) -> float:
        return min(self.hausdorff_agree, self.packing_agree) / max(self.seeds, 1)


class SeriesComparison(BaseModel):
    """Partial sums of the Khinchin-type series against the gauge series for one (alpha, lambda)."""
    alpha: float
    lam: float
    band: float = Field(description="max - min of log S_alpha(N) - log S_p(N) over the checked N.")
    alpha_verdict: SeriesVerdict
    gauge_verdict: SeriesVerdict

    @property
    def agrees(self) -> bool:
        return self.alpha_verdict == self.gauge_verdict
