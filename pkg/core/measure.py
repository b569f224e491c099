"""
Patterson-Sullivan measure approximation, ball masses, conformality defect and
the Global Measure Formula.

The measure is approximated by the truncated orbit sum
    mu_s = sum_g e^{-s dist(0, g(0))} [radial projection of g(0)]
with s slightly above the Poincaré exponent. The formula predicts
    mu(B(eta, e^{-t})) ~ e^{-delta t} e^{b(eta_t) (k(eta_t) - delta)}
up to multiplicative constants, with k and b read off the horoball containing
eta_t (both zero outside every horoball).
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import spatial
from scipy.special import logsumexp

from core.config import settings
from core.errors import DegenerateMeasureError, DomainError, InvariantViolation
from core.geometry import (
    BoundaryPoint,
    Horoball,
    Isometry,
    as_boundary_point,
    geodesic_point,
    log_derivatives_along,
    map_boundary,
    push_horoball,
)
from core.groups import HoroballSystem, OrbitBall
from core.models import DensityTrace

logger = logging.getLogger(__name__)


# --- Atomic measures ---

@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finitely many weighted atoms on the boundary sphere."""
    directions: np.ndarray
    weights: np.ndarray
    label: str = "measure"
    s: Optional[float] = None
    radius: Optional[float] = None

    def __post_init__(self):
        if self.directions.ndim != 2 or len(self.directions) != len(self.weights):
            raise DomainError("atom directions and weights must have matching lengths")
        if len(self.weights) == 0:
            raise DegenerateMeasureError(f"measure {self.label!r} has no atoms")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise DomainError("atom weights must be positive and finite")

    @property
    def dimension(self) -> int:
        return self.directions.shape[1]

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def __len__(self) -> int:
        return len(self.weights)

    def normalized(self) -> "AtomicMeasure":
        return self.scaled(1.0 / self.total_mass)

    def scaled(self, factor: float) -> "AtomicMeasure":
        if not factor > 0:
            raise DomainError(f"scaling factor must be positive, got {factor!r}")
        return AtomicMeasure(self.directions, self.weights * factor, self.label, self.s, self.radius)

    def pushed(self, g: Isometry) -> "AtomicMeasure":
        """Image measure g_* mu."""
        return AtomicMeasure(map_boundary(g, self.directions), self.weights, self.label, self.s, self.radius)

    def resolution_limit(self) -> float:
        """Median nearest-neighbour gap between atoms; 0 for a single atom."""
        if len(self) < 2:
            return 0.0
        gaps, _ = spatial.cKDTree(self.directions).query(self.directions, k=2)
        return float(np.median(gaps[:, 1]))

    def to_frame(self) -> pd.DataFrame:
        cols = {f"x{i}": self.directions[:, i] for i in range(self.dimension)}
        return pd.DataFrame({**cols, "weight": self.weights})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, **provenance) -> "AtomicMeasure":
        coords = [c for c in frame.columns if c.startswith("x")]
        return cls(frame[coords].to_numpy(dtype=float), frame["weight"].to_numpy(dtype=float), **provenance)

    @classmethod
    def uniform(cls, n: int, d: int = 2, label: str = "uniform") -> "AtomicMeasure":
        """Equal atoms spread evenly over the sphere (circle for d=2, Fibonacci lattice for d=3)."""
        if n < 1:
            raise DomainError("need at least one atom")
        if d == 2:
            theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
            dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        else:
            k = np.arange(n) + 0.5
            z = 1.0 - 2.0 * k / n
            phi = np.pi * (1.0 + 5.0 ** 0.5) * k
            rad = np.sqrt(1.0 - z * z)
            dirs = np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)
        return cls(dirs, np.full(n, 1.0 / n), label)

    @classmethod
    def dirac(cls, xi: BoundaryPoint, mass: float = 1.0) -> "AtomicMeasure":
        return cls(xi.direction[None, :].copy(), np.array([mass]), "dirac")


def patterson_measure(orbit: OrbitBall, s: float, normalize: bool = True,
                      delta: Optional[float] = None) -> AtomicMeasure:
    """
    Orbit-sum approximation of the Patterson-Sullivan measure.

    Atoms sit at the radial projections of the orbit points with weight
    e^{-s dist(0, g(0))}. Orbit points at the origin have no projection and
    are dropped unless nothing else is left.
    """
    if not s > 0:
        raise DomainError(f"Patterson exponent must be positive, got {s!r}")
    if delta is not None and s <= delta:
        logger.warning("Patterson sum at s=%.4g <= delta=%.4g diverges; using the truncated sum", s, delta)
    off_origin = orbit.distances > 0
    if not off_origin.any():
        off_origin = np.ones(len(orbit), dtype=bool)
    dirs = orbit.directions[off_origin]
    log_w = -s * orbit.distances[off_origin]
    if normalize:
        log_w = log_w - logsumexp(log_w)
    weights = np.exp(log_w)
    keep = weights > 0
    if not keep.any():
        raise DegenerateMeasureError(f"every Patterson weight of {orbit.label} underflowed at s={s}")
    if not keep.all():
        logger.debug("Dropped %d underflowed atoms", int((~keep).sum()))
    return AtomicMeasure(dirs[keep], weights[keep], orbit.label, float(s), orbit.radius)


def atom_gaps(mu: AtomicMeasure, eta) -> np.ndarray:
    eta = as_boundary_point(eta)
    return np.linalg.norm(mu.directions - eta.direction, axis=1)


def ball_mass(mu: AtomicMeasure, eta, r: float) -> float:
    """Mass of the atoms within Euclidean distance r of eta."""
    if not r > 0:
        raise DomainError(f"ball radius must be positive, got {r!r}")
    return float(np.sum(mu.weights[atom_gaps(mu, eta) <= r]))


def ball_masses(mu: AtomicMeasure, eta, radii: Sequence[float]) -> np.ndarray:
    """ball_mass for many radii at once."""
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise DomainError("ball radii must be positive")
    gaps = atom_gaps(mu, eta)
    order = np.argsort(gaps, kind="stable")
    cumulative = np.concatenate([[0.0], np.cumsum(mu.weights[order])])
    return cumulative[np.searchsorted(gaps[order], radii, side="right")]


def log_ball_masses(mu: AtomicMeasure, eta, t_grid: Sequence[float],
                    resolution: Optional[float] = None) -> Tuple[np.ndarray, list]:
    """log mu(B(eta, e^{-t})) with flags for empty and unresolved balls."""
    t_grid = np.asarray(t_grid, dtype=float)
    radii = np.exp(-t_grid)
    masses = ball_masses(mu, eta, radii)
    resolution = mu.resolution_limit() if resolution is None else resolution
    flags = []
    for r, m in zip(radii, masses):
        if m <= 0:
            flags.append("empty")
        elif r < resolution:
            flags.append("below_resolution")
        else:
            flags.append(None)
    with np.errstate(divide="ignore"):
        return np.log(masses), flags


# --- Partitions and conformality ---

def partition_cells(dirs: np.ndarray, size: int) -> np.ndarray:
    """Cell label of each direction: `size` equal arcs (d=2) or size x 2size equal-area patches (d=3)."""
    if size < 2:
        raise DomainError(f"partition needs at least 2 cells per axis, got {size!r}")
    if dirs.shape[1] == 2:
        theta = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2.0 * np.pi)
        return np.minimum((theta / (2.0 * np.pi) * size).astype(int), size - 1)
    band = np.minimum(((dirs[:, 2] + 1.0) / 2.0 * size).astype(int), size - 1)
    phi = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2.0 * np.pi)
    sector = np.minimum((phi / (2.0 * np.pi) * 2 * size).astype(int), 2 * size - 1)
    return band * (2 * size) + sector


def conformality_defect(mu: AtomicMeasure, g: Isometry, delta: float, partition_size: int,
                        cells: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> float:
    """
    max over cells A of |log mu(g(A)) - log integral_A |g'|^delta dmu|.

    Cells whose mass falls below settings.min_atom_mass on either side are skipped.
    """
    label = cells if cells is not None else (lambda dirs: partition_cells(dirs, partition_size))
    home = label(mu.directions)
    # x lies in g(A) iff g^{-1}(x) lies in A
    pulled = label(map_boundary(g.inverse(), mu.directions))
    distorted = mu.weights * np.exp(delta * log_derivatives_along(g, mu.directions))

    n_cells = int(max(home.max(), pulled.max())) + 1
    image_mass = np.bincount(pulled, weights=mu.weights, minlength=n_cells)
    integral = np.bincount(home, weights=distorted, minlength=n_cells)
    usable = (image_mass >= settings.min_atom_mass) & (integral >= settings.min_atom_mass)
    if not usable.any():
        raise DomainError("no partition cell carries enough mass to measure the defect")
    return float(np.max(np.abs(np.log(image_mass[usable]) - np.log(integral[usable]))))


# --- Global Measure Formula ---

@dataclass(frozen=True, eq=False)
class GmfContext:
    """Poincaré exponent plus a disjoint horoball system with cusp ranks."""
    delta: float
    bases: np.ndarray
    levels: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta!r}")

    @classmethod
    def from_system(cls, delta: float, system: Optional[HoroballSystem], d: int = 2) -> "GmfContext":
        if system is None or len(system) == 0:
            return cls(delta, np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=int))
        return cls(
            delta,
            np.stack([h.base.direction for h in system.horoballs]),
            np.array([h.level for h in system.horoballs]),
            np.array(system.ranks, dtype=int),
        )

    @classmethod
    def from_horoballs(cls, delta: float, horoballs: Sequence, ranks: Sequence[int], d: int = 2) -> "GmfContext":
        if not horoballs:
            return cls(delta, np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=int))
        return cls(
            delta,
            np.stack([h.base.direction for h in horoballs]),
            np.array([h.level for h in horoballs]),
            np.asarray(ranks, dtype=int),
        )

    def push(self, g: Isometry) -> "GmfContext":
        """Context for the image horoball system g(H)."""
        pushed = [push_horoball(g, Horoball.from_level(BoundaryPoint(u), level))
                  for u, level in zip(self.bases, self.levels)]
        return GmfContext.from_horoballs(self.delta, pushed, self.ranks, g.dimension)

    def depths(self, point) -> np.ndarray:
        """Signed depth of the point in every horoball."""
        if len(self.levels) == 0:
            return np.zeros(0)
        sq = point.sq_dist_to_boundary(self.bases)
        return self.levels - (np.log(sq) - point.log_one_minus_sq)

    def locate(self, point) -> Tuple[int, float]:
        """(rank k(x), depth b(x)); (0, 0) outside every horoball."""
        depths = self.depths(point)
        inside = np.flatnonzero(depths > 0)
        if len(inside) > 1:
            raise InvariantViolation(f"point lies in {len(inside)} horoballs; the system is not disjoint")
        if len(inside) == 0:
            return 0, 0.0
        i = int(inside[0])
        return int(self.ranks[i]), float(depths[i])


def gmf_predict(ctx: GmfContext, eta, t: float) -> float:
    """log of e^{-delta t} e^{b(eta_t) (k(eta_t) - delta)}."""
    if not t > 0:
        raise DomainError(f"geodesic time must be positive, got {t!r}")
    eta = as_boundary_point(eta)
    k, b = ctx.locate(geodesic_point(eta, t))
    if b == 0.0:
        return -ctx.delta * t
    return -ctx.delta * t + b * (k - ctx.delta)


def gmf_residual_scan(mu: AtomicMeasure, ctx: GmfContext, eta, t_grid: Sequence[float],
                      resolution: Optional[float] = None) -> DensityTrace:
    """log ball mass minus the formula's prediction along the ray to eta."""
    eta = as_boundary_point(eta)
    t_grid = np.asarray(t_grid, dtype=float)
    log_mass, flags = log_ball_masses(mu, eta, t_grid, resolution)
    predicted = np.array([gmf_predict(ctx, eta, t) for t in t_grid])
    residual = log_mass - predicted
    return DensityTrace.from_arrays(
        "residual", t_grid, residual, flags, label=mu.label, eta=eta.direction.tolist()
    )


def residual_band(traces: Sequence[DensityTrace]) -> float:
    """max - min of every resolved residual across traces."""
    values = np.concatenate([tr.values() for tr in traces])
    values = values[np.isfinite(values)]
    if len(values) == 0:
        return math.nan
    return float(values.max() - values.min())


def rotation(angle: float) -> Isometry:
    """Rotation of the disk about 0 by the given angle."""
    # conjugated to the half-plane this is the elliptic element fixing i
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    return Isometry.from_entries(c, s, -s, c, dimension=2)
