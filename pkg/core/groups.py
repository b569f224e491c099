"""
Finitely generated groups of isometries: orbit enumeration, Poincaré exponent
estimation, limit set sampling, parabolic orbits and invariant horoballs.

Group elements are enumerated breadth-first over words in the generators and
their inverses. Elements are deduplicated by their projective matrix so that
relations never cause a subtree to be walked twice; the orbit points g(0) are
then deduplicated spatially, since elements differing by the stabilizer of 0
share an orbit point.
"""
import logging
import math
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import spatial, stats
from scipy.special import expit
from tqdm import tqdm

from core.config import settings
from core.errors import ConfigError, DomainError, InsufficientDataError
from core.geometry import (
    BoundaryPoint,
    Horoball,
    Isometry,
    ModelPoint,
    apply,
    boundary_images,
    log_derivatives_at,
    origin_images,
    south_pole,
)
from core.models import DeltaEstimate

logger = logging.getLogger(__name__)


# --- Group specifications ---

@dataclass(frozen=True, eq=False)
class CuspDatum:
    """A parabolic fixed point with its rank, base horoball radius and stabilizer."""
    point: BoundaryPoint
    rank: int
    base_radius: float
    stabilizer_generators: Tuple[Isometry, ...] = ()

    def __post_init__(self):
        d = self.point.dimension
        if not 1 <= self.rank <= d - 1:
            raise ConfigError(f"cusp rank {self.rank} outside [1, {d - 1}]")
        if not 0.0 < self.base_radius < 1.0:
            raise ConfigError(f"cusp base radius {self.base_radius!r} outside (0, 1)")
        object.__setattr__(self, "stabilizer_generators", tuple(self.stabilizer_generators))
        for h in self.stabilizer_generators:
            image = apply(h, self.point)
            if np.linalg.norm(image.direction - self.point.direction) > 1e-8:
                raise ConfigError(f"stabilizer generator does not fix the cusp {self.point}")
            if not h.is_parabolic():
                raise ConfigError(f"stabilizer generator with trace {h.trace} is not parabolic")
        if len(self.stabilizer_generators) < self.rank:
            logger.warning("Cusp at %s declares rank %d with %d stabilizer generators",
                           self.point, self.rank, len(self.stabilizer_generators))


@dataclass(frozen=True, eq=False)
class GroupSpec:
    generators: Tuple[Isometry, ...]
    parabolic_reps: Tuple[CuspDatum, ...] = ()
    dimension: int = 2
    label: str = "group"

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "parabolic_reps", tuple(self.parabolic_reps))
        if not self.generators:
            raise ConfigError(f"group {self.label!r} has no generators")
        for g in self.generators:
            if g.dimension != self.dimension:
                raise ConfigError(f"generator of dimension {g.dimension} in a group of dimension {self.dimension}")
        for cusp in self.parabolic_reps:
            if cusp.point.dimension != self.dimension:
                raise ConfigError(f"cusp of dimension {cusp.point.dimension} in a group of dimension {self.dimension}")

    @property
    def alphabet(self) -> np.ndarray:
        """Generators followed by the inverses that are new elements, shape (m, 2, 2)."""
        mats: List[np.ndarray] = []
        keys = set()
        for g in self.generators:
            for m in (g.matrix, g.inverse_matrix):
                key = _element_keys(m[None])[0]
                if key not in keys:
                    keys.add(key)
                    mats.append(m)
        return np.stack(mats)

    @property
    def inverse_letters(self) -> np.ndarray:
        """Index of the inverse of each alphabet letter."""
        alphabet = self.alphabet
        keys = _element_keys(alphabet)
        inverse_keys = _element_keys(np.stack([np.linalg.inv(m) for m in alphabet]))
        lookup = {k: i for i, k in enumerate(keys)}
        return np.array([lookup[k] for k in inverse_keys])


def _element_keys(matrices: np.ndarray, resolution: float | None = None) -> List[bytes]:
    """Hashable keys of projective matrices (M and -M share a key)."""
    resolution = settings.dedup_resolution if resolution is None else resolution
    flat = matrices.reshape(-1, 4)
    significant = np.abs(flat) > 1e-12
    pivot = flat[np.arange(len(flat)), np.argmax(significant, axis=1)]
    flip = (pivot.real < -1e-12) | ((np.abs(pivot.real) <= 1e-12) & (pivot.imag < 0))
    flat = np.where(flip[:, None], -flat, flat)
    q = np.rint(np.concatenate([flat.real, flat.imag], axis=1) / resolution).astype(np.int64)
    return [row.tobytes() for row in q]


# --- Orbit enumeration ---

@dataclass(frozen=True, eq=False)
class OrbitBall:
    """Orbit points g(0) with dist(0, g(0)) <= radius, sorted by distance."""
    label: str
    dimension: int
    radius: float
    matrices: np.ndarray
    directions: np.ndarray
    distances: np.ndarray
    word_lengths: np.ndarray
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.distances)

    @property
    def points(self) -> np.ndarray:
        return np.tanh(self.distances / 2.0)[:, None] * self.directions

    @property
    def entries(self) -> List[Tuple[Isometry, ModelPoint, float]]:
        return [
            (Isometry(m, self.dimension), ModelPoint(u, r), float(r))
            for m, u, r in zip(self.matrices, self.directions, self.distances)
        ]

    def count_within(self, T) -> np.ndarray:
        """N(T) = number of orbit points at distance <= T."""
        return np.searchsorted(self.distances, T, side="right")

    def to_frame(self) -> pd.DataFrame:
        cols = {f"x{i}": self.points[:, i] for i in range(self.dimension)}
        return pd.DataFrame({**cols, "distance": self.distances, "word_length": self.word_lengths})


@dataclass
class _Walk:
    matrices: List[np.ndarray] = field(default_factory=list)
    distances: List[np.ndarray] = field(default_factory=list)
    lengths: List[np.ndarray] = field(default_factory=list)
    truncated: bool = False


def _walk_subtree(alphabet: np.ndarray, roots: np.ndarray, T: float, cap: int,
                  slack: float, d: int, progress: bool, desc: str) -> _Walk:
    walk = _Walk()
    seen = set(_element_keys(np.eye(2, dtype=complex)[None]))
    frontier = roots
    bound = T + slack
    length = 1
    total = 0
    with tqdm(desc=desc, unit=" level", disable=not progress, leave=False) as bar:
        while len(frontier):
            keys = _element_keys(frontier)
            _, rho = origin_images(frontier, d)
            fresh = np.zeros(len(frontier), dtype=bool)
            for i, key in enumerate(keys):
                if key not in seen:
                    seen.add(key)
                    fresh[i] = True
            keep = fresh & (rho <= bound)
            inside = fresh & (rho <= T)
            walk.matrices.append(frontier[inside])
            walk.distances.append(rho[inside])
            walk.lengths.append(np.full(int(inside.sum()), length))
            total += int(inside.sum())
            if total > cap:
                walk.truncated = True
                logger.warning("Orbit enumeration stopped at %d elements (cap %d)", total, cap)
                break
            parents = frontier[keep]
            frontier = np.einsum("nij,mjk->nmik", parents, alphabet).reshape(-1, 2, 2)
            length += 1
            bar.update(1)
    return walk


def _enumerate_elements(spec: GroupSpec, T: float, cap: int, slack: float,
                        threads: int = 1, progress: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """All distinct elements with dist(0, g(0)) <= T, identity first."""
    alphabet = spec.alphabet
    d = spec.dimension
    if threads > 1 and len(alphabet) > 1:
        with ThreadPool(min(threads, len(alphabet))) as pool:
            walks = pool.starmap(
                _walk_subtree,
                [(alphabet, alphabet[i:i + 1], T, cap, slack, d, False, f"orbit {spec.label}[{i}]")
                 for i in range(len(alphabet))],
            )
    else:
        walks = [_walk_subtree(alphabet, alphabet, T, cap, slack, d, progress, f"orbit {spec.label}")]

    identity = np.eye(2, dtype=complex)[None]
    matrices = np.concatenate([identity] + [m for w in walks for m in w.matrices])
    distances = np.concatenate([[0.0]] + [r for w in walks for r in w.distances])
    lengths = np.concatenate([[0]] + [n for w in walks for n in w.lengths]).astype(int)
    truncated = any(w.truncated for w in walks)

    order = np.lexsort((lengths, distances))
    matrices, distances, lengths = matrices[order], distances[order], lengths[order]
    if len(walks) > 1:
        # subtrees overlap through relations
        keys = _element_keys(matrices)
        first = {}
        for i, key in enumerate(keys):
            if key not in first or lengths[i] < lengths[first[key]]:
                first[key] = i
        unique = np.array(sorted(first.values()))
        matrices, distances, lengths = matrices[unique], distances[unique], lengths[unique]
    if len(matrices) > cap:
        matrices, distances, lengths = matrices[:cap], distances[:cap], lengths[:cap]
        truncated = True
    return matrices, distances, lengths, truncated


def _first_of_clusters(coords: np.ndarray, resolution: float) -> np.ndarray:
    """Mask keeping the first point of each cluster of points closer than resolution."""
    keep = np.ones(len(coords), dtype=bool)
    if len(coords) < 2:
        return keep
    tree = spatial.cKDTree(coords)
    for i, j in sorted(tree.query_pairs(r=resolution)):
        if keep[i]:
            keep[j] = False
    return keep


def enumerate_orbit(spec: GroupSpec, T: float, cap: Optional[int] = None, *,
                    slack: Optional[float] = None, threads: int = 1, progress: bool = False) -> OrbitBall:
    """
    Breadth-first enumeration of the orbit of 0 within hyperbolic radius T.

    Words are extended as long as their orbit point stays within T + slack,
    so points inside T reached through a slightly longer detour are found.
    Exceeding the element cap sets the truncation flag instead of failing.
    """
    if T < 0:
        raise DomainError(f"truncation radius must be nonnegative, got {T!r}")
    cap = settings.orbit_cap if cap is None else cap
    if cap <= 0:
        raise DomainError(f"orbit cap must be positive, got {cap!r}")
    slack = settings.orbit_slack if slack is None else slack

    matrices, distances, lengths, truncated = _enumerate_elements(spec, T, cap, slack, threads, progress)
    directions, _ = origin_images(matrices, spec.dimension)
    coords = np.tanh(distances / 2.0)[:, None] * directions
    keep = _first_of_clusters(coords, settings.dedup_resolution)

    near_identity = int(np.count_nonzero(distances[1:] < 1e-3))
    if near_identity > 64:
        logger.warning("Group %s has %d elements moving 0 by less than 1e-3; generators may not be discrete",
                       spec.label, near_identity)

    ball = OrbitBall(
        label=spec.label,
        dimension=spec.dimension,
        radius=float(T),
        matrices=matrices[keep],
        directions=directions[keep],
        distances=distances[keep],
        word_lengths=lengths[keep],
        truncated=truncated,
    )
    logger.info("Enumerated %d orbit points of %s within T=%.3g%s",
                len(ball), spec.label, T, " (truncated)" if truncated else "")
    return ball


def estimate_delta(orbit: OrbitBall, window: Optional[Tuple[float, float]] = None,
                   step: float = 0.25) -> DeltaEstimate:
    """Slope of log N(T) against T over the window."""
    if window is None and orbit.radius <= 0:
        raise InsufficientDataError(f"orbit of {orbit.label} has truncation radius {orbit.radius}; nothing to fit")
    lo, hi = window if window is not None else (orbit.radius / 3.0, orbit.radius)
    if hi > orbit.radius + 1e-12:
        raise DomainError(f"window end {hi} exceeds the truncation radius {orbit.radius}")
    if not lo < hi:
        raise DomainError(f"empty window ({lo}, {hi})")
    grid = np.arange(lo, hi + step / 2.0, step)
    if len(grid) < 10:
        raise InsufficientDataError(f"only {len(grid)} samples in window ({lo}, {hi}); need at least 10")
    counts = orbit.count_within(grid)
    if np.all(counts == counts[0]):
        raise InsufficientDataError(f"orbit count is constant ({counts[0]}) over window ({lo}, {hi})")
    fit = stats.linregress(grid, np.log(counts))
    residuals = np.log(counts) - (fit.intercept + fit.slope * grid)
    half_width = stats.t.ppf(0.975, len(grid) - 2) * fit.stderr
    if orbit.truncated:
        logger.warning("Estimating delta from a truncated orbit of %s", orbit.label)
    return DeltaEstimate(
        label=orbit.label,
        delta=float(fit.slope),
        stderr=float(fit.stderr),
        ci_low=float(fit.slope - half_width),
        ci_high=float(fit.slope + half_width),
        residual=float(np.sqrt(np.mean(residuals ** 2))),
        window=(float(lo), float(hi)),
        samples=len(grid),
        truncated=orbit.truncated,
    )


# --- Limit set ---

def sample_limit_set(spec: GroupSpec, depth: int, count: int, seed: int, *,
                     min_norm: float = 1.0 - 1e-6, max_length: int = 4096) -> List[BoundaryPoint]:
    """
    Radial projections of deep orbit points along random reduced words.

    Each walk takes at least `depth` letters, never follows a letter by its
    inverse, and continues until |g(0)| >= min_norm.
    """
    if depth < 1:
        raise DomainError(f"depth must be at least 1, got {depth!r}")
    if count < 1:
        raise DomainError(f"count must be positive, got {count!r}")
    alphabet = spec.alphabet
    inverse = spec.inverse_letters
    m = len(alphabet)
    if m == 1 and inverse[0] == 0:
        raise InsufficientDataError(f"group {spec.label} is finite and has no limit set")

    rng = np.random.default_rng(seed)
    # cosh(dist(0, g(0))) = |g|^2 / 2
    min_rho = 2.0 * math.atanh(min_norm)
    threshold = 2.0 * math.cosh(min_rho)

    current = np.tile(np.eye(2, dtype=complex), (count, 1, 1))
    last = np.full(count, -1)
    active = np.ones(count, dtype=bool)
    for step in range(1, max_length + 1):
        idx = np.flatnonzero(active)
        forbidden = np.where(last[idx] >= 0, inverse[np.maximum(last[idx], 0)], -1)
        choices = np.where(forbidden >= 0,
                           rng.integers(0, max(m - 1, 1), size=len(idx)),
                           rng.integers(0, m, size=len(idx)))
        letters = np.where((forbidden >= 0) & (choices >= forbidden), choices + 1, choices)
        letters = np.minimum(letters, m - 1)
        current[idx] = current[idx] @ alphabet[letters]
        last[idx] = letters
        if step % 64 == 0:
            det = current[idx, 0, 0] * current[idx, 1, 1] - current[idx, 0, 1] * current[idx, 1, 0]
            current[idx] /= np.sqrt(det)[:, None, None]
        if step >= depth:
            norms = np.sum(np.abs(current[idx]) ** 2, axis=(1, 2))
            active[idx[norms >= threshold]] = False
        if not active.any():
            break
    if active.any():
        raise InsufficientDataError(
            f"{int(active.sum())} of {count} walks in {spec.label} stayed shallower than "
            f"|g(0)| = {min_norm} after {max_length} letters"
        )
    directions, _ = origin_images(current, spec.dimension)
    return [BoundaryPoint(u) for u in directions]


# --- Parabolic orbits and horoballs ---

def _cusp(spec: GroupSpec, p_index: int) -> CuspDatum:
    if not 0 <= p_index < len(spec.parabolic_reps):
        raise DomainError(f"cusp index {p_index} out of range for {spec.label} "
                          f"({len(spec.parabolic_reps)} cusps declared)")
    return spec.parabolic_reps[p_index]


def _cusp_images(spec: GroupSpec, cusp: CuspDatum, elements: np.ndarray,
                 base_level: float) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct images g(p) and their horoball levels, in element order."""
    dirs = boundary_images(elements, cusp.point)
    levels = base_level + log_derivatives_at(elements, cusp.point)
    keep = _first_of_clusters(dirs, settings.dedup_resolution)
    return dirs[keep], levels[keep]


def parabolic_orbit(spec: GroupSpec, p_index: int, T: float, *,
                    cap: Optional[int] = None) -> List[Tuple[BoundaryPoint, float]]:
    """Images xi = g(p) over elements within T, with horoball radii r_xi."""
    cusp = _cusp(spec, p_index)
    cap = settings.orbit_cap if cap is None else cap
    elements, _, _, _ = _enumerate_elements(spec, T, cap, settings.orbit_slack)
    base_level = math.log(cusp.base_radius / (1.0 - cusp.base_radius))
    dirs, levels = _cusp_images(spec, cusp, elements, base_level)
    return [(BoundaryPoint(u), float(expit(level))) for u, level in zip(dirs, levels)]


@dataclass(frozen=True, eq=False)
class HoroballSystem:
    """Pairwise disjoint horoballs at the cusp images emitted up to a truncation radius."""
    horoballs: Tuple[Horoball, ...]
    ranks: Tuple[int, ...]
    cusp_indices: Tuple[int, ...]
    shrink_factor: float
    radius: float

    def __len__(self) -> int:
        return len(self.horoballs)

    def __iter__(self):
        return iter(self.horoballs)

    @property
    def centers(self) -> np.ndarray:
        return np.stack([h.center for h in self.horoballs])

    @property
    def radii(self) -> np.ndarray:
        return np.array([h.radius for h in self.horoballs])

    def locate(self, base: BoundaryPoint, tol: float = 1e-8) -> Optional[int]:
        """Index of the horoball based at `base`, if emitted."""
        bases = np.stack([h.base.direction for h in self.horoballs])
        gaps = np.linalg.norm(bases - base.direction, axis=1)
        i = int(np.argmin(gaps))
        return i if gaps[i] <= tol else None


def first_overlap(centers: np.ndarray, radii: np.ndarray) -> Optional[Tuple[int, int]]:
    """A pair of intersecting balls, or None when the family is pairwise disjoint."""
    if len(radii) < 2:
        return None
    tree = spatial.cKDTree(centers)
    neighbours = tree.query_ball_point(centers, r=2.0 * radii)
    for i, candidates in enumerate(neighbours):
        for j in candidates:
            if j == i or radii[j] > radii[i]:
                continue
            if np.linalg.norm(centers[i] - centers[j]) < radii[i] + radii[j]:
                return i, j
    return None


def invariant_horoball_system(spec: GroupSpec, T: float, *, cap: Optional[int] = None) -> HoroballSystem:
    """
    Horoballs at every emitted cusp image, shrunk by a common factor until
    pairwise disjoint. Radii transform by the exact horosphere rule, so the
    system is invariant under the elements that keep it within T.
    """
    if not spec.parabolic_reps:
        raise ConfigError(f"group {spec.label} declares no parabolic points")
    cap = settings.orbit_cap if cap is None else cap
    elements, _, _, _ = _enumerate_elements(spec, T, cap, settings.orbit_slack)

    images = []
    for index, cusp in enumerate(spec.parabolic_reps):
        dirs, log_derivs = _cusp_images(spec, cusp, elements, 0.0)
        images.append((index, cusp, dirs, log_derivs))

    factor = 1.0
    for attempt in range(settings.max_shrink_halvings + 1):
        balls, ranks, owners = [], [], []
        for index, cusp, dirs, log_derivs in images:
            r = factor * cusp.base_radius
            levels = math.log(r / (1.0 - r)) + log_derivs
            for u, level in zip(dirs, levels):
                balls.append(Horoball.from_level(BoundaryPoint(u), level))
                ranks.append(cusp.rank)
                owners.append(index)
        centers = np.stack([h.center for h in balls])
        radii = np.array([h.radius for h in balls])
        overlap = first_overlap(centers, radii)
        if overlap is None:
            logger.info("Horoball system for %s: %d horoballs, shrink factor %.6g",
                        spec.label, len(balls), factor)
            return HoroballSystem(tuple(balls), tuple(ranks), tuple(owners), factor, float(T))
        logger.debug("Horoballs %s overlap at shrink factor %.6g", overlap, factor)
        factor /= 2.0
    raise ConfigError(
        f"no disjoint horoball system for {spec.label} after {settings.max_shrink_halvings} halvings; "
        "the group may not be geometrically finite"
    )


# --- Shipped test groups ---

def _translation(shift: complex, d: int) -> Isometry:
    return Isometry.from_entries(1, shift, 0, 1, dimension=d)


def _inversion(d: int = 2) -> Isometry:
    return Isometry.from_entries(0, -1, 1, 0, dimension=d)


def _cusp_at_infinity(d: int, rank: int, stabilizer: Sequence[Isometry], radius: float = 0.5) -> CuspDatum:
    return CuspDatum(BoundaryPoint(south_pole(d)), rank, radius, tuple(stabilizer))


def cyclic_parabolic(shift: float = 3.0) -> GroupSpec:
    t = _translation(shift, 2)
    return GroupSpec((t,), (_cusp_at_infinity(2, 1, [t]),), 2, f"cyclic_parabolic_{shift:g}")


def modular() -> GroupSpec:
    t = _translation(1.0, 2)
    return GroupSpec((t, _inversion()), (_cusp_at_infinity(2, 1, [t]),), 2, "modular")


def hecke(lam: float) -> GroupSpec:
    if lam < 2.0:
        raise ConfigError(f"Hecke parameter {lam} below 2 is not a free product")
    t = _translation(lam, 2)
    return GroupSpec((t, _inversion()), (_cusp_at_infinity(2, 1, [t]),), 2, f"hecke_{lam:g}")


def rank2_parabolic() -> GroupSpec:
    a, b = _translation(1.0, 3), _translation(1.0j, 3)
    return GroupSpec((a, b), (_cusp_at_infinity(3, 2, [a, b]),), 3, "rank2_parabolic")


def catalog() -> Dict[str, GroupSpec]:
    groups = [cyclic_parabolic(3.0), modular(), hecke(2.5), hecke(3.0), hecke(4.0), rank2_parabolic()]
    return {g.label: g for g in groups}


def get_group(name: str) -> GroupSpec:
    groups = catalog()
    if name not in groups:
        raise ConfigError(f"unknown group {name!r}; shipped groups: {', '.join(sorted(groups))}")
    return groups[name]
