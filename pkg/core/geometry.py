"""
Primitives of the Poincaré ball model in dimensions 2 and 3.

Isometries are unit-determinant 2x2 matrices acting on the upper half-space
by Poincaré extension. The ball is reached through the inversion

    I(x) = p + 2 (x - p) / |x - p|^2,      p = south pole,

which is its own inverse, maps the half-space onto the ball, sends the point
at height 1 above 0 to the origin and sends infinity to p.

Interior points remember their hyperbolic distance from the origin, so that
1 - |x|^2 and friends stay exact for points many units deep.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy.special import expit, logit

from core.config import settings
from core.errors import DomainError

logger = logging.getLogger(__name__)

SUPPORTED_DIMENSIONS = (2, 3)


def _check_dimension(d: int) -> None:
    if d not in SUPPORTED_DIMENSIONS:
        raise DomainError(f"only dimensions {SUPPORTED_DIMENSIONS} are supported, got {d}")


def south_pole(d: int) -> np.ndarray:
    p = np.zeros(d)
    p[-1] = -1.0
    return p


def _first_axis(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = 1.0
    return e


def _log_one_minus_sq(rho):
    """log(1 - tanh(rho/2)^2), stable for large rho."""
    rho = np.asarray(rho, dtype=float)
    return math.log(4.0) - rho - 2.0 * np.log1p(np.exp(-rho))


def _one_minus_tau(rho):
    """1 - tanh(rho/2) without cancellation."""
    e = np.exp(-np.asarray(rho, dtype=float))
    return 2.0 * e / (1.0 + e)


# --- Points ---

@dataclass(frozen=True, eq=False)
class ModelPoint:
    """A point of the ball stored as (direction, hyperbolic distance from 0)."""
    direction: np.ndarray
    rho: float

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=float)
        _check_dimension(direction.size)
        if not (math.isfinite(self.rho) and 0.0 <= self.rho <= settings.max_depth):
            raise DomainError(f"depth {self.rho!r} outside [0, {settings.max_depth}]")
        object.__setattr__(self, "direction", direction / np.linalg.norm(direction))
        object.__setattr__(self, "rho", float(self.rho))

    @classmethod
    def origin(cls, d: int = 2) -> "ModelPoint":
        return cls(_first_axis(d), 0.0)

    @classmethod
    def from_coords(cls, coords, eps: float | None = None) -> "ModelPoint":
        v = np.asarray(coords, dtype=float).ravel()
        _check_dimension(v.size)
        eps = settings.boundary_eps if eps is None else eps
        norm = float(np.linalg.norm(v))
        if not norm < 1.0 - eps:
            raise DomainError(f"point {v.tolist()} is not inside the unit ball (|x| = {norm!r})")
        if norm == 0.0:
            return cls.origin(v.size)
        return cls(v / norm, 2.0 * math.atanh(norm))

    @classmethod
    def polar(cls, direction, rho: float) -> "ModelPoint":
        if rho < 0:
            raise DomainError(f"negative depth {rho!r}")
        return cls(np.asarray(direction, dtype=float), rho)

    @property
    def dimension(self) -> int:
        return self.direction.size

    @property
    def tau(self) -> float:
        return math.tanh(self.rho / 2.0)

    @property
    def coords(self) -> np.ndarray:
        return self.tau * self.direction

    @property
    def log_one_minus_sq(self) -> float:
        return float(_log_one_minus_sq(self.rho))

    def sq_dist_to_boundary(self, xi) -> np.ndarray:
        """|x - xi|^2 for boundary directions xi (shape (d,) or (n, d))."""
        xi = np.asarray(xi, dtype=float)
        tau = self.tau
        gap = _one_minus_tau(self.rho)
        return gap * gap + tau * np.sum((self.direction - xi) ** 2, axis=-1)

    def __repr__(self) -> str:
        return f"ModelPoint(coords={self.coords.tolist()}, rho={self.rho:.6g})"


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    """A point of the unit sphere."""
    direction: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float).ravel()
        _check_dimension(v.size)
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"boundary point {v.tolist()} has norm {norm!r}, expected 1")
        object.__setattr__(self, "direction", v / norm)

    @classmethod
    def normalized(cls, v) -> "BoundaryPoint":
        v = np.asarray(v, dtype=float).ravel()
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise DomainError("cannot project the origin to the boundary")
        return cls(v / norm)

    @classmethod
    def from_angle(cls, theta: float) -> "BoundaryPoint":
        return cls(np.array([math.cos(theta), math.sin(theta)]))

    @property
    def dimension(self) -> int:
        return self.direction.size

    def __repr__(self) -> str:
        return f"BoundaryPoint({self.direction.tolist()})"


PointLike = Union[ModelPoint, np.ndarray, list, tuple]


def as_model_point(x: PointLike) -> ModelPoint:
    if isinstance(x, ModelPoint):
        return x
    return ModelPoint.from_coords(x)


def as_boundary_point(xi) -> BoundaryPoint:
    if isinstance(xi, BoundaryPoint):
        return xi
    return BoundaryPoint(np.asarray(xi, dtype=float))


# --- Half-space charts ---

def _to_half_vector(z: complex, t: float, d: int) -> np.ndarray:
    if d == 2:
        return np.array([z.real, t])
    return np.array([z.real, z.imag, t])


def _from_half_vector(h: np.ndarray) -> complex:
    if h.size == 2:
        return complex(h[0], 0.0)
    return complex(h[0], h[1])


def ball_to_half(x: ModelPoint) -> tuple[complex, float]:
    d = x.dimension
    p = south_pole(d)
    s2 = float(x.sq_dist_to_boundary(p))
    y = x.coords
    h = p + 2.0 * (y - p) / s2
    t = math.exp(x.log_one_minus_sq) / s2
    return _from_half_vector(h), t


def half_to_ball(z: complex, t: float, d: int) -> ModelPoint:
    """Interior half-space point (z, t), t > 0, to the ball."""
    if not t > 0:
        raise DomainError(f"half-space height must be positive, got {t!r}")
    q = abs(z) ** 2 + (t - 1.0) ** 2
    rho = 2.0 * math.asinh(math.sqrt(q) / (2.0 * math.sqrt(t)))
    if rho == 0.0:
        return ModelPoint.origin(d)
    p = south_pole(d)
    x = _to_half_vector(z, t, d)
    diff = x - p
    y = p + 2.0 * diff / float(diff @ diff)
    norm = np.linalg.norm(y)
    direction = y / norm if norm > 0 else _first_axis(d)
    return ModelPoint(direction, min(rho, settings.max_depth))


def boundary_to_half(xi: BoundaryPoint) -> complex | None:
    """Boundary point to the extended plane; None stands for infinity."""
    d = xi.dimension
    p = south_pole(d)
    diff = xi.direction - p
    s2 = float(diff @ diff)
    if s2 < 1e-30:
        return None
    return _from_half_vector(p + 2.0 * diff / s2)


def half_to_boundary(z: complex | None, d: int) -> BoundaryPoint:
    p = south_pole(d)
    if z is None or not np.isfinite(abs(z)):
        return BoundaryPoint(p)
    x = _to_half_vector(z, 0.0, d)
    diff = x - p
    y = p + 2.0 * diff / float(diff @ diff)
    return BoundaryPoint.normalized(y)


def _moebius(m: np.ndarray, z: complex | None, t: float) -> tuple[complex | None, float]:
    a, b, c, d = m.ravel()
    if z is None:
        if c == 0:
            return None, 0.0
        return a / c, 0.0
    czd = c * z + d
    denom = abs(czd) ** 2 + abs(c) ** 2 * t * t
    if denom == 0.0:
        return None, 0.0
    w = ((a * z + b) * czd.conjugate() + a * c.conjugate() * t * t) / denom
    return w, t / denom


# --- Isometries ---

@dataclass(frozen=True, eq=False)
class Isometry:
    """Orientation-preserving isometry given by a unit-determinant 2x2 matrix."""
    matrix: np.ndarray
    dimension: int = 2

    def __post_init__(self):
        _check_dimension(self.dimension)
        m = np.asarray(self.matrix, dtype=complex).reshape(2, 2)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det - 1.0) > 1e-10:
            raise DomainError(f"isometry matrix must have unit determinant, got {det}")
        if self.dimension == 2 and np.abs(m.imag).max() > 1e-12:
            raise DomainError("planar isometries need real matrices")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, d: int = 2) -> "Isometry":
        return cls(np.eye(2), d)

    @classmethod
    def from_entries(cls, a, b, c, d, dimension: int = 2, normalize: bool = False) -> "Isometry":
        m = np.array([[a, b], [c, d]], dtype=complex)
        if normalize:
            m = _unit_det(m)
        return cls(m, dimension)

    @cached_property
    def inverse_matrix(self) -> np.ndarray:
        (a, b), (c, d) = self.matrix
        return np.array([[d, -b], [-c, a]])

    def inverse(self) -> "Isometry":
        return Isometry(self.inverse_matrix, self.dimension)

    def compose(self, other: "Isometry") -> "Isometry":
        """self after other."""
        return Isometry(_unit_det(self.matrix @ other.matrix), self.dimension)

    __matmul__ = compose

    @property
    def trace(self) -> complex:
        return complex(self.matrix[0, 0] + self.matrix[1, 1])

    def is_identity(self, tol: float = 1e-10) -> bool:
        m = self.matrix
        return bool(np.abs(m - np.eye(2)).max() < tol or np.abs(m + np.eye(2)).max() < tol)

    def is_parabolic(self, tol: float = 1e-8) -> bool:
        return abs(self.trace ** 2 - 4.0) < tol and not self.is_identity()

    def apply(self, x):
        return apply(self, x)


def _unit_det(m: np.ndarray) -> np.ndarray:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if det == 0:
        raise DomainError("singular matrix")
    return m / np.sqrt(complex(det))


def apply(g: Isometry, x):
    """Image of an interior or boundary point."""
    if isinstance(x, BoundaryPoint):
        _same_dimension(g, x.dimension)
        w, _ = _moebius(g.matrix, boundary_to_half(x), 0.0)
        return half_to_boundary(w, g.dimension)
    x = as_model_point(x)
    _same_dimension(g, x.dimension)
    z, t = ball_to_half(x)
    w, s = _moebius(g.matrix, z, t)
    return half_to_ball(w, s, g.dimension)


def _same_dimension(g: Isometry, d: int) -> None:
    if g.dimension != d:
        raise DomainError(f"isometry of dimension {g.dimension} applied to a point of dimension {d}")


def log_conformal_derivative(g: Isometry, xi: BoundaryPoint) -> float:
    """log |g'(xi)|, from the Poisson kernel at g^{-1}(0)."""
    w = apply(g.inverse(), ModelPoint.origin(g.dimension))
    return w.log_one_minus_sq - math.log(float(w.sq_dist_to_boundary(xi.direction)))


def conformal_derivative(g: Isometry, xi: BoundaryPoint) -> float:
    return math.exp(log_conformal_derivative(g, xi))


# --- Metric quantities ---

def dist(x: PointLike, y: PointLike) -> float:
    x, y = as_model_point(x), as_model_point(y)
    if x.rho == 0.0:
        return y.rho
    if y.rho == 0.0:
        return x.rho
    gap = float(np.linalg.norm(x.coords - y.coords))
    scale = math.exp(0.5 * (x.log_one_minus_sq + y.log_one_minus_sq))
    return 2.0 * math.asinh(gap / scale)


def busemann_level(xi: BoundaryPoint, x: PointLike) -> float:
    """Busemann function of xi normalized to vanish at the origin."""
    x = as_model_point(x)
    return math.log(float(x.sq_dist_to_boundary(xi.direction))) - x.log_one_minus_sq


def busemann(xi: BoundaryPoint, y: PointLike, z: PointLike) -> float:
    """lim_{x -> xi} [dist(x, y) - dist(x, z)]."""
    xi = as_boundary_point(xi)
    return busemann_level(xi, y) - busemann_level(xi, z)


def gromov_product(xi: BoundaryPoint, eta: BoundaryPoint) -> float:
    """Gromov product of two boundary points based at the origin."""
    xi, eta = as_boundary_point(xi), as_boundary_point(eta)
    gap = float(np.linalg.norm(xi.direction - eta.direction))
    if gap < 1e-15:
        raise DomainError("Gromov product of a point with itself is infinite")
    return math.log(2.0 / gap)


def geodesic_point(eta: BoundaryPoint, t: float) -> ModelPoint:
    """The point at distance t from 0 on the ray towards eta."""
    if t < 0:
        raise DomainError(f"geodesic parameter must be nonnegative, got {t!r}")
    eta = as_boundary_point(eta)
    return ModelPoint.polar(eta.direction, t)


# --- Horoballs ---

@dataclass(frozen=True, eq=False)
class Horoball:
    """The Euclidean ball B((1 - r) xi, r), tangent to the sphere at xi."""
    base: BoundaryPoint
    radius: float

    def __post_init__(self):
        if not 0.0 < self.radius < 1.0:
            raise DomainError(f"horoball radius must lie in (0, 1), got {self.radius!r}")

    @classmethod
    def from_level(cls, base: BoundaryPoint, level: float) -> "Horoball":
        return cls(base, float(expit(level)))

    @property
    def center(self) -> np.ndarray:
        return (1.0 - self.radius) * self.base.direction

    @property
    def level(self) -> float:
        """Busemann level of the bounding horosphere, log(r / (1 - r))."""
        return float(logit(self.radius))

    def disjoint_from(self, other: "Horoball", tol: float = 0.0) -> bool:
        gap = float(np.linalg.norm(self.center - other.center))
        return gap >= self.radius + other.radius - tol


def horoball_depth(H: Horoball, x: PointLike) -> float:
    """Signed hyperbolic distance from x to the horosphere, positive inside."""
    return H.level - busemann_level(H.base, x)


def in_horoball(H: Horoball, x: PointLike) -> bool:
    return horoball_depth(H, x) > 0.0


def push_horoball(g: Isometry, H: Horoball) -> Horoball:
    """g(H): the level shifts by log |g'(xi)|."""
    return Horoball.from_level(apply(g, H.base), H.level + log_conformal_derivative(g, H.base))


def excursion_profile(t, dist_to_xi: float, r_xi: float):
    """Tent-shaped depth estimate of the ray to eta inside the horoball at xi."""
    if not 0.0 < dist_to_xi < 2.0:
        raise DomainError(f"|xi - eta| must lie in (0, 2), got {dist_to_xi!r}")
    if not 0.0 < r_xi < 1.0:
        raise DomainError(f"r_xi must lie in (0, 1), got {r_xi!r}")
    t = np.asarray(t, dtype=float)
    log_inv_r = -math.log(r_xi)
    peak = excursion_peak_time(dist_to_xi)
    out = np.minimum(t - log_inv_r, 2.0 * peak - log_inv_r - t)
    return float(out) if out.ndim == 0 else out


def excursion_peak_time(dist_to_xi: float) -> float:
    return -math.log(dist_to_xi)


# --- Vectorized orbit helpers ---

def origin_images(matrices: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Directions and depths of g(0) for a stack of matrices of shape (n, 2, 2)."""
    a, b, c, dd = matrices[:, 0, 0], matrices[:, 0, 1], matrices[:, 1, 0], matrices[:, 1, 1]
    denom = np.abs(dd) ** 2 + np.abs(c) ** 2
    z = (b * np.conj(dd) + a * np.conj(c)) / denom
    t = 1.0 / denom
    q = np.abs(z) ** 2 + (t - 1.0) ** 2
    rho = 2.0 * np.arcsinh(np.sqrt(q) / (2.0 * np.sqrt(t)))
    if d == 2:
        h = np.stack([z.real, t], axis=1)
    else:
        h = np.stack([z.real, z.imag, t], axis=1)
    p = south_pole(d)
    diff = h - p
    y = p + 2.0 * diff / np.sum(diff ** 2, axis=1, keepdims=True)
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    dirs = np.where(norms > 0, y / np.where(norms > 0, norms, 1.0), _first_axis(d))
    return dirs, np.minimum(rho, settings.max_depth)


def inverse_stack(matrices: np.ndarray) -> np.ndarray:
    inv = np.empty_like(matrices)
    inv[:, 0, 0] = matrices[:, 1, 1]
    inv[:, 0, 1] = -matrices[:, 0, 1]
    inv[:, 1, 0] = -matrices[:, 1, 0]
    inv[:, 1, 1] = matrices[:, 0, 0]
    return inv


def _plane_to_sphere(w: np.ndarray, at_infinity: np.ndarray, d: int) -> np.ndarray:
    w = np.where(at_infinity, 0.0, w)
    if d == 2:
        h = np.stack([w.real, np.zeros_like(w.real)], axis=1)
    else:
        h = np.stack([w.real, w.imag, np.zeros_like(w.real)], axis=1)
    p = south_pole(d)
    diff = h - p
    y = p + 2.0 * diff / np.sum(diff ** 2, axis=1, keepdims=True)
    y[at_infinity] = p
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def _moebius_boundary(a, b, c, dd, z, z_at_infinity):
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.where(z_at_infinity, a, a * z + b)
        den = np.where(z_at_infinity, c, c * z + dd)
        at_infinity = den == 0
        w = num / np.where(at_infinity, 1.0, den)
    return w, at_infinity


def boundary_images(matrices: np.ndarray, xi: BoundaryPoint) -> np.ndarray:
    """Directions of g(xi) for a stack of matrices."""
    a, b, c, dd = matrices[:, 0, 0], matrices[:, 0, 1], matrices[:, 1, 0], matrices[:, 1, 1]
    z0 = boundary_to_half(xi)
    w, at_infinity = _moebius_boundary(a, b, c, dd, 0.0 if z0 is None else z0, z0 is None)
    return _plane_to_sphere(w, at_infinity, xi.dimension)


def map_boundary(g: Isometry, dirs: np.ndarray) -> np.ndarray:
    """Directions of g(xi) for a stack of boundary directions of shape (n, d)."""
    d = g.dimension
    p = south_pole(d)
    diff = np.asarray(dirs, dtype=float) - p
    s2 = np.sum(diff ** 2, axis=1)
    z_at_infinity = s2 < 1e-30
    h = p + 2.0 * diff / np.where(z_at_infinity, 1.0, s2)[:, None]
    z = h[:, 0] + (1j * h[:, 1] if d == 3 else 0.0)
    a, b, c, dd = g.matrix.ravel()
    w, at_infinity = _moebius_boundary(a, b, c, dd, z, z_at_infinity)
    return _plane_to_sphere(w, at_infinity, d)


def log_derivatives_along(g: Isometry, dirs: np.ndarray) -> np.ndarray:
    """log |g'(xi)| for a stack of boundary directions."""
    w = apply(g.inverse(), ModelPoint.origin(g.dimension))
    return log_poisson_kernel(w.direction, np.float64(w.rho), np.asarray(dirs, dtype=float))


def log_derivatives_at(matrices: np.ndarray, xi: BoundaryPoint) -> np.ndarray:
    """log |g'(xi)| for a stack of matrices."""
    dirs, rho = origin_images(inverse_stack(matrices), xi.dimension)
    return log_poisson_kernel(dirs, rho, xi.direction)


def log_poisson_kernel(dirs: np.ndarray, rho: np.ndarray, xi_dirs: np.ndarray) -> np.ndarray:
    """log[(1 - |w|^2) / |w - xi|^2] for interior points w = (dirs, rho)."""
    tau = np.tanh(rho / 2.0)
    gap = _one_minus_tau(rho)
    sq = gap ** 2 + tau * np.sum((dirs - xi_dirs) ** 2, axis=-1)
    return _log_one_minus_sq(rho) - np.log(sq)
