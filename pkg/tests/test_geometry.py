import math

import numpy as np
import pytest

from conftest import random_boundary, random_isometry, random_point
from core.config import settings
from core.errors import DomainError
from core.geometry import (
    BoundaryPoint,
    Horoball,
    Isometry,
    ModelPoint,
    apply,
    busemann,
    busemann_level,
    conformal_derivative,
    dist,
    excursion_peak_time,
    excursion_profile,
    geodesic_point,
    gromov_product,
    horoball_depth,
    in_horoball,
    log_conformal_derivative,
    push_horoball,
)


def test_distance_from_origin():
    assert dist(ModelPoint.origin(), ModelPoint.origin()) == 0.0
    assert dist(ModelPoint.origin(), (0.5, 0.0)) == pytest.approx(math.log(3.0), abs=1e-12)


def test_points_outside_ball_rejected():
    with pytest.raises(DomainError):
        ModelPoint.from_coords((1.0, 0.0))
    with pytest.raises(DomainError):
        BoundaryPoint(np.array([0.5, 0.5]))


def test_deep_points_keep_their_depth():
    x = ModelPoint.polar((1.0, 0.0), 80.0)
    y = ModelPoint.polar((0.0, 1.0), 80.0)
    assert dist(ModelPoint.origin(), x) == 80.0
    # cosh d = 1 + 2|x - y|^2 / ((1 - |x|^2)(1 - |y|^2)) = e^160 / 4 to double precision
    assert dist(x, y) == pytest.approx(160.0 - math.log(2.0), abs=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_isometries_preserve_distance(rng, d):
    for _ in range(100):
        g = random_isometry(rng, d)
        x, y = random_point(rng, d), random_point(rng, d)
        assert dist(apply(g, x), apply(g, y)) == pytest.approx(dist(x, y), rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("d", [2, 3])
def test_identity_fixes_points(rng, d):
    e = Isometry.identity(d)
    x = random_point(rng, d)
    assert np.allclose(apply(e, x).coords, x.coords, atol=1e-12)
    assert conformal_derivative(e, random_boundary(rng, d)) == pytest.approx(1.0, abs=1e-12)


def test_non_unit_determinant_rejected():
    with pytest.raises(DomainError):
        Isometry.from_entries(2, 0, 0, 1)
    g = Isometry.from_entries(2, 0, 0, 1, normalize=True)
    assert g.matrix[0, 0] * g.matrix[1, 1] == pytest.approx(1.0)


@pytest.mark.parametrize("d", [2, 3])
def test_derivative_chain_rule(rng, d):
    for _ in range(50):
        g, h = random_isometry(rng, d), random_isometry(rng, d)
        xi = random_boundary(rng, d)
        lhs = log_conformal_derivative(g @ h, xi)
        rhs = log_conformal_derivative(g, apply(h, xi)) + log_conformal_derivative(h, xi)
        assert lhs == pytest.approx(rhs, abs=1e-7)


def test_derivative_matches_finite_difference(rng):
    for _ in range(20):
        g = random_isometry(rng, 2)
        theta = rng.uniform(0, 2 * math.pi)
        xi, eta = BoundaryPoint.from_angle(theta), BoundaryPoint.from_angle(theta + 1e-6)
        stretched = np.linalg.norm(apply(g, xi).direction - apply(g, eta).direction)
        ratio = stretched / np.linalg.norm(xi.direction - eta.direction)
        assert ratio == pytest.approx(conformal_derivative(g, xi), rel=1e-4)


def test_busemann_against_truncated_limit():
    xi = BoundaryPoint(np.array([1.0, 0.0]))
    y, z = ModelPoint.origin(), ModelPoint.from_coords((0.5, 0.0))
    assert busemann(xi, y, y) == 0.0
    assert busemann(xi, y, z) == pytest.approx(math.log(3.0), abs=1e-12)
    x = ModelPoint.polar(xi.direction, 2.0 * math.atanh(1.0 - 1e-8))
    assert dist(x, y) - dist(x, z) == pytest.approx(busemann(xi, y, z), abs=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_busemann_cocycle(rng, d):
    for _ in range(50):
        xi = random_boundary(rng, d)
        x, y, z = random_point(rng, d), random_point(rng, d), random_point(rng, d)
        assert busemann(xi, x, y) == pytest.approx(-busemann(xi, y, x), abs=1e-10)
        assert busemann(xi, x, z) == pytest.approx(busemann(xi, x, y) + busemann(xi, y, z), abs=1e-10)


def test_gromov_product():
    xi, eta = BoundaryPoint.from_angle(0.0), BoundaryPoint.from_angle(math.pi)
    assert gromov_product(xi, eta) == pytest.approx(0.0, abs=1e-12)
    close = BoundaryPoint.from_angle(1e-4)
    gap = np.linalg.norm(xi.direction - close.direction)
    assert abs(gromov_product(xi, close) - math.log(1.0 / gap)) <= settings.gromov_tolerance
    with pytest.raises(DomainError):
        gromov_product(xi, xi)


@pytest.mark.parametrize("d", [2, 3])
def test_busemann_level_is_the_limit_along_the_ray(rng, d):
    for _ in range(50):
        xi, x = random_boundary(rng, d), random_point(rng, d)
        truncated = dist(geodesic_point(xi, 25.0), x) - 25.0
        assert busemann_level(xi, x) == pytest.approx(truncated, abs=1e-6)


@pytest.mark.parametrize("d", [2, 3])
def test_gromov_product_is_the_limit_along_the_rays(rng, d):
    checked = 0
    for _ in range(60):
        xi, eta = random_boundary(rng, d), random_boundary(rng, d)
        if np.linalg.norm(xi.direction - eta.direction) < 0.05:
            continue
        t = 30.0
        truncated = t - 0.5 * dist(geodesic_point(xi, t), geodesic_point(eta, t))
        assert gromov_product(xi, eta) == pytest.approx(truncated, abs=1e-6)
        gap = np.linalg.norm(xi.direction - eta.direction)
        assert abs(gromov_product(xi, eta) - math.log(1.0 / gap)) <= settings.gromov_tolerance
        checked += 1
    assert checked > 40

@pytest.mark.parametrize("t", [0.0, 0.5, 3.0, 12.0, 30.0])
def test_geodesic_points_lie_at_distance_t(t):
    eta = BoundaryPoint.from_angle(0.7)
    x = geodesic_point(eta, t)
    assert dist(ModelPoint.origin(), x) == pytest.approx(t, abs=1e-12)
    if t > 0:
        assert np.allclose(x.direction, eta.direction)


def test_geodesic_point_at_log3():
    x = geodesic_point(BoundaryPoint(np.array([1.0, 0.0])), math.log(3.0))
    assert np.allclose(x.coords, [0.5, 0.0], atol=1e-12)


def test_horoball_depth():
    H = Horoball(BoundaryPoint(np.array([1.0, 0.0])), 0.5)
    assert horoball_depth(H, ModelPoint.origin()) == pytest.approx(0.0, abs=1e-12)
    assert in_horoball(H, (0.6, 0.0))
    assert not in_horoball(H, (-0.3, 0.0))
    assert Horoball.from_level(H.base, H.level).radius == pytest.approx(0.5)


@pytest.mark.parametrize("d", [2, 3])
def test_pushed_horoball_depths_are_invariant(rng, d):
    for _ in range(30):
        g = random_isometry(rng, d)
        H = Horoball(random_boundary(rng, d), rng.uniform(0.05, 0.4))
        x = random_point(rng, d)
        gH = push_horoball(g, H)
        assert horoball_depth(gH, apply(g, x)) == pytest.approx(horoball_depth(H, x), abs=1e-7)


def test_excursion_profile_tent():
    r, gap = math.exp(-2.0), math.exp(-5.0)
    assert excursion_profile(3.0, gap, r) == pytest.approx(1.0)
    assert excursion_profile(5.0, gap, r) == pytest.approx(3.0)
    assert excursion_profile(7.0, gap, r) == pytest.approx(1.0)


def test_excursion_profile_tracks_true_depth(rng):
    t = np.arange(0.1, 40.0, 0.1)
    inside_total = 0
    for _ in range(300):
        r = math.exp(rng.uniform(math.log(1e-3), math.log(0.3)))
        gap = r * rng.uniform(0.01, 0.9)
        theta0 = rng.uniform(0, 2 * math.pi)
        xi = BoundaryPoint.from_angle(theta0)
        eta = BoundaryPoint.from_angle(theta0 + 2.0 * math.asin(gap / 2.0))
        H = Horoball(xi, r)
        depths = np.array([horoball_depth(H, geodesic_point(eta, s)) for s in t])
        inside = depths > 0
        inside_total += int(inside.sum())
        estimate = excursion_profile(t[inside], gap, r)
        assert np.all(np.abs(estimate - depths[inside]) <= settings.excursion_tolerance)
    assert inside_total > 150


def test_excursion_peaks_at_the_gap_scale():
    r, gap = math.exp(-2.0), math.exp(-5.0)
    peak = excursion_peak_time(gap)
    assert peak == pytest.approx(5.0)
    assert excursion_profile(peak, gap, r) == pytest.approx(3.0)
    with pytest.raises(DomainError):
        excursion_profile(1.0, 0.0, r)


def test_tangent_horoballs_are_disjoint():
    a = Horoball(BoundaryPoint(np.array([1.0, 0.0])), 0.5)
    b = Horoball(BoundaryPoint(np.array([-1.0, 0.0])), 0.5)
    c = Horoball(BoundaryPoint(np.array([0.0, 1.0])), 0.5)
    assert a.disjoint_from(b)
    assert not a.disjoint_from(c)
