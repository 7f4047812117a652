import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from colander_lab.capacity import capacity_oracle
from colander_lab.errors import ConfigError, DomainError, GeometryError
from colander_lab.mathcore import FuncSpec, Profile
from colander_lab.setgen import (BallUnion, Colander, clip_to_ball, make_cube_colander,
                                 make_shell_lattice, recurrence_check, signed_distance,
                                 threshold_r0)


def const_profile(d=2, R=1.0, eps=0.1):
    return Profile(d, FuncSpec.constant(R), FuncSpec.constant(eps))


def brute(x, centers, radii):
    return np.min(np.linalg.norm(centers - x, axis=1) - radii)


# ---- ball unions and distances ---------------------------------------------

def test_signed_distance_no_obstacles():
    c = Colander(10.0, BallUnion.empty(2))
    sd = signed_distance([3.0, 0.0], c)
    assert sd.to_outer == 7.0 and sd.to_obstacle == math.inf and sd.nearest_obstacle_index is None


def test_signed_distance_one_ball():
    c = Colander(4.0, BallUnion([[0.0, 0.0]], [1.0]))
    sd = signed_distance([2.0, 0.0], c)
    assert (sd.to_outer, sd.to_obstacle, sd.nearest_obstacle_index) == (2.0, 1.0, 0)


@pytest.mark.parametrize("x", [[5.0, 0.0], [0.5, 0.0]])
def test_signed_distance_outside_domain(x):
    c = Colander(4.0, BallUnion([[0.0, 0.0]], [1.0]))
    with pytest.raises(DomainError):
        signed_distance(x, c)


@pytest.mark.parametrize("n_balls", [5, 64, 65, 400])
def test_nearest_matches_brute_force(n_balls):
    rng = np.random.default_rng(n_balls)
    for _ in range(5 if n_balls > 64 else 20):
        d = int(rng.integers(2, 4))
        centers = rng.uniform(-20, 20, (n_balls, d))
        radii = rng.uniform(0.01, 3.0, n_balls)
        E = BallUnion(centers, radii)
        pts = rng.uniform(-25, 25, (200, d))
        dist, idx = E.nearest(pts)
        oracle = np.array([brute(x, centers, radii) for x in pts])
        assert np.array_equal(dist, oracle)
        assert np.allclose(np.linalg.norm(centers[idx] - pts, axis=1) - radii[idx], oracle)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 3.0))
def test_enlarging_radii_never_increases_distance(seed, factor):
    rng = np.random.default_rng(seed)
    E = BallUnion(rng.uniform(-5, 5, (30, 2)), rng.uniform(0.05, 0.5, 30))
    pts = rng.uniform(-6, 6, (50, 2))
    assert np.all(E.scaled_radii(factor).nearest(pts)[0] <= E.nearest(pts)[0])


def test_colander_rejects_far_obstacle():
    with pytest.raises(GeometryError):
        Colander(2.0, BallUnion([[5.0, 0.0]], [1.0]))


def test_colander_roundtrip(tmp_path):
    c = make_cube_colander(const_profile(), 10.0)
    c.save(tmp_path / "col")
    back = Colander.load(tmp_path / "col")
    assert back.rho_outer == c.rho_outer
    assert np.array_equal(back.obstacles.centers, c.obstacles.centers)
    assert np.array_equal(back.obstacles.radii, c.obstacles.radii)


# ---- cube colanders --------------------------------------------------------

def test_cube_colander_radii_and_cubes():
    c = make_cube_colander(const_profile(), 10.0, fill=1.0)
    assert len(c.obstacles) > 0
    assert np.allclose(c.obstacles.radii, 0.1)
    corner = np.linalg.norm(np.abs(c.obstacles.centers) + 2.0, axis=1)
    assert np.all(corner <= 10.0)
    # cube centres sit on the grid 4 (i + 1/2)
    assert np.allclose((c.obstacles.centers / 4.0 - 0.5) % 1.0, 0.0)


def test_cube_colander_too_small():
    c = make_cube_colander(const_profile(), 1.9)
    assert len(c.obstacles) == 0


def test_cube_colander_deterministic():
    a = make_cube_colander(const_profile(), 14.0, 0.5, seed=1)
    b = make_cube_colander(const_profile(), 14.0, 0.5, seed=2)
    assert np.array_equal(a.obstacles.centers, b.obstacles.centers)


# ---- shell lattices --------------------------------------------------------

def check_lattice(lat, n_check=10_000, seed=0):
    rng = np.random.default_rng(seed)
    for s in lat.shells:
        assert np.allclose(np.linalg.norm(s.centers, axis=1), s.radius)
        if len(s.centers) > 1:
            assert pdist(s.centers).min() > 2 * s.R0 + 2
        g = rng.standard_normal((n_check, lat.d))
        test = s.radius * g / np.linalg.norm(g, axis=1, keepdims=True)
        gaps = np.linalg.norm(test[:, None] - s.centers[None], axis=2).min(axis=1)
        assert gaps.max() <= 4 * s.R0


def test_circle_shell_count():
    p = const_profile(2, 7.0, 0.01)
    lat = make_shell_lattice(p, FuncSpec.constant(1.0), 50, seed=3, k_min=50)
    (s,) = lat.shells
    assert s.radius == pytest.approx(100.0)
    lo, hi = math.ceil(2 * math.pi * 100 / 8), math.floor(2 * math.pi * 100 / 4)
    assert lo <= len(s.centers) <= hi
    check_lattice(lat)


def test_sphere_shell_d3():
    p = const_profile(3, 7.0, 0.01)
    lat = make_shell_lattice(p, FuncSpec.constant(1.0), 50, seed=3, k_min=50)
    check_lattice(lat)


@pytest.mark.parametrize("d", [2, 3])
def test_lattice_gauge_R0(d):
    p = Profile(d, FuncSpec.gauge(2.0, (0.5,)), FuncSpec.constant(0.01))
    R0 = p.R.scaled(1 / 7)
    lat = make_shell_lattice(p, R0, 6, seed=11)
    assert lat.shells
    assert all(s.radius / 2 >= lat.r0 for s in lat.shells)
    check_lattice(lat, n_check=3000)


def test_lattice_empty_below_threshold():
    p = const_profile(2, 7.0, 0.01)
    lat = make_shell_lattice(p, FuncSpec.constant(1.0), 1)
    assert threshold_r0(FuncSpec.constant(1.0)) == pytest.approx(2.0)
    assert len(lat) == 0 and lat.centers.shape == (0, 2)


def test_lattice_deterministic():
    p = const_profile(2, 7.0, 0.01)
    a = make_shell_lattice(p, FuncSpec.constant(1.0), 8, seed=5)
    b = make_shell_lattice(p, FuncSpec.constant(1.0), 8, seed=5)
    assert np.array_equal(a.centers, b.centers)


# ---- recurrence predicate --------------------------------------------------

CAP = capacity_oracle(256)


def test_recurrence_empty_set_fails():
    p = const_profile()
    res = recurrence_check(BallUnion.empty(2), p, [[3.0, 0.0], [0.0, 5.0]], "raw", CAP)
    assert all(not r.passed and r.lhs == 0.0 for r in res)


def test_recurrence_full_ball_ratio_passes():
    p = const_profile()
    x = np.array([3.0, 0.0])
    res = recurrence_check(BallUnion([x], [1.5]), p, [x], "ratio", CAP)
    assert res[0].lhs == pytest.approx(1.0)
    assert res[0].rhs == pytest.approx(0.1, rel=1e-3)
    assert res[0].passed


def test_recurrence_raw_strict_boundary():
    # single ball of radius eps*R at the probe: capacity equals eps*R, strict test fails
    p = const_profile(2, 1.0, 0.1)
    x = np.array([3.0, 0.0])
    exact = lambda S: float(S.radii[0]) if len(S) == 1 else CAP(S)
    res = recurrence_check(BallUnion([x], [0.1]), p, [x], "raw", exact)
    assert res[0].lhs == pytest.approx(0.1) and not res[0].passed


def test_recurrence_needs_oracle():
    with pytest.raises(ConfigError):
        recurrence_check(BallUnion.empty(2), const_profile(), [[1.0, 0.0]], "raw")


def test_cube_colander_recurrent_at_dilated_scale():
    # one ball per cube of side 4R guarantees a full obstacle in every B(x, 4R)
    p = const_profile(2, 1.0, 0.1)
    c = make_cube_colander(p, 30.0)
    dilated = Profile(2, FuncSpec.constant(4.0), FuncSpec.constant(0.1 / 8))
    rng = np.random.default_rng(0)
    r = rng.uniform(0, 30.0 - 4.0, 50)
    a = rng.uniform(0, 2 * np.pi, 50)
    probes = np.column_stack((r * np.cos(a), r * np.sin(a)))
    res = recurrence_check(c.obstacles, dilated, probes, "ratio", CAP)
    assert all(x.passed for x in res)


def test_clip_to_ball_is_inside():
    rng = np.random.default_rng(4)
    E = BallUnion(rng.uniform(-3, 3, (40, 2)), rng.uniform(0.1, 1.0, 40))
    x, R = np.array([0.3, -0.2]), 2.0
    clipped, n = clip_to_ball(E, x, R)
    assert n > 0
    assert np.all(np.linalg.norm(clipped.centers - x, axis=1) + clipped.radii <= R + 1e-12)
    # each clipped ball lies inside one of the original balls
    for c, r in zip(clipped.centers, clipped.radii):
        assert np.any(np.linalg.norm(E.centers - c, axis=1) + r <= E.radii + 1e-12)


def test_volume_mode_exact_for_contained_balls():
    # two disjoint balls fully inside the probe ball: exact volume ratio, zero stderr
    p = const_profile(2, 1.0, 0.1)
    E = BallUnion([[3.0, 0.2], [3.0, -0.2]], [0.1, 0.05])
    res = recurrence_check(E, p, [[3.0, 0.0]], "volume")
    assert res[0].lhs == pytest.approx(0.01 + 0.0025, rel=1e-14)
    assert res[0].stderr == 0.0
    assert res[0].rhs == pytest.approx(math.pi * 0.01)


def test_volume_mode_overlap_and_membership():
    p = const_profile(2, 1.0, 0.1)
    # overlapping balls: union area by lens formula
    r, dx = 0.3, 0.3
    lens = 2 * r * r * math.acos(dx / (2 * r)) - 0.5 * dx * math.sqrt(4 * r * r - dx * dx)
    union = 2 * math.pi * r * r - lens
    E = BallUnion([[3.0, 0.0], [3.3, 0.0]], [r, r])
    res = recurrence_check(E, p, [[3.1, 0.0]], "volume", n_samples=200_000, seed=1)
    assert abs(res[0].lhs - union / math.pi) <= 4 * res[0].stderr + 1e-12
    # a half-plane membership adds half the probe disc (minus what E already covers)
    half = lambda pts: pts[:, 1] > 0
    res2 = recurrence_check(E, p, [[3.1, 0.0]], "volume", membership=half, n_samples=200_000)
    expected = 0.5 + 0.5 * union / math.pi
    assert abs(res2[0].lhs - expected) <= 4 * res2[0].stderr
