import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import POGORELOV_GRID, RADIAL_BOX, sample
from ma_lab import analytic as an
from ma_lab.convex import (
    DegenerateInputError,
    build_extrinsic_ball,
    build_section,
    euclidean_ball,
    gradient_bound_M,
    mask_diameter,
    section_diameter_scan,
    section_mask,
    section_stability_scan,
    subdifferential,
    subdifferential_monotonicity,
)
from ma_lab.grid import GridError, GridSpec, PotentialField

BOX = GridSpec.box(-1, 1, 41)
HALF_SQUARE = sample(an.quadratic(np.eye(2)), BOX)


def test_smooth_subdifferential_is_the_gradient():
    s = subdifferential(HALF_SQUARE, [0.3, 0.4])
    assert s.smooth
    assert np.allclose(s.slopes, [[0.3, 0.4]], atol=1e-12)


def test_crease_gives_both_one_sided_slopes():
    u = PotentialField(BOX, np.abs(BOX.coords()[..., 0]))
    s = subdifferential(u, [0.0, 0.0])
    assert not s.smooth
    xs = sorted(s.slopes[:, 0].round(9).tolist())
    assert xs == [-1.0, 1.0]
    assert np.allclose(s.slopes[:, 1], 0)
    assert np.allclose(s.support(np.array([[0.5, 0.0], [-0.5, 0.0]])), 0.5)


def test_subdifferential_on_degenerate_axis(pogorelov_field):
    s = subdifferential(pogorelov_field, [0.0, 0.0, 0.0])
    assert s.smooth and np.allclose(s.slopes, 0, atol=1e-12)
    sec = build_section(pogorelov_field, [0.0, 0.0, 0.0], 0.2, s)
    axis = np.linalg.norm(POGORELOV_GRID.coords()[..., :2], axis=-1) == 0
    assert sec.mask[axis].all()  # the section swallows the whole segment
    assert mask_diameter(POGORELOV_GRID, sec.mask) >= 0.7


def test_subdifferential_needs_interior_point():
    with pytest.raises(GridError):
        subdifferential(HALF_SQUARE, [-1.0, 0.0])


def test_nonconvex_crease_has_no_supporting_slope():
    u = PotentialField(BOX, -np.abs(BOX.coords()[..., 0]) + 2 * np.abs(BOX.coords()[..., 1]))
    with pytest.raises(DegenerateInputError):
        subdifferential(u, [0.0, 0.0])


@given(p=st.lists(st.floats(-0.4, 0.4), min_size=2, max_size=2), r=st.floats(0.05, 0.4))
def test_quadratic_section_and_ball_are_euclidean_balls(p, r):
    x = BOX.coords()
    sec = build_section(HALF_SQUARE, p, r)
    # 1/2|x-p|^2 < r^2
    d = np.linalg.norm(x - np.asarray(p), axis=-1)
    exact = d < np.sqrt(2) * r
    # u(p) is interpolated: off-node it carries an O(h^2) error
    margin = np.abs(0.5 * d * d - r * r) > BOX.spacing[0] ** 2
    assert np.array_equal(sec.mask[margin], exact[margin])
    ball = build_extrinsic_ball(HALF_SQUARE, p, r)
    margin = np.abs(d - r) > 1e-9
    assert np.array_equal(ball.mask[margin], euclidean_ball(BOX, p, r)[margin])
    assert ball.star_shaped
    assert np.array_equal(ball.component, ball.mask)


@given(p=st.lists(st.floats(0.4, 1.0), min_size=2, max_size=2), r1=st.floats(0.02, 0.3), dr=st.floats(0.0, 0.3))
def test_sections_are_nested_and_contain_their_centre(p, r1, dr):
    u = sample(an.radial(1.0), GridSpec(*RADIAL_BOX, (33, 33)))
    s = subdifferential(u, p)
    small, big = section_mask(u, s, r1), section_mask(u, s, r1 + dr)
    assert not np.any(small & ~big)
    assert big[u.grid.nearest_index(p)] or small.sum() == 0


def test_radius_must_be_positive():
    with pytest.raises(ValueError):
        build_section(HALF_SQUARE, [0, 0], 0.0)
    with pytest.raises(ValueError):
        build_extrinsic_ball(HALF_SQUARE, [0, 0], -1.0)


@given(seed=st.integers(0, 10_000), k=st.integers(2, 40))
def test_mask_diameter_matches_brute_force(seed, k):
    g = GridSpec.box(0, 1, 11)
    m = np.zeros(g.shape, bool)
    idx = np.random.default_rng(seed).integers(0, 11, size=(k, 2))
    m[idx[:, 0], idx[:, 1]] = True
    pts = g.points()[m.reshape(-1)]
    brute = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1)).max()
    assert mask_diameter(g, m) == pytest.approx(brute, abs=1e-12)


def test_gradient_bound():
    assert gradient_bound_M([HALF_SQUARE]) == pytest.approx(1 + 2 * np.sqrt(2))
    with pytest.raises(ValueError):
        gradient_bound_M([])


def test_radial_section_diameters_shrink():
    u = sample(an.radial(1.0), GridSpec(*RADIAL_BOX, (65, 65)))
    rows = section_diameter_scan(u, [0.2, 0.1, 0.05, 0.025])
    diams = [d for _, d, _ in rows]
    assert all(b < a for a, b in zip(diams, diams[1:]))


def test_stability_scan_on_mollified_quadratic():
    q = an.quadratic(np.diag([2.0, 0.5]))
    seq = [sample(an.gauss_hermite_mollifier(q, e), BOX) for e in (0.2, 0.1, 0.05)]
    scan = section_stability_scan(sample(q, BOX), seq, [0.1, 0.0], [0.1, 0.2], 0.05)
    assert scan.k0 is not None and scan.converging
    assert scan.sup_differences == sorted(scan.sup_differences, reverse=True)


@given(pts=st.lists(st.lists(st.floats(-0.8, 0.8), min_size=2, max_size=2), min_size=2, max_size=2))
def test_subdifferential_is_monotone(pts):
    u = PotentialField(BOX, np.abs(BOX.coords()[..., 0]) + 0.5 * BOX.coords()[..., 1] ** 2)
    # a crease point snaps to its nearest node, which costs O(h^2)
    assert subdifferential_monotonicity(u, [tuple(pts)]) >= -BOX.spacing[0] ** 2
