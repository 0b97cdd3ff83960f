import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import RADIAL_BOX, sample
from ma_lab import analytic as an
from ma_lab.grid import (
    GridError,
    GridSpec,
    MatrixField,
    PotentialField,
    ScalarField,
    dilate,
    gradient_field,
    hessian_field,
    interpolate,
)

coef = st.floats(-3, 3, allow_nan=False)


def test_rejects_bad_grids():
    with pytest.raises(GridError):
        GridSpec((0, 0), (1, 1), (4, 9))
    with pytest.raises(GridError):
        GridSpec((0,), (1,), (9,))
    with pytest.raises(GridError):
        GridSpec((0, 1), (1, 1), (9, 9))
    with pytest.raises(GridError):
        GridSpec((0, 0), (1, 1, 1), (9, 9))


@given(
    lo=st.lists(st.floats(-5, 5), min_size=2, max_size=3),
    width=st.floats(0.1, 4),
    n=st.integers(5, 40),
)
def test_node_map_is_exact_and_roundtrips(lo, width, n):
    hi = [v + width for v in lo]
    g = GridSpec.box(lo, hi, n)
    idx = tuple(np.arange(g.dim) % n)
    x = g.node(idx)
    assert np.array_equal(x, np.asarray(g.lo) + np.asarray(idx) * np.asarray(g.spacing))
    assert g.nearest_index(x) == idx
    assert GridSpec.from_dict(g.to_dict()) == g
    assert g.points().shape == (g.size, g.dim)


def test_depth_and_masks():
    g = GridSpec.box(0, 1, 7)
    assert g.boundary().sum() == 7 * 7 - 5 * 5
    assert g.interior(2).sum() == 3 * 3
    assert g.sub_box(1.0).all()
    assert g.sub_box(0.5).sum() == 3 * 3  # nodes 2/6, 3/6, 4/6 per axis


def test_scalar_field_rejects_nan_unless_masked():
    g = GridSpec.box(0, 1, 5)
    v = np.zeros(g.shape)
    v[2, 2] = np.nan
    with pytest.raises(GridError):
        ScalarField(g, v)
    ScalarField(g, v, masked=True)


@pytest.mark.parametrize("dim", [2, 3])
@given(data=st.data())
def test_derivatives_exact_on_quadratic_polynomials(dim, data):
    g = GridSpec.box(-1.0, 1.5, 9, dim)
    A = np.array(data.draw(st.lists(coef, min_size=dim * dim, max_size=dim * dim))).reshape(dim, dim)
    A = A + A.T
    b = np.array(data.draw(st.lists(coef, min_size=dim, max_size=dim)))
    c = data.draw(coef)
    x = g.coords()
    vals = 0.5 * np.einsum("...i,ij,...j->...", x, A, x) + x @ b + c
    u = PotentialField(g, vals)
    scale = 1e-12 * max(1.0, np.abs(vals).max()) / min(g.spacing) ** 2
    assert np.abs(gradient_field(u) - (x @ A + b)).max() <= 1e-12 * max(1.0, np.abs(vals).max()) / min(g.spacing)
    H = hessian_field(u).full()
    assert np.abs(H - A).max() <= scale
    assert np.array_equal(H, np.swapaxes(H, -1, -2))


def test_matrix_field_stores_upper_triangle():
    g = GridSpec.box(0, 1, 5)
    M = np.random.default_rng(1).normal(size=g.shape + (2, 2))
    mf = MatrixField.from_full(g, M)
    assert mf.upper.shape == g.shape + (3,)
    F = mf.full()
    assert np.array_equal(F, np.swapaxes(F, -1, -2))


def test_constant_has_zero_gradient():
    g = GridSpec.box(0, 1, 9)
    assert np.all(gradient_field(PotentialField(g, np.full(g.shape, 3.0))) == 0)


def _radial_errors(n):
    g = GridSpec(*RADIAL_BOX, (n, n))
    ref = an.radial(1.0)
    u = sample(ref, g)
    _, grad, hess = ref.evaluate(g.points())
    inner = g.interior(1).reshape(-1)
    ge = np.abs(u.gradient.reshape(-1, 2) - grad)[inner].max()
    he = np.abs(u.hessian.full().reshape(-1, 2, 2) - hess)[inner].max()
    de = np.abs(u.hessian.det().reshape(-1) - 1.0)[inner].max()
    return ge, he, de


def test_radial_derivative_errors_shrink_at_second_order():
    coarse, fine = _radial_errors(65), _radial_errors(129)
    for e0, e1 in zip(coarse, fine):
        assert 3.2 <= e0 / e1 <= 4.8


def test_interpolation_examples():
    g = GridSpec.box(0, 1, 11)
    x = g.coords()
    f = ScalarField(g, x[..., 0] + 2 * x[..., 1])
    assert interpolate(f, [0.3, 0.7]) == pytest.approx(1.7, abs=1e-14)
    assert interpolate(f, g.node((3, 4))) == f.values[3, 4]
    q = ScalarField(g, 0.5 * (x**2).sum(-1))
    h = g.spacing[0]
    p = np.array([0.35, 0.45])  # cell midpoint
    assert abs(interpolate(q, p) - 0.5 * p @ p) <= h * h / 4 * (1 + 1e-9)  # equality at cell centres
    with pytest.raises(GridError):
        interpolate(f, [1.5, 0.5])


@given(st.floats(0, 1), st.floats(0, 1), coef, coef, coef)
def test_interpolation_reproduces_affine(s, t, a0, a1, a2):
    g = GridSpec((-1, 2), (3, 5), (9, 13))
    x = g.coords()
    f = ScalarField(g, a0 + a1 * x[..., 0] + a2 * x[..., 1])
    p = np.array([-1 + 4 * s, 2 + 3 * t])
    assert interpolate(f, p) == pytest.approx(a0 + a1 * p[0] + a2 * p[1], abs=1e-12 * (1 + abs(a0) + abs(a1) + abs(a2)) * 10)


def test_dilate_grows_by_full_neighbourhood():
    m = np.zeros((7, 7), bool)
    m[3, 3] = True
    assert dilate(m, 1).sum() == 9
    assert dilate(m, 2).sum() == 25
    assert np.array_equal(dilate(m, 0), m)


def test_convexity_modulus_flags_degenerate_axis(pogorelov_field):
    assert pogorelov_field.convexity_modulus <= 1e-12
    q = sample(an.quadratic(np.eye(2)), GridSpec.box(-1, 1, 9))
    assert q.convexity_modulus == pytest.approx(1.0)
    assert q.check_convex()
