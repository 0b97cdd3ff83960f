import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import POGORELOV_GRID, RADIAL_BOX, sample
from ma_lab import analytic as an
from ma_lab.grid import GridSpec
from ma_lab.lagrangian import (
    build_metric,
    extrinsic_distance,
    geometry_fields,
    hessian_quantity_a,
    laplace_beltrami,
    metric_gradient_sq,
    valid_interior,
)


@given(
    l1=st.floats(0.3, 3),
    theta=st.floats(0, np.pi),
    p=st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=2),
)
def test_quadratic_identities_hold_to_roundoff(l1, theta, p):
    ref = an.rotated_quadratic(l1, theta)
    g = GridSpec.box(-1, 1, 17)
    u = sample(ref, g)
    A = np.asarray(ref.A)
    z = extrinsic_distance(u, p).z.values
    d = g.coords() - np.asarray(p)
    assert np.allclose(z, np.einsum("...i,ij,...j->...", d, A, d), atol=1e-12)
    m = build_metric(u)
    inner = valid_interior(m)
    assert np.abs(laplace_beltrami(z, m) - 4)[inner].max() <= 1e-8
    assert np.abs(metric_gradient_sq(z, m) - 4 * z)[inner].max() <= 1e-8


def test_extrinsic_distance_is_nonnegative_for_convex_fields():
    g = GridSpec(*RADIAL_BOX, (33, 33))
    u = sample(an.radial(1.0), g)
    for p in ([0.5, 0.5], [0.9, 0.3], [0.21, 1.19]):
        f = extrinsic_distance(u, p)
        assert f.z.values.min() >= -1e-12
        assert abs(f.z.values[g.nearest_index(p)]) <= 1e-2


def test_quantity_a_examples():
    g = GridSpec.box(-1, 1, 9)
    a, b = hessian_quantity_a(sample(an.quadratic(np.eye(2)), g))
    assert np.allclose(a, np.sqrt(2)) and np.allclose(b, np.log(4))
    a, _ = hessian_quantity_a(sample(an.quadratic(np.diag([4, 0.25])), g))
    assert np.allclose(a, (5 * 1.25) ** 0.25)


def test_quantity_a_matches_radial_oracle_at_second_order():
    errs = []
    for n in (65, 129):
        g = GridSpec(*RADIAL_BOX, (n, n))
        a, _ = hessian_quantity_a(sample(an.radial(1.0), g))
        inner = g.interior(1)
        errs.append(np.abs(a - oracles.radial_a(1.0, g.coords()))[inner].max())
    assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_degenerate_metric_is_masked(pogorelov_field):
    m = build_metric(pogorelov_field)
    axis = np.linalg.norm(POGORELOV_GRID.coords()[..., :2], axis=-1) == 0
    assert not m.valid_mask[axis].any()
    assert np.isnan(laplace_beltrami(pogorelov_field.values, m)[axis]).all()
    off = valid_interior(m) & ~axis
    assert off.any()


def test_geometry_fields_have_all_columns():
    g = GridSpec.box(-1, 1, 9)
    out = geometry_fields(sample(an.quadratic(np.eye(2)), g), [0.0, 0.0])
    assert set(out) == {"z", "a", "b", "lap_z", "grad_z_sq", "lap_a", "grad_a_sq", "valid"}
    assert all(v.shape == g.shape for v in out.values())
    assert out["valid"].sum() == 5 * 5
