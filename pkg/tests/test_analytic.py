import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import POGORELOV_GRID, sample
from ma_lab import analytic as an
from ma_lab.grid import GridSpec


def test_quadratic_examples():
    v, g, H = an.eval_quadratic(np.eye(2), [1.0, 1.0])
    assert v == 1.0 and np.array_equal(g, [1, 1]) and np.array_equal(H, np.eye(2))
    v, g, _ = an.eval_quadratic(np.diag([4, 0.25]), [1.0, 0.0])
    assert v == 2.0 and np.array_equal(g, [4, 0])


@given(theta=st.floats(0, np.pi), l1=st.floats(0.2, 5), x=st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_rotated_quadratics_have_unit_determinant(theta, l1, x):
    f = an.rotated_quadratic(l1, theta)
    _, _, H = f.evaluate(np.array(x))
    assert abs(np.linalg.det(H) - 1) <= 1e-12


@pytest.mark.parametrize(
    "A",
    [np.diag([2.0, 2.0]), np.array([[1.0, 2.0], [0.0, 1.0]]), np.diag([-1.0, -1.0]), np.ones((2, 3))],
)
def test_quadratic_rejects_bad_matrices(A):
    with pytest.raises(an.ParameterError):
        an.quadratic(A)


def test_radial_closed_form_against_symbolic_oracle():
    r = np.linspace(0.05, 2.0, 40)
    x = np.stack([r, np.zeros_like(r)], axis=1)
    v, g, H = an.eval_radial(1.0, x)
    assert np.allclose(v, oracles.radial_value(1.0, r), rtol=1e-13, atol=1e-15)
    assert np.allclose(g[:, 0], np.sqrt(r * r + 1), rtol=1e-14)
    assert np.allclose(H[:, 0, 0], oracles.radial_upp(1.0, r), rtol=1e-13)
    assert np.allclose(np.linalg.det(H), 1.0, atol=1e-12)


def test_radial_at_unit_radius():
    _, g, H = an.eval_radial(1.0, [1.0, 0.0])
    assert g[0] == pytest.approx(np.sqrt(2), abs=1e-15)
    assert H[0, 0] == pytest.approx(1 / np.sqrt(2), abs=1e-15)
    assert H[1, 1] == pytest.approx(np.sqrt(2), abs=1e-15)


def test_radial_c0_is_half_square():
    x = np.random.default_rng(0).normal(size=(10, 2))
    v, g, H = an.eval_radial(0.0, x)
    assert np.allclose(v, 0.5 * (x**2).sum(1)) and np.allclose(g, x) and np.allclose(H, np.eye(2))


def test_radial_is_singular_at_origin():
    # u'' -> 0 and u'/r -> infinity: the eigenvalues split as r -> 0
    _, _, H = an.eval_radial(1.0, np.array([[1e-3, 0.0], [0.0, 0.0]]))
    lam = np.linalg.eigvalsh(H[0])
    assert lam[0] < 2e-3 and lam[1] > 500
    assert np.all(np.isnan(H[1]))
    assert an.radial(1.0).excluded(np.array([[0.05, 0.0], [0.5, 0.0]])).tolist() == [True, False]
    with pytest.raises(an.ParameterError):
        an.radial(-1.0)


def test_radial_value_is_stable_near_origin():
    v = an.eval_radial(1.0, [1e-9, 0.0])[0]
    assert v == pytest.approx(1e-9, rel=1e-12)  # u ~ sqrt(c) r near 0


def test_pogorelov_examples():
    v, g = an.eval_pogorelov(3, [0.0, 0.0, 0.2])
    assert v == 0 and np.all(g == 0)
    assert an.eval_pogorelov(3, [1.0, 0.0, 0.0])[0] == 1.0
    _, gp = an.eval_pogorelov(3, [0.0, 0.0, 0.0])
    _, gq = an.eval_pogorelov(3, [0.0, 0.0, 0.3])
    assert np.dot(np.array([0, 0, -0.3]), gp - gq) == 0
    with pytest.raises(an.ParameterError):
        an.eval_pogorelov(3, [2.0, 0.0, 0.0])
    with pytest.raises(an.ParameterError):
        an.eval_pogorelov(2, [0.5, 0.0])


def test_pogorelov_convex_off_axis(pogorelov_field):
    g = POGORELOV_GRID
    off = g.interior(1) & (np.linalg.norm(g.coords()[..., :2], axis=-1) > 0)
    assert pogorelov_field.hessian_eigenvalues[..., 0][off].min() >= -1e-8


@pytest.mark.parametrize("ref", [an.quadratic(np.diag([4, 0.25])), an.radial(1.0)])
def test_sampled_solutions_have_second_order_determinant_residual(ref):
    box = ((-1, -1), (1, 1)) if ref.kind == "quadratic" else ((0.2, 0.2), (1.2, 1.2))
    res = []
    for n in (65, 129):
        u = sample(ref, GridSpec(*box, (n, n)))
        res.append(np.abs(u.hessian.det() - 1)[u.grid.interior(1)].max())
    if ref.kind == "quadratic":
        assert max(res) <= 1e-10
    else:
        assert 3.2 <= res[0] / res[1] <= 4.8


@pytest.mark.parametrize(
    "spec,kind",
    [
        ("radial:c=1", "radial"),
        ("quadratic:diag=4,0.25", "quadratic"),
        ("quadratic:A=2,0;0,0.5", "quadratic"),
        ("quadratic:identity3", "quadratic"),
        ("quadratic:rot=2,30", "quadratic"),
        ("pogorelov:n=3", "pogorelov"),
        ("radial:c=0.5,kink=0.2@0.7", "radial"),
    ],
)
def test_parse_reference(spec, kind):
    f = an.parse_reference(spec)
    assert f.kind == kind
    assert an.parse_reference(f.label()).kind == kind


def test_parse_reference_errors():
    for bad in ("cubic:x=1", "quadratic:diag=2,2", "radial:c=abc"):
        with pytest.raises(an.ParameterError):
            an.parse_reference(bad)


def test_kink_adds_crease():
    f = an.parse_reference("quadratic:identity2,kink=0.5@0.1")
    v0 = f([0.1, 0.0])
    assert f([0.3, 0.0]) - v0 == pytest.approx(0.5 * 0.2 + 0.5 * (0.09 - 0.01))


def test_mollifier_shifts_quadratics_by_trace_term():
    q = an.quadratic(np.diag([4, 0.25]))
    m = an.gauss_hermite_mollifier(q, 0.1)
    x = np.random.default_rng(2).normal(size=(5, 2))
    assert np.allclose(m(x) - q(x), 0.01 * 4.25 / 2, atol=1e-14)
