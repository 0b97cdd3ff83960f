import numpy as np
import pytest

from conftest import sample
from ma_lab import analytic as an
from ma_lab.grid import GridSpec, PotentialField
from ma_lab.pipeline import (
    PipelineAbort,
    PipelineConfig,
    approximate_sequence,
    atom_density,
    direction_set,
    load_config,
    run_pipeline,
    select_center,
    singular_mask,
    smoothed_datum,
)
from ma_lab.reporting import dumps

QUAD = dict(boundary="quadratic:diag=2,0.5", grid=33, lo=[-1, -1], hi=[1, 1], scales=[0.1, 0.05])


@pytest.fixture(scope="module")
def radial_report():
    return run_pipeline(PipelineConfig(tau_sing=20))


def test_quadratic_pipeline_is_trivial():
    rep = run_pipeline(PipelineConfig(**QUAD))
    assert rep.passed and rep.failed_step is None
    assert rep.approximation_gap <= 1e-9
    assert rep.mask_nodes == 0 and rep.certified
    assert rep.ball_hessian_max == pytest.approx(2.0, rel=1e-9)
    assert rep.doubling_constant == pytest.approx(rep.outer_a_sup / rep.inner_a_sup * rep.doubling_constant)


def test_radial_pipeline_passes(radial_report):
    rep = radial_report
    assert rep.passed, rep.messages
    assert rep.mask_nodes > 0
    assert all(rep.steps.values())
    assert rep.ball_hessian_max <= rep.final_bound
    assert rep.cauchy_differences[1] < rep.cauchy_differences[0]
    r1, r2, r3, r4 = rep.radii
    assert r1 < r2 == rep.r < r3 < r4
    assert np.linalg.norm(np.subtract(rep.p, rep.target)) == pytest.approx(rep.r**2 / (2 * rep.M))


def test_pipeline_is_deterministic(radial_report):
    again = run_pipeline(PipelineConfig(tau_sing=20))
    assert dumps(again) == dumps(radial_report)


def test_crease_through_target_stops_center_selection():
    rep = run_pipeline(PipelineConfig(boundary="quadratic:diag=2,0.5,kink=0.5@0.6", tau_sing=20))
    assert not rep.passed
    assert rep.failed_step == "center selection"
    assert rep.steps["singular_mask"] and rep.mask_nodes > 0


def test_dimension_mismatch_is_reported():
    rep = run_pipeline(PipelineConfig(boundary="pogorelov:n=3"))
    assert not rep.passed and rep.failed_step == "input"


def test_smoothed_datum_keeps_quadratics():
    g = GridSpec.box(-1, 1, 17)
    q = an.quadratic(np.diag([4.0, 0.25]))
    raw = q(g.points()[g.boundary().reshape(-1)])
    assert np.allclose(smoothed_datum(q, 0.1, g), raw, atol=1e-13)


def test_atom_density_has_exact_mass():
    g = GridSpec.box(-1, 1, 33)
    d = atom_density(g, [(np.zeros(2), np.pi)], 0.1)
    assert d.sum() * np.prod(g.spacing) == pytest.approx(np.pi, rel=1e-12)
    assert np.all(d[g.boundary()] == 0)
    assert not atom_density(g, [(np.array([5.0, 0.0]), 1.0)], 0.1).any()


def test_approximation_rejects_increasing_scales():
    with pytest.raises(ValueError):
        approximate_sequence(an.radial(1.0), GridSpec.box(0, 1, 9), [0.05, 0.1])


def test_singular_mask_examples():
    g = GridSpec.box(-1, 1, 33)
    q = sample(an.quadratic(np.eye(2)), g)
    assert singular_mask([q]).count == 0
    flat = PotentialField(g, 0.5 * g.coords()[..., 0] ** 2)
    m = singular_mask([flat])
    assert np.array_equal(m.core, g.interior(1))
    assert not m.core[g.boundary()].any()
    cone = PotentialField(g, np.linalg.norm(g.coords(), axis=-1))
    m = singular_mask([cone], tau_sing=20)
    assert m.mask[g.nearest_index([0, 0])]
    assert m.mask.sum() >= m.core.sum()
    with pytest.raises(ValueError):
        singular_mask([])


def test_directions():
    d2, d3 = direction_set(2), direction_set(3)
    assert d2.shape == (16, 2) and np.allclose(d2[0], [1, 0])
    assert d3.shape == (26, 3)
    assert np.allclose(np.linalg.norm(d3, axis=1), 1)


def test_select_center_turns_away_from_a_half_space_mask():
    g = GridSpec.box(-1, 1, 41)
    mask = g.coords()[..., 0] >= 0.3
    # M = 1, r = 0.6: p = 0.18 e and the ball B_0.36(p) needs 0.18 cos t + 0.36 < 0.3
    choice = select_center(mask, 1.0, [0.6, 0.5], [0.0, 0.0], g)
    assert choice.r == 0.6 and choice.tried == 6
    assert np.allclose(choice.e, direction_set(2)[5])
    assert np.linalg.norm(choice.p) == pytest.approx(0.18)
    # every candidate ball contains the target, so a masked target is fatal
    with pytest.raises(PipelineAbort):
        select_center(g.coords()[..., 0] <= 0.0, 1.0, [0.6, 0.5], [0.0, 0.0], g)


def test_config_validation_and_loading(tmp_path):
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"grid": 65, "bogus": 1})
    for kw in ({"scales": [0.1, 0.2]}, {"grid": 3}, {"tau_sing": 0}, {"r_ratio": 1.0}, {"solver": {"damping": 2}}):
        with pytest.raises(ValueError):
            PipelineConfig(**kw)
    path = tmp_path / "p.toml"
    path.write_text('[pipeline]\nboundary = "radial:c=1"\ngrid = 33\ntau_sing = 20.0\n')
    cfg = load_config(path)
    assert cfg.grid == 33 and cfg.tau_sing == 20.0
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
