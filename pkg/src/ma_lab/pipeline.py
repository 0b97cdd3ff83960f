"""End-to-end local Hessian bound: approximation, singular mask, centre selection, doubling.

The chain of steps, for a reference datum ``u`` and approximating solutions ``u_k``:

1. ``u_k`` solve the Dirichlet problem with mollified boundary data; point
   masses of the reference's Monge-Ampere measure are spread into the
   right-hand side so that ``u_k -> u`` uniformly.
2. A heuristic singular mask marks nodes with huge or nearly flat Hessians.
3. A radius ``r`` and direction ``e`` are scanned until ``p = target + (r^2/2M) e``
   is off the mask and ``S^u_{4r}(p)`` sits well inside the half box.
4. The containments ``D^{u_k}_{3r}(p) in S^{u_k}_{3r}(p) in S^u_{4r}(p)`` are
   checked nodewise, the doubling inequality is run with radii
   ``(r1, r, 2r, 3r)`` and the Hessian on ``B_{r^2/M}(p)`` is bounded through
   ``|D^2u| <= a^{2n} - 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np
from scipy import ndimage

from . import __version__
from .analytic import ReferenceFunction, gauss_hermite_mollifier, parse_reference
from .convex import build_extrinsic_ball, build_section, euclidean_ball, gradient_bound_M
from .grid import GridSpec, PotentialField, dilate
from .inequalities import (
    CheckTolerances,
    DoublingSpec,
    InvalidSpecError,
    check_doubling,
    korevaar_probe,
)
from .lagrangian import CHECK_DEPTH
from .solver import Certificate, DirichletProblem, SolverConfig, solve_dirichlet

CONVERSION = "|D^2u| <= det(I + D^2u) - 1 = a^(2n) - 1 (convex u)"


class PipelineAbort(RuntimeError):
    def __init__(self, step: str, message: str):
        super().__init__(f"{step}: {message}")
        self.step = step


@dataclass
class PipelineConfig:
    boundary: str = "radial:c=1"
    grid: int = 65
    lo: list = field(default_factory=lambda: [-0.4, -1.0])
    hi: list = field(default_factory=lambda: [1.6, 1.0])
    target: list | None = None  # defaults to the box centre
    scales: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    atoms: bool = True
    tau_sing: float = 1e3
    tau_flat: float = 1e-3
    mask_iterates: int = 2
    mask_includes_target: bool = True
    rho_max: float = 0.1
    r_ratio: float = 0.8
    r_steps: int = 12
    r1_fractions: list = field(default_factory=lambda: [0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1])
    seed: int = 0
    solver: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid < 5:
            raise ValueError("grid needs at least 5 nodes per axis")
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have the same length")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError("scales must be a nonempty list of positive numbers")
        if any(b >= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError("scales must be strictly decreasing")
        for name in ("tau_sing", "tau_flat", "rho_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.r_ratio < 1 or self.r_steps < 1:
            raise ValueError("r scan needs 0 < r_ratio < 1 and r_steps >= 1")
        if self.mask_iterates < 1:
            raise ValueError("mask_iterates must be at least 1")
        if not all(0 < f < 1 for f in self.r1_fractions):
            raise ValueError("r1 fractions must lie in (0, 1)")
        SolverConfig(**self.solver)
        CheckTolerances(**self.tolerances)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def grid_spec(self) -> GridSpec:
        return GridSpec.box(self.lo, self.hi, self.grid)

    def target_point(self) -> np.ndarray:
        if self.target is not None:
            return np.asarray(self.target, float)
        return 0.5 * (np.asarray(self.lo, float) + np.asarray(self.hi, float))

    def r_values(self) -> list[float]:
        return [self.rho_max * self.r_ratio**j for j in range(self.r_steps)]


# ---------------------------------------------------------------- step 1

@dataclass
class ApproximationResult:
    fields: list
    reports: list
    cauchy: list  # sup |u_{k+1} - u_k|
    rhs_mass: list  # extra Monge-Ampere mass spread into each right-hand side


def smoothed_datum(ref, eps: float, grid: GridSpec, order: int = 7):
    """Gaussian-mollified boundary values minus their mean bias over the boundary.

    Subtracting a constant keeps convexity, and for quadratic data (whose
    mollification is a constant shift) restores the datum exactly.
    """
    pts = grid.points()[grid.boundary().reshape(-1)]
    raw = np.asarray(ref(pts), float)
    if eps <= 0:
        return raw
    smooth = np.asarray(gauss_hermite_mollifier(ref, eps, order)(pts), float)
    return smooth - float(np.mean(smooth - raw))


def atom_density(grid: GridSpec, atoms, eps: float) -> np.ndarray:
    """Sum of point masses spread as discrete Gaussians of width ``eps`` (exact discrete mass)."""
    out = np.zeros(grid.shape)
    x = grid.coords()
    cell = float(np.prod(grid.spacing))
    inner = grid.interior(1)
    for loc, mass in atoms:
        if not grid.contains(loc) or not inner[grid.nearest_index(loc)]:
            continue
        phi = np.exp(-np.sum((x - loc) ** 2, axis=-1) / (2 * eps * eps)) * inner
        out += mass * phi / (phi.sum() * cell)
    return out


def approximate_sequence(
    ref: ReferenceFunction,
    grid: GridSpec,
    scales,
    atoms: bool = True,
    solver: SolverConfig | None = None,
) -> ApproximationResult:
    """Solve one Dirichlet problem per mollification scale (warm-started from the previous one)."""
    scales = list(scales)
    if any(b >= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    bmask = grid.boundary()
    out, reports, masses = [], [], []
    prev = None
    for eps in scales:
        vals = np.zeros(grid.shape)
        vals[bmask] = smoothed_datum(ref, eps, grid)
        dens = atom_density(grid, ref.atoms() if atoms else [], eps)
        masses.append(float(dens.sum() * np.prod(grid.spacing)))
        prob = DirichletProblem(grid, vals, rhs=1.0 + dens if dens.any() else 1.0)
        u, rep = solve_dirichlet(prob, solver, initial=None if prev is None else prev.values)
        if not rep.converged:
            raise PipelineAbort("approximation", f"solve at scale {eps} did not converge")
        out.append(u)
        reports.append(rep)
        prev = u
    cauchy = [float(np.abs(b.values - a.values).max()) for a, b in zip(out, out[1:])]
    return ApproximationResult(out, reports, cauchy, masses)


# ---------------------------------------------------------------- step 2

@dataclass
class SingularMask:
    mask: np.ndarray
    core: np.ndarray  # nodes that triggered a threshold, before the closing layer
    tau_sing: float
    tau_flat: float
    label: str = "heuristic proxy"

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def singular_mask(fields_, tau_sing: float = 1e3, tau_flat: float = 1e-3, last: int | None = 2) -> SingularMask:
    """Nodes where ``|D^2u_k| >= tau_sing`` or ``lambda_min <= tau_flat`` for any of the last ``last`` fields.

    The outermost node layer is never marked (one-sided stencils there); the
    stored mask includes one dilation layer.
    """
    fields_ = list(fields_)
    if not fields_:
        raise ValueError("need at least one field")
    use = fields_[-last:] if last else fields_
    grid = use[0].grid
    inner = grid.interior(1)
    core = np.zeros(grid.shape, bool)
    for u in use:
        lam = u.hessian_eigenvalues
        core |= (np.abs(lam).max(axis=-1) >= tau_sing) | (lam[..., 0] <= tau_flat)
    core &= inner
    return SingularMask(dilate(core, 1), core, tau_sing, tau_flat)


# ---------------------------------------------------------------- step 3

def direction_set(dim: int) -> np.ndarray:
    """16 equally spaced planar directions from ``(1, 0)``; in 3D the 26 normalised neighbour offsets."""
    if dim == 2:
        t = 2 * np.pi * np.arange(16) / 16
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        v = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], float)
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    raise ValueError("directions only for dimension 2 or 3")


def inside_half_box(grid: GridSpec, mask: np.ndarray) -> bool:
    """Mask lies in the half box and away from its outer node layer."""
    half = grid.sub_box(0.5)
    well_inside = ndimage.binary_erosion(half, structure=np.ones((3,) * grid.dim, bool))
    return not np.any(mask & ~well_inside)


def point_in_mask(grid: GridSpec, mask: np.ndarray, p, radius: float = 0.0) -> bool:
    if mask[grid.nearest_index(p)]:
        return True
    return radius > 0 and bool(np.any(mask & euclidean_ball(grid, p, radius)))


@dataclass
class CenterChoice:
    r: float
    e: list
    p: list
    tried: int


def select_center(
    mask: SingularMask | np.ndarray,
    M: float,
    r_values,
    target,
    grid: GridSpec,
    u: PotentialField | None = None,
) -> CenterChoice:
    """First ``(r, e)`` in scan order with ``p = target + (r^2/2M) e`` off the mask.

    With ``u`` given, also requires ``S^u_{4r}(p)`` inside the half box.
    """
    m = mask.mask if isinstance(mask, SingularMask) else np.asarray(mask, bool)
    target = np.asarray(target, float)
    tried = 0
    for r in r_values:
        for e in direction_set(grid.dim):
            tried += 1
            p = target + (r * r / (2 * M)) * e
            if not grid.contains(p) or point_in_mask(grid, m, p, r * r / M):
                continue
            if u is not None and not inside_half_box(grid, build_section(u, p, 4 * r).mask):
                continue
            return CenterChoice(float(r), e.tolist(), p.tolist(), tried)
    raise PipelineAbort("center selection", "center selection failed: no admissible (r, e)")


# ---------------------------------------------------------------- step 4

@dataclass
class PipelineReport:
    version: str
    passed: bool
    failed_step: str | None
    M: float | None = None
    r: float | None = None
    e: list | None = None
    p: list | None = None
    radii: list | None = None
    target: list | None = None
    doubling_constant: float | None = None
    log_doubling_constant: float | None = None
    h: float | None = None
    inner_a_sup: float | None = None
    outer_a_sup: float | None = None
    inner_hessian_sup: float | None = None
    outer_hessian_sup: float | None = None
    ball_hessian_max: float | None = None
    ball_nodes: int | None = None
    final_bound: float | None = None
    direct_bound: float | None = None
    tol_doub: float | None = None
    conversion: str = CONVERSION
    mask_label: str = "heuristic proxy"
    mask_nodes: int | None = None
    center_candidates_tried: int | None = None
    cauchy_differences: list = field(default_factory=list)
    approximation_gap: float | None = None
    extra_mass: list = field(default_factory=list)
    certified: bool | None = None
    rhs_deviation_on_ball: float | None = None
    probe_z_at_max: float | None = None
    probe_passed: bool | None = None
    steps: dict = field(default_factory=dict)
    messages: list = field(default_factory=list)
    config: dict = field(default_factory=dict)


def _hessian_norm(u: PotentialField) -> np.ndarray:
    return np.abs(u.hessian_eigenvalues).max(axis=-1)


def run_pipeline(config: PipelineConfig) -> PipelineReport:
    """Steps 1-4.  Never raises for step failures: the report names the failing step."""
    rep = PipelineReport(version=__version__, passed=False, failed_step=None, config=config.to_dict())
    try:
        _run(config, rep)
    except PipelineAbort as exc:
        rep.failed_step = exc.step
        rep.messages.append(str(exc))
        rep.passed = False
    return rep


def _fail(rep: PipelineReport, step: str, ok: bool, msg: str):
    rep.steps[step] = bool(ok)
    if not ok:
        raise PipelineAbort(step, msg)


def _run(cfg: PipelineConfig, rep: PipelineReport):
    ref = parse_reference(cfg.boundary)
    grid = cfg.grid_spec()
    if ref.dim != grid.dim:
        raise PipelineAbort("input", f"datum is {ref.dim}-dimensional but the box is {grid.dim}-dimensional")
    tols = CheckTolerances(**cfg.tolerances)
    target = cfg.target_point()
    rep.target = target.tolist()

    # step 1
    approx = approximate_sequence(ref, grid, cfg.scales, cfg.atoms, SolverConfig(**cfg.solver))
    u = PotentialField(grid, np.asarray(ref(grid.points()), float).reshape(grid.shape))
    uk = approx.fields[-1]
    rep.cauchy_differences = approx.cauchy
    rep.extra_mass = approx.rhs_mass
    rep.approximation_gap = float(np.abs(uk.values - u.values).max())
    rep.steps["approximation"] = True

    # step 2
    members = ([u] if cfg.mask_includes_target else []) + approx.fields[-cfg.mask_iterates:]
    sm = singular_mask(members, cfg.tau_sing, cfg.tau_flat, last=None)
    rep.mask_nodes = sm.count
    rep.steps["singular_mask"] = True

    # step 3
    M = gradient_bound_M([u] + approx.fields)
    rep.M = M
    choice = select_center(sm, M, cfg.r_values(), target, grid, u)
    r = choice.r
    p = np.asarray(choice.p)
    rep.r, rep.e, rep.p, rep.center_candidates_tried = r, choice.e, choice.p, choice.tried
    rep.steps["center_selection"] = True

    r1 = None
    for f in cfg.r1_fractions:
        cand = f * r
        if np.any(build_section(u, p, 2 * cand).mask & sm.mask):
            continue
        if not np.any(build_extrinsic_ball(uk, p, cand).mask):
            continue
        r1 = cand
        break
    _fail(rep, "inner_radius", r1 is not None, "no r1 with S^u_{2r1}(p) off the mask and a nonempty inner ball")
    radii = (r1, r, 2 * r, 3 * r)
    rep.radii = list(radii)

    # step 4: containment chain for the last iterate
    ball4 = build_extrinsic_ball(uk, p, radii[3])
    sec_k = build_section(uk, p, 3 * r)
    sec_u = build_section(u, p, 4 * r)
    _fail(rep, "ball_in_section_k", not np.any(ball4.mask & ~sec_k.mask), "D^{u_k}_{3r}(p) not inside S^{u_k}_{3r}(p)")
    _fail(rep, "section_k_in_section_u", not np.any(sec_k.mask & ~sec_u.mask), "S^{u_k}_{3r}(p) not inside S^u_{4r}(p)")
    _fail(rep, "section_u_in_half_box", inside_half_box(grid, sec_u.mask), "S^u_{4r}(p) reaches the half-box edge")
    _fail(
        rep,
        "ball_in_interior",
        not np.any(ball4.mask & ~grid.interior(CHECK_DEPTH)),
        "D^{u_k}_{3r}(p) reaches the boundary layer",
    )
    rho = r * r / M
    bball = euclidean_ball(grid, p, rho)
    ball2 = build_extrinsic_ball(uk, p, radii[1])
    _fail(rep, "euclidean_in_extrinsic", not np.any(bball & ~ball2.mask), "B_{r^2/M}(p) not inside D^{u_k}_r(p)")

    # doubling on the last iterate
    last_rep = approx.reports[-1]
    cert = Certificate.from_report(last_rep)
    rep.certified = cert is not None
    rhs_dev = 0.0
    dens = atom_density(grid, ref.atoms() if cfg.atoms else [], cfg.scales[-1])
    if dens.any():
        rhs_dev = float(dens[ball4.mask].max()) if ball4.mask.any() else 0.0
    rep.rhs_deviation_on_ball = rhs_dev
    spec = DoublingSpec(tuple(p), *radii)
    try:
        dbl = check_doubling(uk, spec, cert, diagnostic=cert is None)
        probe = korevaar_probe(uk, spec, cert, diagnostic=cert is None)
    except InvalidSpecError as exc:
        raise PipelineAbort("doubling", str(exc)) from exc
    rep.doubling_constant = dbl.C
    rep.log_doubling_constant = dbl.log_C
    rep.h = dbl.h
    rep.inner_a_sup = dbl.sup_inner
    rep.outer_a_sup = dbl.sup_outer
    rep.tol_doub = dbl.tol_doub
    rep.probe_z_at_max = probe.z_at_max
    rep.probe_passed = probe.passed
    _fail(rep, "doubling", dbl.passed, f"doubling margin {dbl.margin:.3e} below -{dbl.tol_doub:.3e}")

    # final bound
    n = grid.dim
    hn = _hessian_norm(uk)
    inner_mask = build_extrinsic_ball(uk, p, radii[0]).mask
    rep.inner_hessian_sup = float(hn[inner_mask].max())
    rep.outer_hessian_sup = float(hn[ball2.mask].max())
    ball_nodes = bball.copy()
    if not ball_nodes.any():
        ball_nodes[grid.nearest_index(p)] = True
    rep.ball_nodes = int(bball.sum())
    rep.ball_hessian_max = float(hn[ball_nodes].max())
    log_final = 2 * n * (dbl.log_C + math.log(dbl.sup_inner))
    rep.final_bound = math.expm1(log_final) if log_final < 700 else math.inf
    rep.direct_bound = dbl.C * rep.inner_hessian_sup
    conv_ok = bool(np.all(hn[ball2.mask] <= dbl.sup_outer ** (2 * n) - 1 + 1e-12 * dbl.sup_outer ** (2 * n)))
    _fail(rep, "conversion", conv_ok, "Hessian norm exceeds a^(2n) - 1 on D_r(p)")
    _fail(
        rep,
        "final_bound",
        rep.ball_hessian_max <= rep.outer_hessian_sup
        and rep.ball_hessian_max <= rep.final_bound
        and rep.ball_hessian_max <= rep.direct_bound + dbl.tol_doub,
        "Hessian on B_{r^2/M}(p) exceeds the propagated bound",
    )
    rep.passed = True


def load_config(path) -> PipelineConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        data: dict[str, Any] = tomllib.load(fh)
    return PipelineConfig.from_dict(data.get("pipeline", data))
