"""Numerical checks of the Jacobi inequality and the extrinsic doubling inequality.

Tolerances follow ``tol = coef * h^2`` with ``h`` the largest grid spacing.
The g-calculus checks read nodes in the concentric ``region`` sub-box (the
half box by default); closer to the box faces the discrete solution carries
a corner layer that fourth differences amplify.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, PotentialField, dilate
from .lagrangian import (
    CHECK_DEPTH,
    build_metric,
    extrinsic_distance,
    hessian_quantity_a,
    laplace_beltrami,
    metric_gradient_sq,
    valid_interior,
)
from .solver import Certificate

# beyond this exponent exp() overflows in double precision
EXP_LIMIT = 700.0


class InvalidSpecError(ValueError):
    pass


class NotCertifiedError(ValueError):
    pass


@dataclass(frozen=True)
class CheckTolerances:
    id_coef: float = 50.0
    jac_coef: float = 25.0
    region: float = 0.5

    def __post_init__(self):
        if not (self.id_coef > 0 and self.jac_coef > 0 and 0 < self.region <= 1):
            raise ValueError("tolerance coefficients must be positive and region in (0, 1]")

    def tol_id(self, grid: GridSpec) -> float:
        return self.id_coef * max(grid.spacing) ** 2

    def tol_jac(self, grid: GridSpec) -> float:
        return self.jac_coef * max(grid.spacing) ** 2


def check_nodes(u: PotentialField, region: float, exclude: np.ndarray | None = None, eig_floor: float = 1e-8):
    """Metric plus the node set read by the checks; ``exclude`` removes nodes (e.g. near a cone point)."""
    m = build_metric(u, eig_floor)
    sel = valid_interior(m, CHECK_DEPTH) & u.grid.sub_box(region)
    if exclude is not None:
        sel &= ~exclude
    return m, sel


def _require_certificate(u: PotentialField, cert: Certificate | None, diagnostic: bool) -> bool:
    """True when ``u`` is certified; raises unless running diagnostically."""
    if cert is not None and cert.matches(u):
        return True
    if diagnostic:
        return False
    if cert is None:
        raise NotCertifiedError("field carries no solution certificate (use diagnostic mode for non-solutions)")
    raise NotCertifiedError("certificate residual does not match the field")


# ---------------------------------------------------------------- identities

@dataclass
class IdentityReport:
    lap_z_error: float  # sup |Lap_g z - 2n|
    grad_gap_min: float  # min (|grad_g z|^2 - 4z)
    tol_id: float
    worst_center: list
    centers: int
    passed: bool


def check_identities(
    u: PotentialField, centers, tol: CheckTolerances = CheckTolerances(), exclude: np.ndarray | None = None
) -> IdentityReport:
    n = u.grid.dim
    m, sel = check_nodes(u, tol.region, exclude)
    if not sel.any():
        raise InvalidSpecError("no valid nodes in the check region")
    worst, lap_err, gap_min = None, 0.0, math.inf
    centers = np.atleast_2d(np.asarray(centers, float))
    for p in centers:
        z = extrinsic_distance(u, p).z.values
        e = float(np.abs(laplace_beltrami(z, m)[sel] - 2 * n).max())
        gmin = float((metric_gradient_sq(z, m) - 4 * z)[sel].min())
        if e > lap_err or worst is None:
            worst = p.tolist()
        lap_err = max(lap_err, e)
        gap_min = min(gap_min, gmin)
    t = tol.tol_id(u.grid)
    return IdentityReport(lap_err, gap_min, t, worst, len(centers), lap_err <= t and gap_min >= -t)


# ------------------------------------------------------------------- Jacobi

@dataclass
class JacobiReport:
    min_defect: float
    location: list
    tol_jac: float
    passed: bool
    certified: bool
    min_defect_b: float
    sign_consistent: bool
    form_gap: float  # sup |defect_b - 2n defect / a|
    nodes: int
    note: str = ""


def jacobi_defect(u: PotentialField, eig_floor: float = 1e-8):
    """``(d, d_b, a)`` with ``d = Lap_g a - 2|grad_g a|^2/a`` and ``d_b = Lap_g b - |grad_g b|^2/(2n)``."""
    m = build_metric(u, eig_floor)
    a, b = hessian_quantity_a(u)
    n = u.grid.dim
    d = laplace_beltrami(a, m) - 2.0 * metric_gradient_sq(a, m) / a
    db = laplace_beltrami(b, m) - metric_gradient_sq(b, m) / (2 * n)
    return d, db, a


def check_jacobi(
    u: PotentialField,
    certificate: Certificate | None = None,
    diagnostic: bool = False,
    tol: CheckTolerances = CheckTolerances(),
    exclude: np.ndarray | None = None,
) -> JacobiReport:
    certified = _require_certificate(u, certificate, diagnostic)
    _, sel = check_nodes(u, tol.region, exclude)
    if not sel.any():
        raise InvalidSpecError("no valid nodes in the check region")
    d, db, a = jacobi_defect(u)
    n = u.grid.dim
    t = tol.tol_jac(u.grid)
    vals = np.where(sel, d, np.inf)
    k = int(np.argmin(vals))
    idx = np.unravel_index(k, u.grid.shape)
    dmin = float(vals.reshape(-1)[k])
    clear = sel & (np.abs(d) > t)
    consistent = bool(np.all(np.sign(d[clear]) == np.sign(db[clear])))
    rep = JacobiReport(
        min_defect=dmin,
        location=u.grid.node(idx).tolist(),
        tol_jac=t,
        passed=dmin >= -t,
        certified=certified,
        min_defect_b=float(db[sel].min()),
        sign_consistent=consistent,
        form_gap=float(np.abs(db - 2 * n * d / a)[sel].max()),
        nodes=int(sel.sum()),
    )
    if not certified:
        rep.note = "not a solution: diagnostic run, negative defect is allowed"
    return rep


# ----------------------------------------------------------------- doubling

@dataclass(frozen=True)
class DoublingConstant:
    h: float
    C: float
    log_C: float
    asymptotic: bool


def _log_expm1(s: float) -> float:
    return s + math.log1p(-math.exp(-s)) if s > 30 else math.log(math.expm1(s))


def doubling_constant(n: int, r1: float, r2: float, r3: float) -> DoublingConstant:
    """``h = 2 r1^2 / n`` and ``C = (e^{r3^2/h} - 1) / (e^{(r3^2 - r2^2)/h} - 1)``.

    ``C`` is assembled in log form so it never overflows before the final
    exponential; ``asymptotic`` flags ``r3^2/h > 700``, where ``C`` is within
    rounding of ``e^{r2^2/h}`` (times ``1/(1 - e^{-(r3^2 - r2^2)/h})``).
    """
    if not (0 < r1 < r2 < r3):
        raise InvalidSpecError(f"need 0 < r1 < r2 < r3, got {r1}, {r2}, {r3}")
    if n < 1:
        raise InvalidSpecError("dimension must be positive")
    h = 2.0 * r1 * r1 / n
    top, bot = r3 * r3 / h, (r3 * r3 - r2 * r2) / h
    logC = _log_expm1(top) - _log_expm1(bot)
    C = math.exp(logC) if logC < EXP_LIMIT else math.inf
    return DoublingConstant(h=h, C=C, log_C=logC, asymptotic=top > EXP_LIMIT)


@dataclass(frozen=True)
class DoublingSpec:
    center: tuple
    r1: float
    r2: float
    r3: float
    r4: float

    def __post_init__(self):
        if not (0 < self.r1 < self.r2 < self.r3 < self.r4):
            raise InvalidSpecError(
                f"need 0 < r1 < r2 < r3 < r4, got {self.r1}, {self.r2}, {self.r3}, {self.r4}"
            )
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def radii(self) -> tuple:
        return (self.r1, self.r2, self.r3, self.r4)

    def constant(self, n: int) -> DoublingConstant:
        return doubling_constant(n, self.r1, self.r2, self.r3)


@dataclass
class DoublingReport:
    sup_inner: float
    sup_outer: float
    bound: float
    margin: float
    containment_ok: bool
    tol_doub: float
    dilated_margin: float
    passed: bool
    C: float
    log_C: float
    h: float
    asymptotic: bool
    ratio: float
    inner_nodes: int
    outer_nodes: int
    spec: dict = field(default_factory=dict)


@dataclass
class _BallData:
    z: np.ndarray
    a: np.ndarray
    masks: dict


def _balls(u: PotentialField, spec: DoublingSpec, check_depth: int) -> _BallData:
    grid = u.grid
    if len(spec.center) != grid.dim or not grid.contains(spec.center):
        raise InvalidSpecError("doubling centre must lie in the grid box")
    z = extrinsic_distance(u, spec.center).z.values
    a, _ = hessian_quantity_a(u)
    masks = {k: z < r * r for k, r in zip(("r1", "r2", "r3", "r4"), spec.radii)}
    if np.any(masks["r4"] & ~grid.interior(check_depth)):
        raise InvalidSpecError("extrinsic ball of radius r4 reaches the boundary layer")
    if not masks["r1"].any():
        raise InvalidSpecError("inner extrinsic ball contains no grid node")
    return _BallData(z, a, masks)


def one_step_variation(f: np.ndarray, mask: np.ndarray) -> float:
    """Largest change of ``f`` between axis neighbours with at least one end in ``mask``."""
    worst = 0.0
    for k in range(f.ndim):
        d = np.abs(np.diff(f, axis=k))
        lo = [slice(None)] * f.ndim
        hi = [slice(None)] * f.ndim
        lo[k], hi[k] = slice(None, -1), slice(1, None)
        touch = mask[tuple(lo)] | mask[tuple(hi)]
        if touch.any():
            worst = max(worst, float(np.nanmax(np.where(touch, d, 0.0))))
    return worst


def check_doubling(
    u: PotentialField,
    spec: DoublingSpec,
    certificate: Certificate | None = None,
    diagnostic: bool = False,
    check_depth: int = CHECK_DEPTH,
) -> DoublingReport:
    """``sup_{D_r2} a <= C sup_{D_r1} a`` on extrinsic balls about ``spec.center``.

    Passing needs ``margin >= -tol_doub`` for the node masks and again with
    both masks dilated by one node.
    """
    _require_certificate(u, certificate, diagnostic)
    const = spec.constant(u.grid.dim)
    bd = _balls(u, spec, check_depth)
    inner, outer = bd.masks["r1"], bd.masks["r2"]
    a = bd.a
    s_in, s_out = float(a[inner].max()), float(a[outer].max())
    bound = const.C * s_in
    tol = one_step_variation(a, dilate(outer, 1))
    d_in, d_out = dilate(inner, 1), dilate(outer, 1)
    dil_margin = const.C * float(a[d_in].max()) - float(a[d_out].max())
    margin = bound - s_out
    return DoublingReport(
        sup_inner=s_in,
        sup_outer=s_out,
        bound=bound,
        margin=margin,
        containment_ok=True,
        tol_doub=tol,
        dilated_margin=dil_margin,
        passed=margin >= -tol and dil_margin >= -tol,
        C=const.C,
        log_C=const.log_C,
        h=const.h,
        asymptotic=const.asymptotic,
        ratio=s_out / s_in,
        inner_nodes=int(inner.sum()),
        outer_nodes=int(outer.sum()),
        spec={"center": list(spec.center), "radii": list(spec.radii)},
    )


@dataclass
class KorevaarProbe:
    eta: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)  # eta * a, divided by exp(log_scale)
    log_scale: float
    argmax: list
    argmax_index: list
    z_at_max: float
    r1_sq: float
    tol_probe: float
    passed: bool


def _log_cutoff(s: np.ndarray) -> np.ndarray:
    """``log(e^s - 1)`` for ``s > 0``, ``-inf`` elsewhere."""
    out = np.full(s.shape, -np.inf)
    pos = s > 0
    big = pos & (s > 30)
    small = pos & ~big
    out[big] = s[big] + np.log1p(-np.exp(-s[big]))
    out[small] = np.log(np.expm1(s[small]))
    return out


def korevaar_probe(
    u: PotentialField,
    spec: DoublingSpec,
    certificate: Certificate | None = None,
    diagnostic: bool = False,
    check_depth: int = CHECK_DEPTH,
) -> KorevaarProbe:
    """Maximise ``w = eta * a`` with ``eta = [exp((r3^2 - z)/h) - 1]_+`` and test ``z(x*) <= r1^2``."""
    _require_certificate(u, certificate, diagnostic)
    const = spec.constant(u.grid.dim)
    bd = _balls(u, spec, check_depth)
    z, a = bd.z, bd.a
    log_eta = _log_cutoff((spec.r3**2 - z) / const.h)
    log_w = np.where(np.isfinite(a) & (a > 0), log_eta + np.log(np.where(a > 0, a, 1.0)), -np.inf)
    flat = log_w.reshape(-1)
    k = int(np.argmax(flat))  # first maximiser = lowest C-order index
    scale = float(flat[k])
    idx = np.unravel_index(k, u.grid.shape)
    nb = []
    for ax in range(u.grid.dim):
        for s in (-1, 1):
            j = list(idx)
            j[ax] += s
            nb.append(abs(float(z[tuple(j)] - z[idx])))
    tol = max(nb)
    zx = float(z[idx])
    return KorevaarProbe(
        eta=np.exp(log_eta - min(scale, EXP_LIMIT)),
        w=np.exp(log_w - scale),
        log_scale=scale,
        argmax=u.grid.node(idx).tolist(),
        argmax_index=[int(i) for i in idx],
        z_at_max=zx,
        r1_sq=spec.r1**2,
        tol_probe=tol,
        passed=zx <= spec.r1**2 + tol,
    )


# --------------------------------------------------- Pogorelov side-by-side

@dataclass
class ContrastRow:
    radius_inner: float
    radius_outer: float
    extrinsic_sup_inner: float
    extrinsic_sup_outer: float
    extrinsic_ratio: float
    extrinsic_inner_hits_axis: bool
    euclidean_sup_inner: float
    euclidean_sup_outer: float
    euclidean_ratio: float
    euclidean_inner_hits_axis: bool


def pogorelov_contrast(u: PotentialField, axis_center, offaxis_center, radii) -> list[ContrastRow]:
    """Qualitative report: sup of ``a`` over inner/outer balls, extrinsic vs Euclidean.

    Extrinsic balls are centred on the degenerate axis and contain the whole
    axis segment for every radius, so their inner sup already sees the
    blow-up.  Euclidean balls centred off the axis miss it until the outer
    radius reaches the axis.  ``radii`` is a list of ``(inner, outer)``.
    """
    grid = u.grid
    x = grid.coords()
    axis = np.linalg.norm(x[..., :-1], axis=-1) == 0
    a, _ = hessian_quantity_a(u)
    a = np.where(grid.interior(1), a, np.nan)
    z = extrinsic_distance(u, axis_center).z.values
    q = np.asarray(offaxis_center, float)
    dist = np.linalg.norm(x - q, axis=-1)
    rows = []

    def sup(mask):
        vals = a[mask & grid.interior(1)]
        return float(np.nanmax(vals)) if vals.size else float("nan")

    for ri, ro in radii:
        e_in, e_out = z < ri * ri, z < ro * ro
        b_in, b_out = dist < ri, dist < ro
        rows.append(
            ContrastRow(
                ri,
                ro,
                sup(e_in),
                sup(e_out),
                sup(e_out) / sup(e_in),
                bool((e_in & axis).any()),
                sup(b_in),
                sup(b_out),
                sup(b_out) / sup(b_in),
                bool((b_in & axis).any()),
            )
        )
    return rows
