"""Subdifferentials, outer sections and extrinsic balls of discrete convex functions.

Masks are boolean node arrays over the whole grid box.  Callers decide
which sub-box plays the role of the unit ball (see ``GridSpec.sub_box``).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .grid import GridError, GridSpec, PotentialField, interpolate, interpolator, interpolate_vector
from .lagrangian import extrinsic_distance

# a node is treated as a crease along axis k when its second difference
# exceeds this multiple of both axis neighbours' (smooth data: ratio ~ 1)
KINK_RATIO = 8.0


class DegenerateInputError(ValueError):
    pass


@dataclass
class SubdifferentialApprox:
    p: np.ndarray
    slopes: np.ndarray  # (k, n)
    value_at_p: float
    smooth: bool
    tol_support: float

    def support(self, d: np.ndarray) -> np.ndarray:
        """``sup_y <d, y>`` for an array of displacement vectors ``d[..., n]``."""
        return np.max(np.einsum("...k,mk->...m", d, self.slopes), axis=-1)


@dataclass
class Section:
    center: np.ndarray
    radius: float
    mask: np.ndarray
    sub: SubdifferentialApprox


@dataclass
class ExtrinsicBall:
    center: np.ndarray
    radius: float
    mask: np.ndarray
    z: np.ndarray
    component: np.ndarray
    star_shaped: bool


def _support_tol(u: PotentialField) -> float:
    H = u.hessian.full()
    inner = u.grid.interior(1)
    diag = np.abs(np.diagonal(H[inner], axis1=-2, axis2=-1))
    h2 = np.asarray(u.grid.spacing) ** 2
    scale = max(1.0, float(np.abs(u.values).max()))
    return float(np.max(diag * h2) / 4.0) + 1e-10 * scale


def _stencil_directions(grid: GridSpec) -> list[np.ndarray]:
    """Index offsets: 2n axis steps and 2n(n-1) diagonal steps."""
    n = grid.dim
    out = []
    for k in range(n):
        for s in (1, -1):
            e = np.zeros(n, int)
            e[k] = s
            out.append(e)
    for i, j in itertools.combinations(range(n), 2):
        for si, sj in itertools.product((1, -1), repeat=2):
            e = np.zeros(n, int)
            e[i], e[j] = si, sj
            out.append(e)
    return out


def _polytope_vertices(A: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    """Vertices of ``{y : A y <= b}`` by enumerating n-subsets of active constraints."""
    n = A.shape[1]
    verts = []
    for rows in itertools.combinations(range(A.shape[0]), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12 * np.abs(M).max() ** n:
            continue
        y = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ y <= b + tol):
            verts.append(y)
    if not verts:
        raise DegenerateInputError("empty difference-quotient polytope (function not convex at p)")
    V = np.unique(np.round(np.array(verts) / tol) * tol, axis=0) if tol > 0 else np.array(verts)
    if V.shape[0] > n:
        try:
            V = V[ConvexHull(V).vertices]
        except QhullError:
            pass  # lower-dimensional polytope: keep the (few) candidate vertices
    if V.shape[0] > 1:
        # drop candidates lying strictly between two others on a segment
        keep = []
        for i, v in enumerate(V):
            others = np.delete(V, i, axis=0)
            inside = False
            for a, c in itertools.combinations(range(others.shape[0]), 2):
                seg = others[c] - others[a]
                L = seg @ seg
                if L == 0:
                    continue
                t = (v - others[a]) @ seg / L
                if 0 < t < 1 and np.linalg.norm(others[a] + t * seg - v) <= tol:
                    inside = True
                    break
            if not inside:
                keep.append(v)
        V = np.array(keep)
    return V


def _is_crease(u: PotentialField, idx: tuple[int, ...]) -> bool:
    vals = u.values
    scale = 1e-12 * max(1.0, float(np.abs(vals).max()))
    for k in range(u.grid.dim):
        def d2(i):
            j = list(i)
            lo, hi = list(i), list(i)
            lo[k] -= 1
            hi[k] += 1
            return vals[tuple(hi)] - 2 * vals[tuple(j)] + vals[tuple(lo)]

        centre = d2(idx)
        nb = []
        for s in (1, -1):
            j = list(idx)
            j[k] += s
            nb.append(d2(tuple(j)))
        if centre > KINK_RATIO * max(max(nb), 0.0) + scale:
            return True
    return False


def subdifferential(u: PotentialField, p, tol_support: float | None = None) -> SubdifferentialApprox:
    """Approximate ``du(p)``.

    Where no crease is detected at the nearest node, returns the singleton
    ``{Du(p)}`` with ``Du`` multilinearly interpolated.  At a crease the
    centre snaps to the nearest node and the slopes are the vertices of
    ``{y : <y, d> <= u(p + d) - u(p)}`` over the axis and diagonal steps
    ``d``.  Every returned slope passes the global supporting-plane test.
    """
    grid = u.grid
    p = np.asarray(p, dtype=float)
    idx = grid.nearest_index(p)
    depth = min(min(i, c - 1 - i) for i, c in zip(idx, grid.counts))
    if depth < 1:
        raise GridError("subdifferential needs an interior point")
    tol = _support_tol(u) if tol_support is None else tol_support
    x = grid.coords()

    crease = depth >= 2 and _is_crease(u, idx)
    if not crease:
        slopes = interpolate_vector(grid, u.gradient, p)[None, :]
        up = interpolate(u, p)
        centre = p
    else:
        h = np.asarray(grid.spacing)
        up = float(u.values[idx])
        centre = grid.node(idx)
        A, b = [], []
        for e in _stencil_directions(grid):
            j = tuple(np.asarray(idx) + e)
            A.append(e * h)
            b.append(u.values[j] - up)
        A, b = np.array(A), np.array(b)
        slopes = _polytope_vertices(A, b, tol=1e-9 * max(1.0, np.abs(b).max() / h.min()))

    gap = u.values[..., None] - up - np.einsum("...k,mk->...m", x - centre, slopes)
    ok = gap.reshape(-1, slopes.shape[0]).min(axis=0) >= -tol
    if not np.any(ok):
        raise DegenerateInputError(f"no candidate slope supports u at {p.tolist()}")
    return SubdifferentialApprox(p=centre, slopes=slopes[ok], value_at_p=up, smooth=not crease, tol_support=tol)


def section_mask(u: PotentialField, sub: SubdifferentialApprox, r: float) -> np.ndarray:
    x = u.grid.coords()
    return u.values < sub.value_at_p + sub.support(x - sub.p) + r * r


def build_section(u: PotentialField, p, r: float, sub: SubdifferentialApprox | None = None) -> Section:
    """Outer section ``{u(x) < u(p) + sup_y <x - p, y> + r^2}``."""
    if r <= 0:
        raise ValueError("section radius must be positive")
    sub = sub if sub is not None else subdifferential(u, p)
    return Section(center=sub.p, radius=float(r), mask=section_mask(u, sub, r), sub=sub)


def _component(mask: np.ndarray, idx) -> np.ndarray:
    lab, _ = ndimage.label(mask)
    if not mask[idx]:
        return np.zeros_like(mask)
    return lab == lab[idx]


def _star_shaped(grid: GridSpec, z: np.ndarray, mask: np.ndarray, p: np.ndarray, samples: int = 8) -> bool:
    """z must not exceed its endpoint value along segments from p to mask nodes."""
    pts = grid.points()[mask.reshape(-1)]
    if pts.shape[0] == 0:
        return True
    zend = z.reshape(-1)[mask.reshape(-1)]
    h2 = np.asarray(grid.spacing) ** 2
    D2 = np.stack([np.abs(np.diff(z, 2, axis=k)).max() / h2[k] for k in range(grid.dim)])
    tol = float(np.max(D2 * h2)) / 4.0 + 1e-12 * max(1.0, float(np.abs(z).max()))
    f = interpolator(grid, z)
    for t in np.linspace(0, 1, samples + 1)[1:-1]:
        q = p + t * (pts - p)
        if np.any(f(q) > zend + tol):
            return False
    return True


def build_extrinsic_ball(u: PotentialField, p, r: float, z: np.ndarray | None = None) -> ExtrinsicBall:
    """``{x : <x - p, Du(x) - Du(p)> < r^2}`` plus the grid component of p and a star-shape flag."""
    if r <= 0:
        raise ValueError("ball radius must be positive")
    p = np.asarray(p, dtype=float)
    if z is None:
        z = extrinsic_distance(u, p).z.values
    mask = z < r * r
    comp = _component(mask, u.grid.nearest_index(p))
    return ExtrinsicBall(
        center=p,
        radius=float(r),
        mask=mask,
        z=z,
        component=comp,
        star_shaped=_star_shaped(u.grid, z, mask, p),
    )


def euclidean_ball(grid: GridSpec, p, rho: float) -> np.ndarray:
    return np.linalg.norm(grid.coords() - np.asarray(p, float), axis=-1) < rho


def gradient_bound_M(family) -> float:
    """``1 + 2 max_k sup_box |Du_k|`` over the full grid box."""
    family = list(family)
    if not family:
        raise ValueError("need at least one potential")
    sup = max(float(np.linalg.norm(u.gradient, axis=-1).max()) for u in family)
    return 1.0 + 2.0 * sup


def mask_diameter(grid: GridSpec, mask: np.ndarray) -> float:
    pts = grid.points()[mask.reshape(-1)]
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[0] > grid.dim + 1:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).max())


def center_nodes(grid: GridSpec, fraction: float = 0.5, stride: int = 1, extra: np.ndarray | None = None) -> np.ndarray:
    """Node coordinates inside the concentric ``fraction`` sub-box, every ``stride``-th node."""
    sel = grid.sub_box(fraction) & grid.interior(2)
    if extra is not None:
        sel &= extra
    idx = np.argwhere(sel)
    if stride > 1:
        idx = idx[np.all(idx % stride == 0, axis=1)]
    return grid.node(idx)


def section_diameter_scan(u: PotentialField, radii, centers=None, stride: int = 4):
    """Rows ``(r, sup_p diam S_r(p), argmax p)`` for each radius, centres in the half box."""
    centers = center_nodes(u.grid, 0.5, stride) if centers is None else np.atleast_2d(centers)
    subs = [subdifferential(u, p) for p in centers]
    table = []
    for r in radii:
        best, arg = -1.0, None
        for p, s in zip(centers, subs):
            d = mask_diameter(u.grid, section_mask(u, s, r))
            if d > best:
                best, arg = d, p
        table.append((float(r), best, np.asarray(arg).tolist()))
    return table


@dataclass
class StabilityScan:
    passes: list
    k0: int | None
    sup_differences: list
    converging: bool
    violations: list = field(default_factory=list)


def section_stability_scan(u: PotentialField, seq, p, r, delta: float) -> StabilityScan:
    """Check ``S^{u_k}_r(p) within S^u_{r+delta}(p)`` for every member of ``seq``.

    ``r`` may be a scalar or a list of radii (all must pass).  ``k0`` is the
    smallest 1-based index from which containment holds for every later k.
    """
    radii = np.atleast_1d(np.asarray(r, float))
    sub_u = subdifferential(u, p)
    diffs = [float(np.abs(v.values - u.values).max()) for v in seq]
    passes, viol = [], []
    for v in seq:
        sub_v = subdifferential(v, p)
        bad = 0
        for rr in radii:
            inner = section_mask(v, sub_v, rr)
            outer = section_mask(u, sub_u, rr + delta)
            bad += int(np.count_nonzero(inner & ~outer))
        passes.append(bad == 0)
        viol.append(bad)
    k0 = None
    for k in range(len(passes), 0, -1):
        if passes[k - 1]:
            k0 = k
        else:
            break
    converging = len(diffs) < 2 or diffs[-1] <= diffs[0]
    return StabilityScan(passes=passes, k0=k0, sup_differences=diffs, converging=converging, violations=viol)


def subdifferential_monotonicity(u: PotentialField, pairs) -> float:
    """Smallest ``<x - p, y - q>`` over slope choices ``y in du(x), q in du(p)`` for the given point pairs."""
    worst = np.inf
    for x, p in pairs:
        sx, sp_ = subdifferential(u, x), subdifferential(u, p)
        d = sx.p - sp_.p
        vals = (sx.slopes @ d)[:, None] - (sp_.slopes @ d)[None, :]
        worst = min(worst, float(vals.min()))
    return worst
