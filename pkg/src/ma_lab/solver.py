"""Dirichlet solver for det D^2u = 1 (or a positive right-hand side) on a box.

Newton's method is applied to ``log det D_h^2 u = log rhs`` with the compact
central stencils of :mod:`ma_lab.grid`.  Its linearisation is the operator
``sum_ij g^{ij} D_ij`` with ``g^{ij}`` the inverse of the (eigenvalue
clamped) discrete Hessian.  When Newton cannot make progress a nodal
Gauss-Seidel iteration takes over: each node is moved to the value at
which the local discrete Hessian is positive semidefinite with the
prescribed determinant.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import ConvexHull, QhullError

from .grid import GridSpec, PotentialField, hessian_array

log = logging.getLogger(__name__)


class SolverInputError(ValueError):
    """Boundary data rejected before solving."""


class SingularSystemError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    damping: float = 0.5
    eig_floor: float = 1e-8
    fallback_sweeps: int = 100_000
    init: str = "envelope"  # or "poisson"
    tol_convex: float | None = None
    max_backtracks: int = 30
    # sweeps between convexity checks while the fallback runs
    fallback_chunk: int = 10

    def __post_init__(self):
        for name in ("newton_tol", "damping", "eig_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.newton_tol < 1:
            raise ValueError("newton_tol must be < 1")
        if self.max_newton_iters <= 0 or self.fallback_sweeps <= 0:
            raise ValueError("iteration limits must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if self.init not in ("envelope", "poisson"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_residual: float
    min_hessian_eigenvalue: float
    wall_time: float
    fallback_sweeps: int = 0
    residual_history: list = field(default_factory=list)
    certificate_residual: float = float("nan")
    unit_rhs: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Certificate:
    """Evidence that a field solves ``det D^2u = 1``.

    ``kind`` is ``"solver"`` (a converged solve; ``residual`` is the
    independent certificate residual) or ``"exact"`` (a sampled closed-form
    solution named by ``label``).
    """

    kind: str
    residual: float = float("nan")
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("solver", "exact"):
            raise ValueError(f"unknown certificate kind {self.kind!r}")

    @classmethod
    def from_report(cls, rep: SolveReport) -> "Certificate | None":
        # only solutions of det D^2u = 1 are certified
        return cls("solver", rep.certificate_residual) if rep.converged and rep.unit_rhs else None

    @classmethod
    def from_dict(cls, d: dict | None) -> "Certificate | None":
        return None if not d else cls(d["kind"], float(d.get("residual", "nan")), d.get("label", ""))

    def to_dict(self) -> dict:
        return asdict(self)

    def matches(self, u: PotentialField) -> bool:
        """Re-measure the residual: guards against a certificate attached to the wrong field."""
        if self.kind == "exact":
            return True
        return certify_residual(u) <= max(self.residual * (1 + 1e-6), 1e-9)


@dataclass
class DirichletProblem:
    grid: GridSpec
    boundary_values: np.ndarray  # full-shape array, only boundary nodes are read
    # det D^2u = rhs; a full-shape positive array is accepted for approximating
    # problems whose limit carries extra Monge-Ampere mass
    rhs: float | np.ndarray = 1.0

    def __post_init__(self):
        self.boundary_values = np.asarray(self.boundary_values, dtype=float)
        if self.boundary_values.shape != self.grid.shape:
            raise SolverInputError("boundary array must have the grid shape")
        f = np.broadcast_to(np.asarray(self.rhs, dtype=float), self.grid.shape)
        if not (np.all(np.isfinite(f)) and np.all(f > 0)):
            raise SolverInputError("right-hand side must be positive and finite")
        if not np.all(np.isfinite(self.boundary_values[self.grid.boundary()])):
            raise SolverInputError("non-finite boundary data")

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "DirichletProblem":
        pts = grid.points()
        bmask = grid.boundary().reshape(-1)
        vals = np.zeros(grid.size)
        vals[bmask] = np.asarray(fn(pts[bmask]), dtype=float)
        return cls(grid, vals.reshape(grid.shape))

    @property
    def unit_rhs(self) -> bool:
        return bool(np.all(np.asarray(self.rhs) == 1.0))

    @property
    def log_rhs(self) -> np.ndarray:
        return np.log(np.broadcast_to(np.asarray(self.rhs, dtype=float), self.grid.shape))

    def face_convexity_defect(self) -> float:
        """Most negative in-face second difference over all boundary faces."""
        g, b = self.grid, self.boundary_values
        worst = np.inf
        for k in range(g.dim):
            for side in (0, -1):
                face = np.take(b, [side], axis=k).squeeze(axis=k)
                axes = [a for a in range(g.dim) if a != k]
                for fa, ax in enumerate(axes):
                    if face.shape[fa] < 3:
                        continue
                    d2 = np.diff(face, n=2, axis=fa) / g.spacing[ax] ** 2
                    worst = min(worst, float(d2.min()))
        return worst

    def check_convex(self, tol: float | None = None):
        worst = self.face_convexity_defect()
        if tol is None:
            scale = max(1.0, float(np.abs(self.boundary_values[self.grid.boundary()]).max()))
            tol = 1e-8 * scale / min(self.grid.spacing) ** 2
        if worst < -tol:
            raise SolverInputError(f"boundary data not convex along a face (second difference {worst:.3e})")


# --- discrete operator --------------------------------------------------------------


def _numbering(grid: GridSpec) -> np.ndarray:
    idx = -np.ones(grid.shape, dtype=np.int64)
    inner = grid.interior(1)
    idx[inner] = np.arange(int(inner.sum()))
    return idx


def _core_hessian(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Compact-stencil Hessian on interior nodes only, shape ``(counts-2) + (n, n)``."""
    n, h = grid.dim, grid.spacing
    c = values.shape

    def sh(off):
        return values[tuple(slice(1 + o, s - 1 + o) for o, s in zip(off, c))]

    centre = sh((0,) * n)
    H = np.empty(centre.shape + (n, n))
    for i in range(n):
        e = [0] * n
        e[i] = 1
        p = sh(tuple(e))
        e[i] = -1
        m = sh(tuple(e))
        H[..., i, i] = (p - 2.0 * centre + m) / h[i] ** 2
        for j in range(i + 1, n):
            o = [0] * n
            o[i], o[j] = 1, 1
            pp = sh(tuple(o))
            o[i], o[j] = 1, -1
            pm = sh(tuple(o))
            o[i], o[j] = -1, 1
            mp = sh(tuple(o))
            o[i], o[j] = -1, -1
            mm = sh(tuple(o))
            H[..., i, j] = H[..., j, i] = (pp - pm - mp + mm) / (4.0 * h[i] * h[j])
    return H


def _clamped_inverse(H: np.ndarray, eig_floor: float):
    lam, Q = np.linalg.eigh(H)
    lam_c = np.maximum(lam, eig_floor)
    ginv = np.einsum("...ik,...k,...jk->...ij", Q, 1.0 / lam_c, Q)
    logdet = np.sum(np.log(lam_c), axis=-1)
    return ginv, logdet, lam[..., 0]


def linearized_operator(grid: GridSpec, ginv: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of ``v -> sum_ij ginv_ij D_ij v`` on interior nodes, v = 0 on the boundary."""
    n, h = grid.dim, grid.spacing
    idx = _numbering(grid)
    c = grid.shape
    N = int((idx >= 0).sum())
    rows_c = idx[tuple(slice(1, s - 1) for s in c)].reshape(-1)
    rows, cols, vals = [], [], []

    def add(off, coef):
        tgt = idx[tuple(slice(1 + o, s - 1 + o) for o, s in zip(off, c))].reshape(-1)
        coef = np.broadcast_to(coef, ginv.shape[:-2]).reshape(-1)
        keep = tgt >= 0
        rows.append(rows_c[keep])
        cols.append(tgt[keep])
        vals.append(coef[keep])

    diag = np.zeros(ginv.shape[:-2])
    for i in range(n):
        gii = ginv[..., i, i] / h[i] ** 2
        diag = diag - 2.0 * gii
        for s in (1, -1):
            off = [0] * n
            off[i] = s
            add(off, gii)
        for j in range(i + 1, n):
            gij = 2.0 * ginv[..., i, j] / (4.0 * h[i] * h[j])
            for si, sj, sgn in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
                off = [0] * n
                off[i], off[j] = si, sj
                add(off, sgn * gij)
    add([0] * n, diag)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return A.tocsr()


def _core(grid: GridSpec):
    return tuple(slice(1, -1) for _ in range(grid.dim))


def residual(u: np.ndarray, grid: GridSpec, eig_floor: float = 1e-8, log_rhs: np.ndarray | None = None) -> np.ndarray:
    """Interior ``log det`` of the clamped discrete Hessian minus ``log rhs`` (full shape, 0 on boundary)."""
    H = _core_hessian(u, grid)
    _, logdet, _ = _clamped_inverse(H, eig_floor)
    if log_rhs is not None:
        logdet = logdet - log_rhs[_core(grid)]
    out = np.zeros(grid.shape)
    out[_core(grid)] = logdet
    return out


def certify_residual(u: PotentialField, log_rhs: np.ndarray | None = None) -> float:
    """Independent residual: ``sup |log det D^2u - log rhs|`` via :func:`grid.hessian_array` and LU determinants."""
    H = hessian_array(u.values, u.grid)
    inner = u.grid.interior(1)
    det = np.linalg.det(H[inner])
    if np.any(det <= 0):
        return float("inf")
    r = np.log(det)
    if log_rhs is not None:
        r = r - log_rhs[inner]
    return float(np.max(np.abs(r)))


def newton_step(u: PotentialField, eig_floor: float = 1e-8, log_rhs: np.ndarray | None = None):
    """One undamped Newton update for ``log det D^2u = log rhs`` with zero boundary increment.

    Returns ``(update, residual)`` as full-shape arrays.
    """
    grid = u.grid
    H = _core_hessian(u.values, grid)
    ginv, logdet, _ = _clamped_inverse(H, eig_floor)
    if log_rhs is not None:
        logdet = logdet - log_rhs[_core(grid)]
    A = linearized_operator(grid, ginv)
    rhs = -logdet.reshape(-1)
    try:
        v = spla.spsolve(A.tocsc(), rhs)
    except RuntimeError as exc:  # SuperLU: "Factor is exactly singular"
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(v)):
        raise SingularSystemError("linear solve produced non-finite values")
    core = tuple(slice(1, -1) for _ in range(grid.dim))
    upd = np.zeros(grid.shape)
    upd[core] = v.reshape(H.shape[:-2])
    res = np.zeros(grid.shape)
    res[core] = logdet
    return upd, res


# --- nodal Gauss-Seidel fallback ----------------------------------------------------


@numba.njit(cache=True)
def _nodal_value(H0, dvec, rhs):
    """Value t with det(H0 - t diag(dvec)) = rhs and H0 - t diag(dvec) >= 0."""
    n = H0.shape[0]
    M = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            M[i, j] = H0[i, j] / np.sqrt(dvec[i] * dvec[j])
    mu = np.linalg.eigvalsh(M)
    detD = 1.0
    for i in range(n):
        detD *= dvec[i]
    K = rhs / detD
    d = mu - mu[0]
    w = K ** (1.0 / n)
    for _ in range(200):
        prod = 1.0
        for i in range(n):
            prod *= d[i] + w
        if prod <= K:
            break
        w *= 0.5
    # phi(w) = sum log(d_i + w) - log K is concave increasing: Newton from the left is monotone
    logK = np.log(K)
    for _ in range(100):
        phi = -logK
        dphi = 0.0
        for i in range(n):
            phi += np.log(d[i] + w)
            dphi += 1.0 / (d[i] + w)
        step = -phi / dphi
        w += step
        if abs(step) <= 1e-15 * w:
            break
    return mu[0] - w


@numba.njit(cache=True)
def _gs_sweep_2d(u, hx, hy, rhs, reverse):
    nx, ny = u.shape
    H0 = np.empty((2, 2))
    dvec = np.array([2.0 / hx**2, 2.0 / hy**2])
    for a in range(1, nx - 1):
        for b in range(1, ny - 1):
            i = nx - 1 - a if reverse else a
            j = ny - 1 - b if reverse else b
            H0[0, 0] = (u[i + 1, j] + u[i - 1, j]) / hx**2
            H0[1, 1] = (u[i, j + 1] + u[i, j - 1]) / hy**2
            cxy = (u[i + 1, j + 1] - u[i + 1, j - 1] - u[i - 1, j + 1] + u[i - 1, j - 1]) / (4.0 * hx * hy)
            H0[0, 1] = cxy
            H0[1, 0] = cxy
            u[i, j] = _nodal_value(H0, dvec, rhs[i, j])


@numba.njit(cache=True)
def _gs_sweep_3d(u, hx, hy, hz, rhs, reverse):
    nx, ny, nz = u.shape
    h = np.array([hx, hy, hz])
    H0 = np.empty((3, 3))
    dvec = np.array([2.0 / hx**2, 2.0 / hy**2, 2.0 / hz**2])
    for a in range(1, nx - 1):
        for b in range(1, ny - 1):
            for c in range(1, nz - 1):
                i = nx - 1 - a if reverse else a
                j = ny - 1 - b if reverse else b
                k = nz - 1 - c if reverse else c
                H0[0, 0] = (u[i + 1, j, k] + u[i - 1, j, k]) / h[0] ** 2
                H0[1, 1] = (u[i, j + 1, k] + u[i, j - 1, k]) / h[1] ** 2
                H0[2, 2] = (u[i, j, k + 1] + u[i, j, k - 1]) / h[2] ** 2
                H0[0, 1] = H0[1, 0] = (
                    u[i + 1, j + 1, k] - u[i + 1, j - 1, k] - u[i - 1, j + 1, k] + u[i - 1, j - 1, k]
                ) / (4.0 * h[0] * h[1])
                H0[0, 2] = H0[2, 0] = (
                    u[i + 1, j, k + 1] - u[i + 1, j, k - 1] - u[i - 1, j, k + 1] + u[i - 1, j, k - 1]
                ) / (4.0 * h[0] * h[2])
                H0[1, 2] = H0[2, 1] = (
                    u[i, j + 1, k + 1] - u[i, j + 1, k - 1] - u[i, j - 1, k + 1] + u[i, j - 1, k - 1]
                ) / (4.0 * h[1] * h[2])
                u[i, j, k] = _nodal_value(H0, dvec, rhs[i, j, k])


def _modulus(values: np.ndarray, grid: GridSpec) -> float:
    return float(np.linalg.eigvalsh(_core_hessian(values, grid))[..., 0].min())


def gauss_seidel_fallback(u: PotentialField, sweeps: int, rhs=1.0, return_trace: bool = False):
    """Nodal Gauss-Seidel: lexicographic sweep, then reverse sweep, ``sweeps`` times.

    Boundary values are left untouched.  With ``return_trace`` the convexity
    modulus after every sweep pair is returned alongside the field.
    """
    vals = np.array(u.values, dtype=float, copy=True)
    h = u.grid.spacing
    rhs = np.ascontiguousarray(np.broadcast_to(np.asarray(rhs, dtype=float), u.grid.shape))
    trace = [_modulus(vals, u.grid)] if return_trace else None
    for _ in range(int(sweeps)):
        for rev in (False, True):
            if u.grid.dim == 2:
                _gs_sweep_2d(vals, h[0], h[1], rhs, rev)
            else:
                _gs_sweep_3d(vals, h[0], h[1], h[2], rhs, rev)
        if return_trace:
            trace.append(_modulus(vals, u.grid))
    out = PotentialField(u.grid, vals)
    return (out, trace) if return_trace else out


# --- initial iterates ---------------------------------------------------------------


def envelope_initial(problem: DirichletProblem) -> np.ndarray:
    """Max over the supporting planes of the lifted boundary data (its lower convex hull)."""
    g = problem.grid
    bmask = g.boundary()
    pts = g.points()
    bp = pts[bmask.reshape(-1)]
    bv = problem.boundary_values[bmask]
    lifted = np.column_stack([bp, bv])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        hull = ConvexHull(lifted, qhull_options="QJ")
    eq = hull.equations  # normal . (x, v) + offset <= 0 inside
    lower = eq[eq[:, -2] < -1e-12]
    # facet plane: v = -(normal_x . x + offset) / normal_v
    slopes = -lower[:, :-2] / lower[:, -2:-1]
    icpt = -lower[:, -1] / lower[:, -2]
    inner = g.interior(1).reshape(-1)
    vals = problem.boundary_values.reshape(-1).copy()
    P = pts[inner]
    best = np.full(P.shape[0], -np.inf)
    for s in range(0, slopes.shape[0], 256):
        best = np.maximum(best, (P @ slopes[s:s + 256].T + icpt[s:s + 256]).max(axis=1))
    vals[inner] = best
    return vals.reshape(g.shape)


def poisson_initial(problem: DirichletProblem) -> np.ndarray:
    """Solve ``Laplace u = n`` with the boundary data (identity-metric Newton operator)."""
    g = problem.grid
    n = g.dim
    ginv = np.broadcast_to(np.eye(n), tuple(c - 2 for c in g.shape) + (n, n))
    A = linearized_operator(g, ginv)
    # boundary contribution: move known values to the right-hand side
    full = problem.boundary_values.copy()
    full[g.interior(1)] = 0.0
    core = tuple(slice(1, -1) for _ in range(n))
    lap_b = np.zeros(tuple(c - 2 for c in g.shape))
    for i in range(n):
        sl_p = list(core)
        sl_m = list(core)
        sl_p[i] = slice(2, None)
        sl_m[i] = slice(0, -2)
        lap_b += (full[tuple(sl_p)] + full[tuple(sl_m)]) / g.spacing[i] ** 2
    rhs = float(n) - lap_b
    v = spla.spsolve(A.tocsc(), rhs.reshape(-1))
    out = problem.boundary_values.copy()
    out[core] = v.reshape(lap_b.shape)
    return out


# --- driver -------------------------------------------------------------------------


def _merit(res: np.ndarray) -> float:
    return float(np.sqrt(np.mean(res * res)))


def solve_dirichlet(problem: DirichletProblem, config: SolverConfig | None = None, initial: np.ndarray | None = None):
    """Solve ``det D^2u = rhs`` (``rhs = 1`` unless the problem says otherwise).

    Returns ``(PotentialField, SolveReport)``.  Non-convergence is reported,
    not raised; face-nonconvex boundary data raises :class:`SolverInputError`.
    """
    cfg = config or SolverConfig()
    problem.check_convex(cfg.tol_convex)
    grid = problem.grid
    t0 = time.perf_counter()
    bmask = grid.boundary()
    if initial is not None:
        u = np.array(initial, dtype=float, copy=True)
        u[bmask] = problem.boundary_values[bmask]
    elif cfg.init == "poisson":
        u = poisson_initial(problem)
    else:
        u = envelope_initial(problem)

    log_rhs = None if problem.unit_rhs else problem.log_rhs
    history = []
    sweeps_used = 0
    it = 0

    def run_fallback(vals, budget):
        # sweep until the iterate is strictly convex, then hand back to Newton
        nonlocal sweeps_used
        field_ = PotentialField(grid, vals)
        done = 0
        while done < budget:
            chunk = min(cfg.fallback_chunk, budget - done)
            field_ = gauss_seidel_fallback(field_, chunk, rhs=problem.rhs)
            done += chunk
            if _modulus(field_.values, grid) > cfg.eig_floor:
                break
        sweeps_used += done
        return field_.values

    if _modulus(u, grid) <= cfg.eig_floor:
        u = run_fallback(u, cfg.fallback_sweeps)

    converged = False
    while it < cfg.max_newton_iters:
        try:
            upd, res = newton_step(PotentialField(grid, u), cfg.eig_floor, log_rhs)
        except SingularSystemError:
            log.info("singular Newton system; switching to Gauss-Seidel")
            u = run_fallback(u, max(1, cfg.fallback_sweeps - sweeps_used))
            continue
        rsup = float(np.abs(res).max())
        history.append(rsup)
        if rsup <= cfg.newton_tol and _modulus(u, grid) > 0:
            converged = True
            break
        it += 1
        m0 = _merit(res)
        step = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            trial = u + step * upd
            r_trial = residual(trial, grid, cfg.eig_floor, log_rhs)
            if _merit(r_trial) <= (1.0 - 1e-4 * step) * m0:
                accepted = True
                break
            step *= cfg.damping
        if accepted:
            u = trial
        else:
            if sweeps_used >= cfg.fallback_sweeps:
                break
            u = run_fallback(u, min(cfg.fallback_chunk * 10, cfg.fallback_sweeps - sweeps_used))

    out = PotentialField(grid, u)
    final = float(np.abs(residual(u, grid, cfg.eig_floor, log_rhs)).max())
    mod = _modulus(u, grid)
    converged = converged or (final <= cfg.newton_tol and mod > 0)
    rep = SolveReport(
        converged=converged,
        iterations=it,
        final_residual=final,
        min_hessian_eigenvalue=mod,
        wall_time=time.perf_counter() - t0,
        fallback_sweeps=sweeps_used,
        residual_history=history,
        certificate_residual=certify_residual(out, log_rhs),
        unit_rhs=problem.unit_rhs,
    )
    return out, rep


def solve_reference(fn, grid: GridSpec, config: SolverConfig | None = None):
    """Convenience: Dirichlet data sampled from ``fn`` on the boundary of ``grid``."""
    return solve_dirichlet(DirichletProblem.from_function(grid, fn), config)
