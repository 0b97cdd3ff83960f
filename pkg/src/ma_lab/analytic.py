"""Reference convex functions: exact solutions of det D^2u = 1 and Pogorelov's singular family.

All evaluators accept a single point ``(n,)`` or a batch ``(m, n)`` and return
``(value, gradient, hessian)`` with matching leading shape (Pogorelov returns
no Hessian).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DET_TOL = 1e-12
# radius of the ball around the radial family's conical point kept out of checks
RADIAL_R_MIN = 0.1


class ParameterError(ValueError):
    pass


def _batch(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _unbatch(single, *arrays):
    if single:
        return tuple(a[0] for a in arrays)
    return arrays


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def check_unimodular(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParameterError("A must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
        raise ParameterError("A must be symmetric")
    if np.linalg.eigvalsh(A)[0] <= 0:
        raise ParameterError("A must be positive definite")
    if abs(np.linalg.det(A) - 1.0) > DET_TOL:
        raise ParameterError(f"det A = {np.linalg.det(A)!r}, need 1")
    return 0.5 * (A + A.T)


def eval_quadratic(A, x):
    A = check_unimodular(A)
    X, single = _batch(x)
    g = X @ A
    val = 0.5 * np.einsum("mi,mi->m", X, g)
    hess = np.broadcast_to(A, (X.shape[0],) + A.shape).copy()
    return _unbatch(single, val, g, hess)


def eval_radial(c: float, x, dim: int = 2):
    """u'(r) = sqrt(r^2 + c): a rotationally symmetric solution in the plane.

    For ``c > 0`` the function has a conical point at the origin (Du jumps
    by ``sqrt(c)`` there); the Hessian is returned as NaN at ``r == 0``.
    """
    if c < 0:
        raise ParameterError("radial family needs c >= 0")
    if dim != 2:
        raise ParameterError("closed-form radial solution is two-dimensional")
    X, single = _batch(x)
    if X.shape[1] != 2:
        raise ParameterError("radial family needs points in the plane")
    r = np.hypot(X[:, 0], X[:, 1])
    s = np.sqrt(r * r + c)
    if c == 0:
        val = 0.5 * r * r
    else:
        # arcsinh(r/sqrt(c)) == ln((r + s)/sqrt(c)) without cancellation near r = 0
        val = 0.5 * (r * s + c * np.arcsinh(r / np.sqrt(c)))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(r > 0, s / r, np.nan)  # u'(r)/r
        er = np.where(r[:, None] > 0, X / r[:, None], 0.0)
    if c == 0:
        ratio = np.ones_like(r)
    grad = np.where(r[:, None] > 0, X * ratio[:, None], 0.0)
    upp = np.where(s > 0, r / np.where(s > 0, s, 1.0), 1.0)  # u''(r)
    P = er[:, :, None] * er[:, None, :]
    hess = upp[:, None, None] * P + ratio[:, None, None] * (np.eye(2) - P)
    if c == 0:
        hess = np.broadcast_to(np.eye(2), hess.shape).copy()
    return _unbatch(single, val, grad, hess)


def pogorelov_exponent(n: int) -> float:
    return 2.0 - 2.0 / n


# det of the (rho, x_n) Hessian block is proportional to 1 - 7 x_n^2 for n = 3,
# so convexity needs |x_n| < 1/sqrt(7)
POGORELOV_TMAX = {3: 0.35}


def eval_pogorelov(n: int, x, check_domain: bool = True):
    """|x'|^(2-2/n) (1 + x_n^2), gradient extended by 0 on the x_n-axis."""
    if n < 3:
        raise ParameterError("Pogorelov family needs n >= 3")
    X, single = _batch(x)
    if X.shape[1] != n:
        raise ParameterError(f"points must have {n} coordinates")
    xp, t = X[:, :-1], X[:, -1]
    rho = np.linalg.norm(xp, axis=1)
    if check_domain and (np.any(rho > 1 + 1e-12) or np.any(np.abs(t) > 0.5 + 1e-12)):
        raise ParameterError("Pogorelov sample outside |x'| <= 1, |x_n| <= 1/2")
    alpha = pogorelov_exponent(n)
    f = 1.0 + t * t
    val = rho**alpha * f
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(rho > 0, alpha * rho ** (alpha - 2.0) * f, 0.0)
    grad = np.empty_like(X)
    grad[:, :-1] = coef[:, None] * xp
    grad[:, -1] = 2.0 * t * rho**alpha
    return _unbatch(single, val, grad)


@dataclass(frozen=True)
class ReferenceFunction:
    """A named member of one of the three families.

    ``kind`` is ``"quadratic"`` (params: ``A``), ``"radial"`` (``c``) or
    ``"pogorelov"`` (``n``).  Extra ``kink`` adds ``kink * |x_1 - kink_at|``,
    giving convex data with a Lipschitz crease.
    """

    kind: str
    A: tuple = ()
    c: float = 0.0
    n: int = 3
    kink: float = 0.0
    kink_at: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "radial", "pogorelov"):
            raise ParameterError(f"unknown family {self.kind!r}")
        if self.kind == "quadratic":
            check_unimodular(np.array(self.A))
        if self.kind == "radial" and self.c < 0:
            raise ParameterError("radial family needs c >= 0")
        if self.kink < 0:
            raise ParameterError("kink weight must be non-negative")

    @property
    def dim(self) -> int:
        if self.kind == "quadratic":
            return len(self.A)
        if self.kind == "radial":
            return 2
        return self.n

    @property
    def is_solution(self) -> bool:
        return self.kind in ("quadratic", "radial") and self.kink == 0

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)[0]

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            out = eval_quadratic(np.array(self.A), x)
        elif self.kind == "radial":
            out = eval_radial(self.c, x)
        else:
            v, g = eval_pogorelov(self.n, x, check_domain=False)
            out = (v, g, None)
        if self.kink:
            v, g, H = out
            s = x[..., 0] - self.kink_at
            v = v + self.kink * np.abs(s)
            g = np.array(g, copy=True)
            g[..., 0] = g[..., 0] + self.kink * np.sign(s)
            out = (v, g, H)
        return out

    def atoms(self) -> list[tuple[np.ndarray, float]]:
        """Point masses of the Monge-Ampere measure: the radial cone carries ``pi c`` at 0."""
        if self.kind == "radial" and self.c > 0:
            return [(np.zeros(2), float(np.pi * self.c))]
        return []

    def excluded(self, x, r_min: float = RADIAL_R_MIN) -> np.ndarray:
        """Points too close to a conical point to enter any check."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], bool)
        for loc, _ in self.atoms():
            out |= np.linalg.norm(x - loc, axis=-1) < r_min
        return out

    def label(self) -> str:
        if self.kind == "quadratic":
            body = "quadratic:A=" + ";".join(",".join(f"{a:.17g}" for a in row) for row in self.A)
        elif self.kind == "radial":
            body = f"radial:c={self.c:g}"
        else:
            body = f"pogorelov:n={self.n}"
        if self.kink:
            body += f",kink={self.kink:g}@{self.kink_at:g}"
        return body


def quadratic(A) -> ReferenceFunction:
    A = np.asarray(A, dtype=float)
    return ReferenceFunction("quadratic", A=tuple(tuple(float(v) for v in row) for row in A))


def radial(c: float = 1.0) -> ReferenceFunction:
    return ReferenceFunction("radial", c=float(c))


def pogorelov(n: int = 3) -> ReferenceFunction:
    return ReferenceFunction("pogorelov", n=int(n))


def rotated_quadratic(l1: float, theta: float) -> ReferenceFunction:
    R = rotation(theta)
    A = R @ np.diag([l1, 1.0 / l1]) @ R.T
    return quadratic(0.5 * (A + A.T))


def parse_reference(spec: str) -> ReferenceFunction:
    """Parse ``radial:c=1``, ``quadratic:diag=4,0.25``, ``quadratic:A=2,0;0,0.5``,
    ``quadratic:identity3``, ``pogorelov:n=3``; a trailing ``,kink=w@x0`` adds a crease."""
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    kink, kink_at = 0.0, 0.0
    parts = [p for p in rest.split(":") if p] if rest else []
    body = parts[0] if parts else ""
    if "kink=" in body:
        body, _, k = body.partition(",kink=")
        w, _, at = k.partition("@")
        kink, kink_at = float(w), float(at or 0.0)
    try:
        if kind == "radial":
            c = float(body.split("=", 1)[1]) if body else 1.0
            return ReferenceFunction("radial", c=c, kink=kink, kink_at=kink_at)
        if kind == "pogorelov":
            n = int(body.split("=", 1)[1]) if body else 3
            return ReferenceFunction("pogorelov", n=n)
        if kind == "quadratic":
            if body.startswith("identity"):
                d = int(body[len("identity"):] or 2)
                A = np.eye(d)
            elif body.startswith("diag="):
                A = np.diag([float(v) for v in body[5:].split(",")])
            elif body.startswith("A="):
                A = np.array([[float(v) for v in row.split(",")] for row in body[2:].split(";")])
            elif body.startswith("rot="):
                l1, th = (float(v) for v in body[4:].split(","))
                return rotated_quadratic(l1, np.deg2rad(th))
            else:
                A = np.eye(2)
            f = quadratic(A)
            return ReferenceFunction("quadratic", A=f.A, kink=kink, kink_at=kink_at)
    except (IndexError, ValueError) as exc:
        raise ParameterError(f"cannot parse reference spec {spec!r}: {exc}") from exc
    raise ParameterError(f"unknown family {kind!r}")


FAMILIES = {
    "quadratic": "1/2 x^T A x, A symmetric positive definite with det A = 1 (any dimension)",
    "radial": "u'(r) = sqrt(r^2 + c), c >= 0, planar; conical at the origin when c > 0",
    "pogorelov": "|x'|^(2-2/n) (1 + x_n^2), n >= 3; degenerate along the x_n-axis (not a solution of det = 1)",
}


def gauss_hermite_mollifier(fn, eps: float, order: int = 7):
    """Gaussian smoothing ``x -> E[fn(x + eps * Y)]``, ``Y ~ N(0, I)``, by tensor Gauss-Hermite.

    Preserves convexity; shifts a quadratic ``1/2 x^T A x`` by ``eps^2 tr(A) / 2``.
    """
    if eps <= 0:
        return fn
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / weights.sum()

    def smoothed(x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        d = X.shape[1]
        grids = np.meshgrid(*([nodes] * d), indexing="ij")
        offs = np.stack([g.reshape(-1) for g in grids], axis=1)
        w = np.ones(offs.shape[0])
        for g in np.meshgrid(*([weights] * d), indexing="ij"):
            w = w * g.reshape(-1)
        acc = np.zeros(X.shape[0])
        for o, wi in zip(offs, w):
            acc += wi * np.asarray(fn(X + eps * o), dtype=float)
        return acc if np.asarray(x).ndim > 1 else acc[0]

    return smoothed
