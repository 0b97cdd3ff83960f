"""Uniform tensor grids on boxes and the finite-difference calculus used everywhere.

Fields are stored as numpy arrays indexed ``[i_1, ..., i_n]`` ("ij" ordering),
so node ``i`` sits at ``lo + i * spacing``.  Second derivatives use the compact
3-point / 4-corner stencils at interior nodes; boundary nodes fall back to
second-order one-sided differences, which are exact on quadratics but carry
no accuracy guarantees for the inequality checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class GridError(ValueError):
    """Raised for malformed grids or out-of-domain queries."""


@dataclass(frozen=True)
class GridSpec:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)
        if not (len(lo) == len(hi) == len(counts)):
            raise GridError("lo, hi and counts must have equal length")
        if len(lo) not in (2, 3):
            raise GridError(f"dimension must be 2 or 3, got {len(lo)}")
        if any(c < 5 for c in counts):
            raise GridError(f"need at least 5 nodes per axis, got {counts}")
        if any(h <= l for l, h in zip(lo, hi)):
            raise GridError("hi must exceed lo on every axis")

    @classmethod
    def box(cls, lo, hi, n: int, dim: int | None = None) -> "GridSpec":
        """Grid with ``n`` nodes per axis; scalar ``lo``/``hi`` need ``dim``."""
        if np.isscalar(lo):
            lo = (lo,) * (dim or 2)
        if np.isscalar(hi):
            hi = (hi,) * len(lo)
        return cls(tuple(lo), tuple(hi), (n,) * len(lo))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((h - l) / (c - 1) for l, h, c in zip(self.lo, self.hi, self.counts))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def axes(self) -> list[np.ndarray]:
        return [l + np.arange(c) * h for l, c, h in zip(self.lo, self.counts, self.spacing)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``counts + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """Node coordinates flattened to ``(size, dim)`` in C order."""
        return self.coords().reshape(-1, self.dim)

    def node(self, index) -> np.ndarray:
        index = np.asarray(index)
        return np.asarray(self.lo) + index * np.asarray(self.spacing)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        scale = tol * np.maximum(1.0, np.abs(np.asarray(self.hi) - np.asarray(self.lo)))
        return bool(np.all(x >= np.asarray(self.lo) - scale) and np.all(x <= np.asarray(self.hi) + scale))

    def nearest_index(self, x) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float)
        if not self.contains(x):
            raise GridError(f"point {x.tolist()} outside grid box")
        idx = np.rint((x - np.asarray(self.lo)) / np.asarray(self.spacing)).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.counts) - 1)
        return tuple(int(i) for i in idx)

    def depth(self) -> np.ndarray:
        """Integer distance (in nodes) of every node to the nearest boundary node."""
        d = None
        for k, c in enumerate(self.counts):
            i = np.arange(c)
            dk = np.minimum(i, c - 1 - i)
            shape = [1] * self.dim
            shape[k] = c
            dk = dk.reshape(shape)
            d = dk if d is None else np.minimum(d, dk)
        return np.broadcast_to(d, self.counts).copy()

    def interior(self, depth: int = 1) -> np.ndarray:
        return self.depth() >= depth

    def boundary(self) -> np.ndarray:
        return self.depth() == 0

    def sub_box(self, fraction: float) -> np.ndarray:
        """Mask of nodes inside the concentric box scaled by ``fraction``."""
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        mid, half = (lo + hi) / 2, fraction * (hi - lo) / 2
        x = self.coords()
        eps = 1e-12 * np.max(hi - lo)
        return np.all(np.abs(x - mid) <= half + eps, axis=-1)

    def refined(self) -> "GridSpec":
        return GridSpec(self.lo, self.hi, tuple(2 * c - 1 for c in self.counts))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "lo": list(self.lo), "hi": list(self.hi), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        g = cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["counts"]))
        if "dim" in d and int(d["dim"]) != g.dim:
            raise GridError("header dim disagrees with lo/hi/counts")
        return g


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    masked: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not self.masked and not np.all(np.isfinite(self.values)):
            raise GridError("non-finite values in an unmasked field")

    @classmethod
    def sample(cls, grid: GridSpec, fn) -> "ScalarField":
        """Evaluate ``fn`` on the ``(size, dim)`` array of node coordinates."""
        vals = np.asarray(fn(grid.points()), dtype=float).reshape(grid.shape)
        return cls(grid, vals)


@dataclass
class MatrixField:
    """Per-node symmetric matrices; only the upper triangle is stored.

    ``upper[..., m]`` holds entry ``(i, j)`` for the m-th pair of
    ``np.triu_indices(dim)``.
    """

    grid: GridSpec
    upper: np.ndarray

    @classmethod
    def from_full(cls, grid: GridSpec, full: np.ndarray) -> "MatrixField":
        iu = np.triu_indices(grid.dim)
        return cls(grid, np.ascontiguousarray(full[..., iu[0], iu[1]]))

    def full(self) -> np.ndarray:
        n = self.grid.dim
        iu = np.triu_indices(n)
        out = np.empty(self.upper.shape[:-1] + (n, n))
        out[..., iu[0], iu[1]] = self.upper
        out[..., iu[1], iu[0]] = self.upper
        return out

    def entry(self, i: int, j: int) -> np.ndarray:
        i, j = min(i, j), max(i, j)
        n = self.grid.dim
        m = i * n - i * (i - 1) // 2 + (j - i)
        return self.upper[..., m]

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.full())

    def det(self) -> np.ndarray:
        return np.linalg.det(self.full())


def _require_size(grid: GridSpec):
    if any(c < 3 for c in grid.counts):
        raise GridError("finite differences need at least 3 nodes per axis")


def gradient_array(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Central differences inside, second-order one-sided at the boundary.

    Returns shape ``counts + (dim,)``.
    """
    _require_size(grid)
    grads = np.gradient(values, *grid.spacing, edge_order=2)
    if grid.dim == 1:
        grads = [grads]
    return np.stack(grads, axis=-1)


def hessian_array(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Full symmetric Hessian, shape ``counts + (dim, dim)``."""
    _require_size(grid)
    n, h = grid.dim, grid.spacing
    # boundary layer: nested one-sided differences (exact on quadratics)
    g = np.gradient(values, *h, edge_order=2)
    H = np.empty(values.shape + (n, n))
    for i in range(n):
        gi = np.gradient(g[i], *h, edge_order=2)
        for j in range(n):
            H[..., i, j] = gi[j]
    H = 0.5 * (H + np.swapaxes(H, -1, -2))

    core = tuple(slice(1, -1) for _ in range(n))

    def shifted(offsets):
        return values[tuple(slice(1 + o, c - 1 + o) for o, c in zip(offsets, values.shape))]

    centre = shifted((0,) * n)
    for i in range(n):
        e = [0] * n
        e[i] = 1
        plus = shifted(tuple(e))
        e[i] = -1
        minus = shifted(tuple(e))
        H[core + (i, i)] = (plus - 2.0 * centre + minus) / h[i] ** 2
        for j in range(i + 1, n):
            def corner(si, sj):
                off = [0] * n
                off[i], off[j] = si, sj
                return shifted(tuple(off))

            dij = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / (4.0 * h[i] * h[j])
            H[core + (i, j)] = dij
            H[core + (j, i)] = dij
    return H


@dataclass
class PotentialField(ScalarField):
    """Discrete convex potential with lazily derived ``Du`` and ``D^2u``."""

    @cached_property
    def gradient(self) -> np.ndarray:
        return gradient_array(self.values, self.grid)

    @cached_property
    def hessian(self) -> MatrixField:
        return MatrixField.from_full(self.grid, hessian_array(self.values, self.grid))

    @cached_property
    def hessian_eigenvalues(self) -> np.ndarray:
        return self.hessian.eigvalsh()

    @property
    def boundary(self) -> np.ndarray:
        return self.values[self.grid.boundary()]

    @cached_property
    def convexity_modulus(self) -> float:
        """Smallest Hessian eigenvalue over interior nodes."""
        lam = self.hessian_eigenvalues[..., 0]
        return float(np.min(lam[self.grid.interior(1)]))

    def check_convex(self, tol: float | None = None) -> bool:
        if tol is None:
            tol = 1e-8 * float(np.max(np.abs(self.hessian.upper)))
        return self.convexity_modulus >= -tol

    def with_values(self, values: np.ndarray) -> "PotentialField":
        return PotentialField(self.grid, values)


def gradient_field(u: ScalarField) -> np.ndarray:
    return gradient_array(u.values, u.grid)


def hessian_field(u: ScalarField) -> MatrixField:
    return MatrixField.from_full(u.grid, hessian_array(u.values, u.grid))


def interpolator(grid: GridSpec, values: np.ndarray) -> RegularGridInterpolator:
    return RegularGridInterpolator(grid.axes(), values, method="linear", bounds_error=False, fill_value=None)


def interpolate(f: ScalarField, x) -> float:
    """Multilinear interpolation of ``f`` at the point ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (f.grid.dim,):
        raise GridError(f"point must have {f.grid.dim} coordinates")
    if not f.grid.contains(x):
        raise GridError(f"point {x.tolist()} outside grid box")
    x = np.clip(x, f.grid.lo, f.grid.hi)
    return float(interpolator(f.grid, f.values)(x[None, :])[0])


def interpolate_vector(grid: GridSpec, vec: np.ndarray, x) -> np.ndarray:
    """Componentwise multilinear interpolation of a vector field at ``x``."""
    x = np.asarray(x, dtype=float)
    if not grid.contains(x):
        raise GridError(f"point {x.tolist()} outside grid box")
    x = np.clip(x, grid.lo, grid.hi)
    return np.array([interpolator(grid, vec[..., k])(x[None, :])[0] for k in range(vec.shape[-1])])


def dilate(mask: np.ndarray, layers: int = 1) -> np.ndarray:
    """Grow a node mask by ``layers`` steps of the full 3^n neighbourhood."""
    from scipy.ndimage import binary_dilation

    if layers <= 0:
        return mask.copy()
    st = np.ones((3,) * mask.ndim, dtype=bool)
    return binary_dilation(mask, structure=st, iterations=layers)
