"""Calculus on the gradient graph ``(x, Du(x))``.

The induced metric is taken as ``g = D^2u`` (the customary factor 2 is
dropped), so that on solutions of ``det D^2u = 1`` the Laplace-Beltrami
operator is the non-divergence operator ``sum_ij g^{ij} d_ij``.  All
quantities are nodal arrays; checks read them only on
:func:`valid_interior` nodes, where every stencil involved stays away from
the one-sided boundary differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridSpec,
    MatrixField,
    PotentialField,
    ScalarField,
    gradient_array,
    hessian_array,
    interpolate_vector,
)

# nodes at depth >= 2 never see boundary stencils in second derivatives of
# Hessian-derived quantities
CHECK_DEPTH = 2


@dataclass
class MetricData:
    g: MatrixField
    g_inv: MatrixField
    valid_mask: np.ndarray
    det: np.ndarray

    @property
    def grid(self) -> GridSpec:
        return self.g.grid


@dataclass
class ExtrinsicDistanceField:
    center: np.ndarray
    z: ScalarField
    grad_at_center: np.ndarray


def build_metric(u: PotentialField, eig_floor: float = 1e-8) -> MetricData:
    H = u.hessian.full()
    lam, Q = np.linalg.eigh(H)
    valid = lam[..., 0] >= eig_floor
    safe = np.where(valid[..., None], lam, 1.0)
    ginv = np.einsum("...ik,...k,...jk->...ij", Q, 1.0 / safe, Q)
    ginv[~valid] = np.nan
    return MetricData(
        g=u.hessian,
        g_inv=MatrixField.from_full(u.grid, ginv),
        valid_mask=valid,
        det=np.prod(lam, axis=-1),
    )


def valid_interior(m: MetricData, depth: int = CHECK_DEPTH) -> np.ndarray:
    return m.valid_mask & m.grid.interior(depth)


def laplace_beltrami(f: ScalarField | np.ndarray, m: MetricData) -> np.ndarray:
    """``sum_ij g^{ij} d_ij f``; NaN where the metric is degenerate."""
    vals = f.values if isinstance(f, ScalarField) else np.asarray(f)
    D2 = hessian_array(vals, m.grid)
    return np.einsum("...ij,...ij->...", m.g_inv.full(), D2)


def metric_gradient_sq(f: ScalarField | np.ndarray, m: MetricData) -> np.ndarray:
    """``sum_ij g^{ij} d_i f d_j f``."""
    vals = f.values if isinstance(f, ScalarField) else np.asarray(f)
    Df = gradient_array(vals, m.grid)
    return np.einsum("...ij,...i,...j->...", m.g_inv.full(), Df, Df)


def hessian_quantity_a(u: PotentialField):
    """``a = det(I + D^2u)^(1/2n)`` and ``b = ln det(I + D^2u)``.

    Returns ``(a, b)`` arrays; nodes where ``det(I + D^2u) <= 0`` are NaN
    (only possible for non-convex samples).
    """
    n = u.grid.dim
    lam = u.hessian_eigenvalues
    one_plus = 1.0 + lam
    ok = np.all(one_plus > 0, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        b = np.where(ok, np.sum(np.log(np.where(ok[..., None], one_plus, 1.0)), axis=-1), np.nan)
    a = np.exp(b / (2 * n))
    return a, b


def extrinsic_distance(u: PotentialField, p) -> ExtrinsicDistanceField:
    """``z(x) = <x - p, Du(x) - Du(p)>`` with ``Du(p)`` multilinearly interpolated."""
    p = np.asarray(p, dtype=float)
    Dp = interpolate_vector(u.grid, u.gradient, p)
    x = u.grid.coords()
    z = np.einsum("...k,...k->...", x - p, u.gradient - Dp)
    return ExtrinsicDistanceField(center=p, z=ScalarField(u.grid, z), grad_at_center=Dp)


def geometry_fields(u: PotentialField, p, eig_floor: float = 1e-8) -> dict[str, np.ndarray]:
    """Every nodal quantity the CLI can emit, keyed by name."""
    m = build_metric(u, eig_floor)
    z = extrinsic_distance(u, p).z.values
    a, b = hessian_quantity_a(u)
    return {
        "z": z,
        "a": a,
        "b": b,
        "lap_z": laplace_beltrami(z, m),
        "grad_z_sq": metric_gradient_sq(z, m),
        "lap_a": laplace_beltrami(a, m),
        "grad_a_sq": metric_gradient_sq(a, m),
        "valid": valid_interior(m).astype(float),
    }
