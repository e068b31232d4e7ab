"""Testing fluxes recovered from a discrete solution.

Nothing here equilibrates: the residual ``f - sigma u - div z`` of a recovered
flux is whatever the recovery leaves behind.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .femcore import FemField, assemble_mass, broken_gradient, solve_cg
from .mesh import Mesh
from .quadrature import QuadRule, element_weights

BROKEN = "broken"
CONFORMING = "conforming"


@dataclass(frozen=True, eq=False)
class FluxField:
    """Vector field on a mesh.

    ``broken``: one constant 2-vector per triangle, ``values`` is ``(nt, 2)``.
    ``conforming``: continuous piecewise linear, ``values`` is ``(nv, 2)``.
    """

    kind: str
    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        expected = {BROKEN: self.mesh.n_triangles, CONFORMING: self.mesh.n_vertices}
        if self.kind not in expected:
            raise ValueError(f"unknown flux kind {self.kind!r}")
        v = np.array(self.values, dtype=float)
        if v.shape != (expected[self.kind], 2):
            raise ValueError(f"{self.kind} flux needs shape ({expected[self.kind]}, 2), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def conforming(self) -> bool:
        return self.kind == CONFORMING

    @classmethod
    def interpolate(cls, func, mesh: Mesh) -> "FluxField":
        """Conforming nodal interpolant of ``func(x, y) -> (zx, zy)``."""
        x, y = mesh.vertices.T
        zx, zy = func(x, y)
        return cls(CONFORMING, np.column_stack([np.broadcast_to(zx, x.shape),
                                                np.broadcast_to(zy, x.shape)]), mesh)

    def at_quadrature(self, rule: QuadRule):
        """Components ``(zx, zy)`` at the rule points, each ``(nt, nq)``."""
        if self.kind == BROKEN:
            shape = (self.mesh.n_triangles, rule.size)
            return (np.broadcast_to(self.values[:, :1], shape),
                    np.broadcast_to(self.values[:, 1:], shape))
        local = self.values[self.mesh.triangles]  # (nt, 3, 2)
        z = np.einsum("qi,tid->tqd", rule.points, local)
        return z[..., 0], z[..., 1]


def numerical_flux(u: FemField, A) -> FluxField:
    """``-A grad u`` on each element."""
    return FluxField(BROKEN, -broken_gradient(u) @ np.asarray(A, float).T, u.mesh)


def average_flux(flux: FluxField, stats: dict | None = None) -> FluxField:
    """Area-weighted vertex average of a broken flux.

    If ``stats`` is given it receives the number of element contributions
    accumulated and the number of vertex normalisations performed.
    """
    if flux.kind != BROKEN:
        raise ValueError("average_flux expects a broken flux")
    mesh = flux.mesh
    t = mesh.triangles.ravel()
    w = np.repeat(mesh.areas, 3)
    acc = np.stack([np.bincount(t, w * np.repeat(flux.values[:, k], 3), minlength=mesh.n_vertices)
                    for k in range(2)], axis=1)
    weight = np.bincount(t, w, minlength=mesh.n_vertices)
    if stats is not None:
        stats["accumulations"] = stats.get("accumulations", 0) + t.size
        stats["normalisations"] = stats.get("normalisations", 0) + mesh.n_vertices
    return FluxField(CONFORMING, acc / weight[:, None], mesh)


def _broken_load(flux: FluxField) -> np.ndarray:
    # int z_broken * phi_i = z_r * area / 3 on each incident element
    mesh = flux.mesh
    t = mesh.triangles.ravel()
    w = np.repeat(mesh.areas / 3.0, 3)
    return np.stack([np.bincount(t, w * np.repeat(flux.values[:, k], 3), minlength=mesh.n_vertices)
                     for k in range(2)], axis=1)


def l2_project_flux(flux: FluxField, rel_tol: float = 1e-13) -> FluxField:
    """Global L2 projection of a broken flux onto continuous P1 vector fields."""
    if flux.kind != BROKEN:
        raise ValueError("l2_project_flux expects a broken flux")
    M = assemble_mass(flux.mesh)
    b = _broken_load(flux)
    z = np.column_stack([solve_cg(M, b[:, k], rel_tol) for k in range(2)])
    return FluxField(CONFORMING, z, flux.mesh)


def projection_residual(projected: FluxField, broken: FluxField) -> float:
    """Relative residual of ``(z_proj - z_broken, w) = 0`` over all P1 test fields."""
    M = assemble_mass(projected.mesh).matrix
    b = _broken_load(broken)
    r = M @ projected.values - b
    return float(np.linalg.norm(r) / max(np.linalg.norm(b), np.finfo(float).tiny))


def divergence(flux: FluxField, r: int | None = None):
    """Element-wise constant divergence of a conforming flux."""
    if flux.kind != CONFORMING:
        raise ValueError("divergence is only defined for conforming fluxes")
    mesh = flux.mesh
    div = np.einsum("tid,tid->t", flux.values[mesh.triangles], mesh.barycentric_gradients)
    return div if r is None else float(div[r])


def flux_difference_norm(a: FluxField, b: FluxField, rule: QuadRule) -> float:
    """``||a - b||_0`` for any combination of flux kinds on the same mesh."""
    ax, ay = a.at_quadrature(rule)
    bx, by = b.at_quadrature(rule)
    q = (ax - bx) ** 2 + (ay - by) ** 2
    return float(np.sqrt(np.sum(element_weights(a.mesh, rule) * q)))
