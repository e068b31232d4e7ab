"""Scott-Zhang quasi-interpolation, L2 projections, and empirical calibration
of the constants consumed by the majorants."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .femcore import (FemField, ProblemSpec, apply_homogeneous_dirichlet,
                      assemble_load, assemble_mass, assemble_stiffness, broken_gradient,
                      error_norms, norm_L2, seminorm_H1, solve_cg, solve_reaction_diffusion)
from .mesh import Mesh
from .quadrature import QuadRule, edge_rule, element_weights, quadrature_points, triangle_rule

SAFETY_FACTOR = 1.25


class DualEdgeFunction(NamedTuple):
    """``theta = a * lambda_1 + b * lambda_2`` on an edge."""
    a: float
    b: float


def dual_edge_function(length: float) -> DualEdgeFunction:
    """Linear function on an edge with ``int theta l1 = 1`` and ``int theta l2 = 0``."""
    if not length > 0:
        raise ValueError(f"edge length must be positive, got {length}")
    gram = length * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    a, b = np.linalg.solve(gram, [1.0, 0.0])
    return DualEdgeFunction(float(a), float(b))


@dataclass(frozen=True, eq=False)
class FaceAssignment:
    """Edge ``(vertex, partner)`` chosen for each vertex; the vertex is the
    first endpoint of its edge."""

    partner: np.ndarray

    def edge(self, i: int) -> tuple[int, int]:
        return int(i), int(self.partner[i])


def assign_faces(mesh: Mesh) -> FaceAssignment:
    """Deterministic edge choice: boundary edges for boundary vertices, and
    among admissible edges the one whose far endpoint has the smallest index."""
    edges = mesh.edges
    nv = mesh.n_vertices
    cand = np.full(nv, np.iinfo(np.int64).max, dtype=np.int64)
    for a, b in edges:
        # interior vertices may use any incident edge
        if not mesh.is_boundary_vertex[a]:
            cand[a] = min(cand[a], b)
        if not mesh.is_boundary_vertex[b]:
            cand[b] = min(cand[b], a)
    for a, b in mesh.boundary_edges:
        cand[a] = min(cand[a], b)
        cand[b] = min(cand[b], a)
    if np.any(cand == np.iinfo(np.int64).max):
        raise ValueError(f"vertex {int(np.flatnonzero(cand == np.iinfo(np.int64).max)[0])} has no edge")
    return FaceAssignment(cand)


def scott_zhang(v, mesh: Mesh, assignment: FaceAssignment | None = None,
                rule: QuadRule | None = None) -> FemField:
    """Scott-Zhang quasi-interpolant of ``v``.

    ``v`` is a callable ``(x, y)`` or a :class:`FemField` on ``mesh`` (whose
    trace on an edge is linear in the endpoint values).
    """
    assignment = assignment or assign_faces(mesh)
    rule = rule or edge_rule(5)
    i = np.arange(mesh.n_vertices)
    j = assignment.partner
    p, q = mesh.vertices[i], mesh.vertices[j]
    L = np.linalg.norm(q - p, axis=1)
    l1, l2 = rule.points[:, 0], rule.points[:, 1]
    if isinstance(v, FemField):
        vals = np.outer(v.coefficients[i], l1) + np.outer(v.coefficients[j], l2)
    else:
        x = np.outer(p[:, 0], l1) + np.outer(q[:, 0], l2)
        y = np.outer(p[:, 1], l1) + np.outer(q[:, 1], l2)
        vals = np.broadcast_to(v(x, y), x.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("function is not finite on an assigned edge")
    # theta_i = (4 l1 - 2 l2) / L, integrated against v over an edge of length L
    theta = (4.0 * l1 - 2.0 * l2)[None, :] / L[:, None]
    coeff = L * np.sum(rule.weights[None, :] * theta * vals, axis=1)
    return FemField(coeff, mesh)


def _interior_mass_solve(mesh, b, rel_tol):
    M = assemble_mass(mesh)
    red = apply_homogeneous_dirichlet(M, b, mesh)
    c = np.zeros(mesh.n_vertices)
    c[red.free] = solve_cg(red.system, red.rhs, rel_tol)
    return c


def l2_project_scalar(v, mesh: Mesh, zero_trace: bool = False, rule: QuadRule | None = None,
                      rel_tol: float = 1e-13) -> FemField:
    """Global L2 projection onto P1, or onto its zero-trace subspace."""
    rule = rule or triangle_rule(6)
    if isinstance(v, FemField):
        vq = v.at_quadrature(rule)
        b = np.bincount(mesh.triangles.ravel(),
                        ((vq * element_weights(mesh, rule)) @ rule.points).ravel(),
                        minlength=mesh.n_vertices)
    else:
        b = assemble_load(mesh, v, rule)
    if zero_trace:
        return FemField(_interior_mass_solve(mesh, b, rel_tol), mesh, zero_trace=True)
    return FemField(solve_cg(assemble_mass(mesh), b, rel_tol), mesh)


@dataclass(frozen=True, eq=False)
class ElementwiseP1:
    """Discontinuous P1 function: local vertex values ``(nt, 3)``."""

    values: np.ndarray
    mesh: Mesh

    def at_quadrature(self, rule: QuadRule) -> np.ndarray:
        return self.values @ rule.points.T


def elementwise_p1_projection(f, mesh: Mesh, rule: QuadRule | None = None) -> ElementwiseP1:
    """Local L2 projection of ``f`` onto P1 on every triangle."""
    rule = rule or triangle_rule(6)
    X, Y = quadrature_points(mesh, rule)
    fw = np.broadcast_to(f(X, Y), X.shape) * element_weights(mesh, rule)
    moments = fw @ rule.points  # (nt, 3) int f lambda_i
    inv_ref = np.linalg.inv((np.ones((3, 3)) + np.eye(3)) / 12.0)
    return ElementwiseP1((moments @ inv_ref) / mesh.areas[:, None], mesh)


def oscillation_squared(f, mesh: Mesh, fhat: ElementwiseP1 | None = None,
                        rule: QuadRule | None = None) -> np.ndarray:
    """Per-element ``||f - Pi_r f||^2``."""
    rule = rule or triangle_rule(6)
    fhat = fhat or elementwise_p1_projection(f, mesh, rule)
    X, Y = quadrature_points(mesh, rule)
    d = np.broadcast_to(f(X, Y), X.shape) - fhat.at_quadrature(rule)
    return np.sum(element_weights(mesh, rule) * d * d, axis=1)


# -- calibration ----------------------------------------------------------------

@dataclass
class CalibrationReport:
    """Measured ratios per mesh level, the running supremum, and the value
    handed to the estimators (``safety_factor * supremum``)."""

    constant: str
    levels: list[int] = field(default_factory=list)
    h: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    samples: list[str] = field(default_factory=list)
    sigmas: list[float] = field(default_factory=list)
    safety_factor: float = 1.0

    def add(self, level: int, h: float, ratio: float) -> None:
        self.levels.append(int(level))
        self.h.append(float(h))
        self.ratios.append(float(ratio))

    @property
    def running_supremum(self) -> list[float]:
        return list(np.maximum.accumulate(self.ratios)) if self.ratios else []

    @property
    def supremum(self) -> float:
        return float(max(self.ratios))

    @property
    def value(self) -> float:
        return self.safety_factor * self.supremum

    def rows(self):
        for lv, h, r, s in zip(self.levels, self.h, self.ratios, self.running_supremum):
            yield {"constant": self.constant, "level": lv, "h": repr(h), "ratio": repr(r), "supremum": repr(float(s))}


CSV_FIELDS = ["constant", "level", "h", "ratio", "supremum"]


def write_calibration_csv(reports: Sequence[CalibrationReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for rep in reports:
            w.writerows(rep.rows())


def read_calibration_csv(path, safety_factor: float = SAFETY_FACTOR) -> dict[str, float]:
    """Constants from a calibration CSV: final supremum times ``safety_factor``.

    Derived entries (``c_sz11``) are rebuilt from their parts, as they were
    assembled from safety-scaled components in the first place.
    """
    sup: dict[str, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sup[row["constant"]] = float(row["supremum"])
    out = {}
    for name, s in sup.items():
        out[name] = s if name in ("c_10", "c_sz11") else safety_factor * s
    if {"c_sz01", "c_sz_breve", "c_10"} <= out.keys():
        out["c_sz11"] = out["c_sz_breve"] + 2.0 * out["c_10"] * out["c_sz01"]
    return out


@dataclass(frozen=True)
class SampleFunction:
    name: str
    value: Callable
    gradient: Callable
    hessian: Callable | None = None  # (vxx, vxy, vyy)


def default_samples() -> list[SampleFunction]:
    """``sin(k pi x) sin(l pi y)`` for ``k, l`` in 1..3 plus two polynomial bumps."""
    out = []
    for k in (1, 2, 3):
        for l in (1, 2, 3):
            a, b = k * np.pi, l * np.pi
            out.append(SampleFunction(
                f"sin{k}{l}",
                lambda x, y, a=a, b=b: np.sin(a * x) * np.sin(b * y),
                lambda x, y, a=a, b=b: (a * np.cos(a * x) * np.sin(b * y),
                                        b * np.sin(a * x) * np.cos(b * y)),
                lambda x, y, a=a, b=b: (-a * a * np.sin(a * x) * np.sin(b * y),
                                        a * b * np.cos(a * x) * np.cos(b * y),
                                        -b * b * np.sin(a * x) * np.sin(b * y))))
    p = lambda t: t * (1 - t)
    dp = lambda t: 1 - 2 * t
    out.append(SampleFunction(
        "bubble",
        lambda x, y: p(x) * p(y),
        lambda x, y: (dp(x) * p(y), p(x) * dp(y)),
        lambda x, y: (-2 * p(y), dp(x) * dp(y), -2 * p(x))))
    # (p(x) p(y))^2 = q(x) q(y) with q = p^2, q' = 2 p p', q'' = 2 p'^2 - 4 p
    q = lambda t: p(t) ** 2
    dq = lambda t: 2 * p(t) * dp(t)
    ddq = lambda t: 2 * dp(t) ** 2 - 4 * p(t)
    out.append(SampleFunction(
        "bubble2",
        lambda x, y: q(x) * q(y),
        lambda x, y: (dq(x) * q(y), q(x) * dq(y)),
        lambda x, y: (ddq(x) * q(y), dq(x) * dq(y), q(x) * ddq(y))))
    return out


def interpolation_errors(sample: SampleFunction, mesh: Mesh, degree: int = 6):
    """``(||v - I_h v||_0, |v - I_h v|_1, |I_h v|_1, |v|_1)`` for the Scott-Zhang interpolant."""
    rule = triangle_rule(degree)
    X, Y = quadrature_points(mesh, rule)
    Iv = scott_zhang(sample.value, mesh)
    g = broken_gradient(Iv)
    vx, vy = sample.gradient(X, Y)
    e0 = norm_L2(sample.value(X, Y) - Iv.at_quadrature(rule), mesh, rule)
    e1 = seminorm_H1((vx - g[:, :1], vy - g[:, 1:]), mesh, rule)
    i1 = seminorm_H1((np.broadcast_to(g[:, :1], X.shape), np.broadcast_to(g[:, 1:], X.shape)), mesh, rule)
    v1 = seminorm_H1((vx, vy), mesh, rule)
    return e0, e1, i1, v1


def inverse_constant(mesh: Mesh) -> float:
    """``max h |w|_1 / ||w||_0`` over P1 fields (largest generalised eigenvalue)."""
    K = assemble_stiffness(mesh, np.eye(2)).matrix.tocsc()
    M = assemble_mass(mesh).matrix.tocsc()
    lam = spla.eigsh(K, k=1, M=M, which="LA", return_eigenvectors=False, tol=1e-10)[0]
    return float(mesh.h * np.sqrt(lam))


def _labels(meshes, levels):
    if levels is None:
        return list(range(len(meshes)))
    if len(levels) != len(meshes):
        raise ValueError("one level label per mesh is required")
    return list(levels)


def calibrate_csz(meshes: Sequence[Mesh], samples: Sequence[SampleFunction] | None = None,
                  safety_factor: float = SAFETY_FACTOR,
                  levels: Sequence[int] | None = None) -> dict[str, CalibrationReport]:
    """Calibrate ``c_sz(0,1)``, the stability constant, ``c_{1,0}`` and the
    assembled ``c~_sz(1,1) = c_breve + 2 c_10 c_sz(0,1)``."""
    if len(meshes) < 2:
        raise ValueError("calibration needs at least two mesh levels")
    samples = list(samples or default_samples())
    names = [s.name for s in samples]
    c01 = CalibrationReport("c_sz01", samples=names, safety_factor=safety_factor)
    cb = CalibrationReport("c_sz_breve", samples=names, safety_factor=safety_factor)
    c10 = CalibrationReport("c_10", samples=["P1 eigenvector"], safety_factor=1.0)
    c11 = CalibrationReport("c_sz11", samples=names, safety_factor=1.0)
    for level, mesh in zip(_labels(meshes, levels), meshes):
        r01, rb = 0.0, 0.0
        for s in samples:
            e0, _, i1, v1 = interpolation_errors(s, mesh)
            r01 = max(r01, e0 / (mesh.h * v1))
            rb = max(rb, i1 / v1)
        r10 = inverse_constant(mesh)
        c01.add(level, mesh.h, r01)
        cb.add(level, mesh.h, rb)
        c10.add(level, mesh.h, r10)
    # per-level assembled value uses the running suprema, so the final entry
    # equals the formula applied to the reported constants
    for k in range(len(meshes)):
        val = (safety_factor * cb.running_supremum[k]
               + 2.0 * c10.running_supremum[k] * safety_factor * c01.running_supremum[k])
        c11.add(c01.levels[k], c01.h[k], val)
    return {"c_sz01": c01, "c_sz_breve": cb, "c_10": c10, "c_sz11": c11}


def h2_seminorm(sample: SampleFunction, mesh: Mesh, degree: int = 6) -> float:
    """``|v|_2 = (int vxx^2 + 2 vxy^2 + vyy^2)^(1/2)``."""
    if sample.hessian is None:
        raise ValueError(f"sample {sample.name!r} has no Hessian")
    rule = triangle_rule(degree)
    X, Y = quadrature_points(mesh, rule)
    vxx, vxy, vyy = sample.hessian(X, Y)
    q = vxx * vxx + 2 * vxy * vxy + vyy * vyy
    return float(np.sqrt(np.sum(element_weights(mesh, rule) * q)))


def calibrate_cap(meshes: Sequence[Mesh], samples: Sequence[SampleFunction] | None = None,
                  safety_factor: float = SAFETY_FACTOR,
                  levels: Sequence[int] | None = None) -> CalibrationReport:
    """``c_ap = sup |v - I_h v|_1 / (h |v|_2)`` with the Scott-Zhang interpolant.

    The H2 seminorm stands in for the full norm; it is smaller, so the ratio
    can only overestimate the constant.
    """
    if len(meshes) < 2:
        raise ValueError("calibration needs at least two mesh levels")
    samples = list(samples or default_samples())
    rep = CalibrationReport("c_ap", samples=[s.name for s in samples], safety_factor=safety_factor)
    for level, mesh in zip(_labels(meshes, levels), meshes):
        ratio = max(interpolation_errors(s, mesh)[1] / (mesh.h * h2_seminorm(s, mesh)) for s in samples)
        rep.add(level, mesh.h, ratio)
    return rep


def regularity_cdagger(A, c_ap: float, c_circ: float = 2.0) -> float:
    """``c_dagger = sqrt(mu2) / mu1 * c_circ * c_ap`` from the H2-regularity route.

    ``c_circ = 2`` covers convex domains for every ``sigma >= 0``.
    """
    if not (c_ap > 0 and c_circ > 0):
        raise ValueError("c_ap and c_circ must be positive")
    mu = np.linalg.eigvalsh(np.asarray(A, float))
    return float(np.sqrt(mu[1]) / mu[0] * c_circ * c_ap)


def critical_sigma_from_errors(problem: ProblemSpec, v: FemField, projected: bool = False) -> float:
    """Largest admissible ``sigma_*`` measured with the exact solution.

    ``||u - v||_A^2 / ||u - v||_0^2`` by default; with ``projected`` the
    denominator is ``||u - Qu||_0^2`` for the L2 projection ``Q`` onto the
    zero-trace P1 space (admissible for Galerkin solutions).
    """
    if problem.exact is None:
        raise ValueError("the exact solution is required")
    norms = error_norms(problem, v)
    if projected:
        mesh = v.mesh
        Qu = l2_project_scalar(problem.exact.value, mesh, zero_trace=True)
        rule = triangle_rule(6)
        X, Y = quadrature_points(mesh, rule)
        denom = norm_L2(problem.exact.value(X, Y) - Qu.at_quadrature(rule), mesh, rule) ** 2
    else:
        denom = norms.l2 ** 2
    if denom == 0:
        raise ValueError("zero L2 error: the critical value is unbounded")
    return norms.a ** 2 / denom


def nitsche_ratio(problem: ProblemSpec, mesh: Mesh) -> float:
    """``||e||_0 / (h ||e||_A)`` for the finite element solution."""
    norms = error_norms(problem, solve_reaction_diffusion(problem, mesh))
    if norms.a == 0:
        raise ValueError("zero energy error: exact solution lies in the finite element space")
    return norms.l2 / (mesh.h * norms.a)


def calibrate_cdagger(problems: Sequence[ProblemSpec], meshes: Sequence[Mesh],
                      safety_factor: float = SAFETY_FACTOR,
                      levels: Sequence[int] | None = None) -> CalibrationReport:
    """``c_dagger = safety * sup ||e||_0 / (h ||e||_A)`` over problems and levels.

    Entries of ``problems`` may be callables ``mesh -> ProblemSpec`` for
    mesh-dependent reaction coefficients.
    """
    if len(meshes) < 2:
        raise ValueError("calibration needs at least two mesh levels")
    rep = CalibrationReport("c_dagger", safety_factor=safety_factor)
    for level, mesh in zip(_labels(meshes, levels), meshes):
        concrete = [p if isinstance(p, ProblemSpec) else p(mesh) for p in problems]
        rep.samples += [p.name for p in concrete if p.name not in rep.samples]
        rep.sigmas += [p.sigma for p in concrete]
        rep.add(level, mesh.h, max(nitsche_ratio(p, mesh) for p in concrete))
    return rep


def critical_sigma(c_dagger: float, h: float) -> float:
    """``sigma_* = 1 / (c_dagger h)^2``."""
    return 1.0 / (c_dagger * h) ** 2
