"""P1 Galerkin discretisation of ``-div(A grad u) + sigma u = f`` with
homogeneous Dirichlet data, plus the norms used to measure errors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from .quadrature import (QuadRule, element_weights, integrate_elementwise,
                         quadrature_points, triangle_rule)

Evaluable = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    """Conjugate gradients did not reach the requested tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class ExactSolution:
    """Manufactured solution: value, gradient and (optionally) Hessian.

    ``gradient`` returns ``(ux, uy)``; ``hessian`` returns ``(uxx, uxy, uyy)``.
    """

    value: Evaluable
    gradient: Callable
    hessian: Optional[Callable] = None


@dataclass(frozen=True)
class ProblemSpec:
    A: np.ndarray
    sigma: float
    f: Evaluable
    exact: Optional[ExactSolution] = None
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.shape != (2, 2):
            raise ValueError("A must be a 2x2 matrix")
        if A[0, 1] != A[1, 0]:
            raise ValueError("A must be symmetric")
        if np.linalg.eigvalsh(A)[0] <= 0:
            raise ValueError("A must be positive definite")
        if not self.sigma >= 0:
            raise ValueError(f"reaction coefficient must be >= 0, got {self.sigma}")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.exact is not None and self.exact.hessian is not None:
            s = np.linspace(0.1, 0.9, 5)
            x, y = (c.ravel() for c in np.meshgrid(s, s[::-1] * 0.97))
            r = np.abs(self.strong_residual(x, y))
            scale = 1.0 + np.abs(np.broadcast_to(self.f(x, y), x.shape))
            if np.any(r > 1e-8 * scale):
                raise ValueError("exact solution does not satisfy -div(A grad u) + sigma u = f "
                                 f"(max residual {r.max():.3e})")

    @property
    def mu1(self) -> float:
        return float(np.linalg.eigvalsh(self.A)[0])

    @property
    def mu2(self) -> float:
        return float(np.linalg.eigvalsh(self.A)[1])

    def strong_residual(self, x, y):
        """``-div(A grad u) + sigma u - f`` for the exact solution."""
        if self.exact is None or self.exact.hessian is None:
            raise ValueError("problem has no exact solution with Hessian")
        uxx, uxy, uyy = self.exact.hessian(x, y)
        A = self.A
        lap = A[0, 0] * uxx + 2 * A[0, 1] * uxy + A[1, 1] * uyy
        return -lap + self.sigma * self.exact.value(x, y) - self.f(x, y)

    def with_sigma(self, sigma: float) -> "ProblemSpec":
        """Same operator and exact solution, source rebuilt for a new sigma."""
        if self.exact is None:
            raise ValueError("cannot rebuild the source without an exact solution")
        old, f, u = self.sigma, self.f, self.exact.value
        return ProblemSpec(self.A, sigma, lambda x, y: f(x, y) + (sigma - old) * u(x, y),
                           self.exact, self.name)


@dataclass(frozen=True, eq=False)
class FemField:
    """Continuous piecewise linear function given by its vertex values."""

    coefficients: np.ndarray
    mesh: Mesh
    zero_trace: bool = False

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.shape != (self.mesh.n_vertices,):
            raise ValueError("one coefficient per mesh vertex is required")
        if self.zero_trace and np.any(c[self.mesh.boundary_vertices] != 0.0):
            raise ValueError("zero_trace field has nonzero boundary coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def interpolate(cls, func: Evaluable, mesh: Mesh) -> "FemField":
        x, y = mesh.vertices.T
        return cls(np.broadcast_to(func(x, y), x.shape).astype(float), mesh)

    def at_quadrature(self, rule: QuadRule) -> np.ndarray:
        return self.coefficients[self.mesh.triangles] @ rule.points.T

    def gradient(self) -> np.ndarray:
        return broken_gradient(self)


@dataclass(frozen=True)
class SparseSystem:
    matrix: sp.csr_matrix
    symmetric: bool = True

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def local_stiffness(mesh: Mesh, A) -> np.ndarray:
    """``(nt, 3, 3)`` element matrices ``area * G A G^T``."""
    G = mesh.barycentric_gradients
    K = mesh.areas[:, None, None] * np.einsum("tik,kl,tjl->tij", G, np.asarray(A, float), G)
    return 0.5 * (K + K.transpose(0, 2, 1))


def local_mass(mesh: Mesh) -> np.ndarray:
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return mesh.areas[:, None, None] * base


def assemble_stiffness(mesh: Mesh, A) -> SparseSystem:
    return SparseSystem(_assemble(mesh, local_stiffness(mesh, A)))


def assemble_mass(mesh: Mesh) -> SparseSystem:
    return SparseSystem(_assemble(mesh, local_mass(mesh)))


def assemble_load(mesh: Mesh, f: Evaluable, rule: QuadRule | None = None) -> np.ndarray:
    rule = rule or triangle_rule(4)
    X, Y = quadrature_points(mesh, rule)
    fw = np.broadcast_to(f(X, Y), X.shape) * element_weights(mesh, rule)
    local = fw @ rule.points  # (nt, 3)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)


class ReducedSystem(NamedTuple):
    system: SparseSystem
    rhs: np.ndarray
    free: np.ndarray


def apply_homogeneous_dirichlet(system: SparseSystem, rhs, mesh: Mesh) -> ReducedSystem:
    """Restrict to interior vertices (boundary values are zero)."""
    free = mesh.interior_vertices
    if len(free) == 0:
        raise ValueError("mesh has no interior vertices")
    K = system.matrix[free][:, free].tocsr()
    return ReducedSystem(SparseSystem(K, system.symmetric), np.asarray(rhs, float)[free], free)


def solve_cg(system: SparseSystem, rhs, rel_tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Diagonally preconditioned CG; raises :class:`SolverError` on stagnation."""
    K = system.matrix
    b = np.asarray(rhs, dtype=float)
    max_iter = max_iter or 10 * system.dimension
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    d = K.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has a non-positive diagonal entry", np.inf)
    M = sp.diags(1.0 / d)
    x, info = None, 0
    for _ in range(3):
        # warm restarts absorb drift between the recursive and the true residual
        x, info = spla.cg(K, b, x0=x, rtol=rel_tol, atol=0.0, maxiter=max_iter, M=M)
        res = np.linalg.norm(b - K @ x) / bnorm
        if info != 0 or res <= rel_tol:
            break
    if info != 0 or res > rel_tol:
        raise SolverError(f"CG did not converge in {max_iter} iterations "
                          f"(relative residual {res:.3e} > {rel_tol:.1e})", res)
    return x


def reaction_diffusion_matrix(problem: ProblemSpec, mesh: Mesh) -> SparseSystem:
    K = assemble_stiffness(mesh, problem.A).matrix
    if problem.sigma:
        K = K + problem.sigma * assemble_mass(mesh).matrix
    return SparseSystem(K.tocsr())


def solve_reaction_diffusion(problem: ProblemSpec, mesh: Mesh, rule: QuadRule | None = None,
                             rel_tol: float = 1e-10) -> FemField:
    system = reaction_diffusion_matrix(problem, mesh)
    b = assemble_load(mesh, problem.f, rule)
    reduced = apply_homogeneous_dirichlet(system, b, mesh)
    u = np.zeros(mesh.n_vertices)
    u[reduced.free] = solve_cg(reduced.system, reduced.rhs, rel_tol)
    return FemField(u, mesh, zero_trace=True)


def galerkin_residual(problem: ProblemSpec, field: FemField, rule: QuadRule | None = None) -> np.ndarray:
    """``a(u,w) + sigma (u,w) - (f,w)`` for every interior hat function ``w``."""
    mesh = field.mesh
    K = reaction_diffusion_matrix(problem, mesh).matrix
    r = K @ field.coefficients - assemble_load(mesh, problem.f, rule)
    return r[mesh.interior_vertices]


def broken_gradient(field: FemField) -> np.ndarray:
    """``(nt, 2)`` gradient of the field on each element."""
    c = field.coefficients[field.mesh.triangles]
    return np.einsum("ti,tid->td", c, field.mesh.barycentric_gradients)


# -- norms --------------------------------------------------------------------

def _values(v, mesh, rule):
    if callable(v):
        X, Y = quadrature_points(mesh, rule)
        return np.broadcast_to(v(X, Y), X.shape)
    return np.asarray(v, dtype=float)


def _grad_values(g, mesh, rule):
    if callable(g):
        X, Y = quadrature_points(mesh, rule)
        gx, gy = g(X, Y)
        return np.broadcast_to(gx, X.shape), np.broadcast_to(gy, X.shape)
    gx, gy = g
    return np.asarray(gx, float), np.asarray(gy, float)


def norm_L2(values, mesh: Mesh, rule: QuadRule | None = None) -> float:
    """L2 norm of a callable ``(X, Y)`` or of values at the rule's points."""
    rule = rule or triangle_rule(6)
    v = _values(values, mesh, rule)
    return float(np.sqrt(integrate_elementwise(mesh, v * v, rule).sum()))


def seminorm_H1(grad, mesh: Mesh, rule: QuadRule | None = None, A=None) -> float:
    """``(int grad . A grad)^(1/2)``; ``A`` defaults to the identity."""
    rule = rule or triangle_rule(6)
    gx, gy = _grad_values(grad, mesh, rule)
    if A is None:
        q = gx * gx + gy * gy
    else:
        A = np.asarray(A, float)
        q = A[0, 0] * gx * gx + 2 * A[0, 1] * gx * gy + A[1, 1] * gy * gy
    return float(np.sqrt(integrate_elementwise(mesh, q, rule).sum()))


def energy_norm(e_grad, e_val, problem: ProblemSpec, mesh: Mesh, rule: QuadRule | None = None) -> float:
    """``(|e|_A^2 + sigma ||e||_0^2)^(1/2)``."""
    a = seminorm_H1(e_grad, mesh, rule, problem.A)
    l2 = norm_L2(e_val, mesh, rule)
    return float(np.sqrt(a * a + problem.sigma * l2 * l2))


class ErrorNorms(NamedTuple):
    l2: float
    h1: float
    a: float
    energy: float


def error_norms(problem: ProblemSpec, field: FemField, degree: int = 6) -> ErrorNorms:
    """Exact errors of ``field`` against the manufactured solution."""
    if problem.exact is None:
        raise ValueError("problem has no exact solution")
    mesh = field.mesh
    rule = triangle_rule(degree)
    X, Y = quadrature_points(mesh, rule)
    e = problem.exact.value(X, Y) - field.at_quadrature(rule)
    ux, uy = problem.exact.gradient(X, Y)
    g = broken_gradient(field)
    ex, ey = ux - g[:, :1], uy - g[:, 1:]
    l2 = norm_L2(e, mesh, rule)
    h1 = seminorm_H1((ex, ey), mesh, rule)
    a = seminorm_H1((ex, ey), mesh, rule, problem.A)
    return ErrorNorms(l2, h1, a, float(np.sqrt(a * a + problem.sigma * l2 * l2)))


@dataclass
class APrioriReport:
    h: list[float] = field(default_factory=list)
    l2: list[float] = field(default_factory=list)
    a: list[float] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)

    @staticmethod
    def _rates(values, h):
        out = []
        for k in range(1, len(values)):
            if values[k] == 0 or values[k - 1] == 0:
                out.append(float("nan"))
            else:
                out.append(float(np.log(values[k - 1] / values[k]) / np.log(h[k - 1] / h[k])))
        return out

    @property
    def l2_rates(self):
        return self._rates(self.l2, self.h)

    @property
    def a_rates(self):
        return self._rates(self.a, self.h)

    @property
    def energy_rates(self):
        return self._rates(self.energy, self.h)


def a_priori_report(problem, meshes: Sequence[Mesh], degree: int = 6) -> APrioriReport:
    """Errors and observed orders along a mesh sequence.

    ``problem`` is a :class:`ProblemSpec` or a callable ``mesh -> ProblemSpec``
    (for mesh-dependent reaction coefficients such as ``sigma = h^-2``).
    """
    rep = APrioriReport()
    for mesh in meshes:
        p = problem(mesh) if callable(problem) and not isinstance(problem, ProblemSpec) else problem
        if p.exact is None:
            raise ValueError("a priori report needs an exact solution")
        norms = error_norms(p, solve_reaction_diffusion(p, mesh), degree)
        rep.h.append(mesh.h)
        rep.l2.append(norms.l2)
        rep.a.append(norms.a)
        rep.energy.append(norms.energy)
    return rep
