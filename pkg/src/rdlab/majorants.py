"""A posteriori error majorants for reaction-diffusion problems.

Every estimator bounds the squared energy norm ``|||u - v|||^2`` and is
reported as::

    total = prefactor * (diffusion + residual_mult * residual_sq) + oscillation

with ``diffusion = ||A grad v + z||^2_{A^-1}`` and ``residual_sq`` the squared
L2 norm of ``g - sigma v - div z`` (``g`` is ``f`` or its element-wise P1
projection).  The flux sign convention is ``z ~ -A grad u``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .femcore import FemField, ProblemSpec, broken_gradient
from .fluxrec import FluxField, divergence
from .quadrature import element_weights, quadrature_points, triangle_rule
from .szproj import elementwise_p1_projection, oscillation_squared

UNIT_SQUARE_C_OMEGA = 1.0 / (2.0 * np.pi ** 2)


class SigmaRangeError(ValueError):
    """The reaction coefficient lies outside the estimator's validity range."""


@dataclass
class MajorantReport:
    estimator: str
    total: float
    diffusion: float
    residual_sq: float
    residual_mult: float
    prefactor: float
    oscillation: float = 0.0
    sigma: float = 0.0
    sigma_star: float = float("nan")
    h: float = float("nan")
    constants: dict = field(default_factory=dict)
    diffusion_elements: np.ndarray | None = None
    residual_elements: np.ndarray | None = None
    oscillation_elements: np.ndarray | None = None

    def recombined(self) -> float:
        return self.prefactor * (self.diffusion + self.residual_mult * self.residual_sq) + self.oscillation

    def effectivity(self, true_energy_sq: float) -> float:
        return effectivity(self, true_energy_sq)


def _combine(name, prefactor, mult, diff_el, res_el, osc_el=None, **kw) -> MajorantReport:
    diffusion = float(diff_el.sum())
    residual_sq = float(res_el.sum())
    oscillation = float(osc_el.sum()) if osc_el is not None else 0.0
    total = prefactor * (diffusion + mult * residual_sq) + oscillation
    return MajorantReport(name, total, diffusion, residual_sq, mult, prefactor, oscillation,
                          diffusion_elements=diff_el, residual_elements=res_el,
                          oscillation_elements=osc_el, **kw)


# -- building blocks ------------------------------------------------------------

def _require_conforming(z: FluxField):
    if not z.conforming:
        raise ValueError("majorants need a conforming (H(div)) flux; got a broken one")


def diffusion_elements(v: FemField, z: FluxField, A) -> np.ndarray:
    """Per-element ``int (A grad v + z) . A^-1 (A grad v + z)``."""
    _require_conforming(z)
    mesh = v.mesh
    A = np.asarray(A, float)
    rule = triangle_rule(2)  # integrand is quadratic
    Agv = broken_gradient(v) @ A.T
    zx, zy = z.at_quadrature(rule)
    wx, wy = Agv[:, :1] + zx, Agv[:, 1:] + zy
    Ai = np.linalg.inv(A)
    q = Ai[0, 0] * wx * wx + 2 * Ai[0, 1] * wx * wy + Ai[1, 1] * wy * wy
    return np.sum(element_weights(mesh, rule) * q, axis=1)


def diffusion_term(v: FemField, z: FluxField, A) -> float:
    return float(diffusion_elements(v, z, A).sum())


def residual_elements(problem: ProblemSpec, v: FemField, z: FluxField, use_fhat: bool = False,
                      degree: int = 4) -> np.ndarray:
    """Per-element ``||g - sigma v - div z||^2`` with ``g = f`` or its local P1 projection."""
    _require_conforming(z)
    mesh = v.mesh
    rule = triangle_rule(degree)
    X, Y = quadrature_points(mesh, rule)
    if use_fhat:
        g = elementwise_p1_projection(problem.f, mesh).at_quadrature(rule)
    else:
        g = np.broadcast_to(problem.f(X, Y), X.shape)
    r = g - problem.sigma * v.at_quadrature(rule) - divergence(z)[:, None]
    return np.sum(element_weights(mesh, rule) * r * r, axis=1)


def residual_norm(problem: ProblemSpec, v: FemField, z: FluxField, use_fhat: bool = False,
                  degree: int = 4) -> float:
    return float(np.sqrt(residual_elements(problem, v, z, use_fhat, degree).sum()))


def _osc(problem, mesh):
    return oscillation_squared(problem.f, mesh)


# -- classical majorants -------------------------------------------------------------

def aubin(problem: ProblemSpec, v: FemField, z: FluxField, degree: int = 4) -> MajorantReport:
    """Diffusion plus residual weighted by ``1/sigma``; undefined for ``sigma = 0``."""
    if problem.sigma <= 0:
        raise SigmaRangeError("the Aubin majorant is undefined for sigma = 0")
    return _combine("aubin", 1.0, 1.0 / problem.sigma,
                    diffusion_elements(v, z, problem.A), residual_elements(problem, v, z, degree=degree),
                    sigma=problem.sigma, h=v.mesh.h)


def optimal_epsilon(diffusion: float, residual_sq: float, c_omega: float) -> float:
    """Minimiser of ``(1+e) D + c (1 + 1/e) R`` over ``e > 0``."""
    if diffusion <= 0 or residual_sq <= 0:
        raise ValueError("optimal epsilon needs positive diffusion and residual terms")
    return float(np.sqrt(c_omega * residual_sq / diffusion))


def minimize_over_epsilon(func: Callable[[float], float], bracket=(-12.0, 12.0)) -> float:
    """Golden-section minimisation of ``func(eps)`` over ``log(eps)``."""
    res = minimize_scalar(lambda s: func(np.exp(s)), bracket=bracket, method="golden",
                          options={"xtol": 1e-12})
    return float(np.exp(res.x))


def repin_frolov(problem: ProblemSpec, v: FemField, z: FluxField, epsilon: float = 1.0,
                 c_omega: float = UNIT_SQUARE_C_OMEGA, degree: int = 4) -> MajorantReport:
    """``(1+e) ||grad v + z||^2 + c_Omega (1 + 1/e) ||div z - f||^2`` (pure diffusion)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if c_omega <= 0:
        raise ValueError("c_Omega must be positive")
    if not np.allclose(problem.A, np.eye(2)):
        raise ValueError("this majorant is stated for A = I")
    # sigma is not part of the bound; the residual drops the reaction term
    pure = ProblemSpec(problem.A, 0.0, problem.f)
    return _combine("repin_frolov", 1.0 + epsilon, c_omega / epsilon,
                    diffusion_elements(v, z, problem.A), residual_elements(pure, v, z, degree=degree),
                    sigma=problem.sigma, h=v.mesh.h,
                    constants={"epsilon": epsilon, "c_omega": c_omega})


def churilova(problem: ProblemSpec, v: FemField, z: FluxField, epsilon: float = 1.0,
              c_omega: float = UNIT_SQUARE_C_OMEGA, degree: int = 4) -> MajorantReport:
    """``(1+e) diffusion + [sigma + e / (c_Omega (1+e))]^-1 residual``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    coef = 1.0 / (problem.sigma + epsilon / (c_omega * (1.0 + epsilon)))
    return _combine("churilova", 1.0 + epsilon, coef / (1.0 + epsilon),
                    diffusion_elements(v, z, problem.A), residual_elements(problem, v, z, degree=degree),
                    sigma=problem.sigma, h=v.mesh.h,
                    constants={"epsilon": epsilon, "c_omega": c_omega, "residual_coefficient": coef})


def boxed_integral(problem: ProblemSpec, v: FemField, z: FluxField, beta1=0.5,
                   degree: int = 4, line_degree: int = 5) -> float:
    """Bound on ``||grad(v - u)||_0`` (not squared) using integrated residuals.

    ``beta1`` is a constant or a callable ``(x, y)``; ``beta2 = 1 - beta1``.
    The inner integrals run from the left (``x = 0``) and bottom (``y = 0``)
    sides of the unit square.
    """
    _require_conforming(z)
    mesh = v.mesh
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    if not (np.allclose(lo, 0.0) and np.allclose(hi, 1.0)
            and np.isclose(mesh.areas.sum(), 1.0, rtol=1e-12)):
        raise ValueError("boxed_integral is defined on the unit square only")
    if not np.allclose(problem.A, np.eye(2)) or problem.sigma != 0:
        raise ValueError("boxed_integral assumes A = I and sigma = 0")
    b1 = beta1 if callable(beta1) else (lambda x, y, c=float(beta1): np.full_like(x, c))
    div = divergence(z)

    def weighted_residual(x, y, k):
        w = b1(x, y) if k == 0 else 1.0 - b1(x, y)
        tri = mesh.locate(np.column_stack([x, y]))
        if np.any(tri < 0):
            raise ValueError("residual evaluated outside the mesh")
        return w * (problem.f(x, y) - div[tri])

    rule = triangle_rule(degree)
    X, Y = quadrature_points(mesh, rule)
    W = element_weights(mesh, rule)
    total = np.sqrt(diffusion_term(v, z, problem.A))
    for k in (0, 1):
        # k = 0 integrates along x at fixed y; k = 1 along y at fixed x
        along, across = (X, Y) if k == 0 else (Y, X)
        G = _line_integrals(mesh, along.ravel(), across.ravel(), k, weighted_residual, line_degree)
        total += np.sqrt(np.sum(W.ravel() * G * G))
    return float(total)


def _line_integrals(mesh, ends, lines, k, integrand, line_degree):
    """``int_0^{end} integrand(eta, line)`` for every (end, line) pair, with
    breakpoints at every mesh-edge crossing so each piece is smooth."""
    gx, gw = np.polynomial.legendre.leggauss(line_degree // 2 + 1)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    P = mesh.vertices if k == 0 else mesh.vertices[:, ::-1]
    E = mesh.edges
    pa, pb = P[E[:, 0]], P[E[:, 1]]
    out = np.empty_like(ends)
    key = np.round(lines, 14)
    for line in np.unique(key):
        sel = np.flatnonzero(key == line)
        c = lines[sel[0]]
        # crossings of the line (second coordinate == c) with mesh edges
        da, db = pa[:, 1] - c, pb[:, 1] - c
        hit = (da * db <= 0) & (pa[:, 1] != pb[:, 1])
        t = da[hit] / (da[hit] - db[hit])
        xs = pa[hit, 0] + t * (pb[hit, 0] - pa[hit, 0])
        brk = np.unique(np.concatenate([[0.0], xs, ends[sel]]))
        brk = brk[(brk >= 0.0) & (brk <= 1.0)]
        a, b = brk[:-1], brk[1:]
        eta = a[:, None] + (b - a)[:, None] * gx[None, :]
        cc = np.full_like(eta, c)
        pts = (eta, cc) if k == 0 else (cc, eta)
        vals = integrand(pts[0].ravel(), pts[1].ravel(), k).reshape(eta.shape)
        seg = (b - a) * (vals @ gw)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        out[sel] = cum[np.searchsorted(brk, ends[sel])]
    return out


# -- consistent majorants -------------------------------------------------------------

def theta_factors(sigma: float, sigma_star: float) -> tuple[float, float]:
    """``(Theta, theta)``: ``(2/(1+kappa), 1/sigma_*)`` up to ``sigma_*``, then ``(1, 1/sigma)``."""
    if not sigma_star > 0:
        raise ValueError("critical reaction value must be positive")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma <= sigma_star:
        return 2.0 / (1.0 + sigma / sigma_star), 1.0 / sigma_star
    return 1.0, 1.0 / sigma


def consistent_majorant(problem: ProblemSpec, v: FemField, z: FluxField,
                        sigma_star: float, degree: int = 4) -> MajorantReport:
    Theta, theta = theta_factors(problem.sigma, sigma_star)
    return _combine("consistent", Theta, theta,
                    diffusion_elements(v, z, problem.A), residual_elements(problem, v, z, degree=degree),
                    sigma=problem.sigma, sigma_star=sigma_star, h=v.mesh.h)


def theta1_factor(sigma: float, sigma_star: float, epsilon: float) -> float:
    kappa = sigma / sigma_star
    if sigma <= sigma_star / (1.0 + epsilon):
        return (2.0 + epsilon) / (1.0 + kappa)
    return 1.0 + epsilon


def theta2_factor(sigma: float, sigma_star: float) -> float:
    kappa = sigma / sigma_star
    return 1.0 + 1.0 / (1.0 + 1.0 / kappa)


def consistent_osc_low(problem: ProblemSpec, v: FemField, z: FluxField, sigma_star: float,
                       epsilon: float = 1.0, degree: int = 4) -> MajorantReport:
    """Oscillation-separated variant for ``0 <= sigma <= sigma_*``."""
    if not sigma_star > 0:
        raise ValueError("critical reaction value must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if problem.sigma > sigma_star:
        raise SigmaRangeError(f"sigma = {problem.sigma} exceeds sigma_* = {sigma_star}")
    mesh = v.mesh
    _, theta = theta_factors(problem.sigma, sigma_star)
    osc = mesh.element_diameters ** 2 / (epsilon * np.pi ** 2) * _osc(problem, mesh)
    return _combine("consistent_osc_low", theta1_factor(problem.sigma, sigma_star, epsilon), theta,
                    diffusion_elements(v, z, problem.A),
                    residual_elements(problem, v, z, use_fhat=True, degree=degree),
                    osc, sigma=problem.sigma, sigma_star=sigma_star, h=mesh.h,
                    constants={"epsilon": epsilon})


def consistent_osc_high(problem: ProblemSpec, v: FemField, z: FluxField,
                        sigma_star: float, degree: int = 4) -> MajorantReport:
    """Oscillation-separated variant for ``sigma >= sigma_*``."""
    if not sigma_star > 0:
        raise ValueError("critical reaction value must be positive")
    if problem.sigma < sigma_star:
        raise SigmaRangeError(f"sigma = {problem.sigma} is below sigma_* = {sigma_star}")
    mesh = v.mesh
    _, theta = theta_factors(problem.sigma, sigma_star)
    osc = _osc(problem, mesh) / problem.sigma
    return _combine("consistent_osc_high", theta2_factor(problem.sigma, sigma_star), theta,
                    diffusion_elements(v, z, problem.A),
                    residual_elements(problem, v, z, use_fhat=True, degree=degree),
                    osc, sigma=problem.sigma, sigma_star=sigma_star, h=mesh.h)


def _fem1_parts(problem, u, c_dagger):
    if not c_dagger > 0:
        raise ValueError("c_dagger must be positive")
    h = u.mesh.h
    theta = (c_dagger * h) ** 2
    sigma_star = 1.0 / theta
    if problem.sigma > sigma_star * (1 + 1e-12):
        raise SigmaRangeError(
            f"sigma = {problem.sigma:g} exceeds 1/(c_dagger h)^2 = {sigma_star:g}; use the Aubin majorant")
    return h, theta, sigma_star


def fem_majorant_1(problem: ProblemSpec, u: FemField, z: FluxField, c_dagger: float,
                   degree: int = 4) -> MajorantReport:
    """``2/(1 + c^2 h^2 sigma) * [diffusion + (c h)^2 residual^2]`` for FEM solutions."""
    h, theta, sigma_star = _fem1_parts(problem, u, c_dagger)
    return _combine("fem_majorant_1", 2.0 / (1.0 + theta * problem.sigma), theta,
                    diffusion_elements(u, z, problem.A), residual_elements(problem, u, z, degree=degree),
                    sigma=problem.sigma, sigma_star=sigma_star, h=h, constants={"c_dagger": c_dagger})


def fem_majorant_1_osc(problem: ProblemSpec, u: FemField, z: FluxField, c_dagger: float,
                       epsilon: float = 1.0, degree: int = 4) -> MajorantReport:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    h, theta, sigma_star = _fem1_parts(problem, u, c_dagger)
    if problem.sigma > sigma_star / (1.0 + epsilon) * (1 + 1e-12):
        raise SigmaRangeError(f"sigma = {problem.sigma:g} exceeds sigma_*/(1+eps) = "
                              f"{sigma_star / (1 + epsilon):g}")
    mesh = u.mesh
    osc = mesh.element_diameters ** 2 / (epsilon * np.pi ** 2) * _osc(problem, mesh)
    return _combine("fem_majorant_1_osc", (2.0 + epsilon) / (1.0 + theta * problem.sigma), theta,
                    diffusion_elements(u, z, problem.A),
                    residual_elements(problem, u, z, use_fhat=True, degree=degree),
                    osc, sigma=problem.sigma, sigma_star=sigma_star, h=h,
                    constants={"c_dagger": c_dagger, "epsilon": epsilon})


def fem_majorant_2(problem: ProblemSpec, u: FemField, z: FluxField, c_sz01: float,
                   c_sz11: float, degree: int = 4) -> MajorantReport:
    """Scott-Zhang route: ``(1 + c11^2)/(1 + c01^2 h^2 sigma) * [diffusion + c01^2 h^2 residual^2]``."""
    if not (c_sz01 > 0 and c_sz11 > 0):
        raise ValueError("Scott-Zhang constants must be positive")
    h = u.mesh.h
    theta = (c_sz01 * h) ** 2
    if problem.sigma > (1 + 1e-12) / theta:
        raise SigmaRangeError(f"sigma = {problem.sigma:g} exceeds 1/(c_sz h)^2 = {1 / theta:g}")
    Theta = (1.0 + c_sz11 ** 2) / (1.0 + theta * problem.sigma)
    return _combine("fem_majorant_2", Theta, theta,
                    diffusion_elements(u, z, problem.A), residual_elements(problem, u, z, degree=degree),
                    sigma=problem.sigma, sigma_star=1.0 / theta, h=h,
                    constants={"c_sz01": c_sz01, "c_sz11": c_sz11})


# -- indicators and effectivity -----------------------------------------------------

@dataclass
class IndicatorReport:
    eta_sq: float  # sum of squared element indicators
    eta_elements: np.ndarray  # squared, per element
    oscillation_sq: float  # sum of squared oscillation terms
    osc_elements: np.ndarray  # not squared, per element
    bound: float  # sum_r (eta_r + osc_r)^2
    low_reaction: np.ndarray  # element mask sqrt(sigma) h_r < 1


def aive_indicator(problem: ProblemSpec, u: FemField, z: FluxField, degree: int = 4) -> IndicatorReport:
    """Element indicators with reaction-dependent residual terms and data oscillation.

    With the ``z ~ -A grad u`` convention the flux part is ``||A grad u + z||``
    and the residual part uses ``Pi f - sigma u - div z``.
    """
    mesh = u.mesh
    sigma = problem.sigma
    hr = mesh.element_diameters
    low = np.sqrt(sigma) * hr < 1.0
    eta = diffusion_elements(u, z, problem.A)
    if sigma > 0:
        res = residual_elements(problem, u, z, use_fhat=True, degree=degree)
        eta = eta + np.where(low, 0.0, res / sigma)
        weight = np.minimum(hr / np.pi, 1.0 / np.sqrt(sigma))
    else:
        weight = hr / np.pi
    osc = weight * np.sqrt(_osc(problem, mesh))
    bound = float(np.sum((np.sqrt(eta) + osc) ** 2))
    return IndicatorReport(float(eta.sum()), eta, float(np.sum(osc ** 2)), osc, bound, low)


def effectivity(report, true_energy_sq: float) -> float:
    """``sqrt(majorant) / |||e|||``; ``report`` is a :class:`MajorantReport` or a number."""
    if not true_energy_sq > 0:
        raise ValueError("effectivity needs a nonzero true error")
    total = report.total if isinstance(report, MajorantReport) else float(report)
    return float(np.sqrt(total / true_energy_sq))


CSV_FIELDS = ["estimator", "sigma", "sigma_star", "h", "total", "diffusion", "residual_mult",
              "residual_sq", "oscillation", "effectivity"]


def write_reports_csv(reports, path, true_energy_sq: float | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in reports:
            eff = effectivity(r, true_energy_sq) if true_energy_sq else float("nan")
            w.writerow([r.estimator] + [repr(float(x)) for x in (
                r.sigma, r.sigma_star, r.h, r.total, r.diffusion, r.residual_mult,
                r.residual_sq, r.oscillation, eff)])
