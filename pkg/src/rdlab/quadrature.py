"""Quadrature on triangles and edges in barycentric coordinates."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np


@dataclass(frozen=True)
class QuadRule:
    """Barycentric points and weights on the reference simplex.

    Triangle weights sum to 1/2 (reference area), edge weights to 1.
    ``degree`` is the highest total polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


def _orbit(*bary):
    return sorted(set(permutations(bary)))


def _build(groups, degree):
    pts, wts = [], []
    for bary, w in groups:
        orbit = _orbit(*bary)
        pts += orbit
        wts += [w] * len(orbit)
    return QuadRule(np.array(pts, dtype=float), 0.5 * np.array(wts, dtype=float), degree)


_S15 = np.sqrt(15.0)

# Weights normalised to unit reference measure; halved in _build.
_TRIANGLE_RULES = {
    1: ([((1 / 3, 1 / 3, 1 / 3), 1.0)], 1),
    2: ([((2 / 3, 1 / 6, 1 / 6), 1 / 3)], 2),
    # Dunavant, 6 points
    4: ([((0.445948490915964886318329253883, 0.445948490915964886318329253883,
           0.108103018168070227363341492234), 0.223381589678011465944827806112),
         ((0.091576213509770743459571463402, 0.091576213509770743459571463402,
           0.816847572980458513080857073196), 0.109951743655321867388505527221)], 4),
    # Radon, 7 points
    5: ([((1 / 3, 1 / 3, 1 / 3), 9 / 40),
         (((6 - _S15) / 21, (6 - _S15) / 21, (9 + 2 * _S15) / 21), (155 - _S15) / 1200),
         (((6 + _S15) / 21, (6 + _S15) / 21, (9 - 2 * _S15) / 21), (155 + _S15) / 1200)], 5),
    # Dunavant, 12 points
    6: ([((0.249286745170910421291638553107, 0.249286745170910421291638553107,
           0.501426509658179157416722893786), 0.116786275726379366030690538684),
         ((0.063089014491502228340331602870, 0.063089014491502228340331602870,
           0.873821971016995543319336794260), 0.050844906370206816920936809106),
         ((0.053145049844816947353249671631, 0.310352451033784405416607733956,
           0.636502499121398647230142594413), 0.082851075618373575193553456421)], 6),
}

_CACHE: dict[int, QuadRule] = {}


def triangle_rule(degree: int) -> QuadRule:
    """Positive-weight rule exact for polynomials up to ``degree`` (1 to 6).

    Degree 3 is served by the degree-4 rule; the classical 4-point degree-3
    rule has a negative weight.
    """
    if degree not in range(1, 7):
        raise ValueError(f"unsupported triangle quadrature degree {degree!r} (1..6)")
    key = 4 if degree == 3 else degree
    if key not in _CACHE:
        _CACHE[key] = _build(*_TRIANGLE_RULES[key])
    return _CACHE[key]


def edge_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on the reference edge, exact up to ``degree`` (1 to 5)."""
    if degree not in range(1, 6):
        raise ValueError(f"unsupported edge quadrature degree {degree!r} (1..5)")
    npts = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(npts)
    t = 0.5 * (x + 1.0)
    return QuadRule(np.column_stack([1.0 - t, t]), 0.5 * w, 2 * npts - 1)


def quadrature_points(mesh, rule: QuadRule):
    """Physical coordinates ``(X, Y)`` of the rule on every element, each ``(nt, nq)``."""
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    xy = np.einsum("qi,tid->tqd", rule.points, p)
    return xy[..., 0], xy[..., 1]


def element_weights(mesh, rule: QuadRule) -> np.ndarray:
    """Physical weights ``(nt, nq)``: reference weights times ``2 * area``."""
    return 2.0 * mesh.areas[:, None] * rule.weights[None, :]


def integrate_on_element(mesh, r: int, integrand, rule: QuadRule) -> float:
    """Integral of ``integrand(x, y)`` over triangle ``r``."""
    p = mesh.vertices[mesh.triangles[r]]
    xy = rule.points @ p
    vals = np.asarray(integrand(xy[:, 0], xy[:, 1]), dtype=float)
    return float(2.0 * mesh.areas[r] * (rule.weights @ np.broadcast_to(vals, rule.weights.shape)))


def integrate_elementwise(mesh, integrand, rule: QuadRule) -> np.ndarray:
    """Per-element integrals.  ``integrand`` is a callable ``(X, Y) -> values``
    on ``(nt, nq)`` arrays, or a precomputed ``(nt, nq)`` array."""
    if callable(integrand):
        X, Y = quadrature_points(mesh, rule)
        integrand = integrand(X, Y)
    vals = np.broadcast_to(np.asarray(integrand, dtype=float), (mesh.n_triangles, rule.size))
    return np.sum(element_weights(mesh, rule) * vals, axis=1)


def integrate(mesh, integrand, rule: QuadRule) -> float:
    return float(integrate_elementwise(mesh, integrand, rule).sum())
