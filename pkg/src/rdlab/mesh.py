"""Conforming triangulations of polygonal domains.

A :class:`Mesh` is immutable once built.  Geometry that the estimators need
(areas, diameters, inscribed radii, barycentric gradients, vertex patches)
is computed lazily and cached on the instance.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np


class MeshError(ValueError):
    """Base class for invalid triangulations."""


class MeshFormatError(MeshError):
    """The mesh file could not be parsed."""


class MeshOrientationError(MeshError):
    """A triangle is clockwise (negative signed area)."""


class DegenerateElementError(MeshError):
    """A triangle has zero area."""


class MeshConformityError(MeshError):
    """Hanging vertices, over-shared edges or inconsistent boundary data."""


class ElementGeometry(NamedTuple):
    area: float
    diameter: float
    inradius: float
    barycentric_gradients: np.ndarray


class QualityReport(NamedTuple):
    h: float
    shape_regularity: float  # min rho_r / h_r
    quasiuniformity: float  # min h_r / h


def triangle_geometry(coords) -> ElementGeometry:
    """Area, diameter, inscribed radius and barycentric gradients of a triangle.

    Parameters
    ----------
    coords : array_like, shape (3, 2)
        Vertex coordinates in counter-clockwise order.
    """
    p = np.asarray(coords, dtype=float)
    d1 = p[1] - p[0]
    d2 = p[2] - p[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    if det == 0.0:
        raise DegenerateElementError("triangle has zero area")
    area = 0.5 * det
    lengths = np.array([np.hypot(*(p[2] - p[1])), np.hypot(*(p[0] - p[2])), np.hypot(*d1)])
    # grad(lambda_i) = rot90(opposite edge) / (2*area)
    grads = np.empty((3, 2))
    for i in range(3):
        a, b = p[(i + 1) % 3], p[(i + 2) % 3]
        grads[i] = np.array([a[1] - b[1], b[0] - a[0]]) / det
    return ElementGeometry(abs(area), lengths.max(), 2.0 * abs(area) / lengths.sum(), grads)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming 2D triangulation with boundary markers.

    ``vertices`` is ``(nv, 2)``, ``triangles`` is ``(nt, 3)`` with
    counter-clockwise vertex order.  ``boundary_vertices`` is a sorted index
    array; ``boundary_edges`` holds ``(a, b)`` pairs oriented as in their
    unique adjacent triangle.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertices: np.ndarray
    boundary_edges: np.ndarray

    def __post_init__(self):
        for name, dtype in (("vertices", float), ("triangles", np.int64),
                            ("boundary_vertices", np.int64), ("boundary_edges", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "boundary_edges", self.boundary_edges.reshape(-1, 2))
        self.validate()
        object.__setattr__(self, "boundary_edges", self._orient_boundary_edges())

    def _orient_boundary_edges(self) -> np.ndarray:
        # directed edges of every triangle; a boundary edge keeps the direction of its one owner
        t = self.triangles
        directed = {(int(a), int(b)) for a, b in
                    np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])}
        out = np.array([(a, b) if (int(a), int(b)) in directed else (b, a)
                        for a, b in self.boundary_edges], dtype=np.int64).reshape(-1, 2)
        out.setflags(write=False)
        return out

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_arrays(cls, vertices, triangles, boundary_flags=None) -> "Mesh":
        """Build a mesh, inferring boundary data from edges used once.

        If ``boundary_flags`` is given it is the authoritative vertex marker
        and every once-used edge must join two flagged vertices.
        """
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        bedges = _once_used_edges(triangles)
        if boundary_flags is None:
            bverts = np.unique(bedges)
        else:
            flags = np.asarray(boundary_flags, dtype=bool)
            if flags.shape != (len(vertices),):
                raise MeshFormatError("boundary flag count does not match vertex count")
            bverts = np.flatnonzero(flags)
            if len(bedges) and not flags[bedges].all():
                bad = bedges[~flags[bedges].all(axis=1)][0]
                raise MeshConformityError(
                    f"edge ({bad[0]}, {bad[1]}) is used by one triangle but its "
                    "vertices are not all marked as boundary (hanging node or hole)")
        return cls(vertices, triangles, bverts, bedges)

    # -- validation -------------------------------------------------------------

    def validate(self) -> None:
        nv = len(self.vertices)
        t = self.triangles
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshFormatError("vertices must have shape (N, 2)")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise MeshFormatError("triangles must have shape (M, 3) with M >= 1")
        if t.min() < 0 or t.max() >= nv:
            raise MeshFormatError("triangle references a vertex index out of range")
        if np.any(t[:, 0] == t[:, 1]) or np.any(t[:, 1] == t[:, 2]) or np.any(t[:, 0] == t[:, 2]):
            r = int(np.flatnonzero((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2]))[0])
            raise DegenerateElementError(f"triangle {r} repeats a vertex")

        det = _signed_double_areas(self.vertices, t)
        scale = np.ptp(self.vertices, axis=0).max() ** 2
        if np.any(np.abs(det) <= 1e-14 * scale):
            r = int(np.flatnonzero(np.abs(det) <= 1e-14 * scale)[0])
            raise DegenerateElementError(f"triangle {r} has zero area")
        if np.any(det < 0):
            r = int(np.flatnonzero(det < 0)[0])
            raise MeshOrientationError(f"triangle {r} {tuple(t[r])} is clockwise (negative area)")

        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        _, counts = np.unique(directed, axis=0, return_counts=True)
        if np.any(counts > 1):
            raise MeshConformityError("an edge appears twice with the same orientation")
        und = np.sort(directed, axis=1)
        uniq, counts = np.unique(und, axis=0, return_counts=True)
        if np.any(counts > 2):
            e = uniq[counts > 2][0]
            raise MeshConformityError(f"edge ({e[0]}, {e[1]}) is shared by more than two triangles")

        once = uniq[counts == 1]
        bset = set(map(int, self.boundary_vertices))
        for a, b in once:
            if int(a) not in bset or int(b) not in bset:
                raise MeshConformityError(
                    f"edge ({a}, {b}) is used by one triangle but is not on the boundary")
        given = {tuple(sorted(map(int, e))) for e in self.boundary_edges}
        if given != {tuple(map(int, e)) for e in once}:
            raise MeshConformityError("boundary_edges do not match the edges used by one triangle")

        hanging = _hanging_vertices(self.vertices, once)
        if hanging:
            v, (a, b) = hanging[0]
            raise MeshConformityError(f"hanging vertex {v} lies inside edge ({a}, {b})")

        used = np.zeros(nv, dtype=bool)
        used[t.ravel()] = True
        if not used.all():
            raise MeshConformityError(f"vertex {int(np.flatnonzero(~used)[0])} belongs to no triangle")

    # -- geometry -------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * _signed_double_areas(self.vertices, self.triangles)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """``(nt, 3)``; column ``i`` is the edge opposite local vertex ``i``."""
        p = self.vertices[self.triangles]
        return np.stack([
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        ], axis=1)

    @cached_property
    def element_diameters(self) -> np.ndarray:
        return self.edge_lengths.max(axis=1)

    @cached_property
    def inscribed_radii(self) -> np.ndarray:
        return 2.0 * self.areas / self.edge_lengths.sum(axis=1)

    @property
    def h(self) -> float:
        return float(self.element_diameters.max())

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """``(nt, 3, 2)`` constant gradients of the barycentric coordinates."""
        p = self.vertices[self.triangles]
        det = 2.0 * self.areas
        g = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            g[:, i, 0] = (a[:, 1] - b[:, 1]) / det
            g[:, i, 1] = (b[:, 0] - a[:, 0]) / det
        return g

    def element_geometry(self, r: int) -> ElementGeometry:
        return triangle_geometry(self.vertices[self.triangles[r]])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(ne, 2)`` with ``a < b``."""
        t = self.triangles
        und = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(und, axis=0)

    @cached_property
    def _vertex_to_triangles(self) -> list[np.ndarray]:
        order = np.argsort(self.triangles.ravel(), kind="stable")
        verts = self.triangles.ravel()[order]
        tris = order // 3
        splits = np.searchsorted(verts, np.arange(self.n_vertices + 1))
        return [tris[splits[i]:splits[i + 1]] for i in range(self.n_vertices)]

    def vertex_patch(self, vertex: int) -> np.ndarray:
        """Sorted ids of the triangles incident to ``vertex``."""
        return np.sort(self._vertex_to_triangles[vertex])

    def element_patch(self, r: int) -> "Patch":
        members = np.unique(np.concatenate([self._vertex_to_triangles[v] for v in self.triangles[r]]))
        return Patch(int(r), members)

    @cached_property
    def is_boundary_vertex(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = True
        return mask

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary_vertex)

    def quality_report(self) -> QualityReport:
        h = self.h
        return QualityReport(
            h,
            float((self.inscribed_radii / self.element_diameters).min()),
            float(self.element_diameters.min() / h),
        )

    # -- point location ---------------------------------------------------------

    @cached_property
    def _locator(self):
        p = self.vertices[self.triangles]
        lo, hi = p.min(axis=1), p.max(axis=1)
        origin = self.vertices.min(axis=0)
        extent = np.ptp(self.vertices, axis=0)
        nb = max(1, int(np.sqrt(self.n_triangles / 2)))
        size = extent / nb
        ilo = np.clip(((lo - origin) / size).astype(int), 0, nb - 1)
        ihi = np.clip(((hi - origin) / size).astype(int), 0, nb - 1)
        buckets: list[list[int]] = [[] for _ in range(nb * nb)]
        for r in range(self.n_triangles):
            for bx in range(ilo[r, 0], ihi[r, 0] + 1):
                for by in range(ilo[r, 1], ihi[r, 1] + 1):
                    buckets[bx * nb + by].append(r)
        width = max(len(b) for b in buckets)
        table = np.full((nb * nb, width), -1, dtype=np.int64)
        for k, b in enumerate(buckets):
            table[k, :len(b)] = b
        return origin, size, nb, table

    def locate(self, points) -> np.ndarray:
        """Index of a triangle containing each point, ``-1`` if outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        origin, size, nb, table = self._locator
        ib = np.clip(((pts - origin) / size).astype(int), 0, nb - 1)
        cand = table[ib[:, 0] * nb + ib[:, 1]]  # (npts, width)
        valid = cand >= 0
        c = np.where(valid, cand, 0)
        g = self.barycentric_gradients[c]  # (npts, w, 3, 2)
        base = self.vertices[self.triangles[c]]  # (npts, w, 3, 2)
        # lambda_i(x) = 1/3 + grad_i . (x - centroid)
        d = pts[:, None, :] - base.mean(axis=2)
        lam = 1.0 / 3.0 + np.einsum("pwij,pwj->pwi", g, d)
        inside = valid & (lam.min(axis=2) >= -1e-12)
        first = np.argmax(inside, axis=1)
        found = inside[np.arange(len(pts)), first]
        return np.where(found, cand[np.arange(len(pts)), first], -1)

    # -- comparison -------------------------------------------------------------

    def canonical(self) -> "Mesh":
        """Same mesh with vertices sorted lexicographically and triangles ordered.

        Two meshes describing the same triangulation have equal canonical forms.
        """
        order = np.lexsort((self.vertices[:, 1], self.vertices[:, 0]))
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        t = inv[self.triangles]
        shift = np.argmin(t, axis=1)
        t = np.stack([np.roll(row, -s) for row, s in zip(t, shift)])
        t = t[np.lexsort(t.T[::-1])]
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[inv[self.boundary_vertices]] = True
        return Mesh.from_arrays(self.vertices[order], t, flags)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return (self.vertices.shape == other.vertices.shape
                and self.triangles.shape == other.triangles.shape
                and np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.boundary_vertices, other.boundary_vertices))

    __hash__ = None


@dataclass(frozen=True)
class Patch:
    center_element: int
    members: np.ndarray


def _signed_double_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]


def _once_used_edges(triangles):
    und = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(und, axis=0, return_counts=True)
    return uniq[counts == 1]


def _hanging_vertices(vertices, edges):
    out = []
    for a, b in edges:
        pa, pb = vertices[a], vertices[b]
        d = pb - pa
        L2 = d @ d
        rel = vertices - pa
        s = rel @ d / L2
        cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
        hit = (np.abs(cross) <= 1e-12 * L2) & (s > 1e-12) & (s < 1 - 1e-12)
        for v in np.flatnonzero(hit):
            out.append((int(v), (int(a), int(b))))
    return out


# -- generators ---------------------------------------------------------------

def build_structured_unit_square(n: int) -> Mesh:
    """Uniform ``n x n`` grid on the unit square, each cell cut along the
    lower-left to upper-right diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)  # vertex (i, j) -> index j*(n+1) + i
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2], triangles[1::2] = lower, upper
    return Mesh.from_arrays(vertices, triangles)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four similar children through edge midpoints."""
    t = mesh.triangles
    edges = mesh.edges
    nv = mesh.n_vertices
    key = edges[:, 0] * nv + edges[:, 1]
    order = np.argsort(key)

    def midpoint_index(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        return nv + order[np.searchsorted(key[order], lo * nv + hi)]

    m01 = midpoint_index(t[:, 0], t[:, 1])
    m12 = midpoint_index(t[:, 1], t[:, 2])
    m20 = midpoint_index(t[:, 2], t[:, 0])
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    children = np.stack([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([m01, t[:, 1], m12]),
        np.column_stack([m20, m12, t[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)
    flags = np.zeros(len(vertices), dtype=bool)
    flags[mesh.boundary_vertices] = True
    be = np.sort(mesh.boundary_edges, axis=1)
    flags[midpoint_index(be[:, 0], be[:, 1])] = True
    return Mesh.from_arrays(vertices, children, flags)


# -- file I/O -----------------------------------------------------------------

def save_mesh(mesh: Mesh, path) -> None:
    flags = mesh.is_boundary_vertex.astype(int)
    lines = [f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r} {f}" for (x, y), f in zip(mesh.vertices.tolist(), flags)]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    it = iter(rows)

    def header(word):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshFormatError(f"missing '{word}' header") from None
        if len(tok) != 2 or tok[0] != word:
            raise MeshFormatError(f"line {lineno}: expected '{word} <count>'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: bad count {tok[1]!r}") from None
        if count < 0:
            raise MeshFormatError(f"line {lineno}: negative count")
        return count

    def body(count, width, conv):
        out = []
        for _ in range(count):
            try:
                lineno, tok = next(it)
            except StopIteration:
                raise MeshFormatError("file ends before all entries were read") from None
            if len(tok) != width:
                raise MeshFormatError(f"line {lineno}: expected {width} fields, got {len(tok)}")
            try:
                out.append([c(v) for c, v in zip(conv, tok)])
            except ValueError:
                raise MeshFormatError(f"line {lineno}: cannot parse {' '.join(tok)!r}") from None
        return out

    vrows = body(header("vertices"), 3, (float, float, int))
    trows = body(header("triangles"), 3, (int, int, int))
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError(f"line {extra[0]}: unexpected trailing content")
    if any(f not in (0, 1) for *_, f in vrows):
        raise MeshFormatError("boundary flag must be 0 or 1")
    v = np.array([r[:2] for r in vrows], dtype=float).reshape(-1, 2)
    flags = np.array([r[2] for r in vrows], dtype=bool)
    return Mesh.from_arrays(v, np.array(trows, dtype=np.int64).reshape(-1, 3), flags)
