"""
Consistent and inconsistent majorants under refinement
======================================================

Solve the sin-sin problem without reaction on four structured meshes,
average the discrete flux, and compare the effectivity of the FEM majorant
with the Repin-Frolov bound.  The first stays flat; the second drifts
upwards because its residual term does not shrink with h.

A second pass jitters the interior vertices, which destroys the
superconvergence of the averaged flux; the drift then approaches one
power of h per refinement.
"""
import numpy as np

from rdlab import majorants as mj
from rdlab.femcore import error_norms, solve_reaction_diffusion
from rdlab.fluxrec import average_flux, numerical_flux
from rdlab.mesh import Mesh, build_structured_unit_square
from rdlab.studylab import StudyConfig, builtin_problem, resolve_constants

levels = [8, 16, 32, 64]
problem = builtin_problem("sinsin")

# c_dagger is calibrated on the same family of meshes
consts = resolve_constants(StudyConfig(levels=levels), [build_structured_unit_square(n) for n in levels])
print(f"calibrated c_dagger = {consts.c_dagger:.4f}")


def effectivities(mesh):
    u = solve_reaction_diffusion(problem, mesh)
    z = average_flux(numerical_flux(u, problem.A))
    true_sq = error_norms(problem, u).energy ** 2
    fem = mj.fem_majorant_1(problem, u, z, consts.c_dagger).effectivity(true_sq)
    rf = mj.repin_frolov(problem, u, z).effectivity(true_sq)
    return fem, rf


def jittered(n, rng):
    m = build_structured_unit_square(n)
    v = m.vertices.copy()
    inner = ~m.is_boundary_vertex
    v[inner] += rng.uniform(-0.2, 0.2, (inner.sum(), 2)) / n
    return Mesh(v, m.triangles, m.boundary_vertices, m.boundary_edges)


rng = np.random.default_rng(1)
for title, make in (("structured", build_structured_unit_square), ("jittered", lambda n: jittered(n, rng))):
    print(f"\n{title} meshes")
    print(f"{'n':>4} {'fem_majorant_1':>15} {'repin_frolov':>13} {'log2 growth':>12}")
    prev = None
    for n in levels:
        fem, rf = effectivities(make(n))
        growth = "" if prev is None else f"{np.log2(rf / prev):.3f}"
        print(f"{n:>4} {fem:>15.3f} {rf:>13.3f} {growth:>12}")
        prev = rf
