"""
Calibrating the constants
=========================

Every FEM majorant needs a constant that the theory defines but does not
evaluate.  Here each one is measured on a few mesh levels, the running
supremum is taken, and a safety factor of 1.25 is applied.
"""
from rdlab.femcore import solve_reaction_diffusion
from rdlab.fluxrec import average_flux, numerical_flux
from rdlab.majorants import fem_majorant_1
from rdlab.mesh import build_structured_unit_square
from rdlab.szproj import (calibrate_cap, calibrate_cdagger, calibrate_csz, critical_sigma,
                          regularity_cdagger)
from rdlab.studylab import builtin_problem

levels = [8, 16, 32]
meshes = [build_structured_unit_square(n) for n in levels]

# c_dagger from the ratio ||e||_0 / (h ||e||_A) of actual FEM errors
problems = [builtin_problem("sinsin", s) for s in (0.0, 1.0, 100.0)]
cd = calibrate_cdagger(problems, meshes, levels=levels)
print("c_dagger ratios   ", [f"{r:.4f}" for r in cd.ratios], "->", f"{cd.value:.4f}")

# the Scott-Zhang constants and the assembled c~_sz(1,1)
sz = calibrate_csz(meshes, levels=levels)
for name in ("c_sz01", "c_sz_breve", "c_10", "c_sz11"):
    print(f"{name:<18}", [f"{r:.4f}" for r in sz[name].ratios], "->", f"{sz[name].value:.4f}")

# an alternative c_dagger through the approximation constant and c_circ = 2
cap = calibrate_cap(meshes, levels=levels)
print(f"c_ap = {cap.value:.4f}, regularity route c_dagger = {regularity_cdagger([[1, 0], [0, 1]], cap.value):.4f}")

# the critical reaction value grows like h^-2
for m in meshes:
    print(f"h = {m.h:.4f}: sigma_* = {critical_sigma(cd.value, m.h):10.1f}")

# above sigma_* the FEM majorant refuses to run and points at the Aubin bound
p = builtin_problem("sinsin", 2 * critical_sigma(cd.value, meshes[0].h))
u = solve_reaction_diffusion(p, meshes[0])
try:
    fem_majorant_1(p, u, average_flux(numerical_flux(u, p.A)), cd.value)
except ValueError as exc:
    print("out of range:", exc)
