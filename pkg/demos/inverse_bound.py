"""
The inverse-like bound
======================

With the L2-projected flux the FEM majorants are not only upper bounds;
they are also bounded by a fixed multiple of the true error plus data
oscillation.  The ratio below should stay roughly constant across levels.
"""
from rdlab.studylab import StudyConfig, emit_summary, run_inverse_check

config = StudyConfig(problem="sinsin", levels=[8, 16, 32, 64], sigmas=["0", "1"], flux="l2project")
result = run_inverse_check(config)

for row in result.inverse:
    print(f"n={row.level:>3} sigma={row.sigma:<4g} k={row.k} majorant={row.majorant:.4e} "
          f"|||e|||^2={row.true_energy_sq:.4e} osc={row.oscillation_sq:.2e} ratio={row.ratio:.3f}")

print()
print(emit_summary(result))
