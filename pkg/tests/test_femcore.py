import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from rdlab.femcore import (FemField, ProblemSpec, SolverError, SparseSystem,
                           a_priori_report, apply_homogeneous_dirichlet, assemble_load,
                           assemble_mass, assemble_stiffness, broken_gradient, energy_norm,
                           error_norms, galerkin_residual, local_mass, local_stiffness, norm_L2,
                           reaction_diffusion_matrix, seminorm_H1, solve_cg,
                           solve_reaction_diffusion)
from rdlab.mesh import Mesh
from rdlab.mesh import build_structured_unit_square
from rdlab.quadrature import element_weights, triangle_rule
from rdlab.studylab import builtin_problem

PI = np.pi
UNIT = Mesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


def sinsin(sigma=0.0):
    return builtin_problem("sinsin", sigma)


# -- problem data -------------------------------------------------------------

@pytest.mark.parametrize("A", [[[1, 2], [0, 1]], [[1, 0], [0, -1]], [[1, 2], [2, 1]], np.eye(3)])
def test_problem_rejects_bad_A(A):
    with pytest.raises(ValueError):
        ProblemSpec(A, 0.0, lambda x, y: x)


def test_problem_rejects_negative_sigma():
    with pytest.raises(ValueError):
        ProblemSpec(np.eye(2), -1e-3, lambda x, y: x)


def test_problem_rejects_inconsistent_exact_solution():
    ex = builtin_problem("sinsin").exact
    with pytest.raises(ValueError, match="does not satisfy"):
        ProblemSpec(np.eye(2), 1.0, lambda x, y: 2 * PI ** 2 * ex.value(x, y), ex)


def test_spectral_bounds():
    p = ProblemSpec([[2.0, 1.0], [1.0, 2.0]], 0.0, lambda x, y: x)
    assert (p.mu1, p.mu2) == pytest.approx((1.0, 3.0), rel=1e-14)


def test_with_sigma_keeps_equation_satisfied(rng):
    p = builtin_problem("polybubble", 0.0, [[2.0, 0.5], [0.5, 1.0]]).with_sigma(37.0)
    x, y = rng.random((2, 50))
    assert np.abs(p.strong_residual(x, y)).max() < 1e-12


def test_zero_trace_enforced():
    m = Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        FemField([0.0, 1.0, 0.0], m, zero_trace=True)


# -- assembly -----------------------------------------------------------------

def test_local_stiffness_unit_triangle():
    expected = [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]]
    np.testing.assert_allclose(local_stiffness(UNIT, np.eye(2))[0], expected, atol=1e-15)


def test_local_mass_unit_triangle():
    expected = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24
    np.testing.assert_allclose(local_mass(UNIT)[0], expected, rtol=1e-15)
    assert np.linalg.eigvalsh(local_mass(UNIT)[0]).min() > 0


def test_stiffness_properties(meshes):
    m = meshes(5)
    K = assemble_stiffness(m, np.eye(2)).matrix
    np.testing.assert_allclose(K @ np.ones(m.n_vertices), 0.0, atol=1e-13)
    assert abs(K - K.T).max() == 0.0
    K2 = assemble_stiffness(m, 2 * np.eye(2)).matrix
    assert abs(K2 - 2 * K).max() == 0.0


def test_mass_total_is_area(meshes):
    M = assemble_mass(meshes(6)).matrix
    assert M.sum() == pytest.approx(1.0, rel=1e-13)


def test_load_vector_examples(meshes):
    m = meshes(4)
    b = assemble_load(m, lambda x, y: np.ones_like(x))
    support = np.array([m.areas[m.vertex_patch(v)].sum() for v in range(m.n_vertices)])
    np.testing.assert_allclose(b, support / 3, rtol=1e-13)
    np.testing.assert_array_equal(assemble_load(m, lambda x, y: 0 * x), 0.0)


def test_load_of_hat_function_is_mass_column(meshes):
    m = meshes(4)
    M = assemble_mass(m).matrix.toarray()
    j = 12
    e = np.zeros(m.n_vertices)
    e[j] = 1.0
    hat = FemField(e, m)
    rule = triangle_rule(2)
    vals = hat.at_quadrature(rule)
    local = (vals * element_weights(m, rule)) @ rule.points
    b = np.bincount(m.triangles.ravel(), local.ravel(), minlength=m.n_vertices)
    np.testing.assert_allclose(b, M[:, j], atol=1e-15)


def test_load_vector_matches_hat_for_affine_source(meshes):
    # f linear: the degree-4 rule integrates f * phi_i exactly
    m = meshes(3)
    f = lambda x, y: 1 + 2 * x - y
    b = assemble_load(m, f)
    M = assemble_mass(m).matrix
    coeff = f(*m.vertices.T)
    np.testing.assert_allclose(b, M @ coeff, rtol=1e-13)


@pytest.mark.parametrize("n, dim", [(2, 1), (4, 9)])
def test_dirichlet_reduction(meshes, n, dim):
    m = meshes(n)
    K = assemble_stiffness(m, np.eye(2))
    rhs = np.arange(m.n_vertices, dtype=float)
    red = apply_homogeneous_dirichlet(K, rhs, m)
    assert red.system.dimension == dim
    np.testing.assert_array_equal(red.rhs, rhs[m.interior_vertices])


def test_dirichlet_empty_interior(meshes):
    with pytest.raises(ValueError):
        apply_homogeneous_dirichlet(assemble_stiffness(meshes(1), np.eye(2)), np.zeros(4), meshes(1))


# -- solver -------------------------------------------------------------------

def test_cg_small_systems():
    b = np.array([3.0, -1.0, 2.0])
    np.testing.assert_allclose(solve_cg(SparseSystem(sp.identity(3, format="csr")), b), b)
    x = solve_cg(SparseSystem(sp.csr_matrix([[2.0, 0.0], [0.0, 4.0]])), [2.0, 4.0])
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-12)


def test_cg_matches_dense_lu(meshes):
    m = meshes(4)
    p = sinsin()
    red = apply_homogeneous_dirichlet(reaction_diffusion_matrix(p, m), assemble_load(m, p.f), m)
    x = solve_cg(red.system, red.rhs, rel_tol=1e-13)
    dense = np.linalg.solve(red.system.matrix.toarray(), red.rhs)
    np.testing.assert_allclose(x, dense, rtol=1e-10, atol=1e-12)


def test_cg_reports_non_convergence(meshes):
    m = meshes(16)
    red = apply_homogeneous_dirichlet(assemble_stiffness(m, np.eye(2)), np.ones(m.n_vertices), m)
    with pytest.raises(SolverError) as info:
        solve_cg(red.system, red.rhs, rel_tol=1e-12, max_iter=3)
    assert info.value.residual > 1e-12


@pytest.mark.parametrize("sigma", [0.0, 1e4])
def test_galerkin_orthogonality(meshes, sigma):
    m = meshes(16)
    p = ProblemSpec(np.eye(2), sigma, sinsin().f)
    u = solve_reaction_diffusion(p, m)
    r = galerkin_residual(p, u)
    b = assemble_load(m, p.f)[m.interior_vertices]
    assert np.linalg.norm(r) <= 10 * 1e-10 * np.linalg.norm(b)
    assert np.linalg.norm(r) <= 1e-8


def test_zero_source_gives_zero_field(meshes):
    u = solve_reaction_diffusion(builtin_problem("zero", 3.0), meshes(4))
    assert not np.any(u.coefficients)


# -- gradients and norms ---------------------------------------------------------

@pytest.mark.parametrize("func, grad", [(lambda x, y: x, (1, 0)), (lambda x, y: x + 2 * y, (1, 2)),
                                        (lambda x, y: 0 * x + 7, (0, 0))])
def test_broken_gradient_reproduces_linears(meshes, func, grad):
    g = broken_gradient(FemField.interpolate(func, meshes(3)))
    np.testing.assert_allclose(g, np.broadcast_to(grad, g.shape), atol=1e-13)


def test_sinsin_norms(meshes):
    m = meshes(32)
    ex = sinsin().exact
    assert norm_L2(ex.value, m) ** 2 == pytest.approx(0.25, rel=1e-9)
    assert seminorm_H1(ex.gradient, m) ** 2 == pytest.approx(PI ** 2 / 2, rel=1e-9)
    p4 = builtin_problem("sinsin", 4.0)
    assert energy_norm(ex.gradient, ex.value, p4, m) ** 2 == pytest.approx(PI ** 2 / 2 + 1, rel=1e-9)


def test_polybubble_gradient_norm(meshes):
    # int (1-2x)^2 y^2 (1-y)^2 = (1/3)(1/30), twice
    ex = builtin_problem("polybubble").exact
    assert seminorm_H1(ex.gradient, meshes(4)) ** 2 == pytest.approx(2 / 90, rel=1e-13)


def test_zero_error_norms(meshes):
    p = builtin_problem("zero")
    assert error_norms(p, solve_reaction_diffusion(p, meshes(4))) == (0.0, 0.0, 0.0, 0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1e3), st.floats(0, 1e3))
def test_energy_norm_affine_in_sigma(s1, s2):
    m = build_structured_unit_square(4)
    g = lambda x, y: (np.cos(x), y * 0 + 1.0)
    v = lambda x, y: x * y
    e2 = lambda s: energy_norm(g, v, ProblemSpec(np.eye(2), s, lambda x, y: x), m) ** 2
    l2 = norm_L2(v, m) ** 2
    assert e2(s2) - e2(s1) == pytest.approx((s2 - s1) * l2, rel=1e-9, abs=1e-9)


@pytest.mark.slow
def test_a_priori_rates_sinsin(meshes):
    rep = a_priori_report(sinsin(), [meshes(n) for n in (8, 16, 32, 64)])
    assert all(0.9 < r < 1.1 for r in rep.a_rates)
    assert all(1.9 < r < 2.1 for r in rep.l2_rates[1:])
    assert all(np.diff(rep.energy) < 0)


@pytest.mark.slow
def test_a_priori_energy_rate_h_minus_2(meshes):
    rep = a_priori_report(lambda m: builtin_problem("sinsin", m.h ** -2),
                          [meshes(n) for n in (8, 16, 32, 64)])
    assert all(0.9 < r < 1.1 for r in rep.energy_rates)


def test_a_priori_needs_exact(meshes):
    with pytest.raises(ValueError):
        a_priori_report(ProblemSpec(np.eye(2), 0, lambda x, y: x), [meshes(2)])
