import numpy as np
import pytest

from rdlab.femcore import FemField, assemble_mass, norm_L2, solve_reaction_diffusion
from rdlab.mesh import build_structured_unit_square
from rdlab.quadrature import edge_rule, quadrature_points, triangle_rule
from rdlab.studylab import builtin_problem
from rdlab.szproj import (SAFETY_FACTOR, CalibrationReport, SampleFunction, assign_faces,
                          calibrate_cap, calibrate_cdagger, calibrate_csz, critical_sigma,
                          critical_sigma_from_errors, default_samples, dual_edge_function,
                          elementwise_p1_projection, h2_seminorm, inverse_constant,
                          l2_project_scalar, oscillation_squared, read_calibration_csv,
                          regularity_cdagger, scott_zhang, write_calibration_csv)

SIN = default_samples()[0]


# -- dual edge functions ---------------------------------------------------------

def test_dual_edge_unit_length():
    a, b = dual_edge_function(1.0)
    assert a == pytest.approx(4.0, abs=1e-12)
    assert b == pytest.approx(-2.0, abs=1e-12)


@pytest.mark.parametrize("L", [0.1, 0.35355339059327373, 2.0, 7.5])
def test_dual_edge_scaling_and_kronecker(L):
    a, b = dual_edge_function(L)
    assert a == pytest.approx(4.0 / L, rel=1e-12)
    assert b == pytest.approx(-2.0 / L, rel=1e-12)
    r = edge_rule(3)
    l1, l2 = r.points[:, 0], r.points[:, 1]
    theta = a * l1 + b * l2
    assert abs(L * r.weights @ (theta * l1) - 1.0) <= 1e-14 * max(1.0, L)
    assert abs(L * r.weights @ (theta * l2)) <= 1e-14 * max(1.0, L)


@pytest.mark.parametrize("L", [0.0, -1.0, float("nan")])
def test_dual_edge_rejects_bad_length(L):
    with pytest.raises(ValueError):
        dual_edge_function(L)


# -- face assignment -------------------------------------------------------------

def test_boundary_vertices_get_boundary_edges(meshes):
    m = meshes(6)
    fa = assign_faces(m)
    bnd = {tuple(sorted(map(int, e))) for e in m.boundary_edges}
    edges = {tuple(map(int, e)) for e in m.edges}
    for i in range(m.n_vertices):
        e = tuple(sorted(fa.edge(i)))
        assert e in edges
        if m.is_boundary_vertex[i]:
            assert e in bnd


def test_assignment_tie_break_and_determinism(meshes):
    m = meshes(4)
    fa, fb = assign_faces(m), assign_faces(m)
    np.testing.assert_array_equal(fa.partner, fb.partner)
    # interior vertex: smallest-index neighbour
    for i in m.interior_vertices:
        nbrs = {int(b) for a, b in m.edges if a == i} | {int(a) for a, b in m.edges if b == i}
        assert fa.partner[i] == min(nbrs)


# -- Scott-Zhang ------------------------------------------------------------------

def test_projection_identity_on_random_fields(meshes, rng):
    m = meshes(7)
    worst = 0.0
    for _ in range(50):
        c = rng.normal(size=m.n_vertices)
        worst = max(worst, np.max(np.abs(scott_zhang(FemField(c, m), m).coefficients - c)))
    assert worst <= 1e-12


def test_projection_identity_callable_linear(meshes):
    m = meshes(5)
    Iv = scott_zhang(lambda x, y: 2 * x - 3 * y + 0.5, m)
    np.testing.assert_allclose(Iv.coefficients, 2 * m.vertices[:, 0] - 3 * m.vertices[:, 1] + 0.5,
                               atol=1e-12)


def test_boundary_trace_preserved(meshes):
    m = meshes(8)
    # zero trace on the square: I_h v must vanish exactly at boundary vertices
    Iv = scott_zhang(SIN.value, m)
    bv = m.boundary_vertices
    v = SIN.value(m.vertices[bv, 0], m.vertices[bv, 1])
    assert np.all(np.abs(Iv.coefficients[bv] - 0.0) <= np.abs(v) + 1e-15)
    # piecewise linear boundary trace (x + y): boundary coefficients reproduce it
    Iw = scott_zhang(lambda x, y: x + y + x * y * (1 - x) * (1 - y), m)
    np.testing.assert_allclose(Iw.coefficients[bv], m.vertices[bv].sum(axis=1), atol=1e-14)


def test_scott_zhang_rejects_nonfinite(meshes):
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        scott_zhang(lambda x, y: np.log(x), meshes(2))


@pytest.mark.slow
def test_scott_zhang_rates():
    from rdlab.szproj import interpolation_errors
    e0, e1 = [], []
    for n in (8, 16, 32, 64):
        a, b, _, _ = interpolation_errors(SIN, build_structured_unit_square(n))
        e0.append(a)
        e1.append(b)
    r0 = np.log2(np.array(e0[:-1]) / e0[1:])
    r1 = np.log2(np.array(e1[:-1]) / e1[1:])
    assert 1.8 <= r0[-1] <= 2.2
    assert 0.85 <= r1[-1] <= 1.15


# -- L2 projections --------------------------------------------------------------

def test_l2_projection_reproduces_p1_and_constants(meshes, rng):
    m = meshes(5)
    c = rng.normal(size=m.n_vertices)
    np.testing.assert_allclose(l2_project_scalar(FemField(c, m), m).coefficients, c, atol=1e-10)
    np.testing.assert_allclose(l2_project_scalar(lambda x, y: 3.0 + 0 * x, m).coefficients, 3.0,
                               rtol=1e-10)


def test_l2_projection_orthogonality(meshes):
    m = meshes(8)
    Q = l2_project_scalar(SIN.value, m, rel_tol=1e-13)
    from rdlab.femcore import assemble_load
    res = assemble_mass(m).matrix @ Q.coefficients - assemble_load(m, SIN.value, triangle_rule(6))
    assert np.max(np.abs(res)) <= 1e-13 * 10


def test_l2_projection_beats_scott_zhang(meshes):
    m = meshes(8)
    rule = triangle_rule(6)
    X, Y = quadrature_points(m, rule)
    v = SIN.value(X, Y)
    q = norm_L2(v - l2_project_scalar(SIN.value, m).at_quadrature(rule), m, rule)
    s = norm_L2(v - scott_zhang(SIN.value, m).at_quadrature(rule), m, rule)
    assert q <= s


def test_zero_trace_projection_vanishes_on_boundary(meshes):
    m = meshes(6)
    Q = l2_project_scalar(lambda x, y: 1.0 + x * 0, m, zero_trace=True)
    assert np.all(Q.coefficients[m.boundary_vertices] == 0.0)


# -- elementwise P1 and oscillation ------------------------------------------------

def test_linear_source_has_zero_oscillation(meshes):
    m = meshes(4)
    f = lambda x, y: 1.0 - 2.0 * x + 5.0 * y
    fh = elementwise_p1_projection(f, m)
    t = m.triangles
    np.testing.assert_allclose(fh.values, f(m.vertices[t, 0], m.vertices[t, 1]), atol=1e-13)
    assert np.max(oscillation_squared(f, m)) <= 1e-26


def test_x_squared_projection_oracle():
    m = build_structured_unit_square(2)
    fh = elementwise_p1_projection(lambda x, y: x * x, m)
    expected = {"lower_left": [-3 / 40, 9 / 40, 9 / 40], "upper_left": [-1 / 40, 7 / 40, -1 / 40],
                "lower_right": [7 / 40, 39 / 40, 39 / 40], "upper_right": [9 / 40, 37 / 40, 9 / 40]}
    for r, tri in enumerate(m.triangles):
        P = m.vertices[tri]
        c = P.mean(axis=0)
        # identify cell and half from the centroid, then order the oracle by vertex position
        i = int(c[0] * 2)
        lower = (c[0] - i * 0.5) > (c[1] - int(c[1] * 2) * 0.5)
        x0, y0 = i * 0.5, int(c[1] * 2) * 0.5
        corners = ([(x0, y0), (x0 + .5, y0), (x0 + .5, y0 + .5)] if lower
                   else [(x0, y0), (x0 + .5, y0 + .5), (x0, y0 + .5)])
        key = ("lower" if lower else "upper") + ("_left" if i == 0 else "_right")
        for k, pt in enumerate(P):
            idx = int(np.argmin([np.hypot(*(pt - np.array(q))) for q in corners]))
            assert fh.values[r, k] == pytest.approx(expected[key][idx], abs=1e-12)
    osc = oscillation_squared(lambda x, y: x * x, m)
    np.testing.assert_allclose(osc, 1 / 38400, rtol=1e-10)
    assert osc.sum() == pytest.approx(1 / 4800, rel=1e-10)


def test_elementwise_projection_orthogonality(meshes):
    m = meshes(3)
    f = lambda x, y: np.exp(x) * np.cos(3 * y)
    fh = elementwise_p1_projection(f, m)
    rule = triangle_rule(6)
    X, Y = quadrature_points(m, rule)
    from rdlab.quadrature import element_weights
    d = (f(X, Y) - fh.at_quadrature(rule)) * element_weights(m, rule)
    assert np.max(np.abs(d @ rule.points)) <= 1e-12


# -- calibration ----------------------------------------------------------------------

def test_calibration_report_running_supremum():
    rep = CalibrationReport("c", safety_factor=SAFETY_FACTOR)
    for lv, r in zip((8, 16, 32), (0.3, 0.2, 0.35)):
        rep.add(lv, 1.0 / lv, r)
    assert rep.running_supremum == [0.3, 0.3, 0.35]
    assert rep.supremum == 0.35
    assert rep.value == pytest.approx(SAFETY_FACTOR * 0.35)


@pytest.fixture(scope="module")
def csz():
    meshes = [build_structured_unit_square(n) for n in (8, 16, 32)]
    return calibrate_csz(meshes, levels=[8, 16, 32])


def test_csz_assembly_formula(csz):
    c11 = csz["c_sz11"].value
    assert c11 == csz["c_sz_breve"].value + 2 * csz["c_10"].value * csz["c_sz01"].value
    assert csz["c_10"].safety_factor == 1.0
    assert csz["c_sz01"].levels == [8, 16, 32]


def test_inverse_constant_is_level_stable(csz):
    r = np.array(csz["c_10"].ratios)
    assert r.max() / r.min() <= 1.10


def test_inverse_constant_bounds_random_fields(meshes, rng):
    m = meshes(6)
    c10 = inverse_constant(m)
    from rdlab.femcore import assemble_stiffness
    K = assemble_stiffness(m, np.eye(2)).matrix
    M = assemble_mass(m).matrix
    for _ in range(20):
        w = rng.normal(size=m.n_vertices)
        assert m.h * np.sqrt(w @ K @ w / (w @ M @ w)) <= c10 * (1 + 1e-8)


def test_p1_sample_contributes_zero_ratio(meshes):
    lin = SampleFunction("lin", lambda x, y: x + 2 * y, lambda x, y: (1 + 0 * x, 2 + 0 * y))
    rep = calibrate_csz([meshes(4), meshes(8)], samples=[lin])
    assert max(rep["c_sz01"].ratios) <= 1e-12


def test_calibration_needs_two_levels(meshes):
    with pytest.raises(ValueError):
        calibrate_csz([meshes(4)])
    with pytest.raises(ValueError):
        calibrate_cdagger([builtin_problem("sinsin")], [meshes(4)])
    with pytest.raises(ValueError):
        calibrate_csz([meshes(4), meshes(8)], levels=[4])


def test_cdagger_safety_and_sigma_star(meshes):
    rep = calibrate_cdagger([builtin_problem("sinsin"), builtin_problem("sinsin", 1.0)],
                            [meshes(8), meshes(16)], levels=[8, 16])
    assert rep.value == pytest.approx(1.25 * rep.supremum, rel=1e-15)
    assert rep.sigmas == [0.0, 1.0, 0.0, 1.0]
    h = meshes(8).h
    assert critical_sigma(rep.value, h / 2) == pytest.approx(4 * critical_sigma(rep.value, h), rel=1e-13)
    assert critical_sigma(rep.value, h) == pytest.approx(1 / (rep.value * h) ** 2, rel=1e-15)


def test_nitsche_ratio_stability_small(meshes):
    rep = calibrate_cdagger([builtin_problem("sinsin")], [meshes(8), meshes(16), meshes(32)])
    r = np.array(rep.ratios)
    assert r.max() / r.min() <= 1.5


def test_cdagger_rejects_exact_fe_solution(meshes):
    # the zero problem has zero energy error
    with pytest.raises(ValueError):
        calibrate_cdagger([builtin_problem("zero")], [meshes(2), meshes(4)])


def test_calibration_csv_round_trip(csz, tmp_path):
    path = tmp_path / "cal.csv"
    write_calibration_csv(list(csz.values()), path)
    assert path.read_text().splitlines()[0] == "constant,level,h,ratio,supremum"
    back = read_calibration_csv(path)
    for name in ("c_sz01", "c_sz_breve", "c_10", "c_sz11"):
        assert back[name] == pytest.approx(csz[name].value, rel=1e-14)


# -- Hessians, c_ap and the regularity route ----------------------------------------

@pytest.mark.parametrize("sample", default_samples(), ids=lambda s: s.name)
def test_sample_derivatives_by_finite_differences(sample):
    x, y, d = 0.37, 0.61, 1e-5
    gx, gy = sample.gradient(x, y)
    assert gx == pytest.approx((sample.value(x + d, y) - sample.value(x - d, y)) / (2 * d), abs=1e-7)
    assert gy == pytest.approx((sample.value(x, y + d) - sample.value(x, y - d)) / (2 * d), abs=1e-7)
    hxx, hxy, hyy = sample.hessian(x, y)
    assert hxx == pytest.approx((sample.gradient(x + d, y)[0] - sample.gradient(x - d, y)[0]) / (2 * d), abs=1e-6)
    assert hxy == pytest.approx((sample.gradient(x, y + d)[0] - sample.gradient(x, y - d)[0]) / (2 * d), abs=1e-6)
    assert hyy == pytest.approx((sample.gradient(x, y + d)[1] - sample.gradient(x, y - d)[1]) / (2 * d), abs=1e-6)


def test_h2_seminorm_of_sinsin(meshes):
    # |sin(pi x) sin(pi y)|_2^2 = pi^4 (1/4 + 2/4 + 1/4) = pi^4
    assert h2_seminorm(SIN, meshes(16)) == pytest.approx(np.pi ** 2, rel=1e-8)
    with pytest.raises(ValueError):
        h2_seminorm(SampleFunction("g", SIN.value, SIN.gradient), meshes(2))


def test_cap_and_regularity_route(meshes):
    rep = calibrate_cap([meshes(8), meshes(16)])
    assert 0 < rep.supremum < 1
    assert regularity_cdagger(np.eye(2), rep.value) == pytest.approx(2 * rep.value)
    assert regularity_cdagger(np.diag([4.0, 1.0]), 1.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        regularity_cdagger(np.eye(2), 0.0)


def test_critical_sigma_from_errors(meshes):
    p = builtin_problem("sinsin")
    u = solve_reaction_diffusion(p, meshes(8))
    plain = critical_sigma_from_errors(p, u)
    proj = critical_sigma_from_errors(p, u, projected=True)
    assert plain > 0 and proj > plain
    with pytest.raises(ValueError):
        critical_sigma_from_errors(builtin_problem("zero"), solve_reaction_diffusion(builtin_problem("zero"), meshes(2)))
