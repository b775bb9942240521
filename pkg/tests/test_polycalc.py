import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from ddr_divdiv.polycalc import (
    EdgeCalculus, EdgeGeometry, ElementCalculus, ElementGeometry, JetField, Polynomial, apply_diff_op,
    cmap_matrix, dim_poly, gauss_segment, invert_local_isomorphism, l2_project, quadrature_rule,
    subspace_basis, triangle_rule,
)

X, Y = sympy.symbols("x y")
HEXAGON = np.array([[np.cos(a), np.sin(a)] for a in np.pi / 3 * np.arange(6)]) * 0.7 + [0.2, -0.1]


def element(verts, degree=6, center=None):
    verts = np.asarray(verts, float)
    c = verts.mean(axis=0) if center is None else np.asarray(center, float)
    diam = max(np.linalg.norm(a - b) for a in verts for b in verts)
    return ElementCalculus(ElementGeometry(verts, c, diam), degree)


def sym_poly(calc, coeffs):
    """Sympy expression of a scalar polynomial given in the scaled monomials."""
    m = calc.mono
    xi, eta = (X - m.center[0]) / m.scale, (Y - m.center[1]) / m.scale
    return sum(float(c) * xi ** int(a) * eta ** int(b) for c, (a, b) in zip(coeffs, m.powers))


def as_values(expr, pts):
    f = sympy.lambdify((X, Y), expr, "numpy")
    return np.broadcast_to(np.asarray(f(pts[:, 0], pts[:, 1]), float), (len(pts),))


@pytest.mark.parametrize("m,codomain,count", [(3, "scalar", 10), (1, "tensor", 9)])
def test_element_basis_sizes(m, codomain, count):
    calc = element([[0, 0], [1, 0], [0, 1]], 4)
    basis = {"scalar": calc.scalar_onb, "tensor": calc.tensor_onb}[codomain](m)
    assert len(basis) == count


def test_edge_vector_basis_size():
    e = EdgeCalculus(EdgeGeometry(np.zeros(2), np.array([1.0, 0.0])), 4, 10)
    assert 2 * len(e.onb(2)) == 6


def test_empty_bases():
    calc = element([[0, 0], [1, 0], [0, 1]], 3)
    assert len(calc.scalar_onb(-1)) == 0
    assert subspace_basis("Holy", calc, -1).dim == 0
    assert subspace_basis("cHoly", calc, 0).dim == 0
    assert subspace_basis("cColy", calc, 1).dim == 0


def test_square_area():
    r = quadrature_rule(ElementGeometry(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]), np.array([0.5, 0.5]),
                                        np.sqrt(2)), 0)
    assert abs(r.weights.sum() - 1.0) <= 1e-15


def test_reference_triangle_moment():
    exact = sympy.integrate(sympy.integrate(X ** 2 * Y ** 2, (Y, 0, 1 - X)), (X, 0, 1))
    assert exact == sympy.Rational(1, 180)
    r = triangle_rule(np.array([[0, 0], [1, 0], [0, 1.0]]), 4)
    assert abs(r.integrate(r.points[:, 0] ** 2 * r.points[:, 1] ** 2) - 1 / 180) <= 1e-16


def test_edge_odd_moment_vanishes():
    r = gauss_segment(np.zeros(2), np.array([1.0, 0.0]), 3)
    assert abs(r.integrate((r.points[:, 0] - 0.5) ** 3)) <= 1e-16


@pytest.mark.parametrize("degree", [4, 8, 12])
def test_hexagon_rule_exactness(degree):
    # exact monomial moments over the polygon via the divergence theorem in sympy
    r = quadrature_rule(ElementGeometry(HEXAGON, HEXAGON.mean(0), 1.4), degree)
    assert np.all(r.weights > 0)
    for a in range(degree + 1):
        b = degree - a
        exact = 0
        for p, q in zip(HEXAGON, np.roll(HEXAGON, -1, axis=0)):
            s = sympy.symbols("s")
            xs = sympy.nsimplify(p[0]) + s * sympy.nsimplify(q[0] - p[0])
            ys = sympy.nsimplify(p[1]) + s * sympy.nsimplify(q[1] - p[1])
            # int_T x^a y^b = int_dT x^(a+1) y^b / (a+1) n_x ds
            exact += sympy.integrate(xs ** (a + 1) * ys ** b / (a + 1) * sympy.nsimplify(q[1] - p[1]), (s, 0, 1))
        got = r.integrate(r.points[:, 0] ** a * r.points[:, 1] ** b)
        assert abs(got - float(exact)) <= 1e-14 * max(1.0, abs(float(exact)))


def test_edge_projection_of_affine_field():
    e = EdgeCalculus(EdgeGeometry(np.zeros(2), np.array([1.0, 0.0])), 3, 8)
    coef = e.project_values(0, e.rule.points[:, 0])
    assert abs(coef[0] * e.onb(0)[0, 0] - 0.5) <= 1e-14


def test_projection_idempotent_and_zero(rng):
    calc = element(HEXAGON, 5)
    basis = calc.vector_onb(3)
    c = rng.standard_normal(len(basis))
    p = Polynomial(calc.mono, np.tensordot(c, basis, axes=(0, 0)), "vector")
    assert np.abs(l2_project(basis, p, calc) - c).max() <= 1e-12
    assert np.all(l2_project(basis, None, calc) == 0)


def test_projector_gram_symmetric():
    calc = element(HEXAGON, 6)
    G = calc.inner(calc.tensor_onb(4), calc.tensor_onb(4))
    assert np.abs(G - G.T).max() <= 1e-12
    assert np.abs(G - np.eye(len(G))).max() <= 1e-12


def test_symcurl_example():
    calc = element([[0, 0], [1, 0], [1, 1], [0, 1]], 3)
    m = calc.mono
    c = np.zeros((2, m.size))
    # x2 = x_T2 + scale * eta
    c[0, m.index(0, 0)] = m.center[1]
    c[0, m.index(0, 1)] = m.scale
    out = apply_diff_op("SYMCURL", Polynomial(m, c, "vector"))
    vals = out.value(np.array([[0.3, 0.7]]))[0]
    assert np.abs(vals - np.array([[1, 0], [0, 0]])).max() <= 1e-14


def test_cmap_of_identity_is_zero():
    assert np.all(cmap_matrix(np.eye(2)) == 0)


def test_vrot_hess_vanishes(rng):
    calc = element(HEXAGON, 5)
    q = Polynomial(calc.mono, rng.standard_normal(calc.size), "scalar")
    out = apply_diff_op("VROT", apply_diff_op("HESS", q))
    assert np.abs(out.coeffs).max() <= 1e-11


def test_diff_op_codomain_mismatch():
    calc = element(HEXAGON, 3)
    with pytest.raises(ValueError):
        apply_diff_op("HESS", Polynomial(calc.mono, np.zeros((2, calc.size)), "vector"))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=21, max_size=21))
def test_operators_match_symbolic_chain_rule(c):
    calc = element(HEXAGON, 5)
    u = np.array(c)
    v = np.array([u[::-1], u])
    pts = np.array([[0.1, 0.2], [0.5, -0.3], [-0.2, 0.1]])
    p = Polynomial(calc.mono, u, "scalar")
    e = sym_poly(calc, u)
    h = apply_diff_op("HESS", p).value(pts)
    for i, a in enumerate((X, Y)):
        for j, b in enumerate((X, Y)):
            assert np.abs(h[:, i, j] - as_values(sympy.diff(e, a, b), pts)).max() <= 1e-9
    vp = Polynomial(calc.mono, v, "vector")
    e1, e2 = sym_poly(calc, v[0]), sym_poly(calc, v[1])
    # SYMCURL v = C(GRAD v) with C G = [[G12, (G22 - G11)/2], [., -G21]]
    sc = apply_diff_op("SYMCURL", vp).value(pts)
    assert np.abs(sc[:, 0, 0] - as_values(sympy.diff(e1, Y), pts)).max() <= 1e-9
    off = (sympy.diff(e2, Y) - sympy.diff(e1, X)) / 2
    assert np.abs(sc[:, 0, 1] - as_values(off, pts)).max() <= 1e-9
    assert np.abs(sc[:, 1, 1] + as_values(sympy.diff(e2, X), pts)).max() <= 1e-9
    dd = apply_diff_op("DIVDIV", apply_diff_op("HESS", p)).value(pts)
    bih = sympy.diff(e, X, 4) + 2 * sympy.diff(e, X, 2, Y, 2) + sympy.diff(e, Y, 4)
    assert np.abs(dd - as_values(bih, pts)).max() <= 1e-7


@pytest.mark.parametrize("m", [0, 1, 2, 3, 4])
def test_subspace_dimensions_and_ranks(m):
    calc = element(HEXAGON, m + 3)
    holy = subspace_basis("Holy", calc, m)
    choly = subspace_basis("cHoly", calc, m)
    coly = subspace_basis("Coly", calc, m)
    ccoly = subspace_basis("cColy", calc, m)
    assert holy.dim == dim_poly(m + 2) - 3
    assert choly.dim == 2 * dim_poly(m - 1)
    assert coly.dim == 2 * dim_poly(m + 1) - 3
    assert ccoly.dim == (dim_poly(m - 2) if m >= 2 else 0)
    full = 3 * dim_poly(m)
    for a, b in ((holy, choly), (coly, ccoly)):
        M = np.concatenate([a.members, b.members]).reshape(a.dim + b.dim, -1)
        assert np.linalg.matrix_rank(M, tol=1e-9) == full


def test_example_dimensions():
    calc = element(HEXAGON, 5)
    assert subspace_basis("Holy", calc, 2).dim == 12
    assert subspace_basis("cHoly", calc, 2).dim == 6
    assert subspace_basis("cColy", calc, 3).dim == 3
    assert subspace_basis("Coly", calc, 2).dim == 17
    assert subspace_basis("RT1", calc, 1).dim == 3


def test_pperp1_orthogonal_to_p1():
    calc = element(HEXAGON, 5)
    perp = subspace_basis("Pperp1", calc, 4)
    assert np.abs(calc.inner(perp.members, calc.scalar_onb(1))).max() <= 1e-12


def test_rt1_in_kernel_of_symcurl():
    calc = element(HEXAGON, 3)
    rt = subspace_basis("RT1", calc, 1)
    out = apply_diff_op("SYMCURL", rt.polynomial([0.3, -1.2, 0.7]))
    assert np.abs(out.coeffs).max() <= 1e-12


@pytest.mark.parametrize("kind,space,op,m", [
    ("VROT_on_cHoly", "cHoly", "VROT", 4),
    ("DIVDIV_on_cColy", "cColy", "DIVDIV", 4),
    ("HESS_on_Pperp1", "Pperp1", "HESS", 4),
])
def test_isomorphism_round_trip(kind, space, op, m, rng):
    calc = element(HEXAGON, m + 1)
    b = subspace_basis(space, calc, m)
    src = b.polynomial(rng.standard_normal(b.dim))
    back = invert_local_isomorphism(kind, calc, m, apply_diff_op(op, src))
    assert np.abs(back.coeffs - src.coeffs).max() <= 1e-10 * np.abs(src.coeffs).max()
    zero = invert_local_isomorphism(kind, calc, m, apply_diff_op(op, src) * 0.0)
    assert np.all(zero.coeffs == 0)


def test_isomorphism_rejects_target_outside_range():
    calc = element(HEXAGON, 4)
    target = Polynomial(calc.mono, np.eye(2, calc.size)[:, ::-1] * 0 + np.eye(2, calc.size), "vector")
    target.coeffs[0, calc.mono.index(3, 0)] = 1.0  # degree 3 is outside VROT(cHoly^3) = vP^2
    with pytest.raises(ValueError):
        invert_local_isomorphism("VROT_on_cHoly", calc, 3, target)


def test_vrot_inverse_continuity_is_scale_invariant(rng):
    ratios = []
    for s in (1.0, 0.25, 1 / 16):
        calc = element(HEXAGON * s, 5)
        b = subspace_basis("cHoly", calc, 4)
        best = 0.0
        for _ in range(20):
            u = b.polynomial(rng.standard_normal(b.dim))
            r = apply_diff_op("VROT", u)
            num = np.sqrt(calc.inner(u.coeffs[None], u.coeffs[None])[0, 0])
            den = calc.h * np.sqrt(calc.inner(r.coeffs[None], r.coeffs[None])[0, 0])
            best = max(best, num / den)
        ratios.append(best)
    assert max(ratios) / min(ratios) - 1 <= 0.5


def test_jet_field_matches_finite_differences():
    f = JetField.from_sympy(sympy.Matrix([X ** 2 * Y, sympy.sin(X)]), (X, Y))
    assert f.check_jets(np.array([[0.2, 0.3], [-0.4, 0.9]]))
    bad = JetField(f.value, lambda p: f.grad(p) + 1.0, codomain="vector")
    assert not bad.check_jets(np.array([[0.2, 0.3]]))
