import numpy as np
import pytest
import sympy

import ddr_divdiv.serendipity as ser
from conftest import X, Y, complex_for
from ddr_divdiv.ddr_full import LocalDDR
from ddr_divdiv.mesh import SerendipitySelection, select_serendipity_edges, shape_mesh
from ddr_divdiv.polycalc import Polynomial, apply_diff_op, dim_poly
from ddr_divdiv.serendipity import LocalSerendipity, SerendipityError
from ddr_divdiv.verify import RT1_EXPRS, jet, symcurl_expr, tensor_monomials, vector_monomials

CASES = [(s, k) for s in ("triangle", "square", "hexagon") for k in (3, 4, 5)]


def local(shape, k, theta=0.1):
    m = shape_mesh(shape)
    loc = LocalDDR(m, 0, k)
    return m, loc, LocalSerendipity(loc, select_serendipity_edges(m, 0, theta, k))


def rel(a, b):
    if np.size(b) == 0:
        return 0.0 if np.size(a) == 0 else np.inf
    return np.abs(a - b).max() / max(np.abs(b).max(), 1.0)


def test_no_serendipity_system_size():
    k = 4
    m, loc, s = local("square", k, theta=5.0)
    assert s.eta == 2
    n = 3 * dim_poly(k - 1) + 2 * dim_poly(k - 2)
    assert s.system.shape == (n, n)
    assert s.n_lam == loc.n_ch
    x = np.arange(loc.nV, dtype=float)
    assert np.array_equal(s.reduce_v @ x, x)


def _energy(loc, coeffs):
    """Sum of the four squared terms of A_T, from polynomial operations."""
    h, k = loc.h, loc.k
    p = Polynomial(loc.calc.mono, np.tensordot(coeffs, loc.tp_basis, axes=(0, 0)), "tensor")
    dd = apply_diff_op("DIVDIV", p)
    total = h ** 4 * loc.calc.inner(dd.coeffs[None], dd.coeffs[None])[0, 0]
    vd = apply_diff_op("VDIV", p)
    for ed in loc.edges:
        n, t = ed.normal, ed.tangent
        vals = p.value(ed.points)
        nn = np.einsum("qab,a,b->q", vals, n, n)
        total += h * np.sum(ed.calc.project_values(k - 3, nn) ** 2)
        nt = Polynomial(loc.calc.mono, np.einsum("abs,a,b->s", p.coeffs, n, t), "scalar")
        de = apply_diff_op("grad", nt).value(ed.points) @ t + vd.value(ed.points) @ n
        total += h ** 3 * np.sum(ed.weights * de ** 2)
    total += h ** 2 * np.sum(p.value(loc.vertices) ** 2)
    return total


@pytest.mark.parametrize("shape,k", [("triangle", 4), ("hexagon", 5)])
def test_form_energy_has_no_coupling_contribution(shape, k, rng):
    m, loc, s = local(shape, k)
    for _ in range(5):
        u = rng.standard_normal(loc.ntp)
        nu = rng.standard_normal(s.n_lam)
        val = s.form_value((u, nu), (u, nu))
        assert abs(val - _energy(loc, u)) <= 1e-10 * abs(val)
    assert s.form_value((np.zeros(loc.ntp), np.zeros(s.n_lam)), (u, nu)) == 0


@pytest.mark.parametrize("shape,k", CASES)
def test_serendipity_operators_consistency(shape, k):
    m, loc, s = local(shape, k)
    shift = m.centers[0]
    pts = loc.calc.rule.points
    for w in vector_monomials(k):
        x = loc.interpolate_v(jet(w), shift)
        got = np.tensordot(s.sv @ (s.reduce_v @ x), loc.tp_basis, axes=(0, 0)) @ loc.calc.mono.values(pts).T
        exact = np.moveaxis(jet(symcurl_expr(w)).value(pts + shift), 0, -1)
        assert rel(got, exact) <= 1e-10
        assert rel(s.extend_v @ (s.reduce_v @ x), x) <= 1e-10
    for tau in tensor_monomials(k - 1):
        x = loc.interpolate_sigma(jet(tau), shift)
        red = s.reduce_sigma @ x
        got = np.tensordot(s.ssigma @ red, loc.tp_basis, axes=(0, 0)) @ loc.calc.mono.values(pts).T
        assert rel(got, np.moveaxis(jet(tau).value(pts + shift), 0, -1)) <= 1e-10
        assert rel(s.extend_sigma @ red, x) <= 1e-10


@pytest.mark.parametrize("shape,k", CASES)
def test_projection_identities_and_commutation(shape, k, rng):
    m, loc, s = local(shape, k)
    c = loc.calc
    V = rng.standard_normal((s.nSV, 50))
    S = rng.standard_normal((s.nSS, 50))
    # pi^ell of E_P recovers the reduced element component
    assert rel(s.ep[: s.n_red] @ V, V[loc.v_boundary_size:]) <= 1e-10
    # cHoly^{ell+1} projection of S_Sigma recovers the reduced multiplier component
    lam = c.inner(s.lam_basis, loc.tp_basis) @ s.ssigma @ S
    assert rel(lam, S[loc.nS - loc.n_ch:]) <= 1e-10
    # the cHoly^{ell+1} readback of S_V
    lhs = c.inner(s.lam_basis, loc.tp_basis) @ s.sv @ V
    assert rel(lhs, s.rhs_v[loc.ntp:] @ V) <= 1e-10
    assert rel(s.ssigma @ s.scsym @ V, s.sv @ V) <= 1e-10
    assert rel(s.ssigma_direct @ S, s.ssigma @ S) <= 1e-11
    assert rel(s.reduce_v @ s.extend_v @ V, V) <= 1e-12
    assert rel(s.reduce_sigma @ s.extend_sigma @ S, S) <= 1e-12
    assert np.all(s.sv @ np.zeros(s.nSV) == 0)


def test_inf_sup_positive_and_error_path(monkeypatch):
    m, loc, s = local("hexagon", 4)
    assert s.inf_sup > 0
    monkeypatch.setattr(ser, "INF_SUP_MIN", 1e6)
    fresh = LocalSerendipity(loc, s.selection)
    with pytest.raises(SerendipityError):
        fresh.solve(np.zeros(len(fresh.system)))


def test_local_dof_counts_match_dimension_formulas():
    for shape, eta, full, red in (("triangle", 3, 48, 40), ("square", 4, 60, 48)):
        m, loc, s = local(shape, 3)
        assert s.eta == eta
        assert loc.nV + loc.nS == full and s.nSV + s.nSS == red


@pytest.mark.parametrize("family", ["tri", "square", "hex"])
@pytest.mark.parametrize("k", [3, 4])
def test_global_serendipity_complex(family, k, rng):
    cx, sc = complex_for(family, 2, k, serendipity=True)
    V = rng.standard_normal((sc.dim_v, 20))
    Sv = sc.scsym @ V
    assert np.abs(sc.sdd @ Sv).max() <= 1e-12 * abs(sc.sdd).max() * np.abs(Sv).max()
    Vf = rng.standard_normal((cx.dim_v, 20))
    # cochain identities
    assert rel(sc.scsym @ (sc.reduce_v @ Vf), sc.reduce_sigma @ (cx.ucsym @ Vf)) <= 1e-10
    assert rel(sc.extend_sigma @ (sc.scsym @ V), cx.ucsym @ (sc.extend_v @ V)) <= 1e-10
    for w in RT1_EXPRS:
        iw = cx.interpolate_v(jet(w))
        assert rel(sc.extend_v @ sc.interpolate_v(jet(w)), iw) <= 1e-10


def test_serendipity_product_consistency(rng):
    cx, sc = complex_for("hex", 2, 4, serendipity=True)
    v = rng.standard_normal(sc.dim_v)
    P = cx.potential_matrix_v()
    for w in vector_monomials(4)[:5]:
        lhs = sc.interpolate_v(jet(w)) @ (sc.mass_v @ v)
        rhs = cx.project_broken(jet(w).value, "vector") @ (P @ (sc.extend_v @ v))
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))
    assert sc.interpolate_v(jet(sympy.zeros(2, 1))) @ (sc.mass_v @ v) == 0


def test_reduction_and_extension_continuity_sampled(rng):
    ratios = []
    for n in (2, 4):
        cx, sc = complex_for("square", n, 3, serendipity=True)
        best = 0.0
        for _ in range(20):
            v = rng.standard_normal(sc.dim_v)
            e = sc.extend_v @ v
            best = max(best, np.sqrt(np.sum(cx.norm_weights_v * e ** 2) / np.sum(sc.norm_weights_v * v ** 2)))
        ratios.append(best)
    assert max(ratios) < 10 and max(ratios) / min(ratios) - 1 <= 0.25


def test_selection_validation_is_enforced():
    m = shape_mesh("square")
    loc = LocalDDR(m, 0, 3)
    sel = SerendipitySelection(edges=(0, 2), eta=2, theta=1.0, ell=1)
    s = LocalSerendipity(loc, sel)
    assert s.n_red == 2 * dim_poly(1) and s.nSV == loc.nV
