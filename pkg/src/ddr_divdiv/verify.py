"""Identity suites, discrete constants, DOF accounting and convergence studies."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy

from .ddr_full import FullComplex
from .mesh import Mesh, family_mesh, regularity_report, shape_mesh
from .polycalc import JetField, dim_poly, dim_poly_edge, divdiv, hess, symcurl, vgrad
from .serendipity import LocalSerendipity, SerendipityComplex

X, Y = sympy.symbols("x y")
IDENTITY_TOL = 1e-10
COMPLEX_TOL = 1e-12
UNIFORMITY_TOL = 0.25


# ---------------------------------------------------------------------------
# reports


@dataclass
class Check:
    identifier: str
    anchor: str
    value: float
    tolerance: float
    passed: bool
    kind: str = "residual"
    detail: dict = field(default_factory=dict)


@dataclass
class Report:
    suite: str
    metadata: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def add(self, identifier: str, anchor: str, value: float, tolerance: float, kind: str = "residual",
            passed: bool | None = None, **detail) -> Check:
        value = float(value)
        if passed is None:
            passed = bool(np.isfinite(value) and value <= tolerance)
        c = Check(identifier, anchor, value, float(tolerance), bool(passed), kind, detail)
        self.checks.append(c)
        return c

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def extend(self, other: "Report") -> None:
        self.checks.extend(other.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"suite": self.suite, "metadata": self.metadata, "passed": self.passed,
                "checks": [asdict(c) for c in self.checks]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["identifier", "anchor", "kind", "value", "tolerance", "passed"])
        for c in self.checks:
            w.writerow([c.identifier, c.anchor, c.kind, f"{c.value:.6e}", f"{c.tolerance:.3e}", c.passed])
        return buf.getvalue()

    def summary_lines(self) -> list[str]:
        out = []
        for c in self.checks:
            head = f"{'PASS' if c.passed else 'FAIL'} {c.identifier}: "
            if c.kind == "rate":
                out.append(head + f"slope {c.detail['slope']:.3f}, |slope - target| {c.value:.3f} (tol {c.tolerance})")
            elif c.kind == "rate_floor":
                out.append(head + f"slope {c.value:.3f} (floor {c.tolerance})")
            elif c.kind == "variation":
                vals = ", ".join(f"{v:.4g}" for v in c.detail["values"])
                out.append(head + f"variation {c.value:.3f} over [{vals}] (tol {c.tolerance})")
            elif "line" in c.detail:
                out.append(head + c.detail["line"])
            else:
                out.append(head + f"{c.value:.3e} (tol {c.tolerance:.1e})")
        return out


def write_atomic(path, text: str) -> None:
    """Write a file through a temporary sibling so partial output never appears."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default)


# ---------------------------------------------------------------------------
# polynomial test fields


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(np.linalg.norm(b), np.linalg.norm(a), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def _norm2(A) -> float:
    if sp.issparse(A):
        # fixed start vector: ARPACK otherwise draws a random one and reports drift in the last bits
        v0 = np.random.default_rng(0).standard_normal(min(A.shape))
        if A.shape[0] == A.shape[1] and abs(A - A.T).max() == 0:
            return float(abs(spla.eigsh(A.astype(float), k=1, which="LM", v0=v0, return_eigenvectors=False)[0]))
        return float(spla.svds(A.astype(float), k=1, v0=v0, return_singular_vectors=False)[0])
    return float(np.linalg.norm(A, 2))


def _normwise(A, x, b, norm_a: float | None = None) -> float:
    """Normwise relative residual ||A x - b|| / (||A||_2 ||x|| + ||b||)."""
    x, b = np.asarray(x, float), np.asarray(b, float)
    na = _norm2(A) if norm_a is None else norm_a
    denom = na * np.linalg.norm(x) + np.linalg.norm(b)
    return float(np.linalg.norm(A @ x - b) / max(denom, 1e-300))


def _op_rel(A, B) -> float:
    """||A - B||_F relative to the larger of the two."""
    D = A - B
    nd = sp.linalg.norm(D) if sp.issparse(D) else np.linalg.norm(D)
    na = sp.linalg.norm(A) if sp.issparse(A) else np.linalg.norm(A)
    nb = sp.linalg.norm(B) if sp.issparse(B) else np.linalg.norm(B)
    return float(nd / max(na, nb, 1e-300))


def _fro(A) -> float:
    return float(sp.linalg.norm(A) if sp.issparse(A) else np.linalg.norm(A))


def symcurl_expr(w):
    G = sympy.Matrix([[sympy.diff(w[i], s) for s in (X, Y)] for i in range(2)])
    off = (-G[0, 0] + G[1, 1]) / 2
    return sympy.Matrix([[G[0, 1], off], [off, -G[1, 0]]])


def divdiv_expr(tau):
    return sympy.expand(sympy.diff(tau[0, 0], X, 2) + 2 * sympy.diff(tau[0, 1], X, Y) + sympy.diff(tau[1, 1], Y, 2))


@lru_cache(maxsize=None)
def vector_monomials(degree: int) -> tuple:
    out = []
    for d in range(degree + 1):
        for j in range(d + 1):
            m = X ** (d - j) * Y ** j
            out += [sympy.Matrix([m, 0]), sympy.Matrix([0, m])]
    return tuple(out)


@lru_cache(maxsize=None)
def tensor_monomials(degree: int) -> tuple:
    out = []
    for d in range(degree + 1):
        for j in range(d + 1):
            m = X ** (d - j) * Y ** j
            out += [sympy.Matrix([[m, 0], [0, 0]]), sympy.Matrix([[0, m], [m, 0]]), sympy.Matrix([[0, 0], [0, m]])]
    return tuple(out)


RT1_EXPRS = (sympy.Matrix([1, 0]), sympy.Matrix([0, 1]), sympy.Matrix([X, Y]))
RIGID_EXPRS = (sympy.Matrix([1, 0]), sympy.Matrix([0, 1]), sympy.Matrix([-Y, X]))


_JETS: dict = {}


def jet(expr) -> JetField:
    """Exact jets of a sympy field (cached by expression)."""
    key = sympy.ImmutableMatrix(expr) if isinstance(expr, sympy.MatrixBase) else sympy.sympify(expr)
    if key not in _JETS:
        _JETS[key] = JetField.from_sympy(key, (X, Y))
    return _JETS[key]


def scalar_fn(expr):
    f = sympy.lambdify((X, Y), expr, "numpy")
    return lambda p: np.broadcast_to(np.asarray(f(p[:, 0], p[:, 1]), float), (len(p),))


def _sample(cx_or_dims, rng, n):
    return rng.standard_normal((n, cx_or_dims))


def _element_field_error(cx: FullComplex, x: np.ndarray, exact: JetField, kind: str) -> float:
    """Max relative nodal error between an element potential and a field."""
    err, scale = 0.0, 0.0
    for t, loc in enumerate(cx.local):
        pts = loc.calc.rule.points
        if kind == "vector":
            vals = np.einsum("cm,qm->qc", loc.pv_field(x[cx.v_dofs(t)]), loc.calc.mono.values(pts))
        else:
            vals = np.einsum("abm,qm->qab", loc.psigma_field(x[cx.sigma_dofs(t)]), loc.calc.mono.values(pts))
        ref = exact.value(pts + cx.mesh.centers[t])
        err = max(err, float(np.abs(vals - ref).max()))
        scale = max(scale, float(np.abs(ref).max()))
    return err / max(scale, 1e-300)


def _local_coeffs(loc, shift, exact: JetField, basis) -> np.ndarray:
    return loc.calc.project(basis, exact.value(loc.calc.rule.points + shift))


# ---------------------------------------------------------------------------
# identity suites


def _full_suite(cx: FullComplex, rng, draws: int, rep: Report) -> None:
    k = cx.k
    mesh = cx.mesh
    rep.add("complex.full", "complex property of the full sequence",
            _fro(cx.dd @ cx.ucsym) / (_fro(cx.dd) * _fro(cx.ucsym)), COMPLEX_TOL)

    err = 0.0
    for w in vector_monomials(k):
        err = max(err, _element_field_error(cx, cx.interpolate_v(jet(w)), jet(w), "vector"))
    rep.add("PV.polynomial_consistency", "vector potential reproduces vP^k", err, IDENTITY_TOL)

    err = 0.0
    V = _sample(cx.dim_v, rng, draws)
    for t, loc in enumerate(cx.local):
        d = cx.v_dofs(t)
        a = V[:, d] @ (loc.psigma @ loc.ucsym).T
        b = V[:, d] @ loc.csym.T
        err = max(err, _rel(a, b))
    rep.add("PSigma.commutation", "tensor potential of the discrete sym curl equals the full sym curl",
            err, IDENTITY_TOL)

    err = 0.0
    for tau in tensor_monomials(k - 1):
        err = max(err, _element_field_error(cx, cx.interpolate_sigma(jet(tau)), jet(tau), "tensor"))
    rep.add("PSigma.polynomial_consistency", "tensor potential reproduces tP^{k-1}", err, IDENTITY_TOL)

    err = 0.0
    for tau in tensor_monomials(k + 1):
        dd = cx.dd @ cx.interpolate_sigma(jet(tau))
        ref = cx.project_p(scalar_fn(divdiv_expr(tau)))
        err = max(err, _rel(dd, ref) if np.linalg.norm(ref) > 0 else float(np.linalg.norm(dd)))
    rep.add("DD.commutation", "discrete div-div of the interpolate is the projected DIVDIV", err, IDENTITY_TOL)

    err = 0.0
    Pm = cx.potential_matrix_v()
    nm = _norm2(cx.mass_v)
    for w in vector_monomials(k):
        rhs = Pm.T @ cx.project_broken(jet(w).value, "vector")
        err = max(err, _normwise(cx.mass_v, cx.interpolate_v(jet(w)), rhs, nm))
    rep.add("L2prod.V.polynomial_consistency", "discrete V product against interpolated vP^k", err, IDENTITY_TOL)

    err = 0.0
    Ps = cx.potential_matrix_sigma()
    nm = _norm2(cx.mass_sigma)
    for tau in tensor_monomials(k - 1):
        rhs = Ps.T @ cx.project_broken(jet(tau).value, "tensor")
        err = max(err, _normwise(cx.mass_sigma, cx.interpolate_sigma(jet(tau)), rhs, nm))
    rep.add("L2prod.Sigma.polynomial_consistency", "discrete Sigma product against interpolated tP^{k-1}",
            err, IDENTITY_TOL)

    err = 0.0
    for w in vector_monomials(k):
        lhs = cx.ucsym @ cx.interpolate_v(jet(w))
        rhs = cx.interpolate_sigma(jet(symcurl_expr(w)))
        err = max(err, _rel(lhs, rhs) if np.linalg.norm(rhs) > 0 else float(np.linalg.norm(lhs)))
    rep.add("uCsym.commutation", "discrete sym curl commutes with interpolation on vP^k", err, IDENTITY_TOL)

    scale = _fro(cx.ucsym)
    err = max(np.linalg.norm(cx.ucsym @ cx.interpolate_v(jet(w))) / (scale * np.linalg.norm(cx.interpolate_v(jet(w))))
              for w in RT1_EXPRS)
    rep.add("uCsym.kernel_RT1", "RT1 interpolates lie in the kernel of the discrete sym curl", err, IDENTITY_TOL)

    z = (np.linalg.norm(cx.ucsym @ np.zeros(cx.dim_v)) + np.linalg.norm(cx.dd @ np.zeros(cx.dim_sigma))
         + abs(cx.l2_product_v(np.zeros(cx.dim_v), np.zeros(cx.dim_v))))
    rep.add("zero.full", "zero fields map to zero", z, 0.0)


def _energy_terms(s: LocalSerendipity, ups: np.ndarray) -> float:
    """Four squared seminorm terms of A_T evaluated directly at nodes."""
    loc = s.full
    h, k = loc.h, loc.k
    c = loc.calc
    field_ = np.tensordot(ups, loc.tp_basis, axes=(0, 0))
    dd = divdiv(field_[None], c.mono)[0]
    total = h ** 4 * float(c.rule.integrate((c.mono.values(c.rule.points) @ dd) ** 2))
    for ed in loc.edges:
        vals = np.einsum("abq,a,b->q", field_ @ c.mono.values(ed.points).T, ed.normal, ed.normal)
        proj = ed.calc.project_values(k - 3, vals)
        total += h * float(proj @ proj)
        de = loc.edge_de(field_[None], ed)[0]
        total += h ** 3 * float(np.sum(ed.weights * de ** 2))
    for j in range(loc.nv):
        total += h ** 2 * float(np.sum((field_ @ loc._vertex_values[j]) ** 2))
    return total


def _serendipity_suite(cx: FullComplex, sc: SerendipityComplex, rng, draws: int, rep: Report) -> None:
    k = cx.k
    mesh = cx.mesh
    rep.add("complex.serendipity", "complex property of the serendipity sequence",
            _fro(sc.sdd @ sc.scsym) / (_fro(sc.sdd) * _fro(sc.scsym)), COMPLEX_TOL)

    err = 0.0
    for w in vector_monomials(k):
        Iv = cx.interpolate_v(jet(w))
        C = jet(symcurl_expr(w))
        for t, (loc, s) in enumerate(zip(cx.local, sc.local)):
            ref = _local_coeffs(loc, mesh.centers[t], C, loc.tp_basis)
            err = max(err, _normwise(s.sv @ s.reduce_v, Iv[cx.v_dofs(t)], ref))
    rep.add("SV.polynomial_consistency", "serendipity V operator reproduces SYMCURL of vP^k", err, IDENTITY_TOL)

    err = 0.0
    for w in vector_monomials(k):
        Iv = cx.interpolate_v(jet(w))
        err = max(err, _rel(sc.extend_v @ (sc.reduce_v @ Iv), Iv))
    rep.add("EV.polynomial_consistency", "extension of the serendipity interpolate on vP^k", err, IDENTITY_TOL)

    err, err_e = 0.0, 0.0
    for tau in tensor_monomials(k - 1):
        Is = cx.interpolate_sigma(jet(tau))
        for t, (loc, s) in enumerate(zip(cx.local, sc.local)):
            ref = _local_coeffs(loc, mesh.centers[t], jet(tau), loc.tp_basis)
            err = max(err, _normwise(s.ssigma @ s.reduce_sigma, Is[cx.sigma_dofs(t)], ref))
        err_e = max(err_e, _rel(sc.extend_sigma @ (sc.reduce_sigma @ Is), Is))
    rep.add("SS.polynomial_consistency", "serendipity Sigma operator reproduces tP^{k-1}", err, IDENTITY_TOL)
    rep.add("ES.polynomial_consistency", "extension of the serendipity interpolate on tP^{k-1}", err_e, IDENTITY_TOL)

    e_proj = e_csym = e_lam = e_comm = e_forms = e_energy = 0.0
    for loc, s in _unique_pairs(cx, sc):
        Xv = rng.standard_normal((draws, s.nSV))
        Xs = rng.standard_normal((draws, s.nSS))
        ep = Xv @ s.ep.T
        red = Xv[:, loc.v_boundary_size:]
        e_proj = max(e_proj, _rel(ep[:, : s.n_red], red) if s.n_red else 0.0)
        pc = loc.calc.inner(loc.choly, loc.tp_basis)
        e_csym = max(e_csym, _rel(Xv @ (pc @ loc.csym @ s.extend_v).T, Xv @ (pc @ s.sv).T))
        lam = Xs[:, s.nSS - s.n_lam:]
        e_lam = max(e_lam, _rel(Xs @ (s.coupling @ s.ssigma).T, lam) if s.n_lam else 0.0)
        e_comm = max(e_comm, _rel(Xv @ (s.ssigma @ s.scsym).T, Xv @ s.sv.T))
        e_forms = max(e_forms, _rel(Xs @ s.ssigma.T, Xs @ s.ssigma_direct.T))
        for _ in range(min(draws, 10)):
            ups = rng.standard_normal(loc.ntp)
            nu = rng.standard_normal(s.n_lam)
            a = s.form_value((ups, nu), (ups, nu))
            e_energy = max(e_energy, _rel(a, _energy_terms(s, ups)))
    rep.add("EPT.projection", "projection of the extended element component recovers the reduced one",
            e_proj, IDENTITY_TOL)
    rep.add("Csym.cHoly_projection", "cHoly^{k-1} part of Csym(E v) equals that of S_V v", e_csym, IDENTITY_TOL)
    rep.add("SSigma.cHoly_projection", "cHoly^{l+1} part of S_Sigma recovers the reduced component",
            e_lam, IDENTITY_TOL)
    rep.add("serendipity.commutation", "S_Sigma composed with the serendipity sym curl equals S_V",
            e_comm, IDENTITY_TOL)
    rep.add("LSigma.two_forms", "both right-hand side forms of the Sigma serendipity problem agree",
            e_forms, 1e-11)
    rep.add("AT.energy", "A_T on the diagonal equals the four squared seminorm terms", e_energy, IDENTITY_TOL)
    inf_sup = float(sc.inf_sup_constants().min())
    rep.add("AT.inf_sup_positive", "inf-sup constant of the serendipity problem is positive", inf_sup, 1e-10,
            kind="lower_bound", passed=inf_sup > 1e-10)

    err = 0.0
    Pm = cx.potential_matrix_v()
    nm = _norm2(sc.mass_v)
    for w in vector_monomials(k):
        rhs = (Pm @ sc.extend_v).T @ cx.project_broken(jet(w).value, "vector")
        err = max(err, _normwise(sc.mass_v, sc.interpolate_v(jet(w)), rhs, nm))
    rep.add("sL2prod.V.polynomial_consistency", "serendipity V product against interpolated vP^k",
            err, IDENTITY_TOL)
    z = np.linalg.norm(sc.scsym @ np.zeros(sc.dim_v)) + np.linalg.norm(sc.reduce_v @ np.zeros(cx.dim_v))
    rep.add("zero.serendipity", "zero fields map to zero", z, 0.0)


def _unique_pairs(cx, sc):
    seen = set()
    for loc, s in zip(cx.local, sc.local):
        if id(s) not in seen:
            seen.add(id(s))
            yield loc, s


def _scaled_dense(A, w_rows, w_cols) -> np.ndarray:
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    return (np.sqrt(w_rows)[:, None] * A) / np.sqrt(w_cols)[None, :]


def numerical_rank(A: np.ndarray, rtol: float = 1e-9) -> int:
    if min(A.shape) == 0:
        return 0
    s = sla.svdvals(A)
    return int((s > rtol * s[0]).sum()) if s[0] > 0 else 0


def cohomology(ucsym, dd, wv, ws, wp=None) -> dict:
    """Kernel and cohomology dimensions of V -> Sigma -> P from scaled dense ranks."""
    wp = np.ones(dd.shape[0]) if wp is None else wp
    r1 = numerical_rank(_scaled_dense(ucsym, ws, wv))
    r2 = numerical_rank(_scaled_dense(dd, wp, ws))
    nv, ns, npp = ucsym.shape[1], ucsym.shape[0], dd.shape[0]
    return {"rank_curl": r1, "rank_dd": r2, "H0": nv - r1, "H1": ns - r2 - r1, "H2": npp - r2}


def _cross_suite(cx: FullComplex, sc: SerendipityComplex, rng, draws: int, rep: Report) -> None:
    I_v = sp.identity(sc.dim_v, format="csr")
    I_s = sp.identity(sc.dim_sigma, format="csr")
    rep.add("isomorphism.V", "reduction after extension is the identity on reduced V",
            _op_rel(sc.reduce_v @ sc.extend_v, I_v), IDENTITY_TOL)
    rep.add("isomorphism.Sigma", "reduction after extension is the identity on reduced Sigma",
            _op_rel(sc.reduce_sigma @ sc.extend_sigma, I_s), IDENTITY_TOL)

    U = _scaled_dense(cx.ucsym, cx.norm_weights_sigma, cx.norm_weights_v)
    _, s, Vt = sla.svd(U)
    null = Vt[(s > 1e-9 * s[0]).sum():] / np.sqrt(cx.norm_weights_v)[None, :]
    err = 0.0
    for z in null:
        err = max(err, _rel(sc.extend_v @ (sc.reduce_v @ z), z))
    rep.add("complex.V", "extension after reduction fixes the kernel of the discrete sym curl", err, IDENTITY_TOL,
            kernel_dim=len(null))

    Uf = cx.ucsym.toarray()
    err = 0.0
    for _ in range(min(draws, 20)):
        tau = rng.standard_normal(cx.dim_sigma)
        r = sc.extend_sigma @ (sc.reduce_sigma @ tau) - tau
        if np.linalg.norm(r) < 1e-14 * np.linalg.norm(tau):
            continue
        v = np.linalg.lstsq(Uf, r, rcond=None)[0]
        err = max(err, np.linalg.norm(Uf @ v - r) / np.linalg.norm(r))
    rep.add("complex.Sigma", "extension after reduction moves Sigma fields within the sym curl image",
            err, IDENTITY_TOL)

    rep.add("cochain.RS", "reduction intertwines the sym curls",
            _op_rel(sc.scsym @ sc.reduce_v, sc.reduce_sigma @ cx.ucsym), IDENTITY_TOL)
    rep.add("cochain.ES", "extension intertwines the sym curls",
            _op_rel(sc.extend_sigma @ sc.scsym, cx.ucsym @ sc.extend_v), IDENTITY_TOL)
    err = 0.0
    for w in RT1_EXPRS:
        Iv = cx.interpolate_v(jet(w))
        err = max(err, _rel(sc.extend_v @ sc.interpolate_v(jet(w)), Iv))
    rep.add("cochain.EV", "extension of serendipity interpolates of global RT1 fields", err, IDENTITY_TOL)

    err_v = max(_rel(sc.extend_v @ (sc.reduce_v @ cx.interpolate_v(jet(w))), cx.interpolate_v(jet(w)))
                for w in vector_monomials(cx.k))
    err_s = max(_rel(sc.extend_sigma @ (sc.reduce_sigma @ cx.interpolate_sigma(jet(t))), cx.interpolate_sigma(jet(t)))
                for t in tensor_monomials(cx.k - 1))
    rep.add("RE.V.polynomial_consistency", "E R I_V = I_V on vP^k", err_v, IDENTITY_TOL)
    rep.add("RE.Sigma.polynomial_consistency", "E R I_Sigma = I_Sigma on tP^{k-1}", err_s, IDENTITY_TOL)

    full = cohomology(cx.ucsym, cx.dd, cx.norm_weights_v, cx.norm_weights_sigma)
    ser = cohomology(sc.scsym, sc.sdd, sc.norm_weights_v, sc.norm_weights_sigma)
    rep.add("cohomology.kernel_full", "kernel of the discrete sym curl is RT1", abs(full["H0"] - 3), 0,
            kind="count", **full)
    rep.add("cohomology.kernel_serendipity", "kernel of the serendipity sym curl is RT1", abs(ser["H0"] - 3), 0,
            kind="count", **ser)
    rep.add("cohomology.surjective", "discrete div-div operators are onto", full["H2"] + ser["H2"], 0, kind="count")
    diff = sum(abs(full[key] - ser[key]) for key in ("H0", "H1", "H2"))
    rep.add("cohomology.equal", "full and serendipity cohomology dimensions agree", diff, 0, kind="count")


def run_identity_suite(mesh: Mesh, k: int, mode: str = "full", seed: int = 0, draws: int = 50,
                       theta_min: float = 0.1, complex_: FullComplex | None = None) -> Report:
    if mode not in ("full", "serendipity", "cross", "all"):
        raise ValueError(f"unknown suite mode {mode!r}")
    rng = np.random.default_rng(seed)
    cx = complex_ or FullComplex(mesh, k)
    rep = Report(f"identities/{mode}", {"k": k, "theta_min": theta_min, "seed": seed, "cells": mesh.n_cells,
                                         "draws": draws})
    if mode in ("full", "all"):
        _full_suite(cx, rng, draws, rep)
    if mode != "full":
        sc = SerendipityComplex(cx, theta_min)
        if mode in ("serendipity", "all"):
            _serendipity_suite(cx, sc, rng, draws, rep)
        if mode in ("cross", "all"):
            _cross_suite(cx, sc, rng, draws, rep)
    return rep


def _identity_level(family: str, n: int, k: int, mode: str, seed: int, draws: int, theta_min: float) -> Report:
    return run_identity_suite(family_mesh(family, n), k, mode, seed, draws, theta_min)


def identity_study(family: str, k: int, levels=(2,), mode: str = "all", seed: int = 0, draws: int = 50,
                   theta_min: float = 0.1, workers: int = 1) -> Report:
    """Identity suites on several members of a mesh family, merged into one report."""
    parts = map_levels(_identity_level, [(family, n, k, mode, seed, draws, theta_min) for n in levels], workers)
    rep = Report(f"identities/{mode}", {"family": family, "k": k, "levels": list(levels), "seed": seed,
                                         "theta_min": theta_min, "draws": draws})
    for n, part in zip(levels, parts):
        for c in part.checks:
            c.identifier = f"n{n}.{c.identifier}"
        rep.extend(part)
    return rep


# ---------------------------------------------------------------------------
# discrete constants


def _constraint_nullspace(C: np.ndarray) -> np.ndarray:
    """Orthonormal basis of {x : C x = 0}."""
    Q, _ = np.linalg.qr(C.T, mode="complete")
    return Q[:, C.shape[0]:]


def _rt1_constraints(cx: FullComplex) -> np.ndarray:
    P = cx.potential_matrix_v()
    return np.array([P.T @ cx.project_broken(jet(w).value, "vector") for w in RT1_EXPRS])


def _poincare_v_dense(cx: FullComplex) -> float:
    Z = _constraint_nullspace(_rt1_constraints(cx))
    U = cx.ucsym.toarray()
    K = Z.T @ (U.T @ (cx.norm_weights_sigma[:, None] * U)) @ Z
    N = Z.T @ (cx.norm_weights_v[:, None] * Z)
    lam = sla.eigh(0.5 * (K + K.T), 0.5 * (N + N.T), eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(1.0 / np.sqrt(lam))


def _poincare_sigma_dense(cx: FullComplex, inner: str = "l2") -> float:
    M = (cx.mass_sigma if inner == "l2" else sp.diags(cx.norm_weights_sigma)).tocsc()
    D = cx.dd.toarray()
    B = spla.splu(M).solve(D.T)  # M^{-1} DD^T
    S = D @ B
    A = B.T @ (cx.norm_weights_sigma[:, None] * B)
    S2 = S @ S
    mu = sla.eigh(0.5 * (A + A.T), 0.5 * (S2 + S2.T), eigvals_only=True)
    return float(np.sqrt(mu.max()))


def _largest_eig(op: spla.LinearOperator, seed: int = 0) -> float:
    v0 = np.random.default_rng(seed).standard_normal(op.shape[0])
    return float(spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-10, return_eigenvectors=False)[0])


def poincare_v(cx: FullComplex) -> float:
    """Smallest C with |||v||| <= C |||uCsym v||| for P_V v orthogonal to RT1.

    With y = W_V^(1/2) v and U~ = W_S^(1/2) uCsym W_V^(-1/2), C^2 is the top
    eigenvalue of the constrained inverse of U~^T U~. It is applied through the
    augmented least-squares system, which keeps the fill-in of uCsym itself.
    """
    rv = 1.0 / np.sqrt(cx.norm_weights_v)
    Ut = (sp.diags(np.sqrt(cx.norm_weights_sigma)) @ cx.ucsym @ sp.diags(rv)).tocsc()
    Cs = sp.csc_matrix(_rt1_constraints(cx) * rv)
    m, n = Ut.shape
    lu = spla.splu(sp.bmat([[-sp.identity(m), Ut, None], [Ut.T, None, Cs.T], [None, Cs, None]],
                           format="csc"))
    pad_r, pad_c = np.zeros(m), np.zeros(Cs.shape[0])

    def apply(y):
        return lu.solve(np.concatenate([pad_r, np.ravel(y), pad_c]))[m:m + n]

    return float(np.sqrt(_largest_eig(spla.LinearOperator((n, n), apply, dtype=float))))


def poincare_sigma(cx: FullComplex, inner: str = "l2") -> float:
    """Smallest C with |||tau||| <= C ||DD tau|| for tau orthogonal to ker DD.

    tau(q) solves the mixed problem M tau + DD^T x = 0, DD tau = q, so C is the
    largest singular value of q -> W^(1/2) tau(q).
    """
    M = (cx.mass_sigma if inner == "l2" else sp.diags(cx.norm_weights_sigma)).tocsc()
    D = cx.dd.tocsc()
    ns, npp = D.shape[1], D.shape[0]
    lu = spla.splu(sp.bmat([[M, D.T], [D, None]], format="csc"))
    r = np.sqrt(cx.norm_weights_sigma)

    def apply(q):
        tau = lu.solve(np.concatenate([np.zeros(ns), np.ravel(q)]))[:ns]
        # the saddle matrix is symmetric, so the adjoint is one more solve
        return lu.solve(np.concatenate([r * r * tau, np.zeros(npp)]))[ns:]

    return float(np.sqrt(_largest_eig(spla.LinearOperator((npp, npp), apply, dtype=float))))


def hybrid_poincare_korn(mesh: Mesh, k: int, which: str, complex_: FullComplex | None = None) -> float:
    """Discrete C_PK on the hybrid space vP^k(T) x vP^k(E)."""
    if which not in ("grad", "symcurl", "symgrad"):
        raise ValueError(f"unknown case {which!r}")
    cx = complex_ or FullComplex(mesh, k)
    nb = 2 * dim_poly(k)
    ne = 2 * (k + 1)
    nT, nE = mesh.n_cells, mesh.n_edges
    tt, te, ee = [], [], []
    for t, loc in enumerate(cx.local):
        c = loc.calc
        basis = loc.pv_basis
        if which == "grad":
            op = vgrad(basis, c.mono)
        elif which == "symcurl":
            op = symcurl(basis, c.mono)
        else:
            g = vgrad(basis, c.mono)
            op = 0.5 * (g + np.swapaxes(g, 1, 2))
        block = c.inner(op, op)
        for ed, e in zip(loc.edges, mesh.cell_edges[t]):
            ev = loc._elem_values(basis, ed.points)  # (nb, 2, nq)
            onb = ed.calc.onb_values(k)  # (k+1, nq)
            fv = np.zeros((ne, 2, len(ed.points)))
            fv[0::2, 0] = onb
            fv[1::2, 1] = onb
            wgt = ed.weights / loc.h
            block = block + np.einsum("icq,q,jcq->ij", ev, wgt, ev)
            te.append((t, e, -np.einsum("icq,q,jcq->ij", ev, wgt, fv)))
            ee.append((e, np.einsum("icq,q,jcq->ij", fv, wgt, fv)))
        tt.append(block)
    S_TT = sp.block_diag(tt, format="csr")
    S_EE = [np.zeros((ne, ne)) for _ in range(nE)]
    for e, blk in ee:
        S_EE[e] += blk
    S_EE_inv = sp.block_diag([np.linalg.inv(b) for b in S_EE], format="csr")
    rows, cols, vals = [], [], []
    for t, e, blk in te:
        r, c_ = np.meshgrid(t * nb + np.arange(nb), e * ne + np.arange(ne), indexing="ij")
        rows.append(r.ravel()); cols.append(c_.ravel()); vals.append(blk.ravel())
    S_TE = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nT * nb, nE * ne))
    schur = (S_TT - S_TE @ S_EE_inv @ S_TE.T).tocsc()
    kernel = {"grad": RT1_EXPRS[:2], "symcurl": RT1_EXPRS, "symgrad": RIGID_EXPRS}[which]
    C = np.array([cx.project_broken(jet(w).value, "vector") for w in kernel])
    n, m = schur.shape[0], C.shape[0]
    lu = spla.splu(sp.bmat([[schur, sp.csc_matrix(C.T)], [sp.csc_matrix(C), None]], format="csc"))

    def apply(y):
        return lu.solve(np.concatenate([np.ravel(y), np.zeros(m)]))[:n]

    # broken bases are L2-orthonormal, so the mass matrix is the identity
    return float(np.sqrt(_largest_eig(spla.LinearOperator((n, n), apply, dtype=float))))


def norm_equivalence(cx: FullComplex, sc: SerendipityComplex | None = None) -> dict:
    """Extreme per-element ratios of the L2-product norms to the component norms."""
    out = {}
    lo, hi = np.inf, 0.0
    for loc in {id(l): l for l in cx.local}.values():
        ev = sla.eigh(loc.mass_v, np.diag(loc.norm_weights_v), eigvals_only=True)
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
    out["V"] = (float(np.sqrt(lo)), float(np.sqrt(hi)))
    lo, hi = np.inf, 0.0
    for loc in {id(l): l for l in cx.local}.values():
        ev = sla.eigh(loc.mass_sigma, np.diag(loc.norm_weights_sigma), eigvals_only=True)
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
    out["Sigma"] = (float(np.sqrt(lo)), float(np.sqrt(hi)))
    if sc is not None:
        for name, mass, wts in (("sV", "mass_v", "norm_weights_v"), ("sSigma", "mass_sigma", "norm_weights_sigma")):
            lo, hi = np.inf, 0.0
            for s in {id(s): s for s in sc.local}.values():
                ev = sla.eigh(getattr(s, mass), np.diag(getattr(s, wts)), eigvals_only=True)
                lo, hi = min(lo, ev[0]), max(hi, ev[-1])
            out[name] = (float(np.sqrt(lo)), float(np.sqrt(hi)))
        hi_r = hi_e = 0.0
        for s in {id(s): s for s in sc.local}.values():
            loc = s.full
            R, E = s.reduce_v, s.extend_v
            ev = sla.eigh(R.T @ s.mass_v @ R, np.diag(loc.norm_weights_v), eigvals_only=True)
            hi_r = max(hi_r, ev[-1])
            ev = sla.eigh(E.T @ np.diag(loc.norm_weights_v) @ E, np.diag(s.norm_weights_v), eigvals_only=True)
            hi_e = max(hi_e, ev[-1])
        out["reduction_V_continuity"] = float(np.sqrt(hi_r))
        out["extension_V_continuity"] = float(np.sqrt(hi_e))
    return out


def variation(values) -> float:
    v = np.asarray(values, float)
    return float(v.max() / v.min() - 1.0)


def _uniformity_row(family: str, n: int, k: int, theta_min: float) -> dict:
    mesh = family_mesh(family, n)
    cx = FullComplex(mesh, k)
    sc = SerendipityComplex(cx, theta_min)
    ne = norm_equivalence(cx, sc)
    return {
        "n": n, "h": mesh.h,
        "normeq_V_lo": ne["V"][0], "normeq_V_hi": ne["V"][1],
        "normeq_Sigma_lo": ne["Sigma"][0], "normeq_Sigma_hi": ne["Sigma"][1],
        "normeq_sV_lo": ne["sV"][0], "normeq_sV_hi": ne["sV"][1],
        "inf_sup": float(sc.inf_sup_constants().min()),
        "poincare_V": poincare_v(cx),
        "poincare_Sigma": poincare_sigma(cx),
        "pk_grad": hybrid_poincare_korn(mesh, k, "grad", cx),
        "pk_symcurl": hybrid_poincare_korn(mesh, k, "symcurl", cx),
        "pk_symgrad": hybrid_poincare_korn(mesh, k, "symgrad", cx),
        "reduction_continuity": ne["reduction_V_continuity"],
        "extension_continuity": ne["extension_V_continuity"],
    }


def map_levels(fn, args_list, workers: int = 1) -> list:
    """Apply fn to each argument tuple, in order, optionally in worker processes."""
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args_list)))


def uniformity_study(family: str, k: int, levels=(16, 32, 64), theta_min: float = 0.1,
                     workers: int = 1) -> Report:
    """Discrete constants across uniform refinements of a fixed-shape family."""
    rows = map_levels(_uniformity_row, [(family, n, k, theta_min) for n in levels], workers)
    rep = Report("uniformity", {"family": family, "k": k, "levels": list(levels), "rows": rows})
    for key in rows[0]:
        if key in ("n", "h"):
            continue
        vals = [r[key] for r in rows]
        rep.add(f"uniform.{key}", "h-independent discrete constant", variation(vals), UNIFORMITY_TOL,
                kind="variation", values=vals)
    return rep


# ---------------------------------------------------------------------------
# DOF accounting


def local_dof_counts(mesh: Mesh, t: int, k: int, theta_min: float = 0.1) -> dict:
    cx_loc = FullComplex(_single_cell(mesh, t), k)
    sc = SerendipityComplex(cx_loc, theta_min)
    s = sc.local[0]
    full = s.full.nV + s.full.nS
    ser = s.nSV + s.nSS
    return {"eta": s.eta, "ell": s.ell, "full": full, "serendipity": ser, "gain": (full - ser) / full,
            "full_V": s.full.nV, "full_Sigma": s.full.nS, "serendipity_V": s.nSV, "serendipity_Sigma": s.nSS}


def _single_cell(mesh: Mesh, t: int) -> Mesh:
    from .mesh import build_mesh

    return build_mesh(mesh.cell_vertices(t), [list(range(len(mesh.cells[t])))])


def dof_report(k_values=(3, 4, 5), shapes=("triangle", "square", "hexagon"), theta_min: float = 0.1,
               families=None, family_n: int = 8) -> Report:
    rows = []
    for shape in shapes:
        mesh = shape_mesh(shape)
        for k in k_values:
            c = local_dof_counts(mesh, 0, k, theta_min)
            rows.append({"shape": shape, "k": k, **c})
    rep = Report("dof", {"theta_min": theta_min, "rows": rows})
    for r in rows:
        rep.add(f"gain.{r['shape']}.k{r['k']}", "serendipity gains between 13% and 27%", r["gain"],
                0.27, kind="ratio", passed=0.13 <= r["gain"] <= 0.27,
                line=format_dof_row(r))
    for fam in families or ():
        for k in k_values:
            mesh = family_mesh(fam, family_n)
            cx = FullComplex(mesh, k)
            sc = SerendipityComplex(cx, theta_min)
            full_local = sum(l.nV + l.nS for l in cx.local)
            ser_local = sum(s.nSV + s.nSS for s in sc.local)
            g_local = (full_local - ser_local) / full_local
            full_g = cx.dim_v + cx.dim_sigma
            ser_g = sc.dim_v + sc.dim_sigma
            rows.append({"family": fam, "k": k, "full_local": full_local, "serendipity_local": ser_local,
                         "gain_local": g_local, "full_global": full_g, "serendipity_global": ser_g,
                         "gain_global": (full_g - ser_g) / full_g})
            rep.add(f"family_gain.{fam}.k{k}", "serendipity gains between 13% and 27% (per-cell counts)",
                    g_local, 0.27, kind="ratio", passed=0.13 <= g_local <= 0.27)
    return rep


def format_dof_row(row: dict) -> str:
    return f"{row['full']} → {row['serendipity']}, {100 * row['gain']:.1f}%"


# ---------------------------------------------------------------------------
# consistency rates and the model plate problem


def manufactured_u():
    return (X * (1 - X) * Y * (1 - Y)) ** 2


def _dual_norm(g: np.ndarray, M: sp.spmatrix) -> float:
    return float(np.sqrt(max(g @ spla.spsolve(M.tocsc(), g), 0.0)))


def _sampled_sup(g: np.ndarray, M: sp.spmatrix, rng, draws: int) -> float:
    best = 0.0
    for _ in range(draws):
        v = rng.standard_normal(len(g))
        best = max(best, abs(g @ v) / np.sqrt(v @ (M @ v)))
    return best


def consistency_functionals(cx: FullComplex, sc: SerendipityComplex | None = None, u=None,
                            rng=None, draws: int = 0) -> dict:
    """Dual norms of the consistency and adjoint-consistency functionals."""
    u = manufactured_u() if u is None else u
    w = sympy.Matrix([sympy.diff(u, X), sympy.diff(u, Y)])
    H = sympy.hessian(u, (X, Y))
    W, HJ = jet(w), jet(H)
    q = scalar_fn(u)
    Pv = cx.potential_matrix_v()
    Ps = cx.potential_matrix_sigma()
    Iv = cx.interpolate_v(W)
    Is = cx.interpolate_sigma(HJ)
    pw = cx.project_broken(W.value, "vector")
    ph = cx.project_broken(HJ.value, "tensor")
    pq = cx.project_p(q)
    g_v = Pv.T @ pw - cx.mass_v @ Iv
    g_s = Ps.T @ ph - cx.mass_sigma @ Is
    g_dd = cx.dd.T @ pq - Ps.T @ ph
    out = {"h": cx.mesh.h, "E_V": _dual_norm(g_v, cx.mass_v), "E_Sigma": _dual_norm(g_s, cx.mass_sigma),
           "E_divdiv": _dual_norm(g_dd, cx.mass_sigma)}
    # sym curl adjoint: VROT HESS u = 0 so only the discrete product term remains
    g_sc = cx.ucsym.T @ (cx.mass_sigma @ Is)
    out["E_symcurl"] = _curl_dual_norm(cx, g_sc, cx.ucsym, cx.mass_sigma, cx.interpolate_v)
    if rng is not None and draws:
        out["E_V_sampled"] = _sampled_sup(g_v, cx.mass_v, rng, draws)
        out["E_Sigma_sampled"] = _sampled_sup(g_s, cx.mass_sigma, rng, draws)
    if sc is not None:
        Ev, Es = sc.extend_v, sc.extend_sigma
        sIv = Ev @ (sc.reduce_v @ Iv)
        sIs = Es @ (sc.reduce_sigma @ Is)
        out["sE_V"] = _dual_norm(Ev.T @ (Pv.T @ pw - cx.mass_v @ sIv), sc.mass_v)
        out["sE_Sigma"] = _dual_norm(Es.T @ (Ps.T @ ph - cx.mass_sigma @ sIs), sc.mass_sigma)
        out["sE_divdiv"] = _dual_norm(Es.T @ g_dd, sc.mass_sigma)
        g = sc.scsym.T @ (sc.mass_sigma @ (sc.reduce_sigma @ Is))
        out["sE_symcurl"] = _curl_dual_norm(cx, g, sc.scsym, sc.mass_sigma, sc.interpolate_v)
    return out


def _curl_dual_norm(cx, g, curl, mass, interp) -> float:
    """sup g.v / ||curl v||_Sigma, with the RT1 kernel removed by an augmented solve."""
    K = (curl.T @ mass @ curl).tocsc()
    Z = np.array([interp(jet(w)) for w in RT1_EXPRS]).T
    A = sp.bmat([[K, sp.csc_matrix(Z)], [sp.csc_matrix(Z.T), None]]).tocsc()
    x = spla.spsolve(A, np.concatenate([g, np.zeros(3)]))[: len(g)]
    return float(np.sqrt(max(g @ x, 0.0)))


def fit_slope(h, e) -> float:
    h, e = np.log(np.asarray(h, float)), np.log(np.asarray(e, float))
    return float(np.polyfit(h, e, 1)[0])


def _convergence_row(family: str, n: int, k: int, theta_min: float, seed: int, draws: int) -> dict:
    cx = FullComplex(family_mesh(family, n), k)
    sc = SerendipityComplex(cx, theta_min)
    return consistency_functionals(cx, sc, rng=np.random.default_rng([seed, n]), draws=draws)


def convergence_study(family: str = "square", k: int = 3, levels=(4, 8, 16, 32), theta_min: float = 0.1,
                      seed: int = 0, draws: int = 0, workers: int = 1) -> Report:
    rows = map_levels(_convergence_row, [(family, n, k, theta_min, seed, draws) for n in levels], workers)
    hs = [r["h"] for r in rows]
    rep = Report("convergence", {"family": family, "k": k, "levels": list(levels), "rows": rows, "seed": seed})
    targets = {"E_V": (k + 1, 0.2), "E_Sigma": (k, 0.2), "E_divdiv": (k, 0.3), "E_symcurl": (k, 0.3)}
    for name, (rate, tol) in targets.items():
        for prefix in ("", "s"):
            key = prefix + name
            vals = [r[key] for r in rows]
            slope = fit_slope(hs, vals)
            rep.add(f"rate.{key}", f"consistency rate h^{rate}", abs(slope - rate), tol, kind="rate",
                    slope=slope, values=vals, h=hs)
    return rep


def plate_solve(mesh: Mesh, k: int, u=None, serendipity: bool = False, theta_min: float = 0.1) -> dict:
    """Mixed clamped plate: find (sigma, u) with sigma = HESS u and DIVDIV sigma = f."""
    u = manufactured_u() if u is None else u
    f = scalar_fn(sympy.diff(u, X, 4) + 2 * sympy.diff(u, X, 2, Y, 2) + sympy.diff(u, Y, 4))
    cx = FullComplex(mesh, k)
    M, D = cx.mass_sigma, cx.dd
    E = None
    if serendipity:
        sc = SerendipityComplex(cx, theta_min)
        M, D, E = sc.mass_sigma, sc.sdd, sc.extend_sigma
    F = cx.project_p(f)
    A = sp.bmat([[M, -D.T], [D, None]]).tocsc()
    sol = spla.spsolve(A, np.concatenate([np.zeros(M.shape[0]), F]))
    sig, uh = sol[: M.shape[0]], sol[M.shape[0]:]
    sig_full = E @ sig if E is not None else sig
    Is = cx.interpolate_sigma(jet(sympy.hessian(u, (X, Y))))
    # distance to the L2 projection of u (superconvergent), not to u itself
    du = uh - cx.project_p(scalar_fn(u))
    ds = sig_full - Is
    return {"h": mesh.h, "dofs": int(A.shape[0]), "u_error": float(np.linalg.norm(du)),
            "sigma_error": float(np.sqrt(max(ds @ (cx.mass_sigma @ ds), 0.0)))}


def _plate_row(family: str, n: int, k: int, serendipity: bool, theta_min: float) -> dict:
    return plate_solve(family_mesh(family, n), k, serendipity=serendipity, theta_min=theta_min)


def plate_study(family: str = "square", k: int = 3, levels=(4, 8, 16), serendipity: bool = False,
                theta_min: float = 0.1, workers: int = 1) -> Report:
    rows = map_levels(_plate_row, [(family, n, k, serendipity, theta_min) for n in levels], workers)
    rep = Report("plate", {"family": family, "k": k, "levels": list(levels), "serendipity": serendipity,
                           "rows": rows})
    hs = [r["h"] for r in rows]
    for key in ("u_error", "sigma_error"):
        slope = fit_slope(hs, [r[key] for r in rows])
        rep.add(f"plate.{key}.slope", "observed convergence of the mixed plate solve", slope, 0.5,
                kind="rate_floor", passed=slope > 0.5, values=[r[key] for r in rows], h=hs)
    return rep


def check_mesh_regularity(mesh: Mesh, k: int, theta_min: float) -> dict:
    return regularity_report(mesh, k, theta_min)
