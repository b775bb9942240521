"""Full discrete spaces, interpolators and reconstructions of the div-div complex.

Local DOF layouts (per element, vertices and edges in the element's
counterclockwise order):

* V: per vertex ``[v1, v2, G11, G12, G21, G22]``; per edge the coefficients of
  ``v_E`` in the orthonormal basis of vP^{k-4}(E) (components interleaved);
  then ``v_T`` in the orthonormal basis of vP^{k-2}(T).
* Sigma: per vertex ``[t11, t12, t22]``; per edge ``tau_E`` in P^{k-3}(E)
  followed by ``D_E`` in P^{k-2}(E); then the Holy^{k-4}(T) and cHoly^{k-1}(T)
  coefficients.

Element and edge component bases are L2-orthonormal and hierarchical, so the
L2 norm of a component is the Euclidean norm of its coefficients.  Global
layouts put vertices first, then edges, then elements.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import Mesh
from .polycalc import (
    EdgeCalculus,
    EdgeGeometry,
    ElementCalculus,
    ElementGeometry,
    JetField,
    Polynomial,
    cmap_matrix,
    dim_poly,
    dim_poly_edge,
    divdiv,
    hess,
    subspace_basis,
    vdiv,
    vrot,
)

SYM_TO_FULL = np.array([[0, 1], [1, 2]])
SINGULAR_RTOL = 1e-12


def _check_degree(k: int) -> None:
    if k < 3:
        raise ValueError(f"the discrete div-div complex requires polynomial degree k >= 3 (got k={k})")


def _solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    lu, piv = sla.lu_factor(A)
    d = np.abs(np.diag(lu))
    if d.min() <= SINGULAR_RTOL * d.max():
        raise np.linalg.LinAlgError("local system is numerically singular")
    return sla.lu_solve((lu, piv), B)


def sym_to_matrix(t: np.ndarray) -> np.ndarray:
    """[t11, t12, t22] (last axis) to full 2x2 matrices."""
    return t[..., SYM_TO_FULL]


@dataclass
class LocalEdge:
    """Edge data seen from one element (coordinates relative to x_T).

    Element operators are shared between translated copies of a cell, so no
    global ids are stored here; use ``mesh.cell_edges`` for those.
    """

    omega: int  # omega_TE
    start: int  # local vertex index where the global tangent starts
    end: int
    calc: EdgeCalculus
    tangent: np.ndarray
    normal: np.ndarray
    points: np.ndarray
    weights: np.ndarray


class LocalDDR:
    """Local spaces and operators on one element, in coordinates centred at x_T."""

    def __init__(self, mesh: Mesh, t: int, k: int):
        _check_degree(k)
        self.k = k
        center = mesh.centers[t]
        self.vertices = mesh.cell_vertices(t) - center
        self.h = float(mesh.diameters[t])
        self.nv = len(self.vertices)
        self.geom = ElementGeometry(self.vertices, np.zeros(2), self.h)
        self.calc = ElementCalculus(self.geom, k + 1)
        cell = mesh.cells[t]
        self.edges: list[LocalEdge] = []
        for i, e in enumerate(mesh.cell_edges[t]):
            a, b = i, (i + 1) % self.nv
            if mesh.edges[e, 0] != cell[i]:
                a, b = b, a
            geom = EdgeGeometry(self.vertices[a], self.vertices[b])
            ecalc = EdgeCalculus(geom, k, 2 * k + 4)
            self.edges.append(
                LocalEdge(int(mesh.cell_orientations[t][i]), a, b, ecalc, geom.tangent, geom.normal,
                          ecalc.rule.points, ecalc.rule.weights)
            )
        # component sizes
        self.n_ve = 2 * dim_poly_edge(k - 4)
        self.n_vt = 2 * dim_poly(k - 2)
        self.n_te = dim_poly_edge(k - 3)
        self.n_de = dim_poly_edge(k - 2)
        self.n_se = self.n_te + self.n_de
        self.nV = 6 * self.nv + self.n_ve * self.nv + self.n_vt
        # bases
        c = self.calc
        self.vt_basis = c.vector_onb(k - 2)
        self.tp_basis = c.tensor_onb(k - 1)
        self.holy = subspace_basis("Holy", c, k - 4).members
        self.choly = subspace_basis("cHoly", c, k - 1).members
        self.n_h = len(self.holy)
        self.n_ch = len(self.choly)
        self.nS = 3 * self.nv + self.n_se * self.nv + self.n_h + self.n_ch
        self.ntp = len(self.tp_basis)

    # ------------------------------------------------------------------ layout
    def v_vertex(self, j: int) -> slice:
        return slice(6 * j, 6 * j + 6)

    def v_edge(self, i: int) -> slice:
        o = 6 * self.nv + i * self.n_ve
        return slice(o, o + self.n_ve)

    @property
    def v_cell(self) -> slice:
        return slice(self.nV - self.n_vt, self.nV)

    def s_vertex(self, j: int) -> slice:
        return slice(3 * j, 3 * j + 3)

    def s_edge(self, i: int) -> slice:
        o = 3 * self.nv + i * self.n_se
        return slice(o, o + self.n_se)

    @property
    def s_holy(self) -> slice:
        o = 3 * self.nv + self.n_se * self.nv
        return slice(o, o + self.n_h)

    @property
    def s_choly(self) -> slice:
        return slice(self.nS - self.n_ch, self.nS)

    @property
    def v_boundary_size(self) -> int:
        return self.nV - self.n_vt

    # --------------------------------------------------------------- helpers
    def _elem_values(self, family: np.ndarray, pts: np.ndarray) -> np.ndarray:
        return family @ self.calc.mono.values(pts).T

    @cached_property
    def _vertex_values(self) -> np.ndarray:
        return self.calc.mono.values(self.vertices)  # (nv, nm)

    def edge_de(self, family: np.ndarray, edge: LocalEdge) -> np.ndarray:
        """dE of a family of tensor polynomials, at the edge nodes: (n, nq)."""
        n, t = edge.normal, edge.tangent
        D1, D2 = self.calc.mono.derivative
        nt = np.einsum("iabp,a,b->ip", family, n, t)
        dt = nt @ (t[0] * D1 + t[1] * D2).T
        vd = np.einsum("iap,a->ip", vdiv(family, self.calc.mono), n)
        return self._elem_values(dt + vd, edge.points)

    # ---------------------------------------------------------- edge traces
    @cached_property
    def traces(self) -> list[np.ndarray]:
        """Per edge, map local V DOFs -> s-monomial coefficients (2, k+1, nV) of v_ET."""
        k = self.k
        out = []
        for i, ed in enumerate(self.edges):
            mono = ed.calc.mono
            pw = np.arange(k + 1)
            rows = [(-0.5) ** pw, 0.5 ** pw, (mono.derivative.T @ ((-0.5) ** pw)), mono.derivative.T @ (0.5 ** pw)]
            M = np.vstack(rows + [ed.calc.onb(k - 4) @ ed.calc.gram])
            Minv = np.linalg.inv(M)
            T = np.zeros((2, k + 1, self.nV))
            for comp in range(2):
                R = np.zeros((k + 1, self.nV))
                for r, vloc in enumerate((ed.start, ed.end)):
                    base = 6 * vloc
                    R[r, base + comp] = 1.0
                    R[2 + r, base + 2 + 2 * comp] = ed.tangent[0]
                    R[2 + r, base + 3 + 2 * comp] = ed.tangent[1]
                e_sl = self.v_edge(i)
                for j in range(k - 3):
                    R[4 + j, e_sl.start + 2 * j + comp] = 1.0
                T[comp] = Minv @ R
            out.append(T)
        return out

    def trace_values(self, i: int) -> np.ndarray:
        """Values of v_ET at the nodes of edge i: (2, nq, nV)."""
        ed = self.edges[i]
        Vs = ed.calc.mono.values(ed.points)
        return np.einsum("qs,csn->cqn", Vs, self.traces[i])

    def boundary_pairing(self, family: np.ndarray) -> np.ndarray:
        """Sum_E omega_TE int_E v_ET . (tau t_E) for tensor family tau: (n, nV)."""
        out = np.zeros((len(family), self.nV))
        for i, ed in enumerate(self.edges):
            tt = np.einsum("iabq,b->iaq", self._elem_values(family, ed.points), ed.tangent)
            out += ed.omega * np.einsum("iaq,q,aqn->in", tt, ed.weights, self.trace_values(i))
        return out

    # ------------------------------------------------------------- Csym, uCsym
    @cached_property
    def csym(self) -> np.ndarray:
        """Full symmetric curl: local V DOFs -> tP^{k-1} coefficients."""
        c = self.calc
        B = self.boundary_pairing(self.tp_basis)
        B[:, self.v_cell] -= c.inner(vrot(self.tp_basis, c.mono), self.vt_basis)
        return B

    def csym_field(self, x: np.ndarray) -> np.ndarray:
        return np.tensordot(self.csym @ x, self.tp_basis, axes=(0, 0))

    @cached_property
    def ucsym(self) -> np.ndarray:
        """Discrete symmetric curl: local V DOFs -> local Sigma DOFs."""
        k = self.k
        U = np.zeros((self.nS, self.nV))
        for j in range(self.nv):
            g = 6 * j + 2  # G11, G12, G21, G22
            s = 3 * j
            U[s + 0, g + 1] = 1.0
            U[s + 1, g + 3] = 0.5
            U[s + 1, g + 0] = -0.5
            U[s + 2, g + 2] = -1.0
        for i, ed in enumerate(self.edges):
            D = ed.calc.mono.derivative
            T = self.traces[i]
            dtn = np.einsum("c,st,ctn->sn", ed.normal, D, T)
            d2t = np.einsum("c,st,tu,cun->sn", ed.tangent, D, D, T)
            G = ed.calc.gram
            sl = self.s_edge(i)
            # with a right-handed (t, n) frame, (C GRAD v) n.n = -d_t v.n and
            # dE(C GRAD v) = -d_tt v.t, hence the minus signs
            U[sl.start:sl.start + self.n_te] = -ed.calc.onb(k - 3) @ G @ dtn
            U[sl.start + self.n_te:sl.stop] = -ed.calc.onb(k - 2) @ G @ d2t
        c = self.calc
        U[self.s_holy] = c.inner(self.holy, self.tp_basis) @ self.csym
        U[self.s_choly] = c.inner(self.choly, self.tp_basis) @ self.csym
        return U

    # ------------------------------------------------------------------ P_V
    @cached_property
    def pv_basis(self) -> np.ndarray:
        return self.calc.vector_onb(self.k)

    @cached_property
    def pv(self) -> np.ndarray:
        """Vector potential: local V DOFs -> vP^k coefficients."""
        c = self.calc
        tests = subspace_basis("cHoly", c, self.k + 1).members
        R = c.inner(vrot(tests, c.mono), self.pv_basis)
        rhs = -c.inner(tests, self.tp_basis) @ self.csym + self.boundary_pairing(tests)
        return _solve(R, rhs)

    def pv_field(self, x: np.ndarray) -> np.ndarray:
        return np.tensordot(self.pv @ x, self.pv_basis, axes=(0, 0))

    # --------------------------------------------------------------- DD, P_Sigma
    def _sigma_boundary_functional(self, q: np.ndarray, use_potential: bool) -> np.ndarray:
        """Boundary part of DD / P_Sigma tested with scalar family q: (n, nS).

        Returns -sum omega (int tau_E d_n q - int D q) - vertex terms when
        ``use_potential`` is False, and +sum omega (int P_SE d_n q - int D q)
        + vertex terms when True.
        """
        k = self.k
        c = self.calc
        D1, D2 = c.mono.derivative
        out = np.zeros((len(q), self.nS))
        sign = 1.0 if use_potential else -1.0
        for i, ed in enumerate(self.edges):
            n, t = ed.normal, ed.tangent
            dn = self._elem_values(q @ (n[0] * D1 + n[1] * D2).T, ed.points)  # (n, nq)
            qv = self._elem_values(q, ed.points)
            sl = self.s_edge(i)
            d_vals = ed.calc.onb_values(k - 2)  # (n_de, nq)
            blk = np.zeros((len(q), self.nS))
            if use_potential:
                pse_vals = ed.calc.mono.values(ed.points) @ self.pse[i]  # (nq, nS)
                blk += np.einsum("iq,q,qn->in", dn, ed.weights, pse_vals)
            else:
                te_vals = ed.calc.onb_values(k - 3)
                blk[:, sl.start:sl.start + self.n_te] += np.einsum("iq,q,jq->ij", dn, ed.weights, te_vals)
            blk[:, sl.start + self.n_te:sl.stop] -= np.einsum("iq,q,jq->ij", qv, ed.weights, d_vals)
            out += sign * ed.omega * blk
            ntv = np.array([n[0] * t[0], n[0] * t[1] + n[1] * t[0], n[1] * t[1]])
            for vloc, w_ev in ((ed.start, -1.0), (ed.end, 1.0)):
                qx = q @ self._vertex_values[vloc]
                out[:, self.s_vertex(vloc)] += sign * ed.omega * w_ev * np.outer(qx, ntv)
        return out

    @cached_property
    def pk2_basis(self) -> np.ndarray:
        return self.calc.scalar_onb(self.k - 2)

    @cached_property
    def dd(self) -> np.ndarray:
        """Discrete div-div: local Sigma DOFs -> P^{k-2} coefficients."""
        c = self.calc
        q = self.pk2_basis
        out = self._sigma_boundary_functional(q, use_potential=False)
        out[:, self.s_holy] += c.inner(hess(q, c.mono), self.holy)
        return out

    @cached_property
    def pse(self) -> list[np.ndarray]:
        """Per edge: local Sigma DOFs -> s-monomial coefficients (k, nS) of P_SigmaE."""
        k = self.k
        out = []
        for i, ed in enumerate(self.edges):
            pw = np.arange(k)
            M = np.vstack([(-0.5) ** pw, 0.5 ** pw, ed.calc.onb(k - 3)[:, :k] @ ed.calc.gram[:k, :k]])
            R = np.zeros((k, self.nS))
            n = ed.normal
            nn = np.array([n[0] ** 2, 2 * n[0] * n[1], n[1] ** 2])
            R[0, self.s_vertex(ed.start)] = nn
            R[1, self.s_vertex(ed.end)] = nn
            sl = self.s_edge(i)
            R[2:, sl.start:sl.start + self.n_te] = np.eye(self.n_te)
            P = np.zeros((k + 1, self.nS))
            P[:k] = np.linalg.solve(M, R)
            out.append(P)
        return out

    @cached_property
    def psigma(self) -> np.ndarray:
        """Tensor potential: local Sigma DOFs -> tP^{k-1} coefficients."""
        c = self.calc
        q = c.scalar_onb(self.k + 1)[3:]
        A = np.vstack([c.inner(hess(q, c.mono), self.tp_basis), c.inner(self.choly, self.tp_basis)])
        rhs_q = c.inner(q, self.pk2_basis) @ self.dd + self._sigma_boundary_functional(q, use_potential=True)
        rhs_u = np.zeros((self.n_ch, self.nS))
        rhs_u[:, self.s_choly] = np.eye(self.n_ch)
        return _solve(A, np.vstack([rhs_q, rhs_u]))

    def psigma_field(self, x: np.ndarray) -> np.ndarray:
        return np.tensordot(self.psigma @ x, self.tp_basis, axes=(0, 0))

    # -------------------------------------------------------- products and norms
    @cached_property
    def stab_v(self) -> np.ndarray:
        S = np.zeros((self.nV, self.nV))
        for i, ed in enumerate(self.edges):
            pvv = np.einsum("jcq,jn->cqn", self._elem_values(self.pv_basis, ed.points), self.pv)
            r = pvv - self.trace_values(i)
            S += self.h * np.einsum("cqn,q,cqm->nm", r, ed.weights, r)
        return S

    @cached_property
    def mass_v(self) -> np.ndarray:
        M = self.pv.T @ self.pv + self.stab_v
        return 0.5 * (M + M.T)

    @cached_property
    def stab_sigma(self) -> np.ndarray:
        k, h, c = self.k, self.h, self.calc
        P = self.psigma
        S = np.zeros((self.nS, self.nS))
        for i, ed in enumerate(self.edges):
            n = ed.normal
            phi_nn = np.einsum("jabq,a,b->jq", self._elem_values(self.tp_basis, ed.points), n, n)
            r = (ed.calc.mono.values(ed.points) @ self.pse[i]) - phi_nn.T @ P
            S += h * r.T @ (ed.weights[:, None] * r)
            sl = self.s_edge(i)
            dvals = np.zeros((len(ed.points), self.nS))
            dvals[:, sl.start + self.n_te:sl.stop] = ed.calc.onb_values(k - 2).T
            r = dvals - self.edge_de(self.tp_basis, ed).T @ P
            S += h ** 3 * r.T @ (ed.weights[:, None] * r)
        for j in range(self.nv):
            tv = np.zeros((2, 2, self.nS))
            sl = self.s_vertex(j)
            for a in range(2):
                for b in range(2):
                    tv[a, b, sl.start + SYM_TO_FULL[a, b]] = 1.0
            r = tv - np.einsum("jab,jn->abn", self.tp_basis @ self._vertex_values[j], P)
            S += h ** 2 * np.einsum("abn,abm->nm", r, r)
        for blk, basis in ((self.s_holy, self.holy), (self.s_choly, self.choly)):
            r = -c.inner(basis, self.tp_basis) @ P
            r[:, blk] += np.eye(len(basis))
            S += r.T @ r
        return S

    @cached_property
    def mass_sigma(self) -> np.ndarray:
        M = self.psigma.T @ self.psigma + self.stab_sigma
        return 0.5 * (M + M.T)

    @cached_property
    def norm_weights_v(self) -> np.ndarray:
        w = np.ones(self.nV)
        for j in range(self.nv):
            w[6 * j:6 * j + 2] = self.h ** 2
            w[6 * j + 2:6 * j + 6] = self.h ** 4
        for i in range(self.nv):
            w[self.v_edge(i)] = self.h
        return w

    @cached_property
    def norm_weights_sigma(self) -> np.ndarray:
        w = np.ones(self.nS)
        for j in range(self.nv):
            w[self.s_vertex(j)] = self.h ** 2 * np.array([1.0, 2.0, 1.0])
        for i in range(self.nv):
            sl = self.s_edge(i)
            w[sl.start:sl.start + self.n_te] = self.h
            w[sl.start + self.n_te:sl.stop] = self.h ** 3
        return w

    # ---------------------------------------------------------- interpolators
    def interpolate_v(self, w, shift: np.ndarray) -> np.ndarray:
        """Local interpolate of a vector jet field (callable value/grad)."""
        k = self.k
        x = np.zeros(self.nV)
        vals = np.asarray(w.value(self.vertices + shift), float).reshape(self.nv, 2)
        grads = np.asarray(w.grad(self.vertices + shift), float).reshape(self.nv, 2, 2)
        for j in range(self.nv):
            x[6 * j:6 * j + 2] = vals[j]
            x[6 * j + 2:6 * j + 6] = grads[j].ravel()
        for i, ed in enumerate(self.edges):
            if self.n_ve:
                f = np.asarray(w.value(ed.points + shift), float).reshape(-1, 2)
                coef = ed.calc.project_values(k - 4, f.T)  # (2, n)
                x[self.v_edge(i)] = coef.T.ravel()
        f = np.asarray(w.value(self.calc.rule.points + shift), float).reshape(-1, 2)
        x[self.v_cell] = self.calc.project(self.vt_basis, f)
        return x

    def interpolate_sigma(self, tau, shift: np.ndarray, sym_tol: float = 1e-12) -> np.ndarray:
        """Local interpolate of a symmetric tensor jet field."""
        k = self.k
        x = np.zeros(self.nS)
        vals = np.asarray(tau.value(self.vertices + shift), float).reshape(self.nv, 2, 2)
        scale = max(1.0, float(np.abs(vals).max()))
        if np.abs(vals[:, 0, 1] - vals[:, 1, 0]).max() > sym_tol * scale:
            raise ValueError("tensor field is not symmetric")
        for j in range(self.nv):
            x[3 * j:3 * j + 3] = [vals[j, 0, 0], 0.5 * (vals[j, 0, 1] + vals[j, 1, 0]), vals[j, 1, 1]]
        for i, ed in enumerate(self.edges):
            n, t = ed.normal, ed.tangent
            p = ed.points + shift
            tv = np.asarray(tau.value(p), float).reshape(-1, 2, 2)
            tg = np.asarray(tau.grad(p), float).reshape(-1, 2, 2, 2)
            nn = np.einsum("qab,a,b->q", tv, n, n)
            de = np.einsum("qabd,a,b,d->q", tg, n, t, t) + np.einsum("qabb,a->q", tg, n)
            sl = self.s_edge(i)
            x[sl.start:sl.start + self.n_te] = ed.calc.project_values(k - 3, nn)
            x[sl.start + self.n_te:sl.stop] = ed.calc.project_values(k - 2, de)
        f = np.asarray(tau.value(self.calc.rule.points + shift), float).reshape(-1, 2, 2)
        x[self.s_holy] = self.calc.project(self.holy, f)
        x[self.s_choly] = self.calc.project(self.choly, f)
        return x


def _element_key(mesh: Mesh, t: int, k: int) -> bytes:
    h = mesh.diameters[t]
    rel = np.round((mesh.cell_vertices(t) - mesh.centers[t]) / h, 10) + 0.0
    flags = np.array([mesh.edges[e, 0] == mesh.cells[t][i] for i, e in enumerate(mesh.cell_edges[t])])
    return rel.tobytes() + flags.tobytes() + np.round(np.array([h]), 12).tobytes() + bytes([k])


def assemble(mats, rows, cols, shape, single_valued: bool = False) -> sp.csr_matrix:
    """Scatter local dense blocks into a sparse matrix.

    With ``single_valued`` each global row is taken from the first block that
    touches it (rows of shared entities are identical across elements);
    otherwise contributions are summed.
    """
    owned = np.zeros(shape[0], dtype=bool)
    I, J, V = [], [], []
    for A, r, c in zip(mats, rows, cols):
        if single_valued:
            keep = ~owned[r]
            owned[r] = True
            A, r = A[keep], r[keep]
        I.append(np.repeat(r, len(c)))
        J.append(np.tile(c, len(r)))
        V.append(np.asarray(A).ravel())
    M = sp.csr_matrix((np.concatenate(V), (np.concatenate(I), np.concatenate(J))), shape=shape)
    M.eliminate_zeros()
    return M


class FullComplex:
    """Global full discrete complex V_h -> Sigma_h -> P^{k-2}(T_h) on a mesh."""

    def __init__(self, mesh: Mesh, k: int):
        _check_degree(k)
        self.mesh = mesh
        self.k = k
        cache: dict[bytes, LocalDDR] = {}
        self.local: list[LocalDDR] = []
        for t in range(mesh.n_cells):
            key = _element_key(mesh, t, k)
            if key not in cache:
                cache[key] = LocalDDR(mesh, t, k)
            self.local.append(cache[key])
        self.n_templates = len(cache)
        self.n_ve = 2 * dim_poly_edge(k - 4)
        self.n_vt = 2 * dim_poly(k - 2)
        self.n_se = dim_poly_edge(k - 3) + dim_poly_edge(k - 2)
        self.n_p = dim_poly(k - 2)
        nV, nE, nT = mesh.n_vertices, mesh.n_edges, mesh.n_cells
        self.v_edge_offset = 6 * nV
        self.v_cell_offset = self.v_edge_offset + self.n_ve * nE
        self.dim_v = self.v_cell_offset + self.n_vt * nT
        self.s_edge_offset = 3 * nV
        self.s_cell_offset = self.s_edge_offset + self.n_se * nE
        self.s_cell_size = [loc.n_h + loc.n_ch for loc in self.local]
        self.s_cell_start = self.s_cell_offset + np.concatenate([[0], np.cumsum(self.s_cell_size)[:-1]]).astype(int)
        self.dim_sigma = self.s_cell_offset + int(sum(self.s_cell_size))
        self.dim_p = self.n_p * nT

    # ------------------------------------------------------------ DOF maps
    def v_dofs(self, t: int) -> np.ndarray:
        loc = self.local[t]
        cell = self.mesh.cells[t]
        idx = [6 * v + np.arange(6) for v in cell]
        idx += [self.v_edge_offset + self.n_ve * e + np.arange(self.n_ve) for e in self.mesh.cell_edges[t]]
        idx.append(self.v_cell_offset + self.n_vt * t + np.arange(loc.n_vt))
        return np.concatenate(idx).astype(int)

    def sigma_dofs(self, t: int) -> np.ndarray:
        cell = self.mesh.cells[t]
        idx = [3 * v + np.arange(3) for v in cell]
        idx += [self.s_edge_offset + self.n_se * e + np.arange(self.n_se) for e in self.mesh.cell_edges[t]]
        idx.append(self.s_cell_start[t] + np.arange(self.s_cell_size[t]))
        return np.concatenate(idx).astype(int)

    def p_dofs(self, t: int) -> np.ndarray:
        return self.n_p * t + np.arange(self.n_p)

    # ------------------------------------------------------------ assembly
    def _assemble_blockdiag(self, attr: str, rows_fn, cols_fn, shape) -> sp.csr_matrix:
        n = self.mesh.n_cells
        return assemble([getattr(loc, attr) for loc in self.local], [rows_fn(t) for t in range(n)],
                        [cols_fn(t) for t in range(n)], shape)

    def _assemble_single_valued(self, attr: str, rows_fn, cols_fn, shape) -> sp.csr_matrix:
        n = self.mesh.n_cells
        return assemble([getattr(loc, attr) for loc in self.local], [rows_fn(t) for t in range(n)],
                        [cols_fn(t) for t in range(n)], shape, single_valued=True)

    @cached_property
    def ucsym(self) -> sp.csr_matrix:
        return self._assemble_single_valued("ucsym", self.sigma_dofs, self.v_dofs, (self.dim_sigma, self.dim_v))

    @cached_property
    def dd(self) -> sp.csr_matrix:
        return self._assemble_blockdiag("dd", self.p_dofs, self.sigma_dofs, (self.dim_p, self.dim_sigma))

    @cached_property
    def mass_v(self) -> sp.csr_matrix:
        return self._assemble_sum("mass_v", self.v_dofs, self.dim_v)

    @cached_property
    def mass_sigma(self) -> sp.csr_matrix:
        return self._assemble_sum("mass_sigma", self.sigma_dofs, self.dim_sigma)

    def _assemble_sum(self, attr: str, dofs_fn, n: int) -> sp.csr_matrix:
        d = [dofs_fn(t) for t in range(self.mesh.n_cells)]
        return assemble([getattr(loc, attr) for loc in self.local], d, d, (n, n))

    @cached_property
    def norm_weights_v(self) -> np.ndarray:
        w = np.zeros(self.dim_v)
        for t, loc in enumerate(self.local):
            np.add.at(w, self.v_dofs(t), loc.norm_weights_v)
        return w

    @cached_property
    def norm_weights_sigma(self) -> np.ndarray:
        w = np.zeros(self.dim_sigma)
        for t, loc in enumerate(self.local):
            np.add.at(w, self.sigma_dofs(t), loc.norm_weights_sigma)
        return w

    # --------------------------------------------------------- interpolation
    def interpolate_v(self, w) -> np.ndarray:
        x = np.zeros(self.dim_v)
        for t, loc in enumerate(self.local):
            x[self.v_dofs(t)] = loc.interpolate_v(w, self.mesh.centers[t])
        return x

    def interpolate_sigma(self, tau) -> np.ndarray:
        x = np.zeros(self.dim_sigma)
        for t, loc in enumerate(self.local):
            x[self.sigma_dofs(t)] = loc.interpolate_sigma(tau, self.mesh.centers[t])
        return x

    def project_p(self, q) -> np.ndarray:
        """L2 projection of a scalar field onto P^{k-2}(T_h)."""
        out = np.zeros(self.dim_p)
        for t, loc in enumerate(self.local):
            pts = loc.calc.rule.points + self.mesh.centers[t]
            out[self.p_dofs(t)] = loc.calc.project(loc.pk2_basis, np.asarray(q(pts), float))
        return out

    # --------------------------------------------------------- products
    def l2_product_v(self, w: np.ndarray, v: np.ndarray) -> float:
        return float(w @ (self.mass_v @ v))

    def l2_product_sigma(self, u: np.ndarray, t: np.ndarray) -> float:
        return float(u @ (self.mass_sigma @ t))

    def component_norm_v(self, v: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.norm_weights_v * v ** 2)))

    def component_norm_sigma(self, t: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.norm_weights_sigma * t ** 2)))

    # --------------------------------------------------------- element maps
    def element_pv(self, t: int, v: np.ndarray) -> Polynomial:
        loc = self.local[t]
        return Polynomial(loc.calc.mono, loc.pv_field(v[self.v_dofs(t)]), "vector")

    def element_psigma(self, t: int, s: np.ndarray) -> Polynomial:
        loc = self.local[t]
        return Polynomial(loc.calc.mono, loc.psigma_field(s[self.sigma_dofs(t)]), "tensor")

    def potential_matrix_v(self) -> sp.csr_matrix:
        """Global map V DOFs -> broken vP^k coefficients (orthonormal bases)."""
        nb = 2 * dim_poly(self.k)
        return self._assemble_blockdiag("pv", lambda t: nb * t + np.arange(nb), self.v_dofs,
                                        (nb * self.mesh.n_cells, self.dim_v))

    def potential_matrix_sigma(self) -> sp.csr_matrix:
        nb = 3 * dim_poly(self.k - 1)
        return self._assemble_blockdiag("psigma", lambda t: nb * t + np.arange(nb), self.sigma_dofs,
                                        (nb * self.mesh.n_cells, self.dim_sigma))

    def project_broken(self, f, kind: str) -> np.ndarray:
        """Coefficients of int f . phi over the broken potential bases (vector or tensor)."""
        blocks = []
        for t, loc in enumerate(self.local):
            basis = loc.pv_basis if kind == "vector" else loc.tp_basis
            pts = loc.calc.rule.points + self.mesh.centers[t]
            blocks.append(loc.calc.project(basis, np.asarray(f(pts), float)))
        return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# thin functional API over the local objects


def interpolate_V(mesh: Mesh, k: int, w: JetField, complex_: FullComplex | None = None,
                  validate: bool = True) -> np.ndarray:
    """Global interpolate of a vector field with value/gradient jets."""
    cx = complex_ or FullComplex(mesh, k)
    if validate and isinstance(w, JetField) and not w.check_jets(mesh.centers[:3]):
        raise ValueError("jet mismatch: gradients disagree with finite differences of the values")
    return cx.interpolate_v(w)


def interpolate_Sigma(mesh: Mesh, k: int, tau: JetField, complex_: FullComplex | None = None,
                      validate: bool = True) -> np.ndarray:
    """Global interpolate of a symmetric tensor field with value/gradient jets."""
    cx = complex_ or FullComplex(mesh, k)
    if validate and isinstance(tau, JetField) and not tau.check_jets(mesh.centers[:3]):
        raise ValueError("jet mismatch: gradients disagree with finite differences of the values")
    return cx.interpolate_sigma(tau)


def boundary_trace(loc: LocalDDR, v_local: np.ndarray) -> list[np.ndarray]:
    """Per edge, s-monomial coefficients (2, k+1) of the boundary trace."""
    return [T @ v_local for T in loc.traces]


def full_sym_curl(loc: LocalDDR, v_local: np.ndarray) -> Polynomial:
    return Polynomial(loc.calc.mono, loc.csym_field(v_local), "tensor")


def discrete_sym_curl(obj, v: np.ndarray) -> np.ndarray:
    return obj.ucsym @ v


def vector_potential(loc: LocalDDR, v_local: np.ndarray) -> Polynomial:
    return Polynomial(loc.calc.mono, loc.pv_field(v_local), "vector")


def edge_tensor_potential(loc: LocalDDR, i: int, s_local: np.ndarray) -> np.ndarray:
    """s-monomial coefficients of P_SigmaE on local edge i."""
    return loc.pse[i] @ s_local


def divdiv_op(obj, s: np.ndarray) -> np.ndarray:
    """P^{k-2} coefficients (orthonormal basis) of the discrete div-div."""
    return obj.dd @ s


def tensor_potential(loc: LocalDDR, s_local: np.ndarray) -> Polynomial:
    return Polynomial(loc.calc.mono, loc.psigma_field(s_local), "tensor")


def l2_product_V(obj, w: np.ndarray, v: np.ndarray) -> float:
    return float(w @ (obj.mass_v @ v))


def l2_product_Sigma(obj, u: np.ndarray, t: np.ndarray) -> float:
    return float(u @ (obj.mass_sigma @ t))


def component_norms(obj, x: np.ndarray, space: str) -> float:
    w = obj.norm_weights_v if space == "V" else obj.norm_weights_sigma
    return float(np.sqrt(np.sum(w * x ** 2)))


def export_triplets(A, path) -> None:
    """Write a sparse/dense matrix as 'row col value' lines."""
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def dofs_to_dict(cx: FullComplex, x: np.ndarray, space: str) -> dict:
    """Flat layout of a global DOF vector keyed by entity ids."""
    m = cx.mesh
    if space == "V":
        return {
            "vertices": {str(v): x[6 * v:6 * v + 6].tolist() for v in range(m.n_vertices)},
            "edges": {str(e): x[cx.v_edge_offset + cx.n_ve * e:cx.v_edge_offset + cx.n_ve * (e + 1)].tolist()
                      for e in range(m.n_edges)},
            "cells": {str(t): x[cx.v_cell_offset + cx.n_vt * t:cx.v_cell_offset + cx.n_vt * (t + 1)].tolist()
                      for t in range(m.n_cells)},
        }
    return {
        "vertices": {str(v): x[3 * v:3 * v + 3].tolist() for v in range(m.n_vertices)},
        "edges": {str(e): x[cx.s_edge_offset + cx.n_se * e:cx.s_edge_offset + cx.n_se * (e + 1)].tolist()
                  for e in range(m.n_edges)},
        "cells": {str(t): x[cx.s_cell_start[t]:cx.s_cell_start[t] + cx.s_cell_size[t]].tolist()
                  for t in range(m.n_cells)},
    }
