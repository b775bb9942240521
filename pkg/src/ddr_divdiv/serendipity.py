"""Serendipity reduction of the element components.

Reduced local layouts are the full ones with the element blocks truncated:
``v_T`` keeps the first 2 dim P^ell coefficients of its hierarchical basis and
the cHoly block keeps the first dim cHoly^{ell+1} = 2 dim P^ell coefficients.
Truncating hierarchical orthonormal coefficients is the L2 projection, so the
reductions are transposes of the injections.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .ddr_full import FullComplex, LocalDDR, _solve, assemble
from .mesh import SerendipitySelection, select_serendipity_edges
from .polycalc import dim_poly, divdiv, hess, vrot

INF_SUP_MIN = 1e-10


class SerendipityError(RuntimeError):
    pass


class LocalSerendipity:
    """Serendipity problem, operators, reductions and extensions on one element."""

    def __init__(self, loc: LocalDDR, selection: SerendipitySelection):
        self.full = loc
        self.selection = selection
        self.eta = selection.eta
        self.ell = loc.k - selection.eta
        self.n_red = 2 * dim_poly(self.ell) if self.ell >= 0 else 0
        self.n_lam = self.n_red
        self.nSV = loc.nV - loc.n_vt + self.n_red
        self.nSS = loc.nS - loc.n_ch + self.n_lam
        self.lam_basis = loc.choly[: self.n_lam]
        J = np.zeros((loc.nV, self.nSV))
        J[: loc.v_boundary_size, : loc.v_boundary_size] = np.eye(loc.v_boundary_size)
        J[loc.v_cell.start: loc.v_cell.start + self.n_red, loc.v_boundary_size:] = np.eye(self.n_red)
        self.inject_v = J
        keep = loc.nS - loc.n_ch
        J = np.zeros((loc.nS, self.nSS))
        J[:keep, :keep] = np.eye(keep)
        J[keep: keep + self.n_lam, keep:] = np.eye(self.n_lam)
        self.inject_sigma = J

    # ------------------------------------------------------------- reductions
    @property
    def reduce_v(self) -> np.ndarray:
        return self.inject_v.T

    @property
    def reduce_sigma(self) -> np.ndarray:
        return self.inject_sigma.T

    # ------------------------------------------------------------ saddle form
    @cached_property
    def _divdiv_tp(self) -> np.ndarray:
        return divdiv(self.full.tp_basis, self.full.calc.mono)

    @cached_property
    def boundary_form(self) -> np.ndarray:
        """Boundary terms of L_Sigma as a map local Sigma DOFs -> tP^{k-1} tests."""
        loc = self.full
        h, k = loc.h, loc.k
        out = np.zeros((loc.ntp, loc.nS))
        for i, ed in enumerate(loc.edges):
            sl = loc.s_edge(i)
            n = ed.normal
            phi = loc._elem_values(loc.tp_basis, ed.points)
            nn = np.einsum("jabq,a,b->jq", phi, n, n)
            te = ed.calc.onb_values(k - 3)
            out[:, sl.start: sl.start + loc.n_te] += h * np.einsum("jq,q,lq->jl", nn, ed.weights, te)
            de = loc.edge_de(loc.tp_basis, ed)
            dv = ed.calc.onb_values(k - 2)
            out[:, sl.start + loc.n_te: sl.stop] += h ** 3 * np.einsum("jq,q,lq->jl", de, ed.weights, dv)
        for j in range(loc.nv):
            phi = loc.tp_basis @ loc._vertex_values[j]  # (ntp, 2, 2)
            sym = np.stack([phi[:, 0, 0], phi[:, 0, 1] + phi[:, 1, 0], phi[:, 1, 1]], axis=1)
            out[:, loc.s_vertex(j)] += h ** 2 * sym
        return out

    @cached_property
    def _edge_nn_moments(self) -> list[np.ndarray]:
        loc = self.full
        out = []
        for ed in loc.edges:
            phi = loc._elem_values(loc.tp_basis, ed.points)
            nn = np.einsum("jabq,a,b->jq", phi, ed.normal, ed.normal)
            out.append(np.einsum("jq,q,lq->lj", nn, ed.weights, ed.calc.onb_values(loc.k - 3)))
        return out

    @cached_property
    def a11(self) -> np.ndarray:
        loc = self.full
        h = loc.h
        A = h ** 4 * loc.calc.inner(self._divdiv_tp, self._divdiv_tp)
        for i, ed in enumerate(loc.edges):
            P = self._edge_nn_moments[i]
            A += h * P.T @ P
            de = loc.edge_de(loc.tp_basis, ed)
            A += h ** 3 * (de * ed.weights) @ de.T
        for j in range(loc.nv):
            phi = (loc.tp_basis @ loc._vertex_values[j]).reshape(loc.ntp, 4)
            A += h ** 2 * phi @ phi.T
        return 0.5 * (A + A.T)

    @cached_property
    def coupling(self) -> np.ndarray:
        return self.full.calc.inner(self.lam_basis, self.full.tp_basis)

    @cached_property
    def system(self) -> np.ndarray:
        B = self.coupling
        n = self.full.ntp
        A = np.zeros((n + self.n_lam, n + self.n_lam))
        A[:n, :n] = self.a11
        A[:n, n:] = -B.T
        A[n:, :n] = B
        return A

    @cached_property
    def inf_sup(self) -> float:
        return float(sla.svdvals(self.system).min())

    @cached_property
    def _factor(self):
        if self.inf_sup < INF_SUP_MIN:
            raise SerendipityError(f"serendipity system degenerate (inf-sup {self.inf_sup:.2e})")
        return sla.lu_factor(self.system)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self._factor, rhs)

    def form_value(self, trial: tuple, test: tuple) -> float:
        """A_T((upsilon, nu), (tau, mu)) from basis coefficient vectors."""
        x = np.concatenate(trial)
        y = np.concatenate(test)
        return float(y @ self.system @ x)

    # -------------------------------------------------------- right-hand sides
    @cached_property
    def rhs_v(self) -> np.ndarray:
        """L_V as a map full local V DOFs -> (tau, mu) tests (only reduced data enter)."""
        loc = self.full
        top = self.boundary_form @ loc.ucsym
        bottom = loc.boundary_pairing(self.lam_basis)
        bottom[:, loc.v_cell] -= loc.calc.inner(vrot(self.lam_basis, loc.calc.mono), loc.vt_basis)
        return np.vstack([top, bottom]) @ self.inject_v

    def _mu_rows_sigma(self) -> np.ndarray:
        loc = self.full
        out = np.zeros((self.n_lam, loc.nS))
        out[:, loc.s_choly.start: loc.s_choly.start + self.n_lam] = np.eye(self.n_lam)
        return out

    @cached_property
    def rhs_sigma(self) -> np.ndarray:
        """L_Sigma through the discrete div-div of the injected DOFs."""
        loc = self.full
        top = loc.h ** 4 * loc.calc.inner(self._divdiv_tp, loc.pk2_basis) @ loc.dd + self.boundary_form
        return np.vstack([top, self._mu_rows_sigma()]) @ self.inject_sigma

    @cached_property
    def rhs_sigma_direct(self) -> np.ndarray:
        """L_Sigma written with element/edge/vertex terms tested by HESS DIVDIV tau."""
        loc = self.full
        q = self._divdiv_tp
        inner = loc._sigma_boundary_functional(q, use_potential=False)
        inner[:, loc.s_holy] += loc.calc.inner(hess(q, loc.calc.mono), loc.holy)
        top = loc.h ** 4 * inner + self.boundary_form
        return np.vstack([top, self._mu_rows_sigma()]) @ self.inject_sigma

    # ------------------------------------------------------ serendipity maps
    @cached_property
    def sv(self) -> np.ndarray:
        """S_V: reduced V DOFs -> tP^{k-1} coefficients."""
        return self.solve(self.rhs_v)[: self.full.ntp]

    @cached_property
    def ssigma(self) -> np.ndarray:
        return self.solve(self.rhs_sigma)[: self.full.ntp]

    @cached_property
    def ssigma_direct(self) -> np.ndarray:
        return self.solve(self.rhs_sigma_direct)[: self.full.ntp]

    @cached_property
    def ep(self) -> np.ndarray:
        """E_P: reduced V DOFs -> vP^{k-2} coefficients."""
        loc = self.full
        c = loc.calc
        R = c.inner(vrot(loc.choly, c.mono), loc.vt_basis)
        rhs = -c.inner(loc.choly, loc.tp_basis) @ self.sv + loc.boundary_pairing(loc.choly) @ self.inject_v
        return _solve(R, rhs)

    @cached_property
    def extend_v(self) -> np.ndarray:
        E = self.inject_v.copy()
        E[self.full.v_cell] = self.ep
        return E

    @cached_property
    def extend_sigma(self) -> np.ndarray:
        loc = self.full
        E = self.inject_sigma.copy()
        E[loc.s_choly] = loc.calc.inner(loc.choly, loc.tp_basis) @ self.ssigma
        return E

    @cached_property
    def scsym(self) -> np.ndarray:
        return self.reduce_sigma @ self.full.ucsym @ self.extend_v

    @cached_property
    def sdd(self) -> np.ndarray:
        return self.full.dd @ self.extend_sigma

    @cached_property
    def mass_v(self) -> np.ndarray:
        E = self.extend_v
        return E.T @ self.full.mass_v @ E

    @cached_property
    def mass_sigma(self) -> np.ndarray:
        E = self.extend_sigma
        return E.T @ self.full.mass_sigma @ E

    @cached_property
    def norm_weights_v(self) -> np.ndarray:
        return self.reduce_v @ self.full.norm_weights_v

    @cached_property
    def norm_weights_sigma(self) -> np.ndarray:
        return self.reduce_sigma @ self.full.norm_weights_sigma


class SerendipityComplex:
    """Global serendipity complex built on top of a full complex."""

    def __init__(self, full: FullComplex, theta_min: float = 0.1):
        self.full = full
        self.mesh = full.mesh
        self.k = full.k
        self.theta_min = theta_min
        cache: dict[tuple, LocalSerendipity] = {}
        self.selections = []
        self.local: list[LocalSerendipity] = []
        for t, loc in enumerate(full.local):
            sel = select_serendipity_edges(self.mesh, t, theta_min, self.k)
            self.selections.append(sel)
            key = (id(loc), sel.eta)
            if key not in cache:
                cache[key] = LocalSerendipity(loc, sel)
            self.local.append(cache[key])
        nT = self.mesh.n_cells
        self.v_cell_size = np.array([s.n_red for s in self.local], dtype=int)
        self.v_cell_start = full.v_cell_offset + np.concatenate([[0], np.cumsum(self.v_cell_size)[:-1]]).astype(int)
        self.dim_v = full.v_cell_offset + int(self.v_cell_size.sum())
        self.s_cell_size = np.array([loc.n_h + s.n_lam for loc, s in zip(full.local, self.local)], dtype=int)
        self.s_cell_start = full.s_cell_offset + np.concatenate([[0], np.cumsum(self.s_cell_size)[:-1]]).astype(int)
        self.dim_sigma = full.s_cell_offset + int(self.s_cell_size.sum())
        self.dim_p = full.dim_p
        self._cells = range(nT)

    def v_dofs(self, t: int) -> np.ndarray:
        fd = self.full.v_dofs(t)
        loc = self.full.local[t]
        return np.concatenate([fd[: loc.v_boundary_size], self.v_cell_start[t] + np.arange(self.v_cell_size[t])])

    def sigma_dofs(self, t: int) -> np.ndarray:
        fd = self.full.sigma_dofs(t)
        loc = self.full.local[t]
        keep = loc.nS - loc.n_ch - loc.n_h
        return np.concatenate([fd[:keep], self.s_cell_start[t] + np.arange(self.s_cell_size[t])])

    def _assemble(self, attr, rows_fn, cols_fn, shape, single_valued):
        return assemble([getattr(s, attr) for s in self.local], [rows_fn(t) for t in self._cells],
                        [cols_fn(t) for t in self._cells], shape, single_valued)

    @cached_property
    def reduce_v(self) -> sp.csr_matrix:
        return self._assemble("reduce_v", self.v_dofs, self.full.v_dofs, (self.dim_v, self.full.dim_v), True)

    @cached_property
    def reduce_sigma(self) -> sp.csr_matrix:
        return self._assemble("reduce_sigma", self.sigma_dofs, self.full.sigma_dofs,
                              (self.dim_sigma, self.full.dim_sigma), True)

    @cached_property
    def extend_v(self) -> sp.csr_matrix:
        return self._assemble("extend_v", self.full.v_dofs, self.v_dofs, (self.full.dim_v, self.dim_v), True)

    @cached_property
    def extend_sigma(self) -> sp.csr_matrix:
        return self._assemble("extend_sigma", self.full.sigma_dofs, self.sigma_dofs,
                              (self.full.dim_sigma, self.dim_sigma), True)

    @cached_property
    def scsym(self) -> sp.csr_matrix:
        return (self.reduce_sigma @ self.full.ucsym @ self.extend_v).tocsr()

    @cached_property
    def sdd(self) -> sp.csr_matrix:
        return (self.full.dd @ self.extend_sigma).tocsr()

    @cached_property
    def mass_v(self) -> sp.csr_matrix:
        return (self.extend_v.T @ self.full.mass_v @ self.extend_v).tocsr()

    @cached_property
    def mass_sigma(self) -> sp.csr_matrix:
        return (self.extend_sigma.T @ self.full.mass_sigma @ self.extend_sigma).tocsr()

    @cached_property
    def norm_weights_v(self) -> np.ndarray:
        return self.reduce_v @ self.full.norm_weights_v

    @cached_property
    def norm_weights_sigma(self) -> np.ndarray:
        return self.reduce_sigma @ self.full.norm_weights_sigma

    def interpolate_v(self, w) -> np.ndarray:
        return self.reduce_v @ self.full.interpolate_v(w)

    def interpolate_sigma(self, tau) -> np.ndarray:
        return self.reduce_sigma @ self.full.interpolate_sigma(tau)

    def inf_sup_constants(self) -> np.ndarray:
        return np.array([s.inf_sup for s in self.local])

    def dof_counts(self) -> dict:
        return {"full_V": self.full.dim_v, "full_Sigma": self.full.dim_sigma,
                "serendipity_V": self.dim_v, "serendipity_Sigma": self.dim_sigma}
