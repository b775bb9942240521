"""Polynomial calculus on polygonal elements and edges.

Polynomials are coefficient arrays over scaled monomials.  On an element the
monomials are ``xi1**a * xi2**b`` with ``xi = 2 (x - x_T) / h_T`` (the half
diameter keeps the Gram matrices well conditioned); on an edge they
are ``s**a`` with ``s = (x - x_E) . t_E / h_E``.  A field with codomain shape
``S`` is stored as an array of shape ``S + (n_monomials,)`` and a family of
fields as ``(n,) + S + (n_monomials,)``.  Differentiation acts on the last axis
through exact derivative matrices, so the calculus is exact up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.special import roots_jacobi, roots_legendre

from .mesh import MeshError, ear_clip

SHAPES = {"scalar": (), "vector": (2,), "tensor": (2, 2)}


def dim_poly(m: int) -> int:
    """Dimension of P^m on a 2D domain (0 for m < 0)."""
    return (m + 1) * (m + 2) // 2 if m >= 0 else 0


def dim_poly_edge(m: int) -> int:
    return m + 1 if m >= 0 else 0


def monomial_powers(m: int) -> np.ndarray:
    """Exponent pairs of the 2D monomials of degree <= m, ordered by degree."""
    out = [(d - j, j) for d in range(m + 1) for j in range(d + 1)]
    return np.array(out, dtype=int).reshape(-1, 2)


# ----------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate values sampled at the nodes (node axis first)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _n_points(degree: int) -> int:
    return max(1, (degree + 2) // 2)


def gauss_segment(a, b, degree: int) -> QuadRule:
    """Gauss-Legendre rule on the segment [a, b] (points in the plane)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    x, w = roots_legendre(_n_points(degree))
    s = 0.5 * (x + 1.0)
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    return QuadRule(pts, 0.5 * w * np.linalg.norm(b - a), degree)


def triangle_rule(verts: np.ndarray, degree: int) -> QuadRule:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule on a triangle."""
    n = _n_points(degree)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    u = 0.5 * (xj + 1.0)
    wu = wj / 4.0
    v = 0.5 * (xl + 1.0)
    wv = wl / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    a = U.ravel()
    b = (V * (1.0 - U)).ravel()
    A, B, C = verts
    jac = (B[0] - A[0]) * (C[1] - A[1]) - (B[1] - A[1]) * (C[0] - A[0])
    if jac <= 0:
        raise MeshError("degenerate or inverted sub-triangle in quadrature")
    pts = A[None, :] + a[:, None] * (B - A)[None, :] + b[:, None] * (C - A)[None, :]
    return QuadRule(pts, W.ravel() * jac, degree)


def polygon_rule(verts: np.ndarray, center: np.ndarray, degree: int) -> QuadRule:
    """Fan triangulation from ``center`` (ear clipping if the fan folds)."""
    n = len(verts)
    fan = [(center, verts[i], verts[(i + 1) % n]) for i in range(n)]
    areas = [(b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0] for a, b, c in fan]
    scale = np.max(np.ptp(verts, axis=0)) ** 2
    if min(areas) > 1e-12 * scale:
        tris = fan
    else:
        tris = [(verts[i], verts[j], verts[m]) for i, j, m in ear_clip(verts)]
    rules = [triangle_rule(np.array(t), degree) for t in tris]
    return QuadRule(
        np.concatenate([r.points for r in rules]), np.concatenate([r.weights for r in rules]), degree
    )


def quadrature_rule(domain, exactness: int) -> QuadRule:
    """Quadrature rule on an element or edge geometry object."""
    if exactness < 0:
        raise ValueError("exactness must be non-negative")
    if isinstance(domain, EdgeGeometry):
        return gauss_segment(domain.start, domain.end, exactness)
    return polygon_rule(domain.vertices, domain.center, exactness)


# ----------------------------------------------------------------------------
# geometry holders


@dataclass(frozen=True)
class ElementGeometry:
    vertices: np.ndarray
    center: np.ndarray
    diameter: float


@dataclass(frozen=True)
class EdgeGeometry:
    start: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def tangent(self) -> np.ndarray:
        return (self.end - self.start) / self.length

    @property
    def normal(self) -> np.ndarray:
        t = self.tangent
        return np.array([-t[1], t[0]])

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)


# ----------------------------------------------------------------------------
# scaled monomials


class ElementMonomials:
    """Scaled monomials of degree <= ``degree`` centred at an element point."""

    def __init__(self, center, scale: float, degree: int):
        self.center = np.asarray(center, dtype=float)
        self.scale = float(scale)
        self.degree = degree
        self.powers = monomial_powers(degree)
        self.size = len(self.powers)
        self._index = {tuple(p): i for i, p in enumerate(self.powers)}
        self.degrees = self.powers.sum(axis=1)

    def index(self, a: int, b: int) -> int:
        return self._index[(a, b)]

    def values(self, pts: np.ndarray) -> np.ndarray:
        xi = (np.atleast_2d(pts) - self.center) / self.scale
        return xi[:, None, 0] ** self.powers[None, :, 0] * xi[:, None, 1] ** self.powers[None, :, 1]

    @cached_property
    def derivative(self) -> tuple[np.ndarray, np.ndarray]:
        """Matrices D_i with coeffs(d p / d x_i) = D_i @ coeffs(p)."""
        mats = []
        for axis in range(2):
            D = np.zeros((self.size, self.size))
            for j, (a, b) in enumerate(self.powers):
                e = (a, b)[axis]
                if e == 0:
                    continue
                target = (a - 1, b) if axis == 0 else (a, b - 1)
                D[self._index[target], j] = e / self.scale
            mats.append(D)
        return tuple(mats)

    @cached_property
    def multiply(self) -> tuple[np.ndarray, np.ndarray]:
        """Matrices X_i with coeffs(xi_i p) = X_i @ coeffs(p), truncating the top degree."""
        mats = []
        for axis in range(2):
            X = np.zeros((self.size, self.size))
            for j, (a, b) in enumerate(self.powers):
                target = (a + 1, b) if axis == 0 else (a, b + 1)
                if target in self._index:
                    X[self._index[target], j] = 1.0
            mats.append(X)
        return tuple(mats)


class EdgeMonomials:
    """Scaled monomials in the edge coordinate s = (x - x_E).t_E / h_E."""

    def __init__(self, geom: EdgeGeometry, degree: int):
        self.geom = geom
        self.degree = degree
        self.size = degree + 1
        self.center = geom.midpoint
        self.tangent = geom.tangent
        self.scale = geom.length

    def coordinate(self, pts: np.ndarray) -> np.ndarray:
        return ((np.atleast_2d(pts) - self.center) @ self.tangent) / self.scale

    def values(self, pts: np.ndarray) -> np.ndarray:
        s = self.coordinate(pts)
        return s[:, None] ** np.arange(self.size)[None, :]

    @cached_property
    def derivative(self) -> np.ndarray:
        """Tangential derivative matrix (physical units)."""
        D = np.zeros((self.size, self.size))
        for a in range(1, self.size):
            D[a - 1, a] = a / self.scale
        return D


# ----------------------------------------------------------------------------
# coefficient-level differential operators


def _d(coeffs: np.ndarray, D: np.ndarray) -> np.ndarray:
    return coeffs @ D.T


def grad(c, mono):
    D1, D2 = mono.derivative
    return np.stack([_d(c, D1), _d(c, D2)], axis=-2)


def curl(c, mono):
    D1, D2 = mono.derivative
    return np.stack([_d(c, D2), -_d(c, D1)], axis=-2)


def hess(c, mono):
    D1, D2 = mono.derivative
    c1, c2 = _d(c, D1), _d(c, D2)
    return np.stack(
        [np.stack([_d(c1, D1), _d(c1, D2)], axis=-2), np.stack([_d(c2, D1), _d(c2, D2)], axis=-2)], axis=-3
    )


def div(c, mono):
    D1, D2 = mono.derivative
    return _d(c[..., 0, :], D1) + _d(c[..., 1, :], D2)


def rot(c, mono):
    D1, D2 = mono.derivative
    return _d(c[..., 0, :], D2) - _d(c[..., 1, :], D1)


def vgrad(c, mono):
    D1, D2 = mono.derivative
    return np.stack([np.stack([_d(c[..., i, :], D1), _d(c[..., i, :], D2)], axis=-2) for i in range(2)], axis=-3)


def vdiv(c, mono):
    D1, D2 = mono.derivative
    return np.stack([_d(c[..., i, 0, :], D1) + _d(c[..., i, 1, :], D2) for i in range(2)], axis=-2)


def vrot(c, mono):
    D1, D2 = mono.derivative
    return np.stack([_d(c[..., i, 0, :], D2) - _d(c[..., i, 1, :], D1) for i in range(2)], axis=-2)


def cmap(c, mono=None):
    """The fourth-order tensor C acting on 2x2 fields (coefficients or values)."""
    off = 0.5 * (c[..., 1, 1, :] - c[..., 0, 0, :]) if c.ndim >= 3 else None
    if off is None:
        raise ValueError("Cmap expects a 2x2 tensor field")
    return np.stack(
        [np.stack([c[..., 0, 1, :], off], axis=-2), np.stack([off, -c[..., 1, 0, :]], axis=-2)], axis=-3
    )


def cmap_matrix(G: np.ndarray) -> np.ndarray:
    """C applied to plain 2x2 matrices (last two axes)."""
    off = 0.5 * (G[..., 1, 1] - G[..., 0, 0])
    return np.stack([np.stack([G[..., 0, 1], off], -1), np.stack([off, -G[..., 1, 0]], -1)], -2)


def symcurl(c, mono):
    return cmap(vgrad(c, mono))


def divdiv(c, mono):
    return div(vdiv(c, mono), mono)


def sym(c):
    return 0.5 * (c + np.swapaxes(c, -2, -3))


DIFF_OPS = {
    "CURL": ("scalar", "vector", curl),
    "GRAD": ("vector", "tensor", vgrad),
    "ROT": ("vector", "scalar", rot),
    "DIV": ("vector", "scalar", div),
    "SYMCURL": ("vector", "tensor", symcurl),
    "VDIV": ("tensor", "vector", vdiv),
    "VROT": ("tensor", "vector", vrot),
    "HESS": ("scalar", "tensor", hess),
    "Cmap": ("tensor", "tensor", cmap),
    "DIVDIV": ("tensor", "scalar", divdiv),
    "grad": ("scalar", "vector", grad),
}
ORDERS = {"CURL": 1, "GRAD": 1, "ROT": 1, "DIV": 1, "SYMCURL": 1, "VDIV": 1, "VROT": 1, "HESS": 2, "Cmap": 0,
          "DIVDIV": 2, "grad": 1}


# ----------------------------------------------------------------------------
# polynomial objects


@dataclass
class Polynomial:
    """Polynomial field on an element, in the element's scaled monomials."""

    mono: ElementMonomials
    coeffs: np.ndarray
    codomain: str = "scalar"

    def __post_init__(self):
        shape = SHAPES[self.codomain] + (self.mono.size,)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != shape:
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match {shape}")

    @property
    def degree(self) -> int:
        nz = np.any(np.abs(self.coeffs.reshape(-1, self.mono.size)) > 0, axis=0)
        return int(self.mono.degrees[nz].max()) if nz.any() else -1

    def value(self, pts) -> np.ndarray:
        V = self.mono.values(pts)
        return np.moveaxis(self.coeffs @ V.T, -1, 0)

    __call__ = value

    def grad(self, pts) -> np.ndarray:
        return np.moveaxis(grad(self.coeffs, self.mono) @ self.mono.values(pts).T, -1, 0)

    def hess(self, pts) -> np.ndarray:
        return np.moveaxis(hess(self.coeffs, self.mono) @ self.mono.values(pts).T, -1, 0)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(self.mono, self.coeffs + other.coeffs, self.codomain)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(self.mono, self.coeffs - other.coeffs, self.codomain)

    def __mul__(self, a: float) -> "Polynomial":
        return Polynomial(self.mono, a * self.coeffs, self.codomain)

    __rmul__ = __mul__


def apply_diff_op(tag: str, p: Polynomial) -> Polynomial:
    """Apply one of the named differential operators to a polynomial."""
    try:
        src, dst, fn = DIFF_OPS[tag]
    except KeyError:
        raise ValueError(f"unknown operator {tag!r}") from None
    if p.codomain != src:
        raise ValueError(f"{tag} expects a {src} polynomial, got {p.codomain}")
    return Polynomial(p.mono, fn(p.coeffs, p.mono), dst)


# ----------------------------------------------------------------------------
# element calculus


class ElementCalculus:
    """Monomials, quadrature and L2 Gram data on one element.

    ``degree`` bounds the polynomial degree of every field represented on the
    element; the quadrature integrates products of two such fields exactly.
    """

    def __init__(self, geom: ElementGeometry, degree: int):
        self.geom = geom
        self.degree = degree
        self.mono = ElementMonomials(geom.center, 0.5 * geom.diameter, degree)
        self.rule = polygon_rule(geom.vertices, geom.center, 2 * degree + 2)
        self.V = self.mono.values(self.rule.points)
        self.gram = (self.V * self.rule.weights[:, None]).T @ self.V

    @property
    def size(self) -> int:
        return self.mono.size

    @property
    def h(self) -> float:
        return self.geom.diameter

    def inner(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """L2 (Frobenius) products of two families of fields."""
        a = A.reshape(A.shape[0], int(np.prod(A.shape[1:-1])), self.size)
        b = B.reshape(B.shape[0], int(np.prod(B.shape[1:-1])), self.size)
        return np.einsum("isp,pq,jsq->ij", a, self.gram, b, optimize=True)

    def values(self, A: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Values of a family ``A`` at points; point axis last."""
        return A @ self.mono.values(pts).T

    def scalar_onb(self, m: int) -> np.ndarray:
        """Hierarchical L2-orthonormal basis of P^m (first dim P^j members span P^j)."""
        return self._scalar_onb[: dim_poly(m)]

    @cached_property
    def _scalar_onb(self) -> np.ndarray:
        return orthonormalize(np.eye(self.size), self.inner)

    def vector_onb(self, m: int) -> np.ndarray:
        s = self.scalar_onb(m)
        out = np.zeros((2 * len(s), 2, self.size))
        out[0::2, 0] = s
        out[1::2, 1] = s
        return out

    def tensor_onb(self, m: int) -> np.ndarray:
        s = self.scalar_onb(m)
        out = np.zeros((3 * len(s), 2, 2, self.size))
        out[0::3, 0, 0] = s
        out[1::3, 0, 1] = s / np.sqrt(2.0)
        out[1::3, 1, 0] = s / np.sqrt(2.0)
        out[2::3, 1, 1] = s
        return out

    def project(self, basis: np.ndarray, values_at_nodes: np.ndarray) -> np.ndarray:
        """Coefficients of the L2 projection onto an orthonormal ``basis``.

        ``values_at_nodes`` has the node axis first followed by the codomain.
        """
        B = self.values(basis, self.rule.points)  # (n, *S, q)
        f = np.moveaxis(np.asarray(values_at_nodes, float), 0, -1)
        B = B.reshape(len(B), int(np.prod(B.shape[1:-1])), B.shape[-1])
        return np.einsum("isq,sq,q->i", B, f.reshape(-1, f.shape[-1]), self.rule.weights)


def orthonormalize(members: np.ndarray, inner, passes: int = 2) -> np.ndarray:
    """Hierarchical Gram-Schmidt through repeated Cholesky factorizations."""
    out = members
    if len(out) == 0:
        return out
    for _ in range(passes):
        G = inner(out, out)
        L = np.linalg.cholesky(0.5 * (G + G.T))
        flat = out.reshape(len(out), -1)
        out = sla.solve_triangular(L, flat, lower=True).reshape(out.shape)
    return out


def rank_revealing_basis(members: np.ndarray, inner, ambient: np.ndarray, drop_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the span of ``members`` after removing dependencies.

    ``ambient`` is an orthonormal basis of a space containing the members; the
    pivoted QR runs on coordinates in it, so null pivots sit at rounding level
    instead of at the square root of it.
    """
    if len(members) == 0:
        return members
    coords = inner(members, ambient)  # (n_members, n_ambient)
    _, R, piv = sla.qr(coords.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > drop_tol * diag[0])) if diag.size and diag[0] > 0 else 0
    keep = np.sort(piv[:rank])
    return orthonormalize(members[keep], inner)


# ----------------------------------------------------------------------------
# subspaces


@dataclass
class SubspaceBasis:
    """Orthonormal basis of a named polynomial subspace on an element."""

    kind: str
    m: int
    calc: ElementCalculus
    members: np.ndarray
    raw: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return len(self.members)

    @property
    def codomain(self) -> str:
        return _codomain(self.members)

    def polynomial(self, coeffs) -> Polynomial:
        coeffs = np.asarray(coeffs, float)
        c = np.tensordot(coeffs, self.members, axes=(0, 0)) if self.dim else np.zeros(
            SHAPES[self.codomain] + (self.calc.size,)
        )
        return Polynomial(self.calc.mono, c, self.codomain)

    @property
    def gram(self) -> np.ndarray:
        return self.calc.inner(self.members, self.members)


def _codomain(members: np.ndarray) -> str:
    return {2: "scalar", 3: "vector", 4: "tensor"}[members.ndim]


def _perp(calc: ElementCalculus) -> np.ndarray:
    """(x - x_T)^perp in scaled coordinates as a vector field."""
    mono = calc.mono
    c = np.zeros((2, mono.size))
    c[0, mono.index(0, 1)] = 1.0
    c[1, mono.index(1, 0)] = -1.0
    return c


def _times_scalar(calc: ElementCalculus, scalar_coeffs: np.ndarray, fields: np.ndarray) -> np.ndarray:
    """Multiply fields (last axis monomials) by a scalar polynomial of degree <= 2."""
    X1, X2 = calc.mono.multiply
    out = np.zeros_like(fields)
    for j, (a, b) in enumerate(calc.mono.powers):
        if scalar_coeffs[j] == 0.0:
            continue
        g = fields
        for _ in range(a):
            g = g @ X1.T
        for _ in range(b):
            g = g @ X2.T
        out = out + scalar_coeffs[j] * g
    return out


def subspace_members(kind: str, calc: ElementCalculus, m: int) -> np.ndarray:
    """Raw (non-orthonormal) spanning members of a subspace."""
    mono = calc.mono
    n = mono.size
    if kind == "Holy":
        if m < 0:
            return np.zeros((0, 2, 2, n))
        return hess(calc.scalar_onb(m + 2)[3:], mono)
    if kind == "cHoly":
        if m <= 0:
            return np.zeros((0, 2, 2, n))
        w = calc.vector_onb(m - 1)
        p = _perp(calc)
        X1, X2 = mono.multiply
        pw = np.zeros((len(w), 2, 2, n))
        # (x^perp)_i w_j with x^perp = (xi2, -xi1)
        for j in range(2):
            pw[:, 0, j] = w[:, j] @ X2.T
            pw[:, 1, j] = -(w[:, j] @ X1.T)
        return sym(pw)
    if kind == "cColy":
        if m <= 1:
            return np.zeros((0, 2, 2, n))
        q = calc.scalar_onb(m - 2)
        out = np.zeros((len(q), 2, 2, n))
        X1, X2 = mono.multiply
        out[:, 0, 0] = q @ X1.T @ X1.T
        out[:, 0, 1] = q @ X1.T @ X2.T
        out[:, 1, 0] = out[:, 0, 1]
        out[:, 1, 1] = q @ X2.T @ X2.T
        return out
    if kind == "Coly":
        if m < 0:
            return np.zeros((0, 2, 2, n))
        return symcurl(calc.vector_onb(m + 1), mono)
    if kind == "RT1":
        out = np.zeros((3, 2, n))
        out[0, 0, 0] = 1.0
        out[1, 1, 0] = 1.0
        out[2, 0, mono.index(1, 0)] = 1.0
        out[2, 1, mono.index(0, 1)] = 1.0
        return out
    if kind == "Pperp1":
        return calc.scalar_onb(m)[3:] if m >= 1 else np.zeros((0, n))
    raise ValueError(f"unknown subspace kind {kind!r}")


def subspace_basis(kind: str, calc: ElementCalculus, m: int) -> SubspaceBasis:
    raw = subspace_members(kind, calc, m)
    if kind == "Coly":
        members = rank_revealing_basis(raw, calc.inner, calc.tensor_onb(max(m, 0)))
        expected = 2 * dim_poly(m + 1) - 3 if m >= 0 else 0
        if len(members) != expected:
            raise ValueError(f"Coly^{m}: rank {len(members)} differs from {expected}")
    else:
        members = orthonormalize(raw, calc.inner)
    return SubspaceBasis(kind, m, calc, members, raw)


def l2_project(basis, f, calc: ElementCalculus | None = None) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` onto an orthonormal basis.

    ``basis`` is a :class:`SubspaceBasis` or an orthonormal member array (then
    ``calc`` is required).  ``f`` is a callable on points, a
    :class:`Polynomial`, or None for the zero field.
    """
    if isinstance(basis, SubspaceBasis):
        calc, members = basis.calc, basis.members
    else:
        members = basis
    if len(members) == 0:
        return np.zeros(0)
    pts = calc.rule.points
    if f is None:
        return np.zeros(len(members))
    vals = f(pts) if callable(f) else f.value(pts)
    return calc.project(members, np.asarray(vals, float))


_ISO = {
    "VROT_on_cHoly": ("cHoly", vrot),
    "DIVDIV_on_cColy": ("cColy", divdiv),
    "HESS_on_Pperp1": ("Pperp1", hess),
}


def invert_local_isomorphism(kind: str, calc: ElementCalculus, m: int, target: Polynomial,
                             tol: float = 1e-10) -> Polynomial:
    """Preimage of ``target`` under VROT, DIVDIV or HESS on the matching subspace."""
    try:
        space, op = _ISO[kind]
    except KeyError:
        raise ValueError(f"unknown isomorphism {kind!r}") from None
    basis = subspace_basis(space, calc, m)
    if basis.dim == 0:
        if np.linalg.norm(target.coeffs) > 0:
            raise ValueError("target outside the range of the operator (source space is trivial)")
        return basis.polynomial(np.zeros(0))
    images = op(basis.members, calc.mono)
    G = calc.inner(images, images)
    rhs = calc.inner(images, target.coeffs[None])[:, 0]
    x = np.linalg.solve(G, rhs)
    residual = target.coeffs - np.tensordot(x, images, axes=(0, 0))
    rn = np.sqrt(max(calc.inner(residual[None], residual[None])[0, 0], 0.0))
    tn = np.sqrt(max(calc.inner(target.coeffs[None], target.coeffs[None])[0, 0], 0.0))
    if rn > tol * max(tn, 1e-300) and tn > 0:
        raise ValueError(f"target outside the range of {kind} (relative residual {rn / tn:.2e})")
    return basis.polynomial(x)


# ----------------------------------------------------------------------------
# edge calculus


class EdgeCalculus:
    """Edge monomials, Gauss rule and orthonormal hierarchical bases on one edge."""

    def __init__(self, geom: EdgeGeometry, degree: int, exactness: int):
        self.geom = geom
        self.mono = EdgeMonomials(geom, degree)
        self.rule = gauss_segment(geom.start, geom.end, exactness)
        self.V = self.mono.values(self.rule.points)
        self.gram = (self.V * self.rule.weights[:, None]).T @ self.V

    def inner(self, A, B):
        return A @ self.gram @ B.T

    @cached_property
    def _onb(self) -> np.ndarray:
        return orthonormalize(np.eye(self.mono.size), self.inner)

    def onb(self, m: int) -> np.ndarray:
        """Orthonormal basis of P^m(E) in monomial coefficients (rows)."""
        return self._onb[: dim_poly_edge(m)]

    def onb_values(self, m: int, pts=None) -> np.ndarray:
        pts = self.rule.points if pts is None else pts
        return self.onb(m) @ self.mono.values(pts).T

    def project_values(self, m: int, values: np.ndarray) -> np.ndarray:
        """Coefficients in onb(m) of the projection of node values (node axis last)."""
        return values @ (self.onb_values(m) * self.rule.weights).T


class JetField:
    """Field given by callables for its value and derivatives at points.

    ``value(pts)`` returns shape ``(n,) + S``; ``grad(pts)`` returns
    ``(n,) + S + (2,)``; ``hess(pts)`` (optional) returns ``(n,) + S + (2, 2)``.
    """

    def __init__(self, value, grad=None, hess=None, codomain: str = "scalar"):
        self.value = value
        self.grad = grad
        self.hess = hess
        self.codomain = codomain

    def __call__(self, pts):
        return self.value(pts)

    @classmethod
    def from_sympy(cls, expr, symbols, codomain: str | None = None) -> "JetField":
        """Build exact jets from a sympy scalar, vector or matrix expression."""
        import sympy as sp

        x, y = symbols
        M = sp.Matrix(expr) if not isinstance(expr, sp.Basic) or isinstance(expr, sp.MatrixBase) else None
        if M is None:
            comps, shape = [expr], ()
        elif M.shape == (2, 2):
            comps, shape = list(M), (2, 2)
        else:
            comps, shape = list(M), (len(M),)
        codomain = codomain or {(): "scalar", (2,): "vector", (2, 2): "tensor"}[shape]

        def lam(exprs):
            f = sp.lambdify((x, y), exprs, "numpy")

            def call(pts):
                pts = np.atleast_2d(pts)
                out = f(pts[:, 0], pts[:, 1])
                arr = np.array([np.broadcast_to(np.asarray(o, float), (len(pts),)) for o in out])
                return np.moveaxis(arr, 0, -1)

            return call

        v = lam(comps)
        g = lam([sp.diff(c, s) for c in comps for s in (x, y)])
        h = lam([sp.diff(c, s, r) for c in comps for s in (x, y) for r in (x, y)])
        return cls(
            lambda p: v(p).reshape((-1,) + shape),
            lambda p: g(p).reshape((-1,) + shape + (2,)),
            lambda p: h(p).reshape((-1,) + shape + (2, 2)),
            codomain,
        )

    def check_jets(self, pts, step: float = 1e-5, rtol: float = 1e-5) -> bool:
        """Compare gradients with central differences at probe points."""
        pts = np.atleast_2d(pts)
        if self.grad is None:
            return True
        g = self.grad(pts)
        scale = max(1.0, float(np.abs(self.value(pts)).max()), float(np.abs(g).max()))
        for i in range(2):
            e = np.zeros(2)
            e[i] = step
            fd = (self.value(pts + e) - self.value(pts - e)) / (2 * step)
            if np.abs(fd - g[..., i]).max() > rtol * scale:
                return False
        return True


def polynomial_jet(p: Polynomial) -> JetField:
    """Exact jets of a polynomial."""
    return JetField(p.value, p.grad, p.hess, p.codomain)
