"""Polygonal meshes with the orientation and frame data used by the complexes."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

GEOM_TOL = 1e-12


class MeshError(ValueError):
    """Raised when raw mesh data is not a valid conforming polygonal mesh."""


@dataclass(frozen=True)
class Mesh:
    """Immutable polygonal mesh.

    Edges are stored with a global orientation: the tangent points from
    ``edges[e, 0]`` to ``edges[e, 1]`` and the normal is the tangent rotated
    by +90 degrees, so that (tangent, normal) is right-handed.  Element ``T``
    lists its vertices counterclockwise; local edge ``i`` joins local vertices
    ``i`` and ``i + 1``.
    """

    vertices: np.ndarray
    edges: np.ndarray
    edge_tangents: np.ndarray
    edge_normals: np.ndarray
    edge_lengths: np.ndarray
    edge_midpoints: np.ndarray
    cells: tuple
    cell_edges: tuple
    cell_orientations: tuple
    centers: np.ndarray
    inradii: np.ndarray
    diameters: np.ndarray
    edge_cells: tuple

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def omega_ev(self, e: int, v: int) -> int:
        """+1 if the tangent of edge ``e`` points toward vertex ``v``."""
        a, b = self.edges[e]
        if v == b:
            return 1
        if v == a:
            return -1
        raise KeyError(f"vertex {v} is not an endpoint of edge {e}")

    def boundary_edges(self) -> np.ndarray:
        return np.array([e for e, c in enumerate(self.edge_cells) if len(c) == 1], dtype=int)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges()].ravel())

    def cell_vertices(self, t: int) -> np.ndarray:
        return self.vertices[self.cells[t]]

    def cell_area(self, t: int) -> float:
        return polygon_area(self.cell_vertices(t))

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "cells": [c.tolist() for c in self.cells],
        }


def polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _segments_intersect(p1, p2, q1, q2, tol) -> bool:
    d1 = _cross(p2 - p1, q1 - p1)
    d2 = _cross(p2 - p1, q2 - p1)
    d3 = _cross(q2 - q1, p1 - q1)
    d4 = _cross(q2 - q1, p2 - q1)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and (
        (d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)
    ):
        return True

    def on_segment(a, b, c, d):
        if abs(d) > tol:
            return False
        return min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol and min(a[1], b[1]) - tol <= c[1] <= max(
            a[1], b[1]
        ) + tol

    return (
        on_segment(p1, p2, q1, d1)
        or on_segment(p1, p2, q2, d2)
        or on_segment(q1, q2, p1, d3)
        or on_segment(q1, q2, p2, d4)
    )


def _is_simple(pts: np.ndarray, tol: float) -> bool:
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n], tol):
                return False
    return True


def is_convex(pts: np.ndarray, tol: float = GEOM_TOL) -> bool:
    e = np.roll(pts, -1, axis=0) - pts
    turn = _cross(e, np.roll(e, -1, axis=0))
    scale = np.max(np.linalg.norm(e, axis=1)) ** 2
    return bool(np.all(turn >= -tol * scale))


def _segment_distance(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points ``x`` (n, 2) to segment [a, b]."""
    d = b - a
    s = np.clip(((x - a) @ d) / (d @ d), 0.0, 1.0)
    return np.linalg.norm(x - (a + s[:, None] * d), axis=1)


def _boundary_distance(x: np.ndarray, pts: np.ndarray) -> np.ndarray:
    n = len(pts)
    return np.min([_segment_distance(x, pts[i], pts[(i + 1) % n]) for i in range(n)], axis=0)


def ear_clip(pts: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple counterclockwise polygon by ear clipping."""
    idx = list(range(len(pts)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(pts) ** 2:
            raise MeshError("ear clipping failed; polygon is not simple")
        n = len(idx)
        for i in range(n):
            a, b, c = idx[i - 1], idx[i], idx[(i + 1) % n]
            if _cross(pts[b] - pts[a], pts[c] - pts[b]) <= 0:
                continue
            tri = pts[[a, b, c]]
            inside = False
            for j in idx:
                if j in (a, b, c):
                    continue
                p = pts[j]
                w = [_cross(tri[(m + 1) % 3] - tri[m], p - tri[m]) for m in range(3)]
                if min(w) >= 0:
                    inside = True
                    break
            if not inside:
                tris.append((a, b, c))
                idx.pop(i)
                break
    tris.append(tuple(idx))
    return tris


def inscribed_center(pts: np.ndarray) -> tuple[np.ndarray, float]:
    """Center and radius of a largest disk inscribed in a simple polygon.

    Convex cells are handled exactly by enumerating triples of supporting
    lines; other cells use a refined candidate grid followed by a shrinking
    pattern search.
    """
    n = len(pts)
    if is_convex(pts):
        e = np.roll(pts, -1, axis=0) - pts
        lens = np.linalg.norm(e, axis=1)
        inward = np.stack([-e[:, 1], e[:, 0]], axis=1) / lens[:, None]
        rhs = np.einsum("ij,ij->i", inward, pts)
        best = None
        for i, j, m in itertools.combinations(range(n), 3):
            A = np.array([[*inward[i], -1.0], [*inward[j], -1.0], [*inward[m], -1.0]])
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            sol = np.linalg.solve(A, rhs[[i, j, m]])
            c, r = sol[:2], sol[2]
            slack = inward @ c - rhs - r
            if np.all(slack >= -1e-12 * max(1.0, lens.max())) and (best is None or r > best[1] + 1e-14):
                best = (c, float(r))
        if best is not None:
            c = best[0]
            r = float(np.min(inward @ c - rhs))
            return c, r
    # general simple polygon
    tris = ear_clip(pts)
    cands = []
    lattice = 12
    for a, b, c in tris:
        for i in range(1, lattice):
            for j in range(1, lattice - i):
                la, lb = i / lattice, j / lattice
                cands.append(pts[a] + la * (pts[b] - pts[a]) + lb * (pts[c] - pts[a]))
    cands = np.array(cands)
    dist = _boundary_distance(cands, pts)
    x = cands[np.argmax(dist)]
    r = dist.max()
    step = r / 2
    dirs = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]]) / np.sqrt(
        [1, 1, 1, 1, 2, 2, 2, 2]
    )[:, None]
    while step > 1e-14 * max(1.0, r):
        trial = x + step * dirs
        tri_ok = np.array([_point_in_polygon(p, pts) for p in trial])
        d = np.where(tri_ok, _boundary_distance(trial, pts), -np.inf)
        if d.max() > r:
            r = float(d.max())
            x = trial[np.argmax(d)]
        else:
            step /= 2
    return x, float(r)


def _point_in_polygon(p: np.ndarray, pts: np.ndarray) -> bool:
    inside = False
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        if (a[1] > p[1]) != (b[1] > p[1]):
            xc = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if p[0] < xc:
                inside = not inside
    return inside


def build_mesh(raw_vertices, raw_cells, tol: float = GEOM_TOL) -> Mesh:
    """Build a mesh from vertex coordinates and counterclockwise cells."""
    verts = np.asarray(raw_vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise MeshError("vertices must be a list of at least three [x, y] pairs")
    if not np.all(np.isfinite(verts)):
        raise MeshError("vertex coordinates must be finite")
    cells = [np.asarray(c, dtype=int) for c in raw_cells]
    if not cells:
        raise MeshError("mesh has no cells")
    span = float(np.max(np.ptp(verts, axis=0)))
    gtol = tol * span

    pairs = cKDTree(verts).query_pairs(gtol)
    if pairs:
        i, j = sorted(pairs)[0]
        raise MeshError(f"duplicate vertices {i} and {j} within tolerance")

    directed: dict[tuple[int, int], int] = {}
    for t, c in enumerate(cells):
        if len(c) < 3:
            raise MeshError(f"cell {t} has fewer than three vertices")
        if c.min() < 0 or c.max() >= len(verts):
            raise MeshError(f"cell {t} references a missing vertex")
        if len(set(c.tolist())) != len(c):
            raise MeshError(f"cell {t} repeats a vertex; non-simple polygon")
        pts = verts[c]
        if polygon_area(pts) <= gtol * span:
            raise MeshError(f"cell {t} is clockwise or degenerate; cells must be counterclockwise")
        if not _is_simple(pts, gtol * span):
            raise MeshError(f"cell {t} is a non-simple polygon")
        for i in range(len(c)):
            key = (int(c[i]), int(c[(i + 1) % len(c)]))
            if key in directed:
                raise MeshError(
                    f"inconsistent orientation: edge {key} traversed in the same direction by cells "
                    f"{directed[key]} and {t}"
                )
            directed[key] = t

    used = np.zeros(len(verts), dtype=bool)
    for c in cells:
        used[c] = True
    if not used.all():
        raise MeshError(f"dangling vertex {int(np.flatnonzero(~used)[0])} belongs to no cell")

    edge_index: dict[tuple[int, int], int] = {}
    edge_list = []
    edge_cells: list[list[int]] = []
    cell_edges, cell_orient = [], []
    for t, c in enumerate(cells):
        ce, co = [], []
        for i in range(len(c)):
            a, b = int(c[i]), int(c[(i + 1) % len(c)])
            key = (min(a, b), max(a, b))
            if key not in edge_index:
                edge_index[key] = len(edge_list)
                edge_list.append(key)
                edge_cells.append([])
            e = edge_index[key]
            edge_cells[e].append(t)
            ce.append(e)
            # traversing along the global tangent means the normal points inward
            co.append(-1 if a == key[0] else 1)
        cell_edges.append(np.array(ce, dtype=int))
        cell_orient.append(np.array(co, dtype=int))

    edges = np.array(edge_list, dtype=int)
    d = verts[edges[:, 1]] - verts[edges[:, 0]]
    lengths = np.linalg.norm(d, axis=1)
    tangents = d / lengths[:, None]
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    mids = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])

    # conformity: boundary edges must not contain other vertices, boundary must be a closed curve
    bnd = [e for e, cs in enumerate(edge_cells) if len(cs) == 1]
    degree = np.zeros(len(verts), dtype=int)
    for e in bnd:
        degree[edges[e]] += 1
        a, b = verts[edges[e, 0]], verts[edges[e, 1]]
        dist = _segment_distance(verts, a, b)
        hit = np.flatnonzero(dist < gtol)
        hit = [v for v in hit if v not in edges[e]]
        if hit:
            raise MeshError(f"dangling edge {tuple(edges[e])}: vertex {hit[0]} lies on it without splitting it")
    if np.any(degree[degree > 0] % 2):
        raise MeshError("boundary is not a closed polyline (dangling edge)")

    centers = np.zeros((len(cells), 2))
    inradii = np.zeros(len(cells))
    diameters = np.zeros(len(cells))
    for t, c in enumerate(cells):
        pts = verts[c]
        centers[t], inradii[t] = inscribed_center(pts)
        diameters[t] = max(np.linalg.norm(p - q) for p, q in itertools.combinations(pts, 2))

    return Mesh(
        vertices=verts,
        edges=edges,
        edge_tangents=tangents,
        edge_normals=normals,
        edge_lengths=lengths,
        edge_midpoints=mids,
        cells=tuple(cells),
        cell_edges=tuple(cell_edges),
        cell_orientations=tuple(cell_orient),
        centers=centers,
        inradii=inradii,
        diameters=diameters,
        edge_cells=tuple(tuple(c) for c in edge_cells),
    )


# ----------------------------------------------------------------------------
# serendipity edge selection


@dataclass(frozen=True)
class SerendipitySelection:
    """Selected edges (local indices) of one element and the derived degrees."""

    edges: tuple
    eta: int
    theta: float
    ell: int


def scaled_distance(mesh: Mesh, t: int, local_edge: int, x: np.ndarray) -> np.ndarray:
    """Scaled distance from ``x`` to the line of an edge, positive inside the element."""
    e = mesh.cell_edges[t][local_edge]
    w = mesh.cell_orientations[t][local_edge]
    return -w * ((np.asarray(x) - mesh.edge_midpoints[e]) @ mesh.edge_normals[e]) / mesh.edge_lengths[e]


def _aligned(mesh: Mesh, e1: int, e2: int) -> bool:
    t1, t2 = mesh.edge_tangents[e1], mesh.edge_tangents[e2]
    if abs(_cross(t1, t2)) > 1e-10:
        return False
    off = mesh.edge_midpoints[e2] - mesh.edge_midpoints[e1]
    return abs(_cross(t1, off)) <= 1e-10 * mesh.edge_lengths[e1]


def select_serendipity_edges(mesh: Mesh, t: int, theta_min: float = 0.1, k: int = 3) -> SerendipitySelection:
    """Greedy selection of well-separated boundary edges of element ``t``."""
    if theta_min <= 0:
        raise ValueError("theta_min must be positive")
    if k < 3:
        raise ValueError("the complexes require degree k >= 3")
    ce = mesh.cell_edges[t]
    pts = mesh.cell_vertices(t)
    scale = mesh.diameters[t]
    candidates = []
    for i in range(len(ce)):
        d = scaled_distance(mesh, t, i, pts)
        if np.all(d >= -GEOM_TOL * scale / mesh.edge_lengths[ce[i]]):
            candidates.append(i)
    order = sorted(candidates, key=lambda i: (-round(mesh.edge_lengths[ce[i]], 12), i))
    mids = mesh.edge_midpoints[ce]
    chosen: list[int] = []
    for i in order:
        if len(chosen) == k + 1:
            break
        ok = True
        for j in chosen:
            if _aligned(mesh, ce[i], ce[j]):
                ok = False
                break
            if scaled_distance(mesh, t, i, mids[j]) < theta_min or scaled_distance(mesh, t, j, mids[i]) < theta_min:
                ok = False
                break
        if ok:
            chosen.append(i)
    if len(chosen) < 2:
        return SerendipitySelection(edges=tuple(order[:2]), eta=2, theta=0.0, ell=k - 2)
    theta = min(
        min(scaled_distance(mesh, t, i, mids[j]), scaled_distance(mesh, t, j, mids[i]))
        for i, j in itertools.combinations(chosen, 2)
    )
    eta = len(chosen)
    return SerendipitySelection(edges=tuple(sorted(chosen)), eta=eta, theta=float(theta), ell=k - eta)


def regularity_report(mesh: Mesh, k: int = 3, theta_min: float = 0.1) -> dict:
    """Shape-regularity diagnostics of a mesh."""
    rho = 2.0 * mesh.inradii / mesh.diameters
    thetas = [select_serendipity_edges(mesh, t, theta_min, k).theta for t in range(mesh.n_cells)]
    return {
        "min_rho": float(rho.min()),
        "max_edges_per_element": int(max(len(c) for c in mesh.cells)),
        "min_theta_per_element": [float(x) for x in thetas],
        "h": mesh.h,
    }


# ----------------------------------------------------------------------------
# structured families and shapes


def _grid_vertices(n: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(g, g, indexing="xy")
    return np.stack([x.ravel(), y.ravel()], axis=1)


def square_mesh(n: int) -> Mesh:
    verts = _grid_vertices(n)
    cells = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            cells.append([a, a + 1, a + n + 2, a + n + 1])
    return build_mesh(verts, cells)


def triangle_mesh(n: int) -> Mesh:
    verts = _grid_vertices(n)
    cells = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            cells.append([a, a + 1, a + n + 2])
            cells.append([a, a + n + 2, a + n + 1])
    return build_mesh(verts, cells)


def hexagon_mesh(n: int) -> Mesh:
    """Hexagon-dominant mesh of the unit square with ``n`` rows.

    Interior cells are convex hexagons in a staggered (honeycomb) pattern;
    cells touching the boundary are truncated to pentagons or quadrilaterals.
    """
    if n < 2:
        raise ValueError("hexagon family needs n >= 2")
    height = 1.0 / n
    width = 1.0 / n
    amp = height / 6.0
    index: dict[tuple[int, int], int] = {}
    coords: list[tuple[float, float]] = []

    def vid(p: int, j: int) -> int:
        if (p, j) not in index:
            y = j * height
            if 0 < j < n:
                y += amp if p % 2 == j % 2 else -amp
            index[(p, j)] = len(coords)
            coords.append((p * width / 2.0, y))
        return index[(p, j)]

    cells = []
    for j in range(n):
        walls = sorted({0, 2 * n} | {p for p in range(1, 2 * n) if p % 2 == j % 2})
        for pl, pr in zip(walls[:-1], walls[1:]):
            bottom = list(range(pl, pr + 1))
            top = list(range(pr, pl - 1, -1))
            if j == 0:
                bottom = [pl, pr]
            if j == n - 1:
                top = [pr, pl]
            cells.append([vid(p, j) for p in bottom] + [vid(p, j + 1) for p in top])
    return build_mesh(np.array(coords), cells)


FAMILIES = {"tri": triangle_mesh, "square": square_mesh, "hex": hexagon_mesh}


def family_mesh(name: str, n: int) -> Mesh:
    try:
        return FAMILIES[name](n)
    except KeyError:
        raise ValueError(f"unknown mesh family {name!r}; choose from {sorted(FAMILIES)}") from None


def shape_mesh(name: str) -> Mesh:
    """Single-cell meshes of the reference shapes used for DOF accounting."""
    if name == "triangle":
        verts = [[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]]
    elif name == "square":
        verts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    elif name == "hexagon":
        ang = np.pi / 3.0 * np.arange(6)
        verts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        raise ValueError(f"unknown shape {name!r}; choose from triangle, square, hexagon")
    verts = np.asarray(verts, dtype=float)
    return build_mesh(verts, [list(range(len(verts)))])


SHAPES = ("triangle", "square", "hexagon")


def load_mesh(path) -> Mesh:
    """Read a mesh from a JSON file with keys ``vertices`` and ``cells``."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    if not isinstance(data, dict) or "vertices" not in data or "cells" not in data:
        raise MeshError("mesh file must contain 'vertices' and 'cells'")
    return build_mesh(data["vertices"], data["cells"])


def save_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_dict()))
