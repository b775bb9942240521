import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddr_divdiv.mesh import (
    MeshError, build_mesh, family_mesh, load_mesh, regularity_report, save_mesh,
    scaled_distance, select_serendipity_edges, shape_mesh,
)

FAMILIES = ("tri", "square", "hex")


def test_square_split_counts(two_triangles):
    m = two_triangles
    assert (m.n_cells, m.n_edges, m.n_vertices) == (2, 5, 4)


def test_diagonal_edge_has_opposite_orientations(two_triangles):
    m = two_triangles
    interior = [e for e in range(m.n_edges) if len(m.edge_cells[e]) == 2]
    assert len(interior) == 1
    e = interior[0]
    signs = sorted(m.cell_orientations[t][list(m.cell_edges[t]).index(e)] for t in m.edge_cells[e])
    assert signs == [-1, 1]


@pytest.mark.parametrize("family", FAMILIES)
def test_closed_boundary_and_outward_normals(family):
    m = family_mesh(family, 3)
    for t in range(m.n_cells):
        total = np.zeros(2)
        for e, w in zip(m.cell_edges[t], m.cell_orientations[t]):
            total += w * m.edge_lengths[e] * m.edge_normals[e]
            assert w * m.edge_normals[e] @ (m.centers[t] - m.edge_midpoints[e]) < 0
        assert np.abs(total).max() <= 1e-14


@pytest.mark.parametrize("family", FAMILIES)
def test_frames_right_handed_and_omega_ev(family):
    m = family_mesh(family, 2)
    t, n = m.edge_tangents, m.edge_normals
    assert np.allclose(t[:, 0] * n[:, 1] - t[:, 1] * n[:, 0], 1.0)
    for e, (a, b) in enumerate(m.edges):
        assert m.omega_ev(e, b) == 1 and m.omega_ev(e, a) == -1


@pytest.mark.parametrize("family", FAMILIES)
def test_center_inside_with_inscribed_disk(family):
    m = family_mesh(family, 3)
    assert np.all(m.inradii > 0)
    for t in range(m.n_cells):
        for e, w in zip(m.cell_edges[t], m.cell_orientations[t]):
            dist = -w * (m.centers[t] - m.edge_midpoints[e]) @ m.edge_normals[e]
            assert dist >= m.inradii[t] - 1e-12


def test_build_is_deterministic():
    a = family_mesh("hex", 3)
    b = family_mesh("hex", 3)
    assert np.array_equal(a.edges, b.edges)
    assert all(np.array_equal(x, y) for x, y in zip(a.cell_edges, b.cell_edges))


def test_rejects_clockwise_cell():
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_rejects_self_intersecting_cell():
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 1], [1, 0], [0, 1]], [[0, 1, 2, 3]])


def test_rejects_duplicate_vertices():
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [1, 0], [0, 1]], [[0, 1, 3], [1, 2, 3]])


def test_rejects_hanging_edge():
    # right cell split at (1, 0.5): the shared side does not match vertex pairs
    verts = [[0, 0], [1, 0], [1, 1], [0, 1], [2, 0], [2, 1], [1, 0.5]]
    with pytest.raises(MeshError):
        build_mesh(verts, [[0, 1, 2, 3], [1, 4, 5, 2, 6]])


def test_mesh_file_round_trip(tmp_path):
    m = family_mesh("tri", 2)
    p = tmp_path / "m.json"
    save_mesh(m, p)
    back = load_mesh(p)
    assert np.array_equal(back.vertices, m.vertices)
    assert all(np.array_equal(x, y) for x, y in zip(back.cells, m.cells))


def test_mesh_file_missing_keys(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"vertices": []}))
    with pytest.raises(MeshError):
        load_mesh(p)


def _exhaustive_eta(mesh, t, theta_min, k):
    """Largest admissible edge subset size by brute force over all subsets."""
    ce = mesh.cell_edges[t]
    mids = mesh.edge_midpoints[ce]
    best = 2
    for size in range(2, min(len(ce), k + 1) + 1):
        for sub in itertools.combinations(range(len(ce)), size):
            ok = all(scaled_distance(mesh, t, i, mids[j]) >= theta_min
                     and scaled_distance(mesh, t, j, mids[i]) >= theta_min
                     for i, j in itertools.permutations(sub, 2))
            if ok:
                best = max(best, size)
    return best


@pytest.mark.parametrize("shape,eta,ell", [("triangle", 3, 0), ("square", 4, -1)])
def test_selection_matches_exhaustive_oracle(shape, eta, ell):
    m = shape_mesh(shape)
    sel = select_serendipity_edges(m, 0, 0.1, 3)
    assert (sel.eta, sel.ell) == (eta, ell)
    assert sel.eta == _exhaustive_eta(m, 0, 0.1, 3)


def test_selection_caps_eta_at_k_plus_one():
    m = shape_mesh("hexagon")
    assert [select_serendipity_edges(m, 0, 0.1, k).eta for k in (3, 4, 5)] == [4, 5, 6]


def test_selection_falls_back_without_serendipity():
    sel = select_serendipity_edges(shape_mesh("square"), 0, 5.0, 3)
    assert sel.eta == 2 and sel.ell == 1


def test_selection_invariants_on_hex_family():
    m = family_mesh("hex", 3)
    for t in range(m.n_cells):
        sel = select_serendipity_edges(m, t, 0.1, 4)
        assert 2 <= sel.eta <= 5 and sel.ell == 4 - sel.eta
        mids = m.edge_midpoints[list(m.cell_edges[t])]
        for i, j in itertools.permutations(sel.edges, 2):
            assert scaled_distance(m, t, i, mids[j]) >= 0.1
        for i in sel.edges:
            assert np.all(scaled_distance(m, t, i, m.cell_vertices(t)) >= -1e-12)


def test_selection_rejects_bad_arguments():
    m = shape_mesh("square")
    with pytest.raises(ValueError):
        select_serendipity_edges(m, 0, 0.0, 3)
    with pytest.raises(ValueError):
        select_serendipity_edges(m, 0, 0.1, 2)


def test_scaled_distance_is_affine_with_unit_scale():
    m = family_mesh("hex", 2)
    t, i = 0, 0
    e = m.cell_edges[t][i]
    assert abs(scaled_distance(m, t, i, m.edge_midpoints[e])) < 1e-14
    x0 = m.centers[t]
    g = np.array([scaled_distance(m, t, i, x0 + d) - scaled_distance(m, t, i, x0) for d in np.eye(2)])
    assert abs(np.linalg.norm(g) - 1.0 / m.edge_lengths[e]) < 1e-12


def test_regularity_report_values():
    rep = regularity_report(family_mesh("tri", 4))
    assert rep["max_edges_per_element"] == 3
    sq = regularity_report(shape_mesh("square"))
    assert abs(sq["min_rho"] - 1 / np.sqrt(2)) <= 1e-12


@pytest.mark.parametrize("family", FAMILIES)
def test_regularity_constant_under_refinement(family):
    rhos = [regularity_report(family_mesh(family, n))["min_rho"] for n in (2, 4, 8)]
    assert max(rhos) - min(rhos) <= 0.05 * max(rhos)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2)), min_size=9, max_size=9))
def test_perturbed_grid_keeps_divergence_identity(shifts):
    g = np.linspace(0, 1, 4)
    verts = np.array([[x, y] for y in g for x in g])
    for idx, (dx, dy) in zip((5, 6, 9, 10), shifts):
        verts[idx] += (dx / 3, dy / 3)
    cells = [[j * 4 + i, j * 4 + i + 1, (j + 1) * 4 + i + 1, (j + 1) * 4 + i] for j in range(3) for i in range(3)]
    m = build_mesh(verts, cells)
    for t in range(m.n_cells):
        s = sum(w * m.edge_lengths[e] * m.edge_normals[e] for e, w in zip(m.cell_edges[t], m.cell_orientations[t]))
        assert np.abs(s).max() <= 1e-14
