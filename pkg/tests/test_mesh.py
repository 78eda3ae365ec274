"""Mesh representation, Jacobians, Cartesian generation, file I/O."""

import numpy as np
import pytest

from tmopfit.errors import MeshParseError
from tmopfit.mesh import (
    NodeField,
    domain_volume,
    element_jacobian,
    element_jacobians,
    element_position,
    is_valid,
    make_cartesian,
    read_mesh,
    write_mesh,
)
from tmopfit.reference import quadrature_for


def test_identity_map_position():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    assert np.allclose(element_position(mesh, nodes, 0, (0.3, 0.7)), (0.3, 0.7))


def test_position_at_reference_nodes_returns_stored_coordinates():
    mesh, nodes = make_cartesian(2, 2, 3, "quad")
    pts = nodes.as_matrix()
    for e in (0, 3):
        for loc, ref in enumerate(mesh.basis.nodes):
            got = element_position(mesh, nodes, e, ref)
            assert np.allclose(got, pts[mesh.connectivity[e][loc]], atol=1e-13)


def test_bilinear_stretched_quad_midpoint():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    # Lexicographic corners: (0,0), (1,0), (0,1), (1,1) -> stretch x by 2.
    stretched = NodeField.from_matrix(
        np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
    )
    assert np.allclose(
        element_position(mesh, stretched, 0, (0.5, 0.5)), (1.0, 0.5)
    )


def test_identity_jacobian():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    jac = element_jacobian(mesh, nodes, 0, (0.4, 0.6))
    assert np.allclose(jac.matrix, np.eye(2), atol=1e-14)
    assert abs(jac.det - 1.0) < 1e-14


def test_scaled_jacobian():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    scaled = NodeField.from_matrix(2.0 * nodes.as_matrix())
    jac = element_jacobian(mesh, scaled, 0, (0.5, 0.5))
    assert np.allclose(jac.matrix, 2.0 * np.eye(2), atol=1e-14)
    assert abs(jac.det - 4.0) < 1e-13


def test_inverted_element_detected():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    mat = nodes.as_matrix().copy()
    mat[[0, 1]] = mat[[1, 0]]  # swap two adjacent corners
    bad = NodeField.from_matrix(mat)
    rule = quadrature_for("quad", 1)
    _, grads = mesh.basis.eval_with_grad(rule.points)
    _, dets = element_jacobians(mesh, bad, 0, grads)
    assert dets.min() < 0.0
    ok, min_det = is_valid(mesh, bad)
    assert not ok and min_det < 0.0


def test_small_perturbation_remains_valid():
    mesh, nodes = make_cartesian(2, 4, 1, "quad")
    rng = np.random.default_rng(3)
    mat = nodes.as_matrix().copy()
    h = 0.25
    mat += 0.01 * h * rng.uniform(-1, 1, mat.shape)
    ok, min_det = is_valid(mesh, NodeField.from_matrix(mat))
    assert ok and min_det > 0.0


def test_uniform_mesh_valid_with_cell_volume_determinant():
    mesh, nodes = make_cartesian(2, 4, 1, "quad")
    ok, min_det = is_valid(mesh, nodes)
    assert ok
    assert abs(min_det - 1.0 / 16.0) < 1e-14  # det A = cell volume ratio


def test_make_cartesian_single_quad():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    assert mesh.num_elements == 1 and mesh.num_nodes == 4
    assert is_valid(mesh, nodes)[0]


def test_make_cartesian_8x8_order3():
    mesh, nodes = make_cartesian(2, 8, 3, "quad")
    assert mesh.num_elements == 64
    assert is_valid(mesh, nodes)[0]


def test_make_cartesian_hex_volume():
    mesh, nodes = make_cartesian(3, 4, 2, "hex")
    assert mesh.num_elements == 64
    assert abs(domain_volume(mesh, nodes) - 1.0) < 1e-12


@pytest.mark.parametrize("geometry,dim", [("triangle", 2), ("tet", 3)])
def test_simplex_split_counts_and_volume(geometry, dim):
    mesh, nodes = make_cartesian(dim, 2, 2, geometry)
    per_cell = 2 if geometry == "triangle" else 6
    assert mesh.num_elements == per_cell * 2**dim
    assert is_valid(mesh, nodes)[0]
    assert abs(domain_volume(mesh, nodes) - 1.0) < 1e-12


def test_affine_jacobian_constant_across_quadrature():
    mesh, nodes = make_cartesian(2, 2, 3, "triangle")
    rule = quadrature_for("triangle", 3)
    _, grads = mesh.basis.eval_with_grad(rule.points)
    for e in range(mesh.num_elements):
        mats, _ = element_jacobians(mesh, nodes, e, grads)
        assert np.abs(mats - mats[0]).max() < 1e-13


def test_jacobian_linear_in_nodes():
    mesh, nodes = make_cartesian(2, 2, 2, "quad")
    rng = np.random.default_rng(11)
    other = NodeField.from_matrix(rng.standard_normal(nodes.as_matrix().shape))
    both = NodeField.from_matrix(nodes.as_matrix() + other.as_matrix())
    ref = mesh.basis.nodes[4][None, :]
    _, grads = mesh.basis.eval_with_grad(ref)
    j1, _ = element_jacobians(mesh, nodes, 1, grads)
    j2, _ = element_jacobians(mesh, other, 1, grads)
    j12, _ = element_jacobians(mesh, both, 1, grads)
    assert np.abs(j12 - (j1 + j2)).max() < 1e-13


def test_invalid_element_id():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    with pytest.raises(ValueError):
        element_position(mesh, nodes, 5, (0.5, 0.5))


def test_roundtrip(tmp_path):
    mesh, nodes = make_cartesian(2, 2, 2, "quad")
    mesh.attributes[:] = [1, 2, 3, 4]
    path = tmp_path / "mesh.mesh"
    write_mesh(path, mesh, nodes)
    mesh2, nodes2 = read_mesh(path)
    assert np.array_equal(mesh2.connectivity, mesh.connectivity)
    assert np.array_equal(mesh2.attributes, mesh.attributes)
    assert np.abs(nodes2.coords - nodes.coords).max() < 1e-15
    assert len(mesh2.boundary) == len(mesh.boundary)
    for (a1, n1), (a2, n2) in zip(mesh.boundary, mesh2.boundary):
        assert a1 == a2 and np.array_equal(n1, n2)


def test_roundtrip_skewed_coordinates(tmp_path):
    mesh, nodes = make_cartesian(2, 3, 3, "quad")
    rng = np.random.default_rng(5)
    mat = nodes.as_matrix() + 1e-3 * rng.standard_normal((mesh.num_nodes, 2))
    skewed = NodeField.from_matrix(mat)
    path = tmp_path / "m.mesh"
    write_mesh(path, mesh, skewed)
    _, nodes2 = read_mesh(path)
    assert np.abs(nodes2.coords - skewed.coords).max() < 1e-15


def test_truncated_file_reports_section_and_line(tmp_path):
    mesh, nodes = make_cartesian(2, 2, 1, "quad")
    path = tmp_path / "mesh.mesh"
    write_mesh(path, mesh, nodes)
    lines = path.read_text().splitlines()
    truncated = tmp_path / "broken.mesh"
    truncated.write_text("\n".join(lines[:6]) + "\n")
    with pytest.raises(MeshParseError) as err:
        read_mesh(truncated)
    assert "element" in str(err.value)
    assert err.value.line is not None


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("something-else v9\n")
    with pytest.raises(MeshParseError):
        read_mesh(path)


def test_boundary_node_ids_on_unit_square():
    mesh, nodes = make_cartesian(2, 4, 2, "quad")
    ids = mesh.boundary_node_ids()
    pts = nodes.as_matrix()[ids]
    on_edge = (
        (np.abs(pts) < 1e-12) | (np.abs(pts - 1.0) < 1e-12)
    ).any(axis=1)
    assert on_edge.all()
    # every domain-edge node is found: 4 sides x (4*2+1) minus corners
    expected = 4 * (4 * 2 + 1) - 4
    assert len(ids) == expected
