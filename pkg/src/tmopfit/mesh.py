"""High-order mesh representation, Cartesian generation, and file I/O.

A mesh stores connectivity only; node coordinates live in a separate
NodeField (the optimization unknowns).  Coordinates are kept in a flat
component-major vector: the x-block of all nodes, then the y-block, etc.
Degree of freedom (a, i) maps to flat index a * num_nodes + i.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidMeshError, MeshParseError
from .reference import (
    GEOMETRY_DIM,
    REFERENCE_FACES,
    REFERENCE_MEASURE,
    corner_local_indices,
    face_node_indices,
    gauss_lobatto_nodes,
    quadrature_for,
    reference_element,
)


@dataclass
class Mesh:
    """Element connectivity, attributes, and boundary faces.

    Attributes
    ----------
    dim : int
    order : int
    geometry : str
        Single element type per mesh.
    connectivity : ndarray, shape (num_elements, nodes_per_element)
    attributes : ndarray, shape (num_elements,)
    boundary : list of (attribute, ndarray of node ids)
    num_nodes : int
    """

    dim: int
    order: int
    geometry: str
    connectivity: np.ndarray
    attributes: np.ndarray
    boundary: list = field(default_factory=list)
    num_nodes: int = 0

    def __post_init__(self):
        self.connectivity = np.asarray(self.connectivity, dtype=int)
        self.attributes = np.asarray(self.attributes, dtype=int)
        if self.num_nodes == 0 and self.connectivity.size:
            self.num_nodes = int(self.connectivity.max()) + 1
        ref = reference_element(self.geometry, self.order)
        if self.connectivity.shape[1] != ref.num_nodes:
            raise InvalidMeshError(
                f"{self.geometry} order {self.order} needs "
                f"{ref.num_nodes} nodes per element, got "
                f"{self.connectivity.shape[1]}"
            )
        if self.connectivity.size and self.connectivity.max() >= self.num_nodes:
            raise InvalidMeshError("node index out of range")

    @property
    def num_elements(self):
        return len(self.connectivity)

    @property
    def reference(self):
        return reference_element(self.geometry, self.order)

    @property
    def basis(self):
        return self.reference.basis

    def node_elements(self):
        """For each node, list of (element id, local node id) pairs."""
        adj = [[] for _ in range(self.num_nodes)]
        for e, conn in enumerate(self.connectivity):
            for loc, n in enumerate(conn):
                adj[n].append((e, loc))
        return adj

    def face_map(self):
        """Map from face key (sorted corner node ids) to incident elements.

        Returns dict: key -> list of (element id, local face id).
        """
        corners = corner_local_indices(self.geometry, self.order)
        faces = {}
        for e, conn in enumerate(self.connectivity):
            for f, fverts in enumerate(REFERENCE_FACES[self.geometry]):
                key = tuple(sorted(conn[corners[v]] for v in fverts))
                faces.setdefault(key, []).append((e, f))
        return faces

    def boundary_node_ids(self):
        """Ids of all nodes lying on faces shared by a single element."""
        fni = face_node_indices(self.geometry, self.order)
        ids = set()
        for key, incident in self.face_map().items():
            if len(incident) == 1:
                e, f = incident[0]
                ids.update(self.connectivity[e][fni[f]])
        return np.array(sorted(ids), dtype=int)


@dataclass
class NodeField:
    """Flat component-major coordinate vector of all mesh nodes."""

    dim: int
    num_nodes: int
    coords: np.ndarray

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat, dtype=float)
        n, dim = mat.shape
        return cls(dim, n, mat.T.reshape(-1).copy())

    def as_matrix(self):
        """Coordinates as an (num_nodes, dim) array (view when possible)."""
        return self.coords.reshape(self.dim, self.num_nodes).T

    def node(self, i):
        return self.as_matrix()[i]

    def copy(self):
        return NodeField(self.dim, self.num_nodes, self.coords.copy())

    def dof_index(self, component, node):
        return component * self.num_nodes + node


@dataclass
class ElementJacobian:
    """Jacobian matrix A of the reference-to-physical map at one point."""

    matrix: np.ndarray
    det: float


def element_node_coords(mesh, node_field, element_id):
    """Coordinates of one element's nodes, shape (nodes_per_element, dim)."""
    if element_id < 0 or element_id >= mesh.num_elements:
        raise ValueError(f"invalid element id {element_id}")
    return node_field.as_matrix()[mesh.connectivity[element_id]]


def element_position(mesh, node_field, element_id, ref_point):
    """Physical image of a reference point under the element map."""
    coords = element_node_coords(mesh, node_field, element_id)
    vals = mesh.basis.eval(np.atleast_2d(ref_point))[0]
    return vals @ coords


def element_jacobian(mesh, node_field, element_id, ref_point):
    """Jacobian of the element map at a reference point."""
    coords = element_node_coords(mesh, node_field, element_id)
    _, grads = mesh.basis.eval_with_grad(np.atleast_2d(ref_point))
    a = coords.T @ grads[0]
    return ElementJacobian(a, float(np.linalg.det(a)))


def element_jacobians(mesh, node_field, element_id, ref_grads):
    """Jacobians at many reference points from precomputed basis gradients.

    Parameters
    ----------
    ref_grads : ndarray, shape (n_points, nodes_per_element, dim)

    Returns
    -------
    mats : ndarray, shape (n_points, dim, dim)
    dets : ndarray, shape (n_points,)
    """
    coords = element_node_coords(mesh, node_field, element_id)
    mats = np.einsum("id,qib->qdb", coords, ref_grads)
    return mats, np.linalg.det(mats)


def is_valid(mesh, node_field, quadrature=None):
    """Check det A > 0 at every quadrature point of every element.

    Returns
    -------
    valid : bool
    min_det : float
        Minimum Jacobian determinant over all sampled points.
    """
    if quadrature is None:
        quadrature = quadrature_for(mesh.geometry, mesh.order)
    _, ref_grads = mesh.basis.eval_with_grad(quadrature.points)
    min_det = np.inf
    for e in range(mesh.num_elements):
        _, dets = element_jacobians(mesh, node_field, e, ref_grads)
        min_det = min(min_det, dets.min())
    return bool(min_det > 0.0), float(min_det)


def domain_volume(mesh, node_field, quadrature=None):
    """Total volume: sum over elements of the Jacobian-weighted quadrature."""
    if quadrature is None:
        quadrature = quadrature_for(mesh.geometry, mesh.order)
    _, ref_grads = mesh.basis.eval_with_grad(quadrature.points)
    total = 0.0
    for e in range(mesh.num_elements):
        _, dets = element_jacobians(mesh, node_field, e, ref_grads)
        total += quadrature.weights @ dets
    return float(total)


def element_volumes(mesh, node_field, quadrature=None):
    """Per-element volumes via quadrature; shape (num_elements,)."""
    if quadrature is None:
        quadrature = quadrature_for(mesh.geometry, mesh.order)
    _, ref_grads = mesh.basis.eval_with_grad(quadrature.points)
    vols = np.zeros(mesh.num_elements)
    for e in range(mesh.num_elements):
        _, dets = element_jacobians(mesh, node_field, e, ref_grads)
        vols[e] = quadrature.weights @ dets
    return vols


# ---------------------------------------------------------------------------
# Cartesian mesh generation


def _kuhn_tets():
    """Split the unit cube into 6 positively oriented tets (Kuhn split).

    Every tet contains the main diagonal (0,0,0)-(1,1,1), so adjacent
    cubes produce matching faces.
    """
    from itertools import permutations

    axes = np.eye(3)
    tets = []
    for perm in permutations(range(3)):
        p0 = np.zeros(3)
        p1 = p0 + axes[perm[0]]
        p2 = p1 + axes[perm[1]]
        p3 = p2 + axes[perm[2]]
        verts = [p0, p1, p2, p3]
        mat = np.array([verts[1] - verts[0], verts[2] - verts[0], verts[3] - verts[0]])
        if np.linalg.det(mat) < 0:
            verts = [p0, p2, p1, p3]
        tets.append(np.array(verts))
    return tets


def make_cartesian(dim, n_cells, order, geometry):
    """Uniform mesh of the unit square/cube.

    Quads/hexes subdivide directly into n_cells**dim cells; for
    triangle/tet meshes each quad splits into 2 triangles and each hex
    into 6 tets with a fixed diagonal pattern.  Nodes sit at tensor
    Gauss-Lobatto positions (affine images for simplices) and are shared
    between elements.

    Returns
    -------
    (Mesh, NodeField)
    """
    if n_cells < 1 or order < 1:
        raise ValueError("n_cells and order must be >= 1")
    if GEOMETRY_DIM[geometry] != dim:
        raise ValueError(f"geometry {geometry!r} is not {dim}-dimensional")
    ref = reference_element(geometry, order)
    h = 1.0 / n_cells
    cells = np.stack(
        np.meshgrid(*([np.arange(n_cells)] * dim), indexing="ij"), axis=-1
    ).reshape(-1, dim)

    node_ids = {}
    coords = []
    connectivity = []

    def global_id(point):
        key = tuple(np.round(point, 10))
        nid = node_ids.get(key)
        if nid is None:
            nid = len(coords)
            node_ids[key] = nid
            coords.append(point)
        return nid

    if geometry in ("segment", "quad", "hex"):
        for cell in cells:
            origin = cell * h
            elem_nodes = origin[None, :] + h * ref.basis.nodes
            connectivity.append([global_id(p) for p in elem_nodes])
    elif geometry == "triangle":
        for cell in cells:
            o = cell * h
            v = [o, o + (h, 0.0), o + (h, h), o + (0.0, h)]
            for tri in ((v[0], v[1], v[2]), (v[0], v[2], v[3])):
                v0 = np.asarray(tri[0])
                edges = np.stack([tri[1] - v0, tri[2] - v0])
                elem_nodes = v0[None, :] + ref.basis.nodes @ edges
                connectivity.append([global_id(p) for p in elem_nodes])
    elif geometry == "tet":
        kuhn = _kuhn_tets()
        for cell in cells:
            o = cell * h
            for tet in kuhn:
                verts = o[None, :] + h * tet
                v0 = verts[0]
                edges = verts[1:] - v0
                elem_nodes = v0[None, :] + ref.basis.nodes @ edges
                connectivity.append([global_id(p) for p in elem_nodes])
    else:
        raise ValueError(f"unsupported geometry {geometry!r}")

    coords = np.asarray(coords)
    mesh = Mesh(
        dim=dim,
        order=order,
        geometry=geometry,
        connectivity=np.asarray(connectivity, dtype=int),
        attributes=np.ones(len(connectivity), dtype=int),
        num_nodes=len(coords),
    )
    node_field = NodeField.from_matrix(coords)
    mesh.boundary = _domain_boundary_faces(mesh, node_field)
    return mesh, node_field


def _domain_boundary_faces(mesh, node_field, tol=1e-12):
    """Boundary faces with attributes 1..2*dim by unit-domain side."""
    fni = face_node_indices(mesh.geometry, mesh.order)
    pts = node_field.as_matrix()
    out = []
    for key, incident in sorted(mesh.face_map().items()):
        if len(incident) != 1:
            continue
        e, f = incident[0]
        nodes = mesh.connectivity[e][fni[f]]
        attr = 0
        for a in range(mesh.dim):
            if np.all(np.abs(pts[nodes, a]) <= tol):
                attr = 2 * a + 1
            elif np.all(np.abs(pts[nodes, a] - 1.0) <= tol):
                attr = 2 * a + 2
        out.append((attr, np.asarray(nodes, dtype=int)))
    return out


# ---------------------------------------------------------------------------
# Text format I/O

_FORMAT_HEADER = "tmopfit-mesh v1"


def write_mesh(path, mesh, node_field):
    """Write the line-oriented text format (17 significant digits)."""
    lines = [_FORMAT_HEADER]
    lines.append(f"dim {mesh.dim}")
    lines.append(f"order {mesh.order}")
    lines.append(f"geom {mesh.geometry}")
    lines.append(f"elements {mesh.num_elements}")
    for attr, conn in zip(mesh.attributes, mesh.connectivity):
        lines.append(" ".join([str(int(attr))] + [str(int(c)) for c in conn]))
    lines.append(f"boundary {len(mesh.boundary)}")
    for attr, nodes in mesh.boundary:
        lines.append(" ".join([str(int(attr))] + [str(int(c)) for c in nodes]))
    lines.append(f"nodes {mesh.num_nodes}")
    for row in node_field.as_matrix():
        lines.append(" ".join(f"{x:.17g}" for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Read the text format written by write_mesh.

    Raises
    ------
    MeshParseError
        On malformed or truncated input, with the offending line number.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()

    pos = 0

    def take(expect=None):
        nonlocal pos
        if pos >= len(lines):
            what = expect or "content"
            raise MeshParseError(f"unexpected end of file, expected {what}", pos + 1)
        line = lines[pos]
        pos += 1
        return line

    def take_keyword(keyword):
        line = take(keyword)
        parts = line.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise MeshParseError(f"expected '{keyword} <value>', got {line!r}", pos)
        return parts[1]

    header = take("header")
    if header.strip() != _FORMAT_HEADER:
        raise MeshParseError(
            f"unsupported format/version {header!r}, expected {_FORMAT_HEADER!r}", 1
        )
    try:
        dim = int(take_keyword("dim"))
        order = int(take_keyword("order"))
    except ValueError as exc:
        raise MeshParseError(str(exc), pos) from exc
    geometry = take_keyword("geom")
    if geometry not in GEOMETRY_DIM:
        raise MeshParseError(f"unknown geometry {geometry!r}", pos)

    num_elements = int(take_keyword("elements"))
    connectivity = []
    attributes = []
    for _ in range(num_elements):
        parts = take("element line").split()
        try:
            row = [int(p) for p in parts]
        except ValueError as exc:
            raise MeshParseError(f"bad element line: {exc}", pos) from exc
        if len(row) < 2:
            raise MeshParseError("element line needs attribute and nodes", pos)
        attributes.append(row[0])
        connectivity.append(row[1:])

    num_boundary = int(take_keyword("boundary"))
    boundary = []
    for _ in range(num_boundary):
        parts = take("boundary line").split()
        try:
            row = [int(p) for p in parts]
        except ValueError as exc:
            raise MeshParseError(f"bad boundary line: {exc}", pos) from exc
        boundary.append((row[0], np.asarray(row[1:], dtype=int)))

    num_nodes = int(take_keyword("nodes"))
    coords = np.zeros((num_nodes, dim))
    for i in range(num_nodes):
        parts = take("node line").split()
        if len(parts) != dim:
            raise MeshParseError(
                f"expected {dim} coordinates, got {len(parts)}", pos
            )
        try:
            coords[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise MeshParseError(f"bad coordinate: {exc}", pos) from exc

    mesh = Mesh(
        dim=dim,
        order=order,
        geometry=geometry,
        connectivity=np.asarray(connectivity, dtype=int),
        attributes=np.asarray(attributes, dtype=int),
        boundary=boundary,
        num_nodes=num_nodes,
    )
    if not np.all(np.isfinite(coords)):
        raise MeshParseError("non-finite node coordinate")
    return mesh, NodeField.from_matrix(coords)
