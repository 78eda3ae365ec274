"""Scalar finite element functions on a mesh.

Fields share the mesh's nodal basis, so coefficient i is the value at
node i.  The level-set function sigma and its derived gradient/Hessian
fields are all represented this way.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularJacobianError
from .mesh import element_node_coords


@dataclass
class ScalarField:
    """Nodal coefficients of a scalar FE function on a mesh."""

    mesh: object
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if len(self.coefficients) != self.mesh.num_nodes:
            raise ValueError(
                f"field has {len(self.coefficients)} coefficients for a mesh "
                f"with {self.mesh.num_nodes} nodes"
            )

    def copy(self):
        return ScalarField(self.mesh, self.coefficients.copy())


@dataclass
class AnalyticLevelSet:
    """Closed-form level set: evaluator, gradient, optional Hessian.

    The zero isocontour defines the surface of interest.  All callables
    take an (n, dim) array of physical points.
    """

    kind: str
    dim: int
    fn: callable
    grad_fn: callable
    hess_fn: callable = None

    def values(self, points):
        return np.asarray(self.fn(np.atleast_2d(points)), dtype=float)

    def gradients(self, points):
        return np.asarray(self.grad_fn(np.atleast_2d(points)), dtype=float)

    def hessians(self, points, step=1e-6):
        """Second derivatives; central differences of the gradient if no
        closed form was supplied."""
        points = np.atleast_2d(points)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(points), dtype=float)
        n, d = points.shape
        hess = np.zeros((n, d, d))
        for a in range(d):
            shift = np.zeros(d)
            shift[a] = step
            gp = self.gradients(points + shift)
            gm = self.gradients(points - shift)
            hess[:, :, a] = (gp - gm) / (2.0 * step)
        return 0.5 * (hess + hess.transpose(0, 2, 1))


def project(analytic, mesh, node_field):
    """Nodal interpolation of an analytic function onto the mesh basis."""
    values = analytic.values(node_field.as_matrix())
    return ScalarField(mesh, values)


def eval_field(field, node_field, element_id, ref_point):
    """Field value at a reference point of an element."""
    vals = field.mesh.basis.eval(np.atleast_2d(ref_point))[0]
    return float(vals @ field.coefficients[field.mesh.connectivity[element_id]])


def eval_field_grad(field, node_field, element_id, ref_point):
    """Physical gradient A^{-T} grad_ref at a reference point."""
    mesh = field.mesh
    coords = element_node_coords(mesh, node_field, element_id)
    _, grads = mesh.basis.eval_with_grad(np.atleast_2d(ref_point))
    a = coords.T @ grads[0]
    _check_not_singular(a, element_id)
    ref_grad = grads[0].T @ field.coefficients[mesh.connectivity[element_id]]
    return np.linalg.solve(a.T, ref_grad)


def _check_not_singular(a, element_id):
    det = np.linalg.det(a)
    scale = max(np.linalg.norm(a) / np.sqrt(a.shape[0]), 1e-30) ** a.shape[0]
    if abs(det) <= 1e-14 * scale:
        raise SingularJacobianError(
            f"singular Jacobian (det {det:.3e}) in element {element_id}"
        )


def nodal_physical_gradients(field, node_field):
    """Physical field gradient at every node, averaged over adjacent
    elements; shape (num_nodes, dim).

    Nodes shared between elements can have discontinuous per-element
    gradients; contributions are arithmetic-averaged.
    """
    mesh = field.mesh
    basis = mesh.basis
    _, ref_grads = basis.eval_with_grad(basis.nodes)  # (N_w, N_w, d)
    pts = node_field.as_matrix()
    out = np.zeros((mesh.num_nodes, mesh.dim))
    counts = np.zeros(mesh.num_nodes)
    for e in range(mesh.num_elements):
        conn = mesh.connectivity[e]
        coords = pts[conn]
        coeff = field.coefficients[conn]
        for loc in range(len(conn)):
            a = coords.T @ ref_grads[loc]
            _check_not_singular(a, e)
            g = np.linalg.solve(a.T, ref_grads[loc].T @ coeff)
            out[conn[loc]] += g
            counts[conn[loc]] += 1
    return out / counts[:, None]


def discrete_gradient(field, node_field):
    """FE discrete gradient: one ScalarField per spatial component."""
    grads = nodal_physical_gradients(field, node_field)
    return [ScalarField(field.mesh, grads[:, a]) for a in range(field.mesh.dim)]
