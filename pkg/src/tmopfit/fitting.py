"""Weak surface-fitting penalty and interface-node marking.

The penalty integrates the squared restricted level-set function over
the target elements,

    F_sigma = (weight / normalization) * sum_E int sbar(x)^2 det(W),

where sbar keeps the sigma coefficients only at marked nodes.  Because
the quadrature lives at fixed reference points and W is fixed, F_sigma
depends on the node positions solely through the sampled values
sigma(x_s) at marked nodes; its derivatives therefore combine the
sampled gradient/Hessian of sigma at those nodes with the fixed basis
tables, and match finite differences of the value to round-off.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyMarkedSetError
from .fields import AnalyticLevelSet, ScalarField, discrete_gradient, eval_field
from .mesh import element_volumes
from .reference import face_node_indices, quadrature_for
from .transfer import build_index, interpolate, locate_many


@dataclass
class MarkedSet:
    """Sorted unique node ids weakly constrained to the zero level set."""

    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.unique(np.asarray(self.indices, dtype=int))
        if len(self.indices) == 0:
            raise EmptyMarkedSetError("marked set is empty")

    def __len__(self):
        return len(self.indices)

    def __contains__(self, i):
        return bool(np.isin(i, self.indices))


def mark_interface_nodes(mesh, mode, sigma=None):
    """Select the nodes to constrain onto the zero level set.

    mode "element-attribute": all nodes on faces shared by elements with
    differing attributes (tangential-relaxation case, where the marked
    set is known by definition).  mode "sigma-sign": element attributes
    are first assigned from the sign of sigma at each element's
    reference center, then the attribute rule applies (fitting case).
    """
    if mode == "sigma-sign":
        if sigma is None:
            raise ValueError("sigma-sign marking needs a sigma field")
        attrs = attributes_from_sign(mesh, sigma)
    elif mode == "element-attribute":
        attrs = mesh.attributes
        if len(np.unique(attrs)) < 2:
            raise EmptyMarkedSetError(
                "attribute marking needs at least two element attributes"
            )
    else:
        raise ValueError(f"unknown marking mode {mode!r}")

    fni = face_node_indices(mesh.geometry, mesh.order)
    marked = set()
    for key, incident in mesh.face_map().items():
        if len(incident) != 2:
            continue
        (e1, f1), (e2, f2) = incident
        if attrs[e1] != attrs[e2]:
            marked.update(mesh.connectivity[e1][fni[f1]])
    if not marked:
        raise EmptyMarkedSetError("no interface faces between differing attributes")
    return MarkedSet(np.array(sorted(marked)))


def attributes_from_sign(mesh, sigma):
    """Per-element attribute 1/2 from the sign of sigma at the center."""
    center = mesh.basis.center
    attrs = np.ones(mesh.num_elements, dtype=int)
    for e in range(mesh.num_elements):
        attrs[e] = 1 if eval_field(sigma, None, e, center) < 0.0 else 2
    return attrs


def restrict(sigma, marked):
    """Restricted field: coefficients zeroed outside the marked set."""
    coeff = np.zeros_like(sigma.coefficients)
    coeff[marked.indices] = sigma.coefficients[marked.indices]
    return ScalarField(sigma.mesh, coeff)


# ---------------------------------------------------------------------------
# Level-set sources


class DiscreteLevelSet:
    """Level set given as an FE field on a (frozen) source mesh.

    Queries locate each point in the source mesh; the value and the
    gradient both come from the containing element's polynomial, so the
    gradient is the exact derivative of the interpolated value away
    from element faces (required for consistent line searches).  Second
    derivatives come from one application of the FE discrete gradient
    operator to sigma, differentiated element-wise.
    """

    def __init__(self, field, node_field):
        self.field = field
        self.node_field = node_field
        self.mesh = field.mesh
        self.dim = field.mesh.dim
        self.index = build_index(field.mesh, node_field)
        self._grad_fields = None
        self._loc_cache = (None, None)

    def _locations(self, points):
        # One-slot memo: value/gradient/Hessian queries within a solver
        # iterate hit the same marked-node positions repeatedly.
        points = np.atleast_2d(np.asarray(points, dtype=float))
        key = points.tobytes()
        if self._loc_cache[0] == key:
            return self._loc_cache[1]
        locations = locate_many(self.index, self.mesh, self.node_field, points)
        self._loc_cache = (key, locations)
        return locations

    def values(self, points):
        locations = self._locations(points)
        mesh = self.mesh
        out = np.zeros(len(locations))
        for i, loc in enumerate(locations):
            conn = mesh.connectivity[loc.element]
            vals = mesh.basis.eval(loc.ref[None, :])[0]
            out[i] = vals @ self.field.coefficients[conn]
        return out

    def _element_gradients(self, coefficients_list, locations):
        """Per-point physical gradients of FE coefficient vectors, all
        evaluated on the located elements."""
        mesh = self.mesh
        pts = self.node_field.as_matrix()
        out = np.zeros((len(locations), len(coefficients_list), self.dim))
        for i, loc in enumerate(locations):
            conn = mesh.connectivity[loc.element]
            _, grads = mesh.basis.eval_with_grad(loc.ref[None, :])
            a = pts[conn].T @ grads[0]
            for j, coeff in enumerate(coefficients_list):
                out[i, j] = np.linalg.solve(a.T, grads[0].T @ coeff[conn])
        return out

    def gradients(self, points):
        locations = self._locations(points)
        g = self._element_gradients([self.field.coefficients], locations)
        return g[:, 0, :]

    def hessians(self, points):
        if self._grad_fields is None:
            self._grad_fields = discrete_gradient(self.field, self.node_field)
        locations = self._locations(points)
        coeffs = [g.coefficients for g in self._grad_fields]
        rows = self._element_gradients(coeffs, locations)  # (n, dim, dim)
        return 0.5 * (rows + rows.transpose(0, 2, 1))

    def sample(self, points, with_hessians=False):
        """Values, gradients, and optionally Hessians with one location
        pass per point."""
        locations = self._locations(points)
        vals = self.values(points)
        coeffs = [self.field.coefficients]
        if with_hessians:
            if self._grad_fields is None:
                self._grad_fields = discrete_gradient(self.field, self.node_field)
            coeffs += [g.coefficients for g in self._grad_fields]
        block = self._element_gradients(coeffs, locations)
        grads = block[:, 0, :]
        if not with_hessians:
            return vals, grads, None
        hess = block[:, 1:, :]
        return vals, grads, 0.5 * (hess + hess.transpose(0, 2, 1))


def as_level_set_source(source, node_field=None):
    """Normalize a penalty source: analytic level set or discrete field."""
    if isinstance(source, (AnalyticLevelSet, DiscreteLevelSet)):
        return source
    if isinstance(source, ScalarField):
        if node_field is None:
            raise ValueError("discrete sigma source needs its node field")
        return DiscreteLevelSet(source, node_field)
    raise TypeError(f"unsupported level-set source {type(source).__name__}")


def _sample_source(source, points, with_hessians=False):
    """(values, gradients, hessians-or-None) with one pass where possible."""
    if hasattr(source, "sample"):
        return source.sample(points, with_hessians=with_hessians)
    vals = source.values(points)
    grads = source.gradients(points)
    hess = source.hessians(points) if with_hessians else None
    return vals, grads, hess


# ---------------------------------------------------------------------------
# Penalty configuration and evaluation


@dataclass
class PenaltyConfig:
    """Weight, normalization, and level-set source of the fitting term.

    normalization is N_E for shape-only targets and the domain volume
    for volumetric targets, which keeps the penalty invariant under mesh
    refinement and domain scaling.
    """

    weight: float
    source: object
    normalization: float
    hessian_mode: str = "analytic"  # or "fd-of-gradient"

    def __post_init__(self):
        if self.weight < 0.0:
            raise ValueError("penalty weight must be nonnegative")
        if self.normalization <= 0.0:
            raise ValueError("normalization must be positive")


def make_penalty(
    weight, source, mesh, node_field, targets, hessian_mode="analytic"
):
    """PenaltyConfig with the normalization implied by the target kind."""
    if targets.volumetric:
        normalization = float(element_volumes(mesh, node_field).sum())
    else:
        normalization = float(mesh.num_elements)
    return PenaltyConfig(
        weight=weight,
        source=as_level_set_source(source, node_field),
        normalization=normalization,
        hessian_mode=hessian_mode,
    )


class _PenaltyTables:
    """Per-mesh quadrature tables and marked-element bookkeeping."""

    def __init__(self, mesh, marked, targets, quadrature):
        self.quadrature = quadrature
        self.basis_vals = mesh.basis.eval(quadrature.points)  # (N_q, N_w)
        marked_mask = np.zeros(mesh.num_nodes, dtype=bool)
        marked_mask[marked.indices] = True
        self.elements = []
        for e in range(mesh.num_elements):
            conn = mesh.connectivity[e]
            local = np.flatnonzero(marked_mask[conn])
            if len(local):
                self.elements.append((e, conn, local))
        self.wdet = quadrature.weights[None, :] * targets.detw[:, None]


def _tables(mesh, marked, targets, quadrature):
    if quadrature is None:
        quadrature = quadrature_for(mesh.geometry, mesh.order)
    return _PenaltyTables(mesh, marked, targets, quadrature)


def penalty_value(penalty, marked, mesh, node_field, targets, quadrature=None):
    """F_sigma at the current node positions.

    Marked coefficients are sampled from the level-set source at the
    current marked-node positions, so the value is consistent with the
    gradient under node motion.
    """
    if penalty.weight == 0.0:
        return 0.0
    tables = _tables(mesh, marked, targets, quadrature)
    sbar = np.zeros(mesh.num_nodes)
    sbar[marked.indices] = penalty.source.values(
        node_field.as_matrix()[marked.indices]
    )
    total = 0.0
    for e, conn, _ in tables.elements:
        vals_q = tables.basis_vals @ sbar[conn]
        total += tables.wdet[e] @ vals_q**2
    return penalty.weight / penalty.normalization * float(total)


def penalty_gradient(penalty, marked, mesh, node_field, targets, quadrature=None):
    """Derivative of F_sigma with respect to all node coordinates.

    Entry (a, i) is nonzero only for marked nodes i: it pairs the
    level-set gradient sampled at the moving node (the motion of the
    sampling point x_s) with the fixed integral weight of that node's
    basis function against sbar.
    """
    grad = np.zeros(mesh.dim * mesh.num_nodes)
    if penalty.weight == 0.0:
        return grad
    tables = _tables(mesh, marked, targets, quadrature)
    pts = node_field.as_matrix()[marked.indices]
    svals, sgrads, _ = _sample_source(penalty.source, pts)
    sbar = np.zeros(mesh.num_nodes)
    sbar[marked.indices] = svals
    gfull = np.zeros((mesh.num_nodes, mesh.dim))
    gfull[marked.indices] = sgrads
    coeff = 2.0 * penalty.weight / penalty.normalization
    for e, conn, local in tables.elements:
        vals_q = tables.basis_vals @ sbar[conn]
        weight_q = tables.wdet[e] * vals_q
        moments = weight_q @ tables.basis_vals[:, local]  # (n_local,)
        for a in range(mesh.dim):
            grad[a * mesh.num_nodes + conn[local]] += (
                coeff * moments * gfull[conn[local], a]
            )
    return grad


def penalty_hessian(
    penalty, marked, mesh, node_field, targets, quadrature=None, mode=None
):
    """Second derivative of F_sigma as a sparse symmetric matrix.

    Analytic mode combines the product of first-derivative factors with
    the sbar-weighted second derivatives of sigma at the marked nodes;
    "fd-of-gradient" differences penalty_gradient columnwise over the
    marked degrees of freedom instead.
    """
    mode = mode or penalty.hessian_mode
    ndof = mesh.dim * mesh.num_nodes
    if penalty.weight == 0.0:
        return sp.csr_matrix((ndof, ndof))
    if mode == "fd-of-gradient":
        return _penalty_hessian_fd(
            penalty, marked, mesh, node_field, targets, quadrature
        )
    if mode != "analytic":
        raise ValueError(f"unknown penalty hessian mode {mode!r}")

    tables = _tables(mesh, marked, targets, quadrature)
    pts = node_field.as_matrix()[marked.indices]
    svals, sgrads, shess = _sample_source(penalty.source, pts, with_hessians=True)
    sbar = np.zeros(mesh.num_nodes)
    sbar[marked.indices] = svals
    gfull = np.zeros((mesh.num_nodes, mesh.dim))
    gfull[marked.indices] = sgrads
    hess_by_node = {int(n): shess[i] for i, n in enumerate(marked.indices)}

    coeff = 2.0 * penalty.weight / penalty.normalization
    rows, cols, vals = [], [], []
    nnod = mesh.num_nodes
    for e, conn, local in tables.elements:
        nodes = conn[local]
        vals_q = tables.basis_vals @ sbar[conn]
        phi = tables.basis_vals[:, local]  # (N_q, n_local)
        mass = (tables.wdet[e][:, None] * phi).T @ phi  # (n_local, n_local)
        moments = (tables.wdet[e] * vals_q) @ phi  # (n_local,)
        g = gfull[nodes]  # (n_local, dim)
        for a in range(mesh.dim):
            for b in range(mesh.dim):
                block = coeff * np.outer(g[:, a], g[:, b]) * mass
                diag = coeff * moments * np.array(
                    [hess_by_node[int(n)][a, b] for n in nodes]
                )
                block[np.arange(len(nodes)), np.arange(len(nodes))] += diag
                rows.append(np.repeat(a * nnod + nodes, len(nodes)))
                cols.append(np.tile(b * nnod + nodes, len(nodes)))
                vals.append(block.ravel())
    if not rows:
        return sp.csr_matrix((ndof, ndof))
    h = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ).tocsr()
    return 0.5 * (h + h.T)


def _penalty_hessian_fd(penalty, marked, mesh, node_field, targets, quadrature):
    """Columnwise finite differences of penalty_gradient.

    F_sigma depends on the marked node positions only, so only those
    columns can be nonzero.
    """
    ndof = mesh.dim * mesh.num_nodes
    h = 1e-6
    cols = {}
    work = node_field.copy()
    for a in range(mesh.dim):
        for i in marked.indices:
            dof = a * mesh.num_nodes + int(i)
            work.coords[dof] += h
            gp = penalty_gradient(penalty, marked, mesh, work, targets, quadrature)
            work.coords[dof] -= 2.0 * h
            gm = penalty_gradient(penalty, marked, mesh, work, targets, quadrature)
            work.coords[dof] += h
            cols[dof] = (gp - gm) / (2.0 * h)
    rows_idx, cols_idx, vals = [], [], []
    for dof, col in cols.items():
        nz = np.flatnonzero(col)
        rows_idx.append(nz)
        cols_idx.append(np.full(len(nz), dof))
        vals.append(col[nz])
    if not rows_idx:
        return sp.csr_matrix((ndof, ndof))
    hmat = sp.coo_matrix(
        (
            np.concatenate(vals),
            (np.concatenate(rows_idx), np.concatenate(cols_idx)),
        ),
        shape=(ndof, ndof),
    ).tocsr()
    return 0.5 * (hmat + hmat.T)
