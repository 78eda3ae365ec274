"""Assembly of the total objective F = F_mu + F_sigma over all nodes.

F_mu integrates the quality metric in target coordinates: the reference
quadrature weights are multiplied by det W.  Degrees of freedom flagged
in the fixed-node mask are removed from the gradient and replaced by
identity rows/columns in the Hessian.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NonpositiveDeterminantError
from .fitting import penalty_gradient, penalty_hessian, penalty_value
from .mesh import element_node_coords
from .quality import metric_batch, metric_values
from .reference import quadrature_for


@dataclass
class ObjectiveConfig:
    """Everything needed to evaluate F: metric, targets, penalty, mask."""

    metric_id: str
    targets: object
    gamma: float = 0.5
    penalty: object = None  # PenaltyConfig or None
    marked: object = None  # MarkedSet or None
    fixed_mask: np.ndarray = None  # bool, length dim * num_nodes; True = fixed
    metric_hessian_mode: str = "analytic"

    def quadrature(self, mesh):
        return quadrature_for(mesh.geometry, mesh.order)


@dataclass
class ObjectiveReport:
    """Objective breakdown at one mesh configuration."""

    f: float
    f_mu: float
    f_sigma: float
    grad_norm: float
    worst_mu: float


def _basis_tables(mesh, quadrature):
    return mesh.basis.eval_with_grad(quadrature.points)


def _element_t(mesh, node_field, e, ref_grads, targets):
    coords = element_node_coords(mesh, node_field, e)
    a = np.einsum("id,qib->qdb", coords, ref_grads)
    t = a @ targets.winv[e]
    return t


def value(config, mesh, node_field, with_worst=False):
    """(F, F_mu, F_sigma) and optionally the worst metric value."""
    quad = config.quadrature(mesh)
    _, ref_grads = _basis_tables(mesh, quad)
    targets = config.targets
    f_mu = 0.0
    worst = 0.0
    for e in range(mesh.num_elements):
        t = _element_t(mesh, node_field, e, ref_grads, targets)
        tau = np.linalg.det(t)
        if np.any(tau <= 0.0):
            raise NonpositiveDeterminantError(e, float(tau.min()))
        vals = metric_values(config.metric_id, t, config.gamma)
        f_mu += (quad.weights * targets.detw[e]) @ vals
        if with_worst:
            worst = max(worst, float(vals.max()))
    f_sigma = 0.0
    if config.penalty is not None and config.marked is not None:
        f_sigma = penalty_value(
            config.penalty, config.marked, mesh, node_field, targets, quad
        )
    total = float(f_mu) + float(f_sigma)
    if with_worst:
        return total, float(f_mu), float(f_sigma), worst
    return total, float(f_mu), float(f_sigma)


def evaluate(config, mesh, node_field):
    """Full ObjectiveReport including the masked gradient norm."""
    total, f_mu, f_sigma, worst = value(config, mesh, node_field, with_worst=True)
    grad = gradient(config, mesh, node_field)
    return ObjectiveReport(total, f_mu, f_sigma, float(np.linalg.norm(grad)), worst)


def gradient(config, mesh, node_field):
    """Masked derivative of F with respect to all node coordinates."""
    quad = config.quadrature(mesh)
    _, ref_grads = _basis_tables(mesh, quad)
    targets = config.targets
    nnod = mesh.num_nodes
    grad = np.zeros(mesh.dim * nnod)
    for e in range(mesh.num_elements):
        t = _element_t(mesh, node_field, e, ref_grads, targets)
        tau = np.linalg.det(t)
        if np.any(tau <= 0.0):
            raise NonpositiveDeterminantError(e, float(tau.min()))
        _, dmu, _ = metric_batch(config.metric_id, t, config.gamma, order=1)
        dhat = np.einsum("qib,be->qie", ref_grads, targets.winv[e])
        wdet = quad.weights * targets.detw[e]
        local = np.einsum("q,qie,qae->ia", wdet, dhat, dmu)
        conn = mesh.connectivity[e]
        for a in range(mesh.dim):
            np.add.at(grad, a * nnod + conn, local[:, a])
    if config.penalty is not None and config.marked is not None:
        grad += penalty_gradient(
            config.penalty, config.marked, mesh, node_field, targets, quad
        )
    if config.fixed_mask is not None:
        grad[config.fixed_mask] = 0.0
    return grad


def hessian(config, mesh, node_field):
    """Masked sparse symmetric Hessian of F."""
    quad = config.quadrature(mesh)
    _, ref_grads = _basis_tables(mesh, quad)
    targets = config.targets
    nnod = mesh.num_nodes
    ndof = mesh.dim * nnod
    nw = mesh.basis.num_nodes

    rows, cols, vals = [], [], []
    for e in range(mesh.num_elements):
        t = _element_t(mesh, node_field, e, ref_grads, targets)
        tau = np.linalg.det(t)
        if np.any(tau <= 0.0):
            raise NonpositiveDeterminantError(e, float(tau.min()))
        _, _, d2mu = metric_batch(
            config.metric_id, t, config.gamma, config.metric_hessian_mode
        )
        dhat = np.einsum("qib,be->qie", ref_grads, targets.winv[e])
        wdet = quad.weights * targets.detw[e]
        local = _local_hessian(wdet, d2mu, dhat, mesh.dim, nw)
        conn = mesh.connectivity[e]
        dof = np.stack([a * nnod + conn for a in range(mesh.dim)], axis=1)
        dof_flat = dof.reshape(-1)  # matches (i, a) raveling of local
        rows.append(np.repeat(dof_flat, nw * mesh.dim))
        cols.append(np.tile(dof_flat, nw * mesh.dim))
        vals.append(local.reshape(-1))
    h = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ).tocsr()
    if config.penalty is not None and config.marked is not None:
        h = h + penalty_hessian(
            config.penalty, config.marked, mesh, node_field, targets, quad
        )
    h = 0.5 * (h + h.T)
    if config.fixed_mask is not None:
        h = _mask_hessian(h, config.fixed_mask)
    return h


def _local_hessian(wdet, d2mu, dhat, dim, nw):
    """Element Hessian block local[i, a, j, b] via batched matmuls.

    local = sum_q wdet_q  dhat[q,i,e] d2mu[q,a,e,b,f] dhat[q,j,f].
    """
    nq = len(wdet)
    # (q, a, b, e, f) -> batched (e, f) matrices per (q, a, b)
    k = (wdet[:, None, None, None, None] * d2mu).transpose(0, 1, 3, 2, 4)
    k = np.ascontiguousarray(k).reshape(nq, dim * dim, dim, dim)
    x = np.matmul(dhat[:, None, :, :], k)  # (q, ab, nw, f)
    y = np.matmul(x, dhat[:, None, :, :].transpose(0, 1, 3, 2))  # (q, ab, nw, nw)
    local_ab = y.sum(axis=0).reshape(dim, dim, nw, nw)
    return np.ascontiguousarray(local_ab.transpose(2, 0, 3, 1))


def _mask_hessian(h, mask):
    """Replace masked rows/columns by identity."""
    fixed = np.flatnonzero(mask)
    if len(fixed) == 0:
        return h
    h = h.tocoo()
    keep = ~(mask[h.row] | mask[h.col])
    rows = np.concatenate([h.row[keep], fixed])
    cols = np.concatenate([h.col[keep], fixed])
    vals = np.concatenate([h.data[keep], np.ones(len(fixed))])
    return sp.coo_matrix((vals, (rows, cols)), shape=h.shape).tocsr()


def boundary_fixed_mask(mesh):
    """Mask fixing every domain-boundary node in all components."""
    mask = np.zeros(mesh.dim * mesh.num_nodes, dtype=bool)
    ids = mesh.boundary_node_ids()
    for a in range(mesh.dim):
        mask[a * mesh.num_nodes + ids] = True
    return mask


def fix_nodes(mask, mesh, node_ids):
    """Additionally fix the given nodes in all components."""
    mask = mask.copy()
    ids = np.asarray(node_ids, dtype=int)
    for a in range(mesh.dim):
        mask[a * mesh.num_nodes + ids] = True
    return mask
