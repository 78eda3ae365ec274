"""Point location and high-order interpolation from a source mesh.

This is the pathway that keeps the level-set function available while
the mesh evolves: queries in physical space are mapped back to
(element, reference coordinate) pairs on the source mesh by inverting
the isoparametric map with a damped Newton iteration, after which any
FE function on that mesh can be interpolated.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TransferFailureError
from .fields import ScalarField
from .mesh import element_node_coords
from .reference import quadrature_for


@dataclass
class PointLocation:
    """Result of locating one physical point."""

    element: int
    ref: np.ndarray
    status: str  # "interior" | "boundary-projected" | "not-found"
    distance: float = 0.0


@dataclass
class LocatorIndex:
    """Inflated per-element bounding boxes on a uniform background grid."""

    boxes: np.ndarray  # (num_elements, 2, dim): lo, hi
    grid_lo: np.ndarray
    grid_hi: np.ndarray
    grid_shape: tuple
    cells: dict  # cell tuple -> list of element ids
    scale: float  # characteristic domain size


def build_index(mesh, node_field, inflate=0.1):
    """Bounding boxes from node and quadrature-point images, inflated."""
    quad = quadrature_for(mesh.geometry, mesh.order)
    basis_vals = mesh.basis.eval(quad.points)
    pts = node_field.as_matrix()
    boxes = np.zeros((mesh.num_elements, 2, mesh.dim))
    for e in range(mesh.num_elements):
        coords = pts[mesh.connectivity[e]]
        samples = np.vstack([coords, basis_vals @ coords])
        lo = samples.min(axis=0)
        hi = samples.max(axis=0)
        pad = inflate * np.maximum(hi - lo, 1e-12)
        boxes[e, 0] = lo - pad
        boxes[e, 1] = hi + pad

    grid_lo = boxes[:, 0, :].min(axis=0)
    grid_hi = boxes[:, 1, :].max(axis=0)
    span = np.maximum(grid_hi - grid_lo, 1e-12)
    n_per_axis = max(1, int(round(mesh.num_elements ** (1.0 / mesh.dim))))
    shape = (n_per_axis,) * mesh.dim

    cells = {}
    for e in range(mesh.num_elements):
        lo_cell = np.floor((boxes[e, 0] - grid_lo) / span * n_per_axis).astype(int)
        hi_cell = np.floor((boxes[e, 1] - grid_lo) / span * n_per_axis).astype(int)
        lo_cell = np.clip(lo_cell, 0, n_per_axis - 1)
        hi_cell = np.clip(hi_cell, 0, n_per_axis - 1)
        ranges = [range(lo_cell[a], hi_cell[a] + 1) for a in range(mesh.dim)]
        for cell in np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(
            -1, mesh.dim
        ):
            cells.setdefault(tuple(cell), []).append(e)

    return LocatorIndex(
        boxes=boxes,
        grid_lo=grid_lo,
        grid_hi=grid_hi,
        grid_shape=shape,
        cells=cells,
        scale=float(span.max()),
    )


def candidate_elements(index, point):
    """Element ids whose inflated boxes may contain the point."""
    n = index.grid_shape[0]
    span = np.maximum(index.grid_hi - index.grid_lo, 1e-12)
    cell = np.floor((np.asarray(point) - index.grid_lo) / span * n).astype(int)
    cell = np.clip(cell, 0, n - 1)
    cands = index.cells.get(tuple(cell), [])
    lo, hi = index.boxes[:, 0, :], index.boxes[:, 1, :]
    return [
        e
        for e in cands
        if np.all(point >= lo[e]) and np.all(point <= hi[e])
    ]


def _invert_map(mesh, coords, point, basis, max_iter=50):
    """Damped Newton for the reference coordinates of a physical point.

    Returns (ref, residual_norm).  The iterate is clamped to the
    reference element each step; the update is halved whenever the
    residual fails to decrease.
    """
    ref = basis.center.copy()
    vals, grads = basis.eval_with_grad(ref[None, :])
    res = vals[0] @ coords - point
    res_norm = np.linalg.norm(res)
    for _ in range(max_iter):
        if res_norm == 0.0:
            break
        a = coords.T @ grads[0]
        try:
            step = np.linalg.solve(a, -res)
        except np.linalg.LinAlgError:
            break
        improved = False
        for _ in range(12):
            trial = basis.clamp(ref + step)
            tvals, tgrads = basis.eval_with_grad(trial[None, :])
            tres = tvals[0] @ coords - point
            tnorm = np.linalg.norm(tres)
            if tnorm < res_norm:
                ref, res, res_norm = trial, tres, tnorm
                grads = tgrads
                improved = True
                break
            step = 0.5 * step
        if not improved:
            break
        if res_norm <= 1e-14 * max(1.0, np.abs(coords).max()):
            break
    return ref, res_norm


def locate(index, mesh, node_field, point, accept_tol=1e-10, project_tol=1e-8):
    """Find the element and reference coordinates containing a point.

    Falls back to a sweep over all elements when the grid candidates
    fail, and to the nearest boundary point (within project_tol of the
    domain) for slightly exterior queries.
    """
    point = np.asarray(point, dtype=float)
    basis = mesh.basis
    pts = node_field.as_matrix()
    scale = index.scale

    best = (None, None, np.inf)

    def try_elements(elems):
        nonlocal best
        for e in elems:
            coords = pts[mesh.connectivity[e]]
            ref, res_norm = _invert_map(mesh, coords, point, basis)
            if res_norm < best[2]:
                best = (e, ref, res_norm)
            if res_norm <= accept_tol * scale:
                return True
        return False

    hit = try_elements(candidate_elements(index, point))
    if not hit and best[2] > accept_tol * scale:
        hit = try_elements(
            e for e in range(mesh.num_elements)
        )
    e, ref, res_norm = best
    if e is not None and res_norm <= accept_tol * scale:
        return PointLocation(e, ref, "interior")
    if e is not None and res_norm <= project_tol * scale:
        return PointLocation(e, ref, "boundary-projected", float(res_norm))
    return PointLocation(
        -1 if e is None else e,
        None if e is None else ref,
        "not-found",
        float(res_norm if e is not None else np.inf),
    )


def locate_many(index, mesh, node_field, points):
    """Locate a batch of points; raises on any not-found."""
    locations = []
    missing = []
    for p in np.atleast_2d(points):
        loc = locate(index, mesh, node_field, p)
        if loc.status == "not-found":
            missing.append(p)
        locations.append(loc)
    if missing:
        raise TransferFailureError(missing)
    return locations


def interpolate(field, node_field, index, points):
    """Evaluate an FE function at physical points via point location."""
    locations = locate_many(index, field.mesh, node_field, points)
    basis = field.mesh.basis
    out = np.zeros(len(locations))
    for i, loc in enumerate(locations):
        vals = basis.eval(loc.ref[None, :])[0]
        out[i] = vals @ field.coefficients[field.mesh.connectivity[loc.element]]
    return out


def transfer_field(sigma0, nodes0, current_mesh, current_nodes, index=None):
    """Interpolate a field from its source mesh onto a current mesh.

    Coefficient i of the result is sigma0 evaluated at the position of
    current node i (nodal interpolation; the bases are interpolatory).
    """
    if index is None:
        index = build_index(sigma0.mesh, nodes0)
    values = interpolate(sigma0, nodes0, index, current_nodes.as_matrix())
    return ScalarField(current_mesh, values)
