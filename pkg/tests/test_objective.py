"""Total objective assembly: values, gradients, Hessians, masking."""

import numpy as np
import pytest

from tmopfit.errors import NonpositiveDeterminantError
from tmopfit.fields import AnalyticLevelSet
from tmopfit.fitting import MarkedSet, make_penalty
from tmopfit.mesh import NodeField, make_cartesian
from tmopfit.objective import (
    ObjectiveConfig,
    boundary_fixed_mask,
    evaluate,
    fix_nodes,
    gradient,
    hessian,
    value,
)
from tmopfit.quality import make_targets


def perturbed(mesh, nodes, seed=0, amplitude=0.02):
    rng = np.random.default_rng(seed)
    interior = np.setdiff1d(np.arange(mesh.num_nodes), mesh.boundary_node_ids())
    mat = nodes.as_matrix().copy()
    mat[interior] += amplitude * rng.uniform(-1, 1, (len(interior), mesh.dim))
    return NodeField.from_matrix(mat)


def test_uniform_mesh_zero_objective():
    mesh, nodes = make_cartesian(2, 4, 2, "quad")
    cfg = ObjectiveConfig("mu2", make_targets(mesh, nodes, "unit"))
    f, f_mu, f_sigma = value(cfg, mesh, nodes)
    assert abs(f) < 1e-13 and f_sigma == 0.0


def test_displaced_mesh_positive_objective():
    mesh, nodes = make_cartesian(2, 4, 2, "quad")
    cfg = ObjectiveConfig("mu2", make_targets(mesh, nodes, "unit"))
    f, _, _ = value(cfg, mesh, perturbed(mesh, nodes, seed=1))
    assert f > 0.0


def test_report_additivity_and_fields():
    mesh, nodes = make_cartesian(2, 3, 1, "quad")
    targets = make_targets(mesh, nodes, "initial-size")
    ls = AnalyticLevelSet(
        "composite", 2,
        lambda p: p[:, 1] - 0.47,
        lambda p: np.tile([0.0, 1.0], (len(p), 1)),
        lambda p: np.zeros((len(p), 2, 2)),
    )
    marked = MarkedSet(np.array([5, 6, 7]))
    penalty = make_penalty(3.0, ls, mesh, nodes, targets)
    cfg = ObjectiveConfig("mu80", targets, penalty=penalty, marked=marked)
    current = perturbed(mesh, nodes, seed=2)
    report = evaluate(cfg, mesh, current)
    assert report.f_sigma > 0.0
    assert abs(report.f - (report.f_mu + report.f_sigma)) < 1e-14 * max(
        1.0, abs(report.f)
    )
    assert report.grad_norm > 0.0
    assert report.worst_mu > 0.0


def test_gradient_zero_at_uniform_mesh():
    mesh, nodes = make_cartesian(2, 4, 1, "quad")
    cfg = ObjectiveConfig("mu2", make_targets(mesh, nodes, "unit"))
    assert np.abs(gradient(cfg, mesh, nodes)).max() < 1e-12


def test_gradient_matches_fd_at_random_meshes():
    rng = np.random.default_rng(3)
    mesh, nodes = make_cartesian(2, 2, 2, "quad")
    targets = make_targets(mesh, nodes, "initial-size")
    cfg = ObjectiveConfig("mu80", targets)
    for seed in range(3):
        current = perturbed(mesh, nodes, seed=seed)
        g = gradient(cfg, mesh, current)
        step = 1e-6
        fd = np.zeros_like(g)
        work = current.copy()
        for dof in range(len(g)):
            work.coords[dof] += step
            fp = value(cfg, mesh, work)[0]
            work.coords[dof] -= 2 * step
            fm = value(cfg, mesh, work)[0]
            work.coords[dof] += step
            fd[dof] = (fp - fm) / (2 * step)
        assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-5


def test_masked_entries_zero():
    mesh, nodes = make_cartesian(2, 3, 2, "quad")
    mask = boundary_fixed_mask(mesh)
    cfg = ObjectiveConfig(
        "mu80", make_targets(mesh, nodes, "initial-size"), fixed_mask=mask
    )
    g = gradient(cfg, mesh, perturbed(mesh, nodes, seed=4))
    assert np.abs(g[mask]).max() == 0.0


def test_hessian_symmetric_and_matches_fd():
    mesh, nodes = make_cartesian(2, 2, 2, "quad")
    targets = make_targets(mesh, nodes, "initial-size")
    cfg = ObjectiveConfig("mu80", targets)
    current = perturbed(mesh, nodes, seed=5)
    h = hessian(cfg, mesh, current).toarray()
    assert np.abs(h - h.T).max() < 1e-10
    step = 1e-6
    fd = np.zeros_like(h)
    work = current.copy()
    for dof in range(h.shape[0]):
        work.coords[dof] += step
        gp = gradient(cfg, mesh, work)
        work.coords[dof] -= 2 * step
        gm = gradient(cfg, mesh, work)
        work.coords[dof] += step
        fd[:, dof] = (gp - gm) / (2 * step)
    assert np.linalg.norm(h - fd) / np.linalg.norm(fd) < 1e-4


def test_hessian_without_penalty_equals_pure_tmop():
    mesh, nodes = make_cartesian(2, 2, 1, "quad")
    targets = make_targets(mesh, nodes, "unit")
    ls = AnalyticLevelSet(
        "composite", 2, lambda p: p[:, 0] - 0.4,
        lambda p: np.tile([1.0, 0.0], (len(p), 1)),
        lambda p: np.zeros((len(p), 2, 2)),
    )
    off = make_penalty(0.0, ls, mesh, nodes, targets)
    marked = MarkedSet(np.array([4]))
    cfg_plain = ObjectiveConfig("mu2", targets)
    cfg_off = ObjectiveConfig("mu2", targets, penalty=off, marked=marked)
    current = perturbed(mesh, nodes, seed=6)
    h1 = hessian(cfg_plain, mesh, current).toarray()
    h2 = hessian(cfg_off, mesh, current).toarray()
    assert np.array_equal(h1, h2)


def test_masked_hessian_rows_are_identity():
    mesh, nodes = make_cartesian(2, 2, 2, "quad")
    mask = boundary_fixed_mask(mesh)
    cfg = ObjectiveConfig(
        "mu80", make_targets(mesh, nodes, "initial-size"), fixed_mask=mask
    )
    h = hessian(cfg, mesh, perturbed(mesh, nodes, seed=7)).toarray()
    fixed = np.flatnonzero(mask)
    free = np.flatnonzero(~mask)
    assert np.abs(h[np.ix_(fixed, free)]).max() == 0.0
    assert np.allclose(h[fixed, fixed], 1.0)


def test_translation_invariance_and_gradient_sum():
    mesh, nodes = make_cartesian(2, 3, 2, "quad")
    targets = make_targets(mesh, nodes, "initial-size")
    cfg = ObjectiveConfig("mu80", targets)
    current = perturbed(mesh, nodes, seed=8)
    shifted = current.copy()
    shifted.coords[: mesh.num_nodes] += 0.37
    shifted.coords[mesh.num_nodes :] -= 0.11
    f1 = value(cfg, mesh, current)[1]
    f2 = value(cfg, mesh, shifted)[1]
    assert abs(f1 - f2) < 1e-12 * max(1.0, abs(f1))
    g = gradient(cfg, mesh, current)
    assert abs(g[: mesh.num_nodes].sum()) < 1e-10
    assert abs(g[mesh.num_nodes :].sum()) < 1e-10


def test_inverted_mesh_reports_element():
    mesh, nodes = make_cartesian(2, 2, 1, "quad")
    mat = nodes.as_matrix().copy()
    conn = mesh.connectivity[3]
    mat[conn[0]], mat[conn[1]] = mat[conn[1]].copy(), mat[conn[0]].copy()
    bad = NodeField.from_matrix(mat)
    cfg = ObjectiveConfig("mu2", make_targets(mesh, nodes, "unit"))
    with pytest.raises(NonpositiveDeterminantError) as err:
        value(cfg, mesh, bad)
    assert err.value.element_id is not None


def test_fix_nodes_extends_mask():
    mesh, nodes = make_cartesian(2, 2, 1, "quad")
    mask = boundary_fixed_mask(mesh)
    interior = np.setdiff1d(np.arange(mesh.num_nodes), mesh.boundary_node_ids())
    node = int(interior[0])
    mask2 = fix_nodes(mask, mesh, [node])
    assert mask2[node] and mask2[mesh.num_nodes + node]
    assert mask2.sum() == mask.sum() + 2
