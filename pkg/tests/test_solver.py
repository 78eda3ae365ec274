"""Newton/MINRES, line search, and the nonlinear solve loop."""

import numpy as np
import pytest
import scipy.sparse as sp

from tmopfit.fields import AnalyticLevelSet
from tmopfit.fitting import MarkedSet, make_penalty
from tmopfit.mesh import NodeField, make_cartesian
from tmopfit.objective import ObjectiveConfig, boundary_fixed_mask, value
from tmopfit.quality import make_targets
from tmopfit.solver import SolverConfig, line_search, newton_step, solve


def test_newton_step_identity():
    g = np.array([1.0, -2.0, 3.0, 0.5])
    p = newton_step(sp.identity(4, format="csr"), g)
    assert np.allclose(p, -g, atol=1e-10)


def test_newton_step_diagonal_system():
    d = np.array([1.0, 2.0, 4.0, 8.0])
    g = np.array([1.0, 2.0, 3.0, 4.0])
    p = newton_step(sp.diags(d).tocsr(), g)
    assert np.allclose(p, -g / d, atol=1e-8)


def test_newton_step_indefinite_falls_back_to_descent():
    h = sp.diags([-1.0, -2.0]).tocsr()  # ascent direction from the solve
    g = np.array([1.0, 1.0])
    p = newton_step(h, g)
    assert np.allclose(p, -g)
    assert p @ g < 0.0


def quad_problem():
    mesh, nodes = make_cartesian(2, 4, 1, "quad")
    targets = make_targets(mesh, nodes, "unit")
    cfg = ObjectiveConfig("mu2", targets, fixed_mask=boundary_fixed_mask(mesh))
    return mesh, nodes, cfg


def displaced_nodes(mesh, nodes, frac=0.3):
    interior = np.setdiff1d(np.arange(mesh.num_nodes), mesh.boundary_node_ids())
    mat = nodes.as_matrix().copy()
    h = 0.25
    mat[interior[3], 0] += frac * h
    mat[interior[3], 1] -= 0.8 * frac * h
    return NodeField.from_matrix(mat)


def test_line_search_accepts_descent_step():
    mesh, nodes, cfg = quad_problem()
    start = displaced_nodes(mesh, nodes)
    from tmopfit.objective import gradient

    g = gradient(cfg, mesh, start)
    f0 = value(cfg, mesh, start)[0]
    scfg = SolverConfig()

    def objective_fn(trial):
        return value(cfg, mesh, trial)[0]

    def validity_fn(trial):
        from tmopfit.mesh import is_valid

        return is_valid(mesh, trial)[0]

    alpha, f_trial, trial = line_search(
        objective_fn, validity_fn, start, -1e-3 * g, f0, g, scfg
    )
    assert alpha is not None and f_trial < f0


def test_line_search_halves_on_inverting_step():
    mesh, nodes, cfg = quad_problem()
    start = displaced_nodes(mesh, nodes, frac=0.2)
    from tmopfit.mesh import is_valid
    from tmopfit.objective import gradient

    g = gradient(cfg, mesh, start)
    # A descent direction so large that a full step inverts elements.
    direction = -g * (5.0 / np.abs(g).max())
    f0 = value(cfg, mesh, start)[0]
    scfg = SolverConfig()

    def objective_fn(trial):
        try:
            return value(cfg, mesh, trial)[0]
        except Exception:
            return None

    def validity_fn(trial):
        return is_valid(mesh, trial)[0]

    full = start.copy()
    full.coords = start.coords + direction
    assert not validity_fn(full)
    alpha, f_trial, trial = line_search(
        objective_fn, validity_fn, start, direction, f0, g, scfg
    )
    assert alpha is not None and alpha < 1.0
    assert validity_fn(trial) and f_trial < f0


def test_line_search_rejects_zero_direction():
    mesh, nodes, cfg = quad_problem()
    scfg = SolverConfig()
    with pytest.raises(ValueError):
        line_search(lambda t: 0.0, lambda t: True, nodes,
                    np.zeros(2 * mesh.num_nodes), 1.0, None, scfg)


def test_line_search_rejects_ascent_direction():
    mesh, nodes, cfg = quad_problem()
    g = np.ones(2 * mesh.num_nodes)
    with pytest.raises(ValueError):
        line_search(lambda t: 0.0, lambda t: True, nodes, g, 1.0, g,
                    SolverConfig())


def test_solve_recovers_uniform_mesh():
    mesh, nodes, cfg = quad_problem()
    start = displaced_nodes(mesh, nodes)
    final, report = solve(SolverConfig(), cfg, mesh, start)
    assert report.reason == "converged"
    assert report.history[-1][1] < 1e-10  # final F
    f_values = [row[1] for row in report.history]
    assert all(b < a for a, b in zip(f_values, f_values[1:]))
    assert all(row[6] > 0.0 for row in report.history)  # min det


def test_solve_converges_immediately_at_optimum():
    mesh, nodes, cfg = quad_problem()
    final, report = solve(SolverConfig(), cfg, mesh, nodes)
    assert report.reason == "converged"
    assert report.iterations == 0
    assert len(report.history) == 1


def test_solve_rejects_invalid_initial_mesh():
    mesh, nodes, cfg = quad_problem()
    mat = nodes.as_matrix().copy()
    conn = mesh.connectivity[0]
    mat[conn[0]], mat[conn[1]] = mat[conn[1]].copy(), mat[conn[0]].copy()
    from tmopfit.errors import InvalidMeshError

    with pytest.raises(InvalidMeshError):
        solve(SolverConfig(), cfg, mesh, NodeField.from_matrix(mat))


def test_lbfgs_agrees_with_newton_on_fitting_problem():
    # Both methods minimize the same objective: final F within 1%.
    mesh, nodes = make_cartesian(2, 4, 2, "quad")
    targets = make_targets(mesh, nodes, "initial-size")
    ls = AnalyticLevelSet(
        "composite", 2,
        lambda p: p[:, 1] - 0.55 + 0.1 * p[:, 0],
        lambda p: np.tile([0.1, 1.0], (len(p), 1)),
        lambda p: np.zeros((len(p), 2, 2)),
    )
    interior = np.setdiff1d(np.arange(mesh.num_nodes), mesh.boundary_node_ids())
    pts = nodes.as_matrix()
    band = interior[np.abs(ls.values(pts[interior])) < 0.1]
    marked = MarkedSet(band)
    penalty = make_penalty(50.0, ls, mesh, nodes, targets)
    cfg = ObjectiveConfig(
        "mu80", targets, penalty=penalty, marked=marked,
        fixed_mask=boundary_fixed_mask(mesh),
    )
    _, rep_newton = solve(SolverConfig(max_iterations=100), cfg, mesh, nodes)
    _, rep_lbfgs = solve(
        SolverConfig(method="lbfgs", max_iterations=600), cfg, mesh, nodes
    )
    assert rep_newton.reason == "converged"
    assert rep_lbfgs.reason == "converged"
    f_n = rep_newton.history[-1][1]
    f_l = rep_lbfgs.history[-1][1]
    assert abs(f_n - f_l) <= 0.01 * max(abs(f_n), abs(f_l))


def test_history_csv_schema():
    mesh, nodes, cfg = quad_problem()
    _, report = solve(SolverConfig(), cfg, mesh, displaced_nodes(mesh, nodes))
    csv = report.history_csv()
    lines = csv.strip().splitlines()
    assert lines[0] == "iter,F,Fmu,Fsigma,gradnorm,step,mindet"
    assert len(lines) == len(report.history) + 1
    assert len(lines[1].split(",")) == 7


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eps=0.0)
    with pytest.raises(ValueError):
        SolverConfig(backtrack_factor=1.5)
