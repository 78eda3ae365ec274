"""Scalar fields: projection, evaluation, gradients."""

import numpy as np
import pytest

from tmopfit.errors import SingularJacobianError
from tmopfit.fields import (
    AnalyticLevelSet,
    ScalarField,
    discrete_gradient,
    eval_field,
    eval_field_grad,
    nodal_physical_gradients,
    project,
)
from tmopfit.levelsets import builtin_levelset
from tmopfit.mesh import NodeField, make_cartesian


def linear_level_set(coeffs, offset):
    coeffs = np.asarray(coeffs, dtype=float)

    def fn(p):
        return p @ coeffs + offset

    def grad(p):
        return np.tile(coeffs, (len(p), 1))

    return AnalyticLevelSet("composite", len(coeffs), fn, grad)


def test_projection_is_nodal_interpolation():
    mesh, nodes = make_cartesian(2, 4, 2, "quad")
    sphere = builtin_levelset("sphere2d")
    sigma = project(sphere, mesh, nodes)
    assert np.allclose(
        sigma.coefficients, sphere.values(nodes.as_matrix()), atol=0
    )


def test_projection_of_constant():
    mesh, nodes = make_cartesian(2, 3, 1, "quad")
    const = AnalyticLevelSet(
        "composite", 2, lambda p: np.full(len(p), 2.5),
        lambda p: np.zeros_like(p),
    )
    sigma = project(const, mesh, nodes)
    assert np.all(sigma.coefficients == 2.5)


def test_sphere_value_at_known_point():
    mesh, nodes = make_cartesian(2, 10, 1, "quad")
    sigma = project(builtin_levelset("sphere2d"), mesh, nodes)
    i = int(np.argmin(np.linalg.norm(nodes.as_matrix() - [0.5, 0.9], axis=1)))
    assert np.allclose(nodes.as_matrix()[i], [0.5, 0.9])
    assert abs(sigma.coefficients[i] - 0.1) < 1e-14


def test_node_on_zero_level_set_gets_zero_coefficient():
    mesh, nodes = make_cartesian(2, 10, 1, "quad")
    sigma = project(builtin_levelset("sphere2d"), mesh, nodes)
    i = int(np.argmin(np.linalg.norm(nodes.as_matrix() - [0.2, 0.5], axis=1)))
    assert abs(sigma.coefficients[i]) < 1e-14  # (0.2, 0.5) is on the circle


@pytest.mark.parametrize("geometry,order", [("quad", 2), ("triangle", 3), ("hex", 2)])
def test_polynomial_reproduction(geometry, order):
    dim = 3 if geometry == "hex" else 2
    mesh, nodes = make_cartesian(dim, 2, order, geometry)
    rng = np.random.default_rng(4)
    lin = rng.uniform(-1, 1, dim)
    quad_c = rng.uniform(-1, 1, dim) if order >= 2 else np.zeros(dim)

    def fn(p):
        return 0.3 + p @ lin + (p**2) @ quad_c

    ls = AnalyticLevelSet("composite", dim, fn, lambda p: None)
    sigma = project(ls, mesh, nodes)
    for _ in range(100):
        e = rng.integers(mesh.num_elements)
        ref = rng.random(dim)
        if geometry in ("triangle", "tet"):
            ref *= 0.9 / max(1.0, ref.sum())
        from tmopfit.mesh import element_position

        phys = element_position(mesh, nodes, e, ref)
        got = eval_field(sigma, nodes, e, ref)
        assert abs(got - fn(phys[None, :])[0]) < 1e-12


def test_eval_at_node_returns_coefficient():
    mesh, nodes = make_cartesian(2, 2, 3, "quad")
    rng = np.random.default_rng(9)
    sigma = ScalarField(mesh, rng.standard_normal(mesh.num_nodes))
    e = 2
    for loc, ref in enumerate(mesh.basis.nodes):
        got = eval_field(sigma, nodes, e, ref)
        assert abs(got - sigma.coefficients[mesh.connectivity[e][loc]]) < 1e-12


def test_gradient_of_linear_field():
    mesh, nodes = make_cartesian(2, 3, 2, "quad")
    sigma = project(linear_level_set([1.0, 0.0], 0.0), mesh, nodes)
    g = eval_field_grad(sigma, nodes, 4, (0.3, 0.8))
    assert np.allclose(g, [1.0, 0.0], atol=1e-12)


def test_quadratic_field_value_at_midpoint():
    mesh, nodes = make_cartesian(2, 1, 2, "quad")
    ls = AnalyticLevelSet("composite", 2, lambda p: p[:, 0] ** 2, lambda p: None)
    sigma = project(ls, mesh, nodes)
    assert abs(eval_field(sigma, nodes, 0, (0.5, 0.5)) - 0.25) < 1e-13


def test_discrete_gradient_linear_exact():
    mesh, nodes = make_cartesian(2, 3, 2, "quad")
    sigma = project(linear_level_set([2.0, -1.5], 0.7), mesh, nodes)
    gx, gy = discrete_gradient(sigma, nodes)
    assert np.abs(gx.coefficients - 2.0).max() < 1e-12
    assert np.abs(gy.coefficients + 1.5).max() < 1e-12


def test_discrete_gradient_twice_on_linear_is_zero():
    mesh, nodes = make_cartesian(2, 3, 2, "quad")
    sigma = project(linear_level_set([2.0, -1.5], 0.7), mesh, nodes)
    gx, _ = discrete_gradient(sigma, nodes)
    gxx, gxy = discrete_gradient(gx, nodes)
    assert np.abs(gxx.coefficients).max() < 1e-11
    assert np.abs(gxy.coefficients).max() < 1e-11


def test_repeated_discrete_gradient_converges_to_hessian():
    # sigma = x^2 on order-1 meshes: second application approximates the
    # constant Hessian entry 2 within O(h).
    ls = AnalyticLevelSet("composite", 2, lambda p: p[:, 0] ** 2, lambda p: None)
    errors = []
    for n in (4, 8, 16):
        mesh, nodes = make_cartesian(2, n, 1, "quad")
        sigma = project(ls, mesh, nodes)
        gx, _ = discrete_gradient(sigma, nodes)
        gxx, _ = discrete_gradient(gx, nodes)
        interior = np.setdiff1d(
            np.arange(mesh.num_nodes), mesh.boundary_node_ids()
        )
        errors.append(np.abs(gxx.coefficients[interior] - 2.0).max())
    assert errors[0] < 1.0
    assert errors[2] <= errors[0]


@pytest.mark.parametrize(
    "name", ["sphere2d", "sphere3d", "tg2d", "tg3d", "rt2d", "rt3d"]
)
def test_analytic_gradients_match_finite_differences(name):
    ls = builtin_levelset(name)
    rng = np.random.default_rng(12)
    pts = 0.25 + 0.5 * rng.random((40, ls.dim))
    grads = ls.gradients(pts)
    step = 1e-7
    for a in range(ls.dim):
        shift = np.zeros(ls.dim)
        shift[a] = step
        fd = (ls.values(pts + shift) - ls.values(pts - shift)) / (2 * step)
        denom = np.maximum(np.abs(fd), 1.0)
        assert (np.abs(grads[:, a] - fd) / denom).max() < 1e-6


def test_singular_jacobian_raises():
    mesh, nodes = make_cartesian(2, 1, 1, "quad")
    mat = nodes.as_matrix().copy()
    mat[:] = mat[0]  # collapse the element to a point
    collapsed = NodeField.from_matrix(mat)
    sigma = ScalarField(mesh, np.ones(mesh.num_nodes))
    with pytest.raises(SingularJacobianError):
        eval_field_grad(sigma, collapsed, 0, (0.5, 0.5))
    with pytest.raises(SingularJacobianError):
        nodal_physical_gradients(sigma, collapsed)
