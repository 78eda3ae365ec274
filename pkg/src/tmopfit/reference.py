"""Reference elements, nodal bases, and quadrature rules.

Supported geometries: segment, quad, hex (tensor-product Gauss-Lobatto
Lagrange bases) and triangle, tet (total-degree Lagrange bases on
blended Gauss-Lobatto node layouts).  The reference interval is [0, 1];
the reference triangle/tet are the unit right simplices.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import OutOfDomainError

GEOMETRIES = ("segment", "triangle", "quad", "tet", "hex")

GEOMETRY_DIM = {"segment": 1, "triangle": 2, "quad": 2, "tet": 3, "hex": 3}

REFERENCE_MEASURE = {
    "segment": 1.0,
    "quad": 1.0,
    "hex": 1.0,
    "triangle": 0.5,
    "tet": 1.0 / 6.0,
}

_TENSOR = {"segment", "quad", "hex"}

# Reference vertices, counterclockwise / right-handed.
REFERENCE_VERTICES = {
    "segment": np.array([[0.0], [1.0]]),
    "quad": np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
    "triangle": np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    "hex": np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ]
    ),
    "tet": np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    ),
}

# Faces as tuples of reference-vertex ids (edges in 2D, endpoints in 1D).
REFERENCE_FACES = {
    "segment": ((0,), (1,)),
    "quad": ((0, 1), (1, 2), (2, 3), (3, 0)),
    "triangle": ((0, 1), (1, 2), (2, 0)),
    "hex": (
        (0, 1, 2, 3),
        (4, 5, 6, 7),
        (0, 1, 5, 4),
        (1, 2, 6, 5),
        (2, 3, 7, 6),
        (3, 0, 4, 7),
    ),
    "tet": ((0, 1, 2), (0, 1, 3), (1, 2, 3), (0, 2, 3)),
}


def gauss_lobatto_nodes(n_points):
    """Gauss-Lobatto points on [0, 1].

    The first and last points are 0 and 1; interior points are the roots
    of the derivative of the Legendre polynomial of degree n_points - 1,
    mapped from [-1, 1].

    Parameters
    ----------
    n_points : int
        Number of points, at least 2.

    Returns
    -------
    ndarray, shape (n_points,)
        Increasing, symmetric about 0.5.
    """
    if n_points < 2:
        raise ValueError(f"need at least 2 Gauss-Lobatto points, got {n_points}")
    if n_points == 2:
        return np.array([0.0, 1.0])
    coef = np.zeros(n_points)
    coef[-1] = 1.0
    legendre = np.polynomial.legendre.Legendre(coef)
    interior = np.sort(legendre.deriv().roots().real)
    # Enforce exact symmetry; companion-matrix roots are accurate to ~1e-15.
    interior = 0.5 * (interior - interior[::-1])
    pts = np.concatenate(([-1.0], interior, [1.0]))
    return 0.5 * (pts + 1.0)


def gauss_lobatto_rule(n_points):
    """Gauss-Lobatto points and weights on [0, 1]; exact to degree 2n - 3."""
    pts01 = gauss_lobatto_nodes(n_points)
    x = 2.0 * pts01 - 1.0
    coef = np.zeros(n_points)
    coef[-1] = 1.0
    pn = np.polynomial.legendre.Legendre(coef)(x)
    w = 2.0 / (n_points * (n_points - 1) * pn**2)
    return pts01, 0.5 * w


def gauss_legendre_rule(n_points):
    """Gauss-Legendre points and weights on [0, 1]; exact to degree 2n - 1."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi_rule_01(n_points, alpha):
    """Gauss-Jacobi rule on [0, 1] with weight (1 - t)**alpha absorbed."""
    x, w = roots_jacobi(n_points, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _lagrange_table(nodes, t):
    """Values and derivatives of 1D Lagrange cardinal polynomials.

    Uses the expanded product form for the derivative, which is stable
    at and between the interpolation nodes.
    """
    nodes = np.asarray(nodes)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = len(nodes)
    denom = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(denom, 1.0)
    # ratio[p, j, m] = (t_p - x_m) / (x_j - x_m), diagonal slots set to 1
    ratio = (t[:, None, None] - nodes[None, None, :]) / denom[None, :, :]
    idx = np.arange(n)
    ratio[:, idx, idx] = 1.0
    vals = ratio.prod(axis=2)
    inv = 1.0 / denom
    np.fill_diagonal(inv, 0.0)
    ders = np.zeros((len(t), n))
    for m in range(n):
        partial = ratio.copy()
        partial[:, :, m] = 1.0
        ders += partial.prod(axis=2) * inv[None, :, m]
    return vals, ders


def _simplex_multi_indices(order, dim):
    """Barycentric-style multi-indices in lexicographic (row-major) order."""
    out = []
    if dim == 2:
        for j in range(order + 1):
            for i in range(order + 1 - j):
                out.append((i, j))
    else:
        for l in range(order + 1):
            for j in range(order + 1 - l):
                for i in range(order + 1 - j - l):
                    out.append((i, j, l))
    return out


def _blended_simplex_nodes(order, dim):
    """Interpolation nodes on the unit simplex.

    Edge nodes sit at exact Gauss-Lobatto positions; face and interior
    nodes are barycentric blends of the 1D layout, so that traces on
    shared faces coincide between neighboring elements.
    """
    g = gauss_lobatto_nodes(order + 1) if order >= 1 else np.array([0.5])
    indices = _simplex_multi_indices(order, dim)
    nodes = np.zeros((len(indices), dim))
    for row, idx in enumerate(indices):
        if dim == 2:
            i, j = idx
            a = (order - i - j, i, j)
        else:
            i, j, l = idx
            a = (order - i - j - l, i, j, l)
        lam = _blend_barycentric(a, g)
        nodes[row] = lam[1 : dim + 1]
    return nodes


def _blend_barycentric(a, g):
    """Blend 1D Gauss-Lobatto positions into simplex barycentrics."""
    a = tuple(a)
    nz = [m for m, am in enumerate(a) if am > 0]
    lam = np.zeros(len(a))
    if len(nz) == 1:
        lam[nz[0]] = 1.0
        return lam
    if len(nz) == 2:
        p, q = nz
        lam[p] = g[a[p]]
        lam[q] = g[a[q]]
        # GL symmetry makes these sum to 1 exactly up to round-off.
        lam[nz] /= lam[nz].sum()
        return lam
    gs = [g[a[m]] if m in nz else 0.0 for m in range(len(a))]
    total = sum(gs[m] for m in nz)
    c = len(nz)
    for m in nz:
        lam[m] = (1.0 + c * gs[m] - gs[m] - (total - gs[m])) / c
    lam[list(nz)] /= lam[list(nz)].sum()
    return lam


def _monomial_exponents(order, dim):
    return [np.array(idx) for idx in _simplex_multi_indices(order, dim)]


def _eval_monomials(exponents, points):
    n, dim = points.shape
    exps = np.asarray(exponents)  # (n_mono, dim)
    max_e = int(exps.max())
    # Power tables per axis: pw[a][:, e] = points[:, a] ** e.
    pw = [
        np.vander(points[:, a], max_e + 1, increasing=True) for a in range(dim)
    ]
    vals = np.ones((n, len(exps)))
    for a in range(dim):
        vals *= pw[a][:, exps[:, a]]
    grads = np.empty((n, len(exps), dim))
    for a in range(dim):
        e = exps[:, a]
        g = e[None, :] * pw[a][:, np.maximum(e - 1, 0)]
        for b in range(dim):
            if b != a:
                g = g * pw[b][:, exps[:, b]]
        grads[:, :, a] = g
    return vals, grads


class NodalBasis:
    """Interpolatory Lagrange basis on a reference element.

    Attributes
    ----------
    geometry : str
    order : int
    dim : int
    nodes : ndarray, shape (num_nodes, dim)
        Reference coordinates of the interpolation nodes.
    """

    def __init__(self, geometry, order):
        if geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {geometry!r}")
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        self.geometry = geometry
        self.order = order
        self.dim = GEOMETRY_DIM[geometry]
        if geometry in _TENSOR:
            self._nodes_1d = gauss_lobatto_nodes(order + 1)
            grids = np.meshgrid(*([self._nodes_1d] * self.dim), indexing="ij")
            # Lexicographic: first coordinate varies fastest.
            self.nodes = np.stack(
                [g.transpose(*range(self.dim - 1, -1, -1)).ravel() for g in grids],
                axis=1,
            )
            self._vinv = None
        else:
            self.nodes = _blended_simplex_nodes(order, self.dim)
            self._exponents = _monomial_exponents(order, self.dim)
            vand, _ = _eval_monomials(self._exponents, self.nodes)
            self._vinv = np.linalg.inv(vand)
        self.num_nodes = len(self.nodes)

    def eval(self, points):
        """Basis values at reference points; shape (n_points, num_nodes)."""
        return self.eval_with_grad(points)[0]

    def eval_with_grad(self, points):
        """Basis values and reference gradients at reference points.

        Returns
        -------
        values : ndarray, shape (n_points, num_nodes)
        grads : ndarray, shape (n_points, num_nodes, dim)
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.geometry in _TENSOR:
            tabs = [
                _lagrange_table(self._nodes_1d, points[:, a]) for a in range(self.dim)
            ]
            k1 = self.order + 1
            npts = len(points)
            vals = np.ones((npts, self.num_nodes))
            grads = np.zeros((npts, self.num_nodes, self.dim))
            for local in range(self.num_nodes):
                ijk = [(local // k1**a) % k1 for a in range(self.dim)]
                v = np.ones(npts)
                for a in range(self.dim):
                    v = v * tabs[a][0][:, ijk[a]]
                vals[:, local] = v
                for a in range(self.dim):
                    g = tabs[a][1][:, ijk[a]].copy()
                    for b in range(self.dim):
                        if b != a:
                            g *= tabs[b][0][:, ijk[b]]
                    grads[:, local, a] = g
            return vals, grads
        mono_vals, mono_grads = _eval_monomials(self._exponents, points)
        vals = mono_vals @ self._vinv
        grads = np.einsum("nmd,mj->njd", mono_grads, self._vinv)
        return vals, grads

    def contains(self, point, tol=1e-10):
        """True if a reference point is inside the element within tol."""
        p = np.asarray(point, dtype=float)
        if self.geometry in _TENSOR:
            return bool(np.all(p >= -tol) and np.all(p <= 1.0 + tol))
        return bool(np.all(p >= -tol) and p.sum() <= 1.0 + tol)

    def clamp(self, point):
        """Project a reference point onto the reference element."""
        p = np.clip(np.asarray(point, dtype=float), 0.0, 1.0)
        if self.geometry not in _TENSOR:
            s = p.sum()
            if s > 1.0:
                # Pull back along the excess, keeping nonnegativity.
                p -= (s - 1.0) / self.dim
                p = np.clip(p, 0.0, 1.0)
                s = p.sum()
                if s > 1.0:
                    p /= s
        return p

    @property
    def center(self):
        if self.geometry in _TENSOR:
            return np.full(self.dim, 0.5)
        return np.full(self.dim, 1.0 / (self.dim + 1))


@dataclass(frozen=True)
class ReferenceElement:
    """Reference element: geometry kind, dimension, order, and basis."""

    geometry: str
    dim: int
    order: int
    basis: NodalBasis = field(compare=False, repr=False)

    @property
    def num_nodes(self):
        return self.basis.num_nodes

    @property
    def measure(self):
        return REFERENCE_MEASURE[self.geometry]


@lru_cache(maxsize=None)
def reference_element(geometry, order):
    """Shared, immutable reference element for (geometry, order)."""
    basis = NodalBasis(geometry, order)
    return ReferenceElement(geometry, basis.dim, order, basis)


def eval_basis(basis, ref_point, tol=1e-10):
    """Basis values and reference gradients at a single reference point.

    Raises
    ------
    OutOfDomainError
        If the point lies outside the reference element beyond tol.
    """
    point = np.asarray(ref_point, dtype=float)
    if not basis.contains(point, tol=tol):
        raise OutOfDomainError(
            f"point {point} outside reference {basis.geometry}"
        )
    vals, grads = basis.eval_with_grad(point[None, :])
    return vals[0], grads[0]


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature points and positive weights on a reference element."""

    geometry: str
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def num_points(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature_for(geometry, order):
    """Quadrature rule with exactness >= 2 * order + 2 per direction.

    Tensor-product Gauss-Lobatto for segment/quad/hex; conical-product
    (Duffy) Gauss-Jacobi rules for triangle/tet.  All weights positive.
    """
    if geometry not in GEOMETRIES:
        raise ValueError(f"unknown geometry {geometry!r}")
    dim = GEOMETRY_DIM[geometry]
    if geometry in _TENSOR:
        n = order + 3  # Gauss-Lobatto exactness 2n - 3 >= 2k + 2
        pts1, wts1 = gauss_lobatto_rule(n)
        grids = np.meshgrid(*([pts1] * dim), indexing="ij")
        pts = np.stack(
            [g.transpose(*range(dim - 1, -1, -1)).ravel() for g in grids], axis=1
        )
        wts = np.ones(n**dim)
        k1 = n
        for idx in range(n**dim):
            for a in range(dim):
                wts[idx] *= wts1[(idx // k1**a) % k1]
        return QuadratureRule(geometry, pts, wts, 2 * n - 3)
    n = order + 2  # Gauss exactness 2n - 1 >= 2k + 2
    u, wu = gauss_legendre_rule(n)
    v, wv = _jacobi_rule_01(n, 1.0)
    if geometry == "triangle":
        pts = np.zeros((n * n, 2))
        wts = np.zeros(n * n)
        row = 0
        for b in range(n):
            for a in range(n):
                pts[row] = (u[a] * (1.0 - v[b]), v[b])
                wts[row] = wu[a] * wv[b]
                row += 1
        return QuadratureRule(geometry, pts, wts, 2 * n - 1)
    w, ww = _jacobi_rule_01(n, 2.0)
    pts = np.zeros((n**3, 3))
    wts = np.zeros(n**3)
    row = 0
    for c in range(n):
        for b in range(n):
            for a in range(n):
                pts[row] = (
                    u[a] * (1.0 - v[b]) * (1.0 - w[c]),
                    v[b] * (1.0 - w[c]),
                    w[c],
                )
                wts[row] = wu[a] * wv[b] * ww[c]
                row += 1
    return QuadratureRule(geometry, pts, wts, 2 * n - 1)


# Supporting hyperplane (normal, offset) of each reference face, in
# REFERENCE_FACES order: points p on the face satisfy normal . p == offset.
_FACE_PLANES = {
    "segment": (((1.0,), 0.0), ((1.0,), 1.0)),
    "quad": (
        ((0.0, 1.0), 0.0),
        ((1.0, 0.0), 1.0),
        ((0.0, 1.0), 1.0),
        ((1.0, 0.0), 0.0),
    ),
    "triangle": (((0.0, 1.0), 0.0), ((1.0, 1.0), 1.0), ((1.0, 0.0), 0.0)),
    "hex": (
        ((0.0, 0.0, 1.0), 0.0),
        ((0.0, 0.0, 1.0), 1.0),
        ((0.0, 1.0, 0.0), 0.0),
        ((1.0, 0.0, 0.0), 1.0),
        ((0.0, 1.0, 0.0), 1.0),
        ((1.0, 0.0, 0.0), 0.0),
    ),
    "tet": (
        ((0.0, 0.0, 1.0), 0.0),
        ((0.0, 1.0, 0.0), 0.0),
        ((1.0, 1.0, 1.0), 1.0),
        ((1.0, 0.0, 0.0), 0.0),
    ),
}


@lru_cache(maxsize=None)
def face_node_indices(geometry, order):
    """Local node ids lying on each reference face, per REFERENCE_FACES."""
    basis = reference_element(geometry, order).basis
    out = []
    for normal, offset in _FACE_PLANES[geometry]:
        dist = basis.nodes @ np.asarray(normal) - offset
        out.append(np.flatnonzero(np.abs(dist) <= 1e-12))
    return tuple(out)


@lru_cache(maxsize=None)
def corner_local_indices(geometry, order):
    """Local node ids of the reference vertices, in vertex order."""
    basis = reference_element(geometry, order).basis
    verts = REFERENCE_VERTICES[geometry]
    ids = []
    for v in verts:
        d = np.linalg.norm(basis.nodes - v[None, :], axis=1)
        ids.append(int(np.argmin(d)))
        if d.min() > 1e-12:
            raise RuntimeError("reference vertex is not an interpolation node")
    return tuple(ids)


