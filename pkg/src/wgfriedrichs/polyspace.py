"""Polynomial spaces on cells and edges, quadrature and L2 projections.

Cell basis: scaled monomials ((x - c)/h)^a ((y - c)/h)^b, a + b <= k, ordered
by total degree and then by decreasing power of x.  Edge basis: monomials
t^j in the parameter t in [-1, 1] running along the edge's stored
orientation, so both neighbours of an interior edge see the same functions.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import cell_geometry, fan_triangles

MAX_TRIANGLE_EXACTNESS = 40


def cell_dim(k):
    return (k + 1) * (k + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(k):
    return tuple((d - b, b) for d in range(k + 1) for b in range(d + 1))


def eval_cell_basis(points, center, scale, k):
    """Scaled monomials at ``points`` (..., 2); returns (..., n_k)."""
    X = (np.asarray(points)[..., 0] - center[..., 0]) / scale
    Y = (np.asarray(points)[..., 1] - center[..., 1]) / scale
    px = [np.ones_like(X)]
    py = [np.ones_like(Y)]
    for _ in range(k):
        px.append(px[-1] * X)
        py.append(py[-1] * Y)
    return np.stack([px[a] * py[b] for a, b in monomial_exponents(k)], axis=-1)


def eval_cell_basis_grad(points, center, scale, k):
    """Gradients of the scaled monomials, shape (..., n_k, 2)."""
    X = (np.asarray(points)[..., 0] - center[..., 0]) / scale
    Y = (np.asarray(points)[..., 1] - center[..., 1]) / scale
    px = [np.ones_like(X)]
    py = [np.ones_like(Y)]
    for _ in range(k):
        px.append(px[-1] * X)
        py.append(py[-1] * Y)
    zero = np.zeros_like(X)
    gx, gy = [], []
    for a, b in monomial_exponents(k):
        gx.append(a * px[a - 1] * py[b] / scale if a else zero)
        gy.append(b * px[a] * py[b - 1] / scale if b else zero)
    return np.stack([np.stack(gx, axis=-1), np.stack(gy, axis=-1)], axis=-1)


def eval_edge_basis(t, k):
    t = np.asarray(t, dtype=float)
    return np.stack([t**j for j in range(k + 1)], axis=-1)


@dataclass(frozen=True)
class CellBasis:
    degree: int
    center: np.ndarray
    scale: float

    @classmethod
    def on(cls, mesh, cell, k):
        return cls(k, mesh.centroids[cell].copy(), float(mesh.diameters[cell]))

    @property
    def dim(self):
        return cell_dim(self.degree)

    def __call__(self, points):
        return eval_cell_basis(points, self.center, self.scale, self.degree)

    def grad(self, points):
        return eval_cell_basis_grad(points, self.center, self.scale, self.degree)


@dataclass(frozen=True)
class EdgeBasis:
    degree: int

    @property
    def dim(self):
        return self.degree + 1

    def __call__(self, t):
        return eval_edge_basis(t, self.degree)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int
    params: np.ndarray | None = None   # edge parameter t in [-1, 1], edges only

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def triangle_rule(exactness):
    """Collapsed Gauss rule on the reference triangle (0,0), (1,0), (0,1).

    Gauss-Jacobi in the collapsed direction times Gauss-Legendre across it;
    positive weights, exact for total degree ``exactness``.
    """
    if exactness < 0 or exactness > MAX_TRIANGLE_EXACTNESS:
        raise ValueError(
            f"triangle quadrature exactness {exactness} outside 0..{MAX_TRIANGLE_EXACTNESS}"
        )
    n = exactness // 2 + 1
    zj, wj = roots_jacobi(n, 1.0, 0.0)
    zl, wl = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (1.0 + zj)
    s = 0.5 * (1.0 + zl)
    X = np.repeat(x, n)
    Y = np.outer(1.0 - x, s).ravel()
    W = np.outer(0.25 * wj, 0.5 * wl).ravel()
    return np.column_stack([X, Y]), W


@lru_cache(maxsize=None)
def gauss_legendre(exactness):
    n = max(1, -(-(exactness + 1) // 2))
    return np.polynomial.legendre.leggauss(n)


def _map_fan(tris, exactness):
    """Quadrature points/weights for a stack of fans, tris shape (..., nt, 3, 2)."""
    ref, w = triangle_rule(exactness)
    a = tris[..., 0, :]
    e1 = tris[..., 1, :] - a
    e2 = tris[..., 2, :] - a
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    pts = (a[..., None, :] + ref[:, 0, None] * e1[..., None, :]
           + ref[:, 1, None] * e2[..., None, :])
    wts = det[..., None] * w
    shape = pts.shape[:-3] + (-1,)
    return pts.reshape(shape + (2,)), wts.reshape(shape)


def is_parallelogram(poly, tol=1e-12):
    poly = np.asarray(poly, dtype=float)
    if len(poly) != 4:
        return False
    scale = float(np.max(np.ptp(poly, axis=0)))
    return bool(np.max(np.abs(poly[0] + poly[2] - poly[1] - poly[3])) <= tol * scale)


def _map_parallelogram(polys, exactness):
    """Tensor Gauss-Legendre rule on a stack of parallelograms (..., 4, 2)."""
    if exactness < 0 or exactness > MAX_TRIANGLE_EXACTNESS:
        raise ValueError(
            f"cell quadrature exactness {exactness} outside 0..{MAX_TRIANGLE_EXACTNESS}"
        )
    z, w = gauss_legendre(exactness)
    t = 0.5 * (1.0 + z)
    a = polys[..., 0, :]
    e1 = polys[..., 1, :] - a
    e2 = polys[..., 3, :] - a
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    s1 = np.repeat(t, len(t))
    s2 = np.tile(t, len(t))
    pts = a[..., None, :] + s1[:, None] * e1[..., None, :] + s2[:, None] * e2[..., None, :]
    wts = det[..., None] * np.outer(0.5 * w, 0.5 * w).ravel()
    return pts, wts


def cell_quadrature(mesh, cell, exactness):
    """Tensor Gauss rule on parallelograms, Gauss rules on the centroid fan otherwise."""
    _, _, _, tris = cell_geometry(mesh, cell)
    poly = mesh.polygon(cell)
    if is_parallelogram(poly):
        pts, wts = _map_parallelogram(poly, exactness)
    else:
        pts, wts = _map_fan(tris, exactness)
    return QuadratureRule(pts, wts, exactness)


def edge_quadrature(mesh, edge, exactness):
    z, w = gauss_legendre(exactness)
    a, b = mesh.vertices[mesh.edge_vertices[edge]]
    pts = 0.5 * (a + b) + 0.5 * z[:, None] * (b - a)
    return QuadratureRule(pts, 0.5 * mesh.lengths[edge] * w, exactness, params=z.copy())


@dataclass(frozen=True)
class CellBatch:
    """Cells sharing a quadrature layout (same vertex count, parallelogram or
    not), quadrature stacked along axis 0."""
    cells: np.ndarray
    points: np.ndarray    # (b, nq, 2)
    weights: np.ndarray   # (b, nq)


def cell_batches(mesh, exactness, max_batch=1024):
    key = ("cell_batches", exactness, max_batch)
    if key not in mesh._cache:
        groups = {}
        for c, loop in enumerate(mesh.cells):
            key_c = (len(loop), is_parallelogram(mesh.vertices[list(loop)]))
            groups.setdefault(key_c, []).append(c)
        batches = []
        for nv, para in sorted(groups):
            ids = np.array(groups[nv, para])
            for start in range(0, len(ids), max_batch):
                chunk = ids[start:start + max_batch]
                if para:
                    polys = np.stack([mesh.polygon(c) for c in chunk])
                    pts, wts = _map_parallelogram(polys, exactness)
                else:
                    tris = np.stack([fan_triangles(mesh, c) for c in chunk])
                    pts, wts = _map_fan(tris, exactness)
                if np.any(wts <= 0.0):
                    bad = chunk[np.flatnonzero(np.any(wts <= 0.0, axis=1))[0]]
                    raise ValueError(f"fan triangulation invalid for cell {bad}")
                batches.append(CellBatch(chunk, pts, wts))
        mesh._cache[key] = batches
    return mesh._cache[key]


@dataclass(frozen=True)
class EdgeRules:
    points: np.ndarray    # (ne, nq, 2)
    weights: np.ndarray   # (ne, nq)
    params: np.ndarray    # (nq,)


def edge_rules(mesh, exactness):
    key = ("edge_rules", exactness)
    if key not in mesh._cache:
        z, w = gauss_legendre(exactness)
        a = mesh.vertices[mesh.edge_vertices[:, 0]]
        b = mesh.vertices[mesh.edge_vertices[:, 1]]
        pts = 0.5 * (a + b)[:, None, :] + 0.5 * z[None, :, None] * (b - a)[:, None, :]
        wts = 0.5 * mesh.lengths[:, None] * w[None, :]
        mesh._cache[key] = EdgeRules(pts, wts, z)
    return mesh._cache[key]


def cell_mass_matrix(basis, quad):
    phi = basis(quad.points)
    return np.einsum("q,qi,qj->ij", quad.weights, phi, phi)


def cholesky_solve(M, rhs):
    """Solve with SPD (stacks of) matrices through their Cholesky factor."""
    L = np.linalg.cholesky(M)
    y = np.linalg.solve(L, rhs)
    return np.linalg.solve(np.swapaxes(L, -1, -2), y)


def _as_columns(values, npts):
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        values = np.full(npts, float(values))
    return values.reshape(npts, -1)


def project_cell(f, mesh, cell, k, exactness=None):
    """Coefficients of the L2 projection of ``f`` onto P_k(cell).

    ``f`` maps an (n, 2) point array to (n,) or (n, m) values; the result has
    shape (n_k,) or (m, n_k) accordingly.
    """
    exactness = 2 * k + 6 if exactness is None else exactness
    quad = cell_quadrature(mesh, cell, exactness)
    basis = CellBasis.on(mesh, cell, k)
    phi = basis(quad.points)
    vals = np.asarray(f(quad.points), dtype=float)
    scalar = vals.ndim == 1
    vals = _as_columns(vals, len(quad.weights))
    mass = np.einsum("q,qi,qj->ij", quad.weights, phi, phi)
    rhs = np.einsum("q,qi,qc->ic", quad.weights, phi, vals)
    coef = cholesky_solve(mass, rhs).T
    return coef[0] if scalar else coef


def project_edge(f, mesh, edge, k, exactness=None):
    """Coefficients of the L2 projection of ``f`` onto P_k(edge)."""
    exactness = 2 * k + 6 if exactness is None else exactness
    quad = edge_quadrature(mesh, edge, exactness)
    psi = eval_edge_basis(quad.params, k)
    vals = np.asarray(f(quad.points), dtype=float)
    scalar = vals.ndim == 1
    vals = _as_columns(vals, len(quad.weights))
    mass = np.einsum("q,qi,qj->ij", quad.weights, psi, psi)
    rhs = np.einsum("q,qi,qc->ic", quad.weights, psi, vals)
    coef = cholesky_solve(mass, rhs).T
    return coef[0] if scalar else coef


def project_all(f, mesh, k, m, exactness=None):
    """Cellwise and edgewise projections of a vector field, as flat arrays.

    Returns (u0, ub) laid out component-major per cell / per edge, matching
    the degree-of-freedom layout of the assembly.
    """
    exactness = 2 * k + 6 if exactness is None else exactness
    nk = cell_dim(k)
    u0 = np.empty((mesh.n_cells, m, nk))
    for batch in cell_batches(mesh, exactness):
        c = batch.cells
        phi = eval_cell_basis(batch.points, mesh.centroids[c][:, None, :],
                              mesh.diameters[c][:, None], k)
        vals = np.asarray(f(batch.points.reshape(-1, 2)), dtype=float)
        vals = vals.reshape(len(c), -1, m)
        mass = np.einsum("bq,bqi,bqj->bij", batch.weights, phi, phi)
        rhs = np.einsum("bq,bqi,bqc->bic", batch.weights, phi, vals)
        u0[c] = np.swapaxes(cholesky_solve(mass, rhs), 1, 2)
    er = edge_rules(mesh, exactness)
    psi = eval_edge_basis(er.params, k)
    vals = np.asarray(f(er.points.reshape(-1, 2)), dtype=float).reshape(mesh.n_edges, -1, m)
    mass = np.einsum("eq,qi,qj->eij", er.weights, psi, psi)
    rhs = np.einsum("eq,qi,eqc->eic", er.weights, psi, vals)
    ub = np.swapaxes(cholesky_solve(mass, rhs), 1, 2)
    return u0.reshape(-1), ub.reshape(-1)
