"""WG discretization: local blocks, per-edge elimination of the trace
unknowns, the condensed system in the interior unknowns, and the
uncondensed (monolithic) system used as an oracle.

Degree-of-freedom layout: cell K owns the block [K*m*n_k, (K+1)*m*n_k) of
u0, ordered component-major (component c, basis j) -> c*n_k + j; edge e owns
[e*m*(k+1), (e+1)*m*(k+1)) of ub, ordered the same way.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import csr_from_triplets, nested_dissection, solve_sparse
from .polyspace import (cell_batches, cell_dim, cholesky_solve, edge_rules,
                        eval_cell_basis, eval_cell_basis_grad, eval_edge_basis)

log = logging.getLogger(__name__)

# entries per batch for the (cells, points, 2, n_k, n_k) work arrays
_BATCH_ENTRIES = 2**22


@dataclass(frozen=True)
class DofMap:
    n_cells: int
    n_edges: int
    m: int
    k: int

    @property
    def cell_size(self):
        return self.m * cell_dim(self.k)

    @property
    def edge_size(self):
        return self.m * (self.k + 1)

    @property
    def n0(self):
        return self.n_cells * self.cell_size

    @property
    def nb(self):
        return self.n_edges * self.edge_size

    def cell(self, K):
        return slice(K * self.cell_size, (K + 1) * self.cell_size)

    def edge(self, e):
        return slice(e * self.edge_size, (e + 1) * self.edge_size)


@dataclass
class WeakVector:
    u0: np.ndarray
    ub: np.ndarray

    def __add__(self, other):
        return WeakVector(self.u0 + other.u0, self.ub + other.ub)

    def __sub__(self, other):
        return WeakVector(self.u0 - other.u0, self.ub - other.ub)

    def __mul__(self, a):
        return WeakVector(a * self.u0, a * self.ub)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, dofs):
        return cls(np.zeros(dofs.n0), np.zeros(dofs.nb))

    @classmethod
    def random(cls, dofs, rng):
        return cls(rng.standard_normal(dofs.n0), rng.standard_normal(dofs.nb))


def kron_eye(m, X):
    """Block-diagonal m-fold copy of (a stack of) matrices X."""
    p, q = X.shape[-2:]
    out = np.zeros(X.shape[:-2] + (m * p, m * q))
    for r in range(m):
        out[..., r * p:(r + 1) * p, r * q:(r + 1) * q] = X
    return out


def _pair_blocks(coef, left, right):
    """Contract coefficient matrices (..., Q, m, m) with basis products
    (..., Q, p, q) into blocks (..., m*p, m*q) ordered (r, i), (c, j)."""
    lead = coef.shape[:-3]
    Q, m = coef.shape[-3], coef.shape[-1]
    p, q = left.shape[-1], right.shape[-1]
    C = coef.reshape((-1, Q, m * m))
    X = (left[..., :, None] * right[..., None, :]).reshape((-1, Q, p * q))
    Y = np.matmul(np.swapaxes(C, 1, 2), X).reshape(lead + (m, m, p, q))
    nd = len(lead)
    perm = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    return Y.transpose(perm).reshape(lead + (m * p, m * q))


@dataclass(frozen=True)
class EdgeTraces:
    """Edge quadrature with both neighbours' cell bases evaluated on it."""
    points: np.ndarray     # (ne, nq, 2)
    weights: np.ndarray    # (ne, nq)
    psi: np.ndarray        # (nq, k+1)
    phi: np.ndarray        # (ne, 2, nq, n_k); zero on the missing side
    cells: np.ndarray      # (ne, 2)
    signs: np.ndarray      # (2,) = (+1, -1)


def edge_traces(mesh, k, exactness):
    key = ("edge_traces", k, exactness)
    if key not in mesh._cache:
        er = edge_rules(mesh, exactness)
        cells = mesh.edge_cells
        phi = np.zeros((mesh.n_edges, 2, er.points.shape[1], cell_dim(k)))
        for s in range(2):
            has = cells[:, s] >= 0
            K = cells[has, s]
            phi[has, s] = eval_cell_basis(er.points[has], mesh.centroids[K][:, None, :],
                                          mesh.diameters[K][:, None], k)
        mesh._cache[key] = EdgeTraces(er.points, er.weights, eval_edge_basis(er.params, k),
                                      phi, cells, np.array([1.0, -1.0]))
    return mesh._cache[key]


def _batch_size(nq, nk):
    per_cell = max(1, nq * 2 * nk * nk)
    size = 16
    while size < 1024 and 2 * size * per_cell <= _BATCH_ENTRIES:
        size *= 2
    return size


def _cell_point_data(sys, mesh, k, exactness):
    """Yield (cells, weights, phi, dphi, points) over batches of cells."""
    nk = cell_dim(k)
    probe = cell_batches(mesh, exactness)[0]
    nq = probe.points.shape[1]
    for batch in cell_batches(mesh, exactness, max_batch=_batch_size(nq, nk)):
        c = batch.cells
        center = mesh.centroids[c][:, None, :]
        scale = mesh.diameters[c][:, None]
        phi = eval_cell_basis(batch.points, center, scale, k)
        dphi = eval_cell_basis_grad(batch.points, center, scale, k)
        yield c, batch.weights, phi, dphi, batch.points


class Discretization:
    """Local WG blocks of one system on one mesh for polynomial degree k."""

    def __init__(self, sys, mesh, k, cell_exactness=None, edge_exactness=None):
        if k < 0:
            raise ValueError("degree must be >= 0")
        self.sys, self.mesh, self.k = sys, mesh, k
        self.m = sys.m
        self.nk = cell_dim(k)
        self.cell_exactness = 2 * k + 2 if cell_exactness is None else cell_exactness
        self.edge_exactness = 2 * k + 3 if edge_exactness is None else edge_exactness
        self.dofs = DofMap(mesh.n_cells, mesh.n_edges, sys.m, k)
        self._cell = None
        self._edge = None

    # -- cell interiors -------------------------------------------------
    def _cell_blocks(self, cells=None):
        sys, m, nk = self.sys, self.m, self.nk
        n = self.mesh.n_cells
        vol = np.zeros((n, m * nk, m * nk))
        load = np.zeros((n, m * nk))
        for c, w, phi, dphi, pts in _cell_point_data(sys, self.mesh, self.k, self.cell_exactness):
            b, nq = w.shape
            x = pts.reshape(-1, 2)
            A = sys.A(x).reshape(b, nq, 2, m, m)
            C = (sys.B(x) - sys.divA(x)).reshape(b, nq, m, m)
            f = np.asarray(sys.f(x), dtype=float).reshape(b, nq, m)
            # -(u0, A . grad v0): row (r, i) = test, column (c, j) = trial
            wd = w[..., None, None] * np.moveaxis(dphi, -1, 2)        # (b, nq, 2, nk_i)
            left = wd.reshape(b, nq * 2, nk)
            right = np.repeat(phi, 2, axis=1)                          # (b, nq*2, nk_j)
            coefA = np.swapaxes(A, -1, -2).reshape(b, nq * 2, m, m)
            vol[c] -= _pair_blocks(coefA, left, right)
            vol[c] += _pair_blocks(C, w[..., None] * phi, phi)
            load[c] = np.einsum("bq,bqr,bqi->bri", w, f, phi).reshape(b, m * nk)
        return vol, load

    # -- edges ----------------------------------------------------------
    def _edge_blocks(self):
        sys, mesh, m, k = self.sys, self.mesh, self.m, self.k
        nb = k + 1
        tr = edge_traces(mesh, k, self.edge_exactness)
        ne, nq = tr.weights.shape
        x = tr.points.reshape(-1, 2)
        nrm = np.repeat(mesh.normals, nq, axis=0)
        D = np.einsum("pkij,pk->pij", sys.A(x), nrm).reshape(ne, nq, m, m)
        eye = np.eye(m)
        # cell test function against edge trial: <(D_n - mu) ub, v0> per side
        coef = np.stack([s * D - sys.mu * eye for s in tr.signs], axis=1)   # (ne, 2, nq, m, m)
        wphi = tr.weights[:, None, :, None] * tr.phi                        # (ne, 2, nq, nk)
        psi = np.broadcast_to(tr.psi, (ne, 2, nq, nb))
        CE = _pair_blocks(coef, wphi, psi)                                  # (ne, 2, m nk, m nb)
        stab = sys.mu * np.einsum("esqi,esqj->esij", wphi, tr.phi)          # (ne, 2, nk, nk)
        T = np.einsum("eq,qi,esqj->esij", tr.weights, tr.psi, tr.phi)       # (ne, 2, nb, nk)
        Me = np.einsum("eq,qi,qj->eij", tr.weights, tr.psi, tr.psi)         # (ne, nb, nb)

        bnd = mesh.boundary_edges
        G = np.zeros((len(bnd), m * nb, m * nb))
        if len(bnd):
            xb = tr.points[bnd].reshape(-1, 2)
            Mb = sys.M(xb, np.repeat(mesh.normals[bnd], nq, axis=0)).reshape(len(bnd), nq, m, m)
            coefb = 0.5 * (Mb - D[bnd]) + sys.mu * eye
            wpsi = tr.weights[bnd][..., None] * tr.psi
            G = _pair_blocks(coefb, wpsi, np.broadcast_to(tr.psi, wpsi.shape))
        return dict(CE=CE, stab=stab, T=T, Me=Me, G=G, boundary=bnd, cells=tr.cells)

    @property
    def cell(self):
        if self._cell is None:
            self._cell = self._cell_blocks()
        return self._cell

    @property
    def edge(self):
        if self._edge is None:
            self._edge = self._edge_blocks()
        return self._edge

    def cell_diagonal_blocks(self):
        """u0-u0 blocks of the cell equations: volume terms plus mu <u0, v0>_{dK}."""
        vol, _ = self.cell
        ed = self.edge
        blocks = vol.copy()
        stab = kron_eye(self.m, ed["stab"])
        for s in range(2):
            has = ed["cells"][:, s] >= 0
            np.add.at(blocks, ed["cells"][has, s], stab[has, s])
        return blocks


@dataclass(frozen=True)
class LocalCellOperator:
    cell: int
    diagonal: np.ndarray   # (m n_k, m n_k) against the cell's own u0
    edges: dict            # edge index -> (m n_k, m (k+1)) against that edge's ub
    load: np.ndarray       # (m n_k,)


def local_cell_operator(sys, mesh, cell, k, disc=None):
    """Dense block row of the cell equations for test functions on ``cell``."""
    disc = disc or Discretization(sys, mesh, k)
    ed = disc.edge
    diag = disc.cell_diagonal_blocks()[cell]
    edges = {}
    for e in mesh.cell_edges[cell]:
        s = 0 if ed["cells"][e, 0] == cell else 1
        edges[int(e)] = ed["CE"][e, s].copy()
    return LocalCellOperator(cell, diag, edges, disc.cell[1][cell].copy())


@dataclass(frozen=True)
class EdgeEliminationMap:
    """ub|_e = R[e, 0] u0[K_left] + R[e, 1] u0[K_right]."""
    R: np.ndarray          # (ne, 2, m (k+1), m n_k)
    cells: np.ndarray      # (ne, 2)

    def apply(self, u0, dofs):
        U = u0.reshape(dofs.n_cells, dofs.cell_size)
        ub = np.einsum("eij,ej->ei", self.R[:, 0], U[self.cells[:, 0]])
        inner = self.cells[:, 1] >= 0
        ub[inner] += np.einsum("eij,ej->ei", self.R[inner, 1], U[self.cells[inner, 1]])
        return ub.reshape(-1)


def edge_elimination(sys, mesh, k, disc=None):
    """Per-edge solution of the trace equations in terms of neighbouring u0."""
    disc = disc or Discretization(sys, mesh, k)
    ed = disc.edge
    m = sys.m
    T, Me = ed["T"], ed["Me"]
    proj = np.linalg.solve(Me[:, None], T)                  # L2 trace projections
    R = 0.5 * kron_eye(m, proj)
    bnd = ed["boundary"]
    if len(bnd):
        rhs = sys.mu * kron_eye(m, T[bnd, 0])
        try:
            R[bnd, 0] = np.linalg.solve(ed["G"], rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular boundary-edge trace system") from exc
        R[bnd, 1] = 0.0
    return EdgeEliminationMap(R, ed["cells"].copy())


@dataclass(frozen=True)
class CondensedOperator:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    elimination: EdgeEliminationMap
    dofs: DofMap


def _block_triplets(rows_blk, cols_blk, blocks, row_off=0, col_off=0):
    p, q = blocks.shape[1:]
    r = row_off + rows_blk[:, None, None] * p + np.arange(p)[None, :, None]
    c = col_off + cols_blk[:, None, None] * q + np.arange(q)[None, None, :]
    r, c = np.broadcast_arrays(r, c)
    return r.ravel(), c.ravel(), blocks.ravel()


def assemble_condensed(sys, mesh, k, disc=None):
    disc = disc or Discretization(sys, mesh, k)
    dofs = disc.dofs
    elim = edge_elimination(sys, mesh, k, disc)
    ed = disc.edge
    cells = ed["cells"]
    parts = [_block_triplets(np.arange(mesh.n_cells), np.arange(mesh.n_cells),
                             disc.cell_diagonal_blocks())]
    for s in range(2):
        for t in range(2):
            mask = (cells[:, s] >= 0) & (cells[:, t] >= 0)
            if not np.any(mask):
                continue
            blocks = np.matmul(ed["CE"][mask, s], elim.R[mask, t])
            parts.append(_block_triplets(cells[mask, s], cells[mask, t], blocks))
    rows, cols, vals = (np.concatenate(z) for z in zip(*parts))
    A = csr_from_triplets(rows, cols, vals, (dofs.n0, dofs.n0))
    return CondensedOperator(A, disc.cell[1].reshape(-1).copy(), elim, dofs)


def assemble_monolithic(sys, mesh, k, disc=None):
    """Uncondensed system over (u0, ub); returns (matrix, rhs, dofs)."""
    disc = disc or Discretization(sys, mesh, k)
    dofs = disc.dofs
    ed = disc.edge
    m, n0 = sys.m, dofs.n0
    cells = ed["cells"]
    ne = mesh.n_edges
    edges = np.arange(ne)
    parts = [_block_triplets(np.arange(mesh.n_cells), np.arange(mesh.n_cells),
                             disc.cell_diagonal_blocks())]
    for s in range(2):
        has = cells[:, s] >= 0
        parts.append(_block_triplets(cells[has, s], edges[has], ed["CE"][has, s], col_off=n0))
        parts.append(_block_triplets(edges[has], cells[has, s],
                                     -sys.mu * kron_eye(m, ed["T"][has, s]), row_off=n0))
    inner = cells[:, 1] >= 0
    parts.append(_block_triplets(edges[inner], edges[inner],
                                 2.0 * sys.mu * kron_eye(m, ed["Me"][inner]), n0, n0))
    bnd = ed["boundary"]
    if len(bnd):
        parts.append(_block_triplets(bnd, bnd, ed["G"], n0, n0))
    rows, cols, vals = (np.concatenate(z) for z in zip(*parts))
    N = n0 + dofs.nb
    A = csr_from_triplets(rows, cols, vals, (N, N))
    rhs = np.concatenate([disc.cell[1].reshape(-1), np.zeros(dofs.nb)])
    return A, rhs, dofs


def recover_edge_unknowns(op, u0):
    u0 = np.asarray(u0, dtype=float)
    return WeakVector(u0.copy(), op.elimination.apply(u0, op.dofs))


@dataclass
class Solution:
    u: WeakVector
    dofs: DofMap
    seconds: float


def cell_ordering(mesh):
    """Nested-dissection order of the cells over the edge-neighbour graph."""
    key = "cell_ordering"
    if key not in mesh._cache:
        inner = mesh.edge_cells[mesh.edge_cells[:, 1] >= 0]
        rows = np.concatenate([inner[:, 0], inner[:, 1]])
        cols = np.concatenate([inner[:, 1], inner[:, 0]])
        adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                            shape=(mesh.n_cells, mesh.n_cells))
        mesh._cache[key] = nested_dissection(mesh.centroids, adj)
    return mesh._cache[key]


def solve(sys, mesh, k, tol=1e-12, method="auto", disc=None):
    """Condensed solve followed by edge recovery."""
    t0 = time.perf_counter()
    disc = disc or Discretization(sys, mesh, k)
    op = assemble_condensed(sys, mesh, k, disc)
    u0 = solve_sparse(op.matrix, op.rhs, tol=tol, block_size=op.dofs.cell_size,
                      method=method, ordering=cell_ordering(mesh))
    u = recover_edge_unknowns(op, u0)
    return Solution(u, op.dofs, time.perf_counter() - t0)


def solve_monolithic(sys, mesh, k, tol=1e-12, method="auto", disc=None):
    A, rhs, dofs = assemble_monolithic(sys, mesh, k, disc)
    x = solve_sparse(A, rhs, tol=tol, method=method)
    return WeakVector(x[:dofs.n0], x[dofs.n0:])
