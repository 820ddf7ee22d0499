"""Weak derivative, the WG bilinear form and stabilizer, the energy norm.

Everything here is evaluated pointwise at quadrature nodes from the
coefficient vectors; none of it reuses the assembled matrix blocks, so it
serves as an independent check on the assembly.
"""
from __future__ import annotations

import numpy as np

from .assembly import DofMap, WeakVector, _cell_point_data, edge_traces
from .polyspace import (CellBasis, cell_dim, cell_quadrature, cholesky_solve,
                        edge_quadrature, eval_edge_basis)


def _exactness(k, cell_exactness, edge_exactness):
    return (2 * k + 2 if cell_exactness is None else cell_exactness,
            2 * k + 3 if edge_exactness is None else edge_exactness)


def weak_derivative_cell(sys, mesh, cell, k, v0, vb_edges, exactness=None):
    """Weak derivative of a local weak function on one cell.

    ``v0`` holds the cell coefficients (m, n_k); ``vb_edges`` maps each edge
    of the cell to its trace coefficients (m, k+1) in that edge's own
    parametrization.  Returns coefficients (m, n_k).
    """
    exactness = 2 * k + 2 if exactness is None else exactness
    m = sys.m
    v0 = np.asarray(v0, dtype=float).reshape(m, cell_dim(k))
    basis = CellBasis.on(mesh, cell, k)
    quad = cell_quadrature(mesh, cell, exactness)
    phi = basis(quad.points)
    dphi = basis.grad(quad.points)
    A = sys.A(quad.points)                         # (nq, 2, m, m)
    divA = sys.divA(quad.points)                   # (nq, m, m)
    vals = phi @ v0.T                              # (nq, m)
    # -(v0, A . grad q + divA q) for q = phi_i e_r
    rhs = -np.einsum("q,qc,qkcr,qik->ri", quad.weights, vals, A, dphi)
    rhs -= np.einsum("q,qc,qcr,qi->ri", quad.weights, vals, divA, phi)
    for e in mesh.cell_edges[cell]:
        eq = edge_quadrature(mesh, e, exactness + 1)
        n = mesh.edge_sign(cell, e) * mesh.normals[e]
        Ae = sys.A(eq.points)
        Dn = np.einsum("qkij,k->qij", Ae, n)
        vb = eval_edge_basis(eq.params, k) @ np.asarray(vb_edges[int(e)], float).reshape(m, k + 1).T
        rhs += np.einsum("q,qrc,qc,qi->ri", eq.weights, Dn, vb, basis(eq.points))
    mass = np.einsum("q,qi,qj->ij", quad.weights, phi, phi)
    return cholesky_solve(mass, rhs.T).T


def weak_derivatives(sys, mesh, k, v, cell_exactness=None, edge_exactness=None):
    """Weak derivative coefficients on every cell, shape (n_cells, m, n_k)."""
    cx, ex = _exactness(k, cell_exactness, edge_exactness)
    m, nk = sys.m, cell_dim(k)
    V0 = v.u0.reshape(mesh.n_cells, m, nk)
    rhs = np.zeros((mesh.n_cells, m, nk))
    mass = np.zeros((mesh.n_cells, nk, nk))
    for c, w, phi, dphi, pts in _cell_point_data(sys, mesh, k, cx):
        b, nq = w.shape
        x = pts.reshape(-1, 2)
        A = sys.A(x).reshape(b, nq, 2, m, m)
        divA = sys.divA(x).reshape(b, nq, m, m)
        vals = np.einsum("bqi,bci->bqc", phi, V0[c])
        rhs[c] -= np.einsum("bq,bqc,bqkcr,bqik->bri", w, vals, A, dphi)
        rhs[c] -= np.einsum("bq,bqc,bqcr,bqi->bri", w, vals, divA, phi)
        mass[c] = np.einsum("bq,bqi,bqj->bij", w, phi, phi)
    tr = edge_traces(mesh, k, ex)
    ne, nq = tr.weights.shape
    Dn = _normal_matrices(sys, mesh, tr)
    vb = _trace_values(v, tr, m, k)
    for s in range(2):
        has = tr.cells[:, s] >= 0
        contrib = tr.signs[s] * np.einsum("eq,eqrc,eqc,eqi->eri", tr.weights[has], Dn[has],
                                          vb[has], tr.phi[has, s])
        np.add.at(rhs, tr.cells[has, s], contrib)
    W = cholesky_solve(mass, np.swapaxes(rhs, 1, 2))
    return np.swapaxes(W, 1, 2)


def _normal_matrices(sys, mesh, tr):
    ne, nq = tr.weights.shape
    x = tr.points.reshape(-1, 2)
    nrm = np.repeat(mesh.normals, nq, axis=0)
    m = sys.m
    return np.einsum("pkij,pk->pij", sys.A(x), nrm).reshape(ne, nq, m, m)


def _trace_values(v, tr, m, k):
    ne = tr.weights.shape[0]
    Vb = v.ub.reshape(ne, m, k + 1)
    return np.einsum("qj,ecj->eqc", tr.psi, Vb)


def _interior_on_edges(v, tr, m, k):
    """Values of v0 from each side on the edge points, shape (ne, 2, nq, m)."""
    nk = cell_dim(k)
    V0 = v.u0.reshape(-1, m, nk)
    cells = np.where(tr.cells >= 0, tr.cells, 0)
    out = np.einsum("esqi,esci->esqc", tr.phi, V0[cells])
    out[tr.cells < 0] = 0.0
    return out


def _boundary_matrices(sys, mesh, tr):
    bnd = mesh.boundary_edges
    nq = tr.weights.shape[1]
    xb = tr.points[bnd].reshape(-1, 2)
    Mb = sys.M(xb, np.repeat(mesh.normals[bnd], nq, axis=0))
    return bnd, Mb.reshape(len(bnd), nq, sys.m, sys.m)


def energy_forms(sys, mesh, k, v, w, cell_exactness=None, edge_exactness=None):
    """Return (a(w, v), s(w, v)) by quadrature."""
    cx, ex = _exactness(k, cell_exactness, edge_exactness)
    m, nk = sys.m, cell_dim(k)
    Ww = weak_derivatives(sys, mesh, k, w, cx, ex)
    V0 = v.u0.reshape(mesh.n_cells, m, nk)
    W0 = w.u0.reshape(mesh.n_cells, m, nk)
    a = 0.0
    for c, wt, phi, _, pts in _cell_point_data(sys, mesh, k, cx):
        b, nq = wt.shape
        B = sys.B(pts.reshape(-1, 2)).reshape(b, nq, m, m)
        vv = np.einsum("bqi,bci->bqc", phi, V0[c])
        ww = np.einsum("bqi,bci->bqc", phi, W0[c])
        dw = np.einsum("bqi,bci->bqc", phi, Ww[c])
        a += np.einsum("bq,bqc,bqc->", wt, dw, vv)
        a += np.einsum("bq,bqrc,bqc,bqr->", wt, B, ww, vv)

    tr = edge_traces(mesh, k, ex)
    Dn = _normal_matrices(sys, mesh, tr)
    vb, wb = _trace_values(v, tr, m, k), _trace_values(w, tr, m, k)
    bnd, Mb = _boundary_matrices(sys, mesh, tr)
    if len(bnd):
        a += 0.5 * np.einsum("eq,eqrc,eqc,eqr->", tr.weights[bnd], Mb - Dn[bnd], wb[bnd], vb[bnd])

    v0e, w0e = _interior_on_edges(v, tr, m, k), _interior_on_edges(w, tr, m, k)
    s = 0.0
    for side in range(2):
        has = tr.cells[:, side] >= 0
        jv = v0e[has, side] - vb[has]
        jw = w0e[has, side] - wb[has]
        s += sys.mu * np.einsum("eq,eqc,eqc->", tr.weights[has], jw, jv)
    return float(a), float(s)


def energy_identity_rhs(sys, mesh, k, v, cell_exactness=None, edge_exactness=None):
    """1/2 (N v0, v0) + <(mu - D_n / 2)(v0 - vb), v0 - vb> + 1/2 <M vb, vb>_boundary,
    with N = B + B^T - div A."""
    cx, ex = _exactness(k, cell_exactness, edge_exactness)
    m, nk = sys.m, cell_dim(k)
    V0 = v.u0.reshape(mesh.n_cells, m, nk)
    total = 0.0
    for c, wt, phi, _, pts in _cell_point_data(sys, mesh, k, cx):
        b, nq = wt.shape
        x = pts.reshape(-1, 2)
        B = sys.B(x)
        N = (B + np.swapaxes(B, -1, -2) - sys.divA(x)).reshape(b, nq, m, m)
        vv = np.einsum("bqi,bci->bqc", phi, V0[c])
        total += 0.5 * np.einsum("bq,bqrc,bqc,bqr->", wt, N, vv, vv)

    tr = edge_traces(mesh, k, ex)
    Dn = _normal_matrices(sys, mesh, tr)
    vb = _trace_values(v, tr, m, k)
    v0e = _interior_on_edges(v, tr, m, k)
    eye = np.eye(m)
    for side in range(2):
        has = tr.cells[:, side] >= 0
        jump = v0e[has, side] - vb[has]
        coef = sys.mu * eye - 0.5 * tr.signs[side] * Dn[has]
        total += np.einsum("eq,eqrc,eqc,eqr->", tr.weights[has], coef, jump, jump)
    bnd, Mb = _boundary_matrices(sys, mesh, tr)
    if len(bnd):
        total += 0.5 * np.einsum("eq,eqrc,eqc,eqr->", tr.weights[bnd], Mb, vb[bnd], vb[bnd])
    return float(total)


def triple_norm(sys, mesh, k, v, cell_exactness=None, edge_exactness=None):
    """sqrt(sigma0 |v0|^2 + mu0 |v0 - vb|^2 on all cell boundaries + 1/2 <M vb, vb>_boundary)."""
    cx, ex = _exactness(k, cell_exactness, edge_exactness)
    m, nk = sys.m, cell_dim(k)
    V0 = v.u0.reshape(mesh.n_cells, m, nk)
    l2 = 0.0
    for c, wt, phi, _, _ in _cell_point_data(sys, mesh, k, cx):
        vv = np.einsum("bqi,bci->bqc", phi, V0[c])
        l2 += np.einsum("bq,bqc,bqc->", wt, vv, vv)

    tr = edge_traces(mesh, k, ex)
    vb = _trace_values(v, tr, m, k)
    v0e = _interior_on_edges(v, tr, m, k)
    jumps = 0.0
    for side in range(2):
        has = tr.cells[:, side] >= 0
        jump = v0e[has, side] - vb[has]
        jumps += np.einsum("eq,eqc,eqc->", tr.weights[has], jump, jump)
    bnd, Mb = _boundary_matrices(sys, mesh, tr)
    outflow = 0.0
    if len(bnd):
        outflow = 0.5 * np.einsum("eq,eqrc,eqc,eqr->", tr.weights[bnd], Mb, vb[bnd], vb[bnd])
    sq = sys.sigma0 * l2 + sys.mu0 * jumps + outflow
    return float(np.sqrt(max(sq, 0.0)))


def boundary_fluxes(sys, mesh, k, v, edge_exactness=None):
    """(<D_n vb, vb> summed over all cell boundaries, same over the domain boundary).

    Interior edges are seen from both sides with opposite normals and cancel.
    """
    ex = 2 * k + 3 if edge_exactness is None else edge_exactness
    m = sys.m
    tr = edge_traces(mesh, k, ex)
    Dn = _normal_matrices(sys, mesh, tr)
    vb = _trace_values(v, tr, m, k)
    per_edge = np.einsum("eq,eqrc,eqc,eqr->e", tr.weights, Dn, vb, vb)
    cells_total = 0.0
    for side in range(2):
        has = tr.cells[:, side] >= 0
        cells_total += tr.signs[side] * np.sum(per_edge[has])
    return float(cells_total), float(np.sum(per_edge[mesh.boundary_edges]))


def residual(sys, mesh, k, u, v):
    """a(u, v) + s(u, v) - (f, v0)."""
    a, s = energy_forms(sys, mesh, k, v, u)
    return a + s - source_pairing(sys, mesh, k, v)


def source_pairing(sys, mesh, k, v, cell_exactness=None):
    """(f, v0) by cell quadrature."""
    cx = 2 * k + 2 if cell_exactness is None else cell_exactness
    m, nk = sys.m, cell_dim(k)
    V0 = v.u0.reshape(mesh.n_cells, m, nk)
    total = 0.0
    for c, wt, phi, _, pts in _cell_point_data(sys, mesh, k, cx):
        b, nq = wt.shape
        f = np.asarray(sys.f(pts.reshape(-1, 2)), dtype=float).reshape(b, nq, m)
        vv = np.einsum("bqi,bci->bqc", phi, V0[c])
        total += np.einsum("bq,bqc,bqc->", wt, f, vv)
    return float(total)


def source_norm(sys, mesh, exactness=8):
    """L2 norm of the source over the mesh."""
    total = 0.0
    for c, wt, _, _, pts in _cell_point_data(sys, mesh, 0, exactness):
        b, nq = wt.shape
        f = np.asarray(sys.f(pts.reshape(-1, 2)), dtype=float).reshape(b, nq, -1)
        total += np.einsum("bq,bqc,bqc->", wt, f, f)
    return float(np.sqrt(total))


def local_weak_function(mesh, k, m, v, cell):
    """Split a global WeakVector into the (v0, {edge: vb}) pieces of one cell."""
    dofs = DofMap(mesh.n_cells, mesh.n_edges, m, k)
    v0 = v.u0[dofs.cell(cell)].reshape(m, cell_dim(k))
    vb = {int(e): v.ub[dofs.edge(e)].reshape(m, k + 1) for e in mesh.cell_edges[cell]}
    return v0, vb


__all__ = [
    "WeakVector", "weak_derivative_cell", "weak_derivatives", "energy_forms",
    "energy_identity_rhs", "triple_norm", "boundary_fluxes", "residual",
    "source_pairing", "source_norm", "local_weak_function",
]
