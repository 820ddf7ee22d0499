"""Small dense and sparse linear algebra used by the WG solver.

Dense LU, sparse LU and GMRES come from scipy; the Jacobi eigenvalue
routine, the block-Jacobi preconditioner and the nested-dissection ordering
are local.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_FALLBACK_SIZE = 3000
GMRES_RESTART = 60
SINGULAR_PIVOT_RATIO = 1e-14


class LinAlgError(RuntimeError):
    pass


class SingularMatrixError(LinAlgError):
    pass


class NonConvergenceError(LinAlgError):
    """Raised when an iterative solve stops short of the requested residual."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def _check_symmetric(S, tol=1e-10):
    if S.shape[-1] != S.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S), initial=0.0)))
    asym = float(np.max(np.abs(S - np.swapaxes(S, -1, -2)), initial=0.0))
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max |S - S^T| = {asym:.3e})")


def symmetric_eigenvalues(S, tol=1e-13, max_sweeps=60):
    """Eigenvalues of a symmetric matrix (or a stack of them) by cyclic Jacobi.

    Returns the eigenvalues sorted ascending along the last axis.
    """
    S = np.asarray(S, dtype=float)
    _check_symmetric(S)
    shape = S.shape
    n = shape[-1]
    a = 0.5 * (S + np.swapaxes(S, -1, -2))
    a = a.reshape(-1, n, n).copy()
    norm = np.sqrt(np.sum(a * a, axis=(1, 2)))
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(a[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= tol * norm):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > 0.0
                if not np.any(active):
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    theta = (a[:, q, q] - a[:, p, p]) / (2.0 * apq)
                    t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                # sign(0) = 0 would skip a rotation that is needed
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp = a[:, :, p].copy()
                cq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * cp - s[:, None] * cq
                a[:, :, q] = s[:, None] * cp + c[:, None] * cq
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
    else:
        raise LinAlgError("Jacobi eigenvalue iteration did not converge")
    w = np.sort(np.diagonal(a, axis1=1, axis2=2), axis=1)
    return w.reshape(shape[:-1])


def spectral_radius(S):
    """Largest eigenvalue magnitude of a symmetric matrix."""
    w = symmetric_eigenvalues(S)
    return np.max(np.abs(w), axis=-1)


def solve_dense(A, b):
    """LU solve with partial pivoting; rejects numerically singular matrices."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"solve_dense needs a square matrix, got {A.shape}")
    scale = float(np.max(np.abs(A), initial=0.0))
    if scale == 0.0:
        raise SingularMatrixError("matrix is zero")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diagonal(lu))
    if np.min(pivots) < SINGULAR_PIVOT_RATIO * scale:
        raise SingularMatrixError(
            f"singular matrix: pivot {np.min(pivots):.3e} at row {int(np.argmin(pivots))}"
        )
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def csr_from_triplets(rows, cols, vals, shape):
    """Canonical CSR matrix (summed duplicates, sorted column indices)."""
    A = sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def block_jacobi(A, block_size):
    """Preconditioner applying the inverses of the diagonal blocks of ``A``."""
    n = A.shape[0]
    if block_size is None or block_size <= 0 or n % block_size:
        block_size = 1
    nb = n // block_size
    B = sp.bsr_matrix(A, blocksize=(block_size, block_size))
    block_rows = np.repeat(np.arange(nb), np.diff(B.indptr))
    diag = B.indices == block_rows
    blocks = np.zeros((nb, block_size, block_size))
    blocks[block_rows[diag]] = B.data[diag]
    inv = np.empty_like(blocks)
    for K in range(nb):
        try:
            inv[K] = np.linalg.inv(blocks[K])
        except np.linalg.LinAlgError:
            inv[K] = np.eye(block_size)

    def apply(x):
        y = np.einsum("kij,kj->ki", inv, np.reshape(x, (nb, block_size)))
        return y.ravel()

    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def _relres(A, x, b, bnorm):
    return float(np.linalg.norm(b - A @ x)) / bnorm


def nested_dissection(points, adjacency, leaf=4):
    """Geometric nested-dissection ordering of graph nodes.

    Splits at the median of the longer bounding-box side, moves the nodes of
    the lower half that touch the upper half into a separator and numbers
    the separator after both halves.  ``adjacency`` is a sparse matrix.
    """
    points = np.asarray(points, dtype=float)
    adj = sp.csr_matrix(adjacency)
    n = len(points)
    side = np.full(n, -1)
    order = []
    # stack of (node ids, separator to emit after them)
    stack = [(np.arange(n), None)]
    while stack:
        ids, sep = stack.pop()
        if ids is None:
            order.extend(sep.tolist())
            continue
        if len(ids) <= leaf:
            order.extend(ids.tolist())
            continue
        P = points[ids]
        ax = int(np.argmax(np.ptp(P, axis=0)))
        cut = np.median(P[:, ax])
        low = P[:, ax] < cut
        if low.all() or not low.any():
            order.extend(ids.tolist())
            continue
        side[ids[low]] = 0
        side[ids[~low]] = 1
        sub = adj[ids[low]]
        touches = np.zeros(len(sub.indptr) - 1, dtype=bool)
        hit = side[sub.indices] == 1
        rows = np.repeat(np.arange(len(touches)), np.diff(sub.indptr))
        touches[rows[hit]] = True
        side[ids] = -1
        lo_ids = ids[low][~touches]
        sep_ids = ids[low][touches]
        # processed in stack order: low half, high half, then separator
        stack.append((None, sep_ids))
        stack.append((ids[~low], None))
        stack.append((lo_ids, None))
    return np.asarray(order, dtype=int)


def _direct(A, b, ordering, block_size):
    """Sparse LU, with a block nested-dissection ordering when one is given."""
    if ordering is not None:
        bs = block_size or 1
        perm = (np.asarray(ordering)[:, None] * bs + np.arange(bs)).ravel()
        Ap = A[perm][:, perm].tocsc()
        try:
            lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=1e-3,
                           options=dict(SymmetricMode=True))
        except RuntimeError:
            lu = None
        if lu is not None:
            def apply(r):
                y = lu.solve(r[perm])
                x = np.empty_like(y)
                x[perm] = y
                return x
            return apply
    lu = spla.splu(A.tocsc())
    return lu.solve


def solve_sparse(A, b, tol=1e-12, block_size=None, method="auto", maxiter=40,
                 ordering=None):
    """Solve ``A x = b`` to relative residual ``tol``.

    ``method``:
      ``"auto"``   dense LU up to DENSE_FALLBACK_SIZE unknowns, otherwise sparse
                   LU (ordered by ``ordering``, a permutation of the blocks of
                   size ``block_size``) with iterative refinement, then GMRES;
      ``"gmres"``  restarted GMRES with the block-Jacobi preconditioner;
      ``"direct"`` sparse LU with iterative refinement only.
    ``maxiter`` counts GMRES restart cycles.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"solve_sparse needs a square matrix, got {A.shape}")
    if method not in ("auto", "gmres", "direct"):
        raise ValueError(f"unknown method {method!r}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)

    if method == "auto" and n <= DENSE_FALLBACK_SIZE:
        try:
            x = solve_dense(A.toarray(), b)
        except SingularMatrixError as exc:
            raise NonConvergenceError(f"dense fallback failed: {exc}", 1.0) from exc
        res = _relres(A, x, b, bnorm)
        if res > tol:
            raise NonConvergenceError("dense solve missed tolerance", res)
        return x

    x = np.zeros(n)
    res = 1.0
    if method in ("auto", "direct"):
        try:
            lu_solve = _direct(A, b, ordering, block_size)
        except RuntimeError as exc:
            if method == "direct":
                raise NonConvergenceError(f"sparse LU failed: {exc}", res) from exc
            lu_solve = None
        if lu_solve is not None:
            x = lu_solve(b)
            res = _relres(A, x, b, bnorm)
            for _ in range(3):
                if res <= tol or not np.isfinite(res):
                    break
                x = x + lu_solve(b - A @ x)
                res = _relres(A, x, b, bnorm)
            if res <= tol:
                return x
            log.info("sparse LU stopped at relative residual %.3e", res)
            if not np.isfinite(res):
                x, res = np.zeros(n), 1.0
        if method == "direct":
            raise NonConvergenceError("sparse LU missed tolerance", res)

    M = block_jacobi(A, block_size)
    for _ in range(3):
        r = b - A @ x
        rnorm = float(np.linalg.norm(r))
        # GMRES tolerance is relative to the current residual
        d, info = spla.gmres(
            A, r, rtol=min(0.5, 0.25 * tol * bnorm / rnorm), atol=0.0,
            restart=GMRES_RESTART, maxiter=maxiter, M=M,
        )
        x = x + d
        res = _relres(A, x, b, bnorm)
        if res <= tol or not np.isfinite(res):
            break
    if res <= tol:
        return x
    raise NonConvergenceError("GMRES did not converge", res)
