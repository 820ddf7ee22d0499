"""Positive symmetric first-order systems  A1 u_x + A2 u_y + B u = f  with
boundary equation (M - D_n) u = 0, and the builtin problem families.

All coefficient callbacks are vectorised: they take an (n, 2) array of
points (and, for M, an (n, 2) array of unit normals) and return
(n, 2, m, m) for A, (n, m, m) for divA, B and M, and (n, m) for f and the
exact solution.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import spectral_radius, symmetric_eigenvalues
from .polyspace import cell_batches, edge_rules


@dataclass(frozen=True)
class FriedrichsSystem:
    m: int
    A: Callable
    divA: Callable
    B: Callable
    M: Callable
    f: Callable
    sigma0: float
    mu: float
    mu0: float
    exact: Callable | None = None
    name: str = "custom"

    def with_mu(self, mu):
        """Same system with a different stabilization constant.

        The coercivity margin shifts with mu, since mu0 = mu - max rho(D_n)/2.
        """
        mu0 = self.mu0 + (mu - self.mu)
        if not mu > 0 or not mu0 > 0:
            half_rho = self.mu - self.mu0
            raise ValueError(
                f"mu = {mu} violates mu - rho(D_n)/2 > 0: rho(D_n)/2 reaches {half_rho:.6g}"
            )
        return dataclasses.replace(self, mu=float(mu), mu0=float(mu0))

    def with_source(self, f, exact=None, name=None):
        return dataclasses.replace(
            self, f=f, exact=exact if exact is not None else self.exact,
            name=name if name is not None else self.name,
        )


def _points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 2)


def _scalar_field(value):
    """Constant or callable scalar coefficient -> callable (n, 2) -> (n,)."""
    if callable(value):
        return lambda x: np.asarray(value(_points(x)), dtype=float).reshape(-1)
    c = float(value)
    return lambda x: np.full(len(_points(x)), c)


def d_n(sys, x, n):
    """Boundary operator D_n = A1 n1 + A2 n2, for one point or a stack."""
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, 2)
    N = np.broadcast_to(n, X.shape) if n.ndim == 1 else n.reshape(-1, 2)
    D = np.einsum("pkij,pk->pij", sys.A(X), N)
    return D[0] if single else D


@dataclass
class AdmissibilityReport:
    symmetry: float        # max |A_k - A_k^T|
    positivity: float      # min eig((B + B^T - divA)/2) - sigma0
    boundary: float        # min eig(M + M^T) on the boundary
    stabilization: float   # min (mu - rho(D_n)/2) - mu0 on all edges
    divergence: float      # max relative mismatch of divA vs finite differences
    tol: float = 1e-12
    fd_tol: float = 1e-5

    @property
    def failures(self):
        out = []
        if self.symmetry > self.tol:
            out.append(f"A_k not symmetric (max asymmetry {self.symmetry:.3e})")
        if self.positivity < -self.tol:
            out.append(f"B + B^T - divA >= 2 sigma0 I fails (margin {self.positivity:.3e})")
        if self.boundary < -self.tol:
            out.append(f"M + M^T >= 0 fails (min eigenvalue {self.boundary:.3e})")
        if self.stabilization < -self.tol:
            out.append(f"mu - rho(D_n)/2 >= mu0 fails (margin {self.stabilization:.3e})")
        if self.divergence > self.fd_tol:
            out.append(f"divA disagrees with finite differences ({self.divergence:.3e})")
        return out

    @property
    def passed(self):
        return not self.failures


def check_admissibility(sys, mesh, samples_per_cell=4, fd_step=1e-6):
    """Sample the positivity/symmetry conditions over a mesh.

    Cells are sampled with a quadrature rule of exactness ``samples_per_cell``
    and edges with ``samples_per_cell`` Gauss points.
    """
    xc = np.concatenate([b.points.reshape(-1, 2) for b in cell_batches(mesh, samples_per_cell)])
    er = edge_rules(mesh, 2 * samples_per_cell - 1)
    xe = er.points.reshape(-1, 2)
    ne = np.repeat(mesh.normals, er.points.shape[1], axis=0)
    bmask = np.repeat(mesh.edge_cells[:, 1] < 0, er.points.shape[1])

    A = sys.A(xc)
    symmetry = float(np.max(np.abs(A - np.swapaxes(A, -1, -2))))
    B = sys.B(xc)
    dA = sys.divA(xc)
    N = 0.5 * (B + np.swapaxes(B, -1, -2) - dA)
    positivity = float(np.min(symmetric_eigenvalues(N))) - sys.sigma0

    Mb = sys.M(xe[bmask], ne[bmask])
    Ms = Mb + np.swapaxes(Mb, -1, -2)
    boundary = float(np.min(symmetric_eigenvalues(Ms))) if len(Ms) else 0.0

    D = d_n(sys, xe, ne)
    rho = spectral_radius(0.5 * (D + np.swapaxes(D, -1, -2)))
    stabilization = float(np.min(sys.mu - 0.5 * rho)) - sys.mu0

    hx = np.array([fd_step, 0.0])
    hy = np.array([0.0, fd_step])
    fd = ((sys.A(xc + hx)[:, 0] - sys.A(xc - hx)[:, 0])
          + (sys.A(xc + hy)[:, 1] - sys.A(xc - hy)[:, 1])) / (2.0 * fd_step)
    scale = max(1.0, float(np.max(np.abs(dA))))
    divergence = float(np.max(np.abs(fd - dA))) / scale

    return AdmissibilityReport(symmetry, positivity, boundary, stabilization, divergence)


def _broadcast(mat, n):
    return np.broadcast_to(mat, (n,) + mat.shape)


def transport_reaction(beta=(1.0, 2.0), alpha=1.0, f=1.0, mu=None, exact=None):
    """Scalar transport-reaction  beta . grad u + alpha u = f,  u = 0 on inflow."""
    beta = np.asarray(beta, dtype=float).reshape(2)
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    fs = _scalar_field(f)
    Ak = beta.reshape(2, 1, 1)
    rho_max = float(np.hypot(*beta))
    mu = 0.5 * rho_max + 1.0 if mu is None else float(mu)
    mu0 = mu - 0.5 * rho_max
    if not mu0 > 0:
        raise ValueError(
            f"mu = {mu} violates mu - rho(D_n)/2 > 0: rho(D_n)/2 reaches {0.5 * rho_max:.6g}"
        )

    def M(x, n):
        bn = np.abs(np.asarray(n).reshape(-1, 2) @ beta)
        return bn[:, None, None]

    return FriedrichsSystem(
        m=1,
        A=lambda x: _broadcast(Ak, len(_points(x))),
        divA=lambda x: np.zeros((len(_points(x)), 1, 1)),
        B=lambda x: np.full((len(_points(x)), 1, 1), alpha),
        M=M,
        f=lambda x: fs(x)[:, None],
        sigma0=alpha,
        mu=mu,
        mu0=mu0,
        exact=exact,
        name="transport",
    )


def conv_diff_system(epsilon, beta=(1.0, 2.0), alpha=1.0, f=0.0, div_beta=None,
                     alpha0=None, beta_inf=None, mu=None, exact=None):
    """-eps Lap u + beta . grad u + alpha u = f, u = 0 on the boundary, as the
    first-order system in (sigma1, sigma2, u) with sigma = -sqrt(eps) grad u.

    Constant ``beta``/``alpha`` need nothing else.  For coefficient fields
    pass ``div_beta`` (callable), ``alpha0`` (lower bound of alpha - div beta/2)
    and ``beta_inf`` (sup of max_i |beta_i|).
    """
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    s = np.sqrt(epsilon)
    if callable(beta):
        if div_beta is None or beta_inf is None:
            raise ValueError("a beta field needs div_beta and beta_inf")
        beta_fn = lambda x: np.asarray(beta(_points(x)), dtype=float).reshape(-1, 2)
        div_fn = _scalar_field(div_beta)
        beta_2 = np.sqrt(2.0) * float(beta_inf)
    else:
        b = np.asarray(beta, dtype=float).reshape(2)
        beta_fn = lambda x: np.broadcast_to(b, (len(_points(x)), 2))
        div_fn = _scalar_field(0.0) if div_beta is None else _scalar_field(div_beta)
        beta_inf = float(np.max(np.abs(b))) if beta_inf is None else float(beta_inf)
        beta_2 = float(np.hypot(*b))
    alpha_fn = _scalar_field(alpha)
    if alpha0 is None:
        if callable(alpha) or callable(beta) or div_beta is not None:
            raise ValueError("variable coefficients need an explicit alpha0")
        alpha0 = float(alpha)
    if not alpha0 > 0:
        raise ValueError(f"alpha - div(beta)/2 must be bounded below by alpha0 > 0, got {alpha0}")
    fs = _scalar_field(f)

    def A(x):
        bx = beta_fn(x)
        out = np.zeros((len(bx), 2, 3, 3))
        out[:, 0, 0, 2] = out[:, 0, 2, 0] = s
        out[:, 0, 2, 2] = bx[:, 0]
        out[:, 1, 1, 2] = out[:, 1, 2, 1] = s
        out[:, 1, 2, 2] = bx[:, 1]
        return out

    def divA(x):
        d = div_fn(x)
        out = np.zeros((len(d), 3, 3))
        out[:, 2, 2] = d
        return out

    def B(x):
        a = alpha_fn(x)
        out = np.zeros((len(a), 3, 3))
        out[:, 0, 0] = out[:, 1, 1] = 1.0
        out[:, 2, 2] = a
        return out

    def M(x, n):
        n = np.asarray(n, dtype=float).reshape(-1, 2)
        out = np.zeros((len(n), 3, 3))
        out[:, 0, 2] = -s * n[:, 0]
        out[:, 1, 2] = -s * n[:, 1]
        out[:, 2, 0] = s * n[:, 0]
        out[:, 2, 1] = s * n[:, 1]
        out[:, 2, 2] = 1.0
        return out

    def rhs(x):
        v = fs(x)
        out = np.zeros((len(v), 3))
        out[:, 2] = v
        return out

    # rho(D_n) = (|beta.n| + sqrt((beta.n)^2 + 4 eps)) / 2, largest when |beta.n| = |beta|
    rho_max = 0.5 * (beta_2 + np.sqrt(beta_2**2 + 4.0 * epsilon))
    mu = beta_inf + 1.0 if mu is None else float(mu)
    mu0 = mu - 0.5 * rho_max
    if not mu0 > 0:
        raise ValueError(
            f"mu = {mu} violates mu - rho(D_n)/2 > 0: rho(D_n)/2 reaches {0.5 * rho_max:.6g}"
        )
    return FriedrichsSystem(
        m=3, A=A, divA=divA, B=B, M=M, f=rhs,
        sigma0=min(1.0, float(alpha0)), mu=mu, mu0=float(mu0),
        exact=exact, name="conv-diff",
    )


_MAXWELL_A = np.array([
    [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
])


def maxwell2d(nu=1.0, sigma=1.0, h=None, g=None, sigma0=None, mu=1.0, exact=None):
    """2D Maxwell  nu H + curl E = h,  sigma E - curl H = g,  E = 0 on the
    boundary, unknown (H1, H2, E)."""
    if sigma0 is None:
        if callable(nu) or callable(sigma):
            raise ValueError("variable nu/sigma need an explicit sigma0")
        sigma0 = min(float(nu), float(sigma))
    if not float(sigma0) > 0:
        raise ValueError(f"nu and sigma must be uniformly positive (sigma0 = {sigma0})")
    nu_fn, sigma_fn = _scalar_field(nu), _scalar_field(sigma)

    def B(x):
        a, b = nu_fn(x), sigma_fn(x)
        out = np.zeros((len(a), 3, 3))
        out[:, 0, 0] = out[:, 1, 1] = a
        out[:, 2, 2] = b
        return out

    def M(x, n):
        n = np.asarray(n, dtype=float).reshape(-1, 2)
        out = np.zeros((len(n), 3, 3))
        out[:, 0, 2] = -n[:, 1]
        out[:, 1, 2] = n[:, 0]
        out[:, 2, 0] = n[:, 1]
        out[:, 2, 1] = -n[:, 0]
        out[:, 2, 2] = 1.0
        return out

    def rhs(x):
        x = _points(x)
        out = np.zeros((len(x), 3))
        if h is not None:
            out[:, :2] = np.asarray(h(x), dtype=float).reshape(-1, 2)
        if g is not None:
            out[:, 2] = np.asarray(g(x), dtype=float).reshape(-1)
        return out

    mu = float(mu)
    mu0 = mu - 0.5
    if not mu0 > 0:
        raise ValueError(f"mu = {mu} violates mu - rho(D_n)/2 > 0: rho(D_n)/2 reaches 0.5")
    return FriedrichsSystem(
        m=3,
        A=lambda x: _broadcast(_MAXWELL_A, len(_points(x))),
        divA=lambda x: np.zeros((len(_points(x)), 3, 3)),
        B=B, M=M, f=rhs,
        sigma0=float(sigma0), mu=mu, mu0=mu0, exact=exact, name="maxwell2d",
    )
