"""Manufactured solutions, error measures and convergence tables."""
from __future__ import annotations

import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import Discretization, WeakVector, _cell_point_data, solve
from .forms import triple_norm
from .friedrichs import FriedrichsSystem, conv_diff_system, maxwell2d, transport_reaction
from .mesh import polygonal_grid, square_grid
from .polyspace import cell_dim, eval_cell_basis, project_all

log = logging.getLogger(__name__)

ERROR_EXACTNESS_OFFSET = 6
CSV_HEADER = "level,h,dofs,err_l2,rate_l2,err_triple,rate_triple,seconds"


@dataclass(frozen=True)
class ManufacturedProblem:
    system: FriedrichsSystem      # carries the derived source and the exact solution
    exact: Callable               # (n, 2) -> (n, m)
    exact_grad: Callable          # (n, 2) -> (n, m, 2)
    name: str
    epsilon: float | None = None  # set for the convection-diffusion problems
    # components entering the tabulated L2 error; None means all of them
    l2_components: tuple | None = None

    def with_mu(self, mu):
        return dataclasses.replace(self, system=self.system.with_mu(mu))


def consistency_residual(problem, points):
    """Relative residual of A1 u_x + A2 u_y + B u - f at ``points``."""
    x = np.asarray(points, dtype=float).reshape(-1, 2)
    sys = problem.system
    u = problem.exact(x)
    du = problem.exact_grad(x)
    lhs = np.einsum("pkij,pjk->pi", sys.A(x), du) + np.einsum("pij,pj->pi", sys.B(x), u)
    f = np.asarray(sys.f(x), dtype=float).reshape(len(x), -1)
    scale = max(1.0, float(np.max(np.abs(f))))
    return float(np.max(np.abs(lhs - f))) / scale


def _bubble(t):
    """t(1 - t) and its first two derivatives."""
    return t * (1.0 - t), 1.0 - 2.0 * t, -2.0 * np.ones_like(t)


def _cdr_problem(epsilon, beta, alpha, factor, name):
    """Convection-diffusion problem with u(x, y) = X(x) Y(y) from a 1D factor."""
    s = math.sqrt(epsilon)
    b1, b2 = map(float, beta)

    def parts(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return factor(x[:, 0]), factor(x[:, 1])

    def exact(x):
        (X, dX, _), (Y, dY, _) = parts(x)
        return np.column_stack([-s * dX * Y, -s * X * dY, X * Y])

    def exact_grad(x):
        (X, dX, ddX), (Y, dY, ddY) = parts(x)
        g = np.empty((len(X), 3, 2))
        g[:, 0, 0], g[:, 0, 1] = -s * ddX * Y, -s * dX * dY
        g[:, 1, 0], g[:, 1, 1] = -s * dX * dY, -s * X * ddY
        g[:, 2, 0], g[:, 2, 1] = dX * Y, X * dY
        return g

    def source(x):
        (X, dX, ddX), (Y, dY, ddY) = parts(x)
        return -epsilon * (ddX * Y + X * ddY) + b1 * dX * Y + b2 * X * dY + alpha * X * Y

    sys = conv_diff_system(epsilon, beta=beta, alpha=alpha, f=source, exact=exact)
    # the scalar unknown u is the tabulated quantity; sigma enters the energy norm only
    return ManufacturedProblem(sys, exact, exact_grad, name, float(epsilon), l2_components=(2,))


def manufactured_cdr_smooth(epsilon, beta=(1.0, 2.0), alpha=1.0):
    """u = x(1-x) y(1-y) on the unit square."""
    return _cdr_problem(epsilon, beta, alpha, _bubble, "cdr-smooth")


def manufactured_cdr_layer(epsilon, beta=(1.0, 1.0), alpha=1.0):
    """u = sin(pi x/2) sin(pi y/2) (1 - e^{(x-1)/sqrt(eps)}) (1 - e^{(y-1)/sqrt(eps)})."""
    s = math.sqrt(epsilon)
    w = 0.5 * math.pi

    def factor(t):
        # exponent (t - 1)/s <= 0 on the unit square, so exp never overflows
        E = np.exp(np.minimum(t - 1.0, 0.0) / s)
        S, C = np.sin(w * t), np.cos(w * t)
        F = S * (1.0 - E)
        dF = w * C * (1.0 - E) - S * E / s
        ddF = -w * w * S * (1.0 - E) - 2.0 * w * C * E / s - S * E / epsilon
        return F, dF, ddF

    return _cdr_problem(epsilon, beta, alpha, factor, "cdr-layer")


def manufactured_maxwell(nu=1.0, sigma=1.0):
    """E = 8x(1-x)y(1-y), H = (-E_y, E_x); unknown (H1, H2, E)."""
    nu, sigma = float(nu), float(sigma)

    def parts(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return _bubble(x[:, 0]), _bubble(x[:, 1])

    def exact(x):
        (X, dX, _), (Y, dY, _) = parts(x)
        return 8.0 * np.column_stack([-X * dY, dX * Y, X * Y])

    def exact_grad(x):
        (X, dX, ddX), (Y, dY, ddY) = parts(x)
        g = np.empty((len(X), 3, 2))
        g[:, 0, 0], g[:, 0, 1] = -dX * dY, -X * ddY
        g[:, 1, 0], g[:, 1, 1] = ddX * Y, dX * dY
        g[:, 2, 0], g[:, 2, 1] = dX * Y, X * dY
        return 8.0 * g

    def h(x):
        (X, dX, _), (Y, dY, _) = parts(x)
        Ex, Ey = 8.0 * dX * Y, 8.0 * X * dY
        return np.column_stack([(1.0 - nu) * Ey, (nu - 1.0) * Ex])

    def g(x):
        (X, dX, ddX), (Y, dY, ddY) = parts(x)
        return 8.0 * (sigma * X * Y - ddX * Y - X * ddY)

    sys = maxwell2d(nu=nu, sigma=sigma, h=h, g=g, exact=exact)
    return ManufacturedProblem(sys, exact, exact_grad, "maxwell2d")


def manufactured_transport(beta=(1.0, 2.0), alpha=1.0):
    """u = sin(pi x) sin(pi y), which vanishes on the whole boundary."""
    b1, b2 = map(float, beta)
    p = math.pi

    def exact(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return (np.sin(p * x[:, 0]) * np.sin(p * x[:, 1]))[:, None]

    def exact_grad(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        sx, sy = np.sin(p * x[:, 0]), np.sin(p * x[:, 1])
        cx, cy = np.cos(p * x[:, 0]), np.cos(p * x[:, 1])
        return np.stack([p * cx * sy, p * sx * cy], axis=-1)[:, None, :]

    def source(x):
        du = exact_grad(x)[:, 0]
        return b1 * du[:, 0] + b2 * du[:, 1] + alpha * exact(x)[:, 0]

    sys = transport_reaction(beta=beta, alpha=alpha, f=source, exact=exact)
    return ManufacturedProblem(sys, exact, exact_grad, "transport")


def _values(u_h, mesh, k, m, c, phi):
    V0 = u_h.u0.reshape(mesh.n_cells, m, cell_dim(k))
    return np.einsum("bqi,bci->bqc", phi, V0[c])


def l2_error(sys, mesh, k, u_h, components=None, exact=None):
    """||u - u_h^0|| over the mesh, optionally restricted to some components."""
    exact = sys.exact if exact is None else exact
    if exact is None:
        raise ValueError(f"system {sys.name!r} has no exact solution")
    comps = slice(None) if components is None else list(components)
    total = 0.0
    for c, w, phi, _, pts in _cell_point_data(sys, mesh, k, 2 * k + ERROR_EXACTNESS_OFFSET):
        b, nq = w.shape
        u = np.asarray(exact(pts.reshape(-1, 2)), dtype=float).reshape(b, nq, sys.m)
        d = (u - _values(u_h, mesh, k, sys.m, c, phi))[..., comps]
        total += float(np.einsum("bq,bqc,bqc->", w, d, d))
    return math.sqrt(total)


def interpolate(sys, mesh, k, exact=None):
    """Q_h u: cellwise and edgewise L2 projections of the exact solution."""
    exact = sys.exact if exact is None else exact
    if exact is None:
        raise ValueError(f"system {sys.name!r} has no exact solution")
    u0, ub = project_all(exact, mesh, k, sys.m, 2 * k + ERROR_EXACTNESS_OFFSET)
    return WeakVector(u0, ub)


def triple_error(sys, mesh, k, u_h, exact=None):
    """|||Q_h u - u_h|||."""
    return triple_norm(sys, mesh, k, interpolate(sys, mesh, k, exact) - u_h)


def centroid_values(mesh, k, m, u_h):
    """u_h^0 sampled at the cell centroids, shape (n_cells, m)."""
    phi = eval_cell_basis(mesh.centroids, mesh.centroids, mesh.diameters, k)
    V0 = u_h.u0.reshape(mesh.n_cells, m, cell_dim(k))
    return np.einsum("ci,cji->cj", phi, V0)


def cdr_weak_gradient(u_h, mesh, k, epsilon):
    """-(sigma1_h^0, sigma2_h^0)/sqrt(eps) as coefficients (n_cells, 2, n_k)."""
    V0 = u_h.u0.reshape(mesh.n_cells, 3, cell_dim(k))
    return -V0[:, :2] / math.sqrt(epsilon)


def cdr_gradient_error(problem, mesh, k, u_h):
    """||grad u - grad_w u_h|| for a convection-diffusion problem."""
    G = cdr_weak_gradient(u_h, mesh, k, problem.epsilon)
    total = 0.0
    for c, w, phi, _, pts in _cell_point_data(problem.system, mesh, k,
                                              2 * k + ERROR_EXACTNESS_OFFSET):
        b, nq = w.shape
        du = problem.exact_grad(pts.reshape(-1, 2))[:, 2, :].reshape(b, nq, 2)
        d = du - np.einsum("bqi,bci->bqc", phi, G[c])
        total += float(np.einsum("bq,bqc,bqc->", w, d, d))
    return math.sqrt(total)


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dofs: int
    err_l2: float
    rate_l2: float | None
    err_triple: float
    rate_triple: float | None
    seconds: float


def observed_rate(coarse, fine):
    if coarse > 0 and fine > 0:
        return math.log2(coarse / fine)
    return float("nan")


@dataclass
class ConvergenceTable:
    problem: str
    degree: int
    rows: list = field(default_factory=list)

    def add(self, level, h, dofs, err_l2, err_triple, seconds):
        prev = self.rows[-1] if self.rows else None
        self.rows.append(ConvergenceRow(
            level, h, dofs, err_l2,
            observed_rate(prev.err_l2, err_l2) if prev else None,
            err_triple,
            observed_rate(prev.err_triple, err_triple) if prev else None,
            seconds,
        ))
        return self.rows[-1]

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, include_seconds=True):
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            cells = [str(r.level), _g(r.h), str(r.dofs), _g(r.err_l2), _g(r.rate_l2),
                     _g(r.err_triple), _g(r.rate_triple),
                     _g(r.seconds) if include_seconds else ""]
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()


def _g(x):
    return "" if x is None else f"{x:.6g}"


class ConvergenceError(RuntimeError):
    """A level failed; ``table`` holds the rows finished before it."""

    def __init__(self, message, table):
        super().__init__(message)
        self.table = table


MESH_FAMILIES = {"square": square_grid, "polygonal": polygonal_grid}


def run_convergence(problem, k, levels, mesh_family="square", tol=1e-12, on_row=None,
                    on_solution=None):
    """Solve ``problem`` on each level of a mesh family and tabulate both errors.

    ``mesh_family`` is a family name or a callable level -> mesh.
    ``on_row(row)`` and ``on_solution(level, mesh, u_h)`` fire after each level.
    """
    levels = list(levels)
    if not levels:
        raise ValueError("levels must be nonempty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be ascending, got {levels}")
    make = MESH_FAMILIES[mesh_family] if isinstance(mesh_family, str) else mesh_family
    sys = problem.system
    table = ConvergenceTable(problem.name, k)
    for level in levels:
        try:
            mesh = make(level)
            disc = Discretization(sys, mesh, k)
            sol = solve(sys, mesh, k, tol=tol, disc=disc)
            e0 = l2_error(sys, mesh, k, sol.u, components=problem.l2_components)
            e1 = triple_error(sys, mesh, k, sol.u)
        except Exception as exc:
            raise ConvergenceError(f"level {level} failed: {exc}", table) from exc
        row = table.add(level, mesh.h, sol.dofs.n0, e0, e1, sol.seconds)
        log.info("%s P%d level %d: L2 %.4e triple %.4e (%.1fs)",
                 problem.name, k, level, e0, e1, sol.seconds)
        if on_row is not None:
            on_row(row)
        if on_solution is not None:
            on_solution(level, mesh, sol.u)
    return table
