import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgfriedrichs.assembly import DofMap, WeakVector, assemble_monolithic, solve
from wgfriedrichs.forms import (
    boundary_fluxes,
    energy_forms,
    energy_identity_rhs,
    local_weak_function,
    residual,
    source_norm,
    triple_norm,
    weak_derivative_cell,
    weak_derivatives,
)
from wgfriedrichs.friedrichs import FriedrichsSystem, transport_reaction
from wgfriedrichs.mesh import polygonal_grid, square_grid
from wgfriedrichs.polyspace import (CellBasis, cell_dim, monomial_exponents, project_all,
                                    project_cell, project_edge)

from conftest import SYSTEM_NAMES, builtin_systems, smooth_source

UNIT = square_grid(1)
MESH = square_grid(3)
POLY1 = polygonal_grid(1)


def constant_system(A1, A2):
    """m x m system with constant A and zero divergence."""
    A1, A2 = np.asarray(A1, float), np.asarray(A2, float)
    m = len(A1)
    npts = lambda x: len(np.reshape(x, (-1, 2)))
    return FriedrichsSystem(
        m=m,
        A=lambda x: np.broadcast_to(np.stack([A1, A2]), (npts(x), 2, m, m)).copy(),
        divA=lambda x: np.zeros((npts(x), m, m)),
        B=lambda x: np.broadcast_to(np.eye(m), (npts(x), m, m)).copy(),
        M=lambda x, n: np.zeros((npts(n), m, m)),
        f=lambda x: np.zeros((npts(x), m)), sigma0=1.0, mu=1.0, mu0=1.0)


def random_weak(sys, mesh, k, rng):
    return WeakVector.random(DofMap(mesh.n_cells, mesh.n_edges, sys.m, k), rng)


def local_traces(f, mesh, cell, k):
    return {int(e): np.atleast_2d(project_edge(f, mesh, e, k)) for e in mesh.cell_edges[cell]}


def test_weak_derivative_of_x():
    """[TRIVIAL] A = (1, 0), v0 = vb = x, k = 1: weak derivative is 1."""
    sys = constant_system([[1.0]], [[0.0]])
    f = lambda x: x[:, 0]
    v0 = project_cell(f, UNIT, 0, 1)[None]
    w = weak_derivative_cell(sys, UNIT, 0, 1, v0, local_traces(f, UNIT, 0, 1))
    assert np.allclose(w, [[1.0, 0.0, 0.0]], atol=1e-13)


def test_weak_derivative_interior_only():
    """[TRIVIAL] P0, v0 = 1, vb = 0: the derivative vanishes."""
    sys = constant_system([[1.0]], [[0.0]])
    vb = {int(e): np.zeros((1, 1)) for e in UNIT.cell_edges[0]}
    assert np.allclose(weak_derivative_cell(sys, UNIT, 0, 0, [[1.0]], vb), 0.0)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_weak_derivative_of_constants(k):
    """[TRIVIAL] a constant weak function has zero derivative for constant A."""
    rng = np.random.default_rng(k)
    A1, A2 = rng.standard_normal((2, 3, 3))
    sys = constant_system(A1 + A1.T, A2 + A2.T)
    c = rng.standard_normal(3)
    mesh = polygonal_grid(1)
    for cell in range(mesh.n_cells):
        v0 = np.zeros((3, cell_dim(k)))
        v0[:, 0] = c
        vb = {int(e): np.column_stack([c, np.zeros((3, k))]) for e in mesh.cell_edges[cell]}
        assert np.allclose(weak_derivative_cell(sys, mesh, cell, k, v0, vb), 0.0, atol=1e-11)


def exact_a_grad(A1, A2, coef, k, scale):
    """Coefficients of A1 p_x + A2 p_y, differentiating the scaled monomials exactly."""
    index = {e: i for i, e in enumerate(monomial_exponents(k))}
    dx, dy = np.zeros_like(coef), np.zeros_like(coef)
    for i, (a, b) in enumerate(monomial_exponents(k)):
        if a:
            dx[:, index[a - 1, b]] += a / scale * coef[:, i]
        if b:
            dy[:, index[a, b - 1]] += b / scale * coef[:, i]
    return A1 @ dx + A2 @ dy


def consistency_error(k, seed):
    rng = np.random.default_rng(seed)
    m = 2
    A1, A2 = rng.standard_normal((2, m, m))
    A1, A2 = A1 + A1.T, A2 + A2.T
    sys = constant_system(A1, A2)
    mesh = POLY1
    cell = int(rng.integers(mesh.n_cells))
    basis = CellBasis.on(mesh, cell, k)
    coef = rng.standard_normal((m, basis.dim))
    p = lambda x: basis(x) @ coef.T
    w = weak_derivative_cell(sys, mesh, cell, k, coef, local_traces(p, mesh, cell, k))
    want = exact_a_grad(A1, A2, coef, k, basis.scale)
    return np.max(np.abs(w - want)) / max(1.0, np.abs(want).max())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2), st.integers(0, 2**31 - 1))
def test_polynomial_consistency(k, seed):
    """[DERIVED] {p, p on edges} has weak derivative A . grad p for constant A."""
    assert consistency_error(k, seed) <= 1e-11


@pytest.mark.parametrize("k,tol", [(3, 1e-9), (4, 1e-8)])
def test_polynomial_consistency_high_degree(k, tol):
    """Same identity at higher degree, where monomial conditioning costs digits."""
    assert max(consistency_error(k, seed) for seed in range(20)) <= tol


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_weak_derivatives_batch_equals_per_cell(name):
    sys = builtin_systems()[name]
    mesh = polygonal_grid(2)
    k = 2
    v = random_weak(sys, mesh, k, np.random.default_rng(0))
    W = weak_derivatives(sys, mesh, k, v)
    for cell in [0, 3, 11, 30]:
        v0, vb = local_weak_function(mesh, k, sys.m, v, cell)
        assert np.allclose(W[cell], weak_derivative_cell(sys, mesh, cell, k, v0, vb), atol=1e-11)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_no_jump_no_stabilization(name):
    """[TRIVIAL] v0 = vb on every edge gives s(v, v) = 0."""
    sys = builtin_systems()[name]
    f = lambda x: np.column_stack([np.ones(len(x))] * sys.m)
    u0, ub = project_all(f, MESH, 1, sys.m)
    v = WeakVector(u0, ub)
    assert abs(energy_forms(sys, MESH, 1, v, v)[1]) < 1e-13


@pytest.mark.parametrize("name", SYSTEM_NAMES)
@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("make_mesh", [lambda: square_grid(3), lambda: polygonal_grid(2)])
def test_energy_identity(name, k, make_mesh):
    """[PAPER] a(v, v) + s(v, v) equals the quadratic form with N = B + B^T - div A."""
    sys = builtin_systems()[name]
    mesh = make_mesh()
    rng = np.random.default_rng(k)
    for _ in range(5):
        v = random_weak(sys, mesh, k, rng)
        a, s = energy_forms(sys, mesh, k, v, v)
        assert abs(a + s - energy_identity_rhs(sys, mesh, k, v)) <= 1e-11 * (1 + abs(a + s))


@pytest.mark.parametrize("name", SYSTEM_NAMES)
@pytest.mark.parametrize("k", [0, 1, 2])
def test_coercivity(name, k):
    """[PAPER] |||v|||^2 <= a(v, v) + s(v, v)."""
    sys = builtin_systems()[name]
    rng = np.random.default_rng(10 + k)
    for _ in range(10):
        v = random_weak(sys, MESH, k, rng)
        a, s = energy_forms(sys, MESH, k, v, v)
        t = triple_norm(sys, MESH, k, v)
        assert t * t <= a + s + 1e-11 * (1 + t * t)


def test_triple_norm_zero_and_definite():
    """[TRIVIAL] |||0||| = 0; a nonzero trace alone gives a positive norm."""
    sys = builtin_systems()["maxwell2d"]
    dofs = DofMap(MESH.n_cells, MESH.n_edges, 3, 1)
    assert triple_norm(sys, MESH, 1, WeakVector.zeros(dofs)) == 0.0
    ub = np.zeros(dofs.nb)
    ub[dofs.edge(int(MESH.interior_edges[0]))] = 1.0
    assert triple_norm(sys, MESH, 1, WeakVector(np.zeros(dofs.n0), ub)) > 0.0


@pytest.mark.parametrize("name", SYSTEM_NAMES)
@pytest.mark.parametrize("k", [0, 1])
def test_forms_match_assembled_blocks(name, k):
    """[DERIVED] pointwise forms and the assembled matrix agree on {v0, 0} tests."""
    sys = builtin_systems()[name]
    mesh = polygonal_grid(2)
    A, rhs, dofs = assemble_monolithic(sys, mesh, k)
    rng = np.random.default_rng(5)
    w = random_weak(sys, mesh, k, rng)
    v = WeakVector(rng.standard_normal(dofs.n0), np.zeros(dofs.nb))
    a, s = energy_forms(sys, mesh, k, v, w)
    x = np.concatenate([w.u0, w.ub])
    assert a + s == pytest.approx(v.u0 @ (A @ x)[:dofs.n0], rel=1e-11)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_discrete_residual_vanishes(name):
    """[TRIVIAL] the solution satisfies the scheme against random tests."""
    sys = builtin_systems()[name]
    k = 1
    u = solve(sys, MESH, k).u
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = random_weak(sys, MESH, k, rng)
        scale = math.sqrt(np.sum(v.u0**2) + np.sum(v.ub**2))
        assert abs(residual(sys, MESH, k, u, v)) <= 1e-10 * scale


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_flux_telescoping(name):
    """[DERIVED] interior edge fluxes cancel between neighbours."""
    sys = builtin_systems()[name]
    mesh = polygonal_grid(2)
    for k in range(3):
        v = random_weak(sys, mesh, k, np.random.default_rng(k))
        cells, bnd = boundary_fluxes(sys, mesh, k, v)
        assert abs(cells - bnd) <= 1e-11 * (1 + abs(bnd))


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_stability_bound(name):
    """[PAPER] |||u_h||| <= ||f|| / sqrt(sigma0)."""
    base = builtin_systems()[name]
    for seed in range(3):
        sys = base.with_source(smooth_source(base.m, 100 + seed))
        u = solve(sys, MESH, 1).u
        assert triple_norm(sys, MESH, 1, u) <= source_norm(sys, MESH) / math.sqrt(sys.sigma0) * (1 + 1e-9)


def test_outflow_term_only_on_boundary():
    """[DERIVED] transport P0 on one cell, v0 = vb = 1: sigma0 |K| + (1/2) sum |beta . n| = 2."""
    sys = transport_reaction(beta=(1.0, 0.0), alpha=1.0)
    v = WeakVector(np.array([1.0]), np.ones(4))
    assert triple_norm(sys, UNIT, 0, v) == pytest.approx(math.sqrt(1.0 + 1.0))
