import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgfriedrichs.friedrichs import (
    check_admissibility,
    conv_diff_system,
    d_n,
    maxwell2d,
    transport_reaction,
)
from wgfriedrichs.linalg import spectral_radius, symmetric_eigenvalues
from wgfriedrichs.mesh import polygonal_grid, square_grid

from conftest import builtin_systems

MESH = square_grid(3)


def unit(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def test_maxwell_dn_x_normal():
    """[PAPER] displayed boundary operator with n = (1, 0)."""
    D = d_n(maxwell2d(), np.array([0.3, 0.4]), np.array([1.0, 0.0]))
    assert np.allclose(D, [[0, 0, 0], [0, 0, -1], [0, -1, 0]])


@pytest.mark.parametrize("name", ["transport", "cdr", "maxwell2d"])
def test_dn_odd_and_linear(name):
    """[TRIVIAL] D_{-n} = -D_n and D_n is linear in n."""
    sys = builtin_systems()[name]
    x = np.array([0.2, 0.7])
    n1, n2 = unit(0.3), unit(1.9)
    assert np.allclose(d_n(sys, x, -n1), -d_n(sys, x, n1), atol=1e-15)
    assert np.allclose(d_n(sys, x, 2 * n1 - 3 * n2),
                       2 * d_n(sys, x, n1) - 3 * d_n(sys, x, n2), atol=1e-13)


def test_cdr_dn_y_normal():
    """[PAPER] entries of D_n for n = (0, 1): (1,3) = 0, (2,3) = sqrt eps, (3,3) = beta_2."""
    eps, beta = 1e-2, (1.0, 2.0)
    D = d_n(conv_diff_system(eps, beta=beta), np.array([0.5, 0.5]), np.array([0.0, 1.0]))
    assert D[0, 2] == 0 and D[1, 2] == pytest.approx(math.sqrt(eps)) and D[2, 2] == 2.0


def test_cdr_matrices():
    """[PAPER] A1 entry (1,3) = sqrt eps, entry (3,3) = beta_1; mu default |beta|_inf + 1."""
    eps = 0.04
    sys = conv_diff_system(eps, beta=(1.0, 2.0))
    A = sys.A(np.array([[0.1, 0.2]]))[0]
    assert A[0, 0, 2] == pytest.approx(0.2) and A[0, 2, 2] == 1.0
    assert sys.mu == 3.0


def test_cdr_n_matrix():
    """[DERIVED] B + B^T - divA = diag(2, 2, 2 alpha - div beta) for constant data."""
    sys = conv_diff_system(0.1, beta=(1.0, 2.0), alpha=0.7)
    x = np.random.default_rng(1).random((5, 2))
    N = sys.B(x) + np.swapaxes(sys.B(x), 1, 2) - sys.divA(x)
    assert np.allclose(N, np.diag([2.0, 2.0, 1.4]))


def test_cdr_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        conv_diff_system(0.0)


def test_cdr_rho_bound():
    """[PAPER] rho(D_n) <= |beta . n| + sqrt eps."""
    eps, beta = 0.09, np.array([1.0, 2.0])
    sys = conv_diff_system(eps, beta=tuple(beta))
    for th in np.linspace(0, 2 * np.pi, 37):
        n = unit(th)
        rho = spectral_radius(d_n(sys, np.zeros(2), n))
        assert rho <= abs(beta @ n) + math.sqrt(eps) + 1e-12


def test_maxwell_defaults():
    """[PAPER] mu = 1 and B = diag(nu, nu, sigma)."""
    sys = maxwell2d(nu=2.0, sigma=3.0)
    assert sys.mu == 1.0
    assert np.allclose(sys.B(np.zeros((1, 2)))[0], np.diag([2.0, 2.0, 3.0]))
    assert sys.sigma0 == 2.0


@pytest.mark.parametrize("nu,sigma", [(0.0, 1.0), (1.0, -1.0)])
def test_maxwell_rejects_nonpositive(nu, sigma):
    with pytest.raises(ValueError):
        maxwell2d(nu=nu, sigma=sigma)


def test_maxwell_boundary_rows():
    """[DERIVED] M - D_n annihilates (H1, H2, 0) and maps E to (-2 n2, 2 n1, 1) E,
    so the boundary equation is E = 0."""
    sys = maxwell2d()
    n = unit(0.8)
    x = np.array([[1.0, 0.3]])
    R = sys.M(x, n[None])[0] - d_n(sys, x[0], n)
    assert np.allclose(R @ [0.3, -0.2, 0.0], 0.0)
    assert np.allclose(R @ [0.0, 0.0, 1.0], [-2 * n[1], 2 * n[0], 1.0])


def test_maxwell_spectral_radius_one():
    """[DERIVED] eigenvalues of the Maxwell D_n are 0 and +-|n|."""
    sys = maxwell2d()
    for th in np.linspace(0, 2 * np.pi, 13):
        assert spectral_radius(d_n(sys, np.zeros(2), unit(th))) == pytest.approx(1.0, rel=1e-12)


def test_transport_boundary_matrix():
    """[TRIVIAL] inflow M - D_n = 2|beta . n|, outflow 0."""
    sys = transport_reaction(beta=(1.0, 2.0), alpha=1.0)
    x = np.zeros((1, 2))
    for n, expect in [((-1.0, 0.0), 2.0), ((1.0, 0.0), 0.0)]:
        n = np.array([n])
        assert (sys.M(x, n) - d_n(sys, x, n))[0, 0, 0] == pytest.approx(expect)


def test_transport_rejects_nonpositive_alpha():
    with pytest.raises(ValueError):
        transport_reaction(alpha=0.0)


def test_transport_default_mu():
    """[DERIVED] mu = max rho(D_n)/2 + 1 = |beta|/2 + 1 gives mu0 = 1."""
    sys = transport_reaction(beta=(1.0, 2.0))
    assert sys.mu == pytest.approx(math.sqrt(5) / 2 + 1)
    assert sys.mu0 == pytest.approx(1.0)
    assert sys.sigma0 == 1.0


@pytest.mark.parametrize("name", ["transport", "cdr", "maxwell2d"])
@pytest.mark.parametrize("make_mesh", [lambda: square_grid(3), lambda: polygonal_grid(2)])
def test_builtin_admissible(name, make_mesh):
    """[PAPER] builtin systems satisfy the positivity and symmetry conditions."""
    rep = check_admissibility(builtin_systems()[name], make_mesh())
    assert rep.passed, rep.failures


def test_cdr_sigma0():
    """[PAPER] sigma0 = min(1, alpha0)."""
    assert conv_diff_system(0.1, alpha=0.25, beta=(1.0, 2.0)).sigma0 == 0.25
    assert conv_diff_system(0.1, alpha=3.0, beta=(1.0, 2.0)).sigma0 == 1.0


def test_nonsymmetric_A_fails_check():
    """[TRIVIAL] an unsymmetric A1 is reported."""
    sys = maxwell2d()

    def A(x):
        out = sys.A(x).copy()
        out[:, 0, 0, 1] += 1.0
        return out

    rep = check_admissibility(dataclasses.replace(sys, A=A), MESH)
    assert not rep.passed and rep.symmetry == pytest.approx(1.0)


def test_wrong_divA_fails_check():
    sys = maxwell2d()
    bad = dataclasses.replace(sys, divA=lambda x: np.ones((len(np.reshape(x, (-1, 2))), 3, 3)))
    rep = check_admissibility(bad, MESH)
    assert not rep.passed and rep.divergence > 1e-5


def test_variable_beta_divergence_matches_fd():
    """[DERIVED] analytic div A matches central differences for a rotating field."""
    beta = lambda x: np.column_stack([1.0 + 0.5 * x[:, 1] ** 2, 2.0 + np.sin(x[:, 0] * x[:, 1])])
    div_b = lambda x: x[:, 0] * np.cos(x[:, 0] * x[:, 1])
    sys = conv_diff_system(0.01, beta=beta, alpha=3.0, div_beta=div_b, beta_inf=3.0, alpha0=2.0)
    rep = check_admissibility(sys, MESH)
    assert rep.passed, rep.failures


@pytest.mark.parametrize("name", ["transport", "cdr", "maxwell2d"])
def test_boundary_positivity_random_points(name):
    """[DERIVED] M + M^T >= 0 and mu I - D_n/2 >= mu0 I on random normals."""
    sys = builtin_systems()[name]
    rng = np.random.default_rng(2)
    th = rng.uniform(0, 2 * np.pi, 200)
    n = np.column_stack([np.cos(th), np.sin(th)])
    x = rng.random((200, 2))
    M = sys.M(x, n)
    assert np.min(symmetric_eigenvalues(M + np.swapaxes(M, 1, 2))) >= -1e-12
    S = sys.mu * np.eye(sys.m) - 0.5 * d_n(sys, x, n)
    assert np.min(symmetric_eigenvalues(S)) >= sys.mu0 - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 10.0))
def test_with_mu_shifts_margin(mu):
    sys = maxwell2d()
    if mu > 0.5:
        s = sys.with_mu(mu)
        assert s.mu0 == pytest.approx(mu - 0.5)
    else:
        with pytest.raises(ValueError, match="rho"):
            sys.with_mu(mu)
