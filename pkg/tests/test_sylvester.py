"""Sylvester machinery: the 25x25 linearization, kernel analysis, and the
pointwise density construction."""

import numpy as np
import pytest

from hodge5.errors import ContractError
from hodge5.fields import FormField, MetricField, ModeLattice
from hodge5.sylvester import (
    DensitySolution,
    SylvesterProblem,
    density_construct,
    kernel_basis,
    orthogonality_check,
    solve_sylvester,
    sylvester_operator,
)


def rand_antisym(rng, cplx=False):
    a = rng.standard_normal((5, 5))
    if cplx:
        a = a + 1j * rng.standard_normal((5, 5))
    return a - a.T


# --- linearization ---------------------------------------------------------


def test_operator_representation_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(20):
        W = rand_antisym(rng)
        L = sylvester_operator(W)
        X = rng.standard_normal((5, 5))
        lhs = (L @ X.reshape(-1)).reshape(5, 5)
        assert np.abs(lhs - (X @ W + W @ X)).max() < 1e-13


def test_problem_validates_antisymmetry():
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        SylvesterProblem(np.eye(5), rand_antisym(rng))
    with pytest.raises(ValueError):
        SylvesterProblem(rand_antisym(rng), np.ones((5, 5)))


# --- solve ------------------------------------------------------------------


def test_solve_zero_rhs():
    rng = np.random.default_rng(2)
    sol = solve_sylvester(rand_antisym(rng), np.zeros((5, 5)))
    assert np.abs(sol.X).max() == 0.0
    assert sol.residual == 0.0


def test_solve_w_equals_v():
    # T = I/2 solves W/2 + W/2 = W; the minimum-norm solution differs from
    # it by a kernel element, so both satisfy the equation
    rng = np.random.default_rng(3)
    W = rand_antisym(rng)
    assert np.abs(0.5 * W + 0.5 * W - W).max() == 0.0   # I/2 is a solution
    sol = solve_sylvester(W, W)
    assert sol.residual < 1e-12 * np.linalg.norm(W)
    diff = sol.T_tilde - 0.5 * np.eye(5)
    assert np.abs(diff @ W + W @ diff).max() < 1e-12
    assert np.abs(diff - diff.T).max() < 1e-12          # kernel is symmetric


def test_solve_random_instances():
    rng = np.random.default_rng(4)
    for _ in range(100):
        W, V = rand_antisym(rng), rand_antisym(rng)
        sol = solve_sylvester(W, V)
        vn = np.linalg.norm(V)
        assert sol.residual <= 1e-10 * vn
        # X^T solves the same equation
        assert np.abs(sol.X.T @ W + W @ sol.X.T - V).max() < 1e-10 * vn
        # symmetrization does not degrade the residual
        raw = np.linalg.norm(sol.X @ W + W @ sol.X - V)
        assert sol.residual <= raw + 1e-12
        assert np.abs(sol.T_tilde - sol.T_tilde.T).max() < 1e-12


def test_solve_complex_instances():
    rng = np.random.default_rng(5)
    for _ in range(20):
        W, V = rand_antisym(rng, True), rand_antisym(rng, True)
        sol = solve_sylvester(W, V)
        assert sol.residual <= 1e-10 * np.linalg.norm(V)


# --- kernel ------------------------------------------------------------------


def test_kernel_membership_and_symmetry():
    rng = np.random.default_rng(6)
    for _ in range(30):
        W = rand_antisym(rng)
        L = sylvester_operator(W)
        for E in kernel_basis(W):
            assert np.linalg.norm(L @ E.reshape(-1)) < 1e-10
            assert np.abs(E - E.T).max() < 1e-8


def test_kernel_dimension_generic_rank4():
    # rank-4 antisymmetric W with distinct spectral pairs: the eigenvalue
    # sums +-i mu_1 -+ i mu_1, +-i mu_2 -+ i mu_2 and the double zero give
    # a 5-dim kernel (recorded fixture)
    rng = np.random.default_rng(7)
    dims = {len(kernel_basis(rand_antisym(rng))) for _ in range(20)}
    assert dims == {5}


def test_kernel_contains_null_vector_square():
    rng = np.random.default_rng(8)
    W = rand_antisym(rng)
    _, s, vh = np.linalg.svd(W)
    z = vh[-1]                      # odd antisymmetric matrix has a null vector
    assert np.linalg.norm(W @ z) < 1e-12
    E = np.outer(z, z)
    assert np.linalg.norm(E @ W + W @ E) < 1e-12


def test_kernel_w_zero_documented():
    basis = kernel_basis(np.zeros((5, 5)))
    assert len(basis) == 25         # every X; symmetry claim vacuously skipped


# --- orthogonality -------------------------------------------------------------


def test_orthogonality_symmetric_vs_antisymmetric_exact():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((5, 5))
    E = a + a.T
    V = rand_antisym(rng)
    assert abs(np.sum(E * V)) < 1e-12


def test_orthogonality_check_random_and_self():
    rng = np.random.default_rng(10)
    for _ in range(20):
        W, V = rand_antisym(rng), rand_antisym(rng)
        assert orthogonality_check(W, V) <= 1e-12 * np.linalg.norm(V)
        assert orthogonality_check(W, W) <= 1e-12 * np.linalg.norm(W)


# --- density construction -------------------------------------------------------


@pytest.fixture(scope="module")
def density_setup():
    """Seeded w bounded away from zero, conformal metric, half-space mask."""
    rng = np.random.default_rng(11)
    G = 5
    lat = ModeLattice(2)   # from_grid at G = 2K+1 is lossless
    g = MetricField.conformal(
        [{"c": 0.15, "kind": "cos", "k": [1, 0, 0, 0, 0]},
         {"c": 0.1, "kind": "sin", "k": [0, 1, 0, 0, 0]}],
        grid_size=G)
    wr = FormField.random(lat, 2, rng)
    wc = 0.05 * wr.coeffs
    wc[lat.zero_index, 0] += 1.0
    w = FormField(lat, 2, 0.5 * (wc + np.conj(wc[::-1])), reality=True)
    mask = np.zeros((G,) * 5, bool)
    mask[:3] = True
    vr = FormField.random(lat, 2, rng)
    v_vals = vr.values_on_grid(G) * mask[..., None]
    v = FormField.from_grid(lat, 2, v_vals, reality=True)
    return g, lat, w, v, mask


def test_density_zero_rhs(density_setup):
    g, lat, w, v, mask = density_setup
    t, resid = density_construct(g, w, FormField.zero(lat, 2), mask)
    assert np.abs(t.grid).max() == 0.0
    assert resid == 0.0


def test_density_v_equals_w_flat():
    lat = ModeLattice(1)
    c = np.zeros((lat.count, 10), complex)
    c[lat.zero_index, 0] = 1.0
    w = FormField(lat, 2, c, reality=True)
    mask = np.ones((4,) * 5, bool)
    t, resid = density_construct(MetricField.flat(), w, w, mask)
    assert resid < 1e-12
    # constant data: the solution is the same at every grid point
    t0 = t.grid.reshape(-1, 5, 5)[0]
    assert np.abs(t.grid - t0).max() < 1e-12
    assert np.abs(t0 - t0.T).max() < 1e-12


def test_density_seeded_masked_conformal(density_setup):
    g, lat, w, v, mask = density_setup
    t, resid = density_construct(g, w, v, mask)
    assert resid <= 1e-9 * np.abs(form_vals := v.values_on_grid(5)).max()
    assert not t.is_complex            # real inputs stay real
    # round trip: the defining identity holds pointwise on the mask
    ginv = np.linalg.inv(g.values(5).reshape(-1, 5, 5))
    from hodge5.fibers import form_to_matrix

    Wv = form_to_matrix(w.values_on_grid(5)).reshape(-1, 5, 5)
    Vv = form_to_matrix(v.values_on_grid(5)).reshape(-1, 5, 5)
    Tv = t.grid.reshape(-1, 5, 5)
    sel = mask.reshape(-1)
    lhs = (np.einsum("pik,pkl,plj->pij", Tv[sel], ginv[sel], Wv[sel])
           + np.einsum("pik,pkl,plj->pij", Wv[sel], ginv[sel], Tv[sel]))
    assert np.abs(lhs - Vv[sel]).max() < 1e-9 * np.abs(Vv).max()


def test_density_complex_rhs(density_setup):
    g, lat, w, _, mask = density_setup
    rng = np.random.default_rng(12)
    vr = FormField.random(lat, 2, rng, reality=False)
    v_vals = vr.values_on_grid(5) * mask[..., None]
    v = FormField.from_grid(lat, 2, v_vals)
    t, resid = density_construct(g, w, v, mask)
    assert t.is_complex
    assert resid <= 1e-9 * np.abs(v_vals).max()


def test_density_w_vanishing_rejected(density_setup):
    g, lat, _, v, mask = density_setup
    with pytest.raises(ContractError):
        density_construct(g, FormField.zero(lat, 2), v, mask)


def test_density_support_precondition(density_setup):
    g, lat, w, _, mask = density_setup
    rng = np.random.default_rng(13)
    v_unmasked = FormField.random(lat, 2, rng)   # support everywhere
    with pytest.raises(ContractError):
        density_construct(g, w, v_unmasked, mask)
