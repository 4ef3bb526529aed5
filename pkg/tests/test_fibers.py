"""Fiber-level exterior algebra: index bookkeeping, wedge, Hodge star,
inner products, signs, traces."""

from itertools import combinations, permutations

import numpy as np
import pytest

from hodge5.errors import MetricError
from hodge5.fibers import (
    DIM,
    FormFiber,
    MetricTensor,
    SymTensor,
    codifferential_sign,
    compound_matrix,
    fiber_inner,
    form_to_matrix,
    hodge_star,
    index_basis,
    laplacian_sign,
    matrix_to_form,
    metric_trace,
    perm_sign,
    wedge,
)


def random_spd(rng, scale=5.0):
    a = rng.standard_normal((DIM, DIM))
    return MetricTensor(a @ a.T + scale * np.eye(DIM))


# --- index basis -------------------------------------------------------------


@pytest.mark.parametrize("k", range(6))
def test_index_basis_is_lexicographic_and_invertible(k):
    b = index_basis(k)
    expected = sorted(combinations(range(DIM), k))
    assert list(b.entries) == expected
    from math import comb

    assert b.dim == comb(DIM, k)
    for p, t in enumerate(b.entries):
        assert b.position(t) == p


def test_perm_sign_examples():
    assert perm_sign((1, 2, 3, 4, 5)) == 1
    assert perm_sign((2, 1, 3, 4, 5)) == -1
    assert perm_sign((1, 1, 3, 4, 5)) == 0


def test_perm_sign_errors():
    with pytest.raises(ValueError):
        perm_sign((1, 2, 3))
    with pytest.raises(ValueError):
        perm_sign((0, 1, 2, 3, 4))
    with pytest.raises(ValueError):
        perm_sign((1, 2, 3, 4, 6))


def test_perm_sign_matches_inversion_count():
    for p in permutations(range(1, 6)):
        inv = sum(1 for i in range(5) for j in range(i + 1, 5) if p[i] > p[j])
        assert perm_sign(p) == (-1) ** inv


# --- wedge -------------------------------------------------------------------


def test_wedge_basis_examples():
    dx1 = FormFiber.basis(1, (0,))
    dx2 = FormFiber.basis(1, (1,))
    w = wedge(dx1, dx2)
    assert w.k == 2
    expected = np.zeros(10)
    expected[index_basis(2).position((0, 1))] = 1.0
    np.testing.assert_array_equal(w.coeffs, expected)

    e12 = FormFiber.basis(2, (0, 1))
    assert np.abs(wedge(e12, e12).coeffs).max() == 0.0

    e345 = FormFiber.basis(3, (2, 3, 4))
    vol = wedge(e12, e345)
    np.testing.assert_array_equal(vol.coeffs, [1.0])


def test_wedge_rank_error():
    e12 = FormFiber.basis(2, (0, 1))
    e2345 = FormFiber.basis(4, (1, 2, 3, 4))
    with pytest.raises(ValueError):
        wedge(e12, e2345)


def test_wedge_graded_commutativity_exact_on_basis():
    for p in range(4):
        for q in range(4 - p + 1):
            if p + q > DIM:
                continue
            for I in index_basis(p).entries:
                for J in index_basis(q).entries:
                    u, v = FormFiber.basis(p, I), FormFiber.basis(q, J)
                    lhs = wedge(u, v).coeffs
                    rhs = (-1) ** (p * q) * wedge(v, u).coeffs
                    np.testing.assert_array_equal(lhs, rhs)


def test_wedge_bilinear():
    rng = np.random.default_rng(0)
    u1 = FormFiber(1, rng.standard_normal(5))
    u2 = FormFiber(1, rng.standard_normal(5))
    v = FormFiber(2, rng.standard_normal(10))
    lhs = wedge(u1 + 2.5 * u2, v).coeffs
    rhs = wedge(u1, v).coeffs + 2.5 * wedge(u2, v).coeffs
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


# --- Hodge star --------------------------------------------------------------


def brute_force_star(g: MetricTensor, u: FormFiber) -> FormFiber:
    """Full-sum coordinate formula: (*u)_J = (1/k!) eps_{I J} |g|^{1/2}
    g^{i1 n1}..g^{ik nk} u_{n1..nk}, summed over all index tuples."""
    from math import factorial

    k = u.k
    u_full = _full_tensor(u)
    if k == 1:
        raised = np.einsum("ia,a->i", g.inv, u_full)
    elif k == 2:
        raised = np.einsum("ia,jb,ab->ij", g.inv, g.inv, u_full)
    elif k == 3:
        raised = np.einsum("ia,jb,kc,abc->ijk", g.inv, g.inv, g.inv, u_full)
    else:
        raise NotImplementedError
    out = np.zeros(index_basis(DIM - k).dim, dtype=u.coeffs.dtype)
    for J in index_basis(DIM - k).entries:
        total = 0.0
        for I in permutations(range(DIM), k):
            sign = _eps(I + J)
            if sign:
                total = total + sign * raised[I]
        out[index_basis(DIM - k).position(J)] = g.sqrt_det * total / factorial(k)
    return FormFiber(DIM - k, out)


def _full_tensor(u: FormFiber) -> np.ndarray:
    """Fully antisymmetric (5,)*k tensor from increasing-index storage."""
    shape = (DIM,) * u.k
    out = np.zeros(shape, dtype=u.coeffs.dtype)
    for I, c in zip(index_basis(u.k).entries, u.coeffs):
        for p in permutations(I):
            out[p] = _eps_perm(I, p) * c
    return out


def _eps_perm(sorted_tuple, p):
    perm = [sorted_tuple.index(x) for x in p]
    return _eps(tuple(perm)) if len(set(p)) == len(p) else 0


def _eps(seq):
    seq = tuple(seq)
    if len(set(seq)) != len(seq):
        return 0
    inv = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq))
              if seq[i] > seq[j])
    return (-1) ** inv


def test_star_euclidean_basis():
    g = MetricTensor(np.eye(DIM))
    e12 = FormFiber.basis(2, (0, 1))
    s = hodge_star(g, e12)
    expected = np.zeros(10)
    expected[index_basis(3).position((2, 3, 4))] = 1.0
    np.testing.assert_allclose(s.coeffs, expected, atol=1e-15)


def test_star_diagonal_metric_derived_value():
    a = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    g = MetricTensor(np.diag(a))
    s = hodge_star(g, FormFiber.basis(2, (0, 1)))
    expected = np.sqrt(a.prod()) / (a[0] * a[1])
    pos = index_basis(3).position((2, 3, 4))
    assert abs(s.coeffs[pos] - expected) < 1e-12
    others = np.delete(s.coeffs, pos)
    assert np.abs(others).max() < 1e-15


def test_star_matches_full_sum_oracle():
    rng = np.random.default_rng(1)
    g = random_spd(rng)
    for k in (1, 2, 3):
        u = FormFiber(k, rng.standard_normal(index_basis(k).dim))
        oracle = brute_force_star(g, u)
        fast = hodge_star(g, u)
        np.testing.assert_allclose(fast.coeffs, oracle.coeffs, atol=1e-10,
                                   rtol=1e-10)


def test_star_involution_all_ranks():
    rng = np.random.default_rng(2)
    for trial in range(10):
        g = random_spd(rng)
        for k in range(6):
            u = FormFiber(k, rng.standard_normal(index_basis(k).dim))
            uu = hodge_star(g, hodge_star(g, u))
            assert np.abs(uu.coeffs - u.coeffs).max() < 1e-12


def test_star_rejects_bad_metric():
    with pytest.raises(MetricError):
        MetricTensor(-np.eye(DIM))
    with pytest.raises(MetricError):
        MetricTensor(np.diag([1.0, 1, 1, 1, 1e-12]))
    m = np.eye(DIM)
    m[0, 1] = 0.5  # asymmetric
    with pytest.raises(MetricError):
        MetricTensor(m)


def test_metric_roots():
    rng = np.random.default_rng(3)
    g = random_spd(rng)
    assert np.abs(g.sqrt @ g.sqrt - g.matrix).max() < 1e-12
    assert np.abs(g.inv_sqrt @ g.matrix @ g.inv_sqrt - np.eye(DIM)).max() < 1e-12


# --- inner products ----------------------------------------------------------


def test_fiber_inner_examples():
    g = MetricTensor(np.eye(DIM))
    e12 = FormFiber.basis(2, (0, 1))
    e13 = FormFiber.basis(2, (0, 2))
    assert fiber_inner(g, e12, e12) == pytest.approx(1.0)
    assert fiber_inner(g, e12, e13) == pytest.approx(0.0)
    g2 = MetricTensor(np.diag([2.0, 1, 1, 1, 1]))
    assert fiber_inner(g2, e12, e12) == pytest.approx(0.5)


def test_fiber_inner_positive_definite():
    rng = np.random.default_rng(4)
    for _ in range(20):
        g = random_spd(rng)
        k = int(rng.integers(0, 6))
        c = rng.standard_normal(index_basis(k).dim) \
            + 1j * rng.standard_normal(index_basis(k).dim)
        u = FormFiber(k, c)
        val = fiber_inner(g, u, u)
        assert val.real > 0
        assert abs(val.imag) < 1e-12 * val.real
    assert fiber_inner(g, FormFiber.zero(2), FormFiber.zero(2)) == 0.0


def test_fiber_inner_rank_mismatch():
    g = MetricTensor(np.eye(DIM))
    with pytest.raises(ValueError):
        fiber_inner(g, FormFiber.zero(2), FormFiber.zero(3))


def test_fiber_inner_weighted():
    rng = np.random.default_rng(5)
    g = random_spd(rng)
    u = FormFiber(2, rng.standard_normal(10))
    assert fiber_inner(g, u, u, weighted=True) == pytest.approx(
        g.sqrt_det * fiber_inner(g, u, u))


# --- signs -------------------------------------------------------------------


def test_codifferential_sign_values():
    assert codifferential_sign(5, 3) == -1
    assert codifferential_sign(5, 2) == 1   # exponent n(k+1)+1 = 16
    assert codifferential_sign(3, 1) == -1


def test_laplacian_sign_values():
    assert laplacian_sign(5, 2) == -1
    assert laplacian_sign(3, 1) == 1
    assert laplacian_sign(5, 0) == -1


def test_laplacian_sign_parity_dichotomy():
    # +1 iff n and k are both odd; -1 for every other parity combination
    for n in range(1, 8):
        for k in range(n + 1):
            expected = 1 if (n % 2 == 1 and k % 2 == 1) else -1
            assert laplacian_sign(n, k) == expected


def test_sign_rank_errors():
    with pytest.raises(ValueError):
        laplacian_sign(5, 6)
    with pytest.raises(ValueError):
        codifferential_sign(5, -1)


# --- trace -------------------------------------------------------------------


def test_metric_trace_examples():
    g = MetricTensor(np.eye(DIM))
    assert metric_trace(g, SymTensor(np.eye(DIM))) == pytest.approx(5.0)
    gd = MetricTensor(np.diag([1.0, 2, 3, 4, 5]))
    assert metric_trace(gd, SymTensor(np.eye(DIM))) == pytest.approx(
        1 + 1 / 2 + 1 / 3 + 1 / 4 + 1 / 5)
    rng = np.random.default_rng(6)
    g = random_spd(rng)
    assert metric_trace(g, SymTensor(g.matrix)) == pytest.approx(5.0)


# --- fiber accessors and matrix conversion ------------------------------------


def test_component_antisymmetric_accessor():
    rng = np.random.default_rng(7)
    u = FormFiber(2, rng.standard_normal(10))
    assert u.component(1, 0) == -u.component(0, 1)
    assert u.component(3, 3) == 0.0


def test_form_matrix_roundtrip():
    rng = np.random.default_rng(8)
    c = rng.standard_normal((7, 10))
    m = form_to_matrix(c)
    assert np.abs(m + np.swapaxes(m, -1, -2)).max() == 0.0
    np.testing.assert_array_equal(matrix_to_form(m), c)


def test_compound_matrix_multiplicative():
    # C_k(AB) = C_k(A) C_k(B) pins the minor bookkeeping
    rng = np.random.default_rng(9)
    A, B = rng.standard_normal((2, DIM, DIM))
    for k in range(6):
        lhs = compound_matrix(A @ B, k)
        rhs = compound_matrix(A, k) @ compound_matrix(B, k)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)
