"""Pointwise exterior algebra of k-forms on an oriented 5-dimensional
inner-product space.

Conventions used throughout the package:

* Coefficients of a k-form are stored on strictly increasing multi-indices,
  ordered lexicographically (``index_basis(k)``); every sign in the package
  flows through the permutation parity computed here.
* The orientation is fixed by declaring dx1^...^dx5 positive.
* Real coefficient arrays mean real forms; complex dtype means a complex
  form. Mixed operations promote to complex.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import MetricError

DIM = 5

__all__ = [
    "DIM",
    "IndexBasis",
    "index_basis",
    "perm_sign",
    "MetricTensor",
    "FormFiber",
    "SymTensor",
    "wedge",
    "hodge_star",
    "star_matrix",
    "fiber_inner",
    "codifferential_sign",
    "laplacian_sign",
    "metric_trace",
    "compound_matrix",
]


def _parity(seq) -> int:
    """Sign of the permutation sorting ``seq``; 0 if any entry repeats."""
    seq = tuple(seq)
    if len(set(seq)) != len(seq):
        return 0
    inversions = sum(
        1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j]
    )
    return -1 if inversions % 2 else 1


def perm_sign(indices) -> int:
    """Sign of a permutation of (1,2,3,4,5); 0 if an index repeats.

    Entries are 1-based. Raises ValueError for wrong length or out-of-range
    entries.
    """
    indices = tuple(indices)
    if len(indices) != DIM:
        raise ValueError(f"expected {DIM} indices, got {len(indices)}")
    for i in indices:
        if not 1 <= int(i) <= DIM:
            raise ValueError(f"index {i} outside 1..{DIM}")
    return _parity(indices)


class IndexBasis:
    """Ordered basis of strictly increasing multi-indices for rank k.

    Indices are 0-based internally; ``entries[p]`` is the p-th increasing
    tuple in lexicographic order, and ``position`` inverts it.
    """

    def __init__(self, k: int):
        if not 0 <= k <= DIM:
            raise ValueError(f"rank {k} outside 0..{DIM}")
        self.k = k
        self.entries = tuple(combinations(range(DIM), k))
        self.dim = len(self.entries)
        self._pos = {t: p for p, t in enumerate(self.entries)}

    def position(self, multi_index) -> int:
        return self._pos[tuple(multi_index)]

    def __len__(self) -> int:
        return self.dim


@lru_cache(maxsize=None)
def index_basis(k: int) -> IndexBasis:
    return IndexBasis(k)


@lru_cache(maxsize=None)
def _wedge_table(p: int, q: int):
    """Structure constants of the wedge Λ^p x Λ^q -> Λ^{p+q}.

    Returns (rows_out, rows_p, rows_q, signs) index arrays: for each
    non-vanishing pair, out[rows_out] += sign * u[rows_p] * v[rows_q].
    """
    bp, bq, bo = index_basis(p), index_basis(q), index_basis(p + q)
    out_pos, p_pos, q_pos, signs = [], [], [], []
    for ip, I in enumerate(bp.entries):
        for iq, J in enumerate(bq.entries):
            s = _parity(I + J)
            if s == 0:
                continue
            out_pos.append(bo.position(tuple(sorted(I + J))))
            p_pos.append(ip)
            q_pos.append(iq)
            signs.append(s)
    return (
        np.asarray(out_pos, dtype=np.intp),
        np.asarray(p_pos, dtype=np.intp),
        np.asarray(q_pos, dtype=np.intp),
        np.asarray(signs, dtype=np.float64),
    )


@lru_cache(maxsize=None)
def _star_table(k: int):
    """Complement positions and signs realizing the Hodge star permutation.

    For each increasing I of rank k: J = complement(I) and
    sign = parity(I + J), so that (*u)_J picks up sign * (raised u)_I.
    """
    bk, bc = index_basis(k), index_basis(DIM - k)
    out_pos = np.empty(bk.dim, dtype=np.intp)
    signs = np.empty(bk.dim, dtype=np.float64)
    for ip, I in enumerate(bk.entries):
        J = tuple(i for i in range(DIM) if i not in I)
        out_pos[ip] = bc.position(J)
        signs[ip] = _parity(I + J)
    return out_pos, signs


def compound_matrix(a: np.ndarray, k: int) -> np.ndarray:
    """k-th compound of a (...,5,5) matrix stack: entry [I,M] is the minor
    det a[I, M] over increasing multi-indices. Acts on k-form coefficients
    when a = g^{-1} (raises all k indices)."""
    a = np.asarray(a)
    basis = index_basis(k)
    d = basis.dim
    out = np.empty(a.shape[:-2] + (d, d), dtype=a.dtype)
    for i, I in enumerate(basis.entries):
        for j, M in enumerate(basis.entries):
            if k == 0:
                out[..., i, j] = 1.0
                continue
            rows = np.asarray(I, dtype=np.intp)[:, None]
            cols = np.asarray(M, dtype=np.intp)[None, :]
            out[..., i, j] = np.linalg.det(a[..., rows, cols])
    return out


class MetricTensor:
    """SPD (0,2)-tensor at a point, with cached inverse, determinant and
    SPD square roots.

    Validation: symmetry to 1e-12 relative, smallest eigenvalue
    > 1e-10 * largest (so that perturbed metrics g + eps*h fail fast once
    they stop being metrics).
    """

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64)
        if m.shape != (DIM, DIM):
            raise MetricError(f"metric must be {DIM}x{DIM}, got {m.shape}")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise MetricError("metric matrix is not symmetric")
        m = 0.5 * (m + m.T)
        w, v = np.linalg.eigh(m)
        if w[0] <= 1e-10 * w[-1] or w[-1] <= 0.0:
            raise MetricError(f"metric is not positive definite (eigenvalues {w})")
        self.matrix = m
        self._eigvals = w
        self._eigvecs = v
        self.inv = (v * (1.0 / w)) @ v.T
        self.det = float(np.prod(w))
        self.sqrt_det = float(np.sqrt(self.det))
        self.sqrt = (v * np.sqrt(w)) @ v.T
        self.inv_sqrt = (v * (1.0 / np.sqrt(w))) @ v.T

    def __repr__(self) -> str:
        return f"MetricTensor(det={self.det:.6g})"


def _coerce_coeffs(coeffs, k: int) -> np.ndarray:
    c = np.asarray(coeffs)
    d = index_basis(k).dim
    if c.shape != (d,):
        raise ValueError(f"rank-{k} fiber needs {d} coefficients, got shape {c.shape}")
    if not np.iscomplexobj(c):
        c = c.astype(np.float64)
    return c


class FormFiber:
    """Coefficient vector of a k-form at a point or Fourier mode."""

    def __init__(self, k: int, coeffs):
        if not 0 <= k <= DIM:
            raise ValueError(f"rank {k} outside 0..{DIM}")
        self.k = k
        self.coeffs = _coerce_coeffs(coeffs, k)

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.coeffs) else "real"

    @classmethod
    def basis(cls, k: int, multi_index) -> "FormFiber":
        """Basis form dx^{i1}^...^dx^{ik} for a strictly increasing 0-based
        multi-index."""
        b = index_basis(k)
        c = np.zeros(b.dim)
        c[b.position(multi_index)] = 1.0
        return cls(k, c)

    @classmethod
    def zero(cls, k: int) -> "FormFiber":
        return cls(k, np.zeros(index_basis(k).dim))

    def component(self, *indices):
        """Coefficient for an arbitrary-order index tuple, with the
        antisymmetric sign implied by increasing-index storage."""
        if len(indices) != self.k:
            raise ValueError(f"expected {self.k} indices")
        s = _parity(indices)
        if s == 0:
            return 0.0 * self.coeffs[0] if self.k > 0 else self.coeffs[0]
        return s * self.coeffs[index_basis(self.k).position(tuple(sorted(indices)))]

    def __add__(self, other):
        if self.k != other.k:
            raise ValueError("rank mismatch")
        return FormFiber(self.k, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if self.k != other.k:
            raise ValueError("rank mismatch")
        return FormFiber(self.k, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return FormFiber(self.k, self.coeffs * scalar)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"FormFiber(k={self.k}, {self.kind})"


class SymTensor:
    """Symmetric 5x5 (0,2)-tensor, real or complex-kind (perturbation
    directions; complex allowed where an operation declares it)."""

    def __init__(self, matrix):
        m = np.asarray(matrix)
        if m.shape != (DIM, DIM):
            raise ValueError(f"tensor must be {DIM}x{DIM}, got {m.shape}")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise ValueError("tensor is not symmetric")
        m = 0.5 * (m + m.T)
        if not np.iscomplexobj(m):
            m = m.astype(np.float64)
        self.matrix = m

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.matrix) else "real"


def wedge(u: FormFiber, v: FormFiber) -> FormFiber:
    """Alternating product; bilinear, graded-commutative
    u^v = (-1)^{pq} v^u."""
    if u.k + v.k > DIM:
        raise ValueError(f"wedge rank {u.k}+{v.k} exceeds {DIM}")
    rows_out, rows_p, rows_q, signs = _wedge_table(u.k, v.k)
    out = np.zeros(index_basis(u.k + v.k).dim, dtype=np.result_type(u.coeffs, v.coeffs))
    np.add.at(out, rows_out, signs * u.coeffs[rows_p] * v.coeffs[rows_q])
    return FormFiber(u.k + v.k, out)


def star_matrix(g: MetricTensor, k: int) -> np.ndarray:
    """Dense matrix of the Hodge star Λ^k -> Λ^{5-k} for metric g.

    Row layout: (*u)_J = sqrt|g| * parity(I,J) * (C_k(g^{-1}) u)_I with
    J = complement(I); summing over increasing indices only absorbs the 1/k!
    of the full-sum coordinate formula (equivalence is unit-tested)."""
    out_pos, signs = _star_table(k)
    raise_k = compound_matrix(g.inv, k)
    m = np.zeros((index_basis(DIM - k).dim, index_basis(k).dim))
    m[out_pos, :] = (signs[:, None] * raise_k) * g.sqrt_det
    return m


def hodge_star(g: MetricTensor, u: FormFiber) -> FormFiber:
    """Hodge star *_g u; satisfies *_g *_g = id on every rank (n=5)."""
    return FormFiber(DIM - u.k, star_matrix(g, u.k) @ u.coeffs)


def fiber_inner(g: MetricTensor, u: FormFiber, v: FormFiber, weighted: bool = False):
    """Pointwise Hermitian pairing sum_{I<} u_I conj(v^I), indices raised by
    g^{-1}; conjugate-linear in v. With weighted=True the |g|^{1/2} measure
    density is included."""
    if u.k != v.k:
        raise ValueError(f"rank mismatch {u.k} != {v.k}")
    raised_v = compound_matrix(g.inv, v.k) @ v.coeffs
    val = np.sum(u.coeffs * np.conj(raised_v))
    if weighted:
        val = val * g.sqrt_det
    if not (np.iscomplexobj(u.coeffs) or np.iscomplexobj(v.coeffs)):
        return float(val.real)
    return complex(val)


def codifferential_sign(n: int, k: int) -> int:
    """Sign in delta_g = (-1)^{n(k+1)+1} *_g d *_g acting on k-forms."""
    if not 0 <= k <= n:
        raise ValueError(f"rank {k} outside 0..{n}")
    return (-1) ** (n * (k + 1) + 1)


def laplacian_sign(n: int, k: int) -> int:
    """Sign in Delta^(k) = (-1)^{nk+1} (*_g d)^2 on co-exact k-forms:
    +1 iff n and k are both odd."""
    if not 0 <= k <= n:
        raise ValueError(f"rank {k} outside 0..{n}")
    return (-1) ** (n * k + 1)


def metric_trace(g: MetricTensor, h: SymTensor):
    """Full contraction tr_g h = g^{ij} h_{ij}."""
    val = np.sum(g.inv * h.matrix)
    return float(val) if h.kind == "real" else complex(val)


def form_to_matrix(coeffs: np.ndarray) -> np.ndarray:
    """2-form coefficients (..., 10) as antisymmetric matrices (..., 5, 5)."""
    b2 = index_basis(2)
    c = np.asarray(coeffs)
    out = np.zeros(c.shape[:-1] + (DIM, DIM), dtype=c.dtype)
    for pos, (i, j) in enumerate(b2.entries):
        out[..., i, j] = c[..., pos]
        out[..., j, i] = -c[..., pos]
    return out


def matrix_to_form(matrices: np.ndarray) -> np.ndarray:
    """Inverse of form_to_matrix (reads the strictly upper triangle)."""
    b2 = index_basis(2)
    m = np.asarray(matrices)
    out = np.empty(m.shape[:-2] + (b2.dim,), dtype=m.dtype)
    for pos, (i, j) in enumerate(b2.entries):
        out[..., pos] = m[..., i, j]
    return out
