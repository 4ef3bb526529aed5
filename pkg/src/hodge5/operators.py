"""Assembly of d, *_g, delta_g, the Beltrami operator B = *_g d, the Hodge
Laplacian and the Hodge decomposition projectors on Fourier 2-form fields
over T^5 = (R/2pi Z)^5.

Discretization. For constant metrics every operator is exactly block-diagonal
over modes and the per-mode fiber algebra is exact. For sampled (variable)
metrics, operators are metric-weighted Galerkin compressions onto the
truncated lattice: the weak form of B in the Fourier basis,

    <B u, v>_g = integral du ^ conj(v),

is metric-free and mode-diagonal (exactly skew-Hermitian), and all metric
dependence enters through the Gram ("mass") matrices of the g-weighted L2
inner product,

    M[(p,a),(q,b)] = (2pi)^5 * mhat_ab(p - q),
    m_ab(x) = |g(x)|^{1/2} * C_k(g^{-1}(x))[a,b],

computed by FFT on the metric's collocation grid. The discrete operator
B = M^{-1} A is then exactly skew w.r.t. the discrete inner product
<u,v> = v* M u (the g-measure-weighted coefficient pairing), the discrete
codifferential is the exact adjoint of d, and B-invariance of the co-exact
subspace holds exactly. Grid quadrature at resolution G aliases the metric's
Fourier tail; that perturbs *which* nearby operator is discretized, never
its symmetry class.

Coefficient layout: operators accept (count, dim), flat (count*dim,), or
column-stacked (count*dim, ncols) arrays; internally everything runs on
(count, dim, ncols) cubes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import ConfigError, InvariantViolation, NumericalError, ZeroModeError
from .fibers import (
    DIM,
    MetricTensor,
    _parity,
    compound_matrix,
    index_basis,
    star_matrix,
)
from .fields import FormField, MetricField, ModeLattice

VOL = (2.0 * np.pi) ** DIM
DENSE_THRESHOLD = 4000

__all__ = [
    "VOL",
    "DENSE_THRESHOLD",
    "OperatorHandle",
    "FiberOperator",
    "Subspace",
    "exterior_d",
    "hodge_star_field",
    "beltrami",
    "beltrami_fiber",
    "codifferential",
    "hodge_laplacian",
    "hodge_projectors",
    "coexact_subspace",
    "gauge_unitary",
    "l2_inner",
    "l2_norm",
    "symmetry_defect",
]


def _to_cube(c, count: int, dim: int):
    """Normalize a coefficient array to (count, dim, ncols) plus a tag to
    restore the caller's layout."""
    c = np.asarray(c)
    if c.ndim == 1 and c.size == count * dim:
        return c.reshape(count, dim, 1), "flat1"
    if c.ndim == 2 and c.shape == (count, dim):
        return c[..., None], "field"
    if c.ndim == 2 and c.shape[0] == count * dim:
        return c.reshape(count, dim, c.shape[1]), "flat2"
    if c.ndim == 3 and c.shape[:2] == (count, dim):
        return c, "cube"
    raise ValueError(f"cannot interpret coefficient array of shape {c.shape}")


def _from_cube(out: np.ndarray, tag: str):
    if tag == "flat1":
        return out.reshape(-1)
    if tag == "field":
        return out[..., 0]
    if tag == "flat2":
        return out.reshape(out.shape[0] * out.shape[1], out.shape[2])
    return out


# --- structure tensors ----------------------------------------------------


@lru_cache(maxsize=None)
def _wedge_mode_tensor(k: int) -> np.ndarray:
    """W[a, J, I] = sign such that (dx^a ^ e_I) = sum_J W[a,J,I] e_J."""
    bk, bo = index_basis(k), index_basis(k + 1)
    W = np.zeros((DIM, bo.dim, bk.dim))
    for a in range(DIM):
        for ip, I in enumerate(bk.entries):
            s = _parity((a,) + I)
            if s:
                W[a, bo.position(tuple(sorted((a,) + I))), ip] = s
    return W


@lru_cache(maxsize=None)
def _beltrami_tensor() -> np.ndarray:
    """E[a, j, l] = coefficient of the volume form in dx^a ^ e_l ^ e_j for
    2-form basis elements e_l, e_j. T_q = sum_a q_a E[a] is symmetric, and
    the weak Beltrami form is A_q = i * (2pi)^5 * T_q (skew-Hermitian)."""
    b2 = index_basis(2)
    E = np.zeros((DIM, b2.dim, b2.dim))
    for a in range(DIM):
        for j, J in enumerate(b2.entries):
            for l, L in enumerate(b2.entries):
                E[a, j, l] = _parity((a,) + L + J)
    return E


def _beltrami_T_blocks(lattice: ModeLattice) -> np.ndarray:
    """T_q[j,l] = [q ^ e_l ^ e_j]_vol per mode (real symmetric blocks)."""
    return np.einsum("ma,ajl->mjl", lattice.modes.astype(np.float64),
                     _beltrami_tensor())


def _mode_wedge_apply(lattice: ModeLattice, k: int, cube: np.ndarray) -> np.ndarray:
    """Per-mode i q ^ (.) : rank k -> k+1 on (count, dim_k, ncols) cubes."""
    W = _wedge_mode_tensor(k)
    q = lattice.modes.astype(np.float64)
    return 1j * np.einsum("ma,aji,mic->mjc", q, W, cube)


def _mode_wedge_adjoint_apply(lattice: ModeLattice, k: int, cube) -> np.ndarray:
    """Adjoint of i q ^ (.) in the flat coefficient pairing: -i W_m^T."""
    W = _wedge_mode_tensor(k)
    q = lattice.modes.astype(np.float64)
    return -1j * np.einsum("ma,aji,mjc->mic", q, W, cube)


# --- mass (Gram) matrices --------------------------------------------------


def _mass_density_entry(g: MetricField, k: int, a: int, b: int) -> np.ndarray:
    """Grid samples of m_ab(x) = sqrt|g| * C_k(g^{-1})[a,b]."""
    inv = g.inv_grid().reshape(-1, DIM, DIM)
    w = g.sqrt_det_grid().reshape(-1)
    basis = index_basis(k)
    if k == 0:
        minor = np.ones_like(w)
    else:
        I = np.asarray(basis.entries[a], dtype=np.intp)
        J = np.asarray(basis.entries[b], dtype=np.intp)
        if k == 1:
            minor = inv[:, I[0], J[0]]
        else:
            minor = np.linalg.det(inv[:, I[:, None], J[None, :]])
    G = g.grid_size
    return (w * minor).reshape((G,) * DIM)


class _MassContext:
    """Discrete g-weighted inner product on rank-k coefficient space;
    `scalar=True` selects the scalar-form convention (flat fiber pairing,
    metric measure weight)."""

    def __init__(self, g: MetricField, lattice: ModeLattice, k: int,
                 scalar: bool = False, dense_threshold: int = DENSE_THRESHOLD):
        self.g = g
        self.lattice = lattice
        self.k = k
        self.dim = index_basis(k).dim
        self.ndofs = lattice.count * self.dim
        self.scalar = scalar
        self._dense = None
        self._cho = None
        if g.is_constant:
            w = g.tensor.sqrt_det
            block = (w * np.eye(self.dim) if scalar
                     else w * compound_matrix(g.tensor.inv, k))
            self.block = VOL * block
            self.block_inv = np.linalg.inv(self.block)
            self.mode = "blocks"
        else:
            if g.grid_size < 2 * lattice.K + 1:
                raise ConfigError(
                    f"metric grid {g.grid_size} below Nyquist "
                    f"{2 * lattice.K + 1} for K={lattice.K}"
                )
            self.mode = "dense" if self.ndofs <= dense_threshold else "gridfree"
            if self.mode == "gridfree":
                self._m_grid = self._density_grid()
            else:
                self._mhat = self._assemble_mhat()

    def _density_grid(self) -> np.ndarray:
        G = self.g.grid_size
        m = np.empty((G,) * DIM + (self.dim, self.dim))
        for a in range(self.dim):
            for b in range(a, self.dim):
                if self.scalar:
                    entry = (self.g.sqrt_det_grid() if a == b
                             else np.zeros((G,) * DIM))
                else:
                    entry = _mass_density_entry(self.g, self.k, a, b)
                m[..., a, b] = entry
                m[..., b, a] = entry
        return m

    def _assemble_mhat(self) -> np.ndarray:
        """Fourier coefficients mhat_ab(r) for |r|_inf <= 2K (shifted
        layout)."""
        K, G = self.lattice.K, self.g.grid_size
        side = 4 * K + 1
        mhat = np.zeros((self.dim, self.dim) + (side,) * DIM, dtype=np.complex128)
        rng = np.arange(-2 * K, 2 * K + 1)
        gather = np.ix_(*([np.mod(rng, G)] * DIM))
        for a in range(self.dim):
            for b in range(a, self.dim):
                if self.scalar:
                    if a != b:
                        continue
                    entry = self.g.sqrt_det_grid()
                else:
                    entry = _mass_density_entry(self.g, self.k, a, b)
                spec = np.fft.fftn(entry) / (G**DIM)
                mhat[a, b] = spec[gather]
                if a != b:
                    # real symmetric density: mhat_ba(r) = mhat_ab(r)
                    mhat[b, a] = mhat[a, b]
        return mhat

    def dense_matrix(self) -> np.ndarray:
        if self.g.is_constant:
            blocks = [self.block] * self.lattice.count
            return scipy.linalg.block_diag(*blocks).astype(np.complex128)
        if self._dense is None:
            K = self.lattice.K
            side = 4 * K + 1
            diff = (self.lattice.modes[:, None, :]
                    - self.lattice.modes[None, :, :] + 2 * K)
            strides = np.array([side**p for p in range(DIM - 1, -1, -1)])
            lin = (diff * strides).sum(axis=2)
            flat = self._mhat.reshape(self.dim, self.dim, -1)
            M = flat[:, :, lin]                      # (dim, dim, N, N)
            M = M.transpose(2, 0, 3, 1).reshape(self.ndofs, self.ndofs)
            M = VOL * 0.5 * (M + M.conj().T)
            self._dense = M
        return self._dense

    def apply(self, x):
        cube, tag = _to_cube(x, self.lattice.count, self.dim)
        if self.g.is_constant:
            out = np.einsum("ab,mbc->mac", self.block, cube)
        elif self.mode == "dense":
            flat = cube.reshape(self.ndofs, -1)
            out = (self.dense_matrix() @ flat).reshape(cube.shape)
        else:
            G = self.g.grid_size
            out = np.empty(cube.shape, dtype=np.complex128)
            for col in range(cube.shape[-1]):
                f = FormField(self.lattice, self.k, cube[..., col])
                vals = f.values_on_grid(G)
                mv = np.einsum("...ab,...b->...a", self._m_grid, vals)
                out[..., col] = VOL * FormField.from_grid(
                    self.lattice, self.k, mv).coeffs
        return _from_cube(out, tag)

    def solve(self, x):
        cube, tag = _to_cube(x, self.lattice.count, self.dim)
        if self.g.is_constant:
            out = np.einsum("ab,mbc->mac", self.block_inv, cube)
            return _from_cube(out, tag)
        if self.mode == "dense":
            if self._cho is None:
                self._cho = scipy.linalg.cho_factor(self.dense_matrix())
            flat = cube.reshape(self.ndofs, -1)
            out = scipy.linalg.cho_solve(self._cho, flat).reshape(cube.shape)
            return _from_cube(out, tag)
        flat = cube.reshape(self.ndofs, -1)
        out = np.empty_like(flat, dtype=np.complex128)
        op = scipy.sparse.linalg.LinearOperator(
            (self.ndofs, self.ndofs),
            matvec=lambda v: self.apply(v.reshape(self.ndofs)),
            dtype=np.complex128,
        )
        for col in range(flat.shape[1]):
            sol, info = scipy.sparse.linalg.cg(op, flat[:, col], rtol=1e-12,
                                               maxiter=2000)
            if info != 0:
                res = np.linalg.norm(self.apply(sol) - flat[:, col])
                raise NumericalError(
                    f"mass solve CG failed (info={info}, residual {res:.3e})"
                )
            out[:, col] = sol
        return _from_cube(out.reshape(cube.shape), tag)

    def inner(self, u, v) -> complex:
        """<u, v> = v* M u, conjugate-linear in v."""
        mu = np.asarray(self.apply(u)).reshape(-1)
        return complex(np.vdot(np.asarray(v).reshape(-1), mu))

    def norm(self, u) -> float:
        return math.sqrt(max(self.inner(u, u).real, 0.0))


def _mass(g: MetricField, lattice: ModeLattice, k: int, scalar: bool = False,
          dense_threshold: int = DENSE_THRESHOLD) -> _MassContext:
    key = ("mass", lattice.K, k, scalar, dense_threshold)
    if key not in g._cache:
        g._cache[key] = _MassContext(g, lattice, k, scalar, dense_threshold)
    return g._cache[key]


# --- inner products ---------------------------------------------------------


def l2_inner(g: MetricField, u: FormField, v: FormField,
             convention: str = "metric") -> complex:
    """L2 inner product (u, v)_g = integral u ^ *_g conj(v); spectral
    quadrature on the metric's grid, conjugate-linear in v.

    convention="scalar" pairs raw coefficients with the |g|^{1/2} measure
    weight only (the scalar-form convention of the gauge unitarity test)."""
    if u.lattice != v.lattice:
        raise ValueError("lattice mismatch")
    if u.k != v.k:
        raise ValueError(f"rank mismatch {u.k} != {v.k}")
    if convention not in ("metric", "scalar"):
        raise ValueError(f"unknown convention {convention!r}")
    ctx = _mass(g, u.lattice, u.k, scalar=(convention == "scalar"))
    return ctx.inner(u.coeffs, v.coeffs)


def l2_norm(g: MetricField, u: FormField) -> float:
    return math.sqrt(max(l2_inner(g, u, u).real, 0.0))


# --- operator handle --------------------------------------------------------


@dataclass(frozen=True)
class Subspace:
    """M-orthonormal basis (columns) of an invariant subspace of the
    truncated coefficient space."""

    name: str
    lattice: ModeLattice
    rank: int
    metric: MetricField
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class OperatorHandle:
    """Applicable linear map on form fields with symmetry metadata.

    symmetry: "skew" / "hermitian" w.r.t. the g inner product, or "none".
    """

    lattice: ModeLattice
    rank_in: int
    rank_out: int
    metric: MetricField
    symmetry: str
    domain: str
    description: str
    _apply: Callable = field(repr=False)

    def apply_coeffs(self, coeffs):
        cube, tag = _to_cube(coeffs, self.lattice.count,
                             index_basis(self.rank_in).dim)
        return _from_cube(self._apply(cube), tag)

    def __call__(self, u: FormField) -> FormField:
        if u.lattice != self.lattice:
            raise ValueError("lattice mismatch")
        if u.k != self.rank_in:
            raise ValueError(f"operator acts on rank {self.rank_in}, got {u.k}")
        out = self._apply(u.coeffs[..., None])[..., 0]
        reality = False
        if u.reality:
            # real operator on a real field: strip roundoff asymmetry, but
            # only when it is roundoff (judged against the input scale too,
            # so numerically-zero outputs stay real)
            sym = 0.5 * (out + np.conj(out[::-1]))
            scale = max(np.abs(out).max(), np.abs(u.coeffs).max(), 1e-300)
            if np.abs(out - sym).max() <= 1e-12 * scale:
                out = sym
                reality = True
        return FormField(self.lattice, self.rank_out, out, reality=reality)

    @property
    def ndofs_in(self) -> int:
        return self.lattice.count * index_basis(self.rank_in).dim

    def dense(self) -> np.ndarray:
        eye = np.eye(self.ndofs_in, dtype=np.complex128)
        return self.apply_coeffs(eye)


def symmetry_defect(op: OperatorHandle, rng, n_samples: int = 10) -> float:
    """Max relative defect of the advertised symmetry class over random
    field pairs: |<Au,v> +/- <u,Av>| / (|u| |v|)."""
    if op.symmetry not in ("skew", "hermitian"):
        raise ValueError("no symmetry advertised")
    g, lat = op.metric, op.lattice
    sign = 1.0 if op.symmetry == "skew" else -1.0
    worst = 0.0
    for _ in range(n_samples):
        u = FormField.random(lat, op.rank_in, rng, reality=False)
        v = FormField.random(lat, op.rank_in, rng, reality=False)
        lhs = l2_inner(g, op(u), v)
        rhs = l2_inner(g, u, op(v))
        defect = abs(lhs + sign * rhs) / (l2_norm(g, u) * l2_norm(g, v))
        worst = max(worst, defect)
    return worst


# --- exterior derivative ----------------------------------------------------


def exterior_d(u: FormField) -> FormField:
    """Exact per-mode exterior derivative (du)(q) = i q ^ u(q); d o d = 0
    identically."""
    if u.k >= DIM:
        raise ValueError(f"d undefined on top-rank {DIM}-forms")
    out = _mode_wedge_apply(u.lattice, u.k, u.coeffs[..., None])[..., 0]
    return FormField(u.lattice, u.k + 1, out, reality=u.reality)


# --- Hodge star on fields ---------------------------------------------------


def _star_grid_matrices(g: MetricField, k: int) -> np.ndarray:
    key = ("star_grid", k)
    if key not in g._cache:
        from .fibers import _star_table

        out_pos, signs = _star_table(k)
        raise_k = compound_matrix(g.inv_grid(), k)
        dim_in = index_basis(k).dim
        dim_out = index_basis(DIM - k).dim
        S = np.zeros(g.grid.shape[:DIM] + (dim_out, dim_in))
        S[..., out_pos, :] = signs[:, None] * raise_k
        g._cache[key] = S * g.sqrt_det_grid()[..., None, None]
    return g._cache[key]


def hodge_star_field(g: MetricField, u: FormField) -> FormField:
    """Hodge star of a field. Constant metric: exact per-mode fiber star.
    Sampled metric: transform to the collocation grid, apply the pointwise
    star, transform back and truncate to the lattice."""
    if g.is_constant:
        S = star_matrix(g.tensor, u.k)
        return FormField(u.lattice, DIM - u.k, u.coeffs @ S.T, reality=u.reality)
    need = math.ceil(3 * (2 * u.lattice.K + 1) / 2)
    if g.grid_size < need:
        raise ConfigError(
            f"metric grid {g.grid_size} below de-aliased resolution {need} "
            f"for K={u.lattice.K}"
        )
    vals = u.values_on_grid(g.grid_size)
    S = _star_grid_matrices(g, u.k)
    out_vals = np.einsum("...ji,...i->...j", S, vals)
    return FormField.from_grid(u.lattice, DIM - u.k, out_vals, reality=u.reality)


# --- Beltrami operator ------------------------------------------------------


def beltrami(g: MetricField, lattice: ModeLattice,
             dense_threshold: int = DENSE_THRESHOLD) -> OperatorHandle:
    """B = *_g d on 2-form fields; skew w.r.t. the g inner product (exactly,
    as a Galerkin compression). Constant metric: block-diagonal over modes
    with zero off-mode coupling."""
    key = ("beltrami", lattice.K, dense_threshold)
    if key not in g._cache:
        T = _beltrami_T_blocks(lattice)
        mass = _mass(g, lattice, 2, dense_threshold=dense_threshold)
        if g.is_constant:
            blocks = VOL * np.einsum("jl,mlk->mjk", mass.block_inv, T)

            def apply(cube, blocks=blocks):
                return 1j * np.einsum("mjk,mkc->mjc", blocks, cube)

        else:

            def apply(cube, T=T, mass=mass):
                y = 1j * VOL * np.einsum("mjk,mkc->mjc", T, cube)
                return mass.solve(y)

        g._cache[key] = OperatorHandle(
            lattice=lattice, rank_in=2, rank_out=2, metric=g,
            symmetry="skew", domain="full",
            description="beltrami *_g d on 2-forms", _apply=apply,
        )
    return g._cache[key]


@dataclass(frozen=True)
class FiberOperator:
    """Beltrami operator restricted to the co-exact 6-dim subfiber of one
    Fourier mode (constant metric): B_q = i A_q in the g-orthonormal real
    basis given by the columns of ``basis``."""

    mode: tuple
    matrix: np.ndarray        # A_q, 6x6 real symmetric
    basis: np.ndarray         # 10x6, g-orthonormal co-exact fiber basis
    full_matrix: np.ndarray   # 10x10 fiber Beltrami omega -> *_g(i q ^ omega)

    def eigh(self):
        return np.linalg.eigh(self.matrix)

    def lift(self, lattice: ModeLattice, fiber_vector: np.ndarray) -> FormField:
        """Single-mode field (basis @ y) e^{i q.x}."""
        return FormField.single_mode(lattice, 2, self.mode,
                                     self.basis @ fiber_vector)


def beltrami_fiber(g: MetricTensor, q) -> FiberOperator:
    """Assemble the 10x10 fiber map omega -> *_g(i q ^ omega), project onto
    the co-exact subfiber (g-orthocomplement of q ^ Lambda^1) and return
    A_q = -i B_q, verified real symmetric to 1e-12."""
    q = np.asarray(tuple(q), dtype=np.float64)
    if q.shape != (DIM,):
        raise ValueError("mode needs 5 components")
    if not np.any(q):
        raise ZeroModeError("co-exact fiber undefined at the zero mode")
    W1 = np.einsum("a,aji->ji", q, _wedge_mode_tensor(1))      # 10x5, q ^ .
    W2 = np.einsum("a,aji->ji", q, _wedge_mode_tensor(2))      # 10x10
    B_full = star_matrix(g, 3) @ (1j * W2)
    uz, sz, _ = np.linalg.svd(W1, full_matrices=False)
    Z = uz[:, sz > 1e-12 * sz[0]]
    if Z.shape[1] != 4:
        raise InvariantViolation(f"closed fiber rank {Z.shape[1]} != 4")
    G2 = compound_matrix(g.inv, 2)
    Q0 = scipy.linalg.null_space((G2 @ Z).T)                   # 10x6
    L = np.linalg.cholesky(Q0.T @ G2 @ Q0)
    Q = scipy.linalg.solve_triangular(L, Q0.T, lower=True).T   # g-orthonormal
    A = -1j * (Q.T @ G2 @ (B_full @ Q))
    defect = max(np.abs(A.imag).max(), np.abs(A.real - A.real.T).max())
    if defect > 1e-12 * max(np.abs(A).max(), 1.0):
        raise InvariantViolation(
            f"co-exact fiber matrix not real symmetric (defect {defect:.3e})"
        )
    A = 0.5 * (A.real + A.real.T)
    return FiberOperator(mode=tuple(int(x) for x in q), matrix=A, basis=Q,
                         full_matrix=B_full)


# --- codifferential and Hodge Laplacian --------------------------------------


def codifferential(g: MetricField, lattice: ModeLattice, k: int,
                   dense_threshold: int = DENSE_THRESHOLD) -> OperatorHandle:
    """delta_g on rank-k fields: the exact adjoint of d w.r.t. the discrete
    g inner product (the Galerkin realization of (-1)^{n(k+1)+1} *_g d *_g;
    identical to the star composition for constant metrics)."""
    if k < 1:
        raise ValueError("codifferential undefined on 0-forms")
    key = ("codifferential", lattice.K, k, dense_threshold)
    if key not in g._cache:
        mass_k = _mass(g, lattice, k, dense_threshold=dense_threshold)
        mass_lo = _mass(g, lattice, k - 1, dense_threshold=dense_threshold)

        def apply(cube, mass_k=mass_k, mass_lo=mass_lo, k=k):
            y, _ = _to_cube(mass_k.apply(cube), lattice.count,
                            index_basis(k).dim)
            z = _mode_wedge_adjoint_apply(lattice, k - 1, y)
            out, _ = _to_cube(mass_lo.solve(z), lattice.count,
                              index_basis(k - 1).dim)
            return out

        g._cache[key] = OperatorHandle(
            lattice=lattice, rank_in=k, rank_out=k - 1, metric=g,
            symmetry="none", domain="full",
            description=f"codifferential on {k}-forms", _apply=apply,
        )
    return g._cache[key]


def hodge_laplacian(g: MetricField, lattice: ModeLattice, k: int,
                    dense_threshold: int = DENSE_THRESHOLD) -> OperatorHandle:
    """Hodge Laplacian d delta + delta d on rank-k fields; Hermitian PSD
    w.r.t. the g inner product. On the co-exact restriction agrees with
    -(beltrami)^2 (exactly so for constant metrics)."""
    key = ("laplacian", lattice.K, k, dense_threshold)
    if key not in g._cache:
        delta_up = (codifferential(g, lattice, k + 1, dense_threshold)
                    if k < DIM else None)
        delta_here = (codifferential(g, lattice, k, dense_threshold)
                      if k > 0 else None)

        def apply(cube, k=k):
            out = np.zeros(cube.shape, dtype=np.complex128)
            if delta_up is not None:
                du = _mode_wedge_apply(lattice, k, cube)
                out += delta_up._apply(du)
            if delta_here is not None:
                dc = delta_here._apply(cube)
                out += _mode_wedge_apply(lattice, k - 1, dc)
            return out

        g._cache[key] = OperatorHandle(
            lattice=lattice, rank_in=k, rank_out=k, metric=g,
            symmetry="hermitian", domain="full",
            description=f"hodge laplacian on {k}-forms", _apply=apply,
        )
    return g._cache[key]


# --- Hodge decomposition -----------------------------------------------------


def _exact_fiber_bases(lattice: ModeLattice) -> np.ndarray:
    """Flat-orthonormal bases of the exact fiber range(q ^ .) per mode,
    shape (count, 10, 4); zero block at the zero mode."""
    W1 = _wedge_mode_tensor(1)
    q = lattice.modes.astype(np.float64)
    Wq = np.einsum("ma,aji->mji", q, W1)           # (count, 10, 5)
    out = np.zeros((lattice.count, 10, 4))
    u, s, _ = np.linalg.svd(Wq, full_matrices=False)
    for m in range(lattice.count):
        if m == lattice.zero_index:
            continue
        cols = u[m][:, s[m] > 1e-12 * s[m][0]]
        if cols.shape[1] != 4:
            raise InvariantViolation("exact fiber rank != 4 at a nonzero mode")
        out[m] = cols
    return out


def _closed_basis_dense(lattice: ModeLattice) -> np.ndarray:
    """Dense basis of ker d on 2-forms: exact fibers plus the full zero-mode
    fiber, shape (ndofs, 4(count-1)+10)."""
    N = lattice.count
    fibers = _exact_fiber_bases(lattice)
    Z = np.zeros((N * 10, 4 * (N - 1) + 10))
    col = 0
    for m in range(N):
        if m == lattice.zero_index:
            Z[m * 10:(m + 1) * 10, col:col + 10] = np.eye(10)
            col += 10
        else:
            Z[m * 10:(m + 1) * 10, col:col + 4] = fibers[m]
            col += 4
    return Z


def _projector_from_basis(mass: _MassContext, basis: np.ndarray):
    """M-orthogonal projector onto span(basis)."""
    MB = mass.apply(basis)
    gram = basis.conj().T @ MB
    cho = scipy.linalg.cho_factor(0.5 * (gram + gram.conj().T))

    def apply(cube):
        flat = cube.reshape(mass.ndofs, -1)
        alpha = scipy.linalg.cho_solve(cho, MB.conj().T @ flat)
        return (basis @ alpha).reshape(cube.shape)

    return apply


def hodge_projectors(g: MetricField, lattice: ModeLattice,
                     dense_threshold: int = DENSE_THRESHOLD):
    """(P_harmonic, P_exact, P_coexact): idempotent, mutually annihilating,
    g-orthogonal projectors on 2-form fields summing to the identity.

    The discrete harmonic space is ker d intersected with the g-orthogonal
    complement of the exact space; its dimension is exactly 10 = C(5,2) at
    any truncation and for any metric (b_2 of the 5-torus)."""
    key = ("projectors", lattice.K, dense_threshold)
    if key in g._cache:
        return g._cache[key]
    mass = _mass(g, lattice, 2, dense_threshold=dense_threshold)
    if g.is_constant:
        fibers = _exact_fiber_bases(lattice)
        G2 = compound_matrix(g.tensor.inv, 2)
        Pe_blocks = np.zeros((lattice.count, 10, 10))
        for m in range(lattice.count):
            if m == lattice.zero_index:
                continue
            Z = fibers[m]
            gram = Z.T @ G2 @ Z
            Pe_blocks[m] = Z @ np.linalg.solve(gram, Z.T @ G2)
        Ph_blocks = np.zeros((lattice.count, 10, 10))
        Ph_blocks[lattice.zero_index] = np.eye(10)
        Pc_blocks = np.eye(10)[None, :, :] - Pe_blocks - Ph_blocks

        def block_apply(blocks):
            def apply(cube, blocks=blocks):
                return np.einsum("mjk,mkc->mjc", blocks, cube)
            return apply

        applies = [block_apply(b) for b in (Ph_blocks, Pe_blocks, Pc_blocks)]
    else:
        if mass.ndofs > dense_threshold:
            raise NumericalError(
                f"projector assembly above dense threshold ({mass.ndofs} > "
                f"{dense_threshold}); raise the threshold or use a constant "
                "metric"
            )
        Zc = _closed_basis_dense(lattice)
        zero_block = slice(4 * lattice.zero_index, 4 * lattice.zero_index + 10)
        exact_cols = np.ones(Zc.shape[1], dtype=bool)
        exact_cols[zero_block] = False
        Eex = Zc[:, exact_cols]
        ME = mass.apply(Eex)
        Y = scipy.linalg.null_space(ME.conj().T @ Zc)
        if Y.shape[1] != 10:
            raise InvariantViolation(
                f"harmonic dimension {Y.shape[1]} != 10 at K={lattice.K}"
            )
        Hb = Zc @ Y
        p_exact = _projector_from_basis(mass, Eex)
        p_harm = _projector_from_basis(mass, Hb)

        def p_coexact(cube):
            return cube - p_exact(cube) - p_harm(cube)

        applies = [p_harm, p_exact, p_coexact]

    names = ["harmonic", "exact", "coexact"]
    handles = tuple(
        OperatorHandle(
            lattice=lattice, rank_in=2, rank_out=2, metric=g,
            symmetry="hermitian", domain=name,
            description=f"projector onto {name} 2-forms", _apply=fn,
        )
        for name, fn in zip(names, applies)
    )
    g._cache[key] = handles
    return handles


def coexact_subspace(g: MetricField, lattice: ModeLattice,
                     dense_threshold: int = DENSE_THRESHOLD) -> Subspace:
    """M-orthonormal basis of the co-exact subspace of 2-form fields
    (g-orthocomplement of ker d); dimension 6(count - 1)."""
    key = ("coexact_subspace", lattice.K, dense_threshold)
    if key in g._cache:
        return g._cache[key]
    mass = _mass(g, lattice, 2, dense_threshold=dense_threshold)
    N = lattice.count
    if g.is_constant:
        G2 = compound_matrix(g.tensor.inv, 2)
        fibers = _exact_fiber_bases(lattice)
        C = np.zeros((N * 10, 6 * (N - 1)))
        scale = 1.0 / math.sqrt(VOL * g.tensor.sqrt_det)
        col = 0
        for m in range(N):
            if m == lattice.zero_index:
                continue
            Z = fibers[m]
            Q0 = scipy.linalg.null_space((G2 @ Z).T)
            L = np.linalg.cholesky(Q0.T @ G2 @ Q0)
            Q = scipy.linalg.solve_triangular(L, Q0.T, lower=True).T
            C[m * 10:(m + 1) * 10, col:col + 6] = Q * scale
            col += 6
    else:
        if mass.ndofs > dense_threshold:
            raise NumericalError(
                f"co-exact basis above dense threshold ({mass.ndofs} > "
                f"{dense_threshold})"
            )
        Zc = _closed_basis_dense(lattice)
        MZ = mass.apply(Zc)
        C = scipy.linalg.null_space(MZ.conj().T)
        gram = C.conj().T @ mass.apply(C)
        L = np.linalg.cholesky(0.5 * (gram + gram.conj().T))
        C = scipy.linalg.solve_triangular(L, C.conj().T, lower=True).conj().T
    if C.shape[1] != 6 * (N - 1):
        raise InvariantViolation(
            f"co-exact dimension {C.shape[1]} != {6 * (N - 1)}"
        )
    sub = Subspace(name="coexact", lattice=lattice, rank=2, metric=g, basis=C)
    g._cache[key] = sub
    return sub


# --- gauge unitary -----------------------------------------------------------


def gauge_unitary(g: MetricField, g_eps: MetricField,
                  lattice: ModeLattice) -> OperatorHandle:
    """Multiplication by (det g / det g_eps)^{1/4}; unitary from the
    g-weighted to the g_eps-weighted inner product in the scalar-form
    convention (exact on the quadrature grid; the truncated handle drops the
    product's Fourier tail)."""
    if g.is_constant and g_eps.is_constant:
        factor = (g.tensor.det / g_eps.tensor.det) ** 0.25

        def apply(cube, factor=factor):
            return cube * factor

        multiplier = factor
    else:
        if (not g.is_constant and not g_eps.is_constant
                and g.grid_size != g_eps.grid_size):
            raise ValueError(
                f"metric grids differ: {g.grid_size} vs {g_eps.grid_size}"
            )
        G = g.grid_size if not g.is_constant else g_eps.grid_size
        det_g = (np.full((G,) * DIM, g.tensor.det) if g.is_constant
                 else g.sqrt_det_grid() ** 2)
        det_e = (np.full((G,) * DIM, g_eps.tensor.det) if g_eps.is_constant
                 else g_eps.sqrt_det_grid() ** 2)
        multiplier = (det_g / det_e) ** 0.25

        def apply(cube, rho=multiplier, G=G):
            dim, ncols = cube.shape[1], cube.shape[2]
            out = np.empty_like(cube, dtype=np.complex128)
            idx = np.mod(lattice.modes, G)
            for col in range(ncols):
                spec = np.zeros((G,) * DIM + (dim,), dtype=np.complex128)
                spec[tuple(idx.T)] = cube[..., col]
                vals = np.fft.ifftn(spec, axes=tuple(range(DIM))) * (G**DIM)
                vals *= rho[..., None]
                back = np.fft.fftn(vals, axes=tuple(range(DIM))) / (G**DIM)
                out[..., col] = back[tuple(idx.T)]
            return out

    handle = OperatorHandle(
        lattice=lattice, rank_in=2, rank_out=2, metric=g,
        symmetry="none", domain="full",
        description="gauge multiplier (det g / det g_eps)^{1/4}", _apply=apply,
    )
    object.__setattr__(handle, "multiplier", multiplier)
    return handle
