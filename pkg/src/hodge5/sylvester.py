"""Matrix machinery behind the pointwise density construction: solve
X W~ + W~ X = V~ for 5x5 antisymmetric W~, V~; analyze ker L_W~; and assemble
the full pointwise identity v = t g^{-1} w + w g^{-1} t over a masked region.

Solvability rests on two facts checked numerically throughout: every kernel
element of L_W~ (for antisymmetric W~ != 0) is symmetric, and symmetric
matrices pair to zero with antisymmetric right-hand sides, so the
minimum-norm least-squares solution of the 25x25 linearization has residual
at the roundoff level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InvariantViolation
from .fibers import DIM, form_to_matrix, matrix_to_form
from .fields import FormField, MetricField, SymTensorField

__all__ = [
    "SylvesterProblem",
    "DensitySolution",
    "sylvester_operator",
    "solve_sylvester",
    "kernel_basis",
    "orthogonality_check",
    "density_construct",
]


def _check_antisymmetric(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.shape != (DIM, DIM):
        raise ValueError(f"{name} must be {DIM}x{DIM}")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a + a.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} is not antisymmetric")
    if not np.iscomplexobj(a):
        a = a.astype(np.float64)
    return 0.5 * (a - a.T)


def sylvester_operator(W: np.ndarray) -> np.ndarray:
    """25x25 matrix of L_W(X) = X W + W X on row-major vec(X)."""
    eye = np.eye(DIM)
    return np.kron(eye, W.T) + np.kron(W, eye)


@dataclass
class SylvesterProblem:
    """One pointwise instance: antisymmetric pair (W~, V~) and the 25x25
    representation of L_W~."""

    W: np.ndarray
    V: np.ndarray
    L: np.ndarray = field(init=False)

    def __post_init__(self):
        self.W = _check_antisymmetric(self.W, "W")
        self.V = _check_antisymmetric(self.V, "V")
        self.L = sylvester_operator(self.W)


@dataclass
class DensitySolution:
    """Raw minimum-norm solution X, its symmetrization T~ = (X + X^T)/2, the
    pulled-back tensor T = G^{1/2} T~ G^{1/2}, and the solve residual."""

    X: np.ndarray
    T_tilde: np.ndarray
    T: np.ndarray | None
    residual: float


def solve_sylvester(W: np.ndarray, V: np.ndarray,
                    residual_tol: float = 1e-9) -> DensitySolution:
    """Minimum-norm least-squares solve of X W + W X = V, then symmetrize
    (X^T solves the same equation, so T~ = (X + X^T)/2 does too). A residual
    above residual_tol * |V| contradicts the solvability argument and raises
    InvariantViolation."""
    prob = SylvesterProblem(W, V)
    x, *_ = np.linalg.lstsq(prob.L, prob.V.reshape(-1), rcond=None)
    X = x.reshape(DIM, DIM)
    T = 0.5 * (X + X.T)
    vnorm = np.linalg.norm(prob.V)
    residual = np.linalg.norm(T @ prob.W + prob.W @ T - prob.V)
    if vnorm > 0 and residual > residual_tol * vnorm:
        raise InvariantViolation(
            f"Sylvester residual {residual:.3e} exceeds {residual_tol:.1e}*|V| "
            f"(solvability argument violated)"
        )
    return DensitySolution(X=X, T_tilde=T, T=None, residual=float(residual))


def kernel_basis(W: np.ndarray, symmetry_tol: float = 1e-8) -> list:
    """Orthonormal basis of ker L_W (numerical rank cut at sigma <=
    1e-10 sigma_max). For antisymmetric W != 0 every kernel element is
    symmetric; a violation falsifies the implemented linearization and
    raises InvariantViolation. W = 0 returns the full 25-dim kernel with the
    symmetry claim vacuously skipped (the density pipeline excludes it)."""
    W = _check_antisymmetric(W, "W")
    L = sylvester_operator(W)
    _, s, vh = np.linalg.svd(L)
    smax = s[0] if s.size else 0.0
    null_rows = vh[s <= 1e-10 * smax] if smax > 0 else vh
    basis = [row.reshape(DIM, DIM) for row in np.conj(null_rows)]
    if smax > 0:
        for E in basis:
            if np.abs(E - E.T).max() > symmetry_tol:
                raise InvariantViolation(
                    "kernel element of L_W is not symmetric "
                    f"(defect {np.abs(E - E.T).max():.3e})"
                )
    return basis


def orthogonality_check(W: np.ndarray, V: np.ndarray) -> float:
    """max |<E, V>_F| over the kernel basis of L_W; zero in exact arithmetic
    because symmetric E pairs against antisymmetric V."""
    V = _check_antisymmetric(V, "V")
    return max(
        (abs(complex(np.sum(np.conj(E) * V))) for E in kernel_basis(W)),
        default=0.0,
    )


def _batched_min_norm_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm solve for a stack of (25,25) systems via batched pinv."""
    return np.einsum("pij,pj->pi", np.linalg.pinv(L, rcond=1e-12), rhs)


def density_construct(g: MetricField, w: FormField, v: FormField, mask,
                      floor_rel: float = 1e-8,
                      residual_tol: float = 1e-8,
                      support_tol: float = 1e-10):
    """Pointwise construction of a symmetric tensor field t with
    v_ij = t_ik g^{kl} w_lj + w_ik g^{kl} t_lj on the masked region.

    Per masked grid point: form W~ = G^{-1/2} W G^{-1/2} and likewise V~,
    solve the Sylvester equation, symmetrize, map back T = G^{1/2} T~ G^{1/2}.
    Preconditions: |W| stays above floor_rel * max|W| on the mask (the
    construction excludes the zero set of w), and v is supported in the mask.
    Returns (t: SymTensorField, max_residual).
    """
    mask = np.asarray(mask, dtype=bool)
    G = mask.shape[0]
    if mask.shape != (G,) * DIM:
        raise ValueError("mask must be a (G,)*5 boolean grid")
    w_vals = form_to_matrix(w.values_on_grid(G))
    v_vals = form_to_matrix(v.values_on_grid(G))

    v_max = np.abs(v_vals).max()
    outside = np.abs(v_vals[~mask]).max() if (~mask).any() else 0.0
    if v_max > 0 and outside > support_tol * v_max:
        raise ContractError(
            f"v is not supported in the mask: outside magnitude "
            f"{outside:.3e} vs max {v_max:.3e}"
        )

    flat_mask = mask.reshape(-1)
    Wm = w_vals.reshape(-1, DIM, DIM)[flat_mask]
    Vm = v_vals.reshape(-1, DIM, DIM)[flat_mask]
    w_norms = np.linalg.norm(Wm, axis=(1, 2))
    floor = floor_rel * max(np.abs(w_vals).max(), 1e-300)
    if np.any(w_norms < floor):
        raise ContractError(
            f"w vanishes on the mask: min |W| = {w_norms.min():.3e} "
            f"below floor {floor:.3e}"
        )

    g_vals = g.values(G).reshape(-1, DIM, DIM)[flat_mask]
    wg, vg = np.linalg.eigh(g_vals)
    g_sqrt = np.einsum("pij,pj,pkj->pik", vg, np.sqrt(wg), vg)
    g_isqrt = np.einsum("pij,pj,pkj->pik", vg, 1.0 / np.sqrt(wg), vg)
    Wt = np.einsum("pij,pjk,pkl->pil", g_isqrt, Wm, g_isqrt)
    Vt = np.einsum("pij,pjk,pkl->pil", g_isqrt, Vm, g_isqrt)

    eye = np.eye(DIM)
    L = (np.einsum("ij,pkl->pikjl", eye, np.swapaxes(Wt, 1, 2))
         .reshape(-1, DIM * DIM, DIM * DIM)
         + np.einsum("pij,kl->pikjl", Wt, eye)
         .reshape(-1, DIM * DIM, DIM * DIM))
    X = _batched_min_norm_solve(L, Vt.reshape(-1, DIM * DIM)).reshape(
        -1, DIM, DIM
    )
    Tt = 0.5 * (X + np.swapaxes(X, 1, 2))
    T = np.einsum("pij,pjk,pkl->pil", g_sqrt, Tt, g_sqrt)

    # residual of the defining identity on the mask, in the original frame
    ginv = np.linalg.inv(g_vals)
    lhs = (np.einsum("pik,pkl,plj->pij", T, ginv, Wm)
           + np.einsum("pik,pkl,plj->pij", Wm, ginv, T))
    residual = float(np.abs(lhs - Vm).max())
    bound = residual_tol * max(v_max, 1e-300)
    if v_max > 0 and residual > bound:
        raise InvariantViolation(
            f"pointwise density residual {residual:.3e} exceeds {bound:.3e}"
        )

    if w.reality and v.reality:
        # real inputs stay real; the solve only picked up roundoff imag
        imag = np.abs(T.imag).max() if np.iscomplexobj(T) else 0.0
        if imag > 1e-10 * max(np.abs(T).max(), 1e-300):
            raise InvariantViolation(
                f"real inputs produced complex solution (imag {imag:.3e})"
            )
        T = T.real
    t_grid = np.zeros((G,) * DIM + (DIM, DIM), dtype=T.dtype)
    t_flat = t_grid.reshape(-1, DIM, DIM)
    t_flat[flat_mask] = T
    t_field = SymTensorField("sampled", grid=t_grid)
    return t_field, residual
