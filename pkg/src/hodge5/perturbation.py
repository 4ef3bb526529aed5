"""Metric-variation machinery: the derivative of the Beltrami operator in a
direction h, the bilinear form S, the traceless shift h_T, first-order
degenerate eigenvalue splitting, and finite-epsilon branch tracing.

Eigenvalue conventions. Two appear in the sources and both are kept, each
where its formula lives:

* d_beltrami works on an eigenform of B = *_g d with eigenvalue i*lambda
  (B u = i lam u);
* predict_splitting / trace_branches work with eigenvalues of the Hermitian
  operator i*B (the values spectrum() reports). The slope matrix
  M_jk = lam <S(h,u_j), u_k>_g is form-invariant under the sign flip
  between the two conventions, so the same formula serves both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import ContractError, InvariantViolation, NumericalError
from .fibers import (
    DIM,
    MetricTensor,
    SymTensor,
    form_to_matrix,
    matrix_to_form,
    metric_trace,
)
from .fields import FormField, MetricField, ModeLattice, SymTensorField
from .operators import (
    DENSE_THRESHOLD,
    beltrami,
    beltrami_fiber,
    l2_inner,
    l2_norm,
)

__all__ = [
    "DEFAULT_EPS_GRID",
    "Direction",
    "SplittingPrediction",
    "BranchTrace",
    "SplittingSearch",
    "s_form",
    "d_beltrami",
    "traceless_shift",
    "metric_derivative_identities",
    "predict_splitting",
    "trace_branches",
    "find_splitting_direction",
]

DEFAULT_EPS_GRID = (-1e-2, -5e-3, -2.5e-3, 2.5e-3, 5e-3, 1e-2)


class Direction(SymTensorField):
    """Perturbation direction: a symmetric (0,2)-tensor field, real or
    complex-kind."""

    @classmethod
    def random_constant(cls, rng, scale: float = 0.3) -> "Direction":
        a = rng.standard_normal((DIM, DIM))
        return cls.constant(scale * 0.5 * (a + a.T))

    @classmethod
    def random_low_frequency(cls, rng, grid_size: int, scale: float = 0.3,
                             n_terms: int = 2) -> "Direction":
        """Constant part plus a few random cos/sin(k.x) terms with
        |k|_inf <= 1."""
        from .fields import _grid_coordinates

        a = rng.standard_normal((DIM, DIM))
        const = scale * 0.5 * (a + a.T)
        xs = _grid_coordinates(grid_size)
        total = np.broadcast_to(const, (grid_size,) * DIM + (DIM, DIM)).copy()
        for _ in range(n_terms):
            b = rng.standard_normal((DIM, DIM))
            amp = 0.5 * scale * 0.5 * (b + b.T)
            k = rng.integers(-1, 2, size=DIM)
            phase = sum(int(ki) * xi for ki, xi in zip(k, xs))
            wave = np.cos(phase) if rng.integers(2) else np.sin(phase)
            total = total + wave[..., None, None] * amp
        return cls("sampled", grid=total)


def _grid_size_for(g: MetricField, h: SymTensorField, lattice: ModeLattice) -> int:
    need = math.ceil(3 * (2 * lattice.K + 1) / 2)
    sizes = [f.grid_size for f in (g, h) if not f.is_constant]
    if not sizes:
        return 0  # fully constant path
    G = sizes[0]
    if any(s != G for s in sizes):
        raise ValueError("metric and direction sampled on different grids")
    if G < need:
        from .errors import ConfigError

        raise ConfigError(f"grid {G} below de-aliased resolution {need}")
    return G


def s_form(g: MetricField, h: SymTensorField, w: FormField) -> FormField:
    """Bilinear form S(h, w) on 2-form fields:

        [S(h,w)]_pq = -1/2 (tr_g h) w_pq + g^{lt} h_tp w_lq + g^{lt} h_tq w_pl,

    evaluated fiberwise (pointwise products on the de-aliased grid for
    sampled inputs). In matrix form S = -1/2 tr_g(h) W + A^T W + W A with
    A = g^{-1} h."""
    if w.k != 2:
        raise ValueError("S acts on 2-forms")
    G = _grid_size_for(g, h, w.lattice)
    if G == 0:
        A = g.tensor.inv @ h.tensor.matrix
        tr = np.trace(A)
        W = form_to_matrix(w.coeffs)
        S = -0.5 * tr * W + np.einsum("lp,mlq->mpq", A, W) + W @ A
        out = matrix_to_form(S)
        return FormField(w.lattice, 2, out,
                         reality=w.reality and not h.is_complex)
    ginv = (np.linalg.inv(g.values(G).reshape(-1, DIM, DIM)).reshape(
        (G,) * DIM + (DIM, DIM)) if not g.is_constant else
        np.broadcast_to(g.tensor.inv, (G,) * DIM + (DIM, DIM)))
    hv = h.values(G)
    A = np.einsum("...lt,...tp->...lp", ginv, hv)
    tr = np.einsum("...ll->...", A)
    W = form_to_matrix(w.values_on_grid(G))
    S = (-0.5 * tr[..., None, None] * W
         + np.einsum("...lp,...lq->...pq", A, W)
         + np.einsum("...pl,...lq->...pq", W, A))
    out_vals = matrix_to_form(S)
    return FormField.from_grid(w.lattice, 2, out_vals,
                               reality=w.reality and not h.is_complex)


def d_beltrami(g: MetricField, h: SymTensorField, u: FormField, lam: float,
               residual_tol: float = 1e-8) -> FormField:
    """Derivative of the Beltrami operator at g in direction h, applied to an
    eigenform u with B u = i*lam*u:

        D(*d)_g(h) u = i lam [ -1/2 (tr_g h) u + g.h-corrections ]
                     = i lam S(h, u).

    The formula is only valid on eigenfields, so the eigenvalue equation is
    a checked precondition."""
    B = beltrami(g, u.lattice)
    resid = l2_norm(g, B(u) - (1j * lam) * u) / l2_norm(g, u)
    if resid > residual_tol:
        raise ContractError(
            f"u is not a Beltrami eigenfield at i*{lam}: residual {resid:.3e}"
        )
    return (1j * lam) * s_form(g, h, u)


def traceless_shift(g: MetricField, T: SymTensorField) -> Direction:
    """h_T = T - (tr_g T) g. With this shift the bilinear form simplifies to
    S(h_T, u) = T g^{-1} U + U g^{-1} T in matrix form (verified in tests to
    1e-12)."""
    if g.is_constant and T.is_constant:
        tr = metric_trace(g.tensor, T.tensor)
        return Direction.constant(T.tensor.matrix - tr * g.tensor.matrix)
    G = T.grid_size if not T.is_constant else g.grid_size
    gv = g.values(G)
    tv = T.values(G)
    ginv = (g.inv_grid() if not g.is_constant
            else np.broadcast_to(g.tensor.inv, gv.shape))
    tr = np.einsum("...ij,...ij->...", ginv, tv)
    return Direction("sampled", grid=tv - tr[..., None, None] * gv)


def metric_derivative_identities(g: MetricTensor, h: SymTensor,
                                 eps: float = 1e-5) -> dict:
    """Central-difference checks of D(g^{-1})(h) = -g^{-1} h g^{-1} and
    D(|g|^s)(h) = s |g|^s tr_g h (s = 1/2 and 1) at probe step eps."""
    gp = MetricTensor(g.matrix + eps * h.matrix.real)
    gm = MetricTensor(g.matrix - eps * h.matrix.real)
    tr = metric_trace(g, h)
    d_inv_fd = (gp.inv - gm.inv) / (2 * eps)
    d_inv_closed = -g.inv @ h.matrix @ g.inv
    d_sqrt_fd = (gp.sqrt_det - gm.sqrt_det) / (2 * eps)
    d_sqrt_closed = 0.5 * g.sqrt_det * tr
    d_det_fd = (gp.det - gm.det) / (2 * eps)
    d_det_closed = g.det * tr
    def rel(a, b):
        denom = max(np.abs(np.asarray(b)).max(), 1e-300)
        return float(np.abs(np.asarray(a) - np.asarray(b)).max() / denom)
    return {
        "d_inverse_fd": d_inv_fd,
        "d_inverse_closed": d_inv_closed,
        "rel_error_inverse": rel(d_inv_fd, d_inv_closed),
        "d_sqrt_det_fd": float(d_sqrt_fd),
        "d_sqrt_det_closed": float(d_sqrt_closed),
        "rel_error_sqrt_det": rel(d_sqrt_fd, d_sqrt_closed),
        "d_det_fd": float(d_det_fd),
        "d_det_closed": float(d_det_closed),
        "rel_error_det": rel(d_det_fd, d_det_closed),
    }


# --- first-order splitting ---------------------------------------------------


@dataclass
class SplittingPrediction:
    """Degenerate first-order perturbation data at an eigenvalue lam of i*B:
    slope matrix M_jk = lam <S(h,u_j), u_k>_g (Hermitian), predicted branch
    derivatives = its eigenvalues, adapted basis = its eigenvectors."""

    lam: float
    matrix: np.ndarray
    slopes: np.ndarray
    basis: list
    adapted: list

    @property
    def m(self) -> int:
        return len(self.slopes)

    @property
    def spread(self) -> float:
        return float(self.slopes.max() - self.slopes.min())


def predict_splitting(g: MetricField, h: SymTensorField, lam: float,
                      basis: list, gram_tol: float = 1e-9,
                      residual_tol: float = 1e-8) -> SplittingPrediction:
    """First-order eigenvalue derivatives of the branches of lam under
    g -> g + eps*h, from the Hermitian matrix lam <S(h,u_j), u_k>_g in any
    g-orthonormal i*B-eigenbasis u_1..u_m of the eigenspace at lam."""
    m = len(basis)
    if m == 0:
        raise ValueError("empty basis")
    B = beltrami(g, basis[0].lattice)
    gram = np.array([[l2_inner(g, uj, uk) for uk in basis] for uj in basis])
    gram_defect = np.abs(gram - np.eye(m)).max()
    if gram_defect > gram_tol:
        raise ContractError(f"basis not orthonormal: Gram defect {gram_defect:.3e}")
    for u in basis:
        resid = l2_norm(g, 1j * B(u) - lam * u)
        if resid > residual_tol:
            raise ContractError(
                f"basis element not an i*B eigenfield at {lam}: "
                f"residual {resid:.3e}"
            )
    S = [s_form(g, h, u) for u in basis]
    M = np.array([[lam * l2_inner(g, S[j], basis[k]) for k in range(m)]
                  for j in range(m)])
    herm_defect = np.abs(M - M.conj().T).max()
    if herm_defect > 1e-9 * max(np.abs(M).max(), 1e-30):
        raise InvariantViolation(
            f"slope matrix not Hermitian: defect {herm_defect:.3e}"
        )
    M = 0.5 * (M + M.conj().T)
    slopes, Y = np.linalg.eigh(M)
    adapted = []
    for i in range(m):
        u = Y[0, i] * basis[0]
        for j in range(1, m):
            u = u + Y[j, i] * basis[j]
        adapted.append(u)
    return SplittingPrediction(lam=float(lam), matrix=M, slopes=slopes,
                               basis=list(basis), adapted=adapted)


# --- branch tracing ----------------------------------------------------------


@dataclass
class BranchTrace:
    """Measured eigenvalue branches of i*B near lam over an epsilon grid
    (column j of values = branch j; the epsilon = 0 row is included)."""

    lam: float
    eps: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    window: tuple
    fit_degree: int

    @property
    def m(self) -> int:
        return self.values.shape[1]


def _beltrami_values_at(g: MetricField, lattice: ModeLattice | None,
                        fiber_mode, dense_threshold: int) -> np.ndarray:
    if fiber_mode is not None:
        if not g.is_constant:
            raise ValueError("fiber tracing needs a constant metric")
        fib = beltrami_fiber(g.tensor, fiber_mode)
        return np.linalg.eigvalsh(-fib.matrix)
    if lattice is None:
        raise ValueError("global tracing needs a lattice")
    from .eigen import _coexact_ib_matrix, _constant_beltrami_values

    if g.is_constant:
        return _constant_beltrami_values(g, lattice)
    return np.linalg.eigvalsh(_coexact_ib_matrix(g, lattice, dense_threshold))


def trace_branches(g: MetricField, h: SymTensorField, lam: float, eps_grid,
                   window: tuple | None = None, fiber_mode=None,
                   lattice: ModeLattice | None = None, fit_degree: int = 3,
                   dense_threshold: int = DENSE_THRESHOLD) -> BranchTrace:
    """Diagonalize i*B at g + eps*h for each eps, select the eigenvalues in
    an isolating window around lam, match branches across eps by
    nearest-value continuation, and fit slopes at 0 by polynomial
    regression.

    The window defaults to half the gap isolating lam at eps = 0. A window
    capturing a different count than the eps = 0 multiplicity m raises
    NumericalError (gap too small)."""
    eps_grid = sorted(float(e) for e in eps_grid)
    if 0.0 not in eps_grid:
        eps_grid = sorted(eps_grid + [0.0])
    vals0 = _beltrami_values_at(g, lattice, fiber_mode, dense_threshold)
    scale = max(np.abs(vals0).max(), 1.0)
    at_lam = np.abs(vals0 - lam) <= 1e-9 * scale
    m = int(at_lam.sum())
    if m == 0:
        raise ValueError(f"{lam} is not an eigenvalue at eps=0")
    if window is None:
        others = vals0[~at_lam]
        gap = np.abs(others - lam).min() if others.size else 1.0
        window = (lam - 0.5 * gap, lam + 0.5 * gap)
    lo, hi = window

    selected = {}
    for e in eps_grid:
        if e == 0.0:
            vals = vals0
        else:
            ge = g.perturbed(h, e)
            vals = _beltrami_values_at(ge, lattice, fiber_mode, dense_threshold)
        inside = np.sort(vals[(vals > lo) & (vals < hi)])
        if inside.size != m:
            raise NumericalError(
                f"window ({lo:.6g}, {hi:.6g}) captured {inside.size} "
                f"eigenvalues at eps={e:.3g}, expected m={m} (gap too small)"
            )
        selected[e] = inside

    # continuation outward from eps = 0. The first step away from the
    # degenerate point is labeled by value order (ascending for eps > 0,
    # descending for eps < 0: analytic branches cross at 0 in slope order);
    # subsequent steps extrapolate each branch linearly and assign the new
    # eigenvalues to the predicted positions (plain nearest-value matching
    # mislabels once branches move farther per step than they are apart).
    zero_idx = eps_grid.index(0.0)
    n = len(eps_grid)
    branches = np.empty((n, m))
    branches[zero_idx] = np.full(m, lam)
    for direction in (+1, -1):
        i = zero_idx + direction
        if not 0 <= i < n:
            continue
        first = np.sort(selected[eps_grid[i]])
        if direction < 0:
            first = first[::-1]
        branches[i] = first
        prev_e, prev = eps_grid[i], first
        prev2_e, prev2 = 0.0, branches[zero_idx]
        i += direction
        while 0 <= i < n:
            cur = selected[eps_grid[i]]
            e = eps_grid[i]
            slope_est = (prev - prev2) / (prev_e - prev2_e)
            predicted = prev + slope_est * (e - prev_e)
            cost = np.abs(predicted[:, None] - cur[None, :])
            rows, cols = linear_sum_assignment(cost)
            matched = np.empty(m)
            matched[rows] = cur[cols]
            jump = np.abs(matched - prev).max()
            if jump > 0.5 * (hi - lo):
                raise NumericalError(
                    f"branch continuation jump {jump:.3e} at eps={e:.3g} "
                    "(collision suspected)"
                )
            branches[i] = matched
            prev2_e, prev2 = prev_e, prev
            prev_e, prev = e, matched
            i += direction

    eps_arr = np.asarray(eps_grid)
    deg = min(fit_degree, n - 1)
    slopes = np.empty(m)
    for j in range(m):
        coeffs = np.polyfit(eps_arr, branches[:, j], deg)
        slopes[j] = coeffs[-2]
    return BranchTrace(lam=float(lam), eps=eps_arr, values=branches,
                       slopes=slopes, window=(float(lo), float(hi)),
                       fit_degree=deg)


# --- randomized search for a splitting direction ------------------------------


@dataclass
class SplittingSearch:
    """Outcome of the randomized search; exhaustion is a value, not an
    error."""

    found: bool
    direction: Direction | None
    prediction: SplittingPrediction | None
    tried_spreads: list = field(default_factory=list)
    seed: int = 0


def find_splitting_direction(g: MetricField, lam: float, basis: list,
                             attempts: int = 8, seed: int = 0,
                             scale: float = 0.3,
                             spread_tol: float | None = None) -> SplittingSearch:
    """Draw seeded random constant-plus-low-frequency directions h until the
    predicted slopes of the eigenvalue lam split (spread > 1e-6 |lam| by
    default). Requires an i*B eigenbasis with m >= 2: a Hodge pair arising
    from one simple Beltrami eigenvalue has a 1-dim i*B eigenspace and is
    refused."""
    if len(basis) < 2:
        raise ContractError(
            "splitting search needs a degenerate i*B eigenspace (m >= 2); "
            "a simple Beltrami eigenvalue cannot be split further"
        )
    if spread_tol is None:
        spread_tol = 1e-6 * abs(lam)
    rng = np.random.default_rng(seed)
    tried = []
    for _ in range(attempts):
        if g.is_constant:
            h = Direction.random_constant(rng, scale)
        else:
            h = Direction.random_low_frequency(rng, g.grid_size, scale)
        pred = predict_splitting(g, h, lam, basis)
        tried.append(pred.spread)
        if pred.spread > spread_tol:
            return SplittingSearch(found=True, direction=h, prediction=pred,
                                   tried_spreads=tried, seed=seed)
    return SplittingSearch(found=False, direction=None, prediction=None,
                           tried_spreads=tried, seed=seed)
