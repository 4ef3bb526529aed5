"""Spectra of the assembled operators: multiplicity clustering, the +/- i*lambda
pairing of the skew Beltrami operator, and realification of complex eigenforms
into (alpha, beta) pairs.

The skew Beltrami operator is diagonalized as the Hermitian problem for i*B
(compressed onto an invariant subspace); dense LAPACK below a configurable
dimension threshold, ARPACK shift-invert on the squared operator above it.
On the co-exact subspace the Hodge Laplacian is -B^2, so its spectrum is the
squared Beltrami spectrum with the real multiplicity doubled by conjugation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import ContractError, InvariantViolation, NumericalError, ZeroModeError
from .fibers import compound_matrix, index_basis
from .fields import FormField, MetricField, ModeLattice
from .operators import (
    DENSE_THRESHOLD,
    OperatorHandle,
    Subspace,
    VOL,
    _beltrami_T_blocks,
    _mass,
    beltrami,
    coexact_subspace,
    l2_inner,
    l2_norm,
)

__all__ = [
    "EigenPair",
    "Cluster",
    "SpectrumReport",
    "RealPair",
    "cluster",
    "spectrum",
    "realify",
    "pair_spectrum",
]

REPORT_SCHEMA_VERSION = 1


@dataclass
class EigenPair:
    """One eigenpair: value is real (lambda for i*B, or lambda^2 for the
    Laplacian); vector normalized to 1 in the governing inner product."""

    value: float
    vector: FormField
    residual: float


@dataclass
class Cluster:
    value: float
    multiplicity: int
    members: list
    verdict: str | None = None
    max_residual: float | None = None


@dataclass
class SpectrumReport:
    """Eigenvalue clusters with multiplicities at a stated gap tolerance."""

    clusters: list
    tol: float
    operator: str
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "spectrum",
            "operator": self.operator,
            "clustering_tol": self.tol,
            "metadata": self.metadata,
            "clusters": [
                {
                    "value": c.value,
                    "multiplicity": c.multiplicity,
                    "members": list(map(float, c.members)),
                    "verdict": c.verdict,
                    "max_residual": c.max_residual,
                }
                for c in self.clusters
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["value", "multiplicity", "verdict", "max_residual"])
        for c in self.clusters:
            writer.writerow([repr(c.value), c.multiplicity, c.verdict or "",
                             "" if c.max_residual is None else repr(c.max_residual)])
        return buf.getvalue()


def cluster(values, tol: float, operator: str = "",
            metadata: dict | None = None) -> SpectrumReport:
    """Single-linkage clustering of real values with gap threshold tol;
    multiplicity = cluster size."""
    vals = sorted(float(v) for v in values)
    if any(not math.isfinite(v) for v in vals):
        raise ValueError("values must be finite")
    clusters = []
    if vals:
        start = 0
        for i in range(1, len(vals) + 1):
            if i == len(vals) or vals[i] - vals[i - 1] > tol:
                members = vals[start:i]
                clusters.append(Cluster(
                    value=float(np.mean(members)),
                    multiplicity=len(members),
                    members=members,
                ))
                start = i
    return SpectrumReport(clusters=clusters, tol=tol, operator=operator,
                          metadata=metadata or {})


# --- spectrum ----------------------------------------------------------------


def _phase_fix(coeffs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude coefficient real positive (reproducible
    eigenvector representatives)."""
    flat = coeffs.reshape(-1)
    idx = int(np.argmax(np.abs(flat)))
    z = flat[idx]
    if abs(z) == 0.0:
        return coeffs
    return coeffs * (abs(z) / z)


def _check_invariance(op: OperatorHandle, sub: Subspace, mass, rng,
                      tol: float = 1e-8) -> None:
    x = rng.standard_normal(sub.dim) + 1j * rng.standard_normal(sub.dim)
    v = sub.basis @ (x / np.linalg.norm(x))
    w = op.apply_coeffs(v.reshape(op.lattice.count, -1))
    w = w.reshape(-1)
    proj = sub.basis @ (sub.basis.conj().T @ mass.apply(w))
    num = np.vdot(w - proj, mass.apply(w - proj)).real
    den = np.vdot(w, mass.apply(w)).real
    if den > 0 and num > (tol**2) * den:
        raise ContractError(
            f"subspace not invariant under operator: relative defect "
            f"{math.sqrt(num / den):.3e}"
        )


def spectrum(op: OperatorHandle, subspace: Subspace | None, count: int,
             tol: float = 1e-9, dense_threshold: int = DENSE_THRESHOLD,
             seed: int = 0, maxiter: int = 5000) -> list:
    """`count` smallest-magnitude nonzero eigenpairs of the operator
    compressed to the subspace.

    Skew operators are diagonalized as the Hermitian problem for i*op, so
    reported values are the real eigenvalues of i*op; Hermitian operators
    report their own eigenvalues. Dense LAPACK when the compressed dimension
    is at or below dense_threshold, ARPACK shift-invert on the squared
    operator above it. Residuals exceeding tol raise NumericalError.
    """
    if op.symmetry not in ("skew", "hermitian"):
        raise ContractError(f"operator symmetry {op.symmetry!r} not diagonalizable "
                            "by the Hermitian solver contract")
    mass = _mass(op.metric, op.lattice, op.rank_in,
                 dense_threshold=dense_threshold)
    rng = np.random.default_rng(seed)
    if subspace is not None:
        _check_invariance(op, subspace, mass, rng)
        dim = subspace.dim
    else:
        dim = op.ndofs_in
    factor = 1j if op.symmetry == "skew" else 1.0

    if dim <= dense_threshold:
        if subspace is not None:
            C = subspace.basis
            opC = op.apply_coeffs(C.reshape(op.lattice.count, -1, C.shape[1]))
            opC = opC.reshape(-1, C.shape[1])
            H = C.conj().T @ mass.apply(factor * opC)
        else:
            dense = factor * op.dense()
            H = mass.apply(dense)
        H = 0.5 * (H + H.conj().T)
        if subspace is not None:
            w, Y = np.linalg.eigh(H)
            vecs = subspace.basis @ Y
        else:
            Md = mass.dense_matrix()
            w, vecs = scipy.linalg.eigh(H, 0.5 * (Md + Md.conj().T))
            # eigh(..., b) returns b-orthonormal vectors
        scale = max(np.abs(w).max(), 1.0)
        keep = np.abs(w) > 1e-10 * scale
        order = np.argsort(np.abs(w[keep]), kind="stable")
        idx = np.nonzero(keep)[0][order][:count]
        values = w[idx]
        vectors = vecs[:, idx]
    else:
        values, vectors = _iterative_spectrum(op, subspace, mass, count,
                                              factor, seed, maxiter, tol)

    pairs = []
    for lam, v in zip(values, vectors.T):
        coeffs = _phase_fix(v.reshape(op.lattice.count, -1))
        nrm = math.sqrt(np.vdot(coeffs.reshape(-1),
                                mass.apply(coeffs).reshape(-1)).real)
        coeffs = coeffs / nrm
        fld = FormField(op.lattice, op.rank_in, coeffs)
        resid_vec = factor * op.apply_coeffs(coeffs) - lam * coeffs
        res = math.sqrt(max(np.vdot(resid_vec.reshape(-1),
                                    mass.apply(resid_vec).reshape(-1)).real, 0.0))
        if res > tol:
            raise NumericalError(
                f"eigenpair residual {res:.3e} exceeds tolerance {tol:.1e} "
                f"at value {lam:.6g}"
            )
        pairs.append(EigenPair(value=float(lam), vector=fld, residual=res))
    return pairs


def _iterative_spectrum(op, subspace, mass, count, factor, seed, maxiter, tol):
    """Krylov path: shift-invert ARPACK on the squared operator (PSD after
    deflating the subspace complement), then recover signed values of i*op
    from the 2-dim spaces {v, op v}."""
    ndofs = op.ndofs_in
    rng = np.random.default_rng(seed)

    if subspace is not None:
        P = lambda x: subspace.basis @ (subspace.basis.conj().T @ mass.apply(x))
    else:
        P = lambda x: x

    # spectral scale estimate for the deflation shift
    s = 0.0
    for _ in range(3):
        v = rng.standard_normal(ndofs) + 1j * rng.standard_normal(ndofs)
        w = op.apply_coeffs(P(v).reshape(op.lattice.count, -1)).reshape(-1)
        s = max(s, np.linalg.norm(w) / np.linalg.norm(v))
    shift = 4.0 * max(s * s, 1.0)

    def sq_mv(x):
        y = P(x)
        w = op.apply_coeffs(y.reshape(op.lattice.count, -1)).reshape(-1)
        w2 = op.apply_coeffs(w.reshape(op.lattice.count, -1)).reshape(-1)
        core = -w2 if factor == 1j else w2  # (i op)^2 = -op^2 for skew
        if op.symmetry == "hermitian":
            core = w  # Hermitian op: use op itself (already PSD on subspace)
        return mass.apply(core + shift * (x - y)).reshape(-1)

    S = scipy.sparse.linalg.LinearOperator((ndofs, ndofs), matvec=sq_mv,
                                           dtype=np.complex128)
    M = scipy.sparse.linalg.LinearOperator(
        (ndofs, ndofs), matvec=lambda x: mass.apply(x).reshape(-1),
        dtype=np.complex128,
    )

    def opinv_mv(b):
        sol, info = scipy.sparse.linalg.cg(S, b, rtol=1e-10, maxiter=maxiter)
        if info != 0:
            raise NumericalError(f"inner CG failed in shift-invert (info={info})")
        return sol

    OPinv = scipy.sparse.linalg.LinearOperator((ndofs, ndofs), matvec=opinv_mv,
                                               dtype=np.complex128)
    k = count if op.symmetry == "hermitian" else max(1, (count + 1) // 2)
    try:
        w, V = scipy.sparse.linalg.eigsh(S, k=k, M=M, sigma=0.0, OPinv=OPinv,
                                         which="LM", maxiter=maxiter, tol=1e-10)
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise NumericalError(f"ARPACK did not converge: {exc}") from exc

    if op.symmetry == "hermitian":
        return w, V

    # recover +/- pairs of i*op from each squared eigenvector
    values, vectors = [], []
    for mu, v in zip(w, V.T):
        lam = math.sqrt(max(mu, 0.0))
        if lam == 0.0:
            raise NumericalError("squared eigenvalue collapsed to zero")
        bv = op.apply_coeffs(v.reshape(op.lattice.count, -1)).reshape(-1)
        for sgn in (+1.0, -1.0):
            y = v + (factor * bv) / (sgn * lam)
            ny = math.sqrt(np.vdot(y, mass.apply(y)).real)
            if ny < 1e-12:
                continue
            values.append(sgn * lam)
            vectors.append(y / ny)
    order = np.argsort(np.abs(values), kind="stable")[:count]
    return (np.asarray(values)[order],
            np.asarray(vectors).T[:, order])


# --- realification -----------------------------------------------------------


@dataclass
class RealPair:
    """Real eigenform pair (alpha, beta) of the Hodge Laplacian at lambda^2,
    obtained from a Beltrami eigenform omega = alpha + i beta at i*lambda."""

    alpha: FormField
    beta: FormField
    lam: float
    diagnostics: dict = field(default_factory=dict)


def realify(omega: FormField, lam: float, g: MetricField,
            residual_tol: float = 1e-9, identity_tol: float = 1e-8) -> RealPair:
    """Split a Beltrami eigenform omega at eigenvalue i*lambda (that is,
    B omega = i lam omega; an i*B eigenpair (mu, omega) from spectrum()
    realifies with lam = -mu) into real forms alpha = Re omega,
    beta = Im omega, each of unit g-norm, satisfying

        B alpha = -lambda beta,  B beta = lambda alpha,  (alpha, beta)_g = 0,

    and both eigenforms of the co-exact Hodge Laplacian (-B^2) at lambda^2.
    """
    if lam == 0.0:
        raise ZeroModeError("realification needs a nonzero eigenvalue")
    B = beltrami(g, omega.lattice)
    nrm = l2_norm(g, omega)
    resid = l2_norm(g, B(omega) - (1j * lam) * omega) / nrm
    if resid > residual_tol:
        raise ContractError(
            f"input is not an eigenfield: residual {resid:.3e} > {residual_tol:.1e}"
        )
    c = omega.coeffs
    alpha_c = 0.5 * (c + np.conj(c[::-1]))
    beta_c = (c - np.conj(c[::-1])) / 2j
    alpha = FormField(omega.lattice, omega.k, alpha_c, reality=True)
    beta = FormField(omega.lattice, omega.k, beta_c, reality=True)
    na, nb = l2_norm(g, alpha), l2_norm(g, beta)
    if min(na, nb) < 1e-12 * nrm:
        raise InvariantViolation("real/imaginary part vanished; eigenfield "
                                 "was not genuinely complex")
    alpha = alpha * (1.0 / na)
    beta = beta * (1.0 / nb)
    Ba, Bb = B(alpha), B(beta)
    checks = {
        "norm_mismatch": abs(na - nb) / max(na, nb),
        "B_alpha_plus_lambda_beta": l2_norm(g, Ba + lam * beta),
        "B_beta_minus_lambda_alpha": l2_norm(g, Bb - lam * alpha),
        "alpha_beta_inner": abs(l2_inner(g, alpha, beta)),
        "laplacian_alpha": l2_norm(g, -1.0 * B(Ba) - (lam**2) * alpha),
        "laplacian_beta": l2_norm(g, -1.0 * B(Bb) - (lam**2) * beta),
    }
    worst = max(v for k, v in checks.items() if k != "norm_mismatch")
    if worst > identity_tol:
        raise InvariantViolation(
            f"realification identities violated at {worst:.3e}: {checks}"
        )
    return RealPair(alpha=alpha, beta=beta, lam=float(lam), diagnostics=checks)


# --- pairing spectrum --------------------------------------------------------


def _constant_beltrami_values(g: MetricField, lattice: ModeLattice) -> np.ndarray:
    """All eigenvalues of i*B over nonzero-mode co-exact fibers (constant
    metric): per mode, the 6 nonzero eigenvalues of the pencil (-T_q, G2),
    solved batched via the Cholesky transform of G2."""
    T = _beltrami_T_blocks(lattice)
    G2 = g.tensor.sqrt_det * compound_matrix(g.tensor.inv, 2)
    Linv = np.linalg.inv(np.linalg.cholesky(G2))
    H = np.einsum("ij,mjk,lk->mil", Linv, -T, Linv)
    w = np.linalg.eigvalsh(H)          # (count, 10), ascending
    keep = np.ones(lattice.count, dtype=bool)
    keep[lattice.zero_index] = False
    w = w[keep]
    scale = np.abs(w).max()
    nonzero_counts = (np.abs(w) > 1e-10 * scale).sum(axis=1)
    if not np.all(nonzero_counts == 6):
        bad = int(np.argmax(nonzero_counts != 6))
        raise InvariantViolation(
            f"a co-exact fiber has {nonzero_counts[bad]} nonzero eigenvalues, "
            "expected 6"
        )
    flat = w.reshape(-1)
    return flat[np.abs(flat) > 1e-10 * scale]


def _coexact_ib_matrix(g: MetricField, lattice: ModeLattice,
                       dense_threshold: int = DENSE_THRESHOLD) -> np.ndarray:
    """Hermitian matrix of i*B on the M-orthonormal co-exact basis; the mass
    solve in B = M^{-1}A cancels against the weak form, leaving C* (iA) C."""
    sub = coexact_subspace(g, lattice, dense_threshold)
    T = _beltrami_T_blocks(lattice)
    C = sub.basis.reshape(lattice.count, index_basis(2).dim, -1)
    AC = -VOL * np.einsum("mjk,mkc->mjc", T, C)
    H = sub.basis.conj().T @ AC.reshape(sub.basis.shape[0], -1)
    return 0.5 * (H + H.conj().T)


def pair_spectrum(g: MetricField, lattice: ModeLattice, count: int | None = None,
                  cluster_tol: float | None = None,
                  dense_threshold: int = DENSE_THRESHOLD,
                  pairing_tol: float = 1e-9) -> SpectrumReport:
    """Real co-exact Hodge Laplacian spectrum with pairing verdicts.

    Computes the i*B spectrum on the co-exact subspace, verifies the +/-
    conjugation symmetry to pairing_tol, squares the positive side (each
    contributing real multiplicity 2 via realification), clusters, and
    annotates each cluster: multiplicity exactly 2 -> "pair"; even > 2 ->
    "symmetric/non-generic". An unpairable eigenvalue is an invariant
    violation (resolution artifact or bug)."""
    if g.is_constant:
        vals = _constant_beltrami_values(g, lattice)
    else:
        vals = np.linalg.eigvalsh(_coexact_ib_matrix(g, lattice, dense_threshold))
    scale = max(np.abs(vals).max(), 1.0)
    if np.abs(vals).min() < max(pairing_tol, 1e-12 * scale):
        raise InvariantViolation(
            "Beltrami eigenvalue numerically zero on the co-exact subspace"
        )
    pos = np.sort(vals[vals > 0])
    neg = np.sort(-vals[vals < 0])
    if pos.size != neg.size or np.abs(pos - neg).max() > pairing_tol * scale:
        raise InvariantViolation(
            "Beltrami spectrum not conjugation-symmetric at pairing tolerance"
        )
    delta_vals = pos**2
    if cluster_tol is None:
        diameter = float(delta_vals.max() - delta_vals.min()) if delta_vals.size else 1.0
        cluster_tol = 1e-7 * max(diameter, 1.0)
    report = cluster(delta_vals, cluster_tol,
                     operator="hodge laplacian on co-exact 2-forms",
                     metadata={"K": lattice.K,
                               "metric": "constant" if g.is_constant else "sampled",
                               "pairing_tol": pairing_tol})
    for c in report.clusters:
        c.multiplicity = 2 * c.multiplicity  # alpha and beta per +lambda
        if c.multiplicity == 2:
            c.verdict = "pair"
        else:
            c.verdict = "symmetric/non-generic"
    if count is not None:
        report.clusters = report.clusters[:count]
    return report
