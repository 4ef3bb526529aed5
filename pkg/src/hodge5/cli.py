"""Batch front end.

Commands: spectrum, split, sylvester, decompose, verify. Each reads one JSON
experiment config (see config.py for the schema), runs the experiment, and
writes deterministic JSON/CSV reports into --out. Reports are byte-identical
for identical configs and seeds.

Exit codes: 0 success; 2 config or precondition error; 3 numerical failure
(non-convergence, gap too small, metric loses positivity); 4 invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import DEFAULTS, SCHEMA_VERSION, build_metric, load_config
from .eigen import pair_spectrum, realify, spectrum
from .errors import (
    ConfigError,
    ContractError,
    InvariantViolation,
    MetricError,
    NumericalError,
)
from .fibers import (
    FormFiber,
    MetricTensor,
    codifferential_sign,
    hodge_star,
    index_basis,
    laplacian_sign,
)
from .fields import FormField, ModeLattice
from .operators import (
    beltrami,
    codifferential,
    coexact_subspace,
    exterior_d,
    hodge_laplacian,
    hodge_projectors,
    l2_inner,
    l2_norm,
    symmetry_defect,
)
from .perturbation import (
    Direction,
    find_splitting_direction,
    predict_splitting,
    trace_branches,
)
from .sylvester import density_construct, kernel_basis, orthogonality_check, solve_sylvester

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _set_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("H5_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        print(f"note: threadpoolctl unavailable; --threads {n} ignored",
              file=sys.stderr)


def cmd_spectrum(cfg, out_dir) -> int:
    g = build_metric(cfg)
    lat = ModeLattice(cfg["lattice"]["K"])
    sp = cfg["spectrum"]
    report = pair_spectrum(g, lat, count=sp["count"],
                           cluster_tol=sp["cluster_tol"],
                           dense_threshold=sp["dense_threshold"])
    payload = report.to_json_dict()
    payload["seed"] = cfg["seed"]
    _write_json(os.path.join(out_dir, "spectrum.json"), payload)
    with open(os.path.join(out_dir, "spectrum.csv"), "w") as fh:
        fh.write(report.to_csv())
    n_pairs = sum(1 for c in report.clusters if c.verdict == "pair")
    print(f"spectrum: {len(report.clusters)} clusters, {n_pairs} pairs, "
          f"tol {report.tol:.3e}")
    return EXIT_OK


def _splitting_basis(g, lat, lam, residual_tol, dense_threshold):
    """g-orthonormal i*B eigenbasis of the eigenvalue lam."""
    sub = coexact_subspace(g, lat, dense_threshold)
    B = beltrami(g, lat, dense_threshold)
    window_count = sub.dim
    pairs = spectrum(B, sub, count=window_count, tol=residual_tol,
                     dense_threshold=max(dense_threshold, sub.dim))
    hits = [p for p in pairs if abs(p.value - lam) <= 1e-8 * max(1.0, abs(lam))]
    if not hits:
        near = min(pairs, key=lambda p: abs(p.value - lam))
        raise ConfigError(
            f"no i*B eigenvalue at {lam} (nearest computed: {near.value:.9g})"
        )
    return [p.vector for p in hits]


def cmd_split(cfg, out_dir) -> int:
    g = build_metric(cfg)
    lat = ModeLattice(cfg["lattice"]["K"])
    sp = cfg["split"]
    lam = float(sp["lambda"])
    basis = _splitting_basis(g, lat, lam, cfg["spectrum"]["residual_tol"],
                             cfg["spectrum"]["dense_threshold"])
    d = sp["direction"]
    tried = []
    if d["kind"] == "constant":
        direction = Direction.constant(np.asarray(d["matrix"], dtype=float))
        prediction = predict_splitting(g, direction, lam, basis)
    elif d["kind"] == "conformal":
        direction = Direction.of_metric(g)
        prediction = predict_splitting(g, direction, lam, basis)
    else:
        search = find_splitting_direction(
            g, lam, basis, attempts=sp["attempts"], seed=cfg["seed"],
            scale=sp["scale"], spread_tol=sp["spread_tol"])
        tried = search.tried_spreads
        if not search.found:
            payload = {
                "schema_version": SCHEMA_VERSION,
                "kind": "split",
                "found": False,
                "lambda": lam,
                "m": len(basis),
                "tried_spreads": tried,
                "seed": cfg["seed"],
            }
            _write_json(os.path.join(out_dir, "split.json"), payload)
            print(f"split: search exhausted after {len(tried)} attempts")
            return EXIT_OK
        direction, prediction = search.direction, search.prediction

    trace = trace_branches(g, direction, lam, sp["eps_grid"],
                           window=sp["window"], lattice=lat,
                           fit_degree=sp["fit_degree"],
                           dense_threshold=cfg["spectrum"]["dense_threshold"])
    predicted = np.sort(prediction.slopes)
    measured = np.sort(trace.slopes)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "split",
        "found": True,
        "lambda": lam,
        "m": prediction.m,
        "predicted_slopes": [float(s) for s in predicted],
        "measured_slopes": [float(s) for s in measured],
        "max_deviation": float(np.abs(predicted - measured).max()),
        "spread": prediction.spread,
        "eps_grid": [float(e) for e in trace.eps],
        "window": list(trace.window),
        "tried_spreads": tried,
        "seed": cfg["seed"],
    }
    _write_json(os.path.join(out_dir, "split.json"), payload)
    header = ["eps"] + [f"branch_{j}" for j in range(trace.m)]
    rows = [[repr(float(e))] + [repr(float(v)) for v in row]
            for e, row in zip(trace.eps, trace.values)]
    _write_csv(os.path.join(out_dir, "branches.csv"), header, rows)
    print(f"split: m={prediction.m}, spread {prediction.spread:.3e}, "
          f"max slope deviation {payload['max_deviation']:.3e}")
    return EXIT_OK


def _density_experiment(cfg, rng):
    dens = cfg["sylvester"]["density"]
    G = dens.get("grid", 5)
    K = dens.get("K", (G - 1) // 2)
    axis = dens.get("mask_axis", 0)
    width = dens.get("mask_width", max(1, G // 2))
    w_dom = dens.get("w_dominant", 1.0)
    w_scale = dens.get("w_scale", 0.05)
    g = build_metric(cfg)
    lat = ModeLattice(K)
    mask = np.zeros((G,) * 5, dtype=bool)
    index = [slice(None)] * 5
    index[axis] = slice(0, width)
    mask[tuple(index)] = True
    wr = FormField.random(lat, 2, rng)
    wc = w_scale * wr.coeffs
    wc[lat.zero_index, 0] += w_dom
    w = FormField(lat, 2, 0.5 * (wc + np.conj(wc[::-1])), reality=True)
    vr = FormField.random(lat, 2, rng)
    v_vals = vr.values_on_grid(G) * mask[..., None]
    v = FormField.from_grid(lat, 2, v_vals, reality=True)
    t, residual = density_construct(g, w, v, mask)
    return {"grid": G, "K": K, "masked_points": int(mask.sum()),
            "residual": residual}


def cmd_sylvester(cfg, out_dir) -> int:
    sy = cfg["sylvester"]
    rng = np.random.default_rng(cfg["seed"])
    n = sy["pairs"]
    worst_resid = worst_sym = worst_orth = 0.0
    kernel_dims = {}
    for _ in range(n):
        a = rng.standard_normal((5, 5))
        b = rng.standard_normal((5, 5))
        W, V = a - a.T, b - b.T
        sol = solve_sylvester(W, V, residual_tol=sy["residual_tol"])
        worst_resid = max(worst_resid, sol.residual / np.linalg.norm(V))
        basis = kernel_basis(W, symmetry_tol=sy["kernel_tol"])
        kernel_dims[len(basis)] = kernel_dims.get(len(basis), 0) + 1
        worst_sym = max(worst_sym,
                        max(np.abs(E - E.T).max() for E in basis))
        worst_orth = max(worst_orth,
                         orthogonality_check(W, V) / np.linalg.norm(V))
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "sylvester",
        "pairs": n,
        "max_relative_residual": worst_resid,
        "max_kernel_asymmetry": worst_sym,
        "max_kernel_pairing": worst_orth,
        "kernel_dimensions": {str(k): v for k, v in sorted(kernel_dims.items())},
        "seed": cfg["seed"],
    }
    if sy["density"] is not None:
        payload["density"] = _density_experiment(cfg, rng)
    _write_json(os.path.join(out_dir, "sylvester.json"), payload)
    print(f"sylvester: {n} pairs, max rel residual {worst_resid:.3e}")
    return EXIT_OK


def cmd_decompose(cfg, out_dir) -> int:
    g = build_metric(cfg)
    lat = ModeLattice(cfg["lattice"]["K"])
    dt = cfg["spectrum"]["dense_threshold"]
    P_h, P_e, P_c = hodge_projectors(g, lat, dt)
    rng = np.random.default_rng(cfg["seed"])
    idem = orth = complete = 0.0
    for _ in range(cfg["decompose"]["samples"]):
        x = FormField.random(lat, 2, rng, reality=False)
        nx = l2_norm(g, x)
        parts = [P(x) for P in (P_h, P_e, P_c)]
        complete = max(complete,
                       l2_norm(g, parts[0] + parts[1] + parts[2] - x) / nx)
        for i, P in enumerate((P_h, P_e, P_c)):
            idem = max(idem, l2_norm(g, P(parts[i]) - parts[i]) / nx)
            for j in range(3):
                if j != i:
                    orth = max(orth, l2_norm(g, P(parts[j])) / nx)
    # harmonic dimension: rank of P_h on the zero-mode + closed probe fields
    hdim = _harmonic_dimension(g, lat, P_h, rng)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "decompose",
        "idempotence_defect": idem,
        "orthogonality_defect": orth,
        "completeness_defect": complete,
        "harmonic_dimension": hdim,
        "seed": cfg["seed"],
    }
    _write_json(os.path.join(out_dir, "decompose.json"), payload)
    print(f"decompose: harmonic dim {hdim}, worst defect "
          f"{max(idem, orth, complete):.3e}")
    if max(idem, orth, complete) > 1e-9:
        raise InvariantViolation("projector identities exceed 1e-9")
    return EXIT_OK


def _harmonic_dimension(g, lat, P_h, rng) -> int:
    """Numerical rank of the harmonic projector via random probes."""
    probes = 24
    cols = []
    for _ in range(probes):
        x = FormField.random(lat, 2, rng, reality=False)
        cols.append(P_h(x).coeffs.reshape(-1))
    s = np.linalg.svd(np.array(cols).T, compute_uv=False)
    return int((s > 1e-8 * s[0]).sum())


def cmd_verify(cfg, out_dir) -> int:
    g = build_metric(cfg)
    lat = ModeLattice(cfg["lattice"]["K"])
    rng = np.random.default_rng(cfg["seed"])
    n_samples = cfg["verify"]["samples"]
    n_pairs = cfg["verify"]["pairs"]
    dt = cfg["spectrum"]["dense_threshold"]
    checks = []

    def add(name, value, tol):
        checks.append({"name": name, "value": float(value),
                       "tolerance": tol, "pass": bool(value <= tol)})

    add("laplacian_sign(5,2) == -1", abs(laplacian_sign(5, 2) + 1), 0)
    add("codifferential_sign(5,3) == -1", abs(codifferential_sign(5, 3) + 1), 0)

    worst = 0.0
    for _ in range(n_samples):
        a = rng.standard_normal((5, 5))
        gt = MetricTensor(a @ a.T + 5 * np.eye(5))
        for k in range(6):
            u = FormFiber(k, rng.standard_normal(index_basis(k).dim))
            uu = hodge_star(gt, hodge_star(gt, u))
            worst = max(worst, np.abs(uu.coeffs - u.coeffs).max())
    add("fiber star involution", worst, 1e-12)

    u1 = FormField.random(lat, 1, rng)
    add("d^2 = 0", np.abs(exterior_d(exterior_d(u1)).coeffs).max(), 1e-12)

    d2 = codifferential(g, lat, 2, dt)
    d1 = codifferential(g, lat, 1, dt)
    b2 = FormField.random(lat, 2, rng)
    add("delta^2 = 0",
        np.abs(d1(d2(b2)).coeffs).max() / np.abs(b2.coeffs).max(), 1e-12)
    lhs = l2_inner(g, exterior_d(u1), b2)
    rhs = l2_inner(g, u1, d2(b2))
    add("adjointness <du,v> = <u,delta v>",
        abs(lhs - rhs) / (l2_norm(g, exterior_d(u1)) * l2_norm(g, b2)), 1e-10)

    B = beltrami(g, lat, dt)
    add("beltrami skew-adjointness", symmetry_defect(B, rng, n_pairs), 1e-10)

    P_h, P_e, P_c = hodge_projectors(g, lat, dt)
    xc = P_c(FormField.random(lat, 2, rng, reality=False))
    add("B maps co-exact to co-exact",
        l2_norm(g, P_e(B(xc))) / l2_norm(g, B(xc)), 1e-10)
    if g.is_constant:
        L2 = hodge_laplacian(g, lat, 2, dt)
        lhs_f = -1.0 * B(B(xc))
        rhs_f = L2(xc)
        add("Delta = -(B)^2 on co-exact",
            l2_norm(g, lhs_f - rhs_f) / l2_norm(g, rhs_f), 1e-10)
        L3 = hodge_laplacian(g, lat, 3, dt)
        xr = FormField.random(lat, 2, rng)
        add("Delta d = d Delta",
            l2_norm(g, L3(exterior_d(xr)) - exterior_d(L2(xr)))
            / l2_norm(g, exterior_d(L2(xr))), 1e-10)

    add("harmonic dimension == 10",
        abs(_harmonic_dimension(g, lat, P_h, rng) - 10), 0)

    sub = coexact_subspace(g, lat, dt)
    eigenpairs = spectrum(B, sub, count=2, tol=1e-9,
                          dense_threshold=max(dt, sub.dim))
    p = eigenpairs[0]
    rp = realify(p.vector, -p.value, g)
    add("realify identities",
        max(v for k, v in rp.diagnostics.items() if k != "norm_mismatch"),
        1e-8)

    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "verify",
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
        "seed": cfg["seed"],
    }
    _write_json(os.path.join(out_dir, "verify.json"), payload)
    for c in checks:
        status = "pass" if c["pass"] else "FAIL"
        print(f"  [{status}] {c['name']}: {c['value']:.3e} "
              f"(tol {c['tolerance']:.1e})" if c["tolerance"] else
              f"  [{status}] {c['name']}")
    if not payload["all_pass"]:
        raise InvariantViolation("verification suite failed")
    print("verify: all checks pass")
    return EXIT_OK


_COMMANDS = {
    "spectrum": cmd_spectrum,
    "split": cmd_split,
    "sylvester": cmd_sylvester,
    "decompose": cmd_decompose,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hodge5",
        description="Beltrami and Hodge Laplacian spectra on the 5-torus",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default="hodge5-out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread cap (H5_THREADS as fallback)")
    args = parser.parse_args(argv)
    _set_threads(args.threads)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.out)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, MetricError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
