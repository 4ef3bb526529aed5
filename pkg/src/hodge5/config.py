"""Experiment configuration: a JSON file with a strict nested key-value
schema. Unknown keys are rejected; all tolerances must be positive.

Top-level keys:

    schema_version  (required, = 1)
    seed            u64 (default 0; --seed overrides)
    lattice         {"K": int >= 1}
    metric          {"kind": "flat"}
                    {"kind": "constant", "matrix": 5x5}
                    {"kind": "conformal", "terms": [{c, kind: cos|sin, k}],
                     "grid": int}
                    {"kind": "sampled", "file": path to an H5ST container}
    spectrum        {"count", "cluster_tol", "residual_tol",
                     "dense_threshold"}
    split           {"lambda", "window", "eps_grid", "attempts",
                     "spread_tol", "fit_degree", "scale", "direction"}
    sylvester       {"pairs", "residual_tol", "kernel_tol", "density": {
                     "grid", "K", "mask_axis", "mask_width", "w_dominant",
                     "w_scale"}}
    decompose       {"samples"}
    verify          {"samples", "pairs"}

The conformal factor grammar is the structured term list: f(x) is the sum of
c * cos(k.x) and c * sin(k.x) terms.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError
from .fields import MetricField, read_sym_tensor_field

SCHEMA_VERSION = 1

_TERM_KEYS = {"c", "kind", "k"}
_SCHEMA = {
    "schema_version": None,
    "seed": None,
    "lattice": {"K"},
    "metric": {"kind", "matrix", "terms", "grid", "file"},
    "spectrum": {"count", "cluster_tol", "residual_tol", "dense_threshold"},
    "split": {"lambda", "window", "eps_grid", "attempts", "spread_tol",
              "fit_degree", "scale", "direction"},
    "sylvester": {"pairs", "residual_tol", "kernel_tol", "density"},
    "decompose": {"samples"},
    "verify": {"samples", "pairs"},
}
_DENSITY_KEYS = {"grid", "K", "mask_axis", "mask_width", "w_dominant",
                 "w_scale"}
_DIRECTION_KEYS = {"kind", "matrix"}

DEFAULTS = {
    "seed": 0,
    "lattice": {"K": 1},
    "metric": {"kind": "flat"},
    "spectrum": {"count": None, "cluster_tol": None, "residual_tol": 1e-9,
                 "dense_threshold": 4000},
    "split": {"lambda": 1.0, "window": None,
              "eps_grid": [-1e-2, -5e-3, -2.5e-3, 2.5e-3, 5e-3, 1e-2],
              "attempts": 8, "spread_tol": None, "fit_degree": 3,
              "scale": 0.3, "direction": {"kind": "search"}},
    "sylvester": {"pairs": 1000, "residual_tol": 1e-9, "kernel_tol": 1e-8,
                  "density": None},
    "decompose": {"samples": 3},
    "verify": {"samples": 20, "pairs": 20},
}


def _require_positive(name, value):
    if value is not None and not (isinstance(value, (int, float))
                                  and value > 0):
        raise ConfigError(f"{name} must be positive, got {value!r}")


def _check_keys(section: str, obj: dict, allowed: set) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


def load_config(path) -> dict:
    """Parse, schema-validate and default-fill an experiment config."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys("config", raw, set(_SCHEMA))
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got "
            f"{raw.get('schema_version')!r}"
        )

    cfg = {"schema_version": SCHEMA_VERSION, "seed": raw.get("seed", 0)}
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a nonnegative integer")

    for section, allowed in _SCHEMA.items():
        if section in ("schema_version", "seed"):
            continue
        merged = dict(DEFAULTS[section])
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{section} must be an object")
        _check_keys(section, given, allowed)
        merged.update(given)
        cfg[section] = merged

    K = cfg["lattice"]["K"]
    if not isinstance(K, int) or K < 1:
        raise ConfigError(f"lattice.K must be an integer >= 1, got {K!r}")

    m = cfg["metric"]
    if m.get("kind") not in ("flat", "constant", "conformal", "sampled"):
        raise ConfigError(f"unknown metric kind {m.get('kind')!r}")
    if m["kind"] == "conformal":
        for t in m.get("terms", []):
            if not isinstance(t, dict):
                raise ConfigError("conformal terms must be objects")
            _check_keys("metric.terms[]", t, _TERM_KEYS)
            if t.get("kind") not in ("cos", "sin"):
                raise ConfigError(f"term kind must be cos or sin")

    for name in ("cluster_tol", "residual_tol"):
        _require_positive(f"spectrum.{name}", cfg["spectrum"][name])
    _require_positive("sylvester.residual_tol", cfg["sylvester"]["residual_tol"])
    _require_positive("sylvester.kernel_tol", cfg["sylvester"]["kernel_tol"])
    _require_positive("split.spread_tol", cfg["split"]["spread_tol"])
    _require_positive("split.scale", cfg["split"]["scale"])

    d = cfg["split"]["direction"]
    if not isinstance(d, dict):
        raise ConfigError("split.direction must be an object")
    _check_keys("split.direction", d, _DIRECTION_KEYS)
    if d.get("kind") not in ("search", "conformal", "constant"):
        raise ConfigError(f"unknown direction kind {d.get('kind')!r}")

    dens = cfg["sylvester"]["density"]
    if dens is not None:
        if not isinstance(dens, dict):
            raise ConfigError("sylvester.density must be an object")
        _check_keys("sylvester.density", dens, _DENSITY_KEYS)
    return cfg


def build_metric(cfg: dict) -> MetricField:
    m = cfg["metric"]
    kind = m["kind"]
    if kind == "flat":
        return MetricField.flat()
    if kind == "constant":
        if "matrix" not in m:
            raise ConfigError("constant metric needs a matrix")
        try:
            return MetricField.constant(np.asarray(m["matrix"], dtype=float))
        except Exception as exc:
            raise ConfigError(f"invalid constant metric: {exc}") from exc
    if kind == "conformal":
        terms = m.get("terms", [])
        grid = m.get("grid", 12)
        if not isinstance(grid, int) or grid < 2 * cfg["lattice"]["K"] + 1:
            raise ConfigError(
                f"conformal grid must be an integer >= 2K+1, got {grid!r}"
            )
        return MetricField.conformal(terms, grid_size=grid)
    # sampled
    if "file" not in m:
        raise ConfigError("sampled metric needs a file")
    try:
        field = read_sym_tensor_field(m["file"])
    except FileNotFoundError as exc:
        raise ConfigError(f"metric file not found: {m['file']}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad metric container: {exc}") from exc
    if field.is_constant or field.is_complex:
        raise ConfigError("sampled metric file must hold a real sampled grid")
    return MetricField("sampled", grid=field.grid.real)
