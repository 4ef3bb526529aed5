"""Fourier lattices, form fields, metric fields and their serialization.

Fields live on the truncated mode lattice {k in Z^5 : |k_i| <= K}; a rank-k
field stores one complex FormFiber coefficient vector per mode, in canonical
(lexicographic) mode order. Real fields are complex arrays with the
conjugation symmetry coeff(-k) = conj(coeff(k)) tracked by a flag.

Binary containers: "H5FM" for form fields, "H5ST" for symmetric tensor
fields. Layout (all little-endian):

    H5FM: magic(4) | version u32 | K u32 | rank u32 | reality u8
          | coefficients as f64 pairs (re, im), canonical mode order,
            coefficient index fastest.
    H5ST: magic(4) | version u32 | kind u8 (0 constant, 1 sampled)
          | complex u8 | [grid u32 if sampled]
          | row-major 5x5 blocks as f64 (pairs if complex).

Both containers also have a lossless JSON debug form (see *_json helpers).
"""

from __future__ import annotations

import json
import struct
from itertools import product

import numpy as np

from .errors import MetricError
from .fibers import DIM, MetricTensor, SymTensor, index_basis

CONTAINER_VERSION = 1

__all__ = [
    "Mode",
    "ModeLattice",
    "FormField",
    "MetricField",
    "SymTensorField",
    "write_form_field",
    "read_form_field",
    "write_sym_tensor_field",
    "read_sym_tensor_field",
    "form_field_to_json",
    "form_field_from_json",
]


class Mode:
    """Integer wave vector on a truncated lattice."""

    def __init__(self, k, K: int | None = None):
        k = tuple(int(x) for x in k)
        if len(k) != DIM:
            raise ValueError(f"mode needs {DIM} components")
        if K is not None and any(abs(x) > K for x in k):
            raise ValueError(f"mode {k} outside truncation radius {K}")
        self.k = k

    def __iter__(self):
        return iter(self.k)

    def __repr__(self):
        return f"Mode{self.k}"


class ModeLattice:
    """All integer 5-vectors with sup-norm <= K, lexicographically ordered.

    Closed under negation; index(-k) = count-1-index(k) because negation
    reverses the lexicographic order.
    """

    def __init__(self, K: int):
        if K < 0:
            raise ValueError("truncation radius must be >= 0")
        self.K = K
        side = 2 * K + 1
        self.modes = np.array(
            list(product(range(-K, K + 1), repeat=DIM)), dtype=np.int64
        )
        self.count = side**DIM
        self.zero_index = (self.count - 1) // 2
        self._strides = np.array(
            [side**p for p in range(DIM - 1, -1, -1)], dtype=np.int64
        )

    def index(self, mode) -> int:
        k = np.asarray(tuple(mode), dtype=np.int64)
        if np.any(np.abs(k) > self.K):
            raise ValueError(f"mode {tuple(k)} outside truncation radius {self.K}")
        return int(((k + self.K) * self._strides).sum())

    def negate_index(self, idx: int) -> int:
        return self.count - 1 - idx

    def norms_sq(self) -> np.ndarray:
        return (self.modes**2).sum(axis=1)

    def __len__(self):
        return self.count

    def __eq__(self, other):
        return isinstance(other, ModeLattice) and other.K == self.K

    def __hash__(self):
        return hash(("ModeLattice", self.K))

    def __repr__(self):
        return f"ModeLattice(K={self.K}, count={self.count})"


class FormField:
    """Rank-k form field as per-mode complex coefficient fibers.

    ``coeffs`` has shape (lattice.count, C(5,k)). ``reality=True`` asserts
    coeff(-k) = conj(coeff(k)) (checked to 1e-12 relative on construction).
    """

    def __init__(self, lattice: ModeLattice, k: int, coeffs, reality: bool = False):
        if not 0 <= k <= DIM:
            raise ValueError(f"rank {k} outside 0..{DIM}")
        dim = index_basis(k).dim
        c = np.asarray(coeffs, dtype=np.complex128)
        if c.shape != (lattice.count, dim):
            raise ValueError(
                f"coefficients must have shape {(lattice.count, dim)}, got {c.shape}"
            )
        if reality:
            defect = np.abs(c - np.conj(c[::-1])).max()
            scale = max(np.abs(c).max(), 1e-300)
            if defect > 1e-12 * scale:
                raise ValueError(
                    f"reality symmetry violated: relative defect {defect / scale:.3e}"
                )
        self.lattice = lattice
        self.k = k
        self.coeffs = c
        self.reality = bool(reality)

    @classmethod
    def zero(cls, lattice: ModeLattice, k: int, reality: bool = True) -> "FormField":
        return cls(lattice, k, np.zeros((lattice.count, index_basis(k).dim)), reality)

    @classmethod
    def single_mode(cls, lattice: ModeLattice, k: int, mode, fiber_coeffs) -> "FormField":
        """Field v * e^{i q.x} supported on one mode."""
        c = np.zeros((lattice.count, index_basis(k).dim), dtype=np.complex128)
        c[lattice.index(mode)] = np.asarray(fiber_coeffs)
        return cls(lattice, k, c)

    @classmethod
    def random(cls, lattice: ModeLattice, k: int, rng, reality: bool = True) -> "FormField":
        shape = (lattice.count, index_basis(k).dim)
        c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        if reality:
            c = 0.5 * (c + np.conj(c[::-1]))
        return cls(lattice, k, c, reality)

    def conj_flip(self) -> "FormField":
        """Complex conjugate of the field (conjugate-flip its coefficients)."""
        return FormField(self.lattice, self.k, np.conj(self.coeffs[::-1]), self.reality)

    def values_on_grid(self, G: int) -> np.ndarray:
        """Sample on the uniform (G,)*5 grid x_j = 2 pi j / G; needs
        G >= 2K+1 so distinct modes stay distinct."""
        if G < 2 * self.lattice.K + 1:
            raise ValueError(f"grid {G} below Nyquist 2K+1 = {2 * self.lattice.K + 1}")
        dim = self.coeffs.shape[1]
        spec = np.zeros((G,) * DIM + (dim,), dtype=np.complex128)
        idx = np.mod(self.lattice.modes, G)
        spec[tuple(idx.T)] = self.coeffs
        return np.fft.ifftn(spec, axes=tuple(range(DIM))) * (G**DIM)

    @classmethod
    def from_grid(cls, lattice: ModeLattice, k: int, values: np.ndarray,
                  reality: bool = False) -> "FormField":
        """Truncate grid samples back to the lattice (flat projection)."""
        G = values.shape[0]
        if values.shape[:DIM] != (G,) * DIM:
            raise ValueError("grid values must be (G,)*5 + (dim,)")
        spec = np.fft.fftn(values, axes=tuple(range(DIM))) / (G**DIM)
        idx = np.mod(lattice.modes, G)
        return cls(lattice, k, spec[tuple(idx.T)], reality)

    def __add__(self, other):
        self._check_compat(other)
        return FormField(self.lattice, self.k, self.coeffs + other.coeffs,
                         self.reality and other.reality)

    def __sub__(self, other):
        self._check_compat(other)
        return FormField(self.lattice, self.k, self.coeffs - other.coeffs,
                         self.reality and other.reality)

    def __mul__(self, scalar):
        real_scalar = np.imag(scalar) == 0
        return FormField(self.lattice, self.k, self.coeffs * scalar,
                         self.reality and bool(real_scalar))

    __rmul__ = __mul__

    def _check_compat(self, other):
        if self.lattice != other.lattice:
            raise ValueError("lattice mismatch")
        if self.k != other.k:
            raise ValueError(f"rank mismatch {self.k} != {other.k}")

    def __repr__(self):
        return f"FormField(k={self.k}, K={self.lattice.K}, reality={self.reality})"


def _grid_coordinates(G: int):
    x = 2.0 * np.pi * np.arange(G) / G
    return np.meshgrid(*([x] * DIM), indexing="ij")


def _eval_trig_terms(terms, G: int) -> np.ndarray:
    """Sum of c*cos(k.x) / c*sin(k.x) terms on the (G,)*5 grid."""
    xs = _grid_coordinates(G)
    f = np.zeros((G,) * DIM)
    for term in terms:
        c, kind, kvec = term["c"], term["kind"], term["k"]
        if kind not in ("cos", "sin"):
            raise ValueError(f"unknown term kind {kind!r}")
        if len(kvec) != DIM:
            raise ValueError("term wave vector needs 5 components")
        phase = sum(int(ki) * xi for ki, xi in zip(kvec, xs))
        f += float(c) * (np.cos(phase) if kind == "cos" else np.sin(phase))
    return f


def _validate_spd_grid(grid: np.ndarray) -> None:
    flat = grid.reshape(-1, DIM, DIM)
    scale = max(np.abs(flat).max(), 1.0)
    if np.abs(flat - flat.transpose(0, 2, 1)).max() > 1e-12 * scale:
        raise MetricError("sampled metric is not symmetric at every point")
    w = np.linalg.eigvalsh(flat)
    if np.any(w[:, 0] <= 1e-10 * w[:, -1]) or np.any(w[:, -1] <= 0.0):
        raise MetricError("sampled metric loses positive definiteness on the grid")


class MetricField:
    """Metric over T^5: either Constant(MetricTensor) or Sampled on the
    uniform collocation grid of a given per-axis resolution."""

    def __init__(self, kind: str, tensor: MetricTensor | None = None,
                 grid: np.ndarray | None = None):
        self.kind = kind
        self._cache: dict = {}
        if kind == "constant":
            if tensor is None:
                raise ValueError("constant metric needs a MetricTensor")
            self.tensor = tensor
            self.grid = None
            self.grid_size = None
        elif kind == "sampled":
            g = np.asarray(grid, dtype=np.float64)
            G = g.shape[0]
            if g.shape != (G,) * DIM + (DIM, DIM):
                raise ValueError("sampled metric must be (G,)*5 + (5,5)")
            _validate_spd_grid(g)
            g = 0.5 * (g + np.swapaxes(g, -1, -2))
            self.tensor = None
            self.grid = g
            self.grid_size = G
        else:
            raise ValueError(f"unknown metric kind {kind!r}")

    @classmethod
    def flat(cls) -> "MetricField":
        return cls("constant", tensor=MetricTensor(np.eye(DIM)))

    @classmethod
    def constant(cls, matrix) -> "MetricField":
        return cls("constant", tensor=MetricTensor(matrix))

    @classmethod
    def conformal(cls, terms, grid_size: int = 12) -> "MetricField":
        """e^{2f} * identity with f a trigonometric polynomial given as
        [{"c": float, "kind": "cos"|"sin", "k": [k1..k5]}, ...]."""
        f = _eval_trig_terms(terms, grid_size)
        grid = np.exp(2.0 * f)[..., None, None] * np.eye(DIM)
        return cls("sampled", grid=grid)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def inv_grid(self) -> np.ndarray:
        if "inv" not in self._cache:
            flat = self.grid.reshape(-1, DIM, DIM)
            self._cache["inv"] = np.linalg.inv(flat).reshape(self.grid.shape)
        return self._cache["inv"]

    def sqrt_det_grid(self) -> np.ndarray:
        if "sqrt_det" not in self._cache:
            flat = self.grid.reshape(-1, DIM, DIM)
            self._cache["sqrt_det"] = np.sqrt(np.linalg.det(flat)).reshape(
                self.grid.shape[:DIM]
            )
        return self._cache["sqrt_det"]

    def values(self, G: int) -> np.ndarray:
        """Metric samples on a (G,)*5 grid (broadcast for constant)."""
        if self.is_constant:
            return np.broadcast_to(self.tensor.matrix, (G,) * DIM + (DIM, DIM))
        if G != self.grid_size:
            raise ValueError(f"metric sampled at {self.grid_size}, requested {G}")
        return self.grid

    def perturbed(self, h: "SymTensorField", eps: float) -> "MetricField":
        """g + eps*h, validated SPD (fails fast once it stops being a metric)."""
        if self.is_constant and h.kind == "constant":
            if h.is_complex:
                raise ValueError("metric perturbation direction must be real")
            return MetricField.constant(self.tensor.matrix + eps * h.tensor.matrix)
        G = self.grid_size if not self.is_constant else h.grid_size
        return MetricField("sampled", grid=self.values(G) + eps * h.values(G))

    def __repr__(self):
        if self.is_constant:
            return f"MetricField(constant, det={self.tensor.det:.6g})"
        return f"MetricField(sampled, grid={self.grid_size})"


class SymTensorField:
    """Symmetric (0,2)-tensor field, constant or sampled, real or
    complex-kind."""

    def __init__(self, kind: str, tensor: SymTensor | None = None,
                 grid: np.ndarray | None = None):
        self.kind = kind
        if kind == "constant":
            if tensor is None:
                raise ValueError("constant tensor field needs a SymTensor")
            self.tensor = tensor
            self.grid = None
            self.grid_size = None
        elif kind == "sampled":
            t = np.asarray(grid)
            G = t.shape[0]
            if t.shape != (G,) * DIM + (DIM, DIM):
                raise ValueError("sampled tensor must be (G,)*5 + (5,5)")
            scale = max(np.abs(t).max(), 1.0)
            if np.abs(t - np.swapaxes(t, -1, -2)).max() > 1e-12 * scale:
                raise ValueError("sampled tensor is not symmetric at every point")
            t = 0.5 * (t + np.swapaxes(t, -1, -2))
            if not np.iscomplexobj(t):
                t = t.astype(np.float64)
            self.tensor = None
            self.grid = t
            self.grid_size = G
        else:
            raise ValueError(f"unknown tensor field kind {kind!r}")

    @classmethod
    def constant(cls, matrix) -> "SymTensorField":
        return cls("constant", tensor=SymTensor(matrix))

    @classmethod
    def of_metric(cls, g: MetricField) -> "SymTensorField":
        """The metric itself as a direction (conformal-scaling control)."""
        if g.is_constant:
            return cls.constant(g.tensor.matrix)
        return cls("sampled", grid=g.grid.copy())

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def is_complex(self) -> bool:
        if self.is_constant:
            return self.tensor.kind == "complex"
        return np.iscomplexobj(self.grid)

    def values(self, G: int) -> np.ndarray:
        if self.is_constant:
            return np.broadcast_to(self.tensor.matrix, (G,) * DIM + (DIM, DIM))
        if G != self.grid_size:
            raise ValueError(f"tensor sampled at {self.grid_size}, requested {G}")
        return self.grid

    def __repr__(self):
        where = "constant" if self.is_constant else f"grid={self.grid_size}"
        return f"SymTensorField({where}, complex={self.is_complex})"


# --- binary containers -------------------------------------------------

_FORM_MAGIC = b"H5FM"
_SYMT_MAGIC = b"H5ST"


def write_form_field(path, field: FormField) -> None:
    with open(path, "wb") as fh:
        fh.write(_FORM_MAGIC)
        fh.write(struct.pack("<III", CONTAINER_VERSION, field.lattice.K, field.k))
        fh.write(struct.pack("<B", 1 if field.reality else 0))
        data = np.empty(field.coeffs.shape + (2,), dtype="<f8")
        data[..., 0] = field.coeffs.real
        data[..., 1] = field.coeffs.imag
        fh.write(data.tobytes())


def read_form_field(path) -> FormField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FORM_MAGIC:
            raise ValueError(f"not an H5FM container (magic {magic!r})")
        version, K, rank = struct.unpack("<III", fh.read(12))
        if version != CONTAINER_VERSION:
            raise ValueError(f"unsupported container version {version}")
        (reality,) = struct.unpack("<B", fh.read(1))
        lattice = ModeLattice(K)
        dim = index_basis(rank).dim
        raw = np.frombuffer(fh.read(), dtype="<f8")
        expected = lattice.count * dim * 2
        if raw.size != expected:
            raise ValueError(f"payload has {raw.size} f64s, expected {expected}")
        pairs = raw.reshape(lattice.count, dim, 2)
        coeffs = pairs[..., 0] + 1j * pairs[..., 1]
        return FormField(lattice, rank, coeffs, reality=bool(reality))


def write_sym_tensor_field(path, field: SymTensorField) -> None:
    with open(path, "wb") as fh:
        fh.write(_SYMT_MAGIC)
        fh.write(struct.pack("<I", CONTAINER_VERSION))
        fh.write(struct.pack("<BB", 0 if field.is_constant else 1,
                             1 if field.is_complex else 0))
        if field.is_constant:
            values = field.tensor.matrix
        else:
            fh.write(struct.pack("<I", field.grid_size))
            values = field.grid
        if field.is_complex:
            data = np.empty(values.shape + (2,), dtype="<f8")
            data[..., 0] = values.real
            data[..., 1] = values.imag
        else:
            data = np.ascontiguousarray(values, dtype="<f8")
        fh.write(data.tobytes())


def read_sym_tensor_field(path) -> SymTensorField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _SYMT_MAGIC:
            raise ValueError(f"not an H5ST container (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CONTAINER_VERSION:
            raise ValueError(f"unsupported container version {version}")
        kind, is_complex = struct.unpack("<BB", fh.read(2))
        if kind == 0:
            shape = (DIM, DIM)
        else:
            (G,) = struct.unpack("<I", fh.read(4))
            shape = (G,) * DIM + (DIM, DIM)
        raw = np.frombuffer(fh.read(), dtype="<f8")
        n = int(np.prod(shape))
        if is_complex:
            if raw.size != 2 * n:
                raise ValueError("payload size mismatch")
            pairs = raw.reshape(shape + (2,))
            values = pairs[..., 0] + 1j * pairs[..., 1]
        else:
            if raw.size != n:
                raise ValueError("payload size mismatch")
            values = raw.reshape(shape)
        if kind == 0:
            return SymTensorField.constant(values)
        return SymTensorField("sampled", grid=values)


# --- lossless JSON debug forms ------------------------------------------


def form_field_to_json(field: FormField) -> str:
    payload = {
        "format": "H5FM",
        "version": CONTAINER_VERSION,
        "K": field.lattice.K,
        "rank": field.k,
        "reality": field.reality,
        "coeffs": [
            [[float(z.real), float(z.imag)] for z in row] for row in field.coeffs
        ],
    }
    return json.dumps(payload, sort_keys=True)


def form_field_from_json(text: str) -> FormField:
    payload = json.loads(text)
    if payload.get("format") != "H5FM":
        raise ValueError("not an H5FM debug record")
    lattice = ModeLattice(int(payload["K"]))
    coeffs = np.array(
        [[complex(re, im) for re, im in row] for row in payload["coeffs"]]
    )
    return FormField(lattice, int(payload["rank"]), coeffs,
                     reality=bool(payload["reality"]))
