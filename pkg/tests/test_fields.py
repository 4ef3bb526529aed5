"""Mode lattices, form/metric/tensor fields, grid transforms and the binary
containers."""

import numpy as np
import pytest

from hodge5.errors import MetricError
from hodge5.fields import (
    FormField,
    MetricField,
    Mode,
    ModeLattice,
    SymTensorField,
    form_field_from_json,
    form_field_to_json,
    read_form_field,
    read_sym_tensor_field,
    write_form_field,
    write_sym_tensor_field,
)


def test_lattice_invariants():
    lat = ModeLattice(1)
    assert lat.count == 3**5
    assert np.all(lat.modes[::-1] == -lat.modes)          # closed under negation
    assert np.all(lat.modes[lat.zero_index] == 0)
    for idx in [0, 7, 100, lat.count - 1]:
        k = lat.modes[idx]
        assert lat.index(k) == idx
        assert lat.negate_index(idx) == lat.index(-k)


def test_lattice_rejects_out_of_range():
    lat = ModeLattice(1)
    with pytest.raises(ValueError):
        lat.index((2, 0, 0, 0, 0))


def test_mode_validation():
    m = Mode((1, 0, -1, 0, 1), K=1)
    assert tuple(m) == (1, 0, -1, 0, 1)
    with pytest.raises(ValueError):
        Mode((2, 0, 0, 0, 0), K=1)
    with pytest.raises(ValueError):
        Mode((1, 2, 3))


def test_reality_flag_validated():
    lat = ModeLattice(1)
    rng = np.random.default_rng(0)
    c = rng.standard_normal((lat.count, 10)) + 1j * rng.standard_normal(
        (lat.count, 10))
    with pytest.raises(ValueError):
        FormField(lat, 2, c, reality=True)
    sym = 0.5 * (c + np.conj(c[::-1]))
    f = FormField(lat, 2, sym, reality=True)
    assert f.reality


def test_grid_roundtrip_lossless_at_nyquist():
    lat = ModeLattice(2)
    rng = np.random.default_rng(1)
    f = FormField.random(lat, 2, rng)
    G = 2 * lat.K + 1
    back = FormField.from_grid(lat, 2, f.values_on_grid(G), reality=True)
    np.testing.assert_allclose(back.coeffs, f.coeffs, atol=1e-12)


def test_grid_values_match_direct_sum():
    lat = ModeLattice(1)
    rng = np.random.default_rng(2)
    f = FormField.random(lat, 1, rng, reality=False)
    G = 4
    vals = f.values_on_grid(G)
    x = 2 * np.pi * np.arange(G) / G
    point = (1, 3, 0, 2, 1)
    xs = np.array([x[p] for p in point])
    direct = sum(c * np.exp(1j * (q @ xs)) for q, c in zip(lat.modes, f.coeffs))
    np.testing.assert_allclose(vals[point], direct, atol=1e-12)


def test_grid_below_nyquist_rejected():
    lat = ModeLattice(2)
    f = FormField.zero(lat, 2)
    with pytest.raises(ValueError):
        f.values_on_grid(4)


def test_field_arithmetic_reality_tracking():
    lat = ModeLattice(1)
    rng = np.random.default_rng(3)
    a = FormField.random(lat, 2, rng)
    b = FormField.random(lat, 2, rng)
    assert (a + b).reality and (a - b).reality and (2.0 * a).reality
    assert not (1j * a).reality
    c = FormField.random(lat, 2, rng, reality=False)
    assert not (a + c).reality


def test_metric_field_sampled_validation():
    G = 3
    grid = np.broadcast_to(np.eye(5), (G,) * 5 + (5, 5)).copy()
    m = MetricField("sampled", grid=grid)
    assert m.grid_size == G
    grid2 = grid.copy()
    grid2[0, 0, 0, 0, 0] = -np.eye(5)
    with pytest.raises(MetricError):
        MetricField("sampled", grid=grid2)


def test_conformal_metric_values():
    terms = [{"c": 0.3, "kind": "cos", "k": [1, 0, 0, 0, 0]}]
    g = MetricField.conformal(terms, grid_size=6)
    x = 2 * np.pi * np.arange(6) / 6
    expected = np.exp(2 * 0.3 * np.cos(x[2]))
    np.testing.assert_allclose(g.grid[2, 0, 0, 0, 0], expected * np.eye(5),
                               atol=1e-14)


def test_metric_perturbed_spd_check():
    g = MetricField.flat()
    h = SymTensorField.constant(np.diag([1.0, 0, 0, 0, 0]))
    g2 = g.perturbed(h, 0.5)
    assert g2.tensor.matrix[0, 0] == pytest.approx(1.5)
    with pytest.raises(MetricError):
        g.perturbed(h, -1.0)   # metric loses positivity


def test_form_field_container_roundtrip(tmp_path):
    lat = ModeLattice(1)
    rng = np.random.default_rng(4)
    f = FormField.random(lat, 3, rng)
    path = tmp_path / "field.h5fm"
    write_form_field(path, f)
    with open(path, "rb") as fh:
        assert fh.read(4) == b"H5FM"
    back = read_form_field(path)
    assert back.k == 3 and back.lattice.K == 1 and back.reality
    np.testing.assert_array_equal(back.coeffs, f.coeffs)


def test_form_field_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        read_form_field(path)


def test_form_field_json_debug_roundtrip():
    lat = ModeLattice(1)
    rng = np.random.default_rng(5)
    f = FormField.random(lat, 2, rng, reality=False)
    back = form_field_from_json(form_field_to_json(f))
    np.testing.assert_array_equal(back.coeffs, f.coeffs)
    assert back.reality == f.reality


def test_sym_tensor_container_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    a = rng.standard_normal((5, 5))
    const = SymTensorField.constant(a + a.T)
    p1 = tmp_path / "const.h5st"
    write_sym_tensor_field(p1, const)
    with open(p1, "rb") as fh:
        assert fh.read(4) == b"H5ST"
    back = read_sym_tensor_field(p1)
    assert back.is_constant
    np.testing.assert_array_equal(back.tensor.matrix, const.tensor.matrix)

    G = 3
    grid = rng.standard_normal((G,) * 5 + (5, 5))
    grid = grid + np.swapaxes(grid, -1, -2)
    sampled = SymTensorField("sampled", grid=grid)
    p2 = tmp_path / "sampled.h5st"
    write_sym_tensor_field(p2, sampled)
    back2 = read_sym_tensor_field(p2)
    assert back2.grid_size == G
    np.testing.assert_array_equal(back2.grid, sampled.grid)


def test_sym_tensor_complex_container_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    field = SymTensorField.constant(a + a.T)
    assert field.is_complex
    path = tmp_path / "cplx.h5st"
    write_sym_tensor_field(path, field)
    back = read_sym_tensor_field(path)
    assert back.is_complex
    np.testing.assert_array_equal(back.tensor.matrix, field.tensor.matrix)


def test_single_mode_constructor():
    lat = ModeLattice(1)
    f = FormField.single_mode(lat, 2, (1, 0, 0, 0, 0), np.arange(10.0))
    assert np.abs(f.coeffs[lat.index((1, 0, 0, 0, 0))] - np.arange(10)).max() == 0
    mask = np.ones(lat.count, bool)
    mask[lat.index((1, 0, 0, 0, 0))] = False
    assert np.abs(f.coeffs[mask]).max() == 0
