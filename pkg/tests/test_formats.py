import json

import numpy as np
import pytest

from radpattern import formats
from radpattern.background import BackgroundMedium
from radpattern.homogenized import CapacitanceDensityField, gaussian_density
from radpattern.inverse import AmplitudeTable
from radpattern.manybody import ParticleSet
from radpattern.planner import plan_from_density
from radpattern.quadrature import build_sphere_quadrature


def test_particles_roundtrip(tmp_path, rng):
    ps = ParticleSet(rng.normal(size=(7, 3)), np.full(7, 0.01), np.full(7, 0.04 * np.pi))
    p = tmp_path / "p.json"
    formats.write_particles(p, ps)
    back = formats.read_particles(p)
    np.testing.assert_array_equal(back.positions, ps.positions)
    np.testing.assert_array_equal(back.radii, ps.radii)
    np.testing.assert_array_equal(back.capacitances, ps.capacitances)
    header = json.loads(p.read_text())
    assert header["format_version"] == 1 and header["kind"] == "particles"


def test_empty_particles_roundtrip(tmp_path):
    p = tmp_path / "p.json"
    formats.write_particles(p, ParticleSet.empty())
    assert len(formats.read_particles(p)) == 0


def test_malformed_particle_reports_line(tmp_path):
    p = tmp_path / "p.json"
    formats.write_particles(p, ParticleSet(np.arange(9.0).reshape(3, 3), np.full(3, 0.01), np.full(3, 0.1)))
    lines = p.read_text().splitlines()
    bad = next(i for i, line in enumerate(lines) if line.strip().startswith("[3.0, 4.0, 5.0"))
    lines[bad] = "  [3.0, 4.0, 5.0, -0.01, 0.1],"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(formats.FormatError) as exc:
        formats.read_particles(p)
    assert exc.value.line == bad + 1
    assert f":{bad + 1}:" in str(exc.value) or f"line {bad + 1}" in str(exc.value)


def test_syntax_error_reports_line(tmp_path):
    p = tmp_path / "p.json"
    p.write_text('{\n "format_version": 1,\n "kind": "particles",\n "particles": [\n  [0, 0, 0, 0.1 0.1]\n ]\n}\n')
    with pytest.raises(formats.FormatError) as exc:
        formats.read_particles(p)
    assert exc.value.line == 5


def test_wrong_version_and_kind(tmp_path):
    p = tmp_path / "p.json"
    p.write_text('{"format_version": 2, "kind": "particles", "particles": []}')
    with pytest.raises(formats.FormatError):
        formats.read_particles(p)
    p.write_text('{"format_version": 1, "kind": "table", "particles": []}')
    with pytest.raises(formats.FormatError):
        formats.read_particles(p)


def test_table_roundtrip(tmp_path, rng):
    oq, iq = build_sphere_quadrature(4), build_sphere_quadrature(2)
    vals = rng.normal(size=(len(oq), len(iq))) + 1j * rng.normal(size=(len(oq), len(iq)))
    t = AmplitudeTable(1.5, oq, iq, vals)
    p = tmp_path / "t.json"
    formats.write_table(p, t)
    back = formats.read_table(p)
    assert back.k == 1.5
    np.testing.assert_array_equal(back.values, vals)
    np.testing.assert_array_equal(back.out_quad.nodes, oq.nodes)
    np.testing.assert_array_equal(back.in_quad.weights, iq.weights)
    raw = (tmp_path / "t.json.values.bin").read_bytes()
    np.testing.assert_array_equal(np.frombuffer(raw, "<c16"), vals.ravel())


def test_density_roundtrip(tmp_path):
    d = CapacitanceDensityField.from_function(gaussian_density(0.5, 0.3), 1.0, 10)
    p = tmp_path / "d.json"
    formats.write_density(p, d, BackgroundMedium.vacuum(1.0, 1.0))
    back = formats.read_density(p)
    np.testing.assert_array_equal(back.values, d.values)
    np.testing.assert_array_equal(back.grid.points, d.grid.points)
    np.testing.assert_allclose(back.total, d.total, rtol=1e-15)


def test_plan_roundtrip(tmp_path):
    d = CapacitanceDensityField.from_function(gaussian_density(1.0, 0.3), 1.0, 10)
    plan = plan_from_density(d, 0.005, seed=3)
    p = tmp_path / "plan.json"
    formats.write_plan(p, plan, "target.json")
    header, ps = formats.read_plan(p)
    assert header["seed"] == 3 and header["a"] == 0.005 and header["target"] == "target.json"
    np.testing.assert_array_equal(ps.positions, plan.particles.positions)
    assert len(formats.read_particles(p)) == plan.count


def test_atomic_write_leaves_no_temp(tmp_path):
    p = tmp_path / "x.txt"
    formats.atomic_write_text(p, "a")
    formats.atomic_write_text(p, "b")
    assert p.read_text() == "b"
    assert [f.name for f in tmp_path.iterdir()] == ["x.txt"]


def test_write_columns(tmp_path):
    p = tmp_path / "c.dat"
    formats.write_columns(p, {"a": [1.0, 2.0], "b": [3.0, 4.0]}, comment="demo")
    data = np.loadtxt(p)
    np.testing.assert_array_equal(data, [[1, 3], [2, 4]])
