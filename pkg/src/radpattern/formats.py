"""On-disk formats for particle sets, density fields, amplitude tables and plans.

Every file is a JSON header carrying ``"format_version": 1`` and a ``"kind"``
tag.  Bulk arrays live in little-endian IEEE-754 sidecar files named in the
header (``{"file": ..., "dtype": "<f8" | "<c16", "shape": [...]}``), with
paths relative to the header.  Particle records are kept inline, one per
line, so they stay diffable and parse errors can point at a line.

Particle file::

    {"format_version": 1, "kind": "particles",
     "fields": ["x", "y", "z", "radius", "capacitance"],
     "particles": [
      [0.0, 0.0, 0.0, 0.01, 0.12566],
      ...
     ]}

Density file: header keys ``origin`` (first cell center), ``spacing``,
``dims``, ``radius`` (grid ball radius), ``b0``, ``k``, ``k0`` and a
``values`` sidecar holding the full ``dims`` box in C order (zeros outside
the ball).

Amplitude table: header keys ``k``, ``out_degree``, ``in_degree``,
``n_out``, ``n_in`` and sidecars ``out_nodes``, ``out_weights``,
``in_nodes``, ``in_weights``, ``values`` (row-major, outgoing index first).

Plan file: a particle file with ``kind = "plan"`` and extra keys ``a``,
``capacitance``, ``seed``, ``target``.

All writes are atomic: data goes to a temporary file in the destination
directory which is then renamed over the target.
"""

from __future__ import annotations

import json
import re
import os
import tempfile
from pathlib import Path

import numpy as np

from .homogenized import CapacitanceDensityField
from .inverse import AmplitudeTable
from .manybody import ParticleSet
from .quadrature import SphereQuadrature, build_ball_grid

FORMAT_VERSION = 1
PARTICLE_FIELDS = ["x", "y", "z", "radius", "capacitance"]


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, path, message, line=None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


# ---------------------------------------------------------------------------
# atomic primitives
# ---------------------------------------------------------------------------


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _dump_header(header: dict) -> str:
    return json.dumps(header, indent=1, sort_keys=False) + "\n"


def _write_array(header_path: Path, name: str, arr) -> dict:
    arr = np.asarray(arr)
    dtype = "<c16" if np.iscomplexobj(arr) else "<f8"
    fname = f"{header_path.name}.{name}.bin"
    atomic_write_bytes(header_path.parent / fname, np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return {"file": fname, "dtype": dtype, "shape": list(arr.shape)}


def _read_array(header_path: Path, ref) -> np.ndarray:
    try:
        fname, dtype, shape = ref["file"], ref["dtype"], tuple(ref["shape"])
    except (TypeError, KeyError) as exc:
        raise FormatError(header_path, f"bad array reference {ref!r}") from exc
    if dtype not in ("<f8", "<c16"):
        raise FormatError(header_path, f"unsupported dtype {dtype!r}")
    p = header_path.parent / fname
    if not p.exists():
        raise FormatError(header_path, f"missing sidecar {fname}")
    arr = np.fromfile(p, dtype=dtype)
    if arr.size != int(np.prod(shape)):
        raise FormatError(p, f"expected {int(np.prod(shape))} values, found {arr.size}")
    return arr.reshape(shape).astype(np.complex128 if dtype == "<c16" else np.float64)


def _load_json(path, expected_kind=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(path, f"cannot read file ({exc.strerror})") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, exc.msg, exc.lineno) from exc
    if not isinstance(obj, dict):
        raise FormatError(path, "top level must be an object", 1)
    if expected_kind is not None:
        if obj.get("format_version") != FORMAT_VERSION:
            raise FormatError(path, f"unsupported format_version {obj.get('format_version')!r}")
        kinds = (expected_kind,) if isinstance(expected_kind, str) else expected_kind
        if obj.get("kind") not in kinds:
            raise FormatError(path, f"expected kind {'/'.join(kinds)}, found {obj.get('kind')!r}")
    return obj, text


def load_json(path):
    """Parse a JSON file, raising FormatError with a line number on syntax errors."""
    return _load_json(path)[0]


def _array_element_lines(text, key):
    """1-based line of each element of the top-level array ``key``."""
    dec = json.JSONDecoder()
    m = re.search(rf'"{re.escape(key)}"\s*:\s*\[', text)
    if m is None:
        return []
    pos = m.end()
    lines = []
    n = len(text)
    while pos < n:
        while pos < n and text[pos] in " \t\r\n,":
            pos += 1
        if pos >= n or text[pos] == "]":
            break
        lines.append(text.count("\n", 0, pos) + 1)
        try:
            _, pos = dec.raw_decode(text, pos)
        except json.JSONDecodeError:
            break
    return lines


# ---------------------------------------------------------------------------
# particles and plans
# ---------------------------------------------------------------------------


def _particle_lines(particles: ParticleSet):
    rows = np.column_stack([particles.positions, particles.radii, particles.capacitances])
    return ",\n".join("  " + json.dumps([float(v) for v in row]) for row in rows)


def _particle_text(header: dict, particles: ParticleSet) -> str:
    head = json.dumps(header, indent=1)[:-2]  # drop closing "\n}"
    body = _particle_lines(particles)
    return head + ',\n "particles": [\n' + body + ("\n" if body else "") + " ]\n}\n"


def write_particles(path, particles: ParticleSet):
    header = {"format_version": FORMAT_VERSION, "kind": "particles", "fields": PARTICLE_FIELDS}
    atomic_write_text(path, _particle_text(header, particles))


def _parse_particles(path, obj, text) -> ParticleSet:
    recs = obj.get("particles")
    if not isinstance(recs, list):
        raise FormatError(path, 'missing "particles" array')
    lines = _array_element_lines(text, "particles")
    rows = []
    for i, rec in enumerate(recs):
        line = lines[i] if i < len(lines) else None
        if not (isinstance(rec, list) and len(rec) == 5):
            raise FormatError(path, f"particle record {i} must be [x, y, z, radius, capacitance]", line)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in rec):
            raise FormatError(path, f"particle record {i} has non-numeric entries", line)
        if not np.all(np.isfinite(rec)):
            raise FormatError(path, f"particle record {i} has non-finite entries", line)
        if rec[3] <= 0 or rec[4] <= 0:
            raise FormatError(path, f"particle record {i} needs positive radius and capacitance", line)
        rows.append(rec)
    if not rows:
        return ParticleSet.empty()
    arr = np.asarray(rows, dtype=float)
    return ParticleSet(arr[:, :3], arr[:, 3], arr[:, 4])


def read_particles(path) -> ParticleSet:
    obj, text = _load_json(path, ("particles", "plan"))
    return _parse_particles(path, obj, text)


def write_plan(path, plan, target=None):
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "plan",
        "a": plan.radius,
        "capacitance": plan.capacitance,
        "seed": plan.seed,
        "target": None if target is None else str(target),
        "expected_count": plan.expected_count,
        "hard_core_factor": plan.hard_core_factor,
        "fields": PARTICLE_FIELDS,
    }
    atomic_write_text(path, _particle_text(header, plan.particles))


def read_plan(path):
    """Returns (header dict, ParticleSet)."""
    obj, text = _load_json(path, "plan")
    ps = _parse_particles(path, obj, text)
    return {k: v for k, v in obj.items() if k != "particles"}, ps


# ---------------------------------------------------------------------------
# density fields
# ---------------------------------------------------------------------------


def write_density(path, density: CapacitanceDensityField, medium=None, extra=None):
    path = Path(path)
    grid = density.grid
    box = np.zeros(grid.shape)
    box[tuple(grid.index.T)] = density.values
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "density",
        "origin": [float(v) for v in grid.origin],
        "spacing": float(grid.h),
        "dims": list(grid.shape),
        "radius": density.radius,
        "b0": None if medium is None else float(medium.b0),
        "k": None if medium is None else float(medium.k),
        "k0": None if medium is None else float(medium.k0),
        "values": _write_array(path, "values", box),
    }
    if extra:
        header.update(extra)
    atomic_write_text(path, _dump_header(header))


def read_density(path) -> CapacitanceDensityField:
    path = Path(path)
    obj, _ = _load_json(path, "density")
    try:
        dims = [int(d) for d in obj["dims"]]
        radius = float(obj["radius"])
        spacing = float(obj["spacing"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"bad density header ({exc})") from exc
    if len(set(dims)) != 1:
        raise FormatError(path, "density grids must be cubic")
    grid = build_ball_grid(radius, dims[0])
    if abs(grid.h - spacing) > 1e-9 * spacing:
        raise FormatError(path, "spacing inconsistent with radius and dims")
    box = _read_array(path, obj["values"])
    if box.shape != tuple(dims):
        raise FormatError(path, f"values shape {box.shape} != dims {dims}")
    vals = box[tuple(grid.index.T)]
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise FormatError(path, "density values must be finite and nonnegative")
    return CapacitanceDensityField(grid, vals)


# ---------------------------------------------------------------------------
# amplitude tables
# ---------------------------------------------------------------------------


def write_table(path, table: AmplitudeTable, extra=None):
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "amplitude_table",
        "k": float(table.k),
        "out_degree": int(table.out_quad.degree),
        "in_degree": int(table.in_quad.degree),
        "n_out": len(table.out_quad),
        "n_in": len(table.in_quad),
        "out_nodes": _write_array(path, "out_nodes", table.out_quad.nodes),
        "out_weights": _write_array(path, "out_weights", table.out_quad.weights),
        "in_nodes": _write_array(path, "in_nodes", table.in_quad.nodes),
        "in_weights": _write_array(path, "in_weights", table.in_quad.weights),
        "values": _write_array(path, "values", table.values),
    }
    if extra:
        header.update(extra)
    atomic_write_text(path, _dump_header(header))


def read_table(path) -> AmplitudeTable:
    path = Path(path)
    obj, _ = _load_json(path, "amplitude_table")
    try:
        k = float(obj["k"])
        oq = SphereQuadrature(_read_array(path, obj["out_nodes"]), _read_array(path, obj["out_weights"]), int(obj["out_degree"]))
        iq = SphereQuadrature(_read_array(path, obj["in_nodes"]), _read_array(path, obj["in_weights"]), int(obj["in_degree"]))
        return AmplitudeTable(k, oq, iq, _read_array(path, obj["values"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(path, f"bad amplitude table ({exc})") from exc


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def write_columns(path, columns: dict, comment=None):
    """Whitespace-separated columnar text with a ``#`` header line."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float).ravel() for n in names]) if names else np.zeros((0, 0))
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append("# " + " ".join(names))
    lines.extend(" ".join(f"{v:.12e}" for v in row) for row in data)
    atomic_write_text(path, "\n".join(lines) + "\n")
