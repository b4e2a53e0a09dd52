"""Command-line front end.

Usage::

    radpattern COMMAND --config run.json [--seed N] [--force] [--threads N] [--out DIR]

Commands: ``forward-particles``, ``forward-medium``, ``invert``, ``plan``,
``roundtrip``.  Exit codes: 0 ok, 1 parse/config error, 2 regime violation,
3 solver failure, 4 inversion acceptance failure, 5 packing infeasible.

Configuration (JSON; every section optional, relative paths resolve against
the config file's directory)::

    {
      "medium":     {"k": 1.0, "k0": 1.0, "b0": 1.0, "profile": "vacuum",
                     "k0_profile": [[r, k0], ...], "n_layers": 32},
      "directions": {"out_degree": 8, "in_degree": 4},
      "grid":       {"n": 20},
      "shell":      {"b1": null, "b2": null},
      "inversion":  {"ell_max": null, "r_param": 8.0, "r_schedule": [3, 6, 12],
                     "xi_max": 1.9, "n_xi": 9, "regularization": 1e-10,
                     "grid_n": 16, "max_failure_rate": 0.5},
      "planner":    {"a": null, "count": null, "hard_core_factor": 10.0, "seed": 0},
      "probe":      {"start": [-2, 0, 0], "end": [2, 0, 0], "n": 101},
      "target":     {"gaussian": {"eps": 1.0, "width": 0.3, "center": [0, 0, 0]}},
      "paths":      {"particles": ..., "density": ..., "table": ...,
                     "target_table": ...}
    }

File formats are documented in :mod:`radpattern.formats`.  Plot data is
written as whitespace-separated columns with a ``#`` header line.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .background import BackgroundMedium, MediumError
from .homogenized import (
    CapacitanceDensityField,
    DivergenceError,
    EffectiveMediumSolver,
    gaussian_density,
)
from .inverse import AmplitudeTable, InversionError, InversionParams, make_theta_pair, reconstruct_density
from .manybody import (
    ChargeSolution,
    ChargeSolver,
    ConditioningError,
    ParticleSet,
    amplitude_table_discrete,
    effective_field,
    regime_check,
)
from .planner import PlanInfeasible, plan_from_density, verify_plan
from .quadrature import QuadratureError, build_sphere_quadrature

logger = logging.getLogger("radpattern")

EXIT_OK, EXIT_PARSE, EXIT_REGIME, EXIT_SOLVER, EXIT_INVERSION, EXIT_PACKING = range(6)
COMMANDS = ("forward-particles", "forward-medium", "invert", "plan", "roundtrip")


class CommandError(Exception):
    """Carries an exit code, a message and the pipeline stage it came from."""

    def __init__(self, code, message, stage=None):
        super().__init__(message)
        self.code = code
        self.stage = stage


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SCHEMA = {
    "medium": {"k": float, "k0": float, "b0": float, "profile": str, "k0_profile": list, "n_layers": int},
    "directions": {"out_degree": int, "in_degree": int},
    "grid": {"n": int},
    "shell": {"b1": float, "b2": float},
    "inversion": {
        "ell_max": int,
        "r_param": float,
        "r_schedule": list,
        "xi_max": float,
        "n_xi": int,
        "regularization": float,
        "grid_n": int,
        "max_failure_rate": float,
        "shell_nr": int,
        "shell_degree": int,
    },
    "planner": {"a": float, "count": int, "hard_core_factor": float, "seed": int},
    "probe": {"start": list, "end": list, "n": int},
    "target": {"gaussian": dict},
    "paths": {"particles": str, "density": str, "table": str, "target_table": str, "target_density": str},
}

_DEFAULTS = {
    "medium": {"k": 1.0, "k0": None, "b0": 1.0, "profile": "vacuum", "k0_profile": None, "n_layers": 32},
    "directions": {"out_degree": 8, "in_degree": 4},
    "grid": {"n": 20},
    "shell": {"b1": None, "b2": None},
    "inversion": {
        "ell_max": None,
        "r_param": 8.0,
        "r_schedule": [3.0, 6.0, 12.0],
        "xi_max": 1.9,
        "n_xi": 9,
        "regularization": 1e-10,
        "grid_n": 16,
        "max_failure_rate": 0.5,
        "shell_nr": 6,
        "shell_degree": None,
    },
    "planner": {"a": None, "count": None, "hard_core_factor": 10.0, "seed": 0},
    "probe": None,
    "target": None,
    "paths": {},
}


@dataclass
class RunConfig:
    command: str
    medium: dict
    directions: dict
    grid: dict
    shell: dict
    inversion: dict
    planner: dict
    probe: dict | None
    target: dict | None
    paths: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, key, required=True):
        p = self.paths.get(key)
        if p is None:
            if required:
                raise CommandError(EXIT_PARSE, f'config is missing paths.{key}')
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def build_medium(self) -> BackgroundMedium:
        m = self.medium
        k0 = m["k0"] if m["k0"] is not None else m["k"]
        prof = None
        if m["profile"] == "radial":
            table = np.asarray(m["k0_profile"] or [], dtype=float)
            if table.ndim != 2 or table.shape[1] != 2 or len(table) < 2:
                raise CommandError(EXIT_PARSE, "medium.k0_profile must be a list of [r, k0] pairs")

            def prof(r, _t=table):
                return float(np.interp(r, _t[:, 0], _t[:, 1]))

        try:
            return BackgroundMedium(m["k"], k0, m["b0"], m["profile"], prof, m["n_layers"])
        except MediumError as exc:
            raise CommandError(EXIT_PARSE, f"invalid medium: {exc}") from exc

    def quadratures(self):
        d = self.directions
        return build_sphere_quadrature(d["out_degree"]), build_sphere_quadrature(d["in_degree"])

    def inversion_params(self, r_param=None) -> InversionParams:
        v = self.inversion
        return InversionParams(
            b0=self.medium["b0"],
            b1=self.shell["b1"],
            b2=self.shell["b2"],
            r_param=v["r_param"] if r_param is None else r_param,
            xi_max=v["xi_max"],
            n_xi=v["n_xi"],
            ell_max=v["ell_max"],
            regularization=v["regularization"],
            shell_nr=v["shell_nr"],
            shell_degree=v["shell_degree"],
            grid_n=v["grid_n"],
        )


def _check_type(section, key, value, typ):
    if value is None:
        return None
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ in (str, list, dict) and isinstance(value, typ):
        return value
    raise CommandError(EXIT_PARSE, f"config {section}.{key}: expected {typ.__name__}, got {type(value).__name__}")


def parse_config(obj: dict, command: str, base_dir=None) -> RunConfig:
    """Validate a config mapping against the schema and fill defaults."""
    if not isinstance(obj, dict):
        raise CommandError(EXIT_PARSE, "config must be a JSON object")
    unknown = set(obj) - set(_SCHEMA) - {"format_version", "command"}
    if unknown:
        raise CommandError(EXIT_PARSE, f"unknown config sections: {sorted(unknown)}")
    out = {}
    for section, schema in _SCHEMA.items():
        given = obj.get(section)
        default = _DEFAULTS[section]
        if given is None:
            out[section] = None if default is None else dict(default)
            continue
        if not isinstance(given, dict):
            raise CommandError(EXIT_PARSE, f"config section {section} must be an object")
        bad = set(given) - set(schema)
        if bad:
            raise CommandError(EXIT_PARSE, f"unknown keys in {section}: {sorted(bad)}")
        merged = dict(default or {})
        for key, value in given.items():
            merged[key] = _check_type(section, key, value, schema[key])
        out[section] = merged
    cfg = RunConfig(command=command, base_dir=Path(base_dir or Path.cwd()), **out)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    m = cfg.medium
    if not (m["k"] and m["k"] > 0 and m["b0"] and m["b0"] > 0):
        raise CommandError(EXIT_PARSE, "medium.k and medium.b0 must be positive")
    for key in ("out_degree", "in_degree"):
        if cfg.directions[key] < 1:
            raise CommandError(EXIT_PARSE, f"directions.{key} must be >= 1")
    if cfg.grid["n"] < 2:
        raise CommandError(EXIT_PARSE, "grid.n must be >= 2")
    inv = cfg.inversion
    if inv["r_param"] <= 0 or inv["xi_max"] <= 0 or inv["n_xi"] < 2:
        raise CommandError(EXIT_PARSE, "inversion.r_param, xi_max must be positive and n_xi >= 2")
    if not all(isinstance(r, (int, float)) and r > 0 for r in inv["r_schedule"]):
        raise CommandError(EXIT_PARSE, "inversion.r_schedule must hold positive numbers")
    pl = cfg.planner
    if pl["a"] is not None and pl["a"] <= 0:
        raise CommandError(EXIT_PARSE, "planner.a must be positive")
    if pl["count"] is not None and pl["count"] < 0:
        raise CommandError(EXIT_PARSE, "planner.count must be >= 0")
    if cfg.probe is not None:
        if len(cfg.probe.get("start", [])) != 3 or len(cfg.probe.get("end", [])) != 3:
            raise CommandError(EXIT_PARSE, "probe.start and probe.end must be 3-vectors")
    if cfg.target is not None:
        g = cfg.target.get("gaussian")
        if g is None or not {"eps", "width"} <= set(g):
            raise CommandError(EXIT_PARSE, "target.gaussian needs eps and width")
    cfg.build_medium()


def load_config(path, command) -> RunConfig:
    path = Path(path)
    try:
        obj = formats.load_json(path)
    except formats.FormatError as exc:
        raise CommandError(EXIT_PARSE, str(exc)) from exc
    return parse_config(obj, command, path.parent)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _read(reader, path):
    try:
        return reader(path)
    except formats.FormatError as exc:
        raise CommandError(EXIT_PARSE, str(exc)) from exc


def _target_density(cfg: RunConfig) -> CapacitanceDensityField:
    p = cfg.path("density", required=False)
    if p is not None:
        return _read(formats.read_density, p)
    if cfg.target is None:
        raise CommandError(EXIT_PARSE, "need paths.density or target.gaussian")
    g = cfg.target["gaussian"]
    func = gaussian_density(float(g["eps"]), float(g["width"]), g.get("center", (0.0, 0.0, 0.0)))
    return CapacitanceDensityField.from_function(func, cfg.medium["b0"], cfg.grid["n"])


def _table_from(values, cfg, k):
    oq, iq = cfg.quadratures()
    return AmplitudeTable(k, oq, iq, values)


def _homogenized_table(cfg, medium, density) -> AmplitudeTable:
    oq, iq = cfg.quadratures()
    try:
        solver = EffectiveMediumSolver(medium, density)
    except ValueError as exc:
        raise CommandError(EXIT_PARSE, str(exc)) from exc
    try:
        vals = solver.amplitude_table(oq.nodes, iq.nodes)
    except DivergenceError as exc:
        raise CommandError(EXIT_SOLVER, f"homogenized solve diverged: {exc}") from exc
    return AmplitudeTable(medium.k, oq, iq, vals)


def _particle_table(cfg, medium, particles, force) -> AmplitudeTable:
    rep = regime_check(medium, particles)
    if not rep.valid:
        msg = f"small-particle regime violated: k0*a = {rep.k0a:.3g} (max 0.1), d/a = {rep.d_over_a:.3g} (min 10)"
        if not force:
            raise CommandError(EXIT_REGIME, msg)
        logger.warning("%s (continuing: --force)", msg)
    oq, iq = cfg.quadratures()
    try:
        vals = amplitude_table_discrete(medium, particles, oq.nodes, iq.nodes, check_regime=False)
    except (ConditioningError, RuntimeError) as exc:
        raise CommandError(EXIT_SOLVER, f"charge solve failed: {exc}") from exc
    return AmplitudeTable(medium.k, oq, iq, vals)


def _relative_l2(a, b):
    nb = np.linalg.norm(b)
    d = np.linalg.norm(a - b)
    return float(d / nb) if nb > 0 else float(d)


def _density_on_grid(density, grid):
    """Nearest-cell resampling of a density onto another ball grid."""
    g = density.grid
    idx = np.rint((grid.points - g.origin) / g.h).astype(int)
    idx = np.clip(idx, 0, g.shape[0] - 1)
    box = np.zeros(g.shape)
    box[tuple(g.index.T)] = density.values
    return box[tuple(idx.T)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_forward_particles(cfg: RunConfig, out: Path, force=False):
    medium = cfg.build_medium()
    particles = _read(formats.read_particles, cfg.path("particles"))
    table = _particle_table(cfg, medium, particles, force)
    formats.write_table(out / "table.json", table)
    if cfg.probe is not None and len(particles):
        p = cfg.probe
        s = np.linspace(0.0, 1.0, int(p.get("n", 101)))
        a0, a1 = np.asarray(p["start"], float), np.asarray(p["end"], float)
        x = a0 + s[:, None] * (a1 - a0)
        alpha = cfg.quadratures()[1].nodes[0]
        Q = ChargeSolver(medium, particles).solve(alpha)
        u = effective_field(medium, particles, ChargeSolution(Q, alpha, 0.0), x)
        formats.write_columns(
            out / "probe.dat",
            {"s": s, "x": x[:, 0], "y": x[:, 1], "z": x[:, 2], "re_u": u.real, "im_u": u.imag},
            comment=f"effective field along probe line, alpha = {alpha.tolist()}",
        )
    return {"table": str(out / "table.json"), "particles": len(particles)}


def cmd_forward_medium(cfg: RunConfig, out: Path, force=False):
    medium = cfg.build_medium()
    density = _target_density(cfg)
    table = _homogenized_table(cfg, medium, density)
    formats.write_table(out / "table.json", table)
    return {"table": str(out / "table.json"), "total_capacitance": density.total}


def _write_inversion_diagnostics(path, rec):
    rows = rec.records
    formats.write_columns(
        path,
        {
            "xi_x": [r.xi[0] for r in rows],
            "xi_y": [r.xi[1] for r in rows],
            "xi_z": [r.xi[2] for r in rows],
            "theta_norm": [r.theta_norm for r in rows],
            "F": [r.F for r in rows],
            "re_C": [r.estimate.real for r in rows],
            "im_C": [r.estimate.imag for r in rows],
            "accepted": [float(r.accepted) for r in rows],
            "failed": [float(r.failed) for r in rows],
        },
        comment="per-frequency inversion diagnostics",
    )


def _run_inversion(cfg, table, medium, out: Path):
    params = cfg.inversion_params()
    try:
        rec = reconstruct_density(table, medium, params)
    except (InversionError, QuadratureError, ValueError) as exc:
        raise CommandError(EXIT_INVERSION, f"inversion failed: {exc}") from exc
    formats.write_density(out / "density.json", rec.density, medium, extra={"status": rec.status})
    _write_inversion_diagnostics(out / "inversion.dat", rec)
    return rec


def cmd_invert(cfg: RunConfig, out: Path, force=False):
    medium = cfg.build_medium()
    table = _read(formats.read_table, cfg.path("table"))
    rec = _run_inversion(cfg, table, medium, out)
    summary = {
        "density": str(out / "density.json"),
        "acceptance_rate": rec.acceptance_rate,
        "failure_rate": rec.failure_rate,
        "clamped_fraction": rec.clamped_fraction,
        "status": rec.status,
    }
    if rec.failure_rate > cfg.inversion["max_failure_rate"]:
        raise CommandError(
            EXIT_INVERSION,
            f"acceptance test failed at {100 * rec.failure_rate:.0f}% of frequencies (diagnostics kept in {out})",
        )
    return summary


def _plan(cfg, density, medium, seed):
    pl = cfg.planner
    a = pl["a"]
    count = pl["count"]
    if a is None:
        if not count:
            raise CommandError(EXIT_PARSE, "planner needs a or count")
        a = density.total / (4 * math.pi * count)
    try:
        return plan_from_density(density, a, seed=seed, hard_core_factor=pl["hard_core_factor"], medium=medium, count=count)
    except PlanInfeasible as exc:
        raise CommandError(EXIT_PACKING, f"packing infeasible: {exc}") from exc
    except ValueError as exc:
        raise CommandError(EXIT_PARSE, str(exc)) from exc


def cmd_plan(cfg: RunConfig, out: Path, force=False):
    medium = cfg.build_medium()
    density = _target_density(cfg)
    plan = _plan(cfg, density, medium, cfg.planner["seed"])
    target = cfg.path("target_table", required=False)
    formats.write_plan(out / "plan.json", plan, target)
    summary = {
        "plan": str(out / "plan.json"),
        "count": plan.count,
        "expected_count": plan.expected_count,
        "regime_valid": plan.regime.valid,
    }
    if target is not None:
        tab = _read(formats.read_table, target)
        rep = verify_plan(medium, plan, tab)
        summary.update(relative_l2=rep.relative_l2, worst_direction=rep.worst_direction, worst_pair=list(rep.worst_pair))
        formats.atomic_write_text(out / "verify.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def _staged(stage, fn, *args):
    try:
        return fn(*args)
    except CommandError as exc:
        exc.stage = exc.stage or stage
        raise


def cmd_roundtrip(cfg: RunConfig, out: Path, force=False):
    """forward-medium -> invert -> plan -> forward-particles, with mismatch metrics."""
    medium = cfg.build_medium()
    target_path = cfg.path("target_table", required=False)
    density = None
    if target_path is not None:
        target = _staged("forward-medium", _read, formats.read_table, target_path)
    else:
        density = _staged("forward-medium", _target_density, cfg)
        target = _staged("forward-medium", _homogenized_table, cfg, medium, density)
    formats.write_table(out / "target_table.json", target)

    rec = _staged("invert", _run_inversion, cfg, target, medium, out)
    recovered = rec.density
    report = {
        "format_version": formats.FORMAT_VERSION,
        "kind": "roundtrip_report",
        "acceptance_rate": rec.acceptance_rate,
        "failure_rate": rec.failure_rate,
        "clamped_fraction": rec.clamped_fraction,
        "recovered_total": recovered.total,
    }
    if density is not None:
        ref = _density_on_grid(density, recovered.grid)
        report["density_relative_l2"] = float(
            math.sqrt(recovered.grid.integrate((recovered.values - ref) ** 2) / max(recovered.grid.integrate(ref**2), 1e-300))
        )
        report["target_total"] = density.total
        _write_slices(out / "density_slice.dat", density, recovered)
        _write_error_vs_theta(out / "error_vs_theta.dat", cfg, target, medium, density)

    if recovered.total > 0:
        plan = _staged("plan", _plan, cfg, recovered, medium, cfg.planner["seed"])
        formats.write_plan(out / "plan.json", plan, "target_table.json")
        table = _staged("forward-particles", _particle_table, cfg, medium, plan.particles, force)
        report["count"] = plan.count
    else:
        table = _staged("forward-particles", _particle_table, cfg, medium, ParticleSet.empty(), force)
        report["count"] = 0
    formats.write_table(out / "particle_table.json", table)
    report["amplitude_relative_l2"] = _relative_l2(table.values, target.values)
    scale = np.abs(target.values).max()
    report["amplitude_worst"] = float(np.abs(table.values - target.values).max() / scale) if scale > 0 else float(
        np.abs(table.values - target.values).max()
    )
    _write_amplitude_vs_angle(out / "amplitude_vs_angle.dat", target, table)
    formats.atomic_write_text(out / "report.json", json.dumps(report, indent=1, sort_keys=True) + "\n")
    if rec.failure_rate > cfg.inversion["max_failure_rate"]:
        raise CommandError(EXIT_INVERSION, f"acceptance test failed at {100 * rec.failure_rate:.0f}% of frequencies", "invert")
    return report


def _write_amplitude_vs_angle(path, target, table):
    alpha = target.in_quad.nodes[0]
    ang = np.arccos(np.clip(target.out_quad.nodes @ alpha, -1, 1))
    order = np.argsort(ang, kind="stable")
    formats.write_columns(
        path,
        {
            "angle": ang[order],
            "re_target": target.values[order, 0].real,
            "im_target": target.values[order, 0].imag,
            "re_particles": table.values[order, 0].real,
            "im_particles": table.values[order, 0].imag,
        },
        comment=f"amplitude vs scattering angle, alpha = {alpha.tolist()}",
    )


def _write_slices(path, density, recovered):
    g = recovered.grid
    mid = g.shape[2] // 2
    sel = g.index[:, 2] == mid
    ref = _density_on_grid(density, g)
    formats.write_columns(
        path,
        {"x": g.points[sel, 0], "y": g.points[sel, 1], "target": ref[sel], "recovered": recovered.values[sel]},
        comment=f"density slice z = {g.points[sel, 2][0] if sel.any() else 0.0:.6g}",
    )


def _write_error_vs_theta(path, cfg, target, medium, density):
    """|C_hat - C~(xi)| on the unit xi-shell as r_param sweeps the schedule."""
    from .inverse import estimate_transform

    tab = target.at_unit_wavenumber()
    k = target.k
    sq = build_sphere_quadrature(2)
    xi = sq.nodes[:6] * 1.0
    # exact transform of the target in the k = 1 frame: int C_1(x) e^{-i xi.x} dx, C_1(x) = C(x/k)/k^2
    exact = (np.exp(-1j * (xi / k) @ density.grid.points.T) @ (density.values * density.grid.weights)) * k
    rows = {"r_param": [], "theta_norm": [], "median_error": [], "median_F": []}
    for r in cfg.inversion["r_schedule"]:
        params = cfg.inversion_params(r_param=float(r))
        params = replace(
            params,
            b0=params.b0 * k,
            b1=None if params.b1 is None else params.b1 * k,
            b2=None if params.b2 is None else params.b2 * k,
        )
        try:
            recs, _, _ = estimate_transform(tab, xi, params)
        except (InversionError, ValueError) as exc:
            logger.warning("error-vs-theta sweep stopped at r_param=%s: %s", r, exc)
            break
        rows["r_param"].append(float(r))
        rows["theta_norm"].append(make_theta_pair(xi[0], float(r)).magnitude)
        rows["median_error"].append(float(np.median(np.abs(np.array([x.estimate for x in recs]) - exact))))
        rows["median_F"].append(float(np.median([x.F for x in recs])))
    formats.write_columns(path, rows, comment="transform error on |xi| = 1 vs r_param")


_HANDLERS = {
    "forward-particles": cmd_forward_particles,
    "forward-medium": cmd_forward_medium,
    "invert": cmd_invert,
    "plan": cmd_plan,
    "roundtrip": cmd_roundtrip,
}


def build_parser():
    p = argparse.ArgumentParser(prog="radpattern", description="Radiation-pattern design with small soft particles.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="override planner.seed")
    p.add_argument("--force", action="store_true", help="continue past small-particle regime violations")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT worker threads")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg.planner["seed"] = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = _HANDLERS[args.command]
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                summary = handler(cfg, out, args.force)
        else:
            summary = handler(cfg, out, args.force)
    except CommandError as exc:
        tag = f"[{exc.stage}] " if exc.stage else ""
        print(f"error: {tag}{exc}", file=sys.stderr)
        return exc.code
    print(json.dumps(summary, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
