"""Command line entry point: ``hbubble <command> [flags]``.

Every run is described by a :class:`RunConfig`, given as one JSON document
(``--config``) and/or flat flags that override its keys.  Artifacts land in
the output directory under names derived from a hash of the config, next to
``manifest.json`` which echoes the config and lists every file with its
SHA-256.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure or a
failed verification, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy

from hbubble import __version__
from hbubble.analytic import (
    level_brackets,
    newtonian_potential,
    sphere_level,
    sphere_map,
    sphere_radius,
)
from hbubble.errors import ConfigError, HBubbleError
from hbubble.fields import (
    ScalarField,
    _norm,
    ball_integral,
    check_conditions,
    constant_field,
    estimate_k0,
    field_from_config,
    radial_field,
)
from hbubble.functionals import (
    ISOPERIMETRIC_S,
    SurfaceMap,
    area,
    barycenter,
    dirichlet,
    energy,
    evaluate,
    lagrange_lambda,
    volume,
)
from hbubble.io import sha256_file, write_csv, write_json, write_obj
from hbubble.mesh import MAX_LEVEL, MobiusTransform, build_icosphere, mobius_reparametrize
from hbubble.minimax import build_ball_grid, deform_family, family_summary, init_family
from hbubble.optimize import TRAJECTORY_COLUMNS, DescentOptions, constrained_descent, diagnose_escape, perturbed

logger = logging.getLogger(__name__)

COMMANDS = ("verify", "field-check", "minimize", "minimax", "sphere-scan", "export")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
SCAN_COLUMNS = ("p_norm", "E", "bary_norm", "bound")
VERIFY_COLUMNS = ("identity", "measured", "expected", "error", "tolerance", "passed")


@dataclass
class RunConfig:
    command: str = "verify"
    field: dict = dc_field(default_factory=lambda: {"kind": "constant", "k": 0.0})
    t: float = 1.0
    level: int = 3
    R: float = 20.0
    ball_res: int = 5
    sweeps: int = 200
    seed: int = 0
    noise: float = 1e-3
    max_iters: int = 5000
    tol: float = 1e-3
    p0: list = dc_field(default_factory=lambda: [0.1, 0.0, 0.0])
    scan_radii: list = dc_field(default_factory=lambda: [2.0, 5.0, 10.0, 50.0, 100.0])
    workers: int = 1
    output: str = "hbubble-out"
    select: list | None = None

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"command: expected one of {COMMANDS}, got {self.command!r}")
        if not (isinstance(self.t, (int, float)) and math.isfinite(self.t) and self.t > 0):
            raise ConfigError(f"t: must be a positive real, got {self.t!r}")
        if not (isinstance(self.level, int) and 0 <= self.level <= MAX_LEVEL):
            raise ConfigError(f"level: must be an integer in [0, {MAX_LEVEL}], got {self.level!r}")
        if not self.R > 0:
            raise ConfigError(f"R: must be positive, got {self.R!r}")
        if not (isinstance(self.ball_res, int) and self.ball_res >= 2):
            raise ConfigError(f"ball_res: must be an integer >= 2, got {self.ball_res!r}")
        if not (isinstance(self.sweeps, int) and self.sweeps >= 1):
            raise ConfigError(f"sweeps: must be a positive integer, got {self.sweeps!r}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        if not self.noise >= 0:
            raise ConfigError(f"noise: must be nonnegative, got {self.noise!r}")
        if not (isinstance(self.max_iters, int) and self.max_iters >= 1):
            raise ConfigError(f"max_iters: must be a positive integer, got {self.max_iters!r}")
        if not self.tol > 0:
            raise ConfigError(f"tol: must be positive, got {self.tol!r}")
        if len(self.p0) != 3 or not float(np.linalg.norm(self.p0)) < 1:
            raise ConfigError(f"p0: must be a 3-vector with |p0| < 1, got {self.p0!r}")
        if not all(r > 0 for r in self.scan_radii):
            raise ConfigError("scan_radii: entries must be positive")
        if not (isinstance(self.workers, int) and self.workers >= 1):
            raise ConfigError(f"workers: must be a positive integer, got {self.workers!r}")
        if self.select is not None and not all(isinstance(s, str) for s in self.select):
            raise ConfigError("select: must be a list of identity names")
        field_from_config(self.field)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {extra}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def digest(self) -> str:
        """Hash of everything that determines the numbers (not the output path)."""
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @property
    def stem(self) -> str:
        return f"{self.command}-{self.digest()[:12]}"


# --------------------------------------------------------------------------
# verification suite


def mesh_tolerance(level: int) -> float:
    """Relative tolerance for discretised sphere identities at a mesh level."""
    return 1e-3 if level >= 5 else 2e-2


def _inverse_distance(p) -> ScalarField:
    p = np.asarray(p, dtype=float)
    return ScalarField(evaluator=lambda q: 1.0 / _norm(q - p), label="inverse_distance")


def _rel(measured, expected):
    return abs(measured - expected) / abs(expected)


def _row(name, measured, expected, error, tol, passed=None):
    return {
        "identity": name,
        "measured": float(measured),
        "expected": float(expected),
        "error": float(error),
        "tolerance": float(tol),
        "passed": bool(error <= tol) if passed is None else bool(passed),
    }


def _check_ball_inverse_distance(ctx):
    val = ball_integral(_inverse_distance((0.0, 0.0, 0.0)), (2.0, 0.0, 0.0), 1.0)
    exact = 2.0 * math.pi / 3.0
    return [_row("ball_inverse_distance", val, exact, _rel(val, exact), 1e-3)]


def _check_sphere(ctx):
    u, tol = SurfaceMap.identity(ctx["mesh"]), ctx["tol"]
    four_pi = 4.0 * math.pi
    D, A, V = dirichlet(u), area(u), volume(u)
    return [
        _row("sphere_dirichlet", D, four_pi, _rel(D, four_pi), tol),
        _row("sphere_area", A, four_pi, _rel(A, four_pi), tol),
        _row("sphere_volume", V, -four_pi / 3.0, _rel(V, -four_pi / 3.0), tol),
    ]


def _check_scaled_sphere(ctx):
    mesh, tol = ctx["mesh"], ctx["tol"]
    u = SurfaceMap(mesh, np.array([0.5, -0.2, 0.1]) + 2.0 * mesh.vertices)
    D, A, V = dirichlet(u), area(u), volume(u)
    return [
        _row("scaled_sphere_dirichlet", D, 16 * math.pi, _rel(D, 16 * math.pi), tol),
        _row("scaled_sphere_area", A, 16 * math.pi, _rel(A, 16 * math.pi), tol),
        _row("scaled_sphere_volume", V, -32 * math.pi / 3, _rel(V, -32 * math.pi / 3), tol),
    ]


def _check_sphere_map_level(ctx):
    mesh, tol = ctx["mesh"], ctx["tol"]
    D0 = dirichlet(sphere_map(mesh, (0.0, 0.0, 0.0), 4.0 * math.pi / 3.0))
    D1 = dirichlet(sphere_map(mesh, (0.3, 0.0, 0.0), 1.0))
    return [
        _row("unit_sphere_map_dirichlet", D0, 4 * math.pi, _rel(D0, 4 * math.pi), tol),
        _row("sphere_map_level", D1, sphere_level(1.0), _rel(D1, sphere_level(1.0)), tol),
    ]


def _check_zero_field_energy(ctx):
    E = energy(SurfaceMap.identity(ctx["mesh"]), constant_field(0.0))
    return [_row("zero_field_energy", E, 4 * math.pi, _rel(E, 4 * math.pi), ctx["tol"])]


def _check_newtonian(ctx):
    I0, _ = newtonian_potential(np.zeros(3))
    inner = 2.0 * math.pi / 3.0 * (3.0 - 1.0)
    outer = 4.0 * math.pi / 3.0
    I1, _ = newtonian_potential(np.array([0.0, 1.0, 0.0]))
    branch = max(abs(inner - 4 * math.pi / 3), abs(outer - 4 * math.pi / 3), abs(I1 - 4 * math.pi / 3))
    worst = 0.0
    for r in (0.0, 0.5, 1.0, 2.0, 5.0):
        p = np.array([r, 0.0, 0.0])
        q = ball_integral(_inverse_distance(p), np.zeros(3), 1.0, pole=p if r <= 1 else None)
        worst = max(worst, _rel(q, newtonian_potential(p)[0]))
    return [
        _row("newtonian_origin", I0, 2 * math.pi, abs(I0 - 2 * math.pi), 1e-12),
        _row("newtonian_unit_sphere", I1, 4 * math.pi / 3, branch, 1e-12),
        _row("newtonian_quadrature", worst, 0.0, worst, 1e-3),
    ]


def _check_lambda_sign(ctx):
    t = 1.0
    u = sphere_map(ctx["mesh"], (0.0, 0.0, 0.0), t)
    lam = lagrange_lambda(u, constant_field(0.0))
    expected = 2.0 / sphere_radius(t)
    return [_row("lambda_volume_sign", lam, expected, _rel(lam, expected), ctx["tol"], passed=lam * t > 0 and _rel(lam, expected) <= ctx["tol"])]


def _check_barycenter(ctx):
    mesh, t = ctx["mesh"], 1.0
    far = np.linalg.norm(barycenter(sphere_map(mesh, (100.0, 0.0, 0.0), t), t) - np.array([1.0, 0.0, 0.0]))
    u = sphere_map(mesh, (0.3, 0.1, 0.0), t)
    moved = np.linalg.norm(barycenter(mobius_reparametrize(u, MobiusTransform(dilation=1.5)), t) - barycenter(u, t))
    return [
        _row("barycenter_far", far, 0.0, far, 0.05),
        _row("barycenter_mobius", moved, 0.0, moved, 5e-3 if ctx["level"] >= 5 else 2e-2),
    ]


def _check_isoperimetric(ctx):
    mesh = ctx["mesh"]
    x = mesh.vertices
    maps = [
        x,
        x * np.array([1.0, 1.5, 0.7]),
        x + 0.1 * np.sin(3.0 * x[:, [1, 2, 0]]),
        x * (1.0 + 0.2 * x[:, [2]] ** 2),
    ]
    worst = 0.0
    chain = True
    for vals in maps:
        u = SurfaceMap(mesh, vals)
        D, A, V = dirichlet(u), area(u), volume(u)
        chain &= A <= D * (1 + 1e-12)
        worst = max(worst, ISOPERIMETRIC_S * abs(V) ** (2 / 3) / A, A / D)
    return [_row("isoperimetric_chain", worst, 1.0, worst - 1.0, 5e-3, passed=chain and worst <= 1.005)]


def _check_decay(ctx):
    mesh, t = ctx["mesh"], 1.0
    k0 = 0.4
    K = radial_field(k0)
    s = sphere_radius(t)
    worst = -math.inf
    for r in (2.0, 5.0, 10.0, 50.0):
        gap = energy(sphere_map(mesh, (r, 0.0, 0.0), t), K) - sphere_level(t)
        worst = max(worst, gap - k0 * 4 * math.pi * s * s / (3 * r))
    return [_row("sphere_energy_decay", worst, 0.0, worst, 1e-2)]


VERIFY_CHECKS = {
    "ball_inverse_distance": _check_ball_inverse_distance,
    "sphere": _check_sphere,
    "scaled_sphere": _check_scaled_sphere,
    "sphere_map_level": _check_sphere_map_level,
    "zero_field_energy": _check_zero_field_energy,
    "newtonian": _check_newtonian,
    "lambda_volume_sign": _check_lambda_sign,
    "barycenter": _check_barycenter,
    "isoperimetric_chain": _check_isoperimetric,
    "sphere_energy_decay": _check_decay,
}


def verify_suite(level: int, select=None) -> list:
    """Run the identity checks at a mesh level; one row per identity.

    ``select`` restricts to named check groups (keys of ``VERIFY_CHECKS``);
    an empty selection yields an empty table.
    """
    names = list(VERIFY_CHECKS) if select is None else list(select)
    unknown = sorted(set(names) - set(VERIFY_CHECKS))
    if unknown:
        raise ConfigError(f"select: unknown identities {unknown}; choose from {sorted(VERIFY_CHECKS)}")
    if not names:
        return []
    ctx = {"mesh": build_icosphere(level), "tol": mesh_tolerance(level), "level": level}
    rows = []
    for name in names:
        rows.extend(VERIFY_CHECKS[name](ctx))
    return rows


# --------------------------------------------------------------------------
# artifacts


def export_artifacts(result: dict, directory, stem: str) -> list:
    """Write ``result`` and return the written paths.

    ``result`` may hold ``maps`` (name -> SurfaceMap, written as OBJ),
    ``tables`` (name -> (rows, columns), CSV) and ``reports``
    (name -> JSON-able object).  Names are prefixed by ``stem``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, u in sorted(result.get("maps", {}).items()):
        paths.append(write_obj(directory / f"{stem}_{name}.obj", u.mesh, u))
    for name, (rows, cols) in sorted(result.get("tables", {}).items()):
        paths.append(write_csv(directory / f"{stem}_{name}.csv", rows, cols))
    for name, obj in sorted(result.get("reports", {}).items()):
        paths.append(write_json(directory / f"{stem}_{name}.json", obj))
    return paths


def _versions() -> dict:
    return {"hbubble": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_manifest(cfg: RunConfig, paths, wall_time: float, status: int) -> Path:
    directory = Path(cfg.output)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "versions": _versions(),
        "wall_time_s": wall_time,
        "workers": cfg.workers,
        "exit_status": status,
        "files": {Path(p).name: sha256_file(p) for p in paths},
    }
    return write_json(directory / "manifest.json", manifest)


# --------------------------------------------------------------------------
# commands


def _field(cfg: RunConfig) -> ScalarField:
    return field_from_config(cfg.field)


def _k0(field: ScalarField) -> float:
    return field.k0_declared if field.k0_declared is not None else estimate_k0(field)


def _run_verify(cfg):
    rows = verify_suite(cfg.level, cfg.select)
    failed = [r["identity"] for r in rows if not r["passed"]]
    for r in rows:
        logger.info("%-26s %s  error=%.3e tol=%.1e", r["identity"], "PASS" if r["passed"] else "FAIL", r["error"], r["tolerance"])
    if failed:
        print(f"failing identities: {', '.join(failed)}", file=sys.stderr)
    result = {
        "tables": {"verify": (rows, VERIFY_COLUMNS)},
        "reports": {"verify": {"level": cfg.level, "rows": rows, "failed": failed}},
    }
    return result, EXIT_NUMERIC if failed else EXIT_OK


def _run_field_check(cfg):
    field = _field(cfg)
    rep = check_conditions(field).to_dict()
    k0 = _k0(field)
    out = {"field": field.to_config(), "conditions": rep, "k0_declared": field.k0_declared}
    if math.isfinite(k0):
        out["brackets"] = level_brackets(k0, cfg.t).to_dict()
    return {"reports": {"conditions": out}}, EXIT_OK


def _descent_options(cfg) -> DescentOptions:
    return DescentOptions(max_iters=cfg.max_iters, residual_tol=cfg.tol)


def _run_minimize(cfg):
    field = _field(cfg)
    mesh = build_icosphere(cfg.level)
    u0 = perturbed(sphere_map(mesh, (0.0, 0.0, 0.0), cfg.t), cfg.noise, cfg.seed)
    cand = constrained_descent(u0, field, cfg.t, _descent_options(cfg))
    rep = cand.to_dict()
    rep["diagnosis"] = diagnose_escape(cand.trajectory, cfg.t) if len(cand.trajectory) >= 50 else None
    rep["initial_mean_norm"] = cand.trajectory[0]["mean_norm"]
    result = {
        "maps": {"candidate": cand.u},
        "tables": {"trajectory": (cand.trajectory, TRAJECTORY_COLUMNS)},
        "reports": {"candidate": rep},
    }
    return result, EXIT_OK


def _run_minimax(cfg):
    field = _field(cfg)
    mesh = build_icosphere(cfg.level)
    grid = build_ball_grid(cfg.R, cfg.ball_res)
    fam = init_family(grid, mesh, cfg.t)
    fam, history = deform_family(fam, field, _descent_options(cfg), sweeps=cfg.sweeps)
    summary = family_summary(fam, field, cfg.p0)
    k0 = _k0(field)
    if math.isfinite(k0):
        summary["brackets"] = level_brackets(k0, cfg.t).to_dict()
    rows = [{"sweep": i + 1, "c_running": c} for i, c in enumerate(history)]
    result = {
        "maps": {"argmax_member": fam.member(summary["argmax_member"])},
        "tables": {"c_history": (rows, ("sweep", "c_running"))},
        "reports": {"family": summary},
    }
    return result, EXIT_OK


def _run_sphere_scan(cfg):
    field = _field(cfg)
    mesh = build_icosphere(cfg.level)
    k0 = _k0(field)
    s = sphere_radius(cfg.t)
    S0 = sphere_level(cfg.t)
    rows = []
    for r in cfg.scan_radii:
        u = sphere_map(mesh, (float(r), 0.0, 0.0), cfg.t)
        bound = S0 + k0 * 4 * math.pi * s * s / (3 * r) if math.isfinite(k0) else math.nan
        rows.append(
            {"p_norm": float(r), "E": energy(u, field), "bary_norm": float(np.linalg.norm(barycenter(u, cfg.t))), "bound": bound}
        )
    return {"tables": {"sphere_scan": (rows, SCAN_COLUMNS)}}, EXIT_OK


def _run_export(cfg):
    mesh = build_icosphere(cfg.level)
    u = sphere_map(mesh, (0.0, 0.0, 0.0), cfg.t)
    return {"maps": {"sphere": u}, "reports": {"sphere": evaluate(u, _field(cfg)).to_dict()}}, EXIT_OK


_DISPATCH = {
    "verify": _run_verify,
    "field-check": _run_field_check,
    "minimize": _run_minimize,
    "minimax": _run_minimax,
    "sphere-scan": _run_sphere_scan,
    "export": _run_export,
}


def run_config(cfg: RunConfig) -> int:
    """Validate, run and write artifacts plus the manifest; return the exit status."""
    try:
        cfg.validate()
    except (ConfigError, TypeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    np.random.seed(cfg.seed % 2**32)
    start = time.perf_counter()
    try:
        result, status = _DISPATCH[cfg.command](cfg)
    except ConfigError as exc:
        print(f"{cfg.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HBubbleError, ArithmeticError) as exc:
        print(f"{cfg.command}: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - start
    try:
        paths = export_artifacts(result, cfg.output, cfg.stem)
        write_manifest(cfg, paths, wall, status)
    except OSError as exc:
        print(f"{cfg.command}: cannot write artifacts: {exc}", file=sys.stderr)
        return EXIT_IO
    return status


# --------------------------------------------------------------------------
# argument parsing

_FLAGS = (
    ("--t", "t", float),
    ("--level", "level", int),
    ("--seed", "seed", int),
    ("--max-iters", "max_iters", int),
    ("--tol", "tol", float),
    ("--R", "R", float),
    ("--ball-res", "ball_res", int),
    ("--sweeps", "sweeps", int),
    ("--noise", "noise", float),
    ("--workers", "workers", int),
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its keys")
    common.add_argument("--field", help='field as JSON, e.g. \'{"kind": "radial", "a": 0.4}\'')
    for flag, dest, typ in _FLAGS:
        common.add_argument(flag, dest=dest, type=typ)
    common.add_argument("--p0", type=float, nargs=3)
    common.add_argument("--scan-radii", dest="scan_radii", type=float, nargs="+")
    common.add_argument("--select", nargs="*", help="identities to run (verify)")
    common.add_argument("-o", "--output", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="hbubble", description="Volume-constrained bubbles of capillarity functionals.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
        if not isinstance(base, dict):
            raise ConfigError("config must be a JSON object")
    base["command"] = args.command
    if args.field is not None:
        try:
            base["field"] = json.loads(args.field)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"field: not valid JSON: {exc}") from None
    for key in ("t", "level", "seed", "max_iters", "tol", "R", "ball_res", "sweeps", "noise", "workers", "output", "select"):
        val = getattr(args, key)
        if val is not None:
            base[key] = val
    for key in ("p0", "scan_radii"):
        val = getattr(args, key)
        if val is not None:
            base[key] = list(val)
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    return run_config(cfg)

