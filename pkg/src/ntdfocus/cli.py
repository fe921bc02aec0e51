"""Command-line driver: ``ntdfocus {build-ntd,verify,focus,sweep,recover}``.

A run reads a JSON config, fills in defaults, validates it against
:data:`CONFIG_SCHEMA` and writes ``manifest.json``, ``report.json`` and CSV
series into ``<out>/<command>-<hash>``, where the hash covers the resolved
config.  Exit codes: 0 success, 1 configuration error, 2 solver budget
exhausted (results are still written).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import focusing_lab as fl
from .cache import NtdCache
from .control_solve import RegularizationConfig
from .medium import (
    MediumError,
    MediumProfile,
    point_at_travel_time,
    reference_profile,
    slab_indicator,
    unit_profile,
)
from .signals import TimeGrid
from .wave_forward import SolverConfigError, SolverGrid

log = logging.getLogger("ntdfocus")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2
COMMANDS = ("build-ntd", "verify", "focus", "sweep", "recover")
ENV_OUT = "NTDFOCUS_OUT"
ENV_JOBS = "NTDFOCUS_JOBS"

DEFAULTS: dict = {
    "profile": {"kind": "reference"},
    "T": 2.0,
    "N": 2048,
    "solver": {"n_x": 8192, "n_t": 32768, "cfl_factor": 0.5},
    "regularization": {
        "alpha": 1e-3,
        "beta": 1.02e-4,
        "method": "gmres",
        "omega": "auto",
        "symmetrize": True,
        "gmres": {"outer_max": 6, "restart": 10, "tol": 1e-12},
        "neumann": {"n_max": 200000, "tol": 1e-12, "power_steps": 30, "omega_margin": 2.2},
    },
    "focus": {"r1": 0.5, "r2": 0.625, "margin": 0.02},
    "verify": {"identities": list(fl.IDENTITIES), "trials": 20, "seed": 0, "N": 512},
    "sweep": {"N_list": [128, 256, 512, 1024], "N0": None, "p_alpha": 0.0, "p_beta": 0.0},
    "recover": {"N": 1024, "threshold": 0.1, "sensitivity": [0.05, 0.2]},
}

_pos = {"type": "number", "exclusiveMinimum": 0}
_unit = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_posint = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA: dict = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "profile": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["reference", "unit", "bumps", "samples"]},
                "file": {"type": "string"},
            },
        },
        "T": _pos,
        "N": _posint,
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_x": _posint, "n_t": _posint, "cfl_factor": _unit},
        },
        "regularization": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": _unit,
                "beta": _unit,
                "method": {"enum": ["gmres", "neumann_iteration"]},
                "omega": {"oneOf": [_pos, {"const": "auto"}]},
                "symmetrize": {"type": "boolean"},
                "gmres": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"outer_max": _posint, "restart": _posint, "tol": _pos},
                },
                "neumann": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"n_max": _posint, "tol": _pos, "power_steps": _posint,
                                   "omega_margin": {"type": "number", "minimum": 2}},
                },
            },
        },
        "focus": {
            "type": "object",
            "additionalProperties": False,
            "required": ["r1", "r2"],
            "properties": {"r1": _pos, "r2": _pos, "margin": {"type": "number", "minimum": 0}},
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "identities": {"type": "array", "items": {"enum": list(fl.IDENTITIES)},
                               "minItems": 1},
                "trials": _posint,
                "seed": {"type": "integer", "minimum": 0},
                "N": _posint,
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N_list": {"type": "array", "items": _posint, "minItems": 1},
                "N0": {"oneOf": [_posint, {"type": "null"}]},
                "p_alpha": {"type": "number"},
                "p_beta": {"type": "number"},
            },
        },
        "recover": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": _posint,
                "threshold": _unit,
                "sensitivity": {"type": "array", "items": _unit},
            },
        },
        "cache_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
        self.message = message


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "profile":
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(raw: dict) -> None:
    """Schema check; raises :class:`ConfigError` with a JSON pointer."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "required":
            missing = [p for p in err.validator_value if p not in err.instance]
            path.append(missing[0])
        raise ConfigError(_pointer(path), err.message)


def resolve_config(raw: dict | None, command: str) -> dict:
    """Validate the user config, expand defaults and run semantic checks."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    validate_config(raw)
    cfg = _deep_merge(DEFAULTS, raw)
    validate_config(cfg)
    T = cfg["T"]
    f = cfg["focus"]
    if command in ("focus", "sweep", "recover"):
        if not f["r1"] < f["r2"]:
            raise ConfigError("/focus/r2", "r2 must exceed r1")
        if f["r2"] > T:
            raise ConfigError("/focus/r2", "r2 must not exceed T")
    s = cfg["sweep"]["N_list"]
    if command == "sweep" and s != sorted(s):
        raise ConfigError("/sweep/N_list", "N_list must be ascending")
    return cfg


def build_profile(cfg: dict, base_dir: Path | None = None) -> MediumProfile:
    spec = cfg["profile"]
    try:
        if "file" in spec:
            path = Path(spec["file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return MediumProfile.from_json(path.read_text())
        kind = spec.get("kind", "reference")
        if kind == "reference":
            return reference_profile()
        if kind == "unit":
            return unit_profile()
        return MediumProfile.from_dict(spec)
    except (OSError, KeyError, TypeError, ValueError, MediumError) as exc:
        raise ConfigError("/profile", str(exc)) from exc


def solver_grid(cfg: dict, profile: MediumProfile) -> SolverGrid:
    s = cfg["solver"]
    g = SolverGrid(x_max=profile.x_max, n_x=s["n_x"], n_t=s["n_t"],
                   horizon=2 * cfg["T"], cfl_factor=s["cfl_factor"])
    try:
        g.validate(profile)
    except SolverConfigError as exc:
        raise ConfigError("/solver", str(exc)) from exc
    return g


def regularization(cfg: dict) -> RegularizationConfig:
    return RegularizationConfig(**copy.deepcopy(cfg["regularization"]))


def config_hash(cfg: dict, command: str) -> str:
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# -- output --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return "" if v is None else str(v)


def write_csv(path: Path, header: list[str], columns) -> None:
    """Columns of equal length, floats written with ``%.17g``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    try:
        out["ntdfocus"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["ntdfocus"] = None
    return out


class Run:
    def __init__(self, command: str, cfg: dict, out_root: Path, jobs: int, force: bool,
                 base_dir: Path | None):
        self.command = command
        self.cfg = cfg
        self.jobs = jobs
        self.force = force
        self.digest = config_hash(cfg, command)
        self.dir = out_root / f"{command}-{self.digest[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.profile = build_profile(cfg, base_dir)
        self.sgrid = solver_grid(cfg, self.profile)
        self.cache = NtdCache(cfg.get("cache_dir") or out_root / "cache")
        self.hashes: dict = {"config": self.digest, "profile": self.profile.digest()}

    def ntd(self, N: int):
        try:
            tgrid = TimeGrid(N, self.cfg["T"])
            ntd, status = self.cache.get_or_build(self.profile, tgrid, self.sgrid, self.force)
        except SolverConfigError as exc:
            raise ConfigError("/N", str(exc)) from exc
        self.hashes[f"ntd_N{N}"] = ntd.digest()
        self.hashes[f"ntd_N{N}_cache"] = status
        return ntd

    def finish(self, report: dict) -> None:
        write_json(self.dir / "report.json", report)
        write_json(self.dir / "manifest.json", {
            "command": self.command,
            "config": self.cfg,
            "versions": _versions(),
            "hashes": {k: v for k, v in self.hashes.items() if not k.endswith("_cache")},
        })


# -- commands --------------------------------------------------------------------

def cmd_build_ntd(run: Run) -> int:
    ntd = run.ntd(run.cfg["N"])
    g = ntd.grid
    write_csv(run.dir / "kernel.csv", ["t", "value"], [g.t, ntd.kernel])
    run.finish({"N": g.N, "T": g.T, "cache": run.hashes[f"ntd_N{g.N}_cache"],
                "kernel_sha256": ntd.digest()})
    return EXIT_OK


def cmd_verify(run: Run) -> int:
    v = run.cfg["verify"]
    ntd = run.ntd(v["N"])
    rows = {k: [] for k in ("identity", "trial", "lhs", "rhs", "relative_error")}
    summaries = []
    for name in v["identities"]:
        rep = fl.verify_identity(name, ntd, run.profile, run.sgrid, v["trials"], v["seed"])
        summaries.append(rep.summary())
        for i, (l, r, e) in enumerate(zip(rep.lhs, rep.rhs, rep.relative_errors)):
            for k, val in zip(rows, (name, i, l, r, e)):
                rows[k].append(val)
    write_csv(run.dir / "identities.csv", list(rows), list(rows.values()))
    run.finish({"identities": summaries})
    return EXIT_OK


def _write_residuals(run: Run, exp: fl.FocusExperiment) -> None:
    for tag, reps in (("h", exp.h_reports), ("a", exp.a_reports)):
        for r, rep in zip((exp.r1, exp.r2), reps):
            hist = rep.residual_history
            write_csv(run.dir / f"residuals_{tag}_r{r:g}.csv", ["step", "relative_residual"],
                      [range(len(hist)), hist])


def _focus(run: Run, N: int) -> fl.FocusExperiment:
    f = run.cfg["focus"]
    reg = regularization(run.cfg)
    return fl.focus_slab(run.profile, f["r1"], f["r2"], reg.alpha, reg.beta, N,
                         run.cfg["T"], run.sgrid, ntd=run.ntd(N), cfg=reg,
                         margin=f["margin"])


def cmd_focus(run: Run) -> int:
    N = run.cfg["N"]
    exp = _focus(run, N)
    s = exp.snapshot
    target = slab_indicator(run.profile, exp.r1, exp.r2, s.x)
    write_csv(run.dir / "snapshot.csv", ["x", "u", "ut", "target"], [s.x, s.u, s.ut, target])
    tg = exp.tgrid
    write_csv(run.dir / "source_b.csv", ["t", "b"], [tg.t, exp.b])
    write_csv(run.dir / "trace.csv", ["t", "u0"], [tg.t, exp.trace])
    _write_residuals(run, exp)
    indicators = []
    reg = regularization(run.cfg)
    for r in (exp.r1, exp.r2):
        ind = fl.reconstruct_indicator(run.profile, r, reg.alpha, N, run.cfg["T"], run.sgrid,
                                       ntd=run.ntd(N), cfg=reg)
        indicators.append(ind.summary())
        write_csv(run.dir / f"indicator_r{r:g}.csv", ["x", "u", "target"],
                  [ind.snapshot.x, ind.snapshot.u,
                   slab_indicator(run.profile, 0.0, r, ind.snapshot.x)])
    run.finish({"focus": exp.summary(), "indicators": indicators})
    return EXIT_OK if exp.converged else EXIT_NONCONVERGED


def cmd_sweep(run: Run) -> int:
    sw = run.cfg["sweep"]
    f = run.cfg["focus"]
    reg = run.cfg["regularization"]
    tab = fl.convergence_sweep(
        run.profile, f["r1"], f["r2"], sw["N_list"], reg["alpha"], reg["beta"],
        sw["N0"], sw["p_alpha"], sw["p_beta"], run.cfg["T"], run.sgrid,
        cfg=copy.deepcopy(reg), jobs=run.jobs,
    )
    recs = tab.as_records()
    cols = ["N", "alpha", "beta", "error", "relative_error", "near_origin_mass", "converged"]
    write_csv(run.dir / "sweep.csv", cols, [[r[c] for r in recs] for c in cols])
    run.finish({"rows": recs, "slope": tab.slope,
                "slope_defined": tab.slope is not None})
    ok = all(r.converged for r in tab.rows)
    return EXIT_OK if ok else EXIT_NONCONVERGED


def cmd_recover(run: Run) -> int:
    rc = run.cfg["recover"]
    N = rc["N"]
    exp = _focus(run, N)
    ntd = run.ntd(N)
    tg = exp.tgrid
    vol = fl.slab_volume_from_boundary(exp.b, tg)
    coord = fl.recover_coordinate(vol.source, ntd, time_derivative=True)
    s = exp.snapshot
    x1, x2 = (float(v) for v in point_at_travel_time(run.profile, [exp.r1, exp.r2]))
    slab = ((s.x > x1) & (s.x <= x2)).astype(float)
    obs = fl.observation_time(exp, rc["threshold"], run.sgrid, tuple(rc["sensitivity"]))
    t, tr = fl.focused_trace(exp, run.sgrid)
    step = max(1, len(t) // 4096)
    write_csv(run.dir / "observation_trace.csv", ["t", "u0"], [t[::step], tr[::step]])
    write_csv(run.dir / "normalized_source.csv", ["t", "f"], [tg.t, vol.source])
    report = {
        "focus": exp.summary(),
        "volume": {
            "boundary_estimate": vol.volume,
            "forward_difference_estimate": fl.boundary_volume(exp.b, tg, exact=False),
            "weighted_measure": exp.slab_volume,
            "relative_deviation": abs(vol.volume - exp.slab_volume) / exp.slab_volume,
        },
        "coordinate": {
            "boundary_estimate": coord,
            "slab_centroid": fl.weighted_centroid(run.profile, s.x, slab),
            "wave_centroid": fl.weighted_centroid(run.profile, s.x, s.ut),
        },
        "observation": obs.summary(),
    }
    run.finish(report)
    return EXIT_OK if exp.converged else EXIT_NONCONVERGED


HANDLERS = {
    "build-ntd": cmd_build_ntd,
    "verify": cmd_verify,
    "focus": cmd_focus,
    "sweep": cmd_sweep,
    "recover": cmd_recover,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntdfocus", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, help=f"output root (env {ENV_OUT}, default ./runs)")
    p.add_argument("--jobs", type=int, help=f"parallel workers (env {ENV_JOBS}, default 1)")
    p.add_argument("--force-rebuild", action="store_true", help="ignore cached NtD kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or Path(os.environ.get(ENV_OUT, "runs"))
    try:
        jobs = args.jobs or int(os.environ.get(ENV_JOBS, "1"))
    except ValueError:
        print(f"error: {ENV_JOBS} must be an integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        raw, base_dir = None, None
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text())
            except (OSError, ValueError) as exc:
                raise ConfigError("", f"cannot read config {args.config}: {exc}") from exc
            base_dir = args.config.parent
        cfg = resolve_config(raw, args.command)
        run = Run(args.command, cfg, out, max(1, jobs), args.force_rebuild, base_dir)
        code = HANDLERS[args.command](run)
    except ConfigError as exc:
        print(f"config error at {exc.pointer or '/'}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    print(run.dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
