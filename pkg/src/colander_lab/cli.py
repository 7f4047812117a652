"""Experiment driver: ``colander-lab <command> --config <path> [--out <dir>] [--seed <u64>]``.

A run validates its JSON config, computes, and leaves an artifact directory
with ``manifest.json``, a byte-identical ``config.json`` copy, and CSV/JSON
results.  Exit status is 0 on success, 2 on invalid input, 3 when a solver
or estimator fails.  Partial outputs are removed on failure.

Seed labels (hashed with the master seed): ``measure``, ``layers``,
``decay/<i>``, ``construct/lattice``, ``construct/heart/<i>``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .capacity import equilibrium_solve
from .errors import (ColanderError, ConfigError, DomainError, PreconditionError,
                     ProfileError, UnsupportedDimension)
from .harmonic import (WoSConfig, decay_fit, layer_bounds, layer_report_csv, read_csv,
                       result_row, result_rows_csv, wos_escape)
from .mathcore import Profile, envelope_integral, oscillation_report, rho_sequence
from .rng import derive_seed
from .setgen import BallUnion, Colander, make_cube_colander

log = logging.getLogger("colander_lab")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3
COMMANDS = ("validate-profile", "capacity", "measure", "layers", "decay-study", "construct")

_FUNC = {
    "type": "object",
    "properties": {
        "family": {"enum": ["constant", "gauge"]},
        "value": {"type": "number", "exclusiveMinimum": 0},
        "amplitude": {"type": "number", "exclusiveMinimum": 0},
        "exponents": {"type": "array", "items": {"type": "number"}},
        "shift": {"type": "number"},
        "arg_scale": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["family"],
    "additionalProperties": False,
}
_BALLS = {"type": "array", "minItems": 1,
          "items": {"type": "array", "minItems": 3, "maxItems": 4, "items": {"type": "number"}}}
_GEOMETRY = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["cube", "balls"]},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "fill": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "balls": _BALLS,
        "radii": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "layers": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "n_layers": {"type": "integer", "minimum": 1},
        "A": {"type": "number", "minimum": 1},
        "m_points": {"type": "integer", "minimum": 8},
        "start": {"type": "array", "items": {"type": "number"}},
        "nodes_per_ball": {"type": "integer", "minimum": 8},
        "n_max": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}
CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "profile": {
            "type": "object",
            "properties": {"d": {"type": "integer", "minimum": 2}, "R": _FUNC, "eps": _FUNC},
            "required": ["d", "R", "eps"],
            "additionalProperties": False,
        },
        "geometry": _GEOMETRY,
        "wos": {
            "type": "object",
            "properties": {
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "delta_rel": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.01},
                "n_walks": {"type": "integer", "minimum": 1},
                "max_steps": {"type": "integer", "minimum": 1000},
            },
            "additionalProperties": False,
        },
        "build": {
            "type": "object",
            "properties": {
                "k_max": {"type": "integer", "minimum": 1},
                "k_min": {"type": "integer", "minimum": 0},
                "a_mode": {"enum": ["bisect", "green"]},
                "safety": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "C": {"type": "number", "exclusiveMinimum": 0},
                "growth_radii": {"type": "array", "items": {"type": "number"}},
                "heart_radii": {"type": "array", "items": {"type": "number"}},
            },
            "additionalProperties": False,
        },
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    },
    "required": ["command", "profile"],
    "additionalProperties": False,
}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class RunLock:
    """Exclusive lock file inside the artifact directory."""

    def __init__(self, directory: Path):
        self.path = directory / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"{self.path.parent} is locked by another run") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        self.path.unlink(missing_ok=True)
        return False


class Run:
    """Collects outputs and stage timings; files land in the directory only on success."""

    def __init__(self, out: Path, config_bytes: bytes, seed: int, command: str):
        self.out = out
        self.config_bytes = config_bytes
        self.seed = seed
        self.command = command
        self.files: dict[str, bytes] = {}
        self.stages: list[dict] = []
        self.started = datetime.now(timezone.utc)

    @contextmanager
    def stage(self, name):
        log.info("stage %s", name)
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages.append({"name": name, "seconds": round(time.perf_counter() - t0, 6)})

    def add(self, name: str, text: str):
        self.files[name] = text.encode("utf-8")

    def add_json(self, name: str, data):
        self.add(name, json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def commit(self):
        """Write all files, then the manifest last, each via rename."""
        written = []
        try:
            self._atomic("config.json", self.config_bytes)
            written.append("config.json")
            for name, data in sorted(self.files.items()):
                self._atomic(name, data)
                written.append(name)
            manifest = {
                "tool": "colander-lab",
                "version": __version__,
                "command": self.command,
                "seed": self.seed,
                "config_sha256": hashlib.sha256(self.config_bytes).hexdigest(),
                "started": self.started.isoformat(),
                "finished": datetime.now(timezone.utc).isoformat(),
                "stages": self.stages,
                "files": [{"name": n, "sha256": hashlib.sha256(self.files[n]).hexdigest()}
                          for n in sorted(self.files)],
            }
            self._atomic("manifest.json",
                         (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        except BaseException:
            for name in written:
                (self.out / name).unlink(missing_ok=True)
            raise

    def _atomic(self, name, data: bytes):
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=f".{name}.")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, self.out / name)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _wos_cfg(cfg: dict, rho: float, seed: int) -> WoSConfig:
    w = cfg.get("wos", {})
    if "delta" in w and "delta_rel" in w:
        raise ConfigError("give at most one of wos.delta and wos.delta_rel")
    delta = w.get("delta", w.get("delta_rel", 1e-4) * rho)
    out = WoSConfig(float(delta), int(w.get("n_walks", 100_000)), int(w.get("max_steps", 100_000)),
                    int(seed))
    out.check(rho)
    return out


def _balls(spec, d) -> BallUnion:
    arr = np.asarray(spec, dtype=float)
    if arr.shape[1] != d + 1:
        raise ConfigError(f"each ball needs {d} coordinates and a radius")
    if np.any(arr[:, -1] <= 0):
        raise ConfigError("ball radii must be positive")
    return BallUnion(arr[:, :-1], arr[:, -1])


def _colander(p: Profile, geo: dict, rho: float | None = None) -> Colander:
    rho = float(rho if rho is not None else geo.get("rho", 0.0))
    kind = geo.get("kind", "cube")
    if kind == "cube":
        return make_cube_colander(p, rho, float(geo.get("fill", 1.0)))
    if "balls" not in geo:
        raise ConfigError("geometry kind 'balls' needs a balls list")
    return Colander(rho, _balls(geo["balls"], p.d), p)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_validate_profile(run: Run, cfg: dict, p: Profile):
    geo = cfg.get("geometry", {})
    n_max = int(geo.get("n_max", 100))
    with run.stage("validate"):
        seq = rho_sequence(p, n_max)
        sand = seq.sandwich(p)
    with run.stage("oscillation"):
        rows = []
        for n in range(1, n_max + 1):
            try:
                rep = oscillation_report(seq, p, n)
            except PreconditionError:
                continue
            rows.append((n, float(seq.rho[n]), rep.lhs, rep.rhs, rep.holds))
    run.add_json("profile_report.json", {"report": p.report, "sandwich": sand,
                                         "c_R": seq.c_R, "n_max": n_max})
    run.add("rho.csv", _csv(["n", "rho_n", "osc_lhs", "osc_rhs", "osc_holds"], rows))


def cmd_capacity(run: Run, cfg: dict, p: Profile):
    geo = cfg.get("geometry", {})
    if "balls" not in geo:
        raise ConfigError("capacity needs geometry.balls")
    S = _balls(geo["balls"], p.d)
    with run.stage("equilibrium"):
        mu, res = equilibrium_solve(S, int(geo.get("nodes_per_ball", 512 if p.d == 2 else 2048)))
    run.add_json("capacity.json", json.loads(res.to_json()) | {"flagged": res.flagged})
    run.add("measure.csv", _csv([f"x_{j + 1}" for j in range(p.d)] + ["weight"],
                                [tuple(x) + (w,) for x, w in zip(mu.nodes, mu.weights)]))


def cmd_measure(run: Run, cfg: dict, p: Profile):
    geo = cfg.get("geometry", {})
    with run.stage("geometry"):
        col = _colander(p, geo)
    seed = derive_seed(run.seed, "measure")
    wcfg = _wos_cfg(cfg, col.rho_outer, seed)
    start = np.asarray(geo.get("start", [0.0] * p.d), dtype=float)
    with run.stage("wos"):
        est = wos_escape(col, start, wcfg)
    if est.flagged:
        log.warning("estimate flagged: %d censored walks", est.n_censored)
    run.add("obstacles.csv", col.obstacles.to_csv())
    run.add("results.csv", result_rows_csv([result_row(
        col.rho_outer, envelope_integral(p, max(col.rho_outer, 1.0)), est, seed, wcfg.delta)]))


def cmd_layers(run: Run, cfg: dict, p: Profile):
    geo = cfg.get("geometry", {})
    n = int(geo.get("n_layers", 6))
    A = float(geo.get("A", 2.0))
    seq = rho_sequence(p, n + 2)
    rho = float(geo.get("rho", A * seq.rho[n + 1]))
    with run.stage("geometry"):
        col = _colander(p, geo, rho)
    wcfg = _wos_cfg(cfg, A * seq.rho[n + 1], derive_seed(run.seed, "layers"))
    with run.stage("layers"):
        b = layer_bounds(col, n, A, int(geo.get("m_points", 16)), wcfg)
    run.add("layers.csv", layer_report_csv(b))
    run.add_json("bounds.json", {"lower": b.lower, "upper": b.upper, "lower_se": b.lower_se,
                                 "upper_se": b.upper_se, "alpha": b.alpha, "alpha_ok": b.alpha_ok,
                                 "A": b.A, "outer_radius": b.outer_radius})


def cmd_decay_study(run: Run, cfg: dict, p: Profile):
    geo = cfg.get("geometry", {})
    if "radii" in geo:
        radii = [float(r) for r in geo["radii"]]
    elif "layers" in geo:
        ns = [int(n) for n in geo["layers"]]
        seq = rho_sequence(p, max(ns))
        radii = [float(seq.rho[n]) for n in ns]
    else:
        raise ConfigError("decay-study needs geometry.radii or geometry.layers")
    rows, ests = [], []
    with run.stage("wos"):
        for i, rho in enumerate(radii):
            col = _colander(p, geo, rho)
            seed = derive_seed(run.seed, f"decay/{i}")
            wcfg = _wos_cfg(cfg, rho, seed)
            est = wos_escape(col, np.zeros(p.d), wcfg)
            ests.append(est)
            rows.append(result_row(rho, envelope_integral(p, max(rho, 1.0)), est, seed, wcfg.delta))
    with run.stage("fit"):
        fit = decay_fit(p, radii, ests)
    run.add("decay.csv", result_rows_csv(rows))
    run.add_json("fit.json", {"c_slope": fit.c_slope, "intercept": fit.intercept, "r2": fit.r2,
                              "n_points": fit.n_points, "excluded": list(fit.excluded)})


def cmd_construct(run: Run, cfg: dict, p: Profile):
    from .construction import build, growth_profile, heart_check

    opts = dict(cfg.get("build", {}))
    growth_radii = opts.pop("growth_radii", None)
    heart_radii = opts.pop("heart_radii", [])
    opts["seed"] = derive_seed(run.seed, "construct/lattice") & 0x7FFFFFFF
    with run.stage("build"):
        cons = build(p, opts)
    run.add_json("construction.json", cons.to_dict())
    shell_rows = [(s.k, s.radius, s.R0, s.eps0, s.A, s.A_green, s.zero_radius,
                   len(cons.lattice.shells[i].centers)) for i, s in enumerate(cons.shells)]
    run.add("shells.csv", _csv(["k", "radius", "R0", "eps0", "A", "A_green", "zero_radius",
                                "n_centers"], shell_rows))
    if growth_radii is None:
        growth_radii = [s.radius + s.R0 + 0.5 for s in cons.shells[:-1]]
    with run.stage("growth"):
        rows = growth_profile(cons, growth_radii)
    run.add("growth.csv", _csv(["rho", "M_hat", "ratio", "flagged"],
                               [(r.rho, r.M_hat, r.ratio, r.flagged) for r in rows]))
    hearts = []
    with run.stage("heart"):
        for i, rho in enumerate(heart_radii):
            seed = derive_seed(run.seed, f"construct/heart/{i}")
            small = float(cons.certified_balls().radii.min())
            wcfg = _wos_cfg({"wos": {"delta": min(1e-4 * rho, 0.1 * small)} | {
                k: v for k, v in cfg.get("wos", {}).items() if k not in ("delta", "delta_rel")}},
                rho, seed)
            h = heart_check(cons, None, float(rho), wcfg)
            hearts.append((h.rho, h.lhs, h.rhs, h.M_hat, h.omega.p_hat, h.omega.stderr, h.holds))
    if hearts:
        run.add("heart.csv", _csv(["rho", "lhs", "rhs", "M_hat", "p_hat", "stderr", "holds"], hearts))


HANDLERS = {
    "validate-profile": cmd_validate_profile, "capacity": cmd_capacity, "measure": cmd_measure,
    "layers": cmd_layers, "decay-study": cmd_decay_study, "construct": cmd_construct,
}


# --------------------------------------------------------------------------
# plot data
# --------------------------------------------------------------------------

def plot_data(directory: Path) -> list[Path]:
    """Whitespace-separated two/three-column files next to the CSVs."""
    directory = Path(directory)
    made = []
    sources = [n for n in ("decay.csv", "results.csv", "layers.csv") if (directory / n).exists()]
    if not sources:
        raise ConfigError(f"no decay or layer CSV in {directory}")
    for name in sources:
        rows = read_csv((directory / name).read_text(encoding="utf-8"))
        if not rows:
            log.warning("%s has no rows", name)
        if name == "layers.csv":
            lines = [f"{r['k']} {r['inf_hat']} {r['sup_hat']}" for r in rows]
        else:
            lines = [f"{r['int_phi']} {-math.log(float(r['p_hat'])) if float(r['p_hat']) > 0 else 'nan'}"
                     for r in rows]
        target = directory / (Path(name).stem + ".dat")
        target.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        made.append(target)
    return made


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def load_config(path: Path) -> tuple[bytes, dict]:
    raw = Path(path).read_bytes()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    return raw, cfg


def run(command: str, config: Path, out: Path | None = None, seed: int | None = None) -> Path:
    """Execute one command; returns the artifact directory."""
    raw, cfg = load_config(config)
    if cfg["command"] != command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
    p = Profile.from_dict(cfg["profile"])
    master = int(seed if seed is not None else cfg.get("seed", 0))
    if out is None:
        out = Path(cfg.get("output") or f"runs/{command}-{hashlib.sha256(raw).hexdigest()[:12]}")
    out = Path(out)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    try:
        with RunLock(out):
            r = Run(out, raw, master, command)
            HANDLERS[command](r, cfg, p)
            r.commit()
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="colander-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--seed", type=int)
    pd = sub.add_parser("plot-data")
    pd.add_argument("directory", type=Path)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot-data":
            for f in plot_data(args.directory):
                print(f)
            return EXIT_OK
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        out = run(args.command, args.config, args.out, args.seed)
        print(out)
        return EXIT_OK
    except (ConfigError, ProfileError, DomainError, PreconditionError, UnsupportedDimension,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ColanderError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
