"""Command line pipeline: scatter, evolve and verify.

A run is described by one JSON document (see ``DEFAULT_CONFIG``).  Every
command writes into an output directory and records what it wrote in
``manifest.json`` together with sha256 digests, timings and per-instance
diagnostics.  Data files are written in a fixed (t, y) order so that repeated
runs produce identical bytes whatever the worker count.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import direct_scattering as ds
from . import reconstruction as rc
from . import rh_solver as rh
from . import spectral_geometry as sg

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4

TOLERANCES = {
    "model_solution": 1e-8,
    "model_zero": 1e-8,
    "odd_conj_sigma1": 1e-8,
    "unitarity_sigma1": 1e-8,
    "modulus_sigma0": 1e-6,
    "decay_slope": -1.7,
    "det_defect": 1e-8,
    "jump_residual": 1e-6,
    "solve_residual": 1e-10,
    "n_symmetry": 1e-6,
    "initial_condition": 1e-4,
    "pde_residual": 1e-3,
    "pde_order": 1.7,
    "alpha_gap": 1e-4,
    "plateau": 1e-3,
    "x_formula_factor": 10.0,
    "connection_slope": 1e-3,
    "left_right": 1e-3,
}

DEFAULT_CONFIG = {
    "bg": {"A1": 1.0, "A2": 2.0},
    "datum": {"kappa": 1.0, "window": None, "eps_tail": 1e-10},
    "contour": {"R": 20.0, "panels_per_unit": 2, "grading": 4, "order": 16, "levels": 5,
                "far_width": 1.0, "far_from": 8.0},
    "y_grid": {"start": -10.0, "stop": 10.0, "step": 0.5},
    "left_grid": None,
    "t_list": [0.0, 0.25, 0.5],
    "side": "right",
    "residuals": {"enabled": True, "t": 0.25, "y_start": -6.0, "y_stop": 6.0, "y_step": 0.5,
                  "h_y": 1e-2, "h_t": 1e-2, "halvings": 1},
    "solver": {"cond_limit": 1e12, "zero_tol": 1e-6},
    "decay_window": [5.0, 20.0],
    "initial_window": 5.0,
    "tolerances": {},
    "output": "run",
    "cache_dir": None,
}


class ConfigError(ValueError):
    pass


class IngestionError(ValueError):
    """A previously written output file is missing, altered or malformed."""


# ------------------------------------------------------------------ configuration


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict) and key != "tolerances":
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _number(value, where: str, positive: bool = False, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}: expected a finite number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive, got {value!r}")
    return int(value) if integer else float(value)


def uniform_grid(start: float, stop: float, step: float, where: str) -> tuple:
    n = (stop - start) / step
    if n < 0 or abs(n - round(n)) > 1e-9:
        raise ConfigError(f"{where}: (stop - start) must be a non-negative multiple of step")
    return tuple(float(np.round(start + k * step, 12)) for k in range(int(round(n)) + 1))


@dataclass(frozen=True)
class RunConfig:
    raw: dict = field(repr=False)
    bg: sg.BackgroundPair
    kappa: float
    window: tuple | None
    eps_tail: float
    contour: dict
    ys: tuple
    left_grid: dict | None
    ts: tuple
    side: str
    residuals: dict
    cond_limit: float
    zero_tol: float
    decay_window: tuple
    initial_window: float
    tolerances: dict
    output: Path
    cache_dir: Path

    @property
    def sides(self) -> tuple:
        return ("right", "left") if self.side == "both" else (self.side,)

    def datum(self) -> ds.InitialDatum:
        return ds.build_step_datum(self.bg, self.kappa, self.window, self.eps_tail)

    def grid(self) -> sg.ContourGrid:
        return sg.build_contour(self.bg, **self.contour)

    def left_ys(self, datum: ds.InitialDatum | None = None) -> tuple:
        """Explicit left grid, or the image of the y-grid under the y to y-tilde relation."""
        if self.left_grid is not None:
            g = self.left_grid
            return uniform_grid(g["start"], g["stop"], g["step"], "left_grid")
        datum = datum or self.datum()
        c = rc.connection_constant(datum)
        ratio = self.bg.A2 / self.bg.A1
        return tuple(float(np.round(ratio * (y - c), 12)) for y in self.ys)

    def residual_samples(self) -> list:
        r = self.residuals
        ys = uniform_grid(r["y_start"], r["y_stop"], r["y_step"], "residuals")
        return [(y, float(r["t"])) for y in ys]


def validate(raw: dict, side: str | None = None, out: str | None = None,
             tol_overrides: dict | None = None) -> RunConfig:
    """Check every field in a fixed order; the first failing constraint is raised."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    cfg = _merge(DEFAULT_CONFIG, raw)
    if side is not None:
        cfg["side"] = side
    if out is not None:
        cfg["output"] = out
    if tol_overrides:
        cfg["tolerances"] = {**cfg["tolerances"], **tol_overrides}

    A1 = _number(cfg["bg"]["A1"], "bg.A1", positive=True)
    A2 = _number(cfg["bg"]["A2"], "bg.A2", positive=True)
    if A1 > A2:
        raise ConfigError(f"bg: need A1 <= A2, got A1={A1}, A2={A2}")
    bg = sg.BackgroundPair(A1, A2, allow_equal=True)

    d = cfg["datum"]
    kappa = _number(d["kappa"], "datum.kappa", positive=True)
    eps_tail = _number(d["eps_tail"], "datum.eps_tail", positive=True)
    window = d["window"]
    if window is not None:
        if not (isinstance(window, list) and len(window) == 2):
            raise ConfigError("datum.window: expected [x_min, x_max] or null")
        window = (_number(window[0], "datum.window[0]"), _number(window[1], "datum.window[1]"))
    try:
        ds.build_step_datum(bg, kappa, window, eps_tail)
    except sg.ConfigurationError as exc:
        raise ConfigError(f"datum: {exc}") from None

    c = cfg["contour"]
    contour = {
        "R": _number(c["R"], "contour.R", positive=True),
        "panels_per_unit": _number(c["panels_per_unit"], "contour.panels_per_unit", True, True),
        "grading": _number(c["grading"], "contour.grading", True, True),
        "order": _number(c["order"], "contour.order", True, True),
        "levels": _number(c["levels"], "contour.levels", True, True),
        "far_width": _number(c["far_width"], "contour.far_width", positive=True),
        "far_from": _number(c["far_from"], "contour.far_from", positive=True),
    }
    if contour["R"] <= 1.0 / A1:
        raise ConfigError(f"contour.R: must exceed the outer branch point {1.0 / A1}")
    if contour["order"] < 4:
        raise ConfigError("contour.order: must be at least 4")

    yg = cfg["y_grid"]
    step = _number(yg["step"], "y_grid.step", positive=True)
    ys = uniform_grid(_number(yg["start"], "y_grid.start"), _number(yg["stop"], "y_grid.stop"),
                      step, "y_grid")

    left_grid = cfg["left_grid"]
    if left_grid is not None:
        if not isinstance(left_grid, dict) or set(left_grid) != {"start", "stop", "step"}:
            raise ConfigError("left_grid: expected {start, stop, step} or null")
        left_grid = {k: _number(v, f"left_grid.{k}", positive=(k == "step")) for k, v in left_grid.items()}
        uniform_grid(left_grid["start"], left_grid["stop"], left_grid["step"], "left_grid")

    if not isinstance(cfg["t_list"], list) or not cfg["t_list"]:
        raise ConfigError("t_list: expected a non-empty list")
    ts = tuple(_number(t, f"t_list[{k}]") for k, t in enumerate(cfg["t_list"]))
    if any(t < 0 for t in ts):
        raise ConfigError("t_list: times must be non-negative")
    if len(set(ts)) != len(ts):
        raise ConfigError("t_list: duplicate times")
    ts = tuple(sorted(ts))

    if cfg["side"] not in ("right", "left", "both"):
        raise ConfigError(f"side: expected right, left or both, got {cfg['side']!r}")

    r = cfg["residuals"]
    if not isinstance(r["enabled"], bool):
        raise ConfigError("residuals.enabled: expected true or false")
    residuals = {"enabled": r["enabled"]}
    for key in ("t", "y_start", "y_stop"):
        residuals[key] = _number(r[key], f"residuals.{key}")
    for key in ("y_step", "h_y", "h_t"):
        residuals[key] = _number(r[key], f"residuals.{key}", positive=True)
    residuals["halvings"] = _number(r["halvings"], "residuals.halvings", True, True)
    if residuals["t"] - residuals["h_t"] < 0:
        raise ConfigError("residuals.t: the time stencil must stay at t >= 0")
    uniform_grid(residuals["y_start"], residuals["y_stop"], residuals["y_step"], "residuals")

    cond_limit = _number(cfg["solver"]["cond_limit"], "solver.cond_limit", positive=True)
    zero_tol = _number(cfg["solver"]["zero_tol"], "solver.zero_tol", positive=True)

    dw = cfg["decay_window"]
    if not (isinstance(dw, list) and len(dw) == 2):
        raise ConfigError("decay_window: expected [lo, hi]")
    decay_window = (_number(dw[0], "decay_window[0]", positive=True), _number(dw[1], "decay_window[1]", positive=True))
    if not decay_window[0] < decay_window[1] <= contour["R"]:
        raise ConfigError("decay_window: need lo < hi <= contour.R")
    initial_window = _number(cfg["initial_window"], "initial_window", positive=True)

    if not isinstance(cfg["tolerances"], dict):
        raise ConfigError("tolerances: expected an object")
    tolerances = dict(TOLERANCES)
    for key, val in cfg["tolerances"].items():
        if key not in TOLERANCES:
            raise ConfigError(f"tolerances.{key}: unknown tolerance")
        tolerances[key] = _number(val, f"tolerances.{key}")

    if not isinstance(cfg["output"], str) or not cfg["output"]:
        raise ConfigError("output: expected a directory path")
    output = Path(cfg["output"])
    cache_dir = Path(cfg["cache_dir"]) if cfg["cache_dir"] else output / "cache"
    cfg["tolerances"] = tolerances
    return RunConfig(cfg, bg, kappa, window, eps_tail, contour, ys, left_grid, ts, cfg["side"],
                     residuals, cond_limit, zero_tol, decay_window, initial_window, tolerances,
                     output, cache_dir)


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--tol-override: expected KEY=VAL, got {item!r}")
        if key not in TOLERANCES:
            raise ConfigError(f"--tol-override: unknown tolerance {key!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise ConfigError(f"--tol-override: {key} needs a number, got {val!r}") from None
    return out


def load_config(path, **kw) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return validate(raw, **kw)


# ------------------------------------------------------------------ files and manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _t_tag(t: float) -> str:
    return format(t, ".6g").replace("-", "m")


def versions() -> dict:
    import mpmath
    import scipy
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "mpmath": mpmath.__version__}


class Run:
    """Output directory plus its manifest; files are registered as they are written."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = config.output
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / "manifest.json"
        self.manifest = json.loads(path.read_text()) if path.exists() else {}
        self.manifest["config"] = config.raw
        self.manifest["versions"] = versions()
        self.manifest.setdefault("files", {})
        self.manifest.setdefault("stages", {})

    def write(self, rel: str, text: str):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.manifest["files"][rel] = sha256_file(path)

    def forget(self, prefix: str):
        for rel in [k for k in self.manifest["files"] if k.startswith(prefix)]:
            del self.manifest["files"][rel]

    def stage(self, name: str, info: dict):
        self.manifest["stages"][name] = info

    def save(self):
        (self.root / "manifest.json").write_text(_json_text(self.manifest))


def read_registered(root: Path, manifest: dict, rel: str) -> str:
    path = root / rel
    if rel not in manifest.get("files", {}):
        raise IngestionError(f"{rel}: not listed in the manifest")
    if not path.exists():
        raise IngestionError(f"{rel}: missing")
    if sha256_file(path) != manifest["files"][rel]:
        raise IngestionError(f"{rel}: content digest does not match the manifest")
    return path.read_text()


# ------------------------------------------------------------------ scatter


def cache_key(config: RunConfig, grid: sg.ContourGrid) -> str:
    ident = {"A1": config.bg.A1, "A2": config.bg.A2, "kappa": config.kappa,
             "window": list(config.datum().describe().values()), "grid": grid.digest()}
    return hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()[:16]


def scattering_table(config: RunConfig, grid: sg.ContourGrid | None = None):
    """Load the table from the cache, or build and cache it.  Returns (table, info)."""
    grid = grid or config.grid()
    key = cache_key(config, grid)
    csv_path = config.cache_dir / f"scatter-{key}.csv"
    json_path = config.cache_dir / f"scatter-{key}.json"
    t0 = time.perf_counter()
    if csv_path.exists() and json_path.exists():
        try:
            table = ds.ScatteringTable.load(csv_path, json_path, grid)
            return table, {"cache_hit": True, "cache_key": key, "volterra_solves": 0,
                           "seconds": time.perf_counter() - t0}
        except ds.TableFormatError:
            pass            # stale or damaged cache entry: rebuild it
    table = ds.reflection(config.datum(), grid)
    config.cache_dir.mkdir(parents=True, exist_ok=True)
    table.save(csv_path, json_path)
    return table, {"cache_hit": False, "cache_key": key,
                   "volterra_solves": int(table.diagnostics.get("solves", 0)),
                   "seconds": time.perf_counter() - t0}


def scatter_report(table: ds.ScatteringTable, config: RunConfig) -> dict:
    s1 = table.segments == ds.SIGMA1
    lo, hi = config.decay_window
    return {"symmetry": ds.symmetry_report(table),
            "decay": ds.fit_decay(table.lam[s1], table.r[s1], lo, hi),
            "max_abs_r_sigma1": float(np.abs(table.r[s1]).max()) if np.any(s1) else 0.0,
            "nodes": int(table.lam.size)}


def scatter_failures(report: dict, tol: dict) -> list:
    sym = report["symmetry"]
    bad = [f"{key} = {sym[key]:.3e} > {tol[key]:.1e}"
           for key in ("odd_conj_sigma1", "unitarity_sigma1", "modulus_sigma0") if sym[key] > tol[key]]
    return bad


def cmd_scatter(config: RunConfig) -> int:
    run = Run(config)
    grid = config.grid()
    table, info = scattering_table(config, grid)
    report = scatter_report(table, config)
    run.write("scatter/table.csv", table.to_csv_text())
    run.write("scatter/table.json", _json_text(table.sidecar()))
    run.write("scatter/report.json", _json_text(report))
    info["grid"] = grid.metadata()
    info["grid_digest"] = grid.digest()
    bad = scatter_failures(report, config.tolerances)
    info["violations"] = bad
    run.stage("scatter", info)
    run.save()
    print(f"scatter: {report['nodes']} nodes, cache {'hit' if info['cache_hit'] else 'miss'}, "
          f"{info['volterra_solves']} Volterra solves, decay slope {report['decay']['slope']:.3f}")
    for line in bad:
        print(f"scatter: symmetry violation {line}", file=sys.stderr)
    return EXIT_NUMERICAL if bad else EXIT_OK


# ------------------------------------------------------------------ evolve

_WORKER = {}


def _init_worker(table, grid, cond_limit, zero_tol):
    _WORKER.update(table=table, grid=grid, cond_limit=cond_limit, zero_tol=zero_tol)


def _run_task(task):
    side, y, t, certs = task
    w = _WORKER
    return rc.solve_point(w["table"], w["grid"], y, t, side, zero_tol=w["zero_tol"],
                          cond_limit=w["cond_limit"], with_certificates=certs)


def run_tasks(tasks, table, grid, config: RunConfig, workers: int) -> dict:
    """Solve every (side, y, t, certs) task; results keyed by (side, y, t)."""
    args = (table, grid, config.cond_limit, config.zero_tol)
    if workers <= 1:
        _init_worker(*args)
        results = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=args) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    return {(task[0], task[1], task[2]): res for task, res in zip(tasks, results)}


def _plain(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def instance_record(inst: rc.Instance) -> dict:
    rec = {"side": inst.side, "y": inst.y, "t": inst.t, "status": inst.status}
    if inst.reason:
        rec["reason"] = inst.reason
    rec["certificates"] = {k: _plain(v) for k, v in sorted(inst.certs.items())}
    if inst.point is not None:
        rec["alpha_alt"] = [inst.point.alpha_alt.real, inst.point.alpha_alt.imag]
    return rec


def _point_record(p: rc.FieldPoint) -> dict:
    return {c: float(v) for c, v in zip(rc.FIELD_COLUMNS, p.row())} | {"t": p.t}


def ux_csv(line: rc.FieldLine) -> str:
    rows = ["x,u"] + [f"{p.x:.17g},{p.u_hat:.17g}" for p in line.points]
    return "\n".join(rows) + "\n"


def _residual_report(results, config: RunConfig, side: str = "right") -> dict:
    r = config.residuals
    samples = config.residual_samples()

    def field_at(y, t):
        inst = results[(side, y, t)]
        if inst.point is None:
            raise rh.NumericalError(f"stencil point ({y}, {t}) was rejected: {inst.reason}")
        return inst.point

    rep = rc.residual_suite(field_at, samples, config.bg, side, r["h_y"], r["h_t"], r["halvings"])
    for lv in rep["levels"]:
        for row in lv["rows"]:
            for k, v in row.items():
                row[k] = float(v)
    return rep


def residual_tasks(config: RunConfig, side: str = "right") -> list:
    r = config.residuals
    out = []
    for k in range(r["halvings"] + 1):
        hy, ht = r["h_y"] / 2**k, r["h_t"] / 2**k
        for (y, t) in config.residual_samples():
            out.extend((side, py, pt) for py, pt in rc.stencil_points(y, t, hy, ht))
    return out


def cmd_evolve(config: RunConfig, workers: int = 1) -> int:
    run = Run(config)
    grid = config.grid()
    table, scatter_info = scattering_table(config, grid)
    datum = config.datum()
    t0 = time.perf_counter()

    grids = {"right": config.ys, "left": config.left_ys(datum)}
    line_keys = [(side, y, t) for side in config.sides for t in config.ts for y in grids[side]]
    tasks = {key: True for key in line_keys}
    do_residuals = config.residuals["enabled"] and "right" in config.sides
    if do_residuals:
        for key in residual_tasks(config):
            tasks.setdefault(key, False)
    ordered = sorted(tasks, key=lambda k: (k[0], k[2], k[1]))
    results = run_tasks([k + (tasks[k],) for k in ordered], table, grid, config, workers)
    solve_seconds = time.perf_counter() - t0

    run.forget("evolve/")
    failures = []
    lines = {}
    records = []
    for side in config.sides:
        for t in config.ts:
            insts = [results[(side, y, t)] for y in grids[side]]
            records.extend(instance_record(i) for i in insts)
            line = rc.assemble_line(insts, t, side)
            lines[(side, t)] = line
            tag = f"{side}_t{_t_tag(t)}"
            run.write(f"evolve/lines/{tag}.csv", line.to_csv_text())
            run.write(f"evolve/lines/{tag}.flags.json", _json_text(line.flags))
            run.write(f"evolve/ux/{tag}.csv", ux_csv(rc.contiguous(line)))
            if not line.points:
                failures.append(f"{side} line at t={t}: no accepted instances")
    run.write("evolve/instances.json", _json_text(records))

    if do_residuals:
        try:
            rep = _residual_report(results, config)
            run.write("evolve/residuals.json", _json_text(rep))
        except rh.NumericalError as exc:
            failures.append(f"residual suite: {exc}")

    if config.side == "both":
        reports = []
        for t in config.ts:
            right, left = rc.contiguous(lines[("right", t)]), rc.contiguous(lines[("left", t)])
            try:
                rep = rc.left_right_consistency(right, left, config.bg, datum)
            except rc.ReconstructionError as exc:
                rep = {"t": t, "overlap": 0, "error": str(exc)}
            reports.append({k: _plain(v) for k, v in rep.items()})
        run.write("evolve/consistency.json", _json_text(reports))

    counts = {}
    for inst in results.values():
        counts[inst.status] = counts.get(inst.status, 0) + 1
    run.stage("evolve", {
        "scatter": scatter_info, "workers": workers, "solves": len(results),
        "status_counts": dict(sorted(counts.items())), "failures": failures,
        "seconds": {"solves": solve_seconds, "total": time.perf_counter() - t0},
        "grid": grid.metadata(), "grid_digest": grid.digest(),
        "instances": [{k: r[k] for k in ("side", "y", "t", "status")}
                      | {"condition": r["certificates"].get("condition"),
                         "jump_residual": r["certificates"].get("jump_residual"),
                         "solve_residual": r["certificates"].get("solve_residual")}
                      for r in records],
    })
    run.save()
    flagged = sum(1 for line in lines.values() for f in line.flags)
    print(f"evolve: {len(results)} solves, {flagged} flagged points, status {counts}")
    for msg in failures:
        print(f"evolve: {msg}", file=sys.stderr)
    return EXIT_NUMERICAL if failures else EXIT_OK


# ------------------------------------------------------------------ verify


@dataclass
class Check:
    name: str
    criterion: int
    passed: bool | None          # None: not applicable to this run
    measured: dict
    note: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "criterion": self.criterion,
                "status": "skip" if self.passed is None else "pass" if self.passed else "fail",
                "measured": {k: _plain(v) for k, v in self.measured.items()}, "note": self.note}


def model_problem_check(config: RunConfig, grid: sg.ContourGrid | None = None) -> list:
    grid = grid or config.grid()
    tol = config.tolerances
    sol = rh.solve_instance(rh.build_jump(None, grid, 0.0, 0.0, "right"))
    probes = rc._probe_points()
    err = float(np.abs(rh.evaluate_N(sol, probes) - rh.model_solution(config.bg, probes)).max())
    zero = rh.expand_at_zero(sol)
    A2 = config.bg.A2
    zerr = float(np.abs(np.array(zero.as_tuple()) - np.array([1.0, A2 / 2, A2 / 2])).max())
    return [Check("model_solution", 1, err <= tol["model_solution"], {"max_error": err, "points": probes.size}),
            Check("model_zero", 1, zerr <= tol["model_zero"], {"max_error": zerr, "a": list(zero.as_tuple())})]


def scattering_checks(report: dict, tol: dict) -> list:
    sym = report["symmetry"]
    out = [Check(key, 2, sym[key] <= tol[key], {"value": sym[key], "tolerance": tol[key]})
           for key in ("odd_conj_sigma1", "unitarity_sigma1", "modulus_sigma0")]
    slope = report["decay"]["slope"]
    out.append(Check("decay_slope", 3, slope <= tol["decay_slope"],
                     {"slope": slope, "window": [report["decay"]["lo"], report["decay"]["hi"]],
                      "points": report["decay"]["points"]}))
    return out


def certificate_checks(records: list, tol: dict) -> list:
    solved = [r for r in records if r["status"] != "rejected" and "det_defect" in r["certificates"]]
    out = []
    for key, crit in (("det_defect", 4), ("jump_residual", 4), ("solve_residual", 4)):
        worst = max((r["certificates"][key] for r in solved), default=0.0)
        out.append(Check(key, crit, bool(solved) and worst <= tol[key],
                         {"max": worst, "instances": len(solved)}))
    for key in ("sigma2_symmetry", "schwarz_symmetry"):
        worst = max((r["certificates"][key] for r in solved), default=0.0)
        out.append(Check(key, 5, bool(solved) and worst <= tol["n_symmetry"],
                         {"max": worst, "instances": len(solved)}))
    gap = max((r["certificates"]["alpha_gap"] for r in solved), default=0.0)
    out.append(Check("alpha_alternative_form", 8, None, {"max_gap": gap},
                     "the alternative closed form is reported, not asserted"))
    rejected = [r for r in records if r["status"] == "rejected"]
    out.append(Check("rejections", 4, None, {"count": len(rejected),
                                             "where": [[r["side"], r["y"], r["t"]] for r in rejected]}))
    return out


def residual_checks(rep: dict, tol: dict) -> list:
    first = rep["levels"][0]["max"]
    out = []
    for key in rc.RESIDUAL_KEYS:
        orders = rep["orders"][key]
        ok = first[key] <= tol["pde_residual"] and all(o >= tol["pde_order"] for o in orders)
        out.append(Check(f"residual_{key}", 7, ok, {"max_default_h": first[key], "orders": orders}))
    orders = rep["orders"]["alpha_gap"]
    ok = first["alpha_gap"] <= tol["alpha_gap"] and all(o >= tol["pde_order"] for o in orders)
    out.append(Check("alpha_consistency", 8, ok, {"max_default_h": first["alpha_gap"], "orders": orders}))
    return out


def line_checks(lines: dict, config: RunConfig, datum) -> list:
    tol = config.tolerances
    bg = config.bg
    out = []
    for (side, t), line in sorted(lines.items()):
        acc = rc.contiguous(line)
        if not acc.points:
            out.append(Check(f"line_{side}_t{t}", 10, False, {}, "no accepted points"))
            continue
        if side == "right" and t == 0.0:
            gap = rc.initial_condition_gap(acc, datum, config.initial_window)
            out.append(Check("initial_condition", 6, gap["sup"] <= tol["initial_condition"], gap))
        pl = rc.plateau_check(acc, bg, side)
        worst = max(pl["a1_dev"], pl["a2_dev"], pl["a3_dev"], pl["u_dev"])
        out.append(Check(f"plateau_{side}_t{t}", 9, worst <= tol["plateau"],
                         {k: v for k, v in pl.items() if k != "observed_other_end"}
                         | {"other_end_u_dev": pl["observed_other_end"]["u_dev"]}))
        xm = rc.x_map(acc, bg, side)
        out.append(Check(f"x_monotone_{side}_t{t}", 10, xm["monotone"], {"min_step": xm["min_step"]}))
        bound = tol["x_formula_factor"] * xm["quad_error"]
        out.append(Check(f"x_formulas_{side}_t{t}", 10, xm["difference"] <= bound,
                         {"difference": xm["difference"], "quad_error": xm["quad_error"], "bound": bound}))
    return out


def consistency_checks(reports: list, tol: dict, bg) -> list:
    out = []
    for rep in reports:
        t = rep["t"]
        if not rep.get("overlap"):
            out.append(Check(f"left_right_t{t}", 11, False, rep, "no overlap between the pipelines"))
            continue
        out.append(Check(f"connection_slope_t{t}", 10,
                         abs(rep["slope"] - bg.A1 / bg.A2) <= tol["connection_slope"],
                         {"slope": rep["slope"], "target": bg.A1 / bg.A2, "intercept": rep["intercept"],
                          "intercept_target": rep.get("intercept_target")}))
        out.append(Check(f"left_right_t{t}", 11, rep["u_sup"] <= tol["left_right"],
                         {"u_sup": rep["u_sup"], "overlap": rep["overlap"], "x_window": rep["x_window"]}))
    return out


def load_run(config: RunConfig) -> dict:
    """Read everything evolve/scatter wrote, checking digests and formats."""
    root = config.output
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise IngestionError(f"{mpath}: no manifest; run scatter or evolve first")
    manifest = json.loads(mpath.read_text())
    files = manifest.get("files", {})
    data = {"manifest": manifest, "lines": {}}
    if "scatter/table.csv" in files:
        data["scatter_report"] = json.loads(read_registered(root, manifest, "scatter/report.json"))
        text = read_registered(root, manifest, "scatter/table.csv")
        try:
            ds.ScatteringTable.from_csv_text(text, config.bg, config.kappa)
        except ds.TableFormatError as exc:
            raise IngestionError(f"scatter/table.csv: {exc}") from None
    for side in ("right", "left"):
        for t in config.ts:
            rel = f"evolve/lines/{side}_t{_t_tag(t)}.csv"
            if rel not in files:
                continue
            try:
                line = rc.FieldLine.from_csv_text(read_registered(root, manifest, rel), t, side)
            except rc.LineFormatError as exc:
                raise IngestionError(f"{rel}: {exc}") from None
            line.flags = json.loads(read_registered(root, manifest, rel[:-4] + ".flags.json"))
            data["lines"][(side, t)] = line
    for name in ("instances", "residuals", "consistency"):
        rel = f"evolve/{name}.json"
        if rel in files:
            data[name] = json.loads(read_registered(root, manifest, rel))
    return data


def run_checks(config: RunConfig, data: dict | None = None, grid=None) -> list:
    data = data or load_run(config)
    tol = config.tolerances
    checks = model_problem_check(config, grid)
    if "scatter_report" in data:
        checks += scattering_checks(data["scatter_report"], tol)
    else:
        grid = grid or config.grid()
        table, _ = scattering_table(config, grid)
        checks += scattering_checks(scatter_report(table, config), tol)
    if "instances" in data:
        checks += certificate_checks(data["instances"], tol)
    if "residuals" in data:
        checks += residual_checks(data["residuals"], tol)
    checks += line_checks(data["lines"], config, config.datum())
    if "consistency" in data:
        checks += consistency_checks(data["consistency"], tol, config.bg)
    return checks


def cmd_verify(config: RunConfig) -> int:
    t0 = time.perf_counter()
    checks = run_checks(config)
    failed = [c for c in checks if c.passed is False]
    report = {"checks": [c.as_dict() for c in checks], "tolerances": config.tolerances,
              "passed": not failed}
    run = Run(config)
    run.write("verify/report.json", _json_text(report))
    run.stage("verify", {"seconds": time.perf_counter() - t0, "failed": [c.name for c in failed]})
    run.save()
    for c in checks:
        status = "SKIP" if c.passed is None else "PASS" if c.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in c.measured.items() if not isinstance(v, (list, dict)))
        print(f"[{status}] criterion {c.criterion:2d} {c.name}: {shown}")
    print(f"verify: {len(checks) - len(failed)} of {len(checks)} checks did not fail")
    return EXIT_VERIFY if failed else EXIT_OK


def _fmt(v):
    return f"{v:.3e}" if isinstance(v, float) else str(v)


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mch-rh", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("scatter", "evolve", "verify"))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for evolve")
    p.add_argument("--side", choices=("right", "left", "both"), help="which RH problem(s) to solve")
    p.add_argument("--tol-override", action="append", metavar="KEY=VAL", default=[],
                   help="replace one verification tolerance; repeatable")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers: must be at least 1")
        config = load_config(args.config, side=args.side, out=args.out,
                             tol_overrides=parse_overrides(args.tol_override))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "scatter":
            return cmd_scatter(config)
        if args.command == "evolve":
            return cmd_evolve(config, args.workers)
        return cmd_verify(config)
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (rh.NumericalError, ds.ScatteringError, rc.ReconstructionError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
