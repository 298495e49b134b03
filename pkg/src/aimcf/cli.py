"""Configuration parsing and the aimcf command line.

Config files are INI-like text with fixed sections

    [domain] [anisotropy] [grid] [solver] [schedule] [outputs]

and ``key = value`` entries. Parsing is strict: unknown sections or keys,
duplicated keys and out-of-range values are all reported together, with
line numbers, rather than one at a time.

Subcommands:

    solve  --config FILE [--p P]     bracketed p-potential, report + dumps
    flow   --config FILE             Moser continuation to the flow field
    levels --flow FILE --times a,b,c contours/areas as JSON lines
    verify --suite NAME [--fast]     packaged verification suite

Exit status: 0 success or suite pass, 1 runtime failure or suite fail,
2 configuration errors. Diagnostics go to stderr as ``ERROR <code>: ...``.
JSON emitted by the CLI is key-sorted and timing-free, so identical
configs reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .anisotropy import AnisotropyError, parse_anisotropy
from .grid import (AxisRectangle, DomainError, DomainSpec, Polygon, WulffShape,
                   build_grid)
from .imcf import (MoserError, PSchedule, moser_limit, read_flow, write_flow)
from .levelset import marching_contour, perimeter_series, series_jsonl
from .pcap_solver import (Backtracking, FixedStep, P_FLOOR, SolverConfig,
                          SolverError, solve_pcap)
from .verify import SUITE_NAMES, run_suite

__all__ = ["RunConfig", "ConfigError", "parse_config", "format_config",
           "main", "console_main"]

_SECTIONS = ("domain", "anisotropy", "grid", "solver", "schedule", "outputs")
_KEYS = {
    "domain": {"shapes"},
    "anisotropy": {"norm"},
    "grid": {"r_out", "h"},
    "solver": {"p", "max_iters", "tol_grad", "tol_energy", "tol_step",
               "step_rule", "smoothing_delta", "huber_eta"},
    "schedule": {"values", "stop_tol", "limit_mode"},
    "outputs": {"field_dumps", "contour_times", "report_path"},
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class Outputs:
    field_dumps: bool = False
    contour_times: tuple = ()
    report_path: str = "aimcf_report.json"


@dataclass
class RunConfig:
    domain: DomainSpec
    anisotropy: object
    r_out: float
    h: float
    solver: SolverConfig
    schedule: PSchedule
    limit_mode: str = "extrapolate"
    outputs: Outputs = field(default_factory=Outputs)


def _parse_shape(text, F, err):
    text = text.strip()
    try:
        if text.startswith("wulff:"):
            cx, cy, r = (float(s) for s in text[6:].split(","))
            return WulffShape(F, (cx, cy), r)
        if text.startswith("rect:"):
            x0, x1, y0, y1 = (float(s) for s in text[5:].split(","))
            return AxisRectangle(x0, x1, y0, y1)
        if text.startswith("polygon:"):
            verts = [tuple(float(s) for s in chunk.split(","))
                     for chunk in text[8:].split(";")]
            return Polygon(verts)
    except (ValueError, DomainError) as exc:
        err(f"bad shape {text!r}: {exc}")
        return None
    err(f"unknown shape syntax {text!r} (wulff:, rect: or polygon:)")
    return None


def _format_shape(shape):
    if isinstance(shape, WulffShape):
        c = shape.center
        return f"wulff:{c[0]!r},{c[1]!r},{shape.r!r}"
    if isinstance(shape, AxisRectangle):
        return f"rect:{shape.xmin!r},{shape.xmax!r},{shape.ymin!r},{shape.ymax!r}"
    rows = ";".join(f"{x!r},{y!r}" for x, y in shape.vertices)
    return f"polygon:{rows}"


def parse_config(text):
    """Parse and fully validate a run configuration; collect every error."""
    errors = []
    entries = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                errors.append(f"line {lineno}: unknown section [{section}]")
                section = None
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if section is None:
            errors.append(f"line {lineno}: entry outside any known section")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS[section]:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        full = (section, key)
        if full in entries:
            errors.append(
                f"line {lineno}: duplicate key {key!r} in [{section}]"
                f" (first set on line {entries[full][1]})")
            continue
        entries[full] = (val, lineno)

    def get(section, key, default=None):
        return entries.get((section, key), (default, None))[0]

    def fail(msg):
        errors.append(msg)

    # anisotropy first: shapes may reference it
    F = None
    norm_text = get("anisotropy", "norm")
    if norm_text is None:
        fail("[anisotropy] norm is required")
    else:
        try:
            F = parse_anisotropy(norm_text)
        except AnisotropyError as exc:
            fail(f"[anisotropy] norm: {exc}")

    shapes = []
    shapes_text = get("domain", "shapes")
    if shapes_text is None:
        fail("[domain] shapes is required")
    elif F is not None:
        for chunk in shapes_text.split("|"):
            s = _parse_shape(chunk, F, fail)
            if s is not None:
                shapes.append(s)

    def parse_float(section, key, default, lo=None, hi=None, lo_strict=True):
        raw = get(section, key)
        if raw is None:
            return default
        try:
            v = float(raw)
        except ValueError:
            fail(f"[{section}] {key}: not a number: {raw!r}")
            return default
        if lo is not None and (v <= lo if lo_strict else v < lo):
            fail(f"[{section}] {key} = {v} out of range (must be > {lo})")
            return default
        if hi is not None and v >= hi:
            fail(f"[{section}] {key} = {v} out of range (must be < {hi})")
            return default
        return v

    r_out = parse_float("grid", "r_out", 8.0, lo=0.0)
    h = parse_float("grid", "h", 1 / 64, lo=0.0)

    p = parse_float("solver", "p", 1.5)
    if p is not None and not (P_FLOOR <= p < 2.0):
        fail(f"[solver] p = {p} violates the (1, N) constraint for N = 2 "
             f"(accepted range is [{P_FLOOR}, 2) )")
        p = 1.5
    max_iters_raw = get("solver", "max_iters", "1500")
    try:
        max_iters = int(max_iters_raw)
        if max_iters < 1:
            raise ValueError
    except ValueError:
        fail(f"[solver] max_iters: expected a positive integer, got {max_iters_raw!r}")
        max_iters = 1500
    tol_grad = parse_float("solver", "tol_grad", 1e-9, lo=0.0)
    tol_energy = parse_float("solver", "tol_energy", 1e-15, lo=0.0)
    tol_step = parse_float("solver", "tol_step", 1e-4, lo=0.0, lo_strict=False)
    smoothing_delta = get("solver", "smoothing_delta")
    if smoothing_delta is not None:
        smoothing_delta = parse_float("solver", "smoothing_delta", None, lo=0.0)
    huber_eta = parse_float("solver", "huber_eta", 1e-3, lo=0.0, lo_strict=False)

    step_rule = Backtracking()
    rule_text = get("solver", "step_rule")
    if rule_text is not None:
        try:
            if rule_text.startswith("fixed:"):
                step_rule = FixedStep(float(rule_text[6:]))
            elif rule_text.startswith("backtracking:"):
                beta, c = (float(s) for s in rule_text[13:].split(","))
                step_rule = Backtracking(beta, c)
            else:
                raise ValueError(f"unknown step rule {rule_text!r}")
        except ValueError as exc:
            fail(f"[solver] step_rule: {exc}")

    sched = PSchedule.default()
    values_text = get("schedule", "values")
    stop_tol = parse_float("schedule", "stop_tol", 0.01, lo=0.0)
    try:
        if values_text is not None:
            vals = tuple(float(s) for s in values_text.split(","))
            sched = PSchedule(vals, stop_tol)
        else:
            sched = PSchedule.default(stop_tol=stop_tol)
    except ValueError as exc:
        fail(f"[schedule] values: {exc}")
    limit_mode = get("schedule", "limit_mode", "extrapolate")
    if limit_mode not in ("extrapolate", "last"):
        fail(f"[schedule] limit_mode must be 'extrapolate' or 'last', got {limit_mode!r}")
        limit_mode = "extrapolate"

    dumps_text = get("outputs", "field_dumps", "off")
    if dumps_text not in ("on", "off"):
        fail(f"[outputs] field_dumps must be on or off, got {dumps_text!r}")
        dumps_text = "off"
    times = ()
    times_text = get("outputs", "contour_times")
    if times_text:
        try:
            times = tuple(float(s) for s in times_text.split(","))
        except ValueError:
            fail(f"[outputs] contour_times: expected comma-separated numbers")
    report_path = get("outputs", "report_path", "aimcf_report.json")

    if errors:
        raise ConfigError(errors)

    solver = SolverConfig(p=p, max_iters=max_iters, tol_grad=tol_grad,
                          tol_energy=tol_energy, tol_step=tol_step,
                          step_rule=step_rule, smoothing_delta=smoothing_delta,
                          huber_eta=huber_eta)
    return RunConfig(domain=DomainSpec(shapes), anisotropy=F, r_out=r_out, h=h,
                     solver=solver, schedule=sched, limit_mode=limit_mode,
                     outputs=Outputs(dumps_text == "on", times, report_path))


def format_config(cfg):
    """Canonical text form; parse(format_config(parse(text))) is identity."""
    s = cfg.solver
    if isinstance(s.step_rule, FixedStep):
        rule = f"fixed:{s.step_rule.size!r}"
    else:
        rule = f"backtracking:{s.step_rule.beta!r},{s.step_rule.c_armijo!r}"
    lines = [
        "[domain]",
        "shapes = " + " | ".join(_format_shape(sh) for sh in cfg.domain.shapes),
        "",
        "[anisotropy]",
        f"norm = {cfg.anisotropy.descriptor()}",
        "",
        "[grid]",
        f"r_out = {cfg.r_out!r}",
        f"h = {cfg.h!r}",
        "",
        "[solver]",
        f"p = {s.p!r}",
        f"max_iters = {s.max_iters}",
        f"tol_grad = {s.tol_grad!r}",
        f"tol_energy = {s.tol_energy!r}",
        f"tol_step = {s.tol_step!r}",
        f"step_rule = {rule}",
        f"huber_eta = {s.huber_eta!r}",
    ]
    if s.smoothing_delta is not None:
        lines.append(f"smoothing_delta = {s.smoothing_delta!r}")
    lines += [
        "",
        "[schedule]",
        "values = " + ",".join(repr(v) for v in cfg.schedule.values),
        f"stop_tol = {cfg.schedule.stop_tol!r}",
        f"limit_mode = {cfg.limit_mode}",
        "",
        "[outputs]",
        f"field_dumps = {'on' if cfg.outputs.field_dumps else 'off'}",
        f"report_path = {cfg.outputs.report_path}",
    ]
    if cfg.outputs.contour_times:
        lines.append("contour_times = " + ",".join(repr(t) for t in cfg.outputs.contour_times))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# command implementations


def _atomic_write_text(path, text):
    d = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".aimcf-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items()
                if k not in ("wall_time", "solve_seconds")}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError([f"cannot read config {path!r}: {exc}"]) from exc


def _run_report_json(rep):
    return {
        "p": rep.p,
        "iterations": rep.iterations,
        "final_energy": rep.final_energy,
        "final_grad_norm": rep.final_grad_norm,
        "sandwich_gap": rep.sandwich_gap,
        "converged": rep.converged,
        "runs": {
            label: {
                "iterations": r.iterations,
                "final_energy": r.final_energy,
                "final_grad_norm": r.final_grad_norm,
                "converged": r.converged,
                "stop_reason": r.stop_reason,
                "clip_active": r.clip_active,
            } for label, r in rep.runs.items()
        },
    }


def _cmd_solve(args):
    cfg = _load_config(args.config)
    solver = cfg.solver
    if args.p is not None:
        from dataclasses import replace
        if not (P_FLOOR <= args.p < 2.0):
            raise ConfigError([f"--p {args.p} violates the (1, N) constraint for N = 2"])
        solver = replace(solver, p=args.p)
    domain = build_grid(cfg.domain, cfg.anisotropy, cfg.r_out, cfg.h)
    ul, uu, rep = solve_pcap(domain, cfg.anisotropy, solver)
    doc = _run_report_json(rep)
    doc.update(r1=domain.r1, r2=domain.r2, r1_center=list(domain.r1_center))
    out = _json_dumps(doc)
    _atomic_write_text(cfg.outputs.report_path, out + "\n")
    if cfg.outputs.field_dumps:
        from .grid import write_field_file
        stem = os.path.splitext(cfg.outputs.report_path)[0]
        write_field_file(ul, stem + "_lower.field")
        write_field_file(uu, stem + "_upper.field")
    print(out)
    return 0


def _cmd_flow(args):
    cfg = _load_config(args.config)
    domain = build_grid(cfg.domain, cfg.anisotropy, cfg.r_out, cfg.h)
    flow = moser_limit(domain, cfg.anisotropy, cfg.schedule, cfg.solver,
                       limit_mode=cfg.limit_mode)
    stem = os.path.splitext(cfg.outputs.report_path)[0] + ".flow"
    write_flow(flow, stem, anisotropy=cfg.anisotropy)
    rep = flow.provenance
    doc = {
        "r1": flow.r1,
        "r2": flow.r2,
        "schedule": list(rep.schedule),
        "sup_diffs": [None if not np.isfinite(d) else d for d in rep.sup_diffs],
        "converged": rep.converged,
        "limit_mode": rep.limit_mode,
        "stages": [
            {"p": r.p, "iterations": r.solve_report.iterations,
             "sandwich_gap": r.solve_report.sandwich_gap}
            for r in rep.records
        ],
        "flow_files": [stem + ".field", stem + ".json"],
    }
    out = _json_dumps(doc)
    _atomic_write_text(cfg.outputs.report_path, out + "\n")
    print(out)
    return 0


def _cmd_levels(args):
    if not os.path.exists(args.flow):
        raise ConfigError([f"flow file {args.flow!r} does not exist"])
    flow = read_flow(args.flow)
    norm_text = getattr(flow, "anisotropy_text", None)
    if norm_text is None:
        raise ConfigError(["flow sidecar lacks the anisotropy descriptor"])
    F = parse_anisotropy(norm_text)
    try:
        times = [float(s) for s in args.times.split(",")]
    except ValueError:
        raise ConfigError([f"--times expects comma-separated numbers, got {args.times!r}"])
    series = perimeter_series(flow, F, times, closed_width=args.width)
    contours = [marching_contour(flow, t) for t in sorted(times)]
    lines = series_jsonl(series, contours)
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write_text(args.out, text)
    print(text, end="")
    return 0


def _cmd_verify(args):
    if args.suite not in SUITE_NAMES:
        raise ConfigError(
            [f"unknown suite {args.suite!r}; choose from {', '.join(SUITE_NAMES)}"])
    report = run_suite(args.suite, fast=args.fast)
    public = {k: v for k, v in report.items() if not k.startswith("_")}
    print(_json_dumps(_strip_timing(public)))
    return 0 if report["pass"] else 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="aimcf", add_help=True)
    sub = ap.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="bracketed p-capacitary potential")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--p", type=float, default=None)

    p_flow = sub.add_parser("flow", help="Moser continuation to the flow field")
    p_flow.add_argument("--config", required=True)

    p_levels = sub.add_parser("levels", help="contours and perimeters of a flow")
    p_levels.add_argument("--flow", required=True)
    p_levels.add_argument("--times", required=True)
    p_levels.add_argument("--width", type=float, default=None)
    p_levels.add_argument("--out", default=None)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("--suite", required=True)
    p_verify.add_argument("--fast", action="store_true")

    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    handlers = {"solve": _cmd_solve, "flow": _cmd_flow,
                "levels": _cmd_levels, "verify": _cmd_verify}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"ERROR CONFIG: {e}", file=sys.stderr)
        return 2
    except (DomainError, AnisotropyError) as exc:
        print(f"ERROR CONFIG: {exc}", file=sys.stderr)
        return 2
    except (SolverError, MoserError) as exc:
        print(f"ERROR SOLVE: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR IO: {exc}", file=sys.stderr)
        return 1


def console_main():
    raise SystemExit(main())
