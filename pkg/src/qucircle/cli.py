"""Command-line entry point.

Exit codes: 0 success, 1 computation failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .circle import REPRESENTATIONS, SearchError, SingularFeedthroughError, max_slope_search
from .der import MODEL_KINDS, PT2_TAR, build_control_loop, build_pt2
from .grid import GridError, dump_grid, import_simbench, load_grid_file, parse_der_params, penetration_factor
from .lti import freq_response, step_response
from .powerflow import PowerFlowError, sensitivity, solve
from .pt2fit import FitConfig, FitError, TarStepSpec, fit_der, fit_tar
from .timesim import COUPLINGS, Ramp, SimScenario, classify, find_sim_threshold, simulate, write_trace_csv

log = logging.getLogger("qucircle")

TOOL = "qucircle"
TAR_BAND = [6.0, 20.0]
SIMBENCH_FILES = ("Node.csv", "Line.csv", "Transformer.csv", "Load.csv", "RES.csv")

_NUM = {"type": "number"}
REPORT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "grid_id", "representation", "criterion", "tar_recommendation_band",
        "verdict_trace", "search", "penetration_kw_per_km", "timestamps", "tool",
    ],
    "properties": {
        "grid_id": {"type": "string"},
        "representation": {"enum": list(REPRESENTATIONS)},
        "criterion": {"const": "circle"},
        "m_max": _NUM,
        "tar_recommendation_band": {"const": TAR_BAND},
        "verdict_trace": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["m", "spr"],
                "properties": {"m": _NUM, "spr": {"type": "boolean"}},
            },
        },
        "search": {
            "type": "object",
            "additionalProperties": False,
            "required": ["m_start", "m_cap", "tolerance", "delta", "pade_order", "no_limit"],
            "properties": {
                "m_start": _NUM, "m_cap": _NUM, "tolerance": _NUM, "delta": _NUM,
                "pade_order": {"type": "integer"}, "no_limit": {"type": "boolean"},
                "bracket_low": _NUM, "bracket_high": {"type": ["number", "null"]},
                "evaluations": {"type": "integer"}, "error": {"type": "string"},
            },
        },
        "sim_threshold": {
            "type": "object",
            "additionalProperties": False,
            "required": ["slope", "no_limit", "evaluations", "history"],
            "properties": {
                "slope": _NUM, "no_limit": {"type": "boolean"}, "evaluations": {"type": "integer"},
                "history": {"type": "array"},
            },
        },
        "penetration_kw_per_km": {"type": ["number", "null"]},
        "seed": {"type": ["integer", "null"]},
        "timestamps": {
            "type": "object",
            "required": ["started", "finished"],
            "properties": {"started": {"type": "string"}, "finished": {"type": "string"}},
        },
        "tool": {
            "type": "object",
            "required": ["name", "version"],
            "properties": {"name": {"const": TOOL}, "version": {"type": "string"}},
        },
    },
}


class UsageError(Exception):
    """Bad command-line input; maps to exit code 2."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _positive(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not x > 0 or not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return x


def _non_negative(text: str) -> float:
    x = float(text)
    if x < 0 or not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"must be non-negative: {text}")
    return x


def _emit_json(doc, out: str | None) -> None:
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n")
        log.info("wrote %s", out)
    else:
        print(text)


def _grid(args):
    if not args.grid:
        raise UsageError("--grid is required for this command")
    return load_grid_file(args.grid)


# assess ------------------------------------------------------------------------


def _penetration(grid):
    try:
        return penetration_factor(grid)
    except GridError:
        return None


def assessment_report(grid, grid_id: str, representation: str, kq, args) -> tuple[dict, bool]:
    """Run one slope search and build its report; the flag is False on failure."""
    started = _now()
    search = {
        "m_start": args.m_start, "m_cap": args.m_cap, "tolerance": args.tolerance,
        "delta": args.delta, "pade_order": args.pade_order, "no_limit": False,
    }
    report = {
        "grid_id": grid_id,
        "representation": representation,
        "criterion": "circle",
        "tar_recommendation_band": list(TAR_BAND),
        "verdict_trace": [],
        "search": search,
        "penetration_kw_per_km": _penetration(grid),
        "seed": args.seed,
    }
    ok = True
    try:
        res = max_slope_search(
            grid, kq, representation, m_start=args.m_start, m_cap=args.m_cap,
            tolerance=args.tolerance, delta=args.delta, pade_order=args.pade_order,
        )
    except (SearchError, SingularFeedthroughError) as exc:
        search["error"] = str(exc)
        ok = False
    else:
        report["m_max"] = res.m_max
        report["verdict_trace"] = [{"m": m, "spr": v} for m, v in res.per_step_verdicts]
        search.update(
            no_limit=res.no_limit, bracket_low=res.bracket_low,
            bracket_high=None if math.isinf(res.bracket_high) else res.bracket_high,
            evaluations=res.evaluations,
        )
    report["timestamps"] = {"started": started, "finished": _now()}
    report["tool"] = {"name": TOOL, "version": __version__}
    return report, ok


def _format_m(report: dict) -> str:
    if "m_max" not in report:
        return "failed"
    if report["search"]["no_limit"]:
        return f"no limit <= {report['m_max']:g}"
    return f"{report['m_max']:.1f}"


def table_row(reports: list[dict]) -> str:
    """Two-line table: representations as columns, certified slopes (%/p.u.) below."""
    names = ["grid"] + [r["representation"] for r in reports]
    values = [reports[0]["grid_id"]] + [_format_m(r) for r in reports]
    widths = [max(len(a), len(b)) + 2 for a, b in zip(names, values)]
    head = "".join(n.ljust(w) for n, w in zip(names, widths))
    row = "".join(v.ljust(w) for v, w in zip(values, widths))
    return head.rstrip() + "\n" + row.rstrip()


def cmd_assess(args) -> int:
    grid = _grid(args)
    grid_id = Path(args.grid).stem
    sol = solve(grid)
    kq = sensitivity(grid, sol, "q")
    reps = list(REPRESENTATIONS) if args.representation == "all" else [args.representation]
    reports, all_ok = [], True
    for rep in reps:
        log.info("searching %s", rep)
        report, ok = assessment_report(grid, grid_id, rep, kq, args)
        all_ok &= ok
        reports.append(report)
    if args.sim:
        log.info("simulation threshold search")
        thr = find_sim_threshold(grid, "orig", m_cap=args.sim_cap, dt=args.dt)
        for r in reports:
            r["sim_threshold"] = thr.to_json()
    for r in reports:
        jsonschema.validate(r, REPORT_SCHEMA)
    doc = reports[0] if len(reports) == 1 else reports
    if args.out:
        _emit_json(doc, args.out)
        print(table_row(reports))
    else:
        _emit_json(doc, None)
        print(table_row(reports), file=sys.stderr)
    return 0 if all_ok else 1


# fit-pt2 -----------------------------------------------------------------------


def cmd_fit_pt2(args) -> int:
    cfg = FitConfig(args.band_low, args.band_high, args.points)
    if args.mode == "tar":
        try:
            spec = TarStepSpec(args.zeta, args.t90, args.tstl, args.settle_band)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        fit = fit_tar(spec, cfg)
    else:
        raw = {}
        if args.params:
            path = Path(args.params)
            if not path.is_file():
                raise UsageError(f"params file not found: {path}")
            raw = json.loads(path.read_text())
        params = parse_der_params(args.model, raw)
        model = build_pt2(params) if args.model == "pt2" else build_control_loop(args.model, params)
        fit = fit_der(model, cfg)
    _emit_json(fit.to_json(), args.out)
    return 0


# simulate ----------------------------------------------------------------------


def cmd_simulate(args) -> int:
    grid = _grid(args)
    ramp = Ramp(args.ramp_start, args.ramp_duration, args.p_initial, args.p_final)
    try:
        scenario = SimScenario(
            grid, args.slope, ramp, horizon=args.horizon, dt=args.dt, grid_coupling=args.coupling,
            representation=args.representation, saturation=not args.no_saturation,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trace = simulate(scenario)
    if args.out:
        write_trace_csv(trace, args.out)
        log.info("wrote %s", args.out)
    c = classify(trace, ramp.ramp_end, decay_threshold=args.decay_threshold)
    doc = {"slope": args.slope, "coupling": args.coupling, "dt": args.dt, **c.to_json()}
    if trace.truncated:
        doc["message"] = trace.message
    print(json.dumps(doc, indent=2))
    return 0


# responses ---------------------------------------------------------------------


def response_tables(kind: str, params, horizon: float, cfg: FitConfig):
    """Step and frequency responses of a DER loop and its two PT2 surrogates."""
    orig = build_pt2(params) if kind == "pt2" else build_control_loop(kind, params)
    models = {"orig": orig, "pt2-der": build_pt2(fit_der(orig, cfg).params), "pt2-tar": build_pt2(PT2_TAR)}
    dt = horizon / 4000
    t = np.linspace(0.0, horizon, 4001)
    steps = {}
    for name, m in models.items():
        tt, y = step_response(m, horizon, dt)
        steps[name] = np.interp(t, tt, y)
    w = cfg.frequencies()
    freq = {}
    for name, m in models.items():
        g = freq_response(m, w)
        freq[name] = (np.abs(g), np.degrees(np.unwrap(np.angle(g))))
    return t, steps, w, freq


def cmd_responses(args) -> int:
    raw = {}
    if args.params:
        path = Path(args.params)
        if not path.is_file():
            raise UsageError(f"params file not found: {path}")
        raw = json.loads(path.read_text())
    params = parse_der_params(args.model, raw)
    cfg = FitConfig(args.band_low, args.band_high, args.points)
    t, steps, w, freq = response_tables(args.model, params, args.horizon, cfg)
    out = Path(args.out or "responses")
    out.mkdir(parents=True, exist_ok=True)
    names = list(steps)
    with open(out / "step.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time_s"] + [n.replace("-", "_") for n in names])
        for k in range(t.size):
            wr.writerow([f"{t[k]:.6g}"] + [f"{steps[n][k]:.10g}" for n in names])
    with open(out / "frequency.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        cols = []
        for n in names:
            key = n.replace("-", "_")
            cols += [f"mag_{key}", f"phase_{key}_deg"]
        wr.writerow(["w_rad_s"] + cols)
        for k in range(w.size):
            vals = []
            for n in names:
                vals += [f"{freq[n][0][k]:.10g}", f"{freq[n][1][k]:.10g}"]
            wr.writerow([f"{w[k]:.10g}"] + vals)
    print(out / "step.csv")
    print(out / "frequency.csv")
    return 0


# grid utilities ----------------------------------------------------------------


def cmd_import_simbench(args) -> int:
    folder = Path(args.directory)
    if not folder.is_dir():
        raise UsageError(f"SimBench directory not found: {folder}")
    texts = []
    for name in SIMBENCH_FILES:
        f = folder / name
        texts.append(f.read_text() if f.is_file() else "")
    grid = import_simbench(*texts, base_power=args.base_mva, slack=args.slack)
    _emit_json(dump_grid(grid), args.out)
    return 0


def cmd_powerflow(args) -> int:
    grid = _grid(args)
    sol = solve(grid, args.tolerance, args.max_iterations)
    _emit_json(sol.to_json(), args.out)
    return 0


def cmd_sensitivity(args) -> int:
    grid = _grid(args)
    sol = solve(grid)
    _emit_json(sensitivity(grid, sol, args.wrt).to_json(), args.out)
    return 0


# parser ------------------------------------------------------------------------


def _add_global(p: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands accept the global flags too, without clobbering earlier values
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--grid", metavar="PATH", default=default, help="grid document (JSON)")
    p.add_argument("--out", metavar="PATH", default=default, help="output file or directory")
    p.add_argument("--seed", type=int, default=default, help="seed recorded in reports")
    p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _band_flags(p):
    p.add_argument("--band-low", type=_positive, default=1e-2, help="fit band lower edge, rad/s")
    p.add_argument("--band-high", type=_positive, default=1e2, help="fit band upper edge, rad/s")
    p.add_argument("--points", type=int, default=200, help="log-spaced frequency points")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description="Q(U) slope certification for distribution grids")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="largest slope certified by the circle criterion")
    _add_global(p, suppress=True)
    p.add_argument("--representation", choices=REPRESENTATIONS + ("all",), default="orig")
    p.add_argument("--m-start", type=_positive, default=1.0)
    p.add_argument("--m-cap", type=_positive, default=1000.0)
    p.add_argument("--tolerance", type=_positive, default=0.1)
    p.add_argument("--delta", type=_positive, default=1e-8)
    p.add_argument("--pade-order", type=int, choices=range(1, 6), default=3)
    p.add_argument("--sim", action="store_true", help="also search the simulation threshold")
    p.add_argument("--sim-cap", type=_positive, default=5000.0)
    p.add_argument("--dt", type=_positive, default=1e-3, help="simulation step for --sim")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("fit-pt2", help="fit a PT2 to step specs or to a DER model")
    _add_global(p, suppress=True)
    p.add_argument("--mode", choices=("tar", "der"), required=True)
    p.add_argument("--zeta", type=_non_negative, default=0.15, help="overshoot as a fraction")
    p.add_argument("--t90", type=_positive, default=5.0)
    p.add_argument("--tstl", type=_positive, default=8.0)
    p.add_argument("--settle-band", type=_positive, default=0.05)
    p.add_argument("--model", choices=MODEL_KINDS, default="wf-frc")
    p.add_argument("--params", metavar="PATH", help="JSON control parameters")
    _band_flags(p)
    p.set_defaults(func=cmd_fit_pt2)

    p = sub.add_parser("simulate", help="time simulation of a ramp scenario")
    _add_global(p, suppress=True)
    p.add_argument("--slope", type=_non_negative, required=True, help="%%/p.u.")
    p.add_argument("--coupling", choices=COUPLINGS, default="linearized")
    p.add_argument("--dt", type=_positive, default=1e-3)
    p.add_argument("--horizon", type=_positive, default=None)
    p.add_argument("--representation", choices=REPRESENTATIONS, default="orig")
    p.add_argument("--ramp-start", type=_non_negative, default=1.0)
    p.add_argument("--ramp-duration", type=_non_negative, default=5.0)
    p.add_argument("--p-initial", type=_non_negative, default=0.1)
    p.add_argument("--p-final", type=_non_negative, default=1.0)
    p.add_argument("--no-saturation", action="store_true")
    p.add_argument("--decay-threshold", type=_positive, default=0.5)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("responses", help="step and frequency response tables")
    _add_global(p, suppress=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="wf-frc")
    p.add_argument("--params", metavar="PATH")
    p.add_argument("--horizon", type=_positive, default=20.0)
    _band_flags(p)
    p.set_defaults(func=cmd_responses)

    p = sub.add_parser("import-simbench", help="convert SimBench CSV tables to a grid document")
    _add_global(p, suppress=True)
    p.add_argument("directory", help="folder with Node.csv, Line.csv, Transformer.csv, Load.csv, RES.csv")
    p.add_argument("--slack", default=None)
    p.add_argument("--base-mva", type=_positive, default=100.0)
    p.set_defaults(func=cmd_import_simbench)

    p = sub.add_parser("powerflow", help="solve the AC power flow")
    _add_global(p, suppress=True)
    p.add_argument("--tolerance", type=_positive, default=1e-8)
    p.add_argument("--max-iterations", type=int, default=50)
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("sensitivity", help="voltage sensitivity matrix at the DER nodes")
    _add_global(p, suppress=True)
    p.add_argument("--wrt", choices=("q", "p"), default="q")
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"{TOOL}: {exc}", file=sys.stderr)
        return 2
    except (UsageError, GridError, json.JSONDecodeError) as exc:
        print(f"{TOOL}: {exc}", file=sys.stderr)
        return 2
    except (PowerFlowError, FitError, SearchError, SingularFeedthroughError, RuntimeError, ValueError) as exc:
        print(f"{TOOL}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
