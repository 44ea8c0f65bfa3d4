"""Command-line front end.

Synopsis::

    gridloop <verb> [--case PATH] [--scenario PATH] [--out DIR] [--override K=V]...

Verbs: validate, pf, run, game, compare, certify.  Exit codes: 0 success,
1 validation/usage error, 2 numerical failure (non-convergence).  Progress
lines on stdout are ``k=<iter> residual=<r> maxviol=<v>``; all numbers are
printed with 12 significant digits.  ``GRIDLOOP_LOG`` in {error, info,
debug} controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import figures, sim
from .errors import (
    GridloopError,
    Infeasible,
    NonConvergence,
    SingularJacobian,
    UsageError,
)
from .netmodel import parse_json_case, parse_matpower_case
from .powerflow import (
    Disturbance,
    InputLayout,
    PFOptions,
    compute_outputs,
    dump_state_csv,
    solve_pf,
)

log = logging.getLogger(__name__)

_SYNOPSIS = ("usage: gridloop <verb> [--case PATH] [--scenario PATH] "
             "[--out DIR] [--override K=V]...\n"
             "verbs: validate pf run game compare certify")


def _g12(x) -> str:
    return format(float(x), ".12g")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gridloop", add_help=True)
    subs = parser.add_subparsers(dest="verb")

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario JSON path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--override", action="append", default=[],
                       metavar="K=V", help="dotted-path scenario override")

    p_val = subs.add_parser("validate", help="parse and validate a case file")
    p_val.add_argument("case", nargs="?", default=None)
    p_val.add_argument("--case", dest="case_flag", default=None)

    p_pf = subs.add_parser("pf", help="solve one power flow")
    p_pf.add_argument("--case", required=True)
    p_pf.add_argument("--out", default=None)

    for verb, help_ in (("run", "closed-loop run (centralized/single-area)"),
                        ("game", "closed-loop multi-area game run"),
                        ("compare", "multi-area vs centralized comparison"),
                        ("certify", "run the game and certify the equilibrium")):
        common(subs.add_parser(verb, help=help_))
    return parser


def _read_case(path_str: str):
    path = Path(path_str)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return parse_json_case(text)
    return parse_matpower_case(text)


def _apply_override(doc: dict, spec: str) -> None:
    if "=" not in spec:
        raise UsageError(f"override {spec!r} is not of the form K=V")
    key, raw = spec.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise UsageError(f"override path {key!r} crosses a non-object")
    node[parts[-1]] = value


def _load_scenario(args) -> sim.Scenario:
    path = Path(args.scenario)
    doc = json.loads(path.read_text())
    for spec in args.override:
        _apply_override(doc, spec)
    return sim.scenario_from_dict(doc, base_dir=path.parent)


def _progress(k: int, residual: float, maxviol: float) -> None:
    print(f"k={k} residual={_g12(residual)} maxviol={_g12(maxviol)}")


def _emit(scenario: sim.Scenario, log_: sim.SimLog, outdir,
          certificate=None) -> None:
    paths = sim.emit_series(log_, outdir, certificate=certificate)
    paths += figures.render_figures(log_, outdir)
    for p in paths:
        log.info("wrote %s", p)


def _cmd_validate(args) -> int:
    path = args.case or args.case_flag
    if path is None:
        raise UsageError("validate needs a case path")
    case = _read_case(path)
    pos = case.bus_positions()
    kind_of = {g: case.buses[pos[g.bus]].kind for g in case.generators}
    n_slack = sum(1 for k in kind_of.values() if k.value == "Slack")
    n_pv = sum(1 for k in kind_of.values() if k.value == "PV")
    n_ctrl = sum(1 for g in case.generators if g.controllable)
    print(f"{case.n_bus} buses, {case.n_branch} branches")
    print(f"generators: {n_slack} slack, {n_pv} PV, {n_ctrl} controllable PQ")
    return 0


def _cmd_pf(args) -> int:
    case = _read_case(args.case)
    layout = InputLayout.from_case(case)
    u = layout.default_input(case)
    w = Disturbance.from_case(case)
    state = solve_pf(case, u, w, PFOptions(), layout)
    y = compute_outputs(case, state)
    n = case.n_bus
    print(f"converged=true vmin={_g12(np.min(state.v_mag))} "
          f"vmax={_g12(np.max(state.v_mag))} imax={_g12(np.max(y[n:]) if y.size > n else 0.0)}")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "state.csv").write_text(dump_state_csv(case, state))
    return 0


def _cmd_run(args, mode: str | None) -> int:
    scenario = _load_scenario(args)
    log_ = sim.run_closed_loop(scenario, mode=mode, progress=_progress)
    if args.out:
        _emit(scenario, log_, args.out)
    steady = "none" if log_.steady_at is None else str(log_.steady_at)
    print(f"done periods={log_.n_periods()} steady_at={steady} "
          f"final_residual={_g12(log_.residual[-1])} "
          f"final_maxviol={_g12(log_.max_violation[-1])}")
    return 0


def _cmd_compare(args) -> int:
    scenario = _load_scenario(args)
    report = sim.run_comparison(scenario)
    doc = {"report": report.to_dict(), "config": scenario.config_echo}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(text)
        figures.plot_comparison(report, outdir / "comparison.png")
    print(f"cost_ratio={_g12(report.cost_ratio)} "
          f"social_multi={_g12(report.social_cost_multi)} "
          f"social_central={_g12(report.social_cost_central)}")
    return 0


def _cmd_certify(args) -> int:
    scenario = _load_scenario(args)
    log_ = sim.run_closed_loop(scenario, mode="multiarea", progress=_progress)
    cert = sim.certify_scenario(scenario, log_)
    if args.out:
        _emit(scenario, log_, args.out, certificate=cert)
    gaps = " ".join(_g12(g) for g in cert.best_response_gaps)
    print(f"fixed_point_residual={_g12(cert.fixed_point_residual)} "
          f"best_response_gaps={gaps} mu_hat={_g12(cert.mu_hat)}")
    return 0


def dispatch(argv) -> int:
    """Run one command; returns the process exit code."""
    level = os.environ.get("GRIDLOOP_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb is None:
            raise UsageError("missing verb")
        if args.verb == "validate":
            return _cmd_validate(args)
        if args.verb == "pf":
            return _cmd_pf(args)
        if args.verb == "run":
            return _cmd_run(args, mode=None)
        if args.verb == "game":
            return _cmd_run(args, mode="multiarea")
        if args.verb == "compare":
            return _cmd_compare(args)
        if args.verb == "certify":
            return _cmd_certify(args)
        raise UsageError(f"unknown verb {args.verb!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_SYNOPSIS, file=sys.stderr)
        return 1
    except (NonConvergence, SingularJacobian, Infeasible) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (GridloopError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
