"""Command-line front end.

    fcsched run <scenario> [--out DIR] [--seed N]
    fcsched sweep <param> <values> <scenario> [--out DIR] [--jobs N]
    fcsched validate <scenario>

``<scenario>`` is a YAML file or the name of a builtin (exp1, exp2, exp3,
ft).  Exit codes: 0 success, 2 invalid scenario or arguments, 3 the closed
loop diverged or aborted at run time.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from .faults import FaultProcess
from .loop import LoopError, Metrics, run_loop, summarize
from .scenario import BUILTINS, Scenario, ScenarioError, load_scenario
from .traceio import format_trace

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3

OUT_ENV = "FCSCHED_OUT"
SWEEP_PARAMS = ("g", "lambda", "q_weight", "v_weight", "set_point", "p_f")

log = logging.getLogger("fcsched")


def output_dir(scenario: Scenario, cli_out: str | None) -> Path:
    """``--out`` beats the scenario's ``output.dir``, which beats ``$FCSCHED_OUT``."""
    return Path(cli_out or scenario.output.dir or os.environ.get(OUT_ENV) or "out")


def metrics_dict(m: Metrics) -> dict:
    d = asdict(m)
    d["settled"] = m.settled
    return d


def run_scenario(scenario: Scenario):
    """Run a scenario; returns ``(trace, metrics)``."""
    trace = run_loop(scenario.loop, scenario.topology)
    if not trace:
        return trace, None
    return trace, summarize(trace, scenario.loop.controller.set_point, scenario.settle_tol)


def write_outputs(scenario: Scenario, trace, metrics, out: Path) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / scenario.output.trace.format(name=scenario.name)
    metrics_path = out / scenario.output.metrics.format(name=scenario.name)
    text = format_trace(trace, scenario.topology.n, scenario.topology.m)
    trace_path.write_text(text, encoding="utf-8", newline="")
    summary = {
        "scenario": scenario.name,
        "seed": scenario.loop.seed,
        "n_steps": scenario.loop.n_steps,
        "set_point": scenario.loop.controller.set_point,
        "tol": scenario.settle_tol,
        "metrics": None if metrics is None else metrics_dict(metrics),
        "faults": {
            "injected": sum(r.faults_injected for r in trace),
            "masked": sum(r.faults_masked for r in trace),
            "reexecuted": sum(r.faults_reexecuted for r in trace),
        },
    }
    metrics_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return trace_path, metrics_path


# ---------------------------------------------------------------------------
# sweeps


def apply_parameter(scenario: Scenario, param: str, value: float) -> Scenario:
    """Scenario with one swept parameter replaced."""
    loop = scenario.loop
    if param == "g":
        topo = scenario.topology.with_exec_factors([value] * scenario.topology.m)
        return replace(scenario, topology=topo)
    if param == "lambda":
        loop = replace(loop, estimator=replace(loop.estimator, lam=value))
    elif param in ("q_weight", "v_weight", "set_point"):
        loop = replace(loop, controller=replace(loop.controller, **{param: value}))
    elif param == "p_f":
        f = loop.faults
        faults = FaultProcess(mode="random", p_f=value, seed=f.seed) if f.mode != "random" \
            else replace(f, p_f=value)
        loop = replace(loop, faults=faults)
    else:
        raise ValueError(f"unknown sweep parameter {param!r} (choose from {', '.join(SWEEP_PARAMS)})")
    return replace(scenario, loop=loop)


def parse_values(text: str) -> list[float]:
    """Comma- or whitespace-separated numbers; an empty string gives no values."""
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"values: {exc}") from None


def _sweep_one(args):
    scenario, param, value = args
    s = apply_parameter(scenario, param, value)
    s.loop.validate()
    try:
        _, metrics = run_scenario(s)
    except LoopError as exc:
        return {"value": value, "error": str(exc)}
    return {"value": value, **metrics_dict(metrics)} if metrics else {"value": value}


def sweep(scenario: Scenario, param: str, values, jobs: int = 1) -> list[dict]:
    """One metrics row per value, in the order given (independent of completion order)."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r} (choose from {', '.join(SWEEP_PARAMS)})")
    tasks = [(scenario, param, float(v)) for v in values]
    for _, _, v in tasks:
        # surface invalid values before any worker starts
        apply_parameter(scenario, param, v).loop.validate()
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    for row in rows:
        row["flag"] = "" if row.get("settled") else "NON-SETTLING"
    return rows


def format_table(param: str, rows: list[dict]) -> str:
    cols = ("settling_step", "overshoot", "steady_state_err", "max_swing", "total_misses")
    lines = [f"{param:>10} " + " ".join(f"{c:>16}" for c in cols) + "  flag"]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append(f"{'-' if v is None else (f'{v:.4f}' if isinstance(v, float) else v):>16}")
        flag = row["flag"] if "error" not in row else f"ERROR {row['error']}"
        lines.append(f"{row['value']:>10g} " + " ".join(cells) + f"  {flag}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    t0 = time.perf_counter()
    try:
        trace, metrics = run_scenario(scenario)
    except LoopError as exc:
        print(f"error: {scenario.name}: loop aborted at {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    elapsed = time.perf_counter() - t0
    trace_path, metrics_path = write_outputs(scenario, trace, metrics, output_dir(scenario, args.out))
    print(f"{scenario.name}: {len(trace)} steps in {elapsed:.2f} s")
    if metrics is not None:
        settle = metrics.settling_step if metrics.settled else "never"
        print(f"  settling step {settle}, overshoot {metrics.overshoot:.4f}, "
              f"steady-state error {metrics.steady_state_err:.4f}, misses {metrics.total_misses}")
    print(f"  trace   {trace_path}\n  metrics {metrics_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    values = parse_values(args.values)
    rows = sweep(scenario, args.param, values, jobs=args.jobs)
    table = format_table(args.param, rows)
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{scenario.name}_sweep_{args.param}.json"
        path.write_text(json.dumps({"param": args.param, "rows": rows}, indent=2) + "\n",
                        encoding="utf-8")
    return EXIT_DIVERGED if any("error" in r for r in rows) else EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    print(f"ok: {scenario.name} ({scenario.topology.n} processors, {scenario.topology.m} tasks, "
          f"{scenario.loop.n_steps} steps)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcsched",
        description="Adaptive feedback-control scheduling simulator.",
        epilog=f"builtin scenarios: {', '.join(sorted(BUILTINS))}; "
               f"default output directory: ${OUT_ENV} or ./out",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log estimator diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write its trace and metrics")
    p.add_argument("scenario", help="scenario file or builtin name")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a scenario once per parameter value")
    p.add_argument("param", choices=SWEEP_PARAMS)
    p.add_argument("values", help="comma-separated values, e.g. 0.3,1,3,7")
    p.add_argument("scenario", help="scenario file or builtin name")
    p.add_argument("--out", help="also write the table as JSON into this directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a scenario without running it")
    p.add_argument("scenario", help="scenario file or builtin name")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
