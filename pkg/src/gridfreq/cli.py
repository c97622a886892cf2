"""Command-line entry point: ``gridfreq {simulate,check-partition,solve-once,metrics}``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .mpc import MpcError, build_problem, solve
from .network import NetworkError, load_network, load_partition, validate_partition
from .plant import SystemState, equilibrium
from .regional import regional_snapshot
from .scenario import ScenarioError, bundled_path, load_scenario
from .sim import FULL, OFF, TOP_ONLY, SimulationError, metrics, run_closed_loop, write_trace_csv

log = logging.getLogger("gridfreq")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridfreq", description="Layered transient-frequency control simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", help="run a closed-loop scenario and write trace + metrics")
    sim.add_argument("scenario", nargs="?", help="scenario JSON (default: bundled 39-bus scenario)")
    sim.add_argument("--out-dir", default=".", help="directory for the trace and metrics files")
    sim.add_argument("--trace", help="trace CSV path (overrides the scenario's)")
    sim.add_argument("--metrics", help="metrics JSON path (overrides the scenario's)")
    grp = sim.add_mutually_exclusive_group()
    grp.add_argument("--disable-controller", action="store_true", help="open loop: all control inputs zero")
    grp.add_argument("--disable-bottom-layer", action="store_true", help="direct feedback only, MPC path off")
    sim.add_argument("--enable-at", type=float, help="controller available from this time on")
    sim.add_argument("--t-end", type=float, help="override the simulated horizon")
    sim.add_argument("--stride", type=int, help="record every k-th integrator step")
    sim.add_argument("--penalty", action="append", default=[], metavar="REGION=D",
                     help="override one region's violation penalty (1-based region index)")
    sim.add_argument("--parallel-regions", action="store_true", help="solve regional QPs concurrently")

    chk = sub.add_parser("check-partition", help="validate a partition and print its regions")
    chk.add_argument("network")
    chk.add_argument("partition", nargs="?", help="partition JSON; omitted means one region")

    one = sub.add_parser("solve-once", help="dump one MPC instance (snapshot, QP, result) as JSON")
    one.add_argument("scenario", nargs="?")
    one.add_argument("--time", type=float, default=0.0, help="sampling instant (initial state is used)")
    one.add_argument("--region", type=int, help="1-based region index; omitted means the whole network")
    one.add_argument("--penalty", type=float, help="override the violation penalty d")
    one.add_argument("--output", help="write the dump here instead of stdout")

    met = sub.add_parser("metrics", help="summarize a simulate metrics file")
    met.add_argument("metrics_file")
    return ap


def _penalties(loaded, overrides):
    if not overrides:
        return loaded.scenario.penalties
    k = len(loaded.scenario.partition)
    pen = list(loaded.scenario.penalties or [None] * k)
    for item in overrides:
        try:
            reg, val = item.split("=", 1)
            idx, d = int(reg) - 1, float(val)
        except ValueError:
            raise ScenarioError(f"bad --penalty {item!r}, expected REGION=VALUE") from None
        if not 0 <= idx < k or d < 0:
            raise ScenarioError(f"--penalty {item!r}: region out of range or negative value")
        pen[idx] = d
    return pen


def cmd_simulate(args) -> int:
    loaded = load_scenario(args.scenario)
    mode = OFF if args.disable_controller else TOP_ONLY if args.disable_bottom_layer else FULL
    kw = dict(mode=mode, penalties=_penalties(loaded, args.penalty), parallel_regions=args.parallel_regions)
    if args.enable_at is not None:
        kw["enable_at"] = args.enable_at
    if args.t_end is not None:
        kw["t_end"] = args.t_end
    if args.stride is not None:
        kw["record_stride"] = args.stride
    sc = replace(loaded.scenario, **kw)
    try:
        sc.validate(loaded.net)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    trace = run_closed_loop(loaded.net, sc)

    outputs = loaded.raw.get("outputs", {})
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = Path(args.trace) if args.trace else out_dir / outputs.get("trace", "trace.csv")
    metrics_path = Path(args.metrics) if args.metrics else out_dir / outputs.get("metrics", "metrics.json")
    write_trace_csv(trace, trace_path)
    weights = {i: sc.mpc.value("weights", i) for i in loaded.net.controlled}
    m = metrics(trace, sc.safety, weights)
    m["mode"] = mode
    m["enable_at"] = sc.enable_at
    metrics_path.write_text(json.dumps(m, indent=1) + "\n")
    _print_summary(m)
    print(f"trace: {trace_path}\nmetrics: {metrics_path}")
    return EXIT_OK


def _print_summary(m: dict) -> None:
    print(f"mode={m.get('mode')} t_end={m['t_end']:g}")
    for r in m["safety"]:
        entry = "never" if r["entry_time"] is None else f"{r['entry_time']:.3f}"
        state = "ok" if r["invariance_held"] else "VIOLATED"
        print(
            f"bus {r['bus']:>3}: {state:<8} entry={entry} violations={r['violations_after_entry']}"
            f" min={r['min_omega']:.6f} max={r['max_omega']:.6f}"
        )
    if "cost" in m:
        print(f"control cost: {m['cost']:.6g}")


def cmd_check_partition(args) -> int:
    net = load_network(args.network)
    part = load_partition(net, args.partition) if args.partition else validate_partition(net, [net.ids])
    for k, r in enumerate(part, 1):
        print(f"region {k}")
        print(f"  nodes      {list(r.nodes)}")
        print(f"  controlled {list(r.controlled)}")
        print(f"  monitored  {list(r.monitored)}")
        print(f"  edges      {[list(e) for e in r.edges]}")
        print(f"  boundary   {[list(e) for e in r.boundary]}")
    print(f"valid: {len(part)} region(s)")
    return EXIT_OK


def cmd_solve_once(args) -> int:
    loaded = load_scenario(args.scenario)
    net, sc = loaded.net, loaded.scenario
    cfg = sc.mpc if args.penalty is None else sc.mpc.with_penalty(args.penalty)
    p0 = sc.profile(0.0)
    f0 = equilibrium(net, np.zeros(net.m), p0)[0] if abs(p0.sum()) < 1e-9 else np.zeros(net.m)
    state = SystemState(f0, np.zeros(net.n), np.zeros(net.n))
    if args.region is None:
        part = validate_partition(net, [net.ids])
        beta = 0
    else:
        part = sc.partition
        beta = args.region - 1
        if not 0 <= beta < len(part):
            raise ScenarioError(f"region {args.region} out of range 1..{len(part)}")
        pen = (sc.penalties or [None] * len(part))[beta]
        if args.penalty is None and pen is not None:
            cfg = cfg.with_penalty(pen)
    from .network import subnetwork

    sub = subnetwork(net, part[beta])
    snap = regional_snapshot(net, part, beta, state, sc.profile, args.time, cfg)
    res = solve(sub, cfg, snap)
    dump = {
        "time": args.time,
        "region": args.region,
        "buses": list(sub.ids),
        "controlled": list(sub.controlled),
        "monitored": list(sub.monitored),
        "penalty_d": cfg.penalty_d,
        "snapshot": snap.to_dict(),
        "qp": build_problem(sub, cfg, snap).to_dict(),
        "result": res.to_dict(),
    }
    text = json.dumps(dump, indent=1)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_metrics(args) -> int:
    try:
        m = json.loads(Path(args.metrics_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read metrics: {exc}") from None
    _print_summary(m)
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "check-partition": cmd_check_partition,
    "solve-once": cmd_solve_once,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse signals usage errors with 2, which is reserved for runtime failures here
        return EXIT_INVALID if exc.code == 2 else int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.cmd](args)
    except (ScenarioError, NetworkError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, MpcError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
