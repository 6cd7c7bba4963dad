"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 infeasible result or oracle
mismatch, 3 internal error.
"""

from __future__ import annotations

import argparse
import cmath
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import analysis
from .analysis import PrefaultError, SweepError, SweepPlan
from .faults import FAULT_KINDS, FaultError, FaultSpec, N_PHASES, fault_admittance_for
from .formulation import FormulationError, assemble
from .network import PHASES, NetworkError, NetworkModel, UnknownElementError, load_network
from .oracle import OracleError, build_nodal, compare_with_solver, solve_nodal
from .solver import SolverConfig, SolveResult, TraceWriter, solve

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3
ORACLE_TOL = 1e-6
CONFIG_ENV = "FAULTFORGE_CONFIG"

log = logging.getLogger("faultforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _phases(text: str) -> tuple[str, ...]:
    out = tuple(p.strip().upper() for p in text.replace(",", " ").split() if p.strip())
    bad = [p for p in out if p not in PHASES]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"phases must be drawn from {','.join(PHASES)}")
    return out


def _common(p: argparse.ArgumentParser):
    p.add_argument("--network", required=True, help="network JSON file, or the name of a bundled fixture")
    p.add_argument("--lenient", action="store_true", help="ignore unknown keys in the network file")
    p.add_argument("--island", metavar="LINE", help="open this line before solving")
    p.add_argument("--config", help=f"solver config JSON (overrides ${CONFIG_ENV})")
    p.add_argument("--json", nargs="?", const="-", metavar="PATH", help="write a JSON summary (stdout when no path)")
    g = p.add_argument_group("solver overrides")
    g.add_argument("--eq-tol", type=float)
    g.add_argument("--ineq-tol", type=float)
    g.add_argument("--comp-eps", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--restarts", type=int)
    g.add_argument("--init", choices=("flat_start", "warm_start"))
    g.add_argument("--quadratic-apparent-power", action="store_true", default=None)
    g.add_argument("--r-floor", type=float, help="smallest fault resistance in ohm (bolted faults)")


def _fault_flags(p: argparse.ArgumentParser, required: bool):
    p.add_argument("--fault", choices=FAULT_KINDS, required=required, type=str.lower)
    p.add_argument("--bus", required=required)
    p.add_argument("--phase", "--phases", dest="phases", type=_phases, help="faulted phases, e.g. A or A,B")
    p.add_argument("--rg", type=float, default=0.0, help="ground resistance in ohm for grounded faults")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faultforge", description="Short-circuit studies for three-phase networks with inverters.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prefault", help="solve the unfaulted network")
    _common(p)
    p.add_argument("--trace", help="write per-iteration residual norms as CSV")

    p = sub.add_parser("fault", help="solve one fault scenario")
    _common(p)
    _fault_flags(p, required=True)
    p.add_argument("--r", type=float, required=True, help="fault resistance in ohm (total phase-to-phase for ll)")
    p.add_argument("--trace", help="write per-iteration residual norms as CSV")
    p.add_argument("--dump-system", metavar="PATH", help="also write the assembled constraint listing")

    p = sub.add_parser("sweep", help="sweep the fault resistance")
    _common(p)
    _fault_flags(p, required=True)
    p.add_argument("--rmin", type=float, default=1e-3)
    p.add_argument("--rmax", type=float, default=10.0)
    p.add_argument("--points", type=int, default=25)
    p.add_argument("--spacing", choices=("log", "linear"), default="log")
    p.add_argument("--element", help="device whose terminal quantities are reported")
    p.add_argument("--out", help="CSV output path (stdout when omitted)")
    p.add_argument("--plot", metavar="SVG", help="write an SVG plot of the sweep")
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers; needs --no-warm-start")

    p = sub.add_parser("validate", help="compare the solver with the linear nodal oracle")
    _common(p)
    _fault_flags(p, required=False)
    p.add_argument("--r", type=float, help="fault resistance in ohm")
    p.add_argument("--against-oracle", action="store_true", required=True)

    p = sub.add_parser("dump-system", help="print the assembled constraint listing")
    _common(p)
    _fault_flags(p, required=False)
    p.add_argument("--r", type=float, help="fault resistance in ohm")
    p.add_argument("--out", help="output path (stdout when omitted)")
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def solver_config(args) -> SolverConfig:
    raw: dict = {}
    for path in (os.environ.get(CONFIG_ENV), args.config):
        if path:
            try:
                raw.update(json.loads(Path(path).read_text()))
            except OSError as exc:
                raise UsageError(f"cannot read solver config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise UsageError(f"solver config {path} is not valid JSON: {exc}") from exc
    overrides = {
        "eq_tol": args.eq_tol,
        "ineq_tol": args.ineq_tol,
        "comp_eps": args.comp_eps,
        "max_iter": args.max_iter,
        "restarts": args.restarts,
        "init": args.init,
        "quadratic_apparent_power": args.quadratic_apparent_power,
        "r_floor": args.r_floor,
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SolverConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver config: {exc}") from exc


def load_model(args) -> NetworkModel:
    model = load_network(args.network, strict=not args.lenient)
    return analysis.prepare_model(model, args.island)


def fault_spec(args, model: NetworkModel, config: SolverConfig) -> FaultSpec:
    if args.r is None:
        raise UsageError("--r is required with --fault")
    if not args.r > 0:
        raise UsageError("--r must be positive")
    model.bus(args.bus)
    phases = args.phases
    if phases is not None and len(phases) != N_PHASES[args.fault]:
        raise UsageError(f"{args.fault} faults take {N_PHASES[args.fault]} phase(s), got {','.join(phases)}")
    return FaultSpec.make(args.bus, args.fault, args.r, phases, args.rg, config.r_floor)


def emit_json(args, payload: dict) -> None:
    if args.json is None:
        return
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if args.json == "-":
        sys.stdout.write(text)
    else:
        Path(args.json).write_text(text)


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "item"):
        return obj.item()
    return str(obj)


def _polar(z: complex) -> dict:
    return {"mag": abs(z), "deg": math.degrees(cmath.phase(z))}


def _echo(args, text: str = "") -> None:
    # text output goes to stdout unless stdout carries the JSON summary
    stream = sys.stderr if args.json == "-" else sys.stdout
    print(text, file=stream)


def operating_point(model: NetworkModel, result: SolveResult) -> dict:
    system = result.system
    buses = {}
    for bus in model.buses:
        if bus.status != "on":
            continue
        buses[bus.id] = {ph: _polar(result.voltage(bus.id, ph)) for ph in bus.phases}
    elements = {}
    for _, el in model.iter_elements():
        if not hasattr(el, "phases") or not model.is_active(el) or not system.has("element_current_r", el.id, el.phases[0]):
            continue
        bus = getattr(el, "bus", None) or el.from_bus
        V = {ph: result.voltage(bus, ph) for ph in el.phases}
        I = {ph: result.current(el.id, ph) for ph in el.phases}
        pq = analysis.element_power(V, I)
        elements[el.id] = {ph: {"P_pu": pq[ph][0], "Q_pu": pq[ph][1], "I_pu": abs(I[ph])} for ph in el.phases}
    return {"buses": buses, "elements": elements}


def print_operating_point(args, op: dict) -> None:
    _echo(args, "bus voltages (pu, deg)")
    for bus, phases in op["buses"].items():
        cells = "  ".join(f"{ph} {v['mag']:.6f}/{v['deg']:8.3f}" for ph, v in phases.items())
        _echo(args, f"  {bus:<12} {cells}")
    _echo(args, "element powers at terminal (P, Q, |I| in pu)")
    for el, phases in op["elements"].items():
        cells = "  ".join(f"{ph} {v['P_pu']:+.6f} {v['Q_pu']:+.6f} {v['I_pu']:.6f}" for ph, v in phases.items())
        _echo(args, f"  {el:<12} {cells}")


def _trace(args):
    if getattr(args, "trace", None):
        return open(args.trace, "w")
    return None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_prefault(args) -> int:
    config = solver_config(args)
    model = load_model(args)
    system = assemble(model, comp_eps=config.comp_eps, big_m=config.big_m, quadratic_apparent_power=config.quadratic_apparent_power)
    fh = _trace(args)
    try:
        result = solve(system, config, trace=TraceWriter(fh) if fh else None)
    finally:
        if fh:
            fh.close()
    _echo(args, f"status {result.status}  iterations {result.iterations}  eq_residual {result.eq_residual:.3e}")
    op = operating_point(model, result)
    print_operating_point(args, op)
    emit_json(args, {"command": "prefault", "result": result.summary(), **op})
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def cmd_fault(args) -> int:
    config = solver_config(args)
    model = load_model(args)
    spec = fault_spec(args, model, config)
    baseline = analysis.prefault_solve(model, config)
    model = analysis.with_prefault_setpoints(model, baseline)
    system = assemble(
        model,
        fault_admittance_for(model, spec),
        comp_eps=config.comp_eps,
        big_m=config.big_m,
        quadratic_apparent_power=config.quadratic_apparent_power,
    )
    if args.dump_system:
        Path(args.dump_system).write_text(json.dumps(system.describe(), indent=1) + "\n")
    fh = _trace(args)
    try:
        result = solve(system, config, trace=TraceWriter(fh) if fh else None)
    finally:
        if fh:
            fh.close()
    i_base = model.i_base(spec.bus)
    fault_currents = {ph: result.phasor("fault_current", spec.bus, ph) for ph in spec.phases}
    _echo(args, f"fault {spec.kind} at {spec.bus} phases {','.join(spec.phases)}  r {args.r:g} ohm")
    _echo(args, f"status {result.status}  iterations {result.iterations}  eq_residual {result.eq_residual:.3e}  max_violation {result.max_violation:.3e}")
    for ph, i in fault_currents.items():
        _echo(args, f"  If_{ph} {abs(i):.6f} pu  {abs(i) * i_base:.3f} A  {math.degrees(cmath.phase(i)):8.3f} deg")
    op = operating_point(model, result)
    print_operating_point(args, op)
    payload = {
        "command": "fault",
        "fault": spec.to_dict(),
        "result": result.summary(),
        "fault_current": {ph: {**_polar(i), "amps": abs(i) * i_base} for ph, i in fault_currents.items()},
        **op,
    }
    if not result.feasible:
        from .solver import classify_infeasibility

        report = classify_infeasibility(result)
        payload["infeasibility"] = report.to_dict()
        _echo(args, f"no feasible point; dominant violated family: {report.top_family}")
    emit_json(args, payload)
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    if args.points < 2:
        raise UsageError("--points must be at least 2")
    if not (args.rmin > 0 and args.rmax > 0):
        raise UsageError("--rmin and --rmax must be positive")
    if not args.rmin < args.rmax:
        raise UsageError("--rmin must be smaller than --rmax")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if args.jobs > 1 and not args.no_warm_start:
        raise UsageError("--jobs > 1 needs --no-warm-start (warm-started sweeps run in order)")
    config = solver_config(args)
    model = load_network(args.network, strict=not args.lenient)
    grid = analysis.log_grid if args.spacing == "log" else analysis.linear_grid
    if args.phases is not None and len(args.phases) != N_PHASES[args.fault]:
        raise UsageError(f"{args.fault} faults take {N_PHASES[args.fault]} phase(s)")
    plan = SweepPlan(
        kind=args.fault,
        bus=args.bus,
        resistances=grid(args.rmin, args.rmax, args.points),
        phases=args.phases,
        r_ground_ohm=args.rg,
        element=args.element,
        island_line=args.island,
        warm_start=not args.no_warm_start,
        jobs=args.jobs,
    )
    result = analysis.run_sweep(model, plan, config)
    if args.out:
        analysis.write_csv(result, args.out)
    elif args.json != "-":
        analysis.write_csv(result, sys.stdout)
    if args.plot:
        from .plotting import write_sweep_svg

        write_sweep_svg(result, args.plot)
    statuses = result.statuses()
    counts = {s: statuses.count(s) for s in sorted(set(statuses))}
    log.info("sweep finished: %s", counts)
    emit_json(
        args,
        {
            "command": "sweep",
            "plan": {"kind": plan.kind, "bus": plan.bus, "resistances": list(plan.resistances), "island": plan.island_line},
            "element": result.element,
            "statuses": statuses,
            "counts": counts,
            "csv": args.out,
        },
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    config = solver_config(args)
    model = load_model(args)
    cases: list[FaultSpec | None] = [None]
    if args.fault:
        cases = [fault_spec(args, model, config)]
    elif args.bus or args.r is not None:
        raise UsageError("--bus and --r need --fault")
    else:
        # no fault given: every fault kind at every in-service bus
        for bus in model.buses:
            if bus.status == "on" and len(bus.phases) == 3:
                cases += [FaultSpec.make(bus.id, kind, 1e-2, r_ground_ohm=0.0) for kind in FAULT_KINDS]
    report = []
    worst = 0.0
    for spec in cases:
        fault = None if spec is None else fault_admittance_for(model, spec)
        oracle = solve_nodal(build_nodal(model, fault))
        result = solve(assemble(model, fault, comp_eps=config.comp_eps), config)
        diff = compare_with_solver(oracle, result) if result.feasible else math.inf
        worst = max(worst, diff)
        label = "prefault" if spec is None else f"{spec.kind}@{spec.bus}"
        ok = diff <= ORACLE_TOL
        report.append({"case": label, "status": str(result.status), "max_abs_diff_pu": diff, "ok": ok})
        _echo(args, f"{'ok  ' if ok else 'FAIL'} {label:<20} {result.status!s:<15} max |diff| {diff:.3e} pu")
    passed = all(r["ok"] for r in report)
    emit_json(args, {"command": "validate", "tolerance_pu": ORACLE_TOL, "cases": report, "worst": worst, "passed": passed})
    return EXIT_OK if passed else EXIT_INFEASIBLE


def cmd_dump_system(args) -> int:
    config = solver_config(args)
    model = load_model(args)
    fault = None
    if args.fault:
        fault = fault_admittance_for(model, fault_spec(args, model, config))
    elif args.bus or args.r is not None:
        raise UsageError("--bus and --r need --fault")
    system = assemble(model, fault, comp_eps=config.comp_eps, big_m=config.big_m, quadratic_apparent_power=config.quadratic_apparent_power)
    text = json.dumps(system.describe(), indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "prefault": cmd_prefault,
    "fault": cmd_fault,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "dump-system": cmd_dump_system,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SweepError, FaultError, UnknownElementError) as exc:
        msg = exc.args[0] if isinstance(exc, UnknownElementError) and exc.args else exc
        print(f"faultforge: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except NetworkError as exc:
        where = f" (at {exc.path})" if exc.path else ""
        print(f"faultforge: invalid network: {exc}{where}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"faultforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PrefaultError as exc:
        print(f"faultforge: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OracleError, FormulationError) as exc:
        print(f"faultforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
