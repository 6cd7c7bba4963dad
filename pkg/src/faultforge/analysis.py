"""Pre-fault baseline, fault-resistance sweeps, symmetrical components and
per-phase power bookkeeping."""

from __future__ import annotations

import cmath
import csv
import dataclasses
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .faults import FaultSpec, fault_admittance_for
from .formulation import assemble, check_point
from .network import (
    PHASES,
    GridFollowingInverter,
    GridFormingInverterComplex,
    GridFormingInverterSimple,
    NetworkModel,
    set_element_status,
)
from .solver import InfeasibilityReport, SolverConfig, SolveResult, Status, classify_infeasibility, solve

A_OP = cmath.exp(2j * math.pi / 3)

ACTIVATION_KIND = {
    "gfl": "gfl_activation_z",
    "gfm_simple": "gfm_simple_resistance_r",
    "gfm_complex": "gfm_complex_activation_z",
}


class PrefaultError(RuntimeError):
    """The unfaulted network has no feasible operating point."""


class SweepError(ValueError):
    pass


# --------------------------------------------------------------------------
# Symmetrical components and powers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceSet:
    zero: complex
    positive: complex
    negative: complex
    padded: tuple[str, ...] = ()

    def magnitudes(self) -> tuple[float, float, float]:
        return abs(self.zero), abs(self.positive), abs(self.negative)


def _triple(phasors, zero_pad: bool) -> tuple[tuple[complex, complex, complex], tuple[str, ...]]:
    if isinstance(phasors, Mapping):
        missing = tuple(p for p in PHASES if p not in phasors)
        if missing and not zero_pad:
            raise ValueError(f"phases {missing} missing; pass zero_pad=True to treat them as zero")
        return tuple(complex(phasors.get(p, 0.0)) for p in PHASES), missing
    values = [complex(v) for v in phasors]
    if len(values) != 3:
        raise ValueError("expected three phasors (A, B, C)")
    return tuple(values), ()


def to_sequence(phasors: Mapping[str, complex] | Sequence[complex], zero_pad: bool = False) -> SequenceSet:
    """Fortescue transform of an (A, B, C) phasor set.

    ``phasors`` is either a phase -> phasor mapping or an ordered triple.
    With ``zero_pad`` absent phases of a mapping count as zero and are listed
    in ``SequenceSet.padded``.
    """
    (a, b, c), padded = _triple(phasors, zero_pad)
    a2 = A_OP * A_OP
    return SequenceSet(
        zero=(a + b + c) / 3,
        positive=(a + A_OP * b + a2 * c) / 3,
        negative=(a + a2 * b + A_OP * c) / 3,
        padded=padded,
    )


def from_sequence(seq: SequenceSet) -> tuple[complex, complex, complex]:
    a2 = A_OP * A_OP
    i0, i1, i2 = seq.zero, seq.positive, seq.negative
    return (i0 + i1 + i2, i0 + a2 * i1 + A_OP * i2, i0 + A_OP * i1 + a2 * i2)


def element_power(V: Mapping[str, complex], I: Mapping[str, complex]) -> dict[str, tuple[float, float]]:
    """Per-phase (P, Q) with P = Vr*Ir + Vi*Ii and Q = Vi*Ir - Vr*Ii."""
    if set(V) != set(I):
        raise ValueError(f"phase mismatch between voltage {sorted(V)} and current {sorted(I)}")
    out = {}
    for ph in V:
        v, i = complex(V[ph]), complex(I[ph])
        out[ph] = (v.real * i.real + v.imag * i.imag, v.imag * i.real - v.real * i.imag)
    return out


# --------------------------------------------------------------------------
# Pre-fault baseline
# --------------------------------------------------------------------------


def prefault_solve(model: NetworkModel, config: SolverConfig | None = None) -> SolveResult:
    config = config or SolverConfig()
    system = assemble(
        model,
        comp_eps=config.comp_eps,
        big_m=config.big_m,
        quadratic_apparent_power=config.quadratic_apparent_power,
    )
    result = solve(system, config)
    if not result.feasible:
        raise PrefaultError(
            f"pre-fault network is not solvable ({result.status}); "
            f"worst violations: {result.worst_violated[:3]}"
        )
    return result


def with_prefault_setpoints(model: NetworkModel, result: SolveResult) -> NetworkModel:
    """Copy of ``model`` whose complex grid-forming inverters hold the
    pre-fault terminal voltage as their internal reference."""
    inverters = []
    for inv in model.inverters:
        if isinstance(inv, GridFormingInverterComplex) and model.is_active(inv):
            v0 = tuple(result.voltage(inv.bus, ph) for ph in inv.phases)
            inv = dataclasses.replace(inv, v0=v0)
        inverters.append(inv)
    return dataclasses.replace(model, inverters=tuple(inverters))


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def log_grid(r_min: float, r_max: float, n_points: int) -> tuple[float, ...]:
    if not (r_min > 0 and r_max > 0):
        raise SweepError("sweep resistances must be positive")
    return tuple(float(v) for v in np.logspace(math.log10(r_min), math.log10(r_max), n_points))


def linear_grid(r_min: float, r_max: float, n_points: int) -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(r_min, r_max, n_points))


@dataclass(frozen=True)
class SweepPlan:
    """A fault template swept over a resistance grid.

    For ``ll`` faults each grid value is the total resistance between the two
    phases; otherwise it is the per-phase fault resistance.
    """

    kind: str
    bus: str
    resistances: tuple[float, ...] = field(default_factory=lambda: log_grid(1e-3, 10.0, 25))
    phases: tuple[str, ...] | None = None
    r_ground_ohm: float = 0.0
    element: str | None = None
    island_line: str | None = None
    warm_start: bool = True
    jobs: int = 1

    def __post_init__(self):
        grid = tuple(float(r) for r in self.resistances)
        object.__setattr__(self, "resistances", grid)
        if len(grid) < 2:
            raise SweepError("a sweep needs at least two points")
        if not all(r > 0 and math.isfinite(r) for r in grid):
            raise SweepError("sweep resistances must be positive and finite")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise SweepError("sweep grid must be strictly increasing")
        if self.phases is not None:
            object.__setattr__(self, "phases", tuple(self.phases))
        if self.jobs < 1:
            raise SweepError("jobs must be at least 1")
        # validates kind and phase count early
        FaultSpec.make(self.bus, self.kind, grid[0], self.phases, self.r_ground_ohm)

    @classmethod
    def logspaced(cls, kind: str, bus: str, r_min: float, r_max: float, n_points: int, **kw) -> "SweepPlan":
        if n_points < 2:
            raise SweepError("a sweep needs at least two points")
        if not r_min < r_max:
            raise SweepError("r_min must be below r_max")
        return cls(kind=kind, bus=bus, resistances=log_grid(r_min, r_max, n_points), **kw)

    def fault(self, r_ohm: float, r_floor: float) -> FaultSpec:
        return FaultSpec.make(self.bus, self.kind, r_ohm, self.phases, self.r_ground_ohm, r_floor)


@dataclass
class SweepRow:
    r_fault_ohm: float
    status: Status
    iterations: int
    fault_current_pu: dict[str, complex]
    fault_current_a: dict[str, float]
    bus_voltage_pu: dict[str, complex]
    element_current_pu: dict[str, complex]
    power_pu: dict[str, tuple[float, float]]
    sequence: SequenceSet
    activation: dict[str, float]
    recheck: bool
    element_voltage_pu: dict[str, complex] = field(default_factory=dict)
    infeasibility: InfeasibilityReport | None = None

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


@dataclass
class SweepResult:
    plan: SweepPlan
    element: str
    element_bus: str
    rows: list[SweepRow]

    def csv_text(self) -> str:
        buf = io.StringIO()
        write_csv(self, buf)
        return buf.getvalue()

    def statuses(self) -> list[str]:
        return [str(r.status) for r in self.rows]


def device_under_test(model: NetworkModel, element: str | None = None):
    """The inverter whose terminal quantities a sweep reports; the first
    in-service inverter by default, else the first source."""
    if element is not None:
        dev = model.element(element)
        if not hasattr(dev, "bus"):
            raise SweepError(f"element {element!r} is not a bus-connected device")
        return dev
    for dev in list(model.inverters) + list(model.sources):
        if model.is_active(dev):
            return dev
    raise SweepError("network has no active inverter or source to report on")


def _activation_kind(dev) -> str | None:
    if isinstance(dev, (GridFollowingInverter, GridFormingInverterSimple, GridFormingInverterComplex)):
        return ACTIVATION_KIND[dev.model]
    return None


def _row(model: NetworkModel, fault: FaultSpec, result: SolveResult, dev, config: SolverConfig) -> SweepRow:
    x = result.x
    system = result.system
    i_base = model.i_base(fault.bus)
    i_fault = {}
    for ph in PHASES:
        if ph in fault.phases:
            i_fault[ph] = result.phasor("fault_current", fault.bus, ph)
    v_bus = {ph: result.voltage(fault.bus, ph) for ph in model.bus(fault.bus).phases}
    i_dev = {ph: result.current(dev.id, ph) for ph in dev.phases}
    v_dev = {ph: result.voltage(dev.bus, ph) for ph in dev.phases}
    kind = _activation_kind(dev)
    activation = {ph: result.value(kind, dev.id, ph) for ph in dev.phases} if kind else {}
    recheck = False
    report = None
    if result.feasible:
        recheck, _, _ = check_point(system, x, config.eq_tol, config.ineq_tol)
    else:
        report = classify_infeasibility(result)
    return SweepRow(
        r_fault_ohm=0.0,
        status=result.status,
        iterations=result.iterations,
        fault_current_pu=i_fault,
        fault_current_a={ph: abs(i) * i_base for ph, i in i_fault.items()},
        bus_voltage_pu=v_bus,
        element_current_pu=i_dev,
        power_pu=element_power(v_dev, i_dev),
        sequence=to_sequence(i_dev, zero_pad=True),
        activation=activation,
        recheck=recheck,
        element_voltage_pu=v_dev,
        infeasibility=report,
    )


def _solve_point(model: NetworkModel, spec: FaultSpec, config: SolverConfig, warm: SolveResult | None):
    system = assemble(
        model,
        fault_admittance_for(model, spec),
        comp_eps=config.comp_eps,
        big_m=config.big_m,
        quadratic_apparent_power=config.quadratic_apparent_power,
    )
    return solve(system, config, warm=warm)


def _independent_point(args):
    model, spec, config, dev_id, r = args
    result = _solve_point(model, spec, config, None)
    row = _row(model, spec, result, model.element(dev_id), config)
    row.r_fault_ohm = r
    return row


def prepare_model(model: NetworkModel, island_line: str | None = None) -> NetworkModel:
    if island_line is not None:
        model = set_element_status(model, island_line, "open", kind="line")
    return model


def run_sweep(model: NetworkModel, plan: SweepPlan, config: SolverConfig | None = None) -> SweepResult:
    """Solve one faulted system per grid resistance.

    Rows that fail to solve are recorded with their status; the sweep always
    covers the whole grid. With warm starting each row starts from the last
    Feasible row.
    """
    config = config or SolverConfig()
    model = prepare_model(model, plan.island_line)
    model.bus(plan.bus)
    baseline = prefault_solve(model, config)
    model = with_prefault_setpoints(model, baseline)
    dev = device_under_test(model, plan.element)
    specs = [plan.fault(r, config.r_floor) for r in plan.resistances]

    rows: list[SweepRow]
    if plan.warm_start:
        rows = []
        warm = None
        for r, spec in zip(plan.resistances, specs):
            result = _solve_point(model, spec, config, warm)
            if result.feasible:
                warm = result
            row = _row(model, spec, result, dev, config)
            row.r_fault_ohm = r
            rows.append(row)
    else:
        tasks = [(model, spec, config, dev.id, r) for r, spec in zip(plan.resistances, specs)]
        if plan.jobs > 1:
            with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
                rows = list(pool.map(_independent_point, tasks))
        else:
            rows = [_independent_point(t) for t in tasks]
    return SweepResult(plan=plan, element=dev.id, element_bus=dev.bus, rows=rows)


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------


def csv_header() -> list[str]:
    cols = ["r_fault_ohm", "status", "iters"]
    for name in ("If_A", "If_pu", "V_pu", "P_pu", "Q_pu"):
        cols += [f"{ph}_{name}" for ph in PHASES]
    cols += ["I0_pu", "I1_pu", "I2_pu"]
    for name in ("Iinv_pu", "act"):
        cols += [f"{ph}_{name}" for ph in PHASES]
    return cols


def _num(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def csv_rows(result: SweepResult) -> list[list[str]]:
    out = []
    for row in result.rows:
        cells = [_num(row.r_fault_ohm), str(row.status), str(row.iterations)]
        cells += [_num(row.fault_current_a.get(ph, 0.0)) for ph in PHASES]
        cells += [_num(abs(row.fault_current_pu.get(ph, 0.0))) for ph in PHASES]
        cells += [_num(abs(row.bus_voltage_pu[ph])) if ph in row.bus_voltage_pu else "" for ph in PHASES]
        cells += [_num(row.power_pu[ph][0]) if ph in row.power_pu else "" for ph in PHASES]
        cells += [_num(row.power_pu[ph][1]) if ph in row.power_pu else "" for ph in PHASES]
        cells += [_num(m) for m in row.sequence.magnitudes()]
        cells += [_num(abs(row.element_current_pu[ph])) if ph in row.element_current_pu else "" for ph in PHASES]
        cells += [_num(row.activation[ph]) if ph in row.activation else "" for ph in PHASES]
        out.append(cells)
    return out


def write_csv(result: SweepResult, target: str | Path | io.TextIOBase) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="") as fh:
            write_csv(result, fh)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(csv_header())
    writer.writerows(csv_rows(result))


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
