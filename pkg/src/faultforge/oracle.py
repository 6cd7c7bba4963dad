"""Direct complex nodal solve for networks made of linear elements only.

Shares no assembly code with the constraint formulation, so agreement
between the two is meaningful. Voltage sources with internal impedance are
Norton injections; stiff sources and ideal transformers get extra rows
(modified nodal analysis).
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field

import numpy as np

from .faults import FaultAdmittance
from .network import NetworkModel

RESIDUAL_TOL = 1e-10


class OracleError(ValueError):
    pass


class SingularNetworkError(OracleError):
    pass


@dataclass
class NodalSystem:
    """``Y @ u = J`` with ``u`` = node voltages followed by auxiliary branch
    currents (``aux`` labels them)."""

    Y: np.ndarray
    J: np.ndarray
    nodes: dict[tuple[str, str], int]
    aux: list[tuple[str, str]] = field(default_factory=list)
    model: NetworkModel | None = None
    fault: FaultAdmittance | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class NodalSolution:
    voltages: dict[tuple[str, str], complex]
    currents: dict[tuple[str, str], complex]
    fault_currents: dict[str, complex]
    residual: float


def build_nodal(model: NetworkModel, fault: FaultAdmittance | None = None) -> NodalSystem:
    if any(model.is_active(g) for g in model.generators) or any(model.is_active(i) for i in model.inverters):
        raise OracleError("the linear oracle only handles sources, lines, transformers, shunts and faults")
    nodes: dict[tuple[str, str], int] = {}
    for bus in model.buses:
        if bus.status == "on":
            for ph in bus.phases:
                nodes[(bus.id, ph)] = len(nodes)

    aux: list[tuple[str, str]] = []
    aux_rows: list[tuple[dict[int, complex], complex]] = []  # constraint coefficients on nodes, rhs
    aux_kcl: list[dict[int, complex]] = []  # how each aux current enters node KCL
    n = len(nodes)
    Y = np.zeros((n, n), dtype=complex)
    J = np.zeros(n, dtype=complex)

    def stamp_series(a: int, b: int, y: complex):
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y

    for ln in model.lines:
        if not model.is_active(ln):
            continue
        for k, ph in enumerate(ln.phases):
            stamp_series(nodes[(ln.from_bus, ph)], nodes[(ln.to_bus, ph)], 1.0 / complex(ln.r[k], ln.x[k]))

    for sh in model.shunts:
        if not model.is_active(sh):
            continue
        for k, ph in enumerate(sh.phases):
            a = nodes[(sh.bus, ph)]
            Y[a, a] += complex(sh.g[k], sh.b[k])

    for src in model.sources:
        if not model.is_active(src):
            continue
        for k, ph in enumerate(src.phases):
            a = nodes[(src.bus, ph)]
            emf = cmath.rect(src.v_setpoint[k], src.angle[k])
            z = complex(src.r[k], src.x[k])
            if z == 0:
                aux.append((src.id, ph))
                aux_rows.append(({a: 1.0}, emf))
                aux_kcl.append({a: -1.0})  # current injected into the bus
            else:
                Y[a, a] += 1.0 / z
                J[a] += emf / z

    for tf in model.transformers:
        if not model.is_active(tf):
            continue
        for ph in tf.phases:
            a = nodes[(tf.from_bus, ph)]
            b = nodes[(tf.to_bus, ph)]
            aux.append((tf.id, ph))
            aux_rows.append(({a: tf.winding_factor, b: -tf.turns_ratio}, 0.0))
            aux_kcl.append({a: 1.0, b: -tf.turns_ratio})

    if fault is not None:
        for i, pi in enumerate(fault.phases):
            if (fault.bus, pi) not in nodes:
                raise OracleError(f"fault phase {pi} not present at bus {fault.bus!r}")
            for j, pj in enumerate(fault.phases):
                Y[nodes[(fault.bus, pi)], nodes[(fault.bus, pj)]] += fault.G[i, j]

    m = len(aux)
    full = np.zeros((n + m, n + m), dtype=complex)
    rhs = np.zeros(n + m, dtype=complex)
    full[:n, :n] = Y
    rhs[:n] = J
    for k, ((coefs, value), kcl) in enumerate(zip(aux_rows, aux_kcl)):
        for node, c in kcl.items():
            full[node, n + k] += c
        for node, c in coefs.items():
            full[n + k, node] += c
        rhs[n + k] = value
    return NodalSystem(Y=full, J=rhs, nodes=nodes, aux=aux, model=model, fault=fault)


def solve_nodal(system: NodalSystem) -> NodalSolution:
    Y, J = system.Y, system.J
    if Y.shape[0] == 0:
        raise SingularNetworkError("network has no in-service nodes")
    # a floating island leaves Y rank deficient; a rank test catches it
    # before the solve returns meaningless numbers
    if np.linalg.matrix_rank(Y) < Y.shape[0]:
        raise SingularNetworkError("nodal matrix is singular (part of the network has no path to a source or ground)")
    u = np.linalg.solve(Y, J)
    res = float(np.max(np.abs(Y @ u - J)))
    scale = max(1.0, float(np.max(np.abs(J))))
    if res > RESIDUAL_TOL * scale:
        raise SingularNetworkError(f"nodal solve residual {res:.3e} exceeds tolerance; matrix is ill conditioned")

    volt = {key: complex(u[i]) for key, i in system.nodes.items()}
    aux_current = {label: complex(u[system.n_nodes + k]) for k, label in enumerate(system.aux)}
    model = system.model
    currents: dict[tuple[str, str], complex] = {}
    if model is not None:
        for ln in model.lines:
            if model.is_active(ln):
                for k, ph in enumerate(ln.phases):
                    dv = volt[(ln.from_bus, ph)] - volt[(ln.to_bus, ph)]
                    currents[(ln.id, ph)] = dv / complex(ln.r[k], ln.x[k])
        for src in model.sources:
            if model.is_active(src):
                for k, ph in enumerate(src.phases):
                    if (src.id, ph) in aux_current:
                        currents[(src.id, ph)] = aux_current[(src.id, ph)]
                    else:
                        emf = cmath.rect(src.v_setpoint[k], src.angle[k])
                        currents[(src.id, ph)] = (emf - volt[(src.bus, ph)]) / complex(src.r[k], src.x[k])
        for tf in model.transformers:
            if model.is_active(tf):
                for ph in tf.phases:
                    currents[(tf.id, ph)] = aux_current[(tf.id, ph)]
    fault_currents: dict[str, complex] = {}
    f = system.fault
    if f is not None:
        v = np.array([volt[(f.bus, ph)] for ph in f.phases])
        for ph, i in zip(f.phases, f.G @ v):
            fault_currents[ph] = complex(i)
    return NodalSolution(voltages=volt, currents=currents, fault_currents=fault_currents, residual=res)


def compare_with_solver(solution: NodalSolution, result) -> float:
    """Largest absolute per-unit difference between an oracle solution and a
    solver result over every voltage, branch current and fault current."""
    worst = 0.0
    for (bus, ph), v in solution.voltages.items():
        worst = max(worst, abs(result.voltage(bus, ph) - v))
    for (elem, ph), i in solution.currents.items():
        worst = max(worst, abs(result.current(elem, ph) - i))
    if solution.fault_currents:
        bus = result.system.fault.bus
        for ph, i in solution.fault_currents.items():
            worst = max(worst, abs(result.phasor("fault_current", bus, ph) - i))
    return worst
