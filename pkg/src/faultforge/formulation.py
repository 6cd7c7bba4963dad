"""Constraint-system assembly for faulted-network feasibility problems.

Every constraint of the short-circuit formulation is a polynomial of degree at
most three in the rectangular voltages, currents, powers and activation
variables, so each residual is stored as a sum of monomials. That makes the
Jacobian exact and the sparsity pattern fixed at assembly time.

Equalities are ``h(x) = 0``; inequalities are ``g(x) <= 0``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .faults import FaultAdmittance
from .network import (
    DEFAULT_ANGLES,
    GridFollowingInverter,
    GridFormingInverterComplex,
    GridFormingInverterSimple,
    NetworkModel,
)

VARIABLE_KINDS = (
    "bus_voltage_r",
    "bus_voltage_i",
    "source_emf_r",
    "source_emf_i",
    "element_current_r",
    "element_current_i",
    "fault_current_r",
    "fault_current_i",
    "gfl_activation_z",
    "gfm_simple_resistance_r",
    "gfm_complex_activation_z",
    "gen_power_p",
    "gen_power_q",
)

FAMILIES = (
    "power",
    "voltage-magnitude",
    "current-cap",
    "kcl",
    "complementarity",
    "ohm",
    "source",
    "fault",
    "transformer",
    "thermal",
    "angle",
)


class FormulationError(ValueError):
    pass


@dataclass(frozen=True)
class VariableIndex:
    kind: str
    owner: str
    phase: str
    index: int

    @property
    def name(self) -> str:
        return f"{self.kind}[{self.owner},{self.phase}]" if self.phase else f"{self.kind}[{self.owner}]"


Monomial = tuple[float, tuple[int, ...]]


@dataclass(frozen=True)
class Residual:
    """One scalar constraint ``const + sum(coef * prod(x[vars]))``."""

    name: str
    tag: str
    family: str
    owner: str
    terms: tuple[Monomial, ...]
    const: float = 0.0

    @property
    def variables(self) -> tuple[int, ...]:
        return tuple(sorted({i for _, vs in self.terms for i in vs}))

    @property
    def arity(self) -> int:
        return len(self.variables)

    def __call__(self, x: np.ndarray) -> float:
        total = self.const
        for coef, vs in self.terms:
            prod = coef
            for i in vs:
                prod *= x[i]
            total += prod
        return total

    def gradient(self, x: np.ndarray) -> dict[int, float]:
        grad: dict[int, float] = {i: 0.0 for i in self.variables}
        for coef, vs in self.terms:
            for k, i in enumerate(vs):
                prod = coef
                for m, j in enumerate(vs):
                    if m != k:
                        prod *= x[j]
                grad[i] += prod
        return grad


class _Polynomials:
    """Vectorized evaluation of a block of residuals."""

    def __init__(self, residuals: Sequence[Residual], n_vars: int):
        self.m = len(residuals)
        self.n = n_vars
        rows, coef, idx = [], [], []
        for k, res in enumerate(residuals):
            for c, vs in res.terms:
                rows.append(k)
                coef.append(c)
                idx.append(tuple(vs) + (n_vars,) * (3 - len(vs)))
        self.rows = np.array(rows, dtype=np.int64)
        self.coef = np.array(coef, dtype=float)
        self.idx = np.array(idx, dtype=np.int64).reshape(-1, 3)
        self.const = np.array([r.const for r in residuals], dtype=float)

        # fixed CSR pattern: each (term, slot) with a real variable maps to one nonzero
        slot_rows, slot_cols, self._slot_terms, self._slot_pos = [], [], [], []
        for pos in range(3):
            mask = self.idx[:, pos] < n_vars
            t = np.nonzero(mask)[0]
            slot_rows.append(self.rows[t])
            slot_cols.append(self.idx[t, pos])
            self._slot_terms.append(t)
            self._slot_pos.append(pos)
        r = np.concatenate(slot_rows) if slot_rows else np.zeros(0, np.int64)
        c = np.concatenate(slot_cols) if slot_cols else np.zeros(0, np.int64)
        keys = r * max(n_vars, 1) + c
        uniq, self._nz_of_contrib = np.unique(keys, return_inverse=True)
        self.nnz = len(uniq)
        nz_rows = uniq // max(n_vars, 1)
        self.indices = (uniq % max(n_vars, 1)).astype(np.int64)
        self.indptr = np.searchsorted(nz_rows, np.arange(self.m + 1)).astype(np.int64)

    def value(self, x: np.ndarray) -> np.ndarray:
        xe = np.append(x, 1.0)
        t = self.coef * xe[self.idx[:, 0]] * xe[self.idx[:, 1]] * xe[self.idx[:, 2]]
        return np.bincount(self.rows, weights=t, minlength=self.m) + self.const

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        xe = np.append(x, 1.0)
        a = xe[self.idx[:, 0]]
        b = xe[self.idx[:, 1]]
        c = xe[self.idx[:, 2]]
        partials = (self.coef * b * c, self.coef * a * c, self.coef * a * b)
        contrib = np.concatenate([partials[p][t] for p, t in zip(self._slot_pos, self._slot_terms)])
        data = np.bincount(self._nz_of_contrib, weights=contrib, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.m, self.n))


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    variables: tuple[VariableIndex, ...]
    equalities: tuple[Residual, ...]
    inequalities: tuple[Residual, ...]
    lower: np.ndarray
    upper: np.ndarray
    flat_start: np.ndarray
    big_m: float
    comp_eps: float
    model: NetworkModel
    fault: FaultAdmittance | None = None
    _lookup: dict = field(default_factory=dict, repr=False)
    _eq: _Polynomials | None = field(default=None, repr=False)
    _ineq: _Polynomials | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.lower, self.upper, self.flat_start):
            arr.setflags(write=False)
        self._lookup.update({(v.kind, v.owner, v.phase): v.index for v in self.variables})
        object.__setattr__(self, "_eq", _Polynomials(self.equalities, self.n_vars))
        object.__setattr__(self, "_ineq", _Polynomials(self.inequalities, self.n_vars))

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def signature(self) -> tuple:
        return tuple((v.kind, v.owner, v.phase) for v in self.variables)

    def index(self, kind: str, owner: str, phase: str = "") -> int:
        try:
            return self._lookup[(kind, owner, phase)]
        except KeyError:
            raise KeyError(f"no variable {kind}[{owner},{phase}]") from None

    def has(self, kind: str, owner: str, phase: str = "") -> bool:
        return (kind, owner, phase) in self._lookup

    def phasor(self, x: np.ndarray, kind: str, owner: str, phase: str) -> complex:
        """Complex value of a rectangular pair, e.g. kind="bus_voltage"."""
        return complex(x[self.index(kind + "_r", owner, phase)], x[self.index(kind + "_i", owner, phase)])

    def eval_eq(self, x):
        return self._eq.value(x)

    def eval_ineq(self, x):
        return self._ineq.value(x)

    def jac_eq(self, x):
        return self._eq.jacobian(x)

    def jac_ineq(self, x):
        return self._ineq.jacobian(x)

    def describe(self) -> dict:
        names = [v.name for v in self.variables]

        def rows(items):
            return [
                {
                    "name": r.name,
                    "tag": r.tag,
                    "family": r.family,
                    "owner": r.owner,
                    "variables": [names[i] for i in r.variables],
                }
                for r in items
            ]

        return {
            "n_vars": self.n_vars,
            "big_m": self.big_m,
            "comp_eps": self.comp_eps,
            "fault": None if self.fault is None else {"bus": self.fault.bus, "phases": list(self.fault.phases), "G": self.fault.G.tolist()},
            "variables": [
                {"index": v.index, "name": v.name, "lower": _json_float(lo), "upper": _json_float(hi)}
                for v, lo, hi in zip(self.variables, self.lower, self.upper)
            ],
            "equalities": rows(self.equalities),
            "inequalities": rows(self.inequalities),
        }


def _json_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _check_point(system: ConstraintSystem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n_vars,):
        raise ValueError(f"expected a vector of length {system.n_vars}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("point contains non-finite values")
    return x


def residual(system: ConstraintSystem, x) -> tuple[np.ndarray, np.ndarray]:
    """Equality residuals ``h(x)`` and inequality values ``g(x)``."""
    x = _check_point(system, x)
    return system.eval_eq(x), system.eval_ineq(x)


def jacobian(system: ConstraintSystem, x) -> sp.csr_matrix:
    """Stacked Jacobian: equality rows first, then inequality rows."""
    x = _check_point(system, x)
    return sp.vstack([system.jac_eq(x), system.jac_ineq(x)], format="csr")


def check_point(system: ConstraintSystem, x, eq_tol: float, ineq_tol: float) -> tuple[bool, float, float]:
    """Independent feasibility re-check of a candidate point.

    Returns ``(ok, equality residual inf-norm, max inequality/bound violation)``.
    """
    h, g = residual(system, x)
    eq_inf = float(np.max(np.abs(h), initial=0.0))
    viol = max(
        float(np.max(g, initial=0.0)),
        float(np.max(system.lower - x, initial=0.0)),
        float(np.max(x - system.upper, initial=0.0)),
    )
    return eq_inf <= eq_tol and viol <= ineq_tol, eq_inf, viol


# --------------------------------------------------------------------------
# Assembly
# --------------------------------------------------------------------------


class _Builder:
    def __init__(self):
        self.variables: list[VariableIndex] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.init: list[float] = []
        self.eqs: list[Residual] = []
        self.ineqs: list[Residual] = []
        self._seen: set = set()

    def var(self, kind, owner, phase="", lower=-math.inf, upper=math.inf, init=0.0) -> int:
        key = (kind, owner, phase)
        if key in self._seen:
            raise FormulationError(f"duplicate variable {key}")
        self._seen.add(key)
        k = len(self.variables)
        self.variables.append(VariableIndex(kind, owner, phase, k))
        self.lower.append(lower)
        self.upper.append(upper)
        self.init.append(init)
        return k

    @staticmethod
    def _res(tag, family, owner, phase, terms, const):
        terms = tuple((float(c), tuple(vs)) for c, vs in terms if c != 0.0)
        if not terms:
            return None
        name = f"{tag}[{owner},{phase}]" if phase else f"{tag}[{owner}]"
        return Residual(name=name, tag=tag, family=family, owner=owner, terms=terms, const=float(const))

    def eq(self, tag, family, owner, phase, terms, const=0.0):
        res = self._res(tag, family, owner, phase, terms, const)
        if res is not None:
            self.eqs.append(res)

    def ineq(self, tag, family, owner, phase, terms, const=0.0):
        res = self._res(tag, family, owner, phase, terms, const)
        if res is not None:
            self.ineqs.append(res)


def _real_power(vr, vi, ir, ii, scale=1.0):
    return [(scale, (vr, ir)), (scale, (vi, ii))]


def _reactive_power(vr, vi, ir, ii, scale=1.0):
    return [(scale, (vi, ir)), (-scale, (vr, ii))]


def _negate(terms):
    return [(-c, vs) for c, vs in terms]


def assemble(
    model: NetworkModel,
    fault: FaultAdmittance | None = None,
    *,
    comp_eps: float = 1e-6,
    big_m: float = 1e3,
    quadratic_apparent_power: bool = False,
) -> ConstraintSystem:
    """Build the feasibility system for ``model`` with an optional fault."""
    if not comp_eps > 0:
        raise FormulationError("complementarity tolerance must be positive")
    b = _Builder()
    kcl: dict[tuple[str, str], tuple[list, list]] = {}

    active_buses = [bus for bus in model.buses if bus.status == "on"]
    volt: dict[tuple[str, str], tuple[int, int]] = {}
    for bus in active_buses:
        for ph in bus.phases:
            nominal = cmath.rect(1.0, DEFAULT_ANGLES[ph])
            vr = b.var("bus_voltage_r", bus.id, ph, init=nominal.real)
            vi = b.var("bus_voltage_i", bus.id, ph, init=nominal.imag)
            volt[(bus.id, ph)] = (vr, vi)
            kcl[(bus.id, ph)] = ([], [])

    def out_flow(bus_id, ph, terms_r, terms_i):
        kcl[(bus_id, ph)][0].extend(terms_r)
        kcl[(bus_id, ph)][1].extend(terms_i)

    def injection(bus_id, ph, ir, ii):
        out_flow(bus_id, ph, [(-1.0, (ir,))], [(-1.0, (ii,))])

    def currents(owner, ph):
        return (
            b.var("element_current_r", owner, ph),
            b.var("element_current_i", owner, ph),
        )

    for bus in active_buses:
        for ph in bus.phases:
            vr, vi = volt[(bus.id, ph)]
            b.ineq("bus.v_max", "voltage-magnitude", bus.id, ph, [(1.0, (vr, vr)), (1.0, (vi, vi))], -bus.v_max_sq)
            if bus.v_min_sq > 0:
                b.ineq("bus.v_min", "voltage-magnitude", bus.id, ph, [(-1.0, (vr, vr)), (-1.0, (vi, vi))], bus.v_min_sq)

    for ln in model.lines:
        if not model.is_active(ln):
            continue
        for k, ph in enumerate(ln.phases):
            ir, ii = currents(ln.id, ph)
            fr, fi = volt[(ln.from_bus, ph)]
            tr, ti = volt[(ln.to_bus, ph)]
            r, x = ln.r[k], ln.x[k]
            b.eq("line.ohm_r", "ohm", ln.id, ph, [(1.0, (fr,)), (-r, (ir,)), (x, (ii,)), (-1.0, (tr,))])
            b.eq("line.ohm_i", "ohm", ln.id, ph, [(1.0, (fi,)), (-r, (ii,)), (-x, (ir,)), (-1.0, (ti,))])
            if ln.i_thermal_sq is not None:
                b.ineq("line.thermal", "thermal", ln.id, ph, [(1.0, (ir, ir)), (1.0, (ii, ii))], -ln.i_thermal_sq[k])
            out_flow(ln.from_bus, ph, [(1.0, (ir,))], [(1.0, (ii,))])
            out_flow(ln.to_bus, ph, [(-1.0, (ir,))], [(-1.0, (ii,))])

    for tf in model.transformers:
        if not model.is_active(tf):
            continue
        eta = tf.turns_ratio
        for k, ph in enumerate(tf.phases):
            ir, ii = currents(tf.id, ph)
            fr, fi = volt[(tf.from_bus, ph)]
            tr, ti = volt[(tf.to_bus, ph)]
            w = tf.winding_factor
            b.eq("transformer.voltage_r", "transformer", tf.id, ph, [(w, (fr,)), (-eta, (tr,))])
            b.eq("transformer.voltage_i", "transformer", tf.id, ph, [(w, (fi,)), (-eta, (ti,))])
            if tf.i_thermal_sq is not None:
                b.ineq("transformer.thermal", "thermal", tf.id, ph, [(1.0, (ir, ir)), (1.0, (ii, ii))], -tf.i_thermal_sq[k])
            out_flow(tf.from_bus, ph, [(1.0, (ir,))], [(1.0, (ii,))])
            out_flow(tf.to_bus, ph, [(-eta, (ir,))], [(-eta, (ii,))])

    for src in model.sources:
        if not model.is_active(src):
            continue
        for k, ph in enumerate(src.phases):
            emf = cmath.rect(src.v_setpoint[k], src.angle[k])
            er = b.var("source_emf_r", src.id, ph, init=emf.real)
            ei = b.var("source_emf_i", src.id, ph, init=emf.imag)
            ir, ii = currents(src.id, ph)
            vr, vi = volt[(src.bus, ph)]
            r, x = src.r[k], src.x[k]
            b.eq("source.emf_r", "source", src.id, ph, [(1.0, (er,))], -src.v_setpoint[k] * math.cos(src.angle[k]))
            b.eq("source.emf_i", "source", src.id, ph, [(1.0, (ei,))], -src.v_setpoint[k] * math.sin(src.angle[k]))
            b.eq("source.thevenin_r", "source", src.id, ph, [(1.0, (er,)), (-r, (ir,)), (x, (ii,)), (-1.0, (vr,))])
            b.eq("source.thevenin_i", "source", src.id, ph, [(1.0, (ei,)), (-r, (ii,)), (-x, (ir,)), (-1.0, (vi,))])
            injection(src.bus, ph, ir, ii)

    for gen in model.generators:
        if not model.is_active(gen):
            continue
        tan_phi = math.sqrt(1.0 - gen.pf**2) / gen.pf
        for k, ph in enumerate(gen.phases):
            ir, ii = currents(gen.id, ph)
            vr, vi = volt[(gen.bus, ph)]
            p_set, q_set = gen.p_setpoint[k], gen.q_setpoint[k]
            pv = b.var("gen_power_p", gen.id, ph, init=p_set)
            qv = b.var("gen_power_q", gen.id, ph, init=q_set)
            b.eq("gen.p_balance", "power", gen.id, ph, _real_power(vr, vi, ir, ii) + [(-1.0, (pv,))])
            b.eq("gen.q_balance", "power", gen.id, ph, _reactive_power(vr, vi, ir, ii) + [(-1.0, (qv,))])
            dp = gen.slack * abs(p_set)
            dq = gen.slack * abs(q_set)
            b.ineq("gen.p_slack_hi", "power", gen.id, ph, [(1.0, (pv,))], -p_set - dp)
            b.ineq("gen.p_slack_lo", "power", gen.id, ph, [(-1.0, (pv,))], p_set - dp)
            b.ineq("gen.q_slack_hi", "power", gen.id, ph, [(1.0, (qv,))], -q_set - dq)
            b.ineq("gen.q_slack_lo", "power", gen.id, ph, [(-1.0, (qv,))], q_set - dq)
            b.ineq("gen.pf_hi", "power", gen.id, ph, [(1.0, (qv,)), (-tan_phi, (pv,))])
            b.ineq("gen.pf_lo", "power", gen.id, ph, [(-1.0, (qv,)), (-tan_phi, (pv,))])
            injection(gen.bus, ph, ir, ii)

    for inv in model.inverters:
        if not model.is_active(inv):
            continue
        if isinstance(inv, GridFollowingInverter):
            _grid_following(b, inv, volt, currents, injection, comp_eps)
        elif isinstance(inv, GridFormingInverterSimple):
            _grid_forming_simple(b, inv, volt, currents, injection, comp_eps)
        elif isinstance(inv, GridFormingInverterComplex):
            _grid_forming_complex(b, inv, volt, currents, injection, comp_eps, quadratic_apparent_power)

    for sh in model.shunts:
        if not model.is_active(sh):
            continue
        for k, ph in enumerate(sh.phases):
            vr, vi = volt[(sh.bus, ph)]
            g, bb = sh.g[k], sh.b[k]
            out_flow(sh.bus, ph, [(g, (vr,)), (-bb, (vi,))], [(g, (vi,)), (bb, (vr,))])

    if fault is not None:
        if fault.bus not in {bus.id for bus in active_buses}:
            raise FormulationError(f"fault bus {fault.bus!r} is not an in-service bus")
        missing = [ph for ph in fault.phases if (fault.bus, ph) not in volt]
        if missing:
            raise FormulationError(f"fault phases {missing} not present at bus {fault.bus!r}")
        for a, ph in enumerate(fault.phases):
            fr = b.var("fault_current_r", fault.bus, ph)
            fi = b.var("fault_current_i", fault.bus, ph)
            terms_r = [(-1.0, (fr,))]
            terms_i = [(-1.0, (fi,))]
            for c, other in enumerate(fault.phases):
                vr, vi = volt[(fault.bus, other)]
                terms_r.append((fault.G[a, c], (vr,)))
                terms_i.append((fault.G[a, c], (vi,)))
            b.eq("fault.current_r", "fault", fault.bus, ph, terms_r)
            b.eq("fault.current_i", "fault", fault.bus, ph, terms_i)
            out_flow(fault.bus, ph, [(1.0, (fr,))], [(1.0, (fi,))])

    for (bus_id, ph), (terms_r, terms_i) in kcl.items():
        b.eq("kcl.real", "kcl", bus_id, ph, terms_r)
        b.eq("kcl.imag", "kcl", bus_id, ph, terms_i)

    return ConstraintSystem(
        variables=tuple(b.variables),
        equalities=tuple(b.eqs),
        inequalities=tuple(b.ineqs),
        lower=np.array(b.lower, dtype=float),
        upper=np.array(b.upper, dtype=float),
        flat_start=np.array(b.init, dtype=float),
        big_m=float(big_m),
        comp_eps=float(comp_eps),
        model=model,
        fault=fault,
    )


def _cap_and_complementarity(b, owner, ph, ir, ii, act, i_max, comp_eps):
    """Current ceiling plus relaxed complementarity ``(1 - |I|^2/Imax^2) * act <= eps``."""
    imax_sq = i_max * i_max
    b.ineq("inverter.current_cap", "current-cap", owner, ph, [(1.0, (ir, ir)), (1.0, (ii, ii))], -imax_sq)
    b.ineq(
        "inverter.saturation",
        "complementarity",
        owner,
        ph,
        [(1.0, (act,)), (-1.0 / imax_sq, (act, ir, ir)), (-1.0 / imax_sq, (act, ii, ii))],
        -comp_eps,
    )


def _grid_following(b, inv, volt, currents, injection, comp_eps):
    for k, ph in enumerate(inv.phases):
        ir, ii = currents(inv.id, ph)
        z = b.var("gfl_activation_z", inv.id, ph, lower=0.0, upper=1.0)
        vr, vi = volt[(inv.bus, ph)]
        _cap_and_complementarity(b, inv.id, ph, ir, ii, z, inv.i_max[k], comp_eps)
        b.eq("gfl.active_power", "power", inv.id, ph, _real_power(vr, vi, ir, ii) + [(1.0, (z,))], -inv.p_setpoint[k])
        b.ineq("gfl.p_nonneg", "power", inv.id, ph, _real_power(vr, vi, ir, ii, -1.0))
        b.ineq("gfl.q_max", "power", inv.id, ph, _reactive_power(vr, vi, ir, ii), -inv.q_max[k])
        b.ineq("gfl.q_min", "power", inv.id, ph, _reactive_power(vr, vi, ir, ii, -1.0), inv.q_min[k])
        injection(inv.bus, ph, ir, ii)


def _grid_forming_simple(b, inv, volt, currents, injection, comp_eps):
    for k, ph in enumerate(inv.phases):
        ir, ii = currents(inv.id, ph)
        r = b.var("gfm_simple_resistance_r", inv.id, ph, lower=0.0, upper=1.0 / inv.i_max[k])
        vr, vi = volt[(inv.bus, ph)]
        v0 = inv.v0[k]
        _cap_and_complementarity(b, inv.id, ph, ir, ii, r, inv.i_max[k], comp_eps)
        b.eq("gfm_simple.thevenin_r", "ohm", inv.id, ph, [(-1.0, (r, ir)), (-1.0, (vr,))], v0.real)
        b.eq("gfm_simple.thevenin_i", "ohm", inv.id, ph, [(-1.0, (r, ii)), (-1.0, (vi,))], v0.imag)
        injection(inv.bus, ph, ir, ii)


def _grid_forming_complex(b, inv, volt, currents, injection, comp_eps, quadratic):
    p_tot = b.var("gen_power_p", inv.id, init=inv.p_target or 0.0)
    q_tot = b.var("gen_power_q", inv.id, init=inv.q_target or 0.0)
    p_terms: list = []
    q_terms: list = []
    for k, ph in enumerate(inv.phases):
        ir, ii = currents(inv.id, ph)
        z = b.var("gfm_complex_activation_z", inv.id, ph, lower=0.0, upper=1.0)
        vr, vi = volt[(inv.bus, ph)]
        v0 = inv.v0[k]
        v0_sq = abs(v0) ** 2
        _cap_and_complementarity(b, inv.id, ph, ir, ii, z, inv.i_max[k], comp_eps)
        b.ineq("gfm_complex.v_upper", "voltage-magnitude", inv.id, ph, [(1.0, (vr, vr)), (1.0, (vi, vi)), (-v0_sq, (z,))], -v0_sq)
        b.ineq("gfm_complex.v_lower", "voltage-magnitude", inv.id, ph, [(-1.0, (vr, vr)), (-1.0, (vi, vi)), (-v0_sq, (z,))], v0_sq)
        b.eq("gfm_complex.angle_lock", "angle", inv.id, ph, [(v0.imag, (vr,)), (-v0.real, (vi,))])
        b.ineq("gfm_complex.sign_r", "angle", inv.id, ph, [(-v0.real, (vr,))])
        b.ineq("gfm_complex.sign_i", "angle", inv.id, ph, [(-v0.imag, (vi,))])
        p_terms += _real_power(vr, vi, ir, ii)
        q_terms += _reactive_power(vr, vi, ir, ii)
        injection(inv.bus, ph, ir, ii)
    b.eq("gfm_complex.p_total", "power", inv.id, "", p_terms + [(-1.0, (p_tot,))])
    b.eq("gfm_complex.q_total", "power", inv.id, "", q_terms + [(-1.0, (q_tot,))])
    if quadratic:
        b.ineq("gfm_complex.s_max", "power", inv.id, "", [(1.0, (p_tot, p_tot)), (1.0, (q_tot, q_tot))], -inv.s_max**2)
    else:
        b.ineq("gfm_complex.s_max", "power", inv.id, "", [(1.0, (p_tot,)), (1.0, (q_tot,))], -inv.s_max)
    if inv.p_target is not None:
        b.eq("gfm_complex.p_target", "power", inv.id, "", [(1.0, (p_tot,))], -inv.p_target)
    if inv.q_target is not None:
        b.eq("gfm_complex.q_target", "power", inv.id, "", [(1.0, (q_tot,))], -inv.q_target)


def residual_families(residuals: Iterable[Residual]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in residuals:
        counts[r.family] = counts.get(r.family, 0) + 1
    return counts
