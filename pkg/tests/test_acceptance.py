"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints (see
conftest.py). Run directly with ``python tests/test_acceptance.py``.
"""

import functools
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from _netgen import random_fault, random_linear_network
from test_faults import oracle as kron_oracle
from test_formulation import FIXTURES as FORMULATION_FIXTURES
from test_formulation import faulted, random_point

from faultforge.analysis import SweepPlan, from_sequence, read_csv, run_sweep, to_sequence, write_csv
from faultforge.faults import FAULT_KINDS, FaultSpec, build_fault_admittance, fault_admittance_for
from faultforge.formulation import assemble, jacobian, residual
from faultforge.network import PHASES, load_network
from faultforge.oracle import build_nodal, solve_nodal
from faultforge.solver import solve

LINES: dict[int, str] = {}
GRID = dict(r_min=1e-3, r_max=10.0, n_points=25)
ISLAND = "OHLine"


def record(n: int, ok: bool, detail: str, gating: bool = True) -> None:
    verdict = "PASS" if ok else "FAIL"
    if not gating:
        verdict += " (warning only)"
    LINES[n] = f"criterion {n:>2}: {verdict}  {detail}"
    print(LINES[n])


@functools.lru_cache(maxsize=None)
def sweep(fixture: str, kind: str, island: bool = False):
    model = load_network(fixture)
    plan = SweepPlan.logspaced(kind, "Load", GRID["r_min"], GRID["r_max"], GRID["n_points"], island_line=ISLAND if island else None)
    start = time.perf_counter()
    result = run_sweep(model, plan)
    return model, result, time.perf_counter() - start


def gfl():
    (inv,) = load_network("case4_pv.json").inverters
    return inv


def c01_oracle_equivalence():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst, n_ok, n = 0.0, 0, 60
    for _ in range(n):
        model = random_linear_network(rng)
        fault = fault_admittance_for(model, random_fault(rng, model))
        ref = solve_nodal(build_nodal(model, fault))
        result = solve(assemble(model, fault))
        if not result.feasible:
            worst = np.inf
            continue
        diff = max(
            max(abs(result.voltage(b, p) - v) for (b, p), v in ref.voltages.items()),
            max(abs(result.current(e, p) - i) for (e, p), i in ref.currents.items()),
        )
        worst = max(worst, diff)
        n_ok += diff <= 1e-6
    elapsed = time.perf_counter() - start
    return n_ok == n and elapsed < 30, f"{n_ok}/{n} networks within 1e-6 pu, worst {worst:.2e}, {elapsed:.1f} s"


def c02_star_mesh():
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    worst_rel, worst_rows = 0.0, 0.0
    for _ in range(200):
        kind = str(rng.choice(FAULT_KINDS))
        n = {"lg": 1, "ll": 2, "llg": 2, "3ph": 3, "3phg": 3}[kind]
        phases = tuple(rng.choice(list(PHASES), size=n, replace=False))
        r = tuple(10 ** rng.uniform(-4, 2, n))
        rg = 0.0 if rng.random() < 0.3 else float(10 ** rng.uniform(-4, 2))
        spec = FaultSpec("X", kind, phases, r, rg)
        z_base = float(10 ** rng.uniform(-2, 2))
        G = build_fault_admittance(spec, np.sqrt(z_base), 1.0).G
        ref = kron_oracle(spec, z_base)
        scale = np.abs(ref).max()
        worst_rel = max(worst_rel, np.abs(G - ref).max() / scale)
        if kind in ("ll", "3ph"):
            worst_rows = max(worst_rows, np.abs(G.sum(axis=1)).max() / scale)
    elapsed = time.perf_counter() - start
    ok = worst_rel <= 1e-12 and worst_rows <= 1e-12 and elapsed < 5
    return ok, f"max relative error {worst_rel:.1e}, max row sum / max|G| {worst_rows:.1e}, {elapsed:.2f} s"


def c03_gfl_feasibility():
    parts, ok = [], True
    for kind in ("lg", "ll", "3phg"):
        _, result, elapsed = sweep("case4_pv.json", kind)
        n_feas = sum(r.feasible for r in result.rows)
        ok &= n_feas == len(result.rows) == 25 and elapsed < 60
        parts.append(f"{kind} {n_feas}/25 in {elapsed:.1f} s")
    return ok, "; ".join(parts)


def _csv_rows(tmp_path, kind):
    _, result, _ = sweep("case4_pv.json", kind)
    path = tmp_path / f"gfl_{kind}.csv"
    write_csv(result, path)
    return read_csv(path)


def c04_saturation(tmp_path):
    inv = gfl()
    rows = _csv_rows(tmp_path, "3phg")

    def saturated(row):
        return all(abs(float(row[f"{ph}_Iinv_pu"]) - inv.i_max[k]) <= 1e-4 for k, ph in enumerate(PHASES))

    def below(row):
        return all(float(row[f"{ph}_P_pu"]) < inv.p_setpoint[k] for k, ph in enumerate(PHASES))

    def at_setpoint(row):
        return all(abs(float(row[f"{ph}_P_pu"]) - inv.p_setpoint[k]) <= 0.05 * inv.p_setpoint[k] for k, ph in enumerate(PHASES))

    k_star = next((k for k, row in enumerate(rows) if not saturated(row)), len(rows))
    ok = 0 < k_star < len(rows)
    ok &= all(saturated(r) and below(r) for r in rows[:k_star])
    ok &= all(at_setpoint(r) for r in rows[k_star:])
    r_star = float(rows[k_star]["r_fault_ohm"]) if k_star < len(rows) else float("nan")
    return ok, f"{k_star} saturated rows below r* = {r_star:.4g} ohm, setpoint power above it"


def c05_sequence():
    _, result, _ = sweep("case4_pv.json", "3phg")
    rows = [r for r in result.rows if r.r_fault_ohm <= 1e-2]
    ratios = [(abs(r.sequence.negative) + abs(r.sequence.zero)) / abs(r.sequence.positive) for r in rows]
    return bool(rows) and max(ratios) <= 0.05, f"{len(rows)} bolted-end rows, max (|I2|+|I0|)/|I1| = {max(ratios):.2e}"


def c06_retention():
    inv = gfl()
    _, result, _ = sweep("case4_pv.json", "lg")
    worst = 0.0
    for row in result.rows:
        for k, ph in enumerate(PHASES):
            if ph != "A":
                worst = max(worst, abs(row.power_pu[ph][0] - inv.p_setpoint[k]) / inv.p_setpoint[k])
    return worst <= 0.05, f"unfaulted-phase P within {100 * worst:.3f}% of setpoint"


def c07_gfm_simple():
    worst_comp, worst_v, n_rows, n_bolted = 0.0, 0.0, 0, 0
    for kind in FAULT_KINDS:
        model, result, _ = sweep("case4_pv_gfm_simple.json", kind, island=True)
        (inv,) = model.inverters
        for row in result.rows:
            if not row.feasible:
                continue
            n_rows += 1
            for k, ph in enumerate(inv.phases):
                r = row.activation[ph]
                i2 = abs(row.element_current_pu[ph]) ** 2
                worst_comp = max(worst_comp, r * (inv.i_max[k] ** 2 - i2))
                if r <= 1e-8:
                    n_bolted += 1
                    worst_v = max(worst_v, abs(row.element_voltage_pu[ph] - inv.v0[k]))
    ok = n_rows > 0 and worst_comp <= 1e-6 and worst_v <= 1e-6
    return ok, f"{n_rows} feasible rows, max r(Imax^2-|I|^2) = {worst_comp:.2e}, max |V-V0| = {worst_v:.2e} over {n_bolted} unsaturated phases"


def c08_qualitative():
    _, simple_ll, _ = sweep("case4_pv_gfm_simple.json", "ll", island=True)
    _, complex_3ph, _ = sweep("case4_pv_gfm_complex.json", "3ph", island=True)
    n_simple = sum(not r.feasible for r in simple_ll.rows)
    bad = [r for r in complex_3ph.rows if not r.feasible]
    tops = sorted({r.infeasibility.top_family for r in bad})
    ok = n_simple >= 1 and bool(bad) and tops == ["power"]
    detail = f"GFM-simple LL infeasible rows {n_simple}; GFM-complex 3PH infeasible rows {len(bad)}, top families {tops or '-'}"
    return ok, detail


def c09_hygiene():
    worst_jac = 0.0
    rng = np.random.default_rng(5)
    h = 1e-7
    for name in FORMULATION_FIXTURES:
        model, fault = faulted(name, "3phg", 0.05)
        system = assemble(model, fault)
        for _ in range(20):
            x = random_point(system, rng)
            J = jacobian(system, x).toarray()
            fd = np.empty_like(J)
            for j in range(system.n_vars):
                e = np.zeros(system.n_vars)
                e[j] = h
                fd[:, j] = (np.concatenate(residual(system, x + e)) - np.concatenate(residual(system, x - e))) / (2 * h)
            worst_jac = max(worst_jac, float(np.max(np.abs(fd - J) / np.maximum(1.0, np.abs(J)))))
    worst_seq = 0.0
    for _ in range(1000):
        triple = tuple(complex(a, b) for a, b in rng.normal(0, 3, (3, 2)))
        worst_seq = max(worst_seq, max(abs(a - b) for a, b in zip(from_sequence(to_sequence(triple)), triple)))
    n_feas = n_bad = 0
    for key in _cached_sweeps():
        _, result, _ = sweep(*key)
        for row in result.rows:
            if row.feasible:
                n_feas += 1
                n_bad += not row.recheck
    ok = worst_jac <= 1e-6 and worst_seq <= 1e-12 and n_bad == 0 and n_feas > 0
    return ok, f"Jacobian rel err {worst_jac:.1e}; Fortescue round trip {worst_seq:.1e}; {n_feas - n_bad}/{n_feas} feasible rows re-check"


def _cached_sweeps():
    keys = [("case4_pv.json", k) for k in ("lg", "ll", "3phg")]
    keys += [("case4_pv_gfm_simple.json", k, True) for k in FAULT_KINDS]
    keys += [("case4_pv_gfm_complex.json", "3ph", True)]
    return keys


def c10_determinism(tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"det{k}.csv"
        subprocess.run(
            [sys.executable, "-m", "faultforge.cli", "sweep", "--network", "case4_pv.json", "--fault", "3phg",
             "--bus", "Load", "--rmin", "1e-3", "--rmax", "10", "--points", "25", "--out", str(path)],
            check=True,
        )
        outs.append(path.read_bytes())
    return outs[0] == outs[1], f"two CLI runs, {len(outs[0])} bytes each, identical={outs[0] == outs[1]}"


def test_c01_oracle_equivalence():
    ok, detail = c01_oracle_equivalence()
    record(1, ok, detail)
    assert ok, detail


def test_c02_star_mesh():
    ok, detail = c02_star_mesh()
    record(2, ok, detail)
    assert ok, detail


def test_c03_gfl_feasibility():
    ok, detail = c03_gfl_feasibility()
    record(3, ok, detail)
    assert ok, detail


def test_c04_saturation(tmp_path):
    ok, detail = c04_saturation(tmp_path)
    record(4, ok, detail)
    assert ok, detail


def test_c05_sequence():
    ok, detail = c05_sequence()
    record(5, ok, detail)
    assert ok, detail


def test_c06_retention():
    ok, detail = c06_retention()
    record(6, ok, detail)
    assert ok, detail


def test_c07_gfm_simple():
    ok, detail = c07_gfm_simple()
    record(7, ok, detail)
    assert ok, detail


def test_c08_qualitative():
    # reported, not gated: the reference solver settings are unknown
    ok, detail = c08_qualitative()
    record(8, ok, detail, gating=False)
    if not ok:
        warnings.warn(f"qualitative infeasibility findings not reproduced: {detail}")


def test_c09_hygiene():
    ok, detail = c09_hygiene()
    record(9, ok, detail)
    assert ok, detail


def test_c10_determinism(tmp_path):
    ok, detail = c10_determinism(tmp_path)
    record(10, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
