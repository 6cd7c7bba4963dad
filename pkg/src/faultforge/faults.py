"""Fault scenarios and their phase-domain conductance matrices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .network import PHASES, NetworkModel, phase_order

FAULT_KINDS = ("lg", "ll", "llg", "3ph", "3phg")
N_PHASES = {"lg": 1, "ll": 2, "llg": 2, "3ph": 3, "3phg": 3}
GROUNDED = {"lg", "llg", "3phg"}
DEFAULT_R_FLOOR = 1e-4


class FaultError(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    """A shunt fault at one bus.

    ``r_phase_ohm`` holds one resistance per involved phase. For a line-line
    fault the two legs are in series, so their sum is the total resistance
    between the phases.
    """

    bus: str
    kind: str
    phases: tuple[str, ...]
    r_phase_ohm: tuple[float, ...]
    r_ground_ohm: float = 0.0

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in FAULT_KINDS:
            raise FaultError(f"unknown fault kind {self.kind!r}; expected one of {FAULT_KINDS}")
        phases = tuple(self.phases)
        if len(set(phases)) != len(phases) or any(p not in PHASES for p in phases):
            raise FaultError(f"invalid fault phases {phases!r}")
        if len(phases) != N_PHASES[kind]:
            raise FaultError(f"{kind} fault involves {N_PHASES[kind]} phases, got {len(phases)}")
        r = self.r_phase_ohm
        if np.isscalar(r):
            r = (float(r),) * len(phases)
        r = tuple(float(v) for v in r)
        if len(r) != len(phases):
            raise FaultError("need one phase resistance per involved phase")
        if not all(v > 0 for v in r):
            raise FaultError("phase resistances must be positive; use a floor resistance for bolted faults")
        if kind in GROUNDED and not self.r_ground_ohm >= 0:
            raise FaultError("ground resistance must be nonnegative")
        order = [phases.index(p) for p in phase_order(phases)]
        object.__setattr__(self, "phases", tuple(phases[k] for k in order))
        object.__setattr__(self, "r_phase_ohm", tuple(r[k] for k in order))
        object.__setattr__(self, "r_ground_ohm", float(self.r_ground_ohm) if kind in GROUNDED else 0.0)

    @classmethod
    def make(
        cls,
        bus: str,
        kind: str,
        r_ohm: float,
        phases: Sequence[str] | None = None,
        r_ground_ohm: float = 0.0,
        r_floor: float = DEFAULT_R_FLOOR,
    ) -> "FaultSpec":
        """Build a fault from one swept resistance value.

        For ``ll`` the value is the total resistance between the two phases,
        split evenly over the legs; otherwise it is the per-phase resistance.
        Values below ``r_floor`` are raised to it.
        """
        kind = kind.lower()
        if kind not in FAULT_KINDS:
            raise FaultError(f"unknown fault kind {kind!r}; expected one of {FAULT_KINDS}")
        if phases is None:
            phases = PHASES[: N_PHASES[kind]]
        r = max(float(r_ohm), r_floor)
        if kind == "ll":
            r = r / 2.0
        return cls(bus=bus, kind=kind, phases=tuple(phases), r_phase_ohm=r, r_ground_ohm=r_ground_ohm)

    def scaled(self, k: float) -> "FaultSpec":
        return FaultSpec(
            bus=self.bus,
            kind=self.kind,
            phases=self.phases,
            r_phase_ohm=tuple(k * r for r in self.r_phase_ohm),
            r_ground_ohm=k * self.r_ground_ohm,
        )

    def to_dict(self) -> dict:
        return {
            "bus": self.bus,
            "kind": self.kind,
            "phases": list(self.phases),
            "r_phase_ohm": list(self.r_phase_ohm),
            "r_ground_ohm": self.r_ground_ohm,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "FaultSpec":
        unknown = set(raw) - {"bus", "kind", "phases", "r_phase_ohm", "r_ground_ohm"}
        if unknown:
            raise FaultError(f"unknown fault keys {sorted(unknown)}")
        kind = str(raw["kind"]).lower()
        phases = raw.get("phases") or PHASES[: N_PHASES.get(kind, 0)]
        return cls(
            bus=raw["bus"],
            kind=kind,
            phases=tuple(phases),
            r_phase_ohm=raw["r_phase_ohm"],
            r_ground_ohm=raw.get("r_ground_ohm", 0.0),
        )


@dataclass(frozen=True)
class FaultAdmittance:
    """Per-unit conductance matrix ``G`` over the involved phases of a bus."""

    bus: str
    phases: tuple[str, ...]
    G: np.ndarray

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        n = len(self.phases)
        if G.shape != (n, n):
            raise FaultError(f"G must be {n}x{n}, got {G.shape}")
        if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max(initial=0.0))):
            raise FaultError("fault conductance matrix must be symmetric")
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @classmethod
    def zero(cls, bus: str, phases: Sequence[str]) -> "FaultAdmittance":
        n = len(phases)
        return cls(bus=bus, phases=tuple(phases), G=np.zeros((n, n)))

    def row_sums(self) -> np.ndarray:
        return self.G.sum(axis=1)


def star_mesh(g_terminals: Sequence[float], g_ground: float) -> np.ndarray:
    """Eliminate the star point of conductances ``g_terminals`` (and an
    optional branch ``g_ground`` to the reference) in closed form.

    Returns the nodal conductance matrix seen from the terminals. An infinite
    ``g_ground`` ties the star point to the reference.
    """
    g = np.asarray(g_terminals, dtype=float)
    if np.isinf(g_ground):
        return np.diag(g)
    total = g.sum() + g_ground
    if not total > 0:
        raise FaultError("degenerate star: all conductances are zero")
    mesh = -np.outer(g, g) / total
    # sum the other branches directly; total - g cancels badly when one
    # conductance dominates
    others = np.array([np.delete(g, k).sum() + g_ground for k in range(len(g))])
    np.fill_diagonal(mesh, g * others / total)
    return mesh


def build_fault_admittance(spec: FaultSpec, v_base: float, s_base: float) -> FaultAdmittance:
    if not v_base > 0 or not s_base > 0:
        raise FaultError("bases must be positive")
    z_base = v_base**2 / s_base
    g = np.array([z_base / r for r in spec.r_phase_ohm])
    kind = spec.kind
    if kind == "lg":
        G = np.array([[z_base / (spec.r_phase_ohm[0] + spec.r_ground_ohm)]])
    elif kind == "ll":
        gl = z_base / (spec.r_phase_ohm[0] + spec.r_phase_ohm[1])
        G = np.array([[gl, -gl], [-gl, gl]])
    elif kind == "3ph":
        G = star_mesh(g, 0.0)
    else:
        g_ground = np.inf if spec.r_ground_ohm == 0 else z_base / spec.r_ground_ohm
        G = star_mesh(g, g_ground)
    return FaultAdmittance(bus=spec.bus, phases=spec.phases, G=G)


def fault_admittance_for(model: NetworkModel, spec: FaultSpec) -> FaultAdmittance:
    bus = model.bus(spec.bus)
    missing = [p for p in spec.phases if p not in bus.phases]
    if missing:
        raise FaultError(f"fault phases {missing} not present at bus {bus.id!r}")
    return build_fault_admittance(spec, bus.v_base, model.s_base)


def fault_current_injection(fault: FaultAdmittance, voltage: Mapping[str, complex]) -> dict[str, complex]:
    """Current drawn by the fault on each involved phase, ``I = G V``."""
    missing = [p for p in fault.phases if p not in voltage]
    if missing:
        raise FaultError(f"voltage missing on fault phases {missing}")
    v = np.array([complex(voltage[p]) for p in fault.phases])
    i_r = fault.G @ v.real
    i_i = fault.G @ v.imag
    return {p: complex(a, b) for p, a, b in zip(fault.phases, i_r, i_i)}
