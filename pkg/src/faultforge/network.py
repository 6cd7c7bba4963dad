"""Immutable per-unit network model and the native JSON network format.

Files carry SI quantities (volts, ohms, amps, watts, vars, siemens). The loader
converts everything to per-unit on a single system power base ``s_base_va``
and the line-to-neutral voltage base of each bus. Per-phase quantities use the
single-phase convention: ``z_base = v_base**2 / s_base`` and
``i_base = s_base / v_base``.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterator, Union

PHASES = ("A", "B", "C")
DEFAULT_ANGLES = {"A": 0.0, "B": -2.0 * math.pi / 3.0, "C": 2.0 * math.pi / 3.0}
STATUSES = ("on", "open")

DATA_DIR = Path(__file__).parent / "data"


class NetworkError(ValueError):
    """Base class for network ingestion errors.

    ``path`` points at the offending element, e.g. ``lines[2].to_bus``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NetworkFormatError(NetworkError):
    pass


class NetworkValidationError(NetworkError):
    pass


class UnknownElementError(KeyError):
    pass


def to_per_unit(value: float, base: float) -> float:
    if not base > 0:
        raise ValueError(f"per-unit base must be positive, got {base!r}")
    return value / base


def from_per_unit(value: float, base: float) -> float:
    if not base > 0:
        raise ValueError(f"per-unit base must be positive, got {base!r}")
    return value * base


def phase_order(phases) -> tuple[str, ...]:
    return tuple(sorted(phases, key=PHASES.index))


# --------------------------------------------------------------------------
# Element types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    v_base: float
    v_min_sq: float = 0.0
    v_max_sq: float = 4.0
    status: str = "on"


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    r: tuple[float, ...]
    x: tuple[float, ...]
    i_thermal_sq: tuple[float, ...] | None = None
    status: str = "on"


@dataclass(frozen=True)
class Transformer:
    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    turns_ratio: float = 1.0
    winding_factor: float = 1.0
    i_thermal_sq: tuple[float, ...] | None = None
    status: str = "on"


@dataclass(frozen=True)
class ReferenceSource:
    id: str
    bus: str
    phases: tuple[str, ...]
    v_setpoint: tuple[float, ...]
    angle: tuple[float, ...]
    r: tuple[float, ...]
    x: tuple[float, ...]
    status: str = "on"

    def emf(self) -> tuple[complex, ...]:
        return tuple(cmath.rect(v, a) for v, a in zip(self.v_setpoint, self.angle))


@dataclass(frozen=True)
class SyncGenerator:
    id: str
    bus: str
    phases: tuple[str, ...]
    p_setpoint: tuple[float, ...]
    q_setpoint: tuple[float, ...]
    pf: float = 1.0
    slack: float = 0.05
    status: str = "on"


@dataclass(frozen=True)
class GridFollowingInverter:
    id: str
    bus: str
    phases: tuple[str, ...]
    p_setpoint: tuple[float, ...]
    i_max: tuple[float, ...]
    q_min: tuple[float, ...]
    q_max: tuple[float, ...]
    status: str = "on"
    model: str = field(default="gfl", init=False)


@dataclass(frozen=True)
class GridFormingInverterSimple:
    id: str
    bus: str
    phases: tuple[str, ...]
    v0: tuple[complex, ...]
    i_max: tuple[float, ...]
    status: str = "on"
    model: str = field(default="gfm_simple", init=False)


@dataclass(frozen=True)
class GridFormingInverterComplex:
    """Grid-forming inverter with per-phase magnitude adjustment.

    ``p_target``/``q_target`` are optional fixed totals; when ``None`` the
    totals are free variables limited only by ``s_max``.
    """

    id: str
    bus: str
    phases: tuple[str, ...]
    v0: tuple[complex, ...]
    i_max: tuple[float, ...]
    s_max: float
    p_target: float | None = None
    q_target: float | None = None
    status: str = "on"
    model: str = field(default="gfm_complex", init=False)


@dataclass(frozen=True)
class Shunt:
    id: str
    bus: str
    phases: tuple[str, ...]
    g: tuple[float, ...]
    b: tuple[float, ...]
    status: str = "on"


Inverter = Union[GridFollowingInverter, GridFormingInverterSimple, GridFormingInverterComplex]

COLLECTIONS = ("buses", "lines", "transformers", "sources", "generators", "inverters", "shunts")
KIND_OF_COLLECTION = {
    "buses": "bus",
    "lines": "line",
    "transformers": "transformer",
    "sources": "source",
    "generators": "generator",
    "inverters": "inverter",
    "shunts": "shunt",
}


@dataclass(frozen=True)
class NetworkModel:
    s_base: float
    buses: tuple[Bus, ...] = ()
    lines: tuple[Line, ...] = ()
    transformers: tuple[Transformer, ...] = ()
    sources: tuple[ReferenceSource, ...] = ()
    generators: tuple[SyncGenerator, ...] = ()
    inverters: tuple[Inverter, ...] = ()
    shunts: tuple[Shunt, ...] = ()
    name: str = ""

    def __post_init__(self):
        validate(self)

    def bus(self, bus_id: str) -> Bus:
        for bus in self.buses:
            if bus.id == bus_id:
                return bus
        raise UnknownElementError(bus_id)

    def element(self, element_id: str):
        for _, item in self.iter_elements():
            if item.id == element_id:
                return item
        raise UnknownElementError(element_id)

    def iter_elements(self) -> Iterator[tuple[str, Any]]:
        for name in COLLECTIONS:
            for item in getattr(self, name):
                yield KIND_OF_COLLECTION[name], item

    def z_base(self, bus_id: str) -> float:
        return self.bus(bus_id).v_base ** 2 / self.s_base

    def i_base(self, bus_id: str) -> float:
        return self.s_base / self.bus(bus_id).v_base

    def is_active(self, element) -> bool:
        """True when the element and every bus it touches are in service."""
        if element.status != "on":
            return False
        for attr in ("bus", "from_bus", "to_bus"):
            bus_id = getattr(element, attr, None)
            if bus_id is not None and self.bus(bus_id).status != "on":
                return False
        return True


def set_element_status(model: NetworkModel, element_id: str, status: str, kind: str | None = None) -> NetworkModel:
    """Return a copy of ``model`` with one element's status changed.

    When ``kind`` is given ("line", "transformer", ...) the id must belong to
    that kind of element.
    """
    if status not in STATUSES:
        raise ValueError(f"status must be one of {STATUSES}, got {status!r}")
    for name in COLLECTIONS:
        if kind is not None and KIND_OF_COLLECTION[name] != kind:
            continue
        items = getattr(model, name)
        for k, item in enumerate(items):
            if item.id == element_id:
                new_items = items[:k] + (replace(item, status=status),) + items[k + 1 :]
                return replace(model, **{name: new_items})
    suffix = f" of kind {kind!r}" if kind else ""
    raise UnknownElementError(f"no element {element_id!r}{suffix}")


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def _fail(message: str, path: str):
    raise NetworkValidationError(message, path)


def validate(model: NetworkModel) -> None:
    if not model.s_base > 0:
        _fail("s_base must be positive", "s_base_va")

    seen: dict[str, str] = {}
    bus_map: dict[str, Bus] = {}
    for name in COLLECTIONS:
        for k, item in enumerate(getattr(model, name)):
            path = f"{name}[{k}]"
            if item.id in seen:
                _fail(f"duplicate id {item.id!r} (also {seen[item.id]})", path)
            seen[item.id] = path
            if item.status not in STATUSES:
                _fail(f"status must be one of {STATUSES}", f"{path}.status")
            if name == "buses":
                bus_map[item.id] = item

    for k, bus in enumerate(model.buses):
        path = f"buses[{k}]"
        _check_phases(bus.phases, PHASES, f"{path}.phases")
        if not bus.v_base > 0:
            _fail("v_base must be positive", f"{path}.v_base")
        if not bus.v_min_sq >= 0:
            _fail("v_min_sq must be nonnegative", f"{path}.v_min_sq")
        if not bus.v_max_sq > bus.v_min_sq:
            _fail("v_max_sq must exceed v_min_sq", f"{path}.v_max_sq")

    def resolve(bus_id, path):
        if bus_id not in bus_map:
            _fail(f"unknown bus {bus_id!r}", path)
        return bus_map[bus_id]

    for name in ("lines", "transformers"):
        for k, br in enumerate(getattr(model, name)):
            path = f"{name}[{k}]"
            fb = resolve(br.from_bus, f"{path}.from_bus")
            tb = resolve(br.to_bus, f"{path}.to_bus")
            if br.from_bus == br.to_bus:
                _fail("branch connects a bus to itself", path)
            _check_phases(br.phases, fb.phases, f"{path}.phases")
            _check_phases(br.phases, tb.phases, f"{path}.phases")
            if br.i_thermal_sq is not None:
                _check_len(br.i_thermal_sq, br.phases, f"{path}.i_thermal")
                if not all(v > 0 for v in br.i_thermal_sq):
                    _fail("thermal limits must be positive", f"{path}.i_thermal")
            if name == "lines":
                _check_len(br.r, br.phases, f"{path}.r")
                _check_len(br.x, br.phases, f"{path}.x")
                if not math.isclose(fb.v_base, tb.v_base, rel_tol=1e-9):
                    _fail("line joins buses with different voltage bases", path)
                for r, x in zip(br.r, br.x):
                    if not r >= 0 or not math.isfinite(x):
                        _fail("line resistance must be nonnegative and finite", f"{path}.r")
                    if r == 0 and x == 0:
                        _fail("line impedance must be nonzero", f"{path}.r")
            else:
                if not br.turns_ratio > 0:
                    _fail("turns ratio must be positive", f"{path}.turns_ratio")
                if br.winding_factor != 1.0:
                    _fail("only wye-wye windings (winding_factor = 1) are supported", f"{path}.winding_factor")

    for k, src in enumerate(model.sources):
        path = f"sources[{k}]"
        bus = resolve(src.bus, f"{path}.bus")
        _check_phases(src.phases, bus.phases, f"{path}.phases")
        for attr in ("v_setpoint", "angle", "r", "x"):
            _check_len(getattr(src, attr), src.phases, f"{path}.{attr}")
        if not all(v > 0 for v in src.v_setpoint):
            _fail("voltage setpoint must be positive", f"{path}.v_setpoint")
        if not all(r >= 0 for r in src.r):
            _fail("source resistance must be nonnegative", f"{path}.r")

    for k, gen in enumerate(model.generators):
        path = f"generators[{k}]"
        bus = resolve(gen.bus, f"{path}.bus")
        _check_phases(gen.phases, bus.phases, f"{path}.phases")
        _check_len(gen.p_setpoint, gen.phases, f"{path}.p_setpoint")
        _check_len(gen.q_setpoint, gen.phases, f"{path}.q_setpoint")
        if not 0 < gen.pf <= 1:
            _fail("power factor must lie in (0, 1]", f"{path}.pf")
        if not 0 <= gen.slack <= 1:
            _fail("slack fraction must lie in [0, 1]", f"{path}.slack")
        if not all(p >= 0 for p in gen.p_setpoint):
            _fail("generator active power setpoint must be nonnegative", f"{path}.p_setpoint")

    for k, inv in enumerate(model.inverters):
        path = f"inverters[{k}]"
        bus = resolve(inv.bus, f"{path}.bus")
        _check_phases(inv.phases, bus.phases, f"{path}.phases")
        _check_len(inv.i_max, inv.phases, f"{path}.i_max")
        if not all(i > 0 for i in inv.i_max):
            _fail("current ceiling must be positive", f"{path}.i_max")
        if isinstance(inv, GridFollowingInverter):
            for attr in ("p_setpoint", "q_min", "q_max"):
                _check_len(getattr(inv, attr), inv.phases, f"{path}.{attr}")
            if not all(p >= 0 for p in inv.p_setpoint):
                _fail("active power setpoint must be nonnegative", f"{path}.p_setpoint")
            if not all(lo <= hi for lo, hi in zip(inv.q_min, inv.q_max)):
                _fail("q_min must not exceed q_max", f"{path}.q_min")
        else:
            _check_len(inv.v0, inv.phases, f"{path}.v0")
            if not all(abs(v) > 0 for v in inv.v0):
                _fail("internal voltage must be nonzero", f"{path}.v0")
            if isinstance(inv, GridFormingInverterComplex) and not inv.s_max > 0:
                _fail("s_max must be positive", f"{path}.s_max")

    for k, sh in enumerate(model.shunts):
        path = f"shunts[{k}]"
        bus = resolve(sh.bus, f"{path}.bus")
        _check_phases(sh.phases, bus.phases, f"{path}.phases")
        _check_len(sh.g, sh.phases, f"{path}.g")
        _check_len(sh.b, sh.phases, f"{path}.b")
        if not all(math.isfinite(v) for v in sh.g + sh.b):
            _fail("shunt admittance must be finite", path)


def _check_phases(phases, allowed, path):
    if len(phases) == 0:
        _fail("phase list is empty", path)
    if len(set(phases)) != len(phases):
        _fail("repeated phase", path)
    for ph in phases:
        if ph not in allowed:
            _fail(f"phase {ph!r} not available (allowed {list(allowed)})", path)
    if tuple(phases) != phase_order(phases):
        _fail("phases must be listed in A, B, C order", path)


def _check_len(values, phases, path):
    if len(values) != len(phases):
        _fail(f"expected {len(phases)} per-phase values, got {len(values)}", path)


# --------------------------------------------------------------------------
# JSON ingestion
# --------------------------------------------------------------------------

_TOP_KEYS = {"name", "s_base_va", *COLLECTIONS}
_KEYS = {
    "buses": {"id", "phases", "v_base_v", "v_min_pu", "v_max_pu", "status"},
    "lines": {"id", "from_bus", "to_bus", "phases", "r_ohm", "x_ohm", "i_thermal_a", "status"},
    "transformers": {"id", "from_bus", "to_bus", "phases", "turns_ratio", "winding_factor", "i_thermal_a", "status"},
    "sources": {"id", "bus", "phases", "v_setpoint_v", "angle_rad", "r_ohm", "x_ohm", "status"},
    "generators": {"id", "bus", "phases", "p_w", "q_var", "pf", "slack", "status"},
    "shunts": {"id", "bus", "phases", "g_s", "b_s", "status"},
}
_INVERTER_KEYS = {
    "gfl": {"id", "model", "bus", "phases", "p_w", "i_max_a", "q_min_var", "q_max_var", "status"},
    "gfm_simple": {"id", "model", "bus", "phases", "v0_v", "angle_rad", "i_max_a", "status"},
    "gfm_complex": {
        "id", "model", "bus", "phases", "v0_v", "angle_rad", "i_max_a", "s_max_va", "p_w", "q_var", "status",
    },
}
_REQUIRED = {
    "buses": {"id", "v_base_v"},
    "lines": {"id", "from_bus", "to_bus", "r_ohm", "x_ohm"},
    "transformers": {"id", "from_bus", "to_bus"},
    "sources": {"id", "bus", "v_setpoint_v"},
    "generators": {"id", "bus", "p_w", "q_var"},
    "shunts": {"id", "bus"},
    "gfl": {"id", "bus", "p_w", "i_max_a"},
    "gfm_simple": {"id", "bus", "v0_v", "i_max_a"},
    "gfm_complex": {"id", "bus", "v0_v", "i_max_a", "s_max_va"},
}


def load_network(path: str | Path, *, strict: bool = True) -> NetworkModel:
    """Read a native-format JSON network file and return it in per-unit.

    A bare file name that does not exist locally is looked up among the
    bundled fixtures.
    """
    path = resolve_network_path(path)
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"malformed JSON: {exc}", str(path)) from exc
    return network_from_dict(raw, strict=strict)


def resolve_network_path(path: str | Path) -> Path:
    path = Path(path)
    if not path.exists() and (DATA_DIR / path.name).exists():
        return DATA_DIR / path.name
    if not path.exists():
        raise FileNotFoundError(f"network file not found: {path}")
    return path


def network_from_dict(raw: dict, *, strict: bool = True) -> NetworkModel:
    if not isinstance(raw, dict):
        raise NetworkFormatError("top level must be an object")
    _check_keys(raw, _TOP_KEYS, {"s_base_va"}, "", strict)
    s_base = _number(raw["s_base_va"], "s_base_va")
    if not s_base > 0:
        raise NetworkValidationError("s_base must be positive", "s_base_va")

    buses = []
    for k, item in enumerate(_list(raw, "buses")):
        p = f"buses[{k}]"
        _check_keys(item, _KEYS["buses"], _REQUIRED["buses"], p, strict)
        v_base = _number(item["v_base_v"], f"{p}.v_base_v")
        if not v_base > 0:
            raise NetworkValidationError("v_base must be positive", f"{p}.v_base_v")
        vmin = _number(item.get("v_min_pu", 0.0), f"{p}.v_min_pu")
        vmax = _number(item.get("v_max_pu", 2.0), f"{p}.v_max_pu")
        buses.append(
            Bus(
                id=_id(item, p),
                phases=_phases(item.get("phases", list(PHASES)), f"{p}.phases"),
                v_base=v_base,
                v_min_sq=vmin**2,
                v_max_sq=vmax**2,
                status=item.get("status", "on"),
            )
        )
    bus_map = {b.id: b for b in buses}

    def bus_of(item, key, p) -> Bus:
        bus_id = item.get(key)
        if bus_id not in bus_map:
            raise NetworkValidationError(f"unknown bus {bus_id!r}", f"{p}.{key}")
        return bus_map[bus_id]

    def phases_of(item, bus, p):
        return _phases(item["phases"], f"{p}.phases") if "phases" in item else bus.phases

    lines = []
    for k, item in enumerate(_list(raw, "lines")):
        p = f"lines[{k}]"
        _check_keys(item, _KEYS["lines"], _REQUIRED["lines"], p, strict)
        fb = bus_of(item, "from_bus", p)
        bus_of(item, "to_bus", p)
        phases = phases_of(item, fb, p)
        zb = fb.v_base**2 / s_base
        ib = s_base / fb.v_base
        lines.append(
            Line(
                id=_id(item, p),
                from_bus=fb.id,
                to_bus=item["to_bus"],
                phases=phases,
                r=tuple(v / zb for v in _per_phase(item["r_ohm"], phases, f"{p}.r_ohm")),
                x=tuple(v / zb for v in _per_phase(item["x_ohm"], phases, f"{p}.x_ohm")),
                i_thermal_sq=_thermal(item, phases, ib, p),
                status=item.get("status", "on"),
            )
        )

    transformers = []
    for k, item in enumerate(_list(raw, "transformers")):
        p = f"transformers[{k}]"
        _check_keys(item, _KEYS["transformers"], _REQUIRED["transformers"], p, strict)
        fb = bus_of(item, "from_bus", p)
        bus_of(item, "to_bus", p)
        phases = phases_of(item, fb, p)
        transformers.append(
            Transformer(
                id=_id(item, p),
                from_bus=fb.id,
                to_bus=item["to_bus"],
                phases=phases,
                turns_ratio=_number(item.get("turns_ratio", 1.0), f"{p}.turns_ratio"),
                winding_factor=_number(item.get("winding_factor", 1.0), f"{p}.winding_factor"),
                i_thermal_sq=_thermal(item, phases, s_base / fb.v_base, p),
                status=item.get("status", "on"),
            )
        )

    sources = []
    for k, item in enumerate(_list(raw, "sources")):
        p = f"sources[{k}]"
        _check_keys(item, _KEYS["sources"], _REQUIRED["sources"], p, strict)
        bus = bus_of(item, "bus", p)
        phases = phases_of(item, bus, p)
        zb = bus.v_base**2 / s_base
        sources.append(
            ReferenceSource(
                id=_id(item, p),
                bus=bus.id,
                phases=phases,
                v_setpoint=tuple(v / bus.v_base for v in _per_phase(item["v_setpoint_v"], phases, f"{p}.v_setpoint_v")),
                angle=_angles(item, phases, p),
                r=tuple(v / zb for v in _per_phase(item.get("r_ohm", 0.0), phases, f"{p}.r_ohm")),
                x=tuple(v / zb for v in _per_phase(item.get("x_ohm", 0.0), phases, f"{p}.x_ohm")),
                status=item.get("status", "on"),
            )
        )

    generators = []
    for k, item in enumerate(_list(raw, "generators")):
        p = f"generators[{k}]"
        _check_keys(item, _KEYS["generators"], _REQUIRED["generators"], p, strict)
        bus = bus_of(item, "bus", p)
        phases = phases_of(item, bus, p)
        generators.append(
            SyncGenerator(
                id=_id(item, p),
                bus=bus.id,
                phases=phases,
                p_setpoint=tuple(v / s_base for v in _per_phase(item["p_w"], phases, f"{p}.p_w")),
                q_setpoint=tuple(v / s_base for v in _per_phase(item["q_var"], phases, f"{p}.q_var")),
                pf=_number(item.get("pf", 1.0), f"{p}.pf"),
                slack=_number(item.get("slack", 0.05), f"{p}.slack"),
                status=item.get("status", "on"),
            )
        )

    inverters = []
    for k, item in enumerate(_list(raw, "inverters")):
        p = f"inverters[{k}]"
        if not isinstance(item, dict):
            raise NetworkFormatError("element must be an object", p)
        kind = item.get("model")
        if kind not in _INVERTER_KEYS:
            raise NetworkFormatError(f"model must be one of {sorted(_INVERTER_KEYS)}", f"{p}.model")
        _check_keys(item, _INVERTER_KEYS[kind], _REQUIRED[kind], p, strict)
        bus = bus_of(item, "bus", p)
        phases = phases_of(item, bus, p)
        ib = s_base / bus.v_base
        common = dict(
            id=_id(item, p),
            bus=bus.id,
            phases=phases,
            i_max=tuple(v / ib for v in _per_phase(item["i_max_a"], phases, f"{p}.i_max_a")),
            status=item.get("status", "on"),
        )
        if kind == "gfl":
            p_set = _per_phase(item["p_w"], phases, f"{p}.p_w")
            inverters.append(
                GridFollowingInverter(
                    p_setpoint=tuple(v / s_base for v in p_set),
                    q_min=tuple(v / s_base for v in _per_phase(item.get("q_min_var", 0.0), phases, f"{p}.q_min_var")),
                    q_max=tuple(v / s_base for v in _per_phase(item.get("q_max_var", 0.0), phases, f"{p}.q_max_var")),
                    **common,
                )
            )
            continue
        mags = _per_phase(item["v0_v"], phases, f"{p}.v0_v")
        v0 = tuple(cmath.rect(m / bus.v_base, a) for m, a in zip(mags, _angles(item, phases, p)))
        if kind == "gfm_simple":
            inverters.append(GridFormingInverterSimple(v0=v0, **common))
        else:
            p_tot = item.get("p_w")
            q_tot = item.get("q_var")
            inverters.append(
                GridFormingInverterComplex(
                    v0=v0,
                    s_max=_number(item["s_max_va"], f"{p}.s_max_va") / s_base,
                    p_target=None if p_tot is None else _number(p_tot, f"{p}.p_w") / s_base,
                    q_target=None if q_tot is None else _number(q_tot, f"{p}.q_var") / s_base,
                    **common,
                )
            )

    shunts = []
    for k, item in enumerate(_list(raw, "shunts")):
        p = f"shunts[{k}]"
        _check_keys(item, _KEYS["shunts"], _REQUIRED["shunts"], p, strict)
        bus = bus_of(item, "bus", p)
        phases = phases_of(item, bus, p)
        zb = bus.v_base**2 / s_base
        shunts.append(
            Shunt(
                id=_id(item, p),
                bus=bus.id,
                phases=phases,
                g=tuple(v * zb for v in _per_phase(item.get("g_s", 0.0), phases, f"{p}.g_s")),
                b=tuple(v * zb for v in _per_phase(item.get("b_s", 0.0), phases, f"{p}.b_s")),
                status=item.get("status", "on"),
            )
        )

    return NetworkModel(
        s_base=s_base,
        buses=tuple(buses),
        lines=tuple(lines),
        transformers=tuple(transformers),
        sources=tuple(sources),
        generators=tuple(generators),
        inverters=tuple(inverters),
        shunts=tuple(shunts),
        name=str(raw.get("name", "")),
    )


def network_to_dict(model: NetworkModel) -> dict:
    """Serialize a model back to the native SI-unit JSON structure."""
    sb = model.s_base

    def zb(bus_id):
        return model.z_base(bus_id)

    def ib(bus_id):
        return model.i_base(bus_id)

    out: dict[str, Any] = {"name": model.name, "s_base_va": sb}
    out["buses"] = [
        {
            "id": b.id,
            "phases": list(b.phases),
            "v_base_v": b.v_base,
            "v_min_pu": math.sqrt(b.v_min_sq),
            "v_max_pu": math.sqrt(b.v_max_sq),
            "status": b.status,
        }
        for b in model.buses
    ]
    out["lines"] = []
    for ln in model.lines:
        item = {
            "id": ln.id,
            "from_bus": ln.from_bus,
            "to_bus": ln.to_bus,
            "phases": list(ln.phases),
            "r_ohm": [r * zb(ln.from_bus) for r in ln.r],
            "x_ohm": [x * zb(ln.from_bus) for x in ln.x],
            "status": ln.status,
        }
        if ln.i_thermal_sq is not None:
            item["i_thermal_a"] = [math.sqrt(v) * ib(ln.from_bus) for v in ln.i_thermal_sq]
        out["lines"].append(item)
    out["transformers"] = []
    for tr in model.transformers:
        item = {
            "id": tr.id,
            "from_bus": tr.from_bus,
            "to_bus": tr.to_bus,
            "phases": list(tr.phases),
            "turns_ratio": tr.turns_ratio,
            "winding_factor": tr.winding_factor,
            "status": tr.status,
        }
        if tr.i_thermal_sq is not None:
            item["i_thermal_a"] = [math.sqrt(v) * ib(tr.from_bus) for v in tr.i_thermal_sq]
        out["transformers"].append(item)
    out["sources"] = [
        {
            "id": s.id,
            "bus": s.bus,
            "phases": list(s.phases),
            "v_setpoint_v": [v * model.bus(s.bus).v_base for v in s.v_setpoint],
            "angle_rad": list(s.angle),
            "r_ohm": [r * zb(s.bus) for r in s.r],
            "x_ohm": [x * zb(s.bus) for x in s.x],
            "status": s.status,
        }
        for s in model.sources
    ]
    out["generators"] = [
        {
            "id": g.id,
            "bus": g.bus,
            "phases": list(g.phases),
            "p_w": [p * sb for p in g.p_setpoint],
            "q_var": [q * sb for q in g.q_setpoint],
            "pf": g.pf,
            "slack": g.slack,
            "status": g.status,
        }
        for g in model.generators
    ]
    out["inverters"] = []
    for inv in model.inverters:
        item = {"id": inv.id, "model": inv.model, "bus": inv.bus, "phases": list(inv.phases)}
        item["i_max_a"] = [i * ib(inv.bus) for i in inv.i_max]
        if isinstance(inv, GridFollowingInverter):
            item["p_w"] = [p * sb for p in inv.p_setpoint]
            item["q_min_var"] = [q * sb for q in inv.q_min]
            item["q_max_var"] = [q * sb for q in inv.q_max]
        else:
            vb = model.bus(inv.bus).v_base
            item["v0_v"] = [abs(v) * vb for v in inv.v0]
            item["angle_rad"] = [cmath.phase(v) for v in inv.v0]
            if isinstance(inv, GridFormingInverterComplex):
                item["s_max_va"] = inv.s_max * sb
                if inv.p_target is not None:
                    item["p_w"] = inv.p_target * sb
                if inv.q_target is not None:
                    item["q_var"] = inv.q_target * sb
        item["status"] = inv.status
        out["inverters"].append(item)
    out["shunts"] = [
        {
            "id": sh.id,
            "bus": sh.bus,
            "phases": list(sh.phases),
            "g_s": [g / zb(sh.bus) for g in sh.g],
            "b_s": [b / zb(sh.bus) for b in sh.b],
            "status": sh.status,
        }
        for sh in model.shunts
    ]
    return out


def save_network(model: NetworkModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(model), indent=2) + "\n")


def models_close(a: NetworkModel, b: NetworkModel, rel: float = 1e-12) -> bool:
    """Field-by-field comparison with a relative tolerance on floats."""
    return _close(a, b, rel)


def _close(a, b, rel) -> bool:
    if type(a) is not type(b):
        return False
    if hasattr(a, "__dataclass_fields__"):
        return all(_close(getattr(a, f.name), getattr(b, f.name), rel) for f in fields(a))
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_close(u, v, rel) for u, v in zip(a, b))
    if isinstance(a, (float, complex)):
        return cmath.isclose(a, b, rel_tol=rel, abs_tol=1e-300)
    return a == b


# --------------------------------------------------------------------------
# parsing helpers
# --------------------------------------------------------------------------


def _check_keys(item, allowed, required, path, strict):
    if not isinstance(item, dict):
        raise NetworkFormatError("element must be an object", path)
    if strict:
        unknown = sorted(set(item) - set(allowed))
        if unknown:
            raise NetworkFormatError(f"unknown keys {unknown}", path)
    missing = sorted(set(required) - set(item))
    if missing:
        raise NetworkFormatError(f"missing keys {missing}", path)


def _list(raw, key):
    value = raw.get(key, [])
    if not isinstance(value, list):
        raise NetworkFormatError("must be a list", key)
    return value


def _id(item, path):
    value = item["id"]
    if not isinstance(value, str) or not value:
        raise NetworkFormatError("id must be a nonempty string", f"{path}.id")
    return value


def _number(value, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkFormatError(f"expected a number, got {value!r}", path)
    value = float(value)
    if not math.isfinite(value):
        raise NetworkFormatError("value must be finite", path)
    return value


def _phases(value, path) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(p, str) for p in value):
        raise NetworkFormatError("phases must be a list of labels", path)
    for ph in value:
        if ph not in PHASES:
            raise NetworkValidationError(f"unknown phase {ph!r}", path)
    if len(set(value)) != len(value):
        raise NetworkValidationError("repeated phase", path)
    return phase_order(value)


def _per_phase(value, phases, path) -> tuple[float, ...]:
    if isinstance(value, list):
        if len(value) != len(phases):
            raise NetworkValidationError(f"expected {len(phases)} per-phase values, got {len(value)}", path)
        return tuple(_number(v, f"{path}[{k}]") for k, v in enumerate(value))
    return (_number(value, path),) * len(phases)


def _angles(item, phases, path) -> tuple[float, ...]:
    if "angle_rad" in item:
        return _per_phase(item["angle_rad"], phases, f"{path}.angle_rad")
    return tuple(DEFAULT_ANGLES[ph] for ph in phases)


def _thermal(item, phases, i_base, path):
    if item.get("i_thermal_a") is None:
        return None
    return tuple((v / i_base) ** 2 for v in _per_phase(item["i_thermal_a"], phases, f"{path}.i_thermal_a"))
