"""Feasibility solver: projected Levenberg-Marquardt on a slack-augmented system.

Inequalities ``g(x) <= 0`` become ``g(x) + s = 0`` with ``s >= 0``; together
with the equalities this gives a square-free system ``F(x, s) = 0`` over the
box formed by the variable bounds and ``s >= 0``. The merit ``0.5*|F|^2`` is
the sum of squared equality residuals plus the squared positive parts of the
inequalities (minimized over ``s``). Each iteration takes a damped
Gauss-Newton step on the free variables and projects it back onto the box.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO

import numpy as np
import scipy.linalg

from .formulation import FAMILIES, ConstraintSystem, check_point

logger = logging.getLogger(__name__)

ACTIVATION_KINDS = ("gfl_activation_z", "gfm_simple_resistance_r", "gfm_complex_activation_z")


class Status(str, enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"

    def __str__(self) -> str:
        return self.value


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    eq_tol: float = 1e-8
    ineq_tol: float = 1e-8
    comp_eps: float = 1e-6
    big_m: float = 1e3
    quadratic_apparent_power: bool = False
    max_iter: int = 200
    init: str = "flat_start"
    restarts: int = 3
    seeds: tuple[int, ...] = (1, 2, 3)
    lm_tau: float = 1e-3
    refine_steps: int = 3
    stall_window: int = 20
    stall_rtol: float = 1e-10
    restart_spread: float = 0.2
    r_floor: float = 1e-4

    def __post_init__(self):
        if not (self.eq_tol > 0 and self.ineq_tol > 0 and self.comp_eps > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.init not in ("flat_start", "warm_start"):
            raise ValueError("init must be 'flat_start' or 'warm_start'")
        if self.restarts < 0 or len(self.seeds) < self.restarts:
            raise ValueError("need one seed per restart")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @classmethod
    def from_dict(cls, raw: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown solver config keys {sorted(unknown)}")
        raw = dict(raw)
        if "seeds" in raw:
            raw["seeds"] = tuple(raw["seeds"])
        return cls(**raw)

    @classmethod
    def from_file(cls, path: str | Path) -> "SolverConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        return out


@dataclass
class Attempt:
    start: str
    iterations: int
    merit: float
    reason: str  # "converged" | "stalled" | "iteration_limit" | "nonfinite"


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray
    eq_residual: float
    max_violation: float
    iterations: int
    total_iterations: int
    active: list[str]
    elapsed: float
    system: ConstraintSystem = field(repr=False)
    attempts: list[Attempt] = field(default_factory=list)
    violation_measure: float = 0.0
    worst_violated: list[tuple[str, float]] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE

    def value(self, kind: str, owner: str, phase: str = "") -> float:
        return float(self.x[self.system.index(kind, owner, phase)])

    def phasor(self, kind: str, owner: str, phase: str) -> complex:
        return self.system.phasor(self.x, kind, owner, phase)

    def voltage(self, bus: str, phase: str) -> complex:
        return self.phasor("bus_voltage", bus, phase)

    def current(self, element: str, phase: str) -> complex:
        return self.phasor("element_current", element, phase)

    def summary(self) -> dict:
        out = {
            "status": str(self.status),
            "eq_residual": self.eq_residual,
            "max_violation": self.max_violation,
            "iterations": self.iterations,
            "total_iterations": self.total_iterations,
            "elapsed_s": self.elapsed,
            "active": self.active,
            "attempts": [asdict(a) for a in self.attempts],
        }
        if not self.feasible:
            out["violation_measure"] = self.violation_measure
            out["worst_violated"] = [[n, v] for n, v in self.worst_violated]
        return out


class TraceWriter:
    """CSV stream of per-iteration residual norms."""

    header = "attempt,iteration,merit,eq_inf,ineq_max,lambda\n"

    def __init__(self, stream: IO[str]):
        self.stream = stream
        self.stream.write(self.header)

    def row(self, attempt, iteration, merit, eq_inf, ineq_max, lam):
        self.stream.write(f"{attempt},{iteration},{merit!r},{eq_inf!r},{ineq_max!r},{lam!r}\n")


# --------------------------------------------------------------------------
# Starting points
# --------------------------------------------------------------------------


def initial_point(system: ConstraintSystem, strategy: str = "flat_start", warm: "SolveResult | None" = None) -> np.ndarray:
    """Flat start (nominal balanced voltages, zero currents and activations,
    generator powers at setpoint) or a copy of a previous solution."""
    if strategy == "flat_start":
        return np.array(system.flat_start, dtype=float)
    if strategy == "warm_start":
        if warm is None:
            raise ValueError("warm start needs a previous SolveResult")
        if warm.system.signature != system.signature:
            raise ValueError("warm start result has a different variable table")
        return np.array(warm.x, dtype=float)
    raise ValueError(f"unknown initialization strategy {strategy!r}")


def _perturbed_start(system: ConstraintSystem, seed: int, spread: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = np.array(system.flat_start, dtype=float)
    for v in system.variables:
        k = v.index
        lo, hi = system.lower[k], system.upper[k]
        if math.isfinite(lo) and math.isfinite(hi):
            x[k] = rng.uniform(lo, hi)
        elif v.kind.endswith("_r") or v.kind.endswith("_i"):
            x[k] += spread * rng.standard_normal()
        else:
            x[k] *= 1.0 + spread * rng.uniform(-1.0, 1.0)
    return np.clip(x, system.lower, system.upper)


# --------------------------------------------------------------------------
# Core iteration
# --------------------------------------------------------------------------


class _Augmented:
    """Slack-augmented residual map ``F(x, s) = [h(x); g(x) + s]``."""

    def __init__(self, system: ConstraintSystem, upper: np.ndarray | None = None):
        self.system = system
        self.n = system.n_vars
        self.m_eq = len(system.equalities)
        self.m_in = len(system.inequalities)
        self.lower = np.concatenate([system.lower, np.zeros(self.m_in)])
        self.upper = np.concatenate([system.upper, np.full(self.m_in, np.inf)])
        if upper is not None:
            self.upper[: self.n] = upper

    def split(self, y):
        return y[: self.n], y[self.n :]

    def start(self, x):
        x = np.clip(x, self.lower[: self.n], self.upper[: self.n])
        g = self.system.eval_ineq(x)
        return np.concatenate([x, np.maximum(0.0, -g)])

    def residual(self, y):
        x, s = self.split(y)
        return np.concatenate([self.system.eval_eq(x), self.system.eval_ineq(x) + s])

    def jacobian(self, y):
        x, _ = self.split(y)
        J = np.zeros((self.m_eq + self.m_in, self.n + self.m_in))
        J[: self.m_eq, : self.n] = self.system.jac_eq(x).toarray()
        J[self.m_eq :, : self.n] = self.system.jac_ineq(x).toarray()
        J[self.m_eq :, self.n :] = np.eye(self.m_in)
        return J

    def norms(self, y):
        x, _ = self.split(y)
        h = self.system.eval_eq(x)
        g = self.system.eval_ineq(x)
        eq_inf = float(np.max(np.abs(h), initial=0.0))
        ineq_max = float(np.max(g, initial=0.0))
        return eq_inf, ineq_max


def _lm(aug: _Augmented, x0, config: SolverConfig, trace: TraceWriter | None, label: str):
    y = aug.start(x0)
    F = aug.residual(y)
    merit = 0.5 * float(F @ F)
    J = aug.jacobian(y)
    lam = None
    nu = 2.0
    history = [merit]
    for it in range(1, config.max_iter + 1):
        eq_inf, ineq_max = aug.norms(y)
        if trace is not None:
            trace.row(label, it - 1, merit, eq_inf, ineq_max, 0.0 if lam is None else lam)
        if eq_inf <= config.eq_tol and ineq_max <= config.ineq_tol:
            y, extra = _refine(aug, y, F, J, merit, config.refine_steps)
            return aug.split(y)[0], it - 1 + extra, merit, "converged"

        if lam is None:
            lam = config.lm_tau * max(1.0, float(np.max(np.sum(J * J, axis=0), initial=1.0)))
        y_new = _free_step(aug, y, F, J, lam)
        step = y_new - y
        F_new = aug.residual(y_new)
        if not np.all(np.isfinite(F_new)):
            lam *= nu
            nu *= 2.0
            history.append(merit)
            continue
        merit_new = 0.5 * float(F_new @ F_new)
        lin = F + J @ step
        predicted = merit - 0.5 * float(lin @ lin)
        rho = (merit - merit_new) / predicted if predicted > 0 else -1.0
        if rho > 1e-4:
            y, F, merit = y_new, F_new, merit_new
            J = aug.jacobian(y)
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            lam = max(lam, 1e-300)
            nu = 2.0
        else:
            lam *= nu
            nu *= 2.0
        history.append(merit)

        w = config.stall_window
        if len(history) > w:
            old = history[-w - 1]
            if old - merit <= config.stall_rtol * old or lam > 1e20:
                return aug.split(y)[0], it, merit, "stalled"

    eq_inf, ineq_max = aug.norms(y)
    if trace is not None:
        trace.row(label, config.max_iter, merit, eq_inf, ineq_max, lam or 0.0)
    if eq_inf <= config.eq_tol and ineq_max <= config.ineq_tol:
        return aug.split(y)[0], config.max_iter, merit, "converged"
    return aug.split(y)[0], config.max_iter, merit, "iteration_limit"


def _free_step(aug: _Augmented, y, F, J, lam):
    grad = J.T @ F
    pinned = ((y <= aug.lower) & (grad > 0)) | ((y >= aug.upper) & (grad < 0))
    free = ~pinned
    A = J[:, free]
    # least-squares form of the damped normal equations: [A; sqrt(lam) I] d = [-F; 0]
    stacked = np.vstack([A, math.sqrt(lam) * np.eye(A.shape[1])])
    rhs = np.concatenate([-F, np.zeros(A.shape[1])])
    d = scipy.linalg.lstsq(stacked, rhs, lapack_driver="gelsy", check_finite=False)[0]
    y_new = y.copy()
    y_new[free] += d
    np.clip(y_new, aug.lower, aug.upper, out=y_new)
    return y_new


def _refine(aug: _Augmented, y, F, J, merit, steps: int):
    """A few nearly undamped steps past the tolerance, kept only while they
    reduce the merit, so reported values sit close to the exact solution."""
    done = 0
    for _ in range(steps):
        y_new = _free_step(aug, y, F, J, 1e-14)
        F_new = aug.residual(y_new)
        merit_new = 0.5 * float(F_new @ F_new)
        if not (np.all(np.isfinite(F_new)) and merit_new < 0.25 * merit):
            break
        y, F, merit = y_new, F_new, merit_new
        J = aug.jacobian(y)
        done += 1
    return y, done


def _polish(system: ConstraintSystem, x: np.ndarray, config: SolverConfig):
    """Switch off activation variables left on by phases that are not saturated.

    The relaxed complementarity lets an activation sit at up to
    ``eps / (1 - |I|^2/Imax^2)`` on an unsaturated phase. Pin those to zero and
    re-solve from the current point; keep the result only if it re-checks.
    """
    threshold = math.sqrt(config.comp_eps)
    g = system.eval_ineq(x)
    upper = np.array(system.upper, dtype=float)
    pinned = False
    for res, value in zip(system.inequalities, g):
        if res.tag != "inverter.saturation":
            continue
        act = next(vs[0] for c, vs in res.terms if len(vs) == 1)
        if x[act] <= 0.0:
            continue
        factor = (value + system.comp_eps) / x[act]
        if factor > threshold:
            upper[act] = system.lower[act]
            pinned = True
    if not pinned:
        return None
    x_pin = np.minimum(x, upper)
    x_new, iters, _, reason = _lm(_Augmented(system, upper), x_pin, config, None, "polish")
    if reason != "converged":
        return None
    ok, _, _ = check_point(system, x_new, config.eq_tol, config.ineq_tol)
    return (x_new, iters) if ok else None


def violations(system: ConstraintSystem, x: np.ndarray) -> list[tuple[str, str, float]]:
    """(name, family, violation) for every equality and inequality."""
    h = system.eval_eq(x)
    g = system.eval_ineq(x)
    out = [(r.name, r.family, abs(float(v))) for r, v in zip(system.equalities, h)]
    out += [(r.name, r.family, max(0.0, float(v))) for r, v in zip(system.inequalities, g)]
    return out


def violation_measure(system: ConstraintSystem, x: np.ndarray) -> float:
    h = system.eval_eq(x)
    g = np.maximum(system.eval_ineq(x), 0.0)
    return 0.5 * float(h @ h + g @ g)


def active_set(system: ConstraintSystem, x: np.ndarray, tol: float) -> list[str]:
    g = system.eval_ineq(x)
    names = [r.name for r, v in zip(system.inequalities, g) if v >= -tol]
    for v in system.variables:
        k = v.index
        if x[k] - system.lower[k] <= tol:
            names.append(f"{v.name}>=lower")
        elif system.upper[k] - x[k] <= tol:
            names.append(f"{v.name}<=upper")
    return names


def solve(
    system: ConstraintSystem,
    config: SolverConfig | None = None,
    *,
    warm: SolveResult | None = None,
    x0: np.ndarray | None = None,
    trace: TraceWriter | None = None,
) -> SolveResult:
    """Find a point satisfying every constraint of ``system``.

    The primary start is a flat start, a warm start from ``warm`` (when
    ``config.init == "warm_start"`` or ``warm`` is given) or an explicit
    ``x0``. If it does not converge, seeded perturbed restarts follow.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    aug = _Augmented(system)

    if x0 is not None:
        starts = [("given", np.asarray(x0, dtype=float))]
    elif warm is not None:
        starts = [("warm", initial_point(system, "warm_start", warm))]
    else:
        if config.init == "warm_start":
            raise ValueError("warm_start initialization needs a previous result")
        starts = [("flat", initial_point(system, "flat_start"))]
    starts += [(f"restart{seed}", None) for seed in config.seeds[: config.restarts]]

    attempts: list[Attempt] = []
    best_x = None
    best_merit = math.inf
    total = 0
    for label, start in starts:
        if start is None:
            start = _perturbed_start(system, int(label.removeprefix("restart")), config.restart_spread)
        x, iters, merit, reason = _lm(aug, start, config, trace, label)
        total += iters
        attempts.append(Attempt(label, iters, merit, reason))
        logger.debug("attempt %s: %s after %d iterations (merit %.3e)", label, reason, iters, merit)
        if reason == "converged":
            ok, eq_inf, viol = check_point(system, x, config.eq_tol, config.ineq_tol)
            if ok:
                polished = _polish(system, x, config)
                if polished is not None:
                    x, extra = polished
                    iters += extra
                    total += extra
                    _, eq_inf, viol = check_point(system, x, config.eq_tol, config.ineq_tol)
                return SolveResult(
                    status=Status.FEASIBLE,
                    x=x,
                    eq_residual=eq_inf,
                    max_violation=viol,
                    iterations=iters,
                    total_iterations=total,
                    active=active_set(system, x, config.ineq_tol),
                    elapsed=time.perf_counter() - t0,
                    system=system,
                    attempts=attempts,
                )
            attempts[-1].reason = "recheck_failed"
        measure = violation_measure(system, x)
        if measure < best_merit:
            best_merit, best_x = measure, x

    # every attempt stalled -> infeasible; any hit the iteration cap -> distinct status
    status = Status.INFEASIBLE
    if any(a.reason == "iteration_limit" for a in attempts):
        status = Status.ITERATION_LIMIT
    _, eq_inf, viol = check_point(system, best_x, config.eq_tol, config.ineq_tol)
    worst = sorted(violations(system, best_x), key=lambda t: -t[2])[:10]
    return SolveResult(
        status=status,
        x=best_x,
        eq_residual=eq_inf,
        max_violation=viol,
        iterations=attempts[-1].iterations,
        total_iterations=total,
        active=active_set(system, best_x, config.ineq_tol),
        elapsed=time.perf_counter() - t0,
        system=system,
        attempts=attempts,
        violation_measure=best_merit,
        worst_violated=[(n, v) for n, _, v in worst if v > 0],
    )


@dataclass
class InfeasibilityReport:
    families: list[tuple[str, float]]
    worst: list[tuple[str, str, float]]

    @property
    def top_family(self) -> str:
        return self.families[0][0]

    def to_dict(self) -> dict:
        return {
            "families": [[f, v] for f, v in self.families],
            "worst": [[n, f, v] for n, f, v in self.worst],
        }


def classify_infeasibility(result: SolveResult, system: ConstraintSystem | None = None) -> InfeasibilityReport:
    """Group terminal violations by constraint family, largest mass first."""
    if result.feasible:
        raise ValueError("classify_infeasibility needs a result that is not Feasible")
    system = system or result.system
    viol = violations(system, result.x)
    mass = {f: 0.0 for f in FAMILIES}
    for _, fam, v in viol:
        mass[fam] = mass.get(fam, 0.0) + v
    ranked = sorted(((f, m) for f, m in mass.items() if m > 0), key=lambda t: (-t[1], FAMILIES.index(t[0])))
    if not ranked:
        ranked = [("none", 0.0)]
    worst = sorted((t for t in viol if t[2] > 0), key=lambda t: -t[2])[:10]
    return InfeasibilityReport(families=ranked, worst=worst)
