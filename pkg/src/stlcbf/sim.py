"""Closed-loop simulation: control-affine dynamics, fixed-step RK4 with
zero-order-hold inputs, trace recording, and the runtime synthesis loop.

At every step the loop gathers the active halfspace constraints from all
group schedules, projects the nominal input through the QP filter, integrates
one step, and records state, inputs, per-barrier margins and QP status. An
empty safe input set or a domain exit aborts the run with a timestamped
failure; the trace prefix up to that point is preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .barriers import StateBox
from .contracts import EngagementLedger, conjoin_groups
from .qp import InputBox, solve_qp

DEFAULT_DT = 0.01
MARGIN_TOL = 1e-3


class SimError(ValueError):
    pass


class InitialConditionError(SimError):
    """Initial state violates a schedule's entry assumption."""


@dataclass(frozen=True)
class ControlSystem:
    """dx/dt = f(t, x) + g(t, x) u on the box domain D.

    f returns an n-tuple, g an n x m matrix as nested tuples; both must be
    locally Lipschitz on D (the shipped templates are). Time enters only
    through exogenous signals bound into f. State components listed in
    `clamp_min_dims` are clamped at the domain floor instead of failing the
    run (a vehicle at rest is meaningful; a negative speed is not).
    """

    n: int
    m: int
    f: Callable
    g: Callable
    domain: StateBox
    clamp_min_dims: tuple = ()

    def __post_init__(self):
        if self.domain.dim != self.n:
            raise SimError(f"domain dimension {self.domain.dim} != n={self.n}")


def integrate_step(sys: ControlSystem, t: float, x, u, dt: float):
    """One classical 4th-order step of dx/dt = f(t,x) + g(t,x) u with u held
    constant over the step."""
    if dt <= 0:
        raise SimError(f"dt must be positive, got {dt}")

    def rate(ti, xi):
        fv = sys.f(ti, xi)
        gm = sys.g(ti, xi)
        return tuple(
            fv[i] + sum(gm[i][j] * u[j] for j in range(sys.m)) for i in range(sys.n)
        )

    k1 = rate(t, x)
    k2 = rate(t + dt / 2, tuple(xi + dt / 2 * ki for xi, ki in zip(x, k1)))
    k3 = rate(t + dt / 2, tuple(xi + dt / 2 * ki for xi, ki in zip(x, k2)))
    k4 = rate(t + dt, tuple(xi + dt * ki for xi, ki in zip(x, k3)))
    return tuple(
        xi + dt / 6 * (a + 2 * b + 2 * c + d)
        for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
    )


@dataclass
class Trace:
    """Uniform-step record of the closed loop.

    Parallel column lists; `margins` holds one list per requested barrier id
    and `extras` any scenario channels (speed limit, signal phase, ...).
    """

    dt: float
    metadata: dict = field(default_factory=dict)
    ts: list = field(default_factory=list)
    states: list = field(default_factory=list)
    u_nom: list = field(default_factory=list)
    u_safe: list = field(default_factory=list)
    margins: dict = field(default_factory=dict)
    active_counts: list = field(default_factory=list)
    qp_status: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def n_rows(self) -> int:
        return len(self.ts)

    def min_margin(self, barrier_id: str):
        vals = self.margins.get(barrier_id, [])
        return min(vals) if vals else math.inf


@dataclass(frozen=True)
class SimFailure:
    time: float
    reason: str  # "qp_infeasible" | "domain_exit" | "non_finite_state"
    details: tuple = ()

    def describe(self) -> str:
        extra = f" [{'; '.join(self.details)}]" if self.details else ""
        return f"{self.reason} at t={self.time:.6f}{extra}"


@dataclass
class RunResult:
    trace: Trace
    failure: Optional[SimFailure]
    engagements: EngagementLedger

    @property
    def ok(self) -> bool:
        return self.failure is None


def run_simulation(
    sys: ControlSystem,
    schedules: Sequence,
    registry,
    nominal: Callable,
    box: InputBox,
    x0,
    dt: float = DEFAULT_DT,
    t_max: float = 0.0,
    margin_barriers: Sequence[str] = (),
    extra_channels: Optional[dict] = None,
    metadata: Optional[dict] = None,
    tol: float = MARGIN_TOL,
) -> RunResult:
    """Run the synthesis loop over [0, t_max] with step dt.

    `nominal(t, x)` returns the unfiltered input (scalar or m-tuple).
    Requires x0 to satisfy every schedule's opening assumption. Returns the
    trace plus a failure record when the QP turns infeasible or the state
    leaves the domain; on success the trace has t_max/dt + 1 rows.
    """
    x = tuple(float(v) for v in x0)
    if len(x) != sys.n:
        raise SimError(f"x0 has dimension {len(x)}, system has {sys.n}")
    if not sys.domain.contains(x, pad=1e-9):
        raise SimError("x0 outside the system domain")

    for sched in schedules:
        entry = sched.assumption_margin(x, registry)
        if entry is not None:
            bar_id, margin = entry
            if margin < -1e-9:
                raise InitialConditionError(
                    f"x0 violates opening assumption of {getattr(sched, 'label', '?')}: "
                    f"h[{bar_id}](0, x0) = {margin:g} < 0"
                )

    trace = Trace(dt=dt, metadata=dict(metadata or {}))
    bars = [(bid, registry.get(bid)) for bid in margin_barriers]
    for bid, _ in bars:
        trace.margins[bid] = []
    extra_channels = extra_channels or {}
    for name in extra_channels:
        trace.extras[name] = []

    engagements = EngagementLedger()
    n_steps = round(t_max / dt)
    zero_u = (0.0,) * sys.m
    last_u_nom, last_u_safe = zero_u, zero_u
    clamped_prev = [False] * sys.n
    logged_engagements = set()

    def record(t, status, active, u_n, u_s):
        trace.ts.append(t)
        trace.states.append(x)
        trace.u_nom.append(u_n)
        trace.u_safe.append(u_s)
        trace.active_counts.append(active)
        trace.qp_status.append(status)
        for bid, bar in bars:
            trace.margins[bid].append(bar.h(t, x))
        for name, fn in extra_channels.items():
            trace.extras[name].append(fn(t, x))

    for k in range(n_steps + 1):
        t = k * dt
        if k == n_steps:
            record(t, "ok", 0, last_u_nom, last_u_safe)
            break

        cons = conjoin_groups(schedules, t, x, sys, registry, engagements)
        if len(engagements.records) > len(logged_engagements):
            for key, rec in engagements.records.items():
                if key not in logged_engagements:
                    trace.events.append((t, rec.describe()))
                    if rec.time + rec.t_conv_bound > rec.boundary_time + 1e-9:
                        # late engagement: the bound lands past the switch
                        trace.events.append((t, f"deadline-risk {rec.describe()}"))
                    logged_engagements.add(key)

        u_n = nominal(t, x)
        u_n = tuple(float(v) for v in (u_n if isinstance(u_n, (tuple, list)) else (u_n,)))
        u_s = solve_qp(u_n, cons, box)
        if u_s is None:
            record(t, "infeasible", len(cons), u_n, (math.nan,) * sys.m)
            return RunResult(trace, SimFailure(
                time=t, reason="qp_infeasible",
                details=tuple(c.label or "box" for c in cons),
            ), engagements)
        record(t, "ok", len(cons), u_n, u_s)
        last_u_nom, last_u_safe = u_n, u_s

        x = integrate_step(sys, t, x, u_s, dt)
        if any(not math.isfinite(v) for v in x):
            return RunResult(trace, SimFailure(t + dt, "non_finite_state"), engagements)
        xl = list(x)
        for i in sys.clamp_min_dims:
            if xl[i] < sys.domain.lower[i]:
                xl[i] = sys.domain.lower[i]
                if not clamped_prev[i]:
                    trace.events.append((t + dt, f"state[{i}] clamped at domain floor"))
                clamped_prev[i] = True
            else:
                clamped_prev[i] = False
        x = tuple(xl)
        if not sys.domain.contains(x, pad=1e-9):
            bad = [
                f"x[{i}]={v:g} outside [{lo:g},{hi:g}]"
                for i, (v, lo, hi) in enumerate(zip(x, sys.domain.lower, sys.domain.upper))
                if not (lo - 1e-9 <= v <= hi + 1e-9)
            ]
            return RunResult(trace, SimFailure(t + dt, "domain_exit", tuple(bad)), engagements)

    return RunResult(trace, None, engagements)
