"""Longitudinal vehicle scenario: dynamics, barrier templates, traffic
signals, and closed-form safe-input bounds used to cross-check the generic
constraint generators.

State is x = (X_f, V_f, X_l): ego position, ego speed, lead position. The
lead vehicle's speed and acceleration arrive over V2V as exogenous signals;
speed limits and signal phases over V2I. Templates:

  spacing (h1)    X_r - t_hw V_f - S0 - (V_f^2 - V_l^2)/(2 a_max)
  speed limit     V_max(t) - V_f, piecewise constant in t
  signals (hpos)  P_k - X_f - beta V_f - S0 against the active signal's stop
                  line during red, against the next line otherwise; the
                  active index k is the first signal at or ahead of X_f

All three have analytic derivatives; the signal barrier is the indicator
stitching of per-signal affine pieces and is evaluated as +inf past the last
stop line (no constraint remains).
"""

from __future__ import annotations

import math
import random
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Optional, Sequence

from .barriers import (
    AffineBarrier,
    AlphaFn,
    Barrier,
    IDENTITY_ALPHA,
    StateBox,
)
from .contracts import ScheduleConfig, TaskGroup, build_schedule
from .sim import ControlSystem
from .stl import PredicateRef, TimeInterval

GREEN, YELLOW, RED = "green", "yellow", "red"


class VehicleError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters of the ego vehicle and its constraint templates."""

    mass: float = 1650.0            # kg
    c0: float = 0.1                 # N
    c1: float = 5.0                 # N/(m/s)
    c2: float = 0.25                # N/(m/s)^2
    t_headway: float = 1.0          # s, spacing constraint
    s0: float = 5.0                 # m, standstill gap
    a_max: float = 3.92             # m/s^2, braking capability
    beta: float = 2.0               # s, signal/speed headway
    g_grav: float = 9.8             # m/s^2

    def __post_init__(self):
        for name in ("mass", "c0", "c1", "c2", "t_headway", "s0", "a_max", "beta", "g_grav"):
            if not getattr(self, name) > 0:
                raise VehicleError(f"{name} must be positive, got {getattr(self, name)}")
        if self.a_max > self.g_grav:
            raise VehicleError(f"a_max {self.a_max} exceeds g {self.g_grav}")


def friction_force(v_f: float, p: VehicleParams) -> float:
    """Rolling/aerodynamic resistance c0 + c1 V + c2 V^2 at speed v_f >= 0."""
    return p.c0 + p.c1 * v_f + p.c2 * v_f * v_f


# ---------------------------------------------------------------------------
# Exogenous signals
# ---------------------------------------------------------------------------


class LeadProfile:
    """Lead vehicle driven by a piecewise-constant acceleration profile.

    `accel_rows` is a sorted list of (t, a). Speed is clamped at zero: a
    braking piece that would push V_l negative stops the lead until a later
    piece accelerates again. Position/velocity are evaluated exactly from the
    resulting breakpoints.
    """

    def __init__(self, x0: float, v0: float, accel_rows: Sequence = ((0.0, 0.0),)):
        if v0 < 0:
            raise VehicleError(f"lead initial speed must be >= 0, got {v0}")
        rows = [(float(t), float(a)) for t, a in accel_rows]
        if not rows or rows[0][0] > 0:
            rows.insert(0, (0.0, 0.0))
        if [t for t, _ in rows] != sorted({t for t, _ in rows}):
            raise VehicleError("lead profile times must be strictly increasing")

        # breakpoints (t, x, v, a): within a piece v is linear, x quadratic
        bps = []
        t, xx, v = 0.0, float(x0), float(v0)
        for i, (t_i, a_i) in enumerate(rows):
            t_next = rows[i + 1][0] if i + 1 < len(rows) else math.inf
            a = 0.0 if (v <= 0 and a_i < 0) else a_i
            bps.append((t, xx, v, a))
            if a < 0:
                t_stop = t + v / (-a)
                if t_stop < t_next:
                    xx += v * (t_stop - t) + 0.5 * a * (t_stop - t) ** 2
                    v = 0.0
                    t = t_stop
                    bps.append((t, xx, v, 0.0))
                    a = 0.0
            if t_next is not math.inf:
                dt = t_next - t
                xx += v * dt + 0.5 * a * dt * dt
                v += a * dt
                t = t_next
        self._bps = bps
        self._times = [b[0] for b in bps]

    def _piece(self, t: float):
        return self._bps[max(bisect_right(self._times, t) - 1, 0)]

    def velocity(self, t: float) -> float:
        t0, _, v, a = self._piece(t)
        return v + a * (t - t0)

    def accel(self, t: float) -> float:
        return self._piece(t)[3]

    def position(self, t: float) -> float:
        t0, x0, v, a = self._piece(t)
        dt = t - t0
        return x0 + v * dt + 0.5 * a * dt * dt

    @property
    def switch_times(self) -> tuple:
        return tuple(self._times[1:])


class SpeedLimitSchedule:
    """Piecewise-constant V_max(t): rows (t_start, v_max) tiling [0, horizon)."""

    def __init__(self, rows: Sequence, horizon: float):
        rows = [(float(t), float(v)) for t, v in rows]
        if not rows:
            raise VehicleError("speed limit schedule is empty")
        if rows[0][0] != 0.0:
            raise VehicleError("speed limit schedule must start at t=0")
        times = [t for t, _ in rows]
        if times != sorted(set(times)):
            raise VehicleError("speed limit intervals overlap or are unordered")
        if any(v <= 0 for _, v in rows):
            raise VehicleError("speed limits must be positive")
        if times[-1] >= horizon:
            raise VehicleError("speed limit row starts at or beyond the horizon")
        self.rows = rows
        self.horizon = float(horizon)
        self._times = times

    def value(self, t: float) -> float:
        return self.rows[max(bisect_right(self._times, t) - 1, 0)][1]

    @property
    def switch_times(self) -> tuple:
        return tuple(self._times[1:])

    def intervals(self):
        """(TimeInterval, v_max) pieces over [0, horizon)."""
        out = []
        for i, (t0, v) in enumerate(self.rows):
            t1 = self.rows[i + 1][0] if i + 1 < len(self.rows) else self.horizon
            out.append((TimeInterval(t0, t1), v))
        return out


@dataclass(frozen=True)
class SignalTimings:
    """One traffic signal: stop-line position and a fixed g/y/r cycle.

    `offset` is the cycle time at t=0, so phase(t) follows the cycle
    green [0,g) -> yellow [g,g+y) -> red [g+y,P) with P = g+y+r.
    """

    position: float
    green_dur: float
    yellow_dur: float
    red_dur: float
    offset: float = 0.0

    def __post_init__(self):
        if min(self.green_dur, self.yellow_dur, self.red_dur) <= 0:
            raise VehicleError("phase durations must be positive")
        if not 0 <= self.offset < self.period:
            raise VehicleError(f"offset must lie in [0, period), got {self.offset}")

    @property
    def period(self) -> float:
        return self.green_dur + self.yellow_dur + self.red_dur

    def phase(self, t: float, side: str = "right") -> str:
        c = (t + self.offset) % self.period
        if side == "left":
            c = (c - 1e-12) % self.period
        if c < self.green_dur:
            return GREEN
        if c < self.green_dur + self.yellow_dur:
            return YELLOW
        return RED

    def cycles_over(self, horizon: float):
        """Per cycle (green_on, yellow_on, red_on, next_green_on) absolute
        times, covering [0, horizon]. Consecutive cycles share bit-identical
        boundaries (one formula per boundary) so schedule tiling stays exact."""
        starts = []
        j = -1
        while True:
            start = j * self.period - self.offset
            starts.append(start)
            if start > horizon:
                break
            j += 1
        return [
            (s, s + self.green_dur, s + self.green_dur + self.yellow_dur, starts[k + 1])
            for k, s in enumerate(starts[:-1])
        ]


def generate_signal_plan(seed: int, count: int = 10, first_position: float = 400.0,
                         spacing=(300.0, 800.0), green=(25.0, 40.0),
                         yellow=(4.0, 6.0), red=(15.0, 30.0)) -> list:
    """Deterministic plan: unequal spacings and unequal, unsynchronized cycles."""
    rng = random.Random(seed)
    signals = []
    pos = first_position
    for _ in range(count):
        g = rng.uniform(*green)
        y = rng.uniform(*yellow)
        r = rng.uniform(*red)
        offset = rng.uniform(0.0, g + y + r - 1e-6)
        signals.append(SignalTimings(pos, g, y, r, offset))
        pos += rng.uniform(*spacing)
    return signals


@dataclass(frozen=True)
class ExogenousSignals:
    """Everything the ego receives over V2V/V2I."""

    lead: LeadProfile
    limits: Optional[SpeedLimitSchedule] = None
    signals: tuple = ()

    def active_signal_index(self, x_f: float) -> int:
        """0-based index of the signal at or ahead of X_f (== len past the last)."""
        return bisect_left([s.position for s in self.signals], x_f)


# ---------------------------------------------------------------------------
# Barrier templates
# ---------------------------------------------------------------------------


class SpacingBarrier(Barrier):
    """h1 = X_r - t_hw V_f - S0 - (V_f^2 - V_l^2)/(2 a_max).

    The lead speed enters as an exogenous time signal, so
    dh/dt = V_l a_l / a_max and grad_x = (-1, -t_hw - V_f/a_max, +1).
    """

    def __init__(self, vp: VehicleParams, lead: LeadProfile, barrier_id: str = "h1"):
        super().__init__(barrier_id, IDENTITY_ALPHA)
        self.vp = vp
        self.lead = lead

    def h(self, t, x):
        vl = self.lead.velocity(t)
        return ((x[2] - x[0]) - self.vp.t_headway * x[1] - self.vp.s0
                - (x[1] * x[1] - vl * vl) / (2 * self.vp.a_max))

    def dh_dt(self, t, x):
        return self.lead.velocity(t) * self.lead.accel(t) / self.vp.a_max

    def grad_x(self, t, x):
        return (-1.0, -self.vp.t_headway - x[1] / self.vp.a_max, 1.0)

    def is_smooth_at(self, t, x, t_pad=0.0, x_pad=0.0):
        return all(abs(t - ts) > t_pad for ts in self.lead.switch_times)


def spacing_barrier(vp: VehicleParams, lead: LeadProfile, barrier_id: str = "h1") -> SpacingBarrier:
    return SpacingBarrier(vp, lead, barrier_id)


def speed_limit_barrier(limits: SpeedLimitSchedule, vp: VehicleParams,
                        barrier_id: str = "hv") -> AffineBarrier:
    """Stitched h_v = V_max(t) - V_f with jumps flagged at the switch times.
    Carries alpha(h) = h/beta, which reproduces the case-study bound
    u <= (m/beta) h_v + F_r."""
    return AffineBarrier(
        barrier_id, coeffs=(0.0, -1.0, 0.0),
        pieces=[(t, v) for t, v in limits.rows],
        alpha=AlphaFn(1.0 / vp.beta),
    )


class TrafficSignalBarrier(Barrier):
    """Indicator-stitched h_pos over all signals.

    With k the active signal for X_f (first stop line at or ahead), the value
    is P_k - X_f - beta V_f - S0 during k's red phase and the same expression
    against P_{k+1} otherwise; past the last line the barrier is vacuous
    (+inf). Non-smooth at stop-line crossings and phase switches.
    """

    def __init__(self, signals: Sequence[SignalTimings], vp: VehicleParams,
                 barrier_id: str = "hpos"):
        super().__init__(barrier_id, IDENTITY_ALPHA)
        self.signals = list(signals)
        self.positions = [s.position for s in self.signals]
        if self.positions != sorted(self.positions):
            raise VehicleError("signal positions must increase")
        self.vp = vp

    def _stop_line(self, t, x, side="right"):
        k = bisect_left(self.positions, x[0])
        if k >= len(self.signals):
            return None
        if self.signals[k].phase(t, side) == RED:
            return self.positions[k]
        return self.positions[k + 1] if k + 1 < len(self.signals) else None

    def h(self, t, x):
        line = self._stop_line(t, x)
        if line is None:
            return math.inf
        return line - x[0] - self.vp.beta * x[1] - self.vp.s0

    def h_left(self, t, x):
        line = self._stop_line(t, x, side="left")
        if line is None:
            return math.inf
        return line - x[0] - self.vp.beta * x[1] - self.vp.s0

    def dh_dt(self, t, x):
        return 0.0

    def grad_x(self, t, x):
        if self._stop_line(t, x) is None:
            return (0.0, 0.0, 0.0)
        return (-1.0, -self.vp.beta, 0.0)

    def is_smooth_at(self, t, x, t_pad=0.0, x_pad=0.0):
        k = bisect_left(self.positions, x[0])
        if k >= len(self.signals):
            return False
        if any(abs(x[0] - p) <= x_pad for p in self.positions[max(k - 1, 0):k + 2]):
            return False
        sig = self.signals[k]
        c = (t + sig.offset) % sig.period
        marks = (0.0, sig.green_dur, sig.green_dur + sig.yellow_dur, sig.period)
        if any(abs(c - mk) <= t_pad for mk in marks):
            return False
        if sig.phase(t) != RED and k + 1 >= len(self.signals):
            return False  # vacuous +inf region
        return True


def signal_barriers(signals: Sequence[SignalTimings], vp: VehicleParams,
                    barrier_id: str = "hpos") -> TrafficSignalBarrier:
    return TrafficSignalBarrier(signals, vp, barrier_id)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def make_vehicle_system(vp: VehicleParams, lead: LeadProfile,
                        domain: Optional[StateBox] = None) -> ControlSystem:
    """Longitudinal dynamics: X_f' = V_f, V_f' = (u - F_r)/m, X_l' = V_l(t)."""
    if domain is None:
        domain = StateBox((-1e4, 0.0, -1e4), (1e6, 80.0, 1e7))
    inv_m = 1.0 / vp.mass
    g_mat = ((0.0,), (inv_m,), (0.0,))

    def f(t, x):
        return (x[1], -friction_force(x[1], vp) * inv_m, lead.velocity(t))

    def g(t, x):
        return g_mat

    return ControlSystem(n=3, m=1, f=f, g=g, domain=domain, clamp_min_dims=(1,))


# ---------------------------------------------------------------------------
# Closed-form safe-input bounds (cross-checks for the generic generators)
# ---------------------------------------------------------------------------

_KINDS = ("h1", "rbar", "v", "r_fcbf", "v_fcbf")


def closed_form_bound(kind: str, t: float, x, vp: VehicleParams, *,
                      v_l: float = 0.0, a_l: float = 0.0, v_max: float = 0.0,
                      p_signal: float = 0.0, p_next: float = 0.0,
                      gamma: float = 0.0, rho: float = 0.0) -> float:
    """Upper bound on u derived by expanding the barrier condition by hand.

    Derived from first principles for each template; these must coincide with
    the generic constraint generators to machine precision (the invariance
    bounds also match the published case-study forms; the published finite-
    time forms drop the -V_f drift term for the signal case and carry a
    spurious 1/beta for the speed case, so those two are reproduced from the
    defining inequality instead).
    """
    fr = friction_force(x[1], vp)
    v_f = x[1]
    if kind == "h1":
        h1 = (x[2] - x[0]) - vp.t_headway * v_f - vp.s0 - (v_f * v_f - v_l * v_l) / (2 * vp.a_max)
        v_r = v_l - v_f
        return (vp.mass * vp.a_max / (vp.t_headway * vp.a_max + v_f)) * (
            h1 + v_r + v_l * a_l / vp.a_max) + fr
    if kind == "rbar":
        h = p_next - x[0] - vp.beta * v_f - vp.s0
        return (vp.mass / vp.beta) * (h - v_f) + fr
    if kind == "v":
        return (vp.mass / vp.beta) * (v_max - v_f) + fr
    if kind == "r_fcbf":
        h = p_signal - x[0] - vp.beta * v_f - vp.s0
        return (vp.mass / vp.beta) * (_pull(h, gamma, rho) - v_f) + fr
    if kind == "v_fcbf":
        return vp.mass * _pull(v_max - v_f, gamma, rho) + fr
    raise VehicleError(f"unknown bound kind {kind!r}; expected one of {_KINDS}")


def _pull(h: float, gamma: float, rho: float) -> float:
    return 0.0 if h == 0 else gamma * math.copysign(abs(h) ** rho, h)


def constraint_upper_bound(c) -> float:
    """b/a of a single-input halfspace a u <= b with a > 0."""
    if len(c.a) != 1 or c.a[0] <= 0:
        raise VehicleError(f"constraint {c.label} is not an upper bound on a scalar input")
    return c.b / c.a[0]


# ---------------------------------------------------------------------------
# Signal contracts: per-signal schedules dispatched by the active stop line
# ---------------------------------------------------------------------------


@dataclass
class SignalContractSet:
    """Realizes the stitched signal barrier through the schedule machinery.

    Each signal gets its own schedule over its phase timeline: invariance on
    the phase-selected barrier, with the yellow phase as the finite-time
    window into the red-phase set. At runtime only the active signal's
    schedule (selected by X_f) contributes constraints, and each window's
    gamma is fixed the first time the vehicle is subject to it.
    """

    label: str
    positions: list
    schedules: list
    stitched_id: str = "hpos"

    def _active(self, x_f: float) -> int:
        return bisect_left(self.positions, x_f)

    def failures(self):
        return [b for sched in self.schedules for b in sched.failures()]

    def assumption_margin(self, x0, registry):
        k = self._active(x0[0])
        if k >= len(self.schedules):
            return None
        return self.schedules[k].assumption_margin(x0, registry)

    def constraints_at(self, t, x, sys, registry, engagements=None):
        k = self._active(x[0])
        if k >= len(self.schedules):
            return []
        return self.schedules[k].constraints_at(t, x, sys, registry, engagements)


def build_signal_contracts(signals: Sequence[SignalTimings], vp: VehicleParams,
                           registry, base_cfg: ScheduleConfig, rho_signal: float,
                           label: str, stitched_id: str = "hpos") -> SignalContractSet:
    """Register per-phase affine barriers and build one schedule per signal.

    Red phases of signal i constrain against P_i; other phases against
    P_{i+1} (vacuous for the last signal). Each red onset r gets the window
    (tau = yellow onset, budget = r - tau), so gamma at engagement follows
    the yellow-duration deadline formula.
    """
    horizon = base_cfg.horizon
    n = len(signals)
    schedules = []
    for i, sig in enumerate(signals):
        red_id = f"sig{i + 1}.red"
        if red_id not in registry:
            registry.register(AffineBarrier(
                red_id, coeffs=(-1.0, -vp.beta, 0.0), offset=sig.position - vp.s0))
        notred_id = None
        if i + 1 < n:
            notred_id = f"sig{i + 1}.notred"
            if notred_id not in registry:
                registry.register(AffineBarrier(
                    notred_id, coeffs=(-1.0, -vp.beta, 0.0),
                    offset=signals[i + 1].position - vp.s0))

        preds = []
        windows = {}
        for g_on, y_on, r_on, g_next in sig.cycles_over(horizon):
            nr0, nr1 = max(g_on, 0.0), min(r_on, horizon)
            if nr1 > nr0 and notred_id is not None:
                preds.append((TimeInterval(nr0, nr1), PredicateRef(notred_id)))
            r0, r1 = max(r_on, 0.0), min(g_next, horizon)
            if r1 > r0:
                preds.append((TimeInterval(r0, r1), PredicateRef(red_id)))
                if r0 == r_on:  # red onset inside the mission: attach the yellow window
                    tau = max(y_on, 0.0)
                    windows[r_on] = (tau, r_on - tau)
        preds.sort(key=lambda p: p[0].start)
        group = TaskGroup(label=f"{label}.s{i + 1}", predicates=tuple(preds))
        cfg = ScheduleConfig(
            domain=base_cfg.domain, horizon=horizon, rho=rho_signal,
            t_conv=base_cfg.t_conv, gamma_min=base_cfg.gamma_min,
            boundary_windows=windows, grid_resolution=base_cfg.grid_resolution,
        )
        schedules.append(build_schedule(group, registry, cfg))
    return SignalContractSet(
        label=label, positions=[s.position for s in signals],
        schedules=schedules, stitched_id=stitched_id,
    )
