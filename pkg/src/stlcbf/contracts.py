"""Composition of barrier contracts over adjacent time intervals.

A group of globally-predicates on disjoint intervals becomes a schedule of
invariance segments tiling [0, horizon) (gaps filled with vacuous segments).
Each internal boundary t_i is classified:

  subset            C_prev(t_i-) is contained in C_next(t_i): every safe
                    trajectory continues, nothing extra to do.
  overlap_deadline  the sets merely intersect: a finite-time segment on
                    [tau_i, t_i) steers into C_next before the switch, with
                    gamma sized at engagement to meet the deadline.
  incompatible      empty intersection, or the convergence window does not
                    fit: no controller can serve every admissible start.

Subset / intersection checks are exact for affine-in-state barriers (vertex
enumeration of the box-and-halfspace polytope); other templates fall back to
deterministic grid sampling with the method recorded in the verdict.
"""

from __future__ import annotations

import enum
import itertools
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional

from .barriers import (
    Barrier,
    FcbfParams,
    GAMMA_MIN,
    StateBox,
    TopBarrier,
    cbf_constraint,
    convergence_time,
    fcbf_constraint,
    gamma_for_deadline,
)
from .stl import PredicateRef, TaskGroup, TimeInterval


class ContractError(ValueError):
    pass


class ScheduleQueryError(ContractError):
    """Query outside the schedule's time span."""


class Verdict(enum.Enum):
    SUBSET = "subset"
    OVERLAP_DEADLINE = "overlap_deadline"
    INCOMPATIBLE = "incompatible"


EXACT = "exact"


def _affine_value(coeffs, offset, x) -> float:
    return sum(c * xi for c, xi in zip(coeffs, x)) + offset


def _cut_vertices(box: StateBox, coeffs, offset, tol: float = 1e-12):
    """Vertices of box intersected with {coeffs.x + offset >= 0}.

    For a linear objective over this (compact) polytope the optimum sits at
    one of: box vertices inside the halfspace, or intersections of the cut
    hyperplane with box edges.
    """
    verts = [v for v in box.vertices() if _affine_value(coeffs, offset, v) >= -tol]
    if all(c == 0 for c in coeffs):
        return verts
    n = box.dim
    for free in range(n):
        c_free = coeffs[free]
        if c_free == 0:
            continue
        others = [i for i in range(n) if i != free]
        for combo in itertools.product(*[(box.lower[i], box.upper[i]) for i in others]):
            rest = offset + sum(coeffs[i] * combo[k] for k, i in enumerate(others))
            xf = -rest / c_free
            if box.lower[free] - tol <= xf <= box.upper[free] + tol:
                point = [0.0] * n
                for k, i in enumerate(others):
                    point[i] = combo[k]
                point[free] = min(max(xf, box.lower[free]), box.upper[free])
                verts.append(tuple(point))
    return verts


def _grid_points(box: StateBox, resolution: int):
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        if resolution == 1:
            axes.append([0.5 * (lo + hi)])
        else:
            step = (hi - lo) / (resolution - 1)
            axes.append([lo + k * step for k in range(resolution)])
    return itertools.product(*axes)


@dataclass(frozen=True)
class SubsetCheck:
    holds: bool
    method: str
    counterexample: Optional[tuple] = None  # h_prev >= 0 but h_next < 0


@dataclass(frozen=True)
class IntersectionCheck:
    witness: Optional[tuple]  # h_prev(t-) >= 0 and h_next(t) >= 0, or None
    method: str
    margin: float = math.nan  # h_next at the witness


def _require_domain(domain: StateBox):
    if domain.is_degenerate():
        raise ContractError("degenerate (zero-width) domain box")


def check_subset(h_prev: Barrier, h_next: Barrier, t: float, domain: StateBox,
                 resolution: int = 101) -> SubsetCheck:
    """Does every x in the domain with h_prev(t-, x) >= 0 satisfy
    h_next(t, x) >= 0? Exact for affine templates, sampled otherwise."""
    _require_domain(domain)
    prev_aff = h_prev.affine_at(t, side="left")
    next_aff = h_next.affine_at(t, side="right")
    if prev_aff is not None and next_aff is not None:
        cand = _cut_vertices(domain, *prev_aff)
        if not cand:
            return SubsetCheck(True, EXACT)  # C_prev misses the domain: vacuous
        worst = min(cand, key=lambda v: _affine_value(*next_aff, v))
        if _affine_value(*next_aff, worst) >= -1e-9:
            return SubsetCheck(True, EXACT)
        return SubsetCheck(False, EXACT, counterexample=worst)

    method = f"sampled({resolution})"
    for pt in _grid_points(domain, resolution):
        if h_prev.h_left(t, pt) >= 0 and h_next.h(t, pt) < -1e-9:
            return SubsetCheck(False, method, counterexample=pt)
    return SubsetCheck(True, method)


def check_intersection(h_prev: Barrier, h_next: Barrier, t: float, domain: StateBox,
                       resolution: int = 101) -> IntersectionCheck:
    """Witness x with h_prev(t-, x) >= 0 and h_next(t, x) >= 0, or None."""
    _require_domain(domain)
    prev_aff = h_prev.affine_at(t, side="left")
    next_aff = h_next.affine_at(t, side="right")
    if prev_aff is not None and next_aff is not None:
        cand = _cut_vertices(domain, *prev_aff)
        if not cand:
            return IntersectionCheck(None, EXACT)
        best = max(cand, key=lambda v: _affine_value(*next_aff, v))
        val = _affine_value(*next_aff, best)
        if val >= -1e-12:
            return IntersectionCheck(best, EXACT, margin=val)
        return IntersectionCheck(None, EXACT)

    method = f"sampled({resolution})"
    best_pt, best_val = None, -math.inf
    for pt in _grid_points(domain, resolution):
        if h_prev.h_left(t, pt) >= 0:
            val = h_next.h(t, pt)
            if val > best_val:
                best_pt, best_val = pt, val
    if best_pt is not None and best_val >= -1e-12:
        return IntersectionCheck(best_pt, method, margin=best_val)
    return IntersectionCheck(None, method)


def _worst_engage_margin(h_prev, h_next, tau, domain, resolution):
    """min h_next(tau, x) over C_prev(tau) in the domain (pessimistic)."""
    prev_aff = h_prev.affine_at(tau)
    next_aff = h_next.affine_at(tau)
    if prev_aff is not None and next_aff is not None:
        cand = _cut_vertices(domain, *prev_aff)
        if not cand:
            return 0.0, EXACT
        return min(_affine_value(*next_aff, v) for v in cand), EXACT
    method = f"sampled({resolution})"
    worst = math.inf
    for pt in _grid_points(domain, resolution):
        if h_prev.h(tau, pt) >= 0:
            worst = min(worst, h_next.h(tau, pt))
    return (0.0 if math.isinf(worst) else worst), method


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContractSegment:
    """One obligation: invariance on its interval, or finite-time convergence
    into the barrier's safe set on [engage_time, interval.end)."""

    pred: Optional[PredicateRef]  # None marks a vacuous segment
    interval: TimeInterval
    kind: str = "invariance"  # "invariance" | "finite_time"
    rho: Optional[float] = None
    t_conv: Optional[float] = None
    engage_time: Optional[float] = None

    @property
    def vacuous(self) -> bool:
        return self.pred is None

    @property
    def barrier_id(self) -> str:
        return str(self.pred) if self.pred else "<top>"


@dataclass(frozen=True)
class BoundaryDecision:
    time: float
    prev_id: str
    next_id: str
    verdict: Verdict
    method: str
    reason: str = ""
    witness: Optional[tuple] = None
    tau: Optional[float] = None          # engagement time of the FCBF window
    t_target: Optional[float] = None     # convergence budget of the window
    rho: Optional[float] = None
    gamma_min: float = GAMMA_MIN
    worst_engage_margin: Optional[float] = None
    worst_t_conv: Optional[float] = None  # bound at the pessimistic margin

    def describe(self) -> str:
        parts = [f"t={self.time:g}", f"{self.prev_id}->{self.next_id}",
                 f"verdict={self.verdict.value}", f"method={self.method}"]
        if self.verdict is Verdict.OVERLAP_DEADLINE:
            parts.append(f"tau={self.tau:g}")
            parts.append(f"t_conv={self.t_target:g}")
            if self.worst_engage_margin is not None:
                parts.append(f"worst_margin={self.worst_engage_margin:g}")
        if self.witness is not None:
            parts.append("witness=(" + ",".join(f"{v:g}" for v in self.witness) + ")")
        if self.reason:
            parts.append(f"reason={self.reason}")
        return " ".join(parts)


@dataclass(frozen=True)
class ScheduleConfig:
    """Knobs for schedule construction.

    `boundary_windows` overrides (tau, t_target) per boundary time; default
    engagement is tau = t_i - t_conv. `deadline_slack` admits equality in
    tau + T <= t_i: the sampled runtime enforcement absorbs one step."""

    domain: StateBox
    horizon: float
    rho: float = 0.9
    t_conv: float = 5.0
    gamma_min: float = GAMMA_MIN
    boundary_windows: dict = field(default_factory=dict)
    grid_resolution: int = 101
    deadline_slack: float = 1e-9


@dataclass
class ContractSchedule:
    """Invariance segments tiling [0, horizon) plus per-boundary verdicts.
    Immutable after construction; queries are pure."""

    label: str
    segments: list
    boundaries: list

    def __post_init__(self):
        self._starts = [seg.interval.start for seg in self.segments]

    @property
    def span(self) -> TimeInterval:
        return TimeInterval(self.segments[0].interval.start, self.segments[-1].interval.end)

    def failures(self) -> list:
        return [b for b in self.boundaries if b.verdict is Verdict.INCOMPATIBLE]

    def fcbf_segments(self) -> list:
        """Finite-time segments attached to overlap boundaries (spec view)."""
        out = []
        for idx, bd in enumerate(self.boundaries):
            if bd.verdict is Verdict.OVERLAP_DEADLINE:
                out.append(ContractSegment(
                    pred=self.segments[idx + 1].pred,
                    interval=TimeInterval(bd.tau, bd.time),
                    kind="finite_time", rho=bd.rho, t_conv=bd.t_target,
                    engage_time=bd.tau,
                ))
        return out

    def _segment_index(self, t: float) -> int:
        span = self.span
        if not (span.start <= t < span.end):
            raise ScheduleQueryError(
                f"{self.label}: t={t:g} outside schedule span {span}"
            )
        return bisect_right(self._starts, t) - 1

    def segment_at(self, t: float) -> ContractSegment:
        return self.segments[self._segment_index(t)]

    def assumption_margin(self, x0, registry):
        """(barrier_id, margin) of the first segment's entry assumption, or
        None when the schedule opens vacuously."""
        seg = self.segments[0]
        if seg.vacuous:
            return None
        bar = registry.resolve(seg.pred)
        return seg.barrier_id, bar.h(seg.interval.start, x0)

    def constraints_at(self, t, x, sys, registry, engagements=None):
        """Active halfspace constraints at (t, x) per the schedule case split:
        the current segment's invariance constraint, plus the upcoming
        barrier's finite-time constraint strictly inside (tau_i, t_i) of an
        overlap boundary. gamma is fixed at first engagement."""
        idx = self._segment_index(t)
        seg = self.segments[idx]
        out = []
        if not seg.vacuous:
            bar = registry.resolve(seg.pred)
            out.append(cbf_constraint(bar, sys, bar.alpha, t, x))
        if idx < len(self.boundaries):
            bd = self.boundaries[idx]
            if bd.verdict is Verdict.OVERLAP_DEADLINE and bd.tau < t < bd.time:
                nxt = registry.resolve(self.segments[idx + 1].pred)
                params = _engaged_params(self.label, idx, bd, nxt, t, x, engagements)
                out.append(fcbf_constraint(nxt, sys, params, t, x))
        return out


def _engaged_params(label, idx, bd, next_bar, t, x, engagements) -> FcbfParams:
    def compute():
        h_engage = next_bar.h(t, x)
        gamma = gamma_for_deadline(h_engage, bd.rho, bd.t_target, bd.gamma_min)
        return EngagementRecord(
            key=(label, idx), time=t, h_engage=h_engage, gamma=gamma,
            rho=bd.rho, t_target=bd.t_target, boundary_time=bd.time,
            t_conv_bound=convergence_time(h_engage, FcbfParams(bd.rho, gamma)),
        )
    if engagements is None:
        rec = compute()
    else:
        rec = engagements.get_or_record((label, idx), compute)
    return FcbfParams(rec.rho, rec.gamma)


@dataclass(frozen=True)
class EngagementRecord:
    key: tuple
    time: float
    h_engage: float
    gamma: float
    rho: float
    t_target: float
    boundary_time: float
    t_conv_bound: float

    def describe(self) -> str:
        return (f"engage {self.key[0]}#{self.key[1]} t={self.time:g} "
                f"h={self.h_engage:g} gamma={self.gamma:g} "
                f"T_bound={self.t_conv_bound:g} deadline={self.boundary_time:g}")


class EngagementLedger:
    """Fixes each overlap window's gamma at its first runtime query."""

    def __init__(self):
        self.records: dict = {}

    def get_or_record(self, key, compute) -> EngagementRecord:
        if key not in self.records:
            self.records[key] = compute()
        return self.records[key]

    def all_records(self):
        return [self.records[k] for k in sorted(self.records)]


def build_schedule(group: TaskGroup, registry, cfg: ScheduleConfig) -> ContractSchedule:
    """Tile the group's intervals over [0, horizon) (gaps become vacuous
    segments) and classify every boundary. Incompatible boundaries are kept in
    the schedule so callers can report the exact failure; see `failures()`."""
    segments = _tile_segments(group, cfg.horizon)
    boundaries = []
    for idx in range(len(segments) - 1):
        boundaries.append(_classify_boundary(segments, idx, registry, cfg))
    return ContractSchedule(label=group.label, segments=segments, boundaries=boundaries)


def _tile_segments(group: TaskGroup, horizon: float) -> list:
    segments = []
    cursor = 0.0
    for interval, pred in group.predicates:
        if interval.start > cursor + 1e-9:
            segments.append(ContractSegment(None, TimeInterval(cursor, interval.start)))
        elif interval.start < cursor - 1e-9:
            raise ContractError(f"group {group.label} intervals overlap at {interval}")
        segments.append(ContractSegment(pred, interval))
        cursor = interval.end
    if cursor < horizon - 1e-9:
        segments.append(ContractSegment(None, TimeInterval(cursor, horizon)))
    elif not segments:
        segments.append(ContractSegment(None, TimeInterval(0.0, horizon)))
    return segments


def _resolve_or_top(pred, registry, dim) -> Barrier:
    return registry.resolve(pred) if pred is not None else TopBarrier(dim)


def _classify_boundary(segments, idx, registry, cfg: ScheduleConfig) -> BoundaryDecision:
    prev, nxt = segments[idx], segments[idx + 1]
    t_i = prev.interval.end
    prev_bar = _resolve_or_top(prev.pred, registry, cfg.domain.dim)
    next_bar = _resolve_or_top(nxt.pred, registry, cfg.domain.dim)
    base = dict(time=t_i, prev_id=prev.barrier_id, next_id=nxt.barrier_id)

    sub = check_subset(prev_bar, next_bar, t_i, cfg.domain, cfg.grid_resolution)
    if sub.holds:
        return BoundaryDecision(verdict=Verdict.SUBSET, method=sub.method, **base)

    inter = check_intersection(prev_bar, next_bar, t_i, cfg.domain, cfg.grid_resolution)
    if inter.witness is None:
        return BoundaryDecision(
            verdict=Verdict.INCOMPATIBLE, method=inter.method,
            reason="empty intersection", **base,
        )

    tau, t_target = cfg.boundary_windows.get(t_i, (t_i - cfg.t_conv, cfg.t_conv))
    if tau < prev.interval.start - 1e-9 or t_target > (t_i - prev.interval.start) + 1e-9:
        return BoundaryDecision(
            verdict=Verdict.INCOMPATIBLE, method=inter.method, witness=inter.witness,
            reason=(f"deadline violated: t_conv={t_target:g} exceeds "
                    f"interval length {t_i - prev.interval.start:g}"),
            tau=tau, t_target=t_target, rho=cfg.rho, **base,
        )
    if tau + t_target > t_i + cfg.deadline_slack:
        return BoundaryDecision(
            verdict=Verdict.INCOMPATIBLE, method=inter.method, witness=inter.witness,
            reason=f"deadline violated: tau+t_conv={tau + t_target:g} > {t_i:g}",
            tau=tau, t_target=t_target, rho=cfg.rho, **base,
        )

    worst, margin_method = _worst_engage_margin(
        prev_bar, next_bar, tau, cfg.domain, cfg.grid_resolution
    )
    gamma_worst = gamma_for_deadline(worst, cfg.rho, t_target, cfg.gamma_min)
    worst_t = convergence_time(worst, FcbfParams(cfg.rho, gamma_worst))
    return BoundaryDecision(
        verdict=Verdict.OVERLAP_DEADLINE, method=margin_method, witness=inter.witness,
        tau=tau, t_target=t_target, rho=cfg.rho, gamma_min=cfg.gamma_min,
        worst_engage_margin=worst, worst_t_conv=worst_t, **base,
    )


def active_constraints(schedule: ContractSchedule, t, x, sys, registry, engagements=None):
    """Constraints of one schedule at (t, x); see ContractSchedule.constraints_at."""
    return schedule.constraints_at(t, x, sys, registry, engagements)


def conjoin_groups(schedules, t, x, sys, registry, engagements=None):
    """Conjunction of group contracts = intersection of safe input sets,
    realized as the concatenation of every schedule's active constraints."""
    out = []
    for sched in schedules:
        out.extend(sched.constraints_at(t, x, sys, registry, engagements))
    return out
