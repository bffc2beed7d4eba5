"""Time-varying barrier functions and their control constraints.

A barrier is a scalar h(t, x) with analytic time derivative and state
gradient; its safe set at time t is {x : h(t, x) >= 0}. Two constraint
generators turn a barrier into an affine-in-input halfspace a.u <= b at a
given (t, x):

  invariance (CBF):      dh/dt + grad.f + grad.g u + alpha(h) >= 0
  finite-time (FCBF):    dh/dt + grad.f + grad.g u + gamma sign(h)|h|^rho >= 0

Any input satisfying the FCBF inequality from h(t0, x0) < 0 reaches the safe
set within T = |h0|^(1-rho) / (gamma (1-rho)) and stays there afterwards.

Barriers are template-based (affine in state with piecewise-constant time
offset, plus the vehicle templates in `vehicle`); templates know their
non-smooth switch instants so derivative checks can skip them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

GAMMA_MIN = 1e-3  # per second; used when the engagement state is already safe


class BarrierError(ValueError):
    """Bad barrier parameters or evaluation outside template assumptions."""


class NonSmoothPointError(BarrierError):
    """Raised when a derivative check lands on a piecewise-switch instant."""


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box in state space, lower <= x <= upper componentwise."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise BarrierError("box bound dimensions differ")
        for lo, hi in zip(self.lower, self.upper):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise BarrierError("box bounds must be finite")
            if lo > hi:
                raise BarrierError(f"box lower {lo} exceeds upper {hi}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def is_degenerate(self) -> bool:
        return any(hi - lo <= 0 for lo, hi in zip(self.lower, self.upper))

    def contains(self, x, pad: float = 0.0) -> bool:
        return all(lo - pad <= xi <= hi + pad for xi, lo, hi in zip(x, self.lower, self.upper))

    def vertices(self):
        return [tuple(v) for v in itertools.product(*zip(self.lower, self.upper))]


@dataclass(frozen=True)
class AlphaFn:
    """Linear extended class-K function alpha(h) = kappa * h, kappa > 0."""

    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise BarrierError(f"alpha gain must be positive, got {self.kappa}")

    def __call__(self, h: float) -> float:
        return self.kappa * h


IDENTITY_ALPHA = AlphaFn(1.0)


@dataclass(frozen=True)
class FcbfParams:
    """Finite-time convergence parameters: 0 <= rho < 1, gamma > 0."""

    rho: float
    gamma: float

    def __post_init__(self):
        if not (0 <= self.rho < 1):
            raise BarrierError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.gamma > 0:
            raise BarrierError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class HalfspaceConstraint:
    """Affine input constraint a.u <= b; zero `a` with b < 0 marks infeasible."""

    a: tuple
    b: float
    label: str = ""

    def __post_init__(self):
        if not all(math.isfinite(ai) for ai in self.a) or not math.isfinite(self.b):
            raise BarrierError(f"non-finite constraint {self.a} . u <= {self.b}")

    def violation(self, u) -> float:
        return sum(ai * ui for ai, ui in zip(self.a, u)) - self.b

    def is_vacuous(self) -> bool:
        return all(ai == 0 for ai in self.a) and self.b >= 0

    def is_infeasible_marker(self) -> bool:
        return all(ai == 0 for ai in self.a) and self.b < 0


class Barrier:
    """Base evaluator: h(t, x), dh_dt(t, x), grad_x(t, x) on [0, T] x D."""

    def __init__(self, barrier_id: str, alpha: AlphaFn = IDENTITY_ALPHA):
        self.id = barrier_id
        self.alpha = alpha

    def h(self, t: float, x) -> float:
        raise NotImplementedError

    def h_left(self, t: float, x) -> float:
        """Left time-limit h(t-, x); differs from h only at time jumps."""
        return self.h(t, x)

    def dh_dt(self, t: float, x) -> float:
        raise NotImplementedError

    def grad_x(self, t: float, x) -> tuple:
        raise NotImplementedError

    def affine_at(self, t: float, side: str = "right"):
        """(coeffs, offset) with h = coeffs.x + offset when affine at t, else None."""
        return None

    def is_smooth_at(self, t: float, x, t_pad: float = 0.0, x_pad: float = 0.0) -> bool:
        return True

    def negate(self) -> "NegatedBarrier":
        return NegatedBarrier(self)

    def __repr__(self):
        return f"<{type(self).__name__} {self.id}>"


@dataclass(frozen=True)
class SafeSet:
    """Superlevel set {x : h(t, x) >= 0} of a barrier frozen at a query time.

    side="left" queries the left time-limit C(t-), which differs from C(t)
    exactly at the barrier's jump instants.
    """

    barrier: "Barrier"
    t: float
    side: str = "right"

    def margin(self, x) -> float:
        if self.side == "left":
            return self.barrier.h_left(self.t, x)
        return self.barrier.h(self.t, x)

    def membership(self, x) -> bool:
        return self.margin(x) >= 0


class AffineBarrier(Barrier):
    """h(t, x) = coeffs . x + offset(t), offset piecewise constant in time.

    `pieces` is a sorted sequence of (t_start, offset); a single piece gives a
    time-invariant barrier. Jumps at piece boundaries are flagged non-smooth.
    """

    def __init__(self, barrier_id, coeffs, offset=None, pieces=None, alpha=IDENTITY_ALPHA):
        super().__init__(barrier_id, alpha)
        self.coeffs = tuple(float(c) for c in coeffs)
        if (offset is None) == (pieces is None):
            raise BarrierError("provide exactly one of offset / pieces")
        if pieces is None:
            pieces = [(0.0, float(offset))]
        self.pieces = tuple((float(t0), float(d)) for t0, d in pieces)
        starts = [p[0] for p in self.pieces]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            raise BarrierError("offset pieces must have strictly increasing start times")

    def _offset(self, t: float, side: str = "right") -> float:
        idx = 0
        for i, (t0, _) in enumerate(self.pieces):
            if (t0 <= t) if side == "right" else (t0 < t):
                idx = i
            else:
                break
        return self.pieces[idx][1]

    @property
    def switch_times(self) -> tuple:
        return tuple(t0 for t0, _ in self.pieces[1:])

    def h(self, t, x):
        return sum(c * xi for c, xi in zip(self.coeffs, x)) + self._offset(t)

    def h_left(self, t, x):
        return sum(c * xi for c, xi in zip(self.coeffs, x)) + self._offset(t, side="left")

    def dh_dt(self, t, x):
        return 0.0

    def grad_x(self, t, x):
        return self.coeffs

    def affine_at(self, t, side="right"):
        return self.coeffs, self._offset(t, side)

    def is_smooth_at(self, t, x, t_pad=0.0, x_pad=0.0):
        return all(abs(t - ts) > t_pad for ts in self.switch_times)


class TopBarrier(Barrier):
    """Vacuous barrier h == 1: its safe set is the whole domain."""

    def __init__(self, dim: int, barrier_id: str = "__top__"):
        super().__init__(barrier_id)
        self.dim = dim

    def h(self, t, x):
        return 1.0

    def dh_dt(self, t, x):
        return 0.0

    def grad_x(self, t, x):
        return (0.0,) * self.dim

    def affine_at(self, t, side="right"):
        return (0.0,) * self.dim, 1.0


class NegatedBarrier(Barrier):
    """Barrier -h used to normalize negated predicates."""

    def __init__(self, inner: Barrier, alpha: AlphaFn = IDENTITY_ALPHA):
        super().__init__(f"!{inner.id}", alpha)
        self.inner = inner

    def h(self, t, x):
        return -self.inner.h(t, x)

    def h_left(self, t, x):
        return -self.inner.h_left(t, x)

    def dh_dt(self, t, x):
        return -self.inner.dh_dt(t, x)

    def grad_x(self, t, x):
        return tuple(-g for g in self.inner.grad_x(t, x))

    def affine_at(self, t, side="right"):
        aff = self.inner.affine_at(t, side)
        if aff is None:
            return None
        coeffs, offset = aff
        return tuple(-c for c in coeffs), -offset

    def is_smooth_at(self, t, x, t_pad=0.0, x_pad=0.0):
        return self.inner.is_smooth_at(t, x, t_pad, x_pad)


class BarrierRegistry:
    """Immutable-after-setup mapping of barrier ids to template instances."""

    def __init__(self):
        self._by_id: dict = {}
        self._negated_cache: dict = {}

    def register(self, barrier: Barrier) -> Barrier:
        if barrier.id in self._by_id:
            raise BarrierError(f"duplicate barrier id {barrier.id!r}")
        self._by_id[barrier.id] = barrier
        return barrier

    def get(self, barrier_id: str) -> Barrier:
        try:
            return self._by_id[barrier_id]
        except KeyError:
            raise BarrierError(f"unknown barrier id {barrier_id!r}") from None

    def resolve(self, pred) -> Barrier:
        """Barrier for a PredicateRef; negation yields the -h wrapper."""
        bar = self.get(pred.barrier_id)
        if not pred.negated:
            return bar
        if pred.barrier_id not in self._negated_cache:
            self._negated_cache[pred.barrier_id] = bar.negate()
        return self._negated_cache[pred.barrier_id]

    def __contains__(self, barrier_id: str) -> bool:
        return barrier_id in self._by_id

    def ids(self):
        return list(self._by_id)


# ---------------------------------------------------------------------------
# Constraint generation
# ---------------------------------------------------------------------------


def _lie_terms(bar: Barrier, sys, t: float, x):
    """(−grad.g row vector, dh_dt + grad.f) shared by both constraint forms."""
    grad = bar.grad_x(t, x)
    fv = sys.f(t, x)
    gm = sys.g(t, x)
    drift = bar.dh_dt(t, x) + sum(gi * fi for gi, fi in zip(grad, fv))
    a = tuple(-sum(grad[i] * gm[i][j] for i in range(len(grad))) for j in range(sys.m))
    return a, drift


def cbf_constraint(bar: Barrier, sys, alpha: AlphaFn, t: float, x) -> HalfspaceConstraint:
    """Invariance constraint at (t, x): any u with a.u <= b keeps
    dh/dt + grad.(f + g u) >= -alpha(h)."""
    a, drift = _lie_terms(bar, sys, t, x)
    return HalfspaceConstraint(a, drift + alpha(bar.h(t, x)), label=f"cbf:{bar.id}")


def fcbf_constraint(bar: Barrier, sys, p: FcbfParams, t: float, x) -> HalfspaceConstraint:
    """Finite-time constraint at (t, x) with drift gamma sign(h)|h|^rho
    (sign(0) = 0: on the boundary the invariance half handles the rest)."""
    a, drift = _lie_terms(bar, sys, t, x)
    hv = bar.h(t, x)
    pull = 0.0 if hv == 0 else p.gamma * math.copysign(abs(hv) ** p.rho, hv)
    return HalfspaceConstraint(a, drift + pull, label=f"fcbf:{bar.id}")


def convergence_time(h0: float, p: FcbfParams) -> float:
    """Upper bound on time to reach the safe set from margin h0 (0 if h0 >= 0):
    T = |h0|^(1-rho) / (gamma (1-rho))."""
    if h0 >= 0:
        return 0.0
    return abs(h0) ** (1.0 - p.rho) / (p.gamma * (1.0 - p.rho))


def gamma_for_deadline(h_engage: float, rho: float, t_target: float,
                       gamma_min: float = GAMMA_MIN) -> float:
    """Smallest gamma whose convergence bound from h_engage equals t_target.

    Inverts the convergence-time bound: gamma = |h|^(1-rho) / (t_target (1-rho)).
    An engagement margin h_engage >= 0 needs no convergence and returns
    gamma_min so the constraint stays well defined.
    """
    if not t_target > 0:
        raise BarrierError(f"deadline must be positive, got {t_target}")
    if not (0 <= rho < 1):
        raise BarrierError(f"rho must lie in [0, 1), got {rho}")
    if h_engage >= 0:
        return gamma_min
    return abs(h_engage) ** (1.0 - rho) / (t_target * (1.0 - rho))


# ---------------------------------------------------------------------------
# Derivative checking
# ---------------------------------------------------------------------------


def finite_diff_check(bar: Barrier, t: float, x, step: float = 1e-6) -> float:
    """Worst relative error of the analytic dh_dt / grad_x against central
    differences of h. Raises NonSmoothPointError at piecewise-switch points
    (jump discontinuities make the comparison meaningless there)."""
    if step <= 0:
        raise BarrierError(f"step must be positive, got {step}")
    if not bar.is_smooth_at(t, x, t_pad=4 * step, x_pad=4 * step):
        raise NonSmoothPointError(f"{bar.id} is not smooth near t={t:g}")

    x = tuple(x)
    worst = 0.0

    fd_t = (bar.h(t + step, x) - bar.h(max(t - step, 0.0), x)) / (step + min(t, step))
    worst = max(worst, _rel_err(bar.dh_dt(t, x), fd_t))

    grad = bar.grad_x(t, x)
    for i in range(len(x)):
        hi = list(x)
        lo = list(x)
        hi[i] += step
        lo[i] -= step
        fd = (bar.h(t, tuple(hi)) - bar.h(t, tuple(lo))) / (2 * step)
        worst = max(worst, _rel_err(grad[i], fd))
    return worst


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
