"""Independent oracles used by the tests: deliberately brute-force and kept
separate from the implementation paths they check."""

from __future__ import annotations

import numpy as np


def max_overlap_depth(intervals) -> int:
    """Event-sweep maximum number of half-open intervals covering one instant.
    Ends close before starts open at equal times."""
    events = []
    for start, end in intervals:
        events.append((start, 1))
        events.append((end, -1))
    events.sort(key=lambda e: (e[0], e[1]))  # -1 sorts before +1
    depth = best = 0
    for _, delta in events:
        depth += delta
        best = max(best, depth)
    return best


def grid_qp(u_nom, rows, lower, upper, resolution: float):
    """Brute-force projection: best feasible grid point, or None.

    rows are (a, b) halfspaces a.u <= b; the grid spans the box at the given
    resolution, axis by axis.
    """
    axes = [np.arange(lo, hi + resolution / 2, resolution) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    feas = np.ones(len(pts), dtype=bool)
    for a, b in rows:
        feas &= pts @ np.asarray(a) <= b + 1e-12
    if not feas.any():
        return None
    pts = pts[feas]
    d2 = ((pts - np.asarray(u_nom)) ** 2).sum(axis=1)
    return tuple(pts[int(np.argmin(d2))])


def grid_set_check(h_prev_vals, h_next_vals, margin: float = 1e-6):
    """(subset, witness_exists) from barrier values on a shared grid,
    ignoring points within `margin` of either boundary."""
    import numpy as _np

    hp = _np.asarray(h_prev_vals)
    hn = _np.asarray(h_next_vals)
    confident = (_np.abs(hp) >= margin) & (_np.abs(hn) >= margin)
    inside_prev = hp >= 0
    subset = not bool(((inside_prev & (hn < 0)) & confident).any())
    witness = bool((inside_prev & (hn >= 0)).any())
    return subset, witness


def simulate_scalar_pull(h0: float, gamma: float, rho: float, dt: float = 1e-4,
                         t_cap: float = 1e4):
    """Integrate dh/dt = gamma sign(h)|h|^rho from h0 < 0 until the zero
    crossing; returns the crossing time (or t_cap)."""
    h, t = h0, 0.0
    while h < 0 and t < t_cap:
        rate = gamma * abs(h) ** rho
        h += dt * rate
        t += dt
    return t
