"""Fast-marching Eikonal solver on the agent map, path extraction, action selection."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .world import Action, Cell, Heading


class NoPathError(RuntimeError):
    pass


@dataclass
class DistanceField:
    """Arrival times in cells over a traversability mask; +inf where unreached."""

    times: np.ndarray  # float64 (H, W)
    sources: tuple[Cell, ...]
    traversable: np.ndarray  # bool (H, W)

    def time_at(self, cell: Cell) -> float:
        return float(self.times[cell[1], cell[0]])


def solve_fmm(traversable: np.ndarray, sources: Sequence[Cell]) -> DistanceField:
    """First-order upwind fast marching with unit speed on the 4-neighbor stencil.

    Each accepted cell's time solves max(T-a,0)^2 + max(T-b,0)^2 = 1 where a, b are
    the smaller axis-neighbor times; cells are accepted in nondecreasing T order.
    """
    traversable = np.asarray(traversable, dtype=bool)
    h, w = traversable.shape
    if not sources:
        raise ValueError("at least one source required")
    for s in sources:
        if not (0 <= s[0] < w and 0 <= s[1] < h):
            raise ValueError(f"source {s} out of bounds")
        if not traversable[s[1], s[0]]:
            raise ValueError(f"source {s} is not traversable")

    times = np.full((h, w), math.inf)
    done = np.zeros((h, w), dtype=bool)
    heap: list[tuple[float, int, int]] = []
    for x, y in sources:
        times[y, x] = 0.0
        heapq.heappush(heap, (0.0, x, y))

    while heap:
        t, x, y = heapq.heappop(heap)
        if done[y, x] or t > times[y, x]:
            continue
        done[y, x] = True
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            if done[ny, nx] or not traversable[ny, nx]:
                continue
            tn = _update(times, traversable, nx, ny)
            if tn < times[ny, nx]:
                times[ny, nx] = tn
                heapq.heappush(heap, (tn, nx, ny))

    return DistanceField(times=times, sources=tuple(sources), traversable=traversable)


def _update(times: np.ndarray, traversable: np.ndarray, x: int, y: int) -> float:
    h, w = times.shape
    a = math.inf  # smaller x-axis neighbor
    if x > 0 and traversable[y, x - 1]:
        a = times[y, x - 1]
    if x + 1 < w and traversable[y, x + 1]:
        a = min(a, times[y, x + 1])
    b = math.inf  # smaller y-axis neighbor
    if y > 0 and traversable[y - 1, x]:
        b = times[y - 1, x]
    if y + 1 < h and traversable[y + 1, x]:
        b = min(b, times[y + 1, x])
    lo, hi = (a, b) if a <= b else (b, a)
    if hi - lo >= 1.0 or hi == math.inf:
        return lo + 1.0
    # both axes contribute: solve (T-a)^2 + (T-b)^2 = 1
    return 0.5 * (a + b + math.sqrt(2.0 - (a - b) ** 2))


def upwind_residual(field: DistanceField) -> float:
    """Max |upwind discretization residual| over finite non-source cells."""
    times = field.times
    h, w = times.shape
    src = set(field.sources)
    worst = 0.0
    for y in range(h):
        for x in range(w):
            t = times[y, x]
            if not math.isfinite(t) or (x, y) in src:
                continue
            a = math.inf
            if x > 0 and field.traversable[y, x - 1]:
                a = times[y, x - 1]
            if x + 1 < w and field.traversable[y, x + 1]:
                a = min(a, times[y, x + 1])
            b = math.inf
            if y > 0 and field.traversable[y - 1, x]:
                b = times[y - 1, x]
            if y + 1 < h and field.traversable[y + 1, x]:
                b = min(b, times[y + 1, x])
            res = 0.0
            if math.isfinite(a):
                res += max(t - a, 0.0) ** 2
            if math.isfinite(b):
                res += max(t - b, 0.0) ** 2
            worst = max(worst, abs(res - 1.0))
    return worst


def solve_fmm_window(traversable: np.ndarray, sources: Sequence[Cell],
                     margin: int = 2) -> DistanceField:
    """Solve restricted to the bounding box of traversable cells, for large maps.

    The returned field has full-map shape with +inf outside the window, so
    downstream consumers see identical semantics.
    """
    traversable = np.asarray(traversable, dtype=bool)
    ys, xs = np.nonzero(traversable)
    if len(xs) == 0:
        raise ValueError("no traversable cells")
    x0 = max(int(xs.min()) - margin, 0)
    x1 = min(int(xs.max()) + margin + 1, traversable.shape[1])
    y0 = max(int(ys.min()) - margin, 0)
    y1 = min(int(ys.max()) + margin + 1, traversable.shape[0])
    sub_sources = [(x - x0, y - y0) for x, y in sources]
    sub = solve_fmm(traversable[y0:y1, x0:x1], sub_sources)
    times = np.full(traversable.shape, math.inf)
    times[y0:y1, x0:x1] = sub.times
    return DistanceField(times=times, sources=tuple(sources), traversable=traversable)


def extract_path(field: DistanceField, goal: Cell) -> list[Cell]:
    """Steepest-descent path from a source to goal; raises NoPathError if unreachable."""
    t_goal = field.time_at(goal)
    if not math.isfinite(t_goal):
        raise NoPathError(f"goal {goal} has infinite arrival time")
    h, w = field.times.shape
    path = [goal]
    x, y = goal
    cur = t_goal
    while cur > 0.0:
        best = None
        best_t = cur
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and field.times[ny, nx] < best_t:
                best_t = field.times[ny, nx]
                best = (nx, ny)
        if best is None:
            raise NoPathError(f"descent stalled at {(x, y)}")
        x, y = best
        cur = best_t
        path.append((x, y))
    path.reverse()
    return path


_HEADING_OF_DELTA = {
    (0, -1): Heading.NORTH,
    (1, 0): Heading.EAST,
    (0, 1): Heading.SOUTH,
    (-1, 0): Heading.WEST,
}


def next_action(path: Sequence[Cell], cell: Cell, heading: Heading) -> Action | None:
    """Discrete action that makes progress along path; None when already at the end.

    A cell directly ahead yields move_forward, otherwise the single turn reducing
    angular error, preferring turn_left on the 180-degree ambiguity.
    """
    if not path or path[0] != cell:
        raise ValueError(f"path must start at the agent cell {cell}")
    if len(path) == 1:
        return None
    delta = (path[1][0] - cell[0], path[1][1] - cell[1])
    want = _HEADING_OF_DELTA[delta]
    diff = (want - heading) % 4
    if diff == 0:
        return Action.MOVE_FORWARD
    if diff == 1:
        return Action.TURN_RIGHT
    return Action.TURN_LEFT  # diff 2 (behind, tie-break left) or 3


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))
