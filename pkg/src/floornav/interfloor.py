"""State machine for a floor transition: route to the stairs, seal the entrance
behind the agent, force one-way traversal to the far end, then reset the map.

Phases: inactive -> routing_to_stairs -> traversing -> settling -> inactive.
A deadline started at activation bounds the whole excursion; expiring in any
active phase fires the same reset path as normal completion.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .mapping import SemanticMap
from .planner import chebyshev
from .world import Cell


class Phase(Enum):
    INACTIVE = "inactive"
    ROUTING = "routing_to_stairs"
    TRAVERSING = "traversing"
    SETTLING = "settling"


@dataclass
class InterfloorConfig:
    seal_radius: int = 2
    settle_steps: int = 10
    cooldown_steps: int = 100
    deadline_steps: int = 200
    abort_cooldown_steps: int = 50


@dataclass
class Directive:
    kind: str  # none | navigate | forward | reset
    goal: Optional[Cell] = None


@dataclass
class InterfloorState:
    phase: Phase = Phase.INACTIVE
    entered_at: int = 0
    deadline: int = 0
    settle_until: int = 0
    cooldown_until: int = 0
    stair_goal: Optional[Cell] = None
    entry_cell: Optional[Cell] = None
    exit_waypoint: Optional[Cell] = None
    entrance_cells: set[Cell] = field(default_factory=set)

    def can_activate(self, t: int) -> bool:
        return self.phase is Phase.INACTIVE and t >= self.cooldown_until


def activate(state: InterfloorState, smap: SemanticMap, times: np.ndarray,
             t: int, cfg: InterfloorConfig) -> bool:
    """Begin routing toward the nearest mapped stair cell.

    Returns False (and starts a trigger cooldown) when no stair cell is reachable
    in the given arrival-time grid. Raises if called while already active.
    """
    if state.phase is not Phase.INACTIVE:
        raise RuntimeError(f"activation refused: phase is {state.phase.value}")
    ys, xs = np.nonzero(smap.stair)
    if len(xs) == 0:
        raise RuntimeError("activation requires a nonempty stair channel")
    best = None
    best_t = math.inf
    for x, y in zip(xs.tolist(), ys.tolist()):
        tt = float(times[y, x])
        if tt < best_t or (tt == best_t and best is not None and (x, y) < best):
            best, best_t = (x, y), tt
    if not math.isfinite(best_t):
        state.cooldown_until = t + cfg.abort_cooldown_steps
        return False
    state.phase = Phase.ROUTING
    state.stair_goal = best
    state.entry_cell = None
    state.exit_waypoint = None
    state.entrance_cells = set()
    state.entered_at = t
    state.deadline = t + cfg.deadline_steps
    return True


def _stair_bfs(stair: np.ndarray, start: Cell) -> dict[Cell, int]:
    """4-connected BFS distances within the stair mask from start."""
    h, w = stair.shape
    dist = {start: 0}
    q = deque([start])
    while q:
        x, y = q.popleft()
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and stair[ny, nx] and (nx, ny) not in dist:
                dist[(nx, ny)] = dist[(x, y)] + 1
                q.append((nx, ny))
    return dist


def _farthest_stair_cell(stair: np.ndarray, entry: Cell) -> Cell:
    dist = _stair_bfs(stair, entry)
    return max(dist.items(), key=lambda kv: (kv[1], (-kv[0][0], -kv[0][1])))[0]


def seal_entrance(state: InterfloorState, smap: SemanticMap, agent_cell: Cell,
                  cfg: InterfloorConfig) -> None:
    """Mark the entrance region as an obstacle once the agent is inside the stairs.

    The seal is the dilation (Chebyshev ball of seal_radius) of the entry cell,
    restricted to explored traversable cells, and never includes the agent's
    cell, the exit waypoint, or any stair cell at or beyond the agent's progress
    along the stairs. If the agent would still end up enclosed, the seal is
    shrunk neighbor by neighbor until a free neighbor remains.
    """
    if state.phase is not Phase.ROUTING:
        raise RuntimeError(f"seal requires routing phase, got {state.phase.value}")
    entry = state.entry_cell
    if entry is None:
        raise RuntimeError("seal requires a recorded entry cell")
    if not smap.stair[agent_cell[1], agent_cell[0]]:
        raise RuntimeError(f"agent at {agent_cell} is not on a stair cell")
    stair_dist = _stair_bfs(smap.stair, entry)
    agent_depth = stair_dist.get(agent_cell, math.inf)
    r = cfg.seal_radius
    seal: set[Cell] = set()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            c = (entry[0] + dx, entry[1] + dy)
            if not smap.in_bounds(c) or c == agent_cell or c == state.exit_waypoint:
                continue
            x, y = c
            if not smap.explored[y, x] or smap.obstacle[y, x]:
                continue
            if smap.stair[y, x] and stair_dist.get(c, math.inf) >= agent_depth:
                continue  # never wall off the way ahead
            seal.add(c)
    for x, y in seal:
        smap.obstacle[y, x] = True
    # liveness: the agent must keep at least one traversable neighbor
    free = smap.free_mask()
    while True:
        if any(smap.in_bounds(n) and free[n[1], n[0]]
               for n in _neighbors4(agent_cell)):
            break
        candidates = [n for n in _neighbors4(agent_cell) if n in seal]
        if not candidates:
            break
        c = candidates[0]
        seal.discard(c)
        smap.obstacle[c[1], c[0]] = False
        free = smap.free_mask()
    state.entrance_cells = seal
    state.phase = Phase.TRAVERSING


def _neighbors4(cell: Cell) -> list[Cell]:
    x, y = cell
    return [(x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)]


def tick(state: InterfloorState, smap: SemanticMap, agent_cell: Cell, t: int,
         cfg: InterfloorConfig) -> Directive:
    """Advance the state machine one timestep and return the movement directive.

    The caller performs the map reset when the reset directive is returned; this
    module only manages phases, sealing, and the cooldown bookkeeping.
    """
    if state.phase is Phase.INACTIVE:
        return Directive("none")
    if t >= state.deadline:
        _finish(state, t, cfg)
        return Directive("reset")
    if state.phase is Phase.ROUTING:
        on_stairs = smap.stair[agent_cell[1], agent_cell[0]]
        if on_stairs and state.entry_cell is None:
            state.entry_cell = agent_cell
            state.exit_waypoint = _farthest_stair_cell(smap.stair, agent_cell)
            return Directive("navigate", state.exit_waypoint)
        if on_stairs and agent_cell != state.entry_cell:
            seal_entrance(state, smap, agent_cell, cfg)
            return Directive("navigate", state.exit_waypoint)
        goal = state.exit_waypoint if state.entry_cell is not None else state.stair_goal
        return Directive("navigate", goal)
    if state.phase is Phase.TRAVERSING:
        if chebyshev(agent_cell, state.exit_waypoint) <= 1:
            state.phase = Phase.SETTLING
            state.settle_until = t + cfg.settle_steps
            return Directive("forward")
        return Directive("navigate", state.exit_waypoint)
    # settling: keep walking forward so an in-progress stair climb completes
    if t >= state.settle_until:
        _finish(state, t, cfg)
        return Directive("reset")
    return Directive("forward")


def _finish(state: InterfloorState, t: int, cfg: InterfloorConfig) -> None:
    state.phase = Phase.INACTIVE
    state.cooldown_until = t + cfg.cooldown_steps
    state.stair_goal = None
    state.entry_cell = None
    state.exit_waypoint = None
    state.entrance_cells = set()
