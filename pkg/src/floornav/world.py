"""Ground-truth multi-floor grid world: scenes, episode stepping, sensing, geodesics.

Conventions used throughout the package:
  * cells are (x, y) tuples; grids are numpy arrays of shape (H, W) indexed [y, x]
  * a floor grid stores True where the cell is an obstacle
  * headings are the four compass directions; north is -y
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

Cell = tuple[int, int]


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    @property
    def vector(self) -> Cell:
        return _HEADING_VECTORS[self]

    def turned_left(self) -> "Heading":
        return Heading((self - 1) % 4)

    def turned_right(self) -> "Heading":
        return Heading((self + 1) % 4)


_HEADING_VECTORS: dict[Heading, Cell] = {
    Heading.NORTH: (0, -1),
    Heading.EAST: (1, 0),
    Heading.SOUTH: (0, 1),
    Heading.WEST: (-1, 0),
}


class Action(Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    LOOK_UP = "look_up"
    LOOK_DOWN = "look_down"
    STOP = "stop"


class SceneValidationError(ValueError):
    """Raised when a scene violates a structural invariant; message carries coordinates."""


@dataclass(frozen=True)
class Stairwell:
    """A staircase between two adjacent floors.

    The corridor is the ordered 2D projection of the stair run. corridor[0] is the
    walk-on cell on the lower floor, corridor[-1] the walk-off cell on the upper
    floor. Interior cells are part of the stair structure: they are obstacles on
    both floor grids and can only be crossed by following the corridor.
    """

    lower_floor: int
    upper_floor: int
    corridor: tuple[Cell, ...]

    @property
    def lower_cell(self) -> Cell:
        return self.corridor[0]

    @property
    def upper_cell(self) -> Cell:
        return self.corridor[-1]

    @property
    def footprint(self) -> frozenset[Cell]:
        return frozenset(self.corridor)


@dataclass(frozen=True)
class PlacedObject:
    category: int
    floor: int
    cell: Cell


@dataclass
class Scene:
    """Immutable-after-construction world model shared across episodes."""

    floors: list[np.ndarray]
    stairwells: list[Stairwell]
    objects: list[PlacedObject]
    category_names: list[str]
    cell_size_m: float = 0.25
    scene_id: str = "scene"

    def __post_init__(self) -> None:
        self.floors = [np.asarray(g, dtype=bool) for g in self.floors]
        self._validate()
        self._object_by_cell: dict[tuple[int, Cell], int] = {}
        for obj in self.objects:
            self._object_by_cell.setdefault((obj.floor, obj.cell), obj.category)
        # stair footprint per floor, used by the sensor and the motion model
        self._footprint: dict[int, set[Cell]] = {i: set() for i in range(len(self.floors))}
        for sw in self.stairwells:
            self._footprint[sw.lower_floor].update(sw.corridor)
            self._footprint[sw.upper_floor].update(sw.corridor)
        # (floor, from_cell, to_cell) -> (stairwell idx, entered corridor index, direction)
        self._entries: dict[tuple[int, Cell, Cell], tuple[int, int, int]] = {}
        for i, sw in enumerate(self.stairwells):
            self._entries[(sw.lower_floor, sw.corridor[0], sw.corridor[1])] = (i, 1, +1)
            self._entries[(sw.upper_floor, sw.corridor[-1], sw.corridor[-2])] = (i, len(sw.corridor) - 2, -1)

    # -- basic queries ----------------------------------------------------

    @property
    def num_floors(self) -> int:
        return len(self.floors)

    @property
    def num_categories(self) -> int:
        return len(self.category_names)

    @property
    def width(self) -> int:
        return self.floors[0].shape[1]

    @property
    def height(self) -> int:
        return self.floors[0].shape[0]

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_obstacle(self, floor: int, cell: Cell) -> bool:
        return bool(self.floors[floor][cell[1], cell[0]])

    def is_stair_cell(self, floor: int, cell: Cell) -> bool:
        return cell in self._footprint[floor]

    def object_at(self, floor: int, cell: Cell) -> Optional[int]:
        return self._object_by_cell.get((floor, cell))

    def category_cells(self, category: int) -> list[tuple[int, Cell]]:
        return [(o.floor, o.cell) for o in self.objects if o.category == category]

    # -- validation --------------------------------------------------------

    def _validate(self) -> None:
        if not self.floors:
            raise SceneValidationError("scene has no floors")
        if self.cell_size_m <= 0:
            raise SceneValidationError(f"cell_size_m must be positive, got {self.cell_size_m}")
        shape = self.floors[0].shape
        for i, g in enumerate(self.floors):
            if g.shape != shape:
                raise SceneValidationError(f"floor {i} shape {g.shape} differs from floor 0 shape {shape}")
        h, w = shape
        for si, sw in enumerate(self.stairwells):
            if sw.upper_floor != sw.lower_floor + 1:
                raise SceneValidationError(
                    f"stairwell {si}: floors {sw.lower_floor}->{sw.upper_floor} must differ by exactly 1")
            if len(sw.corridor) < 3:
                raise SceneValidationError(f"stairwell {si}: corridor needs >= 3 cells, got {len(sw.corridor)}")
            if len(set(sw.corridor)) != len(sw.corridor):
                raise SceneValidationError(f"stairwell {si}: corridor revisits a cell")
            for a, b in zip(sw.corridor, sw.corridor[1:]):
                if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                    raise SceneValidationError(f"stairwell {si}: corridor not 4-connected at {a}->{b}")
            for c in sw.corridor:
                if not (0 <= c[0] < w and 0 <= c[1] < h):
                    raise SceneValidationError(f"stairwell {si}: corridor cell {c} out of bounds")
            lo, up = sw.corridor[0], sw.corridor[-1]
            if self.floors[sw.lower_floor][lo[1], lo[0]]:
                raise SceneValidationError(f"stairwell {si}: lower endpoint {lo} is not free on floor {sw.lower_floor}")
            if self.floors[sw.upper_floor][up[1], up[0]]:
                raise SceneValidationError(f"stairwell {si}: upper endpoint {up} is not free on floor {sw.upper_floor}")
            # the shaft itself must be solid so nothing walks through it sideways
            for c in sw.corridor[1:-1]:
                for f in (sw.lower_floor, sw.upper_floor):
                    if not self.floors[f][c[1], c[0]]:
                        raise SceneValidationError(
                            f"stairwell {si}: interior cell {c} must be an obstacle on floor {f}")
            if not self.floors[sw.upper_floor][lo[1], lo[0]]:
                raise SceneValidationError(
                    f"stairwell {si}: lower endpoint {lo} must be an obstacle on floor {sw.upper_floor}")
            if not self.floors[sw.lower_floor][up[1], up[0]]:
                raise SceneValidationError(
                    f"stairwell {si}: upper endpoint {up} must be an obstacle on floor {sw.lower_floor}")
        for oi, obj in enumerate(self.objects):
            if not (0 <= obj.category < len(self.category_names)):
                raise SceneValidationError(f"object {oi}: category {obj.category} out of range")
            if not (0 <= obj.floor < len(self.floors)):
                raise SceneValidationError(f"object {oi}: floor {obj.floor} out of range")
            x, y = obj.cell
            if not (0 <= x < w and 0 <= y < h):
                raise SceneValidationError(f"object {oi}: cell {obj.cell} out of bounds")
            if self.floors[obj.floor][y, x]:
                raise SceneValidationError(f"object {oi}: cell {obj.cell} on floor {obj.floor} is not free")


@dataclass(frozen=True)
class EpisodeSpec:
    scene_id: str
    start_floor: int
    start_cell: Cell
    start_heading: Heading
    target_category: int
    max_steps: int = 500
    success_dist_m: float = 1.0

    def validate(self, scene: Scene) -> None:
        if self.max_steps <= 0:
            raise ValueError(f"max_steps must be positive, got {self.max_steps}")
        if not scene.category_cells(self.target_category):
            raise ValueError(f"no object of target category {self.target_category} in scene")
        if scene.is_obstacle(self.start_floor, self.start_cell):
            raise ValueError(f"start cell {self.start_cell} on floor {self.start_floor} is not free")


@dataclass(frozen=True)
class StairProgress:
    stairwell: int
    index: int
    direction: int  # +1 climbing toward corridor[-1], -1 descending toward corridor[0]


@dataclass
class AgentState:
    floor: int
    cell: Cell
    heading: Heading
    t: int = 0
    terminated: bool = False
    stair: Optional[StairProgress] = None


@dataclass(frozen=True)
class StepOutcome:
    moved: bool = False
    collided: bool = False
    floor_changed: bool = False
    terminated: bool = False


def step(scene: Scene, state: AgentState, action: Action) -> tuple[AgentState, StepOutcome]:
    """Advance the agent one timestep.

    move_forward semantics: a forward move onto a free cell is a normal grid move.
    Stepping from a stair endpoint onto the adjacent corridor cell begins a
    traversal; while a traversal is active every forward move follows the corridor
    (heading is ignored) and the move past the far end switches floors. Any other
    contact with the stair structure is a collision. look_up/look_down are
    accepted no-ops in this 2D world; invalid motion is a no-op with the collision
    flag set.
    """
    if state.terminated:
        raise RuntimeError("episode already terminated")
    t = state.t + 1
    if action is Action.STOP:
        return replace(state, t=t, terminated=True), StepOutcome(terminated=True)
    if action is Action.TURN_LEFT:
        return replace(state, t=t, heading=state.heading.turned_left()), StepOutcome()
    if action is Action.TURN_RIGHT:
        return replace(state, t=t, heading=state.heading.turned_right()), StepOutcome()
    if action in (Action.LOOK_UP, Action.LOOK_DOWN):
        return replace(state, t=t), StepOutcome()

    # move_forward
    if state.stair is not None:
        sw = scene.stairwells[state.stair.stairwell]
        nxt = state.stair.index + state.stair.direction
        if 0 <= nxt < len(sw.corridor):
            prog = StairProgress(state.stair.stairwell, nxt, state.stair.direction)
            return replace(state, t=t, cell=sw.corridor[nxt], stair=prog), StepOutcome(moved=True)
        new_floor = sw.upper_floor if state.stair.direction > 0 else sw.lower_floor
        return (replace(state, t=t, floor=new_floor, stair=None),
                StepOutcome(moved=True, floor_changed=True))

    dx, dy = state.heading.vector
    dest = (state.cell[0] + dx, state.cell[1] + dy)
    entry = scene._entries.get((state.floor, state.cell, dest))
    if entry is not None:
        sw_idx, idx, direction = entry
        return (replace(state, t=t, cell=dest, stair=StairProgress(sw_idx, idx, direction)),
                StepOutcome(moved=True))
    if scene.in_bounds(dest) and not scene.is_obstacle(state.floor, dest):
        return replace(state, t=t, cell=dest), StepOutcome(moved=True)
    return replace(state, t=t), StepOutcome(collided=True)


# -- sensing ----------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Label corruption model for the simulated segmentation front-end.

    With probability label_noise an object cell is reported as a uniformly chosen
    wrong category. Confidence is drawn uniformly from the matching range, so
    correct labels tend to score higher than wrong ones.
    """

    label_noise: float = 0.0
    correct_conf: tuple[float, float] = (0.55, 0.95)
    wrong_conf: tuple[float, float] = (0.35, 0.75)


@dataclass(frozen=True)
class VisibleCell:
    cell: Cell
    is_obstacle: bool
    is_stair: bool
    category: Optional[int] = None
    confidence: float = 0.0


@dataclass
class Observation:
    floor: int
    cell: Cell
    heading: Heading
    t: int
    visible: list[VisibleCell]


@lru_cache(maxsize=16)
def _fov_rays(range_cells: int, heading: Heading) -> tuple[tuple[Cell, tuple[Cell, ...]], ...]:
    """Offsets inside the 90-degree wedge for a heading, each with its ray's interior cells."""
    out = []
    r2 = range_cells * range_cells
    for dy in range(-range_cells, range_cells + 1):
        for dx in range(-range_cells, range_cells + 1):
            if dx == 0 and dy == 0:
                continue
            if dx * dx + dy * dy > r2:
                continue
            if heading is Heading.EAST and dx < abs(dy):
                continue
            if heading is Heading.WEST and -dx < abs(dy):
                continue
            if heading is Heading.SOUTH and dy < abs(dx):
                continue
            if heading is Heading.NORTH and -dy < abs(dx):
                continue
            out.append(((dx, dy), tuple(_bresenham((0, 0), (dx, dy))[1:-1])))
    out.sort(key=lambda e: (e[0][0] ** 2 + e[0][1] ** 2, e[0][1], e[0][0]))
    return tuple(out)


def _bresenham(a: Cell, b: Cell) -> list[Cell]:
    x0, y0 = a
    x1, y1 = b
    cells = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if (x, y) == (x1, y1):
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return cells


def observe(scene: Scene, state: AgentState, noise: NoiseModel,
            rng: np.random.Generator, range_cells: int = 20) -> Observation:
    """Sense the agent's current floor within range and the 90-degree forward wedge.

    Line of sight is blocked by wall obstacles but not by stair structure, so an
    approaching agent can map a whole stair run. Object cells report a category
    plus segmentation confidence, corrupted per the noise model.
    """
    grid = scene.floors[state.floor]
    h, w = grid.shape
    footprint = scene._footprint[state.floor]
    ax, ay = state.cell
    visible: list[VisibleCell] = [_sense_cell(scene, state.floor, state.cell, noise, rng)]
    for (dx, dy), ray in _fov_rays(range_cells, state.heading):
        x, y = ax + dx, ay + dy
        if not (0 <= x < w and 0 <= y < h):
            continue
        blocked = False
        for (ix, iy) in ray:
            cx, cy = ax + ix, ay + iy
            if grid[cy, cx] and (cx, cy) not in footprint:
                blocked = True
                break
        if not blocked:
            visible.append(_sense_cell(scene, state.floor, (x, y), noise, rng))
    return Observation(floor=state.floor, cell=state.cell, heading=state.heading,
                       t=state.t, visible=visible)


def _sense_cell(scene: Scene, floor: int, cell: Cell, noise: NoiseModel,
                rng: np.random.Generator) -> VisibleCell:
    is_stair = scene.is_stair_cell(floor, cell)
    is_obstacle = scene.is_obstacle(floor, cell)
    category = scene.object_at(floor, cell)
    conf = 0.0
    if category is not None:
        if noise.label_noise > 0 and rng.random() < noise.label_noise:
            others = [c for c in range(scene.num_categories) if c != category]
            category = int(others[rng.integers(len(others))]) if others else category
            conf = float(rng.uniform(*noise.wrong_conf))
        else:
            conf = float(rng.uniform(*noise.correct_conf))
    return VisibleCell(cell=cell, is_obstacle=is_obstacle, is_stair=is_stair,
                       category=category, confidence=conf)


# -- oracle geodesics --------------------------------------------------------

# Graph nodes: ("f", floor, x, y) for free cells; ("u"/"d", stairwell, corridor index)
# for climbing/descending progress. Stair chains are directed so a climb costs
# exactly len(corridor) moves and cannot be short-cut by the opposite chain.
_Node = tuple


def _node_for_state(scene: Scene, state: AgentState) -> _Node:
    if state.stair is not None:
        kind = "u" if state.stair.direction > 0 else "d"
        return (kind, state.stair.stairwell, state.stair.index)
    return ("f", state.floor, state.cell[0], state.cell[1])


def _neighbors(scene: Scene, node: _Node) -> Iterable[_Node]:
    kind = node[0]
    if kind == "f":
        _, f, x, y = node
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if scene.in_bounds((nx, ny)) and not scene.is_obstacle(f, (nx, ny)):
                yield ("f", f, nx, ny)
        for i, sw in enumerate(scene.stairwells):
            if f == sw.lower_floor and (x, y) == sw.corridor[0]:
                yield ("u", i, 1)
            if f == sw.upper_floor and (x, y) == sw.corridor[-1]:
                yield ("d", i, len(sw.corridor) - 2)
    elif kind == "u":
        _, si, i = node
        sw = scene.stairwells[si]
        if i + 1 < len(sw.corridor):
            yield ("u", si, i + 1)
        else:
            yield ("f", sw.upper_floor, sw.corridor[-1][0], sw.corridor[-1][1])
    else:
        _, si, i = node
        sw = scene.stairwells[si]
        if i - 1 >= 0:
            yield ("d", si, i - 1)
        else:
            yield ("f", sw.lower_floor, sw.corridor[0][0], sw.corridor[0][1])


def oracle_geodesic(scene: Scene, start: AgentState | tuple[int, Cell],
                    targets: Iterable[tuple[int, Cell]]) -> float:
    """Shortest multi-floor path length in meters to the nearest target; inf if unreachable."""
    target_nodes = {("f", f, c[0], c[1]) for f, c in targets}
    if not target_nodes:
        raise ValueError("targets must be nonempty")
    if isinstance(start, AgentState):
        src = _node_for_state(scene, start)
    else:
        f, c = start
        src = ("f", f, c[0], c[1])
    if src in target_nodes:
        return 0.0
    dist = {src: 0}
    heap: list[tuple[int, _Node]] = [(0, src)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist.get(node, math.inf):
            continue
        if node in target_nodes:
            return d * scene.cell_size_m
        for nb in _neighbors(scene, node):
            nd = d + 1
            if nd < dist.get(nb, math.inf):
                dist[nb] = nd
                heapq.heappush(heap, (nd, nb))
    return math.inf


def episode_success(scene: Scene, spec: EpisodeSpec, state: AgentState) -> bool:
    """True when the agent is within the success distance of a target instance on its floor."""
    for floor, cell in scene.category_cells(spec.target_category):
        if floor != state.floor:
            continue
        d = math.hypot(cell[0] - state.cell[0], cell[1] - state.cell[1]) * scene.cell_size_m
        if d < spec.success_dist_m:
            return True
    return False


# -- scene file I/O -----------------------------------------------------------


def scene_to_dict(scene: Scene) -> dict:
    return {
        "cell_size_m": scene.cell_size_m,
        "floors": [
            {
                "width": int(g.shape[1]),
                "height": int(g.shape[0]),
                "obstacles": [[int(x), int(y)] for y, x in zip(*np.nonzero(g))],
            }
            for g in scene.floors
        ],
        "stairwells": [
            {
                "lower": {"floor": sw.lower_floor, "cell": list(sw.lower_cell)},
                "upper": {"floor": sw.upper_floor, "cell": list(sw.upper_cell)},
                "corridor": [list(c) for c in sw.corridor],
            }
            for sw in scene.stairwells
        ],
        "objects": [
            {"category": o.category, "floor": o.floor, "cell": list(o.cell)}
            for o in scene.objects
        ],
        "category_names": list(scene.category_names),
    }


def scene_from_dict(data: dict, scene_id: str = "scene") -> Scene:
    floors = []
    for fi, fd in enumerate(data["floors"]):
        g = np.zeros((int(fd["height"]), int(fd["width"])), dtype=bool)
        for ob in fd.get("obstacles", []):
            x, y = int(ob[0]), int(ob[1])
            if not (0 <= x < g.shape[1] and 0 <= y < g.shape[0]):
                raise SceneValidationError(f"floor {fi}: obstacle {[x, y]} out of bounds")
            g[y, x] = True
        floors.append(g)
    stairwells = []
    for sd in data.get("stairwells", []):
        corridor = tuple((int(c[0]), int(c[1])) for c in sd["corridor"])
        sw = Stairwell(lower_floor=int(sd["lower"]["floor"]),
                       upper_floor=int(sd["upper"]["floor"]),
                       corridor=corridor)
        lo = (int(sd["lower"]["cell"][0]), int(sd["lower"]["cell"][1]))
        up = (int(sd["upper"]["cell"][0]), int(sd["upper"]["cell"][1]))
        if sw.lower_cell != lo:
            raise SceneValidationError(f"stairwell lower cell {lo} does not match corridor start {sw.lower_cell}")
        if sw.upper_cell != up:
            raise SceneValidationError(f"stairwell upper cell {up} does not match corridor end {sw.upper_cell}")
        stairwells.append(sw)
    objects = [PlacedObject(category=int(o["category"]), floor=int(o["floor"]),
                            cell=(int(o["cell"][0]), int(o["cell"][1])))
               for o in data.get("objects", [])]
    return Scene(floors=floors, stairwells=stairwells, objects=objects,
                 category_names=list(data["category_names"]),
                 cell_size_m=float(data.get("cell_size_m", 0.25)),
                 scene_id=scene_id)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scene_to_dict(scene), f)


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    import os
    return scene_from_dict(data, scene_id=os.path.splitext(os.path.basename(str(path)))[0])
