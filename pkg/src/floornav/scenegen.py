"""Procedural multi-floor scene generation: rooms, corridors, stairwells, objects.

Layout recipe per floor: carve random rooms, join them with L-corridors, stamp a
stairwell block between each pair of adjacent floors, then dig repair tunnels
until every free cell is mutually reachable. All randomness flows through one
generator, so a seed fully determines the scene.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .world import (Cell, EpisodeSpec, Heading, PlacedObject, Scene, Stairwell)

DEFAULT_CATEGORIES = ["chair", "bed", "plant", "toilet", "tv_monitor", "sofa"]


class InfeasibleParamsError(ValueError):
    """Raised when the requested parameters cannot produce a connected scene."""


@dataclass
class GenParams:
    floors: int = 1
    width: int = 56
    height: int = 46
    rooms: int = 5
    room_min: int = 7
    room_max: int = 12
    object_density: float = 0.008  # objects per free cell, per floor
    stair_length: int = 5
    # passages must be wide enough that a frontier centerline survives the
    # planner-side obstacle dilation (width >= 2 * dilation + 1 on each side)
    passage_width: int = 5
    categories: list[str] = field(default_factory=lambda: list(DEFAULT_CATEGORIES))
    cell_size_m: float = 0.25
    # optionally pin one category to exactly one instance on a chosen floor
    pin_category: Optional[int] = None
    pin_floor: int = 0

    def validate(self) -> None:
        if not 1 <= self.floors <= 3:
            raise InfeasibleParamsError(f"floors must be in 1..3, got {self.floors}")
        if not (32 <= self.width <= 128 and 32 <= self.height <= 128):
            raise InfeasibleParamsError(f"width/height must be in 32..128, got {self.width}x{self.height}")
        if self.rooms < 1:
            raise InfeasibleParamsError("need at least one room per floor")
        if self.object_density < 0:
            raise InfeasibleParamsError("object_density must be >= 0")
        if self.stair_length < 3:
            raise InfeasibleParamsError("stair_length must be >= 3")
        if self.passage_width < 1 or self.passage_width % 2 == 0:
            raise InfeasibleParamsError("passage_width must be odd and >= 1")
        if not self.categories:
            raise InfeasibleParamsError("need at least one object category")
        if self.pin_category is not None and not 0 <= self.pin_category < len(self.categories):
            raise InfeasibleParamsError(f"pin_category {self.pin_category} out of range")
        if self.pin_category is not None and not 0 <= self.pin_floor < self.floors:
            raise InfeasibleParamsError(f"pin_floor {self.pin_floor} out of range")


def generate_scene(params: GenParams, seed: int) -> Scene:
    params.validate()
    rng = np.random.default_rng(seed)
    w, h = params.width, params.height
    floors = [np.ones((h, w), dtype=bool) for _ in range(params.floors)]
    room_centers: list[list[Cell]] = []
    for g in floors:
        room_centers.append(_carve_rooms(g, params, rng))
    reserved = [np.zeros((h, w), dtype=bool) for _ in range(params.floors)]
    stairwells: list[Stairwell] = []
    for lower in range(params.floors - 1):
        sw = _place_stairwell(floors, reserved, lower, params, rng)
        stairwells.append(sw)
    for fi, g in enumerate(floors):
        _repair_connectivity(g, reserved[fi], params.passage_width // 2, rng)
    objects = _scatter_objects(floors, stairwells, params, rng)
    return Scene(
        floors=floors,
        stairwells=stairwells,
        objects=objects,
        category_names=list(params.categories),
        cell_size_m=params.cell_size_m,
        scene_id=f"gen-{seed}",
    )


def _carve_rooms(grid: np.ndarray, params: GenParams, rng: np.random.Generator) -> list[Cell]:
    h, w = grid.shape
    centers: list[Cell] = []
    attempts = 0
    while len(centers) < params.rooms and attempts < 60 * params.rooms:
        attempts += 1
        rw = int(rng.integers(params.room_min, params.room_max + 1))
        rh = int(rng.integers(params.room_min, params.room_max + 1))
        x0 = int(rng.integers(1, max(w - rw - 1, 2)))
        y0 = int(rng.integers(1, max(h - rh - 1, 2)))
        if not grid[y0:y0 + rh, x0:x0 + rw].all():
            continue  # overlap; try elsewhere
        grid[y0:y0 + rh, x0:x0 + rw] = False
        centers.append((x0 + rw // 2, y0 + rh // 2))
    if not centers:
        raise InfeasibleParamsError("could not place any room")
    half = params.passage_width // 2
    for a, b in zip(centers, centers[1:]):
        _carve_l_corridor(grid, a, b, half, rng)
    return centers


def _carve_l_corridor(grid: np.ndarray, a: Cell, b: Cell, half: int,
                      rng: np.random.Generator) -> None:
    if rng.random() < 0.5:
        corner = (b[0], a[1])
    else:
        corner = (a[0], b[1])
    for c in _straight(a, corner) + _straight(corner, b):
        _carve_disc(grid, c, half)


def _carve_disc(grid: np.ndarray, center: Cell, half: int,
                reserved: Optional[np.ndarray] = None) -> None:
    h, w = grid.shape
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            x, y = center[0] + dx, center[1] + dy
            if 1 <= x < w - 1 and 1 <= y < h - 1:
                if reserved is None or not reserved[y, x]:
                    grid[y, x] = False


def _straight(a: Cell, b: Cell) -> list[Cell]:
    cells = []
    if a[0] == b[0]:
        step = 1 if b[1] >= a[1] else -1
        cells = [(a[0], y) for y in range(a[1], b[1] + step, step)]
    else:
        step = 1 if b[0] >= a[0] else -1
        cells = [(x, a[1]) for x in range(a[0], b[0] + step, step)]
    return cells


def _place_stairwell(floors: list[np.ndarray], reserved: list[np.ndarray], lower: int,
                     params: GenParams, rng: np.random.Generator) -> Stairwell:
    """Stamp a walled stair run connecting floor `lower` to `lower + 1`.

    The run needs straight-line access from both ends: the lower apron extends
    until it reaches existing free space on the lower floor, the upper apron
    likewise on the upper floor. Locations are rejection-sampled.
    """
    h, w = floors[0].shape
    L = params.stair_length
    g_lo, g_up = floors[lower], floors[lower + 1]
    for _ in range(400):
        horizontal = bool(rng.random() < 0.5)
        d = (1, 0) if horizontal else (0, 1)
        px = (0, 1) if horizontal else (1, 0)  # perpendicular
        if horizontal:
            x0 = int(rng.integers(2, w - L - 2))
            y0 = int(rng.integers(2, h - 2))
        else:
            x0 = int(rng.integers(2, w - 2))
            y0 = int(rng.integers(2, h - L - 2))
        run = [(x0 + i * d[0], y0 + i * d[1]) for i in range(L)]
        walls = set()
        for c in run:
            walls.add((c[0] + px[0], c[1] + px[1]))
            walls.add((c[0] - px[0], c[1] - px[1]))
        # caps are floor-specific: each floor's approach enters through its own end,
        # the opposite end is walled so the map never shows a through-route
        cap_lo = (run[0][0] - d[0], run[0][1] - d[1])
        cap_hi = (run[-1][0] + d[0], run[-1][1] + d[1])
        footprint = set(run) | walls | {cap_lo, cap_hi}
        if any(reserved[lower][c[1], c[0]] or reserved[lower + 1][c[1], c[0]]
               for c in footprint):
            continue
        ext_lo = _extension(g_lo, reserved[lower], run[0], (-d[0], -d[1]))
        ext_up = _extension(g_up, reserved[lower + 1], run[-1], d)
        if ext_lo is None or ext_up is None:
            continue
        for c in footprint:
            reserved[lower][c[1], c[0]] = True
            reserved[lower + 1][c[1], c[0]] = True
        for c in set(run) | walls:
            g_lo[c[1], c[0]] = True
            g_up[c[1], c[0]] = True
        g_lo[cap_hi[1], cap_hi[0]] = True   # wall behind the stair top on the lower floor
        g_up[cap_lo[1], cap_lo[0]] = True   # wall over the stair bottom on the upper floor
        g_lo[run[0][1], run[0][0]] = False   # lower apron
        g_up[run[-1][1], run[-1][0]] = False  # upper apron
        g_lo[cap_lo[1], cap_lo[0]] = False   # entry doorways through the caps
        g_up[cap_hi[1], cap_hi[0]] = False
        half = params.passage_width // 2
        for c in ext_lo:
            g_lo[c[1], c[0]] = False
            _carve_disc(g_lo, c, half, reserved[lower])
        for c in ext_up:
            g_up[c[1], c[0]] = False
            _carve_disc(g_up, c, half, reserved[lower + 1])
        return Stairwell(lower_floor=lower, upper_floor=lower + 1, corridor=tuple(run))
    raise InfeasibleParamsError(f"could not place a stairwell between floors {lower} and {lower + 1}")


def _extension(grid: np.ndarray, reserved: np.ndarray, apron: Cell,
               direction: Cell) -> Optional[list[Cell]]:
    """Straight dig from an apron to the first existing free cell; None if blocked.

    The first cell is the cap position, carved free on this floor as the doorway."""
    h, w = grid.shape
    cells = []
    x, y = apron[0] + direction[0], apron[1] + direction[1]
    while 1 <= x < w - 1 and 1 <= y < h - 1:
        if reserved[y, x]:
            return None
        if not grid[y, x]:
            return cells
        cells.append((x, y))
        x, y = x + direction[0], y + direction[1]
    return None


def _repair_connectivity(grid: np.ndarray, reserved: np.ndarray, half: int,
                         rng: np.random.Generator) -> None:
    """Dig tunnels until all free cells form one component.

    Tunnels are widened like regular passages so frontier exploration can pass
    through them. Digging never touches reserved stairwell cells; if a pocket is
    walled in by reserved cells only, the layout is infeasible.
    """
    h, w = grid.shape
    for _ in range(64):
        labels = _components(~grid)
        ids = sorted(set(labels[labels > 0].tolist()))
        if len(ids) <= 1:
            return
        main = ids[0]
        other = ids[1]
        path = _dig_path(grid, reserved, labels, other, main)
        if path is None:
            raise InfeasibleParamsError("free pocket enclosed by stairwell structure")
        for c in path:
            grid[c[1], c[0]] = False
            _carve_disc(grid, c, half, reserved)
    raise InfeasibleParamsError("connectivity repair did not converge")


def _components(free: np.ndarray) -> np.ndarray:
    from scipy import ndimage
    labels, _ = ndimage.label(free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool))
    return labels


def _dig_path(grid: np.ndarray, reserved: np.ndarray, labels: np.ndarray,
              src_label: int, dst_label: int) -> Optional[list[Cell]]:
    """BFS from one component to another through non-reserved cells; returns the
    obstacle cells to carve (interior border stays within bounds)."""
    h, w = grid.shape
    starts = [(int(x), int(y)) for y, x in zip(*np.nonzero(labels == src_label))]
    dist: dict[Cell, Optional[Cell]] = {c: None for c in starts}
    q = deque(starts)
    while q:
        cur = q.popleft()
        x, y = cur
        if labels[y, x] == dst_label:
            path = []
            back = cur
            while back is not None:
                if grid[back[1], back[0]]:
                    path.append(back)
                back = dist[back]
            return path
        for nx, ny in ((x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)):
            if not (1 <= nx < w - 1 and 1 <= ny < h - 1):
                continue
            if reserved[ny, nx] or (nx, ny) in dist:
                continue
            dist[(nx, ny)] = cur
            q.append((nx, ny))
    return None


def _scatter_objects(floors: list[np.ndarray], stairwells: list[Stairwell],
                     params: GenParams, rng: np.random.Generator) -> list[PlacedObject]:
    keep_clear: set[tuple[int, Cell]] = set()
    for sw in stairwells:
        for f in (sw.lower_floor, sw.upper_floor):
            for c in sw.corridor:
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        keep_clear.add((f, (c[0] + dx, c[1] + dy)))
    objects: list[PlacedObject] = []
    n_cats = len(params.categories)
    pool_cats = [c for c in range(n_cats) if c != params.pin_category]
    for fi, g in enumerate(floors):
        ys, xs = np.nonzero(~g)
        eligible = [(int(x), int(y)) for x, y in zip(xs.tolist(), ys.tolist())
                    if (fi, (int(x), int(y))) not in keep_clear]
        count = int(round(params.object_density * len(eligible)))
        count = min(count, len(eligible))
        if count > 0 and pool_cats:
            idx = rng.choice(len(eligible), size=count, replace=False)
            for i in sorted(idx.tolist()):
                cat = int(pool_cats[rng.integers(len(pool_cats))])
                objects.append(PlacedObject(category=cat, floor=fi, cell=eligible[i]))
    if params.pin_category is not None:
        g = floors[params.pin_floor]
        ys, xs = np.nonzero(~g)
        taken = {(o.floor, o.cell) for o in objects}
        eligible = [(int(x), int(y)) for x, y in zip(xs.tolist(), ys.tolist())
                    if (params.pin_floor, (int(x), int(y))) not in keep_clear
                    and (params.pin_floor, (int(x), int(y))) not in taken]
        if not eligible:
            raise InfeasibleParamsError("no cell available for the pinned category")
        pick = eligible[int(rng.integers(len(eligible)))]
        objects.append(PlacedObject(category=params.pin_category,
                                    floor=params.pin_floor, cell=pick))
    return objects


def sample_episode(scene: Scene, rng: np.random.Generator,
                   target_category: Optional[int] = None, start_floor: int = 0,
                   max_steps: int = 500, success_dist_m: float = 1.0) -> EpisodeSpec:
    """Draw a start pose on free non-stair cells and pick a target category present
    in the scene."""
    g = scene.floors[start_floor]
    ys, xs = np.nonzero(~g)
    cells = [(int(x), int(y)) for x, y in zip(xs.tolist(), ys.tolist())
             if not scene.is_stair_cell(start_floor, (int(x), int(y)))]
    if not cells:
        raise ValueError(f"floor {start_floor} has no free non-stair cell")
    start = cells[int(rng.integers(len(cells)))]
    heading = Heading(int(rng.integers(4)))
    if target_category is None:
        present = sorted({o.category for o in scene.objects})
        if not present:
            raise ValueError("scene has no objects to target")
        target_category = int(present[int(rng.integers(len(present)))])
    spec = EpisodeSpec(
        scene_id=scene.scene_id,
        start_floor=start_floor,
        start_cell=start,
        start_heading=heading,
        target_category=target_category,
        max_steps=max_steps,
        success_dist_m=success_dist_m,
    )
    spec.validate(scene)
    return spec
