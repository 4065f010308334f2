"""Agent-side allocentric multi-channel map built from observations.

Channel layout: obstacle, explored, current position, history, one channel per
object category, then the stair channel, for a total of num_categories + 5.
The map is centered on the agent at construction and after every reset.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .world import Cell, Observation


@dataclass
class SemanticMap:
    num_categories: int
    size: int = 480
    record_conf_floor: float = 0.3
    min_stair_cells: int = 3

    def __post_init__(self) -> None:
        s = self.size
        self.obstacle = np.zeros((s, s), dtype=bool)
        self.explored = np.zeros((s, s), dtype=bool)
        self.position = np.zeros((s, s), dtype=bool)
        self.history = np.zeros((s, s), dtype=bool)
        self.semantic = np.zeros((self.num_categories, s, s), dtype=bool)
        self.stair = np.zeros((s, s), dtype=bool)
        self.confidence = np.zeros((self.num_categories, s, s), dtype=np.float32)
        self.origin: Optional[Cell] = None  # world cell at map (0, 0)
        self.agent_cell: Optional[Cell] = None  # map coordinates
        self.dropped_cells = 0

    @property
    def num_channels(self) -> int:
        return self.num_categories + 5

    # -- coordinates -------------------------------------------------------

    def _center_on(self, world_cell: Cell) -> None:
        half = self.size // 2
        self.origin = (world_cell[0] - half, world_cell[1] - half)

    def world_to_map(self, world_cell: Cell) -> Cell:
        return (world_cell[0] - self.origin[0], world_cell[1] - self.origin[1])

    def map_to_world(self, map_cell: Cell) -> Cell:
        return (map_cell[0] + self.origin[0], map_cell[1] + self.origin[1])

    def in_bounds(self, map_cell: Cell) -> bool:
        return 0 <= map_cell[0] < self.size and 0 <= map_cell[1] < self.size

    # -- updates -----------------------------------------------------------

    def integrate(self, obs: Observation) -> None:
        """Write one observation into the map.

        Stair cells take precedence over the obstacle channel so the stair blob
        stays traversable for planning. Semantic labels are recorded only at or
        above the confidence floor; per-cell confidence keeps the max seen.
        Out-of-bounds cells are dropped and counted, never recentered.
        """
        if self.origin is None:
            self._center_on(obs.cell)
        for vc in obs.visible:
            m = self.world_to_map(vc.cell)
            if not self.in_bounds(m):
                self.dropped_cells += 1
                continue
            x, y = m
            self.explored[y, x] = True
            if vc.is_stair:
                self.stair[y, x] = True
                self.obstacle[y, x] = False
            elif vc.is_obstacle:
                self.obstacle[y, x] = True
            if vc.category is not None and vc.confidence >= self.record_conf_floor:
                self.semantic[vc.category, y, x] = True
                if vc.confidence > self.confidence[vc.category, y, x]:
                    self.confidence[vc.category, y, x] = vc.confidence
        pose = self.world_to_map(obs.cell)
        if self.in_bounds(pose):
            x, y = pose
            self.position[:] = False
            self.position[y, x] = True
            self.history[y, x] = True
            self.explored[y, x] = True
            self.obstacle[y, x] = False  # the agent is standing there
            self.agent_cell = pose

    def reset(self, world_cell: Cell) -> None:
        """Reinitialize every channel and recenter on the given world cell."""
        self.obstacle[:] = False
        self.explored[:] = False
        self.position[:] = False
        self.history[:] = False
        self.semantic[:] = False
        self.stair[:] = False
        self.confidence[:] = 0.0
        self.dropped_cells = 0
        self._center_on(world_cell)
        self.agent_cell = None

    # -- queries -----------------------------------------------------------

    def stair_present(self) -> int:
        """1 iff at least min_stair_cells stair cells are mapped, else 0."""
        return 1 if int(np.count_nonzero(self.stair)) >= self.min_stair_cells else 0

    def explored_count(self) -> int:
        return int(np.count_nonzero(self.explored))

    def free_mask(self) -> np.ndarray:
        return self.explored & ~self.obstacle

    def category_cells(self, category: int) -> list[Cell]:
        ys, xs = np.nonzero(self.semantic[category])
        return [(int(x), int(y)) for x, y in zip(xs, ys)]

    # -- debug dump ---------------------------------------------------------

    def dump_channels(self, directory: str, prefix: str = "map") -> str:
        """Write per-channel PGM images and a JSON manifest; returns manifest path."""
        os.makedirs(directory, exist_ok=True)
        names = ["obstacle", "explored", "position", "history"]
        grids = [self.obstacle, self.explored, self.position, self.history]
        for c in range(self.num_categories):
            names.append(f"category_{c}")
            grids.append(self.semantic[c])
        names.append("stair")
        grids.append(self.stair)
        files = []
        for name, grid in zip(names, grids):
            path = os.path.join(directory, f"{prefix}_{name}.pgm")
            _write_pgm(path, grid)
            files.append(os.path.basename(path))
        manifest = {
            "size": self.size,
            "num_categories": self.num_categories,
            "origin": list(self.origin) if self.origin else None,
            "channels": dict(zip(names, files)),
            "dropped_cells": self.dropped_cells,
        }
        mpath = os.path.join(directory, f"{prefix}_manifest.json")
        with open(mpath, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)
        return mpath


def _write_pgm(path: str, grid: np.ndarray) -> None:
    data = (np.asarray(grid, dtype=np.uint8) * 255)
    with open(path, "wb") as f:
        f.write(f"P5 {grid.shape[1]} {grid.shape[0]} 255\n".encode("ascii"))
        f.write(data.tobytes())
