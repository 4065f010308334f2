"""Frontier candidate extraction and cost-utility scoring over the agent map."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .mapping import SemanticMap
from .world import Cell

NEG_INF = float("-inf")


@dataclass
class FrontierConfig:
    alpha: float = 0.5              # distance weight in score = benefit - alpha * distance
    benefit_radius: int = 10        # Chebyshev window for the unexplored-cell count
    min_region_area: int = 4        # frontier regions smaller than this are dropped
    obstacle_dilation: int = 2      # dilation radius subtracted from the frontier set
    ratio_window: int = 5           # half-width of the explored-ratio window


@dataclass
class CandidateWaypoint:
    cell: Cell                      # map coordinates
    region_size: int
    benefit: float
    explored_ratio: float
    distance: Optional[float] = None
    score: float = NEG_INF


def frontier_mask(explored: np.ndarray, obstacle: np.ndarray, obstacle_dilation: int) -> np.ndarray:
    """Explored free cells adjacent to unexplored space, away from dilated obstacles."""
    free = explored & ~obstacle
    unexplored = ~explored
    adj = np.zeros_like(free)
    adj[:-1, :] |= unexplored[1:, :]
    adj[1:, :] |= unexplored[:-1, :]
    adj[:, :-1] |= unexplored[:, 1:]
    adj[:, 1:] |= unexplored[:, :-1]
    mask = free & adj
    if obstacle_dilation > 0 and obstacle.any():
        size = 2 * obstacle_dilation + 1
        inflated = ndimage.binary_dilation(obstacle, structure=np.ones((size, size), dtype=bool))
        mask &= ~inflated
    return mask


def extract_candidates(smap: SemanticMap, cfg: FrontierConfig) -> list[CandidateWaypoint]:
    """Group frontier cells into 8-connected regions and emit one candidate per region.

    Each surviving region is represented by its centroid snapped to the nearest
    frontier cell of the region. An empty result is valid and means the reachable
    space is fully explored.
    """
    mask = frontier_mask(smap.explored, smap.obstacle, cfg.obstacle_dilation)
    if not mask.any():
        return []
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    out: list[CandidateWaypoint] = []
    for region in range(1, n + 1):
        ys, xs = np.nonzero(labels == region)
        area = len(xs)
        if area < cfg.min_region_area:
            continue
        cx, cy = float(xs.mean()), float(ys.mean())
        best = min(
            zip(xs.tolist(), ys.tolist()),
            key=lambda c: ((c[0] - cx) ** 2 + (c[1] - cy) ** 2, c[0], c[1]),
        )
        cell = (int(best[0]), int(best[1]))
        out.append(CandidateWaypoint(
            cell=cell,
            region_size=area,
            benefit=float(benefit(smap.explored, cell, cfg.benefit_radius)),
            explored_ratio=explored_ratio(smap.explored, cell, cfg.ratio_window),
        ))
    out.sort(key=lambda c: c.cell)
    return out


def benefit(explored: np.ndarray, cell: Cell, radius: int) -> int:
    """Unexplored-cell count within the Chebyshev window around cell (clipped at edges)."""
    h, w = explored.shape
    x, y = cell
    x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
    y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
    return int(np.count_nonzero(~explored[y0:y1, x0:x1]))


def explored_ratio(explored: np.ndarray, cell: Cell, radius: int) -> float:
    """Explored fraction of the (2r+1)^2 window around cell, window clipped to bounds."""
    h, w = explored.shape
    x, y = cell
    x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
    y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
    total = (x1 - x0) * (y1 - y0)
    return float(np.count_nonzero(explored[y0:y1, x0:x1])) / total


def score(benefit_value: float, distance: float, alpha: float) -> float:
    """Cost-utility score benefit - alpha * distance; -inf for unreachable candidates."""
    if not math.isfinite(distance):
        return NEG_INF
    return benefit_value - alpha * distance


def score_candidates(candidates: list[CandidateWaypoint], times: np.ndarray,
                     alpha: float) -> list[CandidateWaypoint]:
    """Fill distances from an arrival-time grid and sort by score.

    Ties break toward the smaller distance, then lexicographic cell order, so the
    ranking is deterministic.
    """
    for c in candidates:
        c.distance = float(times[c.cell[1], c.cell[0]])
        c.score = score(c.benefit, c.distance, alpha)
    candidates.sort(key=lambda c: (-c.score, c.distance, c.cell))
    return candidates
