"""Exploration statistics and the weighted multi-floor exploration trigger.

The trigger value combines four terms, each in [0, 1]: remaining-time validity,
fraction of object categories already seen on this floor, stagnation of explored
area, and an advisor probability. The go/stay decision is gated on a mapped
staircase and on the allowed timestep window; the value itself is always
computable for logging.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .mapping import SemanticMap
from .world import Observation


@dataclass
class TriggerConfig:
    w_time: float = 0.25
    w_objects: float = 0.25
    w_area: float = 0.25
    w_advisor: float = 0.25
    threshold: float = 0.6
    start_window: int = 150      # no floor change before this timestep
    end_margin: int = 200        # nor within this many steps of the budget end
    area_interval: int = 50      # steps between explored-area samples

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        weights = (self.w_time, self.w_objects, self.w_area, self.w_advisor)
        if any(w < 0 for w in weights):
            raise ValueError(f"weights must be nonnegative, got {weights}")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(weights)}")
        if self.area_interval <= 0:
            raise ValueError("area_interval must be positive")

    def window(self, max_steps: int) -> tuple[int, int]:
        t_min = self.start_window
        t_max = max_steps - self.end_margin
        if t_min >= t_max:
            raise ValueError(
                f"empty trigger window: [{t_min}, {t_max}] for max_steps={max_steps}")
        return t_min, t_max


def time_validity(t: int, max_steps: int) -> float:
    """Remaining-budget fraction (max_steps - t) / max_steps."""
    if not 0 <= t <= max_steps:
        raise ValueError(f"t={t} outside [0, {max_steps}]")
    return (max_steps - t) / max_steps


@dataclass
class ExplorationStats:
    """Per-floor-epoch exploration bookkeeping, reset whenever the map is."""

    total_categories: int
    area_interval: int = 50
    t: int = 0
    seen_categories: set[int] = field(default_factory=set)
    area_log: list[tuple[int, int]] = field(default_factory=list)  # (t, explored cells)
    area_growth: float = 1.0  # cold start suppresses early triggering
    advisor_probability: float = 0.0

    @property
    def objects_ratio(self) -> float:
        if self.total_categories <= 0:
            raise ValueError("total_categories must be positive")
        return len(self.seen_categories) / self.total_categories

    def update(self, smap: SemanticMap, obs: Observation, record_conf_floor: float = 0.3) -> None:
        """Per-timestep update: category sightings plus the periodic area sample."""
        self.t = obs.t
        for vc in obs.visible:
            if vc.category is not None and vc.confidence >= record_conf_floor:
                self.seen_categories.add(vc.category)
        if obs.t % self.area_interval == 0:
            area = smap.explored_count()
            if self.area_log:
                prev = self.area_log[-1][1]
                self.area_growth = min(max((area - prev) / max(prev, 1), 0.0), 1.0)
            self.area_log.append((obs.t, area))

    def reset_epoch(self) -> None:
        self.seen_categories.clear()
        self.area_log.clear()
        self.area_growth = 1.0
        self.advisor_probability = 0.0


@dataclass(frozen=True)
class TriggerValue:
    value: float
    time_term: float
    objects_term: float
    area_term: float
    advisor_term: float

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "time": self.time_term,
            "objects": self.objects_term,
            "area": self.area_term,
            "advisor": self.advisor_term,
        }


def compute_metric(stats: ExplorationStats, config: TriggerConfig, max_steps: int) -> TriggerValue:
    """Weighted trigger value; every term is logged alongside the total."""
    f = time_validity(stats.t, max_steps)
    ratio = stats.objects_ratio
    stagnation = 1.0 - stats.area_growth
    p = stats.advisor_probability
    value = (config.w_time * f + config.w_objects * ratio
             + config.w_area * stagnation + config.w_advisor * p)
    return TriggerValue(value=value, time_term=f, objects_term=ratio,
                        area_term=stagnation, advisor_term=p)


def should_go_multifloor(smap: SemanticMap, stats: ExplorationStats,
                         config: TriggerConfig, max_steps: int) -> tuple[bool, TriggerValue]:
    """Go iff a staircase is mapped, t is inside the window, and the value clears
    the threshold. The value is computed (and returned) regardless of the gates."""
    value = compute_metric(stats, config, max_steps)
    t_min, t_max = config.window(max_steps)
    go = (smap.stair_present() == 1
          and t_min <= stats.t <= t_max
          and value.value > config.threshold)
    return go, value
