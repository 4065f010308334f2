"""Line-delimited JSON trajectory dumps and metric recomputation from them.

The episode_start event embeds the scene and episode spec, so a dump is
self-contained: replay rebuilds path length, success, SPL and DTG from the
logged steps alone and checks them against the recorded result.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Optional

from .world import (AgentState, Cell, EpisodeSpec, Heading, Scene, StairProgress,
                    episode_success, oracle_geodesic, scene_from_dict, scene_to_dict)


class TrajectoryWriter:
    def __init__(self, stream: IO[str]):
        self._stream = stream

    def event(self, kind: str, **fields) -> None:
        rec = {"event": kind}
        rec.update(fields)
        self._stream.write(json.dumps(rec, separators=(",", ":")) + "\n")

    def close(self) -> None:
        self._stream.close()


def spec_to_dict(spec: EpisodeSpec) -> dict:
    return {
        "scene_id": spec.scene_id,
        "start_floor": spec.start_floor,
        "start_cell": list(spec.start_cell),
        "start_heading": int(spec.start_heading),
        "target_category": spec.target_category,
        "max_steps": spec.max_steps,
        "success_dist_m": spec.success_dist_m,
    }


def spec_from_dict(d: dict) -> EpisodeSpec:
    return EpisodeSpec(
        scene_id=d["scene_id"],
        start_floor=int(d["start_floor"]),
        start_cell=(int(d["start_cell"][0]), int(d["start_cell"][1])),
        start_heading=Heading(int(d["start_heading"])),
        target_category=int(d["target_category"]),
        max_steps=int(d["max_steps"]),
        success_dist_m=float(d["success_dist_m"]),
    )


@dataclass
class ReplayCheck:
    recorded: dict
    recomputed: dict

    def max_abs_error(self) -> float:
        err = 0.0
        for key in ("spl", "dtg_m", "agent_path_length_m", "oracle_shortest_m"):
            a, b = self.recorded[key], self.recomputed[key]
            if math.isinf(a) and math.isinf(b):
                continue
            err = max(err, abs(a - b))
        if self.recorded["success"] != self.recomputed["success"]:
            err = max(err, 1.0)
        return err


def read_events(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def replay_metrics(events: Iterable[dict]) -> ReplayCheck:
    """Recompute episode metrics from dump events and pair them with the recorded ones."""
    scene: Optional[Scene] = None
    spec: Optional[EpisodeSpec] = None
    moved = 0
    stopped = False
    final_pose: Optional[dict] = None
    recorded: Optional[dict] = None
    for ev in events:
        kind = ev["event"]
        if kind == "episode_start":
            scene = scene_from_dict(ev["scene"], scene_id=ev["spec"]["scene_id"])
            spec = spec_from_dict(ev["spec"])
        elif kind == "step":
            if ev["action"] == "move_forward" and ev.get("moved"):
                moved += 1
            if ev["action"] == "stop":
                stopped = True
        elif kind == "episode_end":
            recorded = ev["result"]
            final_pose = ev["final_state"]
    if scene is None or spec is None or recorded is None or final_pose is None:
        raise ValueError("dump is missing episode_start/episode_end events")

    stair = final_pose.get("stair")
    state = AgentState(
        floor=int(final_pose["floor"]),
        cell=(int(final_pose["cell"][0]), int(final_pose["cell"][1])),
        heading=Heading(int(final_pose["heading"])),
        stair=StairProgress(*stair) if stair else None,
    )
    targets = scene.category_cells(spec.target_category)
    path_m = moved * scene.cell_size_m
    success = 1 if stopped and episode_success(scene, spec, state) else 0
    shortest = oracle_geodesic(scene, (spec.start_floor, spec.start_cell), targets)
    denom = max(path_m, shortest)
    spl = 0.0 if denom == 0 or not math.isfinite(denom) else success * shortest / denom
    dtg = oracle_geodesic(scene, state, targets)
    recomputed = {
        "success": success,
        "spl": spl,
        "dtg_m": dtg,
        "agent_path_length_m": path_m,
        "oracle_shortest_m": shortest,
    }
    rec = {k: recorded[k] for k in recomputed}
    return ReplayCheck(recorded=rec, recomputed=recomputed)
