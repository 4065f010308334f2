"""Episode loop wiring sensing, mapping, policies and planning; metrics; batches.

Per timestep: observe and integrate, update exploration stats, check for a
confirmed target detection, otherwise let the inter-floor machine or the
frontier/advisor policy pick a goal, then plan toward it and execute one
discrete action. Metrics follow the standard navigation benchmark definitions:
success rate, success weighted by path length, and distance to goal.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import interfloor as ifl
from .advisors import (Advisor, AdvisorError, DetectionQuery, ExplorationDigest,
                       RemoteAdvisor, RepeatDetector, StubAdvisor, fuse_detection,
                       select_waypoint)
from .config import RunConfig
from .frontier import extract_candidates, frontier_mask, score_candidates
from .mapping import SemanticMap
from .planner import NoPathError, chebyshev, extract_path, next_action, solve_fmm_window
from .trajectory import TrajectoryWriter, spec_to_dict
from .trigger import ExplorationStats, should_go_multifloor
from .world import (Action, AgentState, Cell, EpisodeSpec, NoiseModel, Scene,
                    episode_success, observe, oracle_geodesic, scene_to_dict, step)

CSV_COLUMNS = ["episode_id", "success", "spl", "dtg_m", "steps", "mfnp_triggered",
               "floor_changes", "termination"]


@dataclass
class EpisodeResult:
    episode_id: str
    success: int
    spl: float
    dtg_m: float
    steps_used: int
    agent_path_length_m: float
    oracle_shortest_m: float
    mfnp_triggered: int
    floor_changes: int
    termination: str  # stopped_success | stopped_failure | timeout | error
    trigger_timestep: int = -1  # first successful activation, -1 if none
    fallback_events: int = 0
    error: str = ""

    def csv_row(self) -> list:
        return [self.episode_id, self.success, repr(self.spl), repr(self.dtg_m),
                self.steps_used, self.mfnp_triggered, self.floor_changes, self.termination]


def build_advisor(config: RunConfig, scene: Scene) -> Advisor:
    if config.advisor.mode == "remote":
        return RemoteAdvisor(config.advisor.endpoint)
    return StubAdvisor(scene, reliability=config.advisor.reliability)


def run_episode(scene: Scene, spec: EpisodeSpec, config: RunConfig, seed: int,
                writer: Optional[TrajectoryWriter] = None,
                episode_id: str = "episode",
                advisor: Optional[Advisor] = None) -> EpisodeResult:
    spec.validate(scene)
    return _Episode(scene, spec, config, seed, writer, episode_id, advisor).run()


class _Episode:
    def __init__(self, scene: Scene, spec: EpisodeSpec, config: RunConfig, seed: int,
                 writer: Optional[TrajectoryWriter], episode_id: str,
                 advisor: Optional[Advisor]):
        self.scene = scene
        self.spec = spec
        self.config = config
        self.writer = writer
        self.episode_id = episode_id
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.advisor = advisor if advisor is not None else build_advisor(config, scene)
        self.noise = NoiseModel(label_noise=config.label_noise)
        self.state = AgentState(spec.start_floor, spec.start_cell, spec.start_heading)
        self.smap = SemanticMap(scene.num_categories, size=config.map_size,
                                record_conf_floor=config.record_conf_floor,
                                min_stair_cells=config.min_stair_cells)
        self.stats = ExplorationStats(total_categories=scene.num_categories,
                                      area_interval=config.trigger.area_interval)
        self.ifstate = ifl.InterfloorState()
        self.repeat = RepeatDetector(repeat_limit=config.repeat_limit,
                                     displacement_eps=config.repeat_displacement_eps,
                                     free_explore_steps=config.free_explore_steps)
        self.obs = None
        self.waypoint: Optional[Cell] = None
        self.waypoint_age = 0
        self.scan_remaining = 3  # turns left in the look-around at episode start
        self.path: list[Cell] = []
        self.path_goal: Optional[Cell] = None
        self.path_pos = 0
        self.path_age = 0
        self._exec_field = {}
        self.fused: dict[Cell, tuple[float, float]] = {}
        self.ignored_goals: set[Cell] = set()
        self.path_length_m = 0.0
        self.floor_changes = 0
        self.mfnp_triggered = 0
        self.trigger_timestep = -1
        self.fallbacks = 0

    # -- event plumbing ----------------------------------------------------

    def _ev(self, kind: str, **fields) -> None:
        if self.writer is not None:
            self.writer.event(kind, **fields)

    # -- planning helpers ----------------------------------------------------

    @property
    def agent_map_cell(self) -> Cell:
        return self.smap.world_to_map(self.state.cell)

    def exec_field(self, allow_stairs: bool = False):
        """Arrival times over explored free space from the agent.

        Exploration avoids walking onto stair cells so floor changes only happen
        when the inter-floor policy asks for them; its directives plan with
        allow_stairs=True. The agent's own cell is always traversable.
        """
        if self._exec_field.get(allow_stairs) is None:
            mask = self.smap.free_mask()
            if not allow_stairs:
                mask = mask & ~self.smap.stair
            ax, ay = self.agent_map_cell
            mask[ay, ax] = True
            self._exec_field[allow_stairs] = solve_fmm_window(mask, [(ax, ay)])
        return self._exec_field[allow_stairs]

    def candidate_field(self, margin: int = 8):
        explored = self.smap.explored
        ys, xs = np.nonzero(explored)
        y0 = max(int(ys.min()) - margin, 0)
        y1 = min(int(ys.max()) + margin + 1, self.smap.size)
        x0 = max(int(xs.min()) - margin, 0)
        x1 = min(int(xs.max()) + margin + 1, self.smap.size)
        traversable = np.zeros_like(explored)
        traversable[y0:y1, x0:x1] = ~self.smap.obstacle[y0:y1, x0:x1]
        return solve_fmm_window(traversable, [self.agent_map_cell])

    def _navigate(self, goal: Cell, allow_stairs: bool = False) -> Optional[Action]:
        """One action along a (possibly cached) path to goal; None when there is
        no path or the agent already stands on the goal."""
        agent = self.agent_map_cell
        key = (goal, allow_stairs)
        if self.path_goal == key and self.path and self.path_age < self.config.replan_interval:
            if self.path_pos + 1 < len(self.path) and self.path[self.path_pos + 1] == agent:
                self.path_pos += 1
            if self.path[self.path_pos] != agent:
                self.path = []
        else:
            self.path = []
        if not self.path:
            try:
                self.path = extract_path(self.exec_field(allow_stairs), goal)
            except NoPathError:
                self.path_goal = None
                return None
            self.path_goal = key
            self.path_pos = 0
            self.path_age = 0
            if self.path[0] != agent:  # field is agent-sourced, so this is a bug guard
                self.path = []
                return None
        self.path_age += 1
        return next_action(self.path[self.path_pos:], agent, self.state.heading)

    def _invalidate_plan(self) -> None:
        self.path = []
        self.path_goal = None
        self._exec_field = {}

    # -- per-step decision ----------------------------------------------------

    def _confirmed_target(self) -> Optional[Cell]:
        target = self.spec.target_category
        conf = self.smap.confidence[target]
        best, best_v = None, 0.0
        for cell in self.smap.category_cells(target):
            if cell in self.ignored_goals:
                continue
            p_seg = float(conf[cell[1], cell[0]])
            cached = self.fused.get(cell)
            if cached is None or cached[0] != p_seg:
                query = DetectionQuery(
                    floor=self.state.floor,
                    world_cell=self.smap.map_to_world(cell),
                    map_cell=cell,
                    category=target,
                    category_name=self.scene.category_names[target],
                    seg_confidence=p_seg,
                )
                try:
                    p_vlm = self.advisor.check_detection(query)
                except AdvisorError:
                    p_vlm = 0.5  # neutral double-check when the advisor is down
                    self.fallbacks += 1
                value = fuse_detection(p_seg, p_vlm, self.config.beta)
                self.fused[cell] = (p_seg, value)
                self._ev("detection", t=self.state.t, cell=list(cell), seg=p_seg,
                         vlm=p_vlm, fused=value,
                         accepted=bool(value >= self.config.conf_threshold))
            else:
                value = cached[1]
            if value >= self.config.conf_threshold and value > best_v:
                best, best_v = cell, value
        return best

    def _reset_map(self, reason: str) -> None:
        self._ev("reset", t=self.state.t, reason=reason)
        self.smap.reset(self.state.cell)
        self.smap.integrate(self.obs)
        self.stats.reset_epoch()
        self.fused.clear()
        self.ignored_goals.clear()
        self.waypoint = None
        self.scan_remaining = 3  # orient on the fresh map
        self._invalidate_plan()

    def _maybe_trigger(self) -> Optional[ifl.Directive]:
        cfg = self.config
        if not cfg.trigger_enabled or not self.ifstate.can_activate(self.state.t):
            return None
        t_min, t_max = cfg.trigger.window(self.spec.max_steps)
        if self.smap.stair_present() != 1 or not t_min <= self.state.t <= t_max:
            return None
        digest = ExplorationDigest(
            t=self.state.t,
            max_steps=self.spec.max_steps,
            seen_category_names=sorted(self.scene.category_names[c]
                                       for c in self.stats.seen_categories),
            objects_seen=len(self.stats.seen_categories),
            objects_total=self.stats.total_categories,
            interval=cfg.trigger.area_interval,
            area_growth=self.stats.area_growth,
        )
        try:
            self.stats.advisor_probability = self.advisor.multifloor_probability(digest)
        except AdvisorError:
            ratio = digest.objects_seen / digest.objects_total
            self.stats.advisor_probability = 0.5 * ratio + 0.5 * (1.0 - digest.area_growth)
            self.fallbacks += 1
        go, value = should_go_multifloor(self.smap, self.stats, cfg.trigger, self.spec.max_steps)
        self._ev("trigger_eval", t=self.state.t, decision="go" if go else "stay",
                 **value.as_dict())
        if not go:
            return None
        ok = ifl.activate(self.ifstate, self.smap, self.exec_field(True).times,
                          self.state.t, cfg.interfloor)
        if not ok:
            self._ev("phase", t=self.state.t, to="aborted_no_reachable_stairs")
            self.fallbacks += 1
            return None
        if self.mfnp_triggered == 0:
            self.trigger_timestep = self.state.t
        self.mfnp_triggered = 1
        self._ev("phase", t=self.state.t, to=self.ifstate.phase.value,
                 goal=list(self.ifstate.stair_goal))
        return ifl.tick(self.ifstate, self.smap, self.agent_map_cell,
                        self.state.t, cfg.interfloor)

    def _explore(self) -> Action:
        if self.scan_remaining > 0:
            self.scan_remaining -= 1
            return Action.TURN_LEFT
        agent = self.agent_map_cell
        if self.waypoint is not None:
            self.waypoint_age += 1
            if chebyshev(agent, self.waypoint) <= 1:
                self.waypoint = None
                self.scan_remaining = 3  # look around at the reached waypoint
                return self._explore()
            if self.waypoint_age > self.config.waypoint_hold_steps:
                self.waypoint = None
        if self.waypoint is None:
            candidates = extract_candidates(self.smap, self.config.frontier)
            if candidates:
                cfield = self.candidate_field()
                score_candidates(candidates, cfield.times, self.config.frontier.alpha)
                sel = select_waypoint(
                    candidates, self.advisor,
                    self.scene.category_names[self.spec.target_category],
                    agent, self.repeat)
                if sel.mode == "fallback":
                    self.fallbacks += 1
                self.waypoint = sel.waypoint.cell
                self.waypoint_age = 0
                self._ev("waypoint", t=self.state.t, cell=list(self.waypoint),
                         mode=sel.mode, n_candidates=len(candidates),
                         excluded=[list(c) for c in sel.excluded])
            else:
                # no surviving frontier region: free exploration toward the nearest
                # raw frontier cell finishes off narrow throats and small pockets
                self.waypoint = self._nearest_raw_frontier()
                self.waypoint_age = 0
                if self.waypoint is not None:
                    self._ev("waypoint", t=self.state.t, cell=list(self.waypoint),
                             mode="free_explore", n_candidates=0, excluded=[])
        if self.waypoint is not None:
            act = self._navigate(self.waypoint)
            if act is not None:
                return act
            self.waypoint = None
        return Action.TURN_LEFT  # nothing reachable to chase: scan in place

    def _nearest_raw_frontier(self) -> Optional[Cell]:
        raw = frontier_mask(self.smap.explored, self.smap.obstacle, 0)
        if not raw.any():
            return None
        times = self.exec_field().times
        ys, xs = np.nonzero(raw)
        best, best_t = None, math.inf
        for x, y in zip(xs.tolist(), ys.tolist()):
            t = float(times[y, x])
            if t < best_t:
                best, best_t = (int(x), int(y)), t
        return best

    def _decide(self) -> Action:
        goal = self._confirmed_target()
        if goal is not None:
            gx, gy = self.smap.map_to_world(goal)
            dist_m = math.hypot(gx - self.state.cell[0], gy - self.state.cell[1]) * self.scene.cell_size_m
            if dist_m < self.spec.success_dist_m:
                return Action.STOP
            act = self._navigate(goal)
            if act is not None:
                return act
            self.ignored_goals.add(goal)  # mapped but unreachable; fall back to exploring
        directive = None
        phase_before = self.ifstate.phase
        if self.ifstate.phase is not ifl.Phase.INACTIVE:
            directive = ifl.tick(self.ifstate, self.smap, self.agent_map_cell,
                                 self.state.t, self.config.interfloor)
        else:
            directive = self._maybe_trigger()
        if self.ifstate.phase is ifl.Phase.TRAVERSING and phase_before is not ifl.Phase.TRAVERSING:
            self._invalidate_plan()  # sealing just rewrote the obstacle channel
        if directive is not None and directive.kind != "none":
            if directive.kind == "reset":
                self._reset_map("interfloor")
            elif directive.kind == "forward":
                return Action.MOVE_FORWARD
            elif directive.kind == "navigate":
                act = self._navigate(directive.goal, allow_stairs=True)
                if act is not None:
                    return act
                return Action.TURN_LEFT
        return self._explore()

    # -- main loop ----------------------------------------------------------

    def run(self) -> EpisodeResult:
        scene, spec = self.scene, self.spec
        targets = scene.category_cells(spec.target_category)
        shortest = oracle_geodesic(scene, (spec.start_floor, spec.start_cell), targets)
        self._ev("episode_start", scene=scene_to_dict(scene), spec=spec_to_dict(spec),
                 seed=self.seed, episode_id=self.episode_id)
        while not self.state.terminated and self.state.t < spec.max_steps:
            self.obs = observe(scene, self.state, self.noise, self.rng,
                               range_cells=self.config.sensor_range)
            self.smap.integrate(self.obs)
            self.stats.update(self.smap, self.obs, self.config.record_conf_floor)
            self.repeat.tick()
            self._exec_field = {}
            phase_before = self.ifstate.phase
            action = self._decide()
            if phase_before is not self.ifstate.phase:
                self._ev("phase", t=self.state.t, to=self.ifstate.phase.value,
                         sealed=[list(c) for c in sorted(self.ifstate.entrance_cells)])
            self.state, outcome = step(scene, self.state, action)
            if outcome.moved:
                self.path_length_m += scene.cell_size_m
            if outcome.floor_changed:
                self.floor_changes += 1
                self._invalidate_plan()
            if outcome.collided:
                self._invalidate_plan()
            self._ev("step", t=self.state.t, action=action.value,
                     moved=outcome.moved, collided=outcome.collided,
                     floor_changed=outcome.floor_changed,
                     pose=[self.state.floor, self.state.cell[0], self.state.cell[1],
                           int(self.state.heading)])

        stopped = self.state.terminated
        success = 1 if stopped and episode_success(scene, spec, self.state) else 0
        if stopped:
            termination = "stopped_success" if success else "stopped_failure"
        else:
            termination = "timeout"
        denom = max(self.path_length_m, shortest)
        spl = 0.0 if denom == 0 or not math.isfinite(denom) else success * shortest / denom
        dtg = oracle_geodesic(scene, self.state, targets)
        result = EpisodeResult(
            episode_id=self.episode_id,
            success=success,
            spl=spl,
            dtg_m=dtg,
            steps_used=self.state.t,
            agent_path_length_m=self.path_length_m,
            oracle_shortest_m=shortest,
            mfnp_triggered=self.mfnp_triggered,
            floor_changes=self.floor_changes,
            termination=termination,
            trigger_timestep=self.trigger_timestep,
            fallback_events=self.fallbacks,
        )
        self._ev("episode_end", t=self.state.t, result=_result_dict(result),
                 final_state={
                     "floor": self.state.floor,
                     "cell": list(self.state.cell),
                     "heading": int(self.state.heading),
                     "stair": ([self.state.stair.stairwell, self.state.stair.index,
                                self.state.stair.direction] if self.state.stair else None),
                 })
        return result


def _result_dict(r: EpisodeResult) -> dict:
    return {
        "episode_id": r.episode_id,
        "success": r.success,
        "spl": r.spl,
        "dtg_m": r.dtg_m,
        "steps_used": r.steps_used,
        "agent_path_length_m": r.agent_path_length_m,
        "oracle_shortest_m": r.oracle_shortest_m,
        "mfnp_triggered": r.mfnp_triggered,
        "floor_changes": r.floor_changes,
        "termination": r.termination,
        "trigger_timestep": r.trigger_timestep,
        "fallback_events": r.fallback_events,
    }


# -- batches ------------------------------------------------------------------


@dataclass
class BatchResult:
    rows: list[EpisodeResult]
    sr: float
    spl: float
    dtg_m: float

    def summary_dict(self) -> dict:
        return {"episodes": len(self.rows), "sr": self.sr, "spl": self.spl,
                "dtg_m": self.dtg_m}


def run_batch(episodes: Sequence[tuple[Scene, EpisodeSpec, int, str]], config: RunConfig,
              csv_path: Optional[str] = None, summary_path: Optional[str] = None,
              dump_dir: Optional[str] = None) -> BatchResult:
    """Run episodes sequentially; any raising episode is recorded as failed and the
    batch continues. Writes the per-episode CSV and summary JSON when paths are given."""
    if not episodes:
        raise ValueError("episode list must be nonempty")
    rows: list[EpisodeResult] = []
    for scene, spec, seed, episode_id in episodes:
        writer = None
        if dump_dir is not None:
            os.makedirs(dump_dir, exist_ok=True)
            writer = TrajectoryWriter(open(os.path.join(dump_dir, f"{episode_id}.jsonl"),
                                           "w", encoding="utf-8"))
        try:
            rows.append(run_episode(scene, spec, config, seed, writer, episode_id))
        except Exception as exc:  # noqa: BLE001 - a broken episode must not kill the batch
            rows.append(EpisodeResult(
                episode_id=episode_id, success=0, spl=0.0, dtg_m=math.inf,
                steps_used=0, agent_path_length_m=0.0, oracle_shortest_m=math.inf,
                mfnp_triggered=0, floor_changes=0, termination="error",
                error=f"{type(exc).__name__}: {exc}"))
            print(f"episode {episode_id} failed: {exc}", file=sys.stderr)
        finally:
            if writer is not None:
                writer.close()
    sr = sum(r.success for r in rows) / len(rows)
    spl = sum(r.spl for r in rows) / len(rows)
    dtg = sum(r.dtg_m for r in rows) / len(rows)
    batch = BatchResult(rows=rows, sr=sr, spl=spl, dtg_m=dtg)
    if csv_path is not None:
        write_csv(rows, csv_path)
    if summary_path is not None:
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(batch.summary_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return batch


def write_csv(rows: Sequence[EpisodeResult], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())
