"""Pluggable language/vision advisors: a deterministic stub and a remote chat client.

The stub keeps the whole pipeline reproducible for CI; the remote client speaks
the chat-completions protocol of any OpenAI-compatible endpoint. Every caller of
an advisor has a non-advisor fallback, so advisor failure never fails an episode.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import httpx

from .frontier import NEG_INF, CandidateWaypoint
from .planner import chebyshev
from .world import Cell, Scene


class AdvisorError(RuntimeError):
    """Remote advisor failure: network, timeout, or an unparseable reply."""


def fuse_detection(p_seg: float, p_vlm: float, beta: float) -> float:
    """Blend segmentation confidence with the advisor's double-check probability.

    Returns beta * p_seg + (1 - beta) * p_vlm; raises if any input leaves [0, 1].
    """
    for name, v in (("p_seg", p_seg), ("p_vlm", p_vlm), ("beta", beta)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return beta * p_seg + (1.0 - beta) * p_vlm


@dataclass
class ExplorationDigest:
    """Floor-epoch exploration summary handed to advisors."""

    t: int
    max_steps: int
    seen_category_names: list[str]
    objects_seen: int
    objects_total: int
    interval: int
    area_growth: float  # fraction of new area over the last interval, in [0, 1]


@dataclass
class DetectionQuery:
    floor: int
    world_cell: Cell
    map_cell: Cell
    category: int
    category_name: str
    seg_confidence: float


class Advisor(Protocol):
    name: str

    def rank_waypoints(self, candidates: Sequence[CandidateWaypoint], target_name: str) -> list[float]:
        """Scores in [0, 1], one per candidate, higher is better."""

    def multifloor_probability(self, digest: ExplorationDigest) -> float:
        """Probability in [0, 1] that exploring another floor is the better move."""

    def check_detection(self, query: DetectionQuery) -> float:
        """Probability in [0, 1] that the detection is a true positive."""


class StubAdvisor:
    """Deterministic advisor for offline runs.

    Waypoint scores are the frontier scores rescaled to [0, 1]; the double-check
    consults scene ground truth with fixed reliability; the floor-change
    probability mirrors the evidence the prompt would carry.
    """

    name = "stub"

    def __init__(self, scene: Scene, reliability: float = 0.9):
        self.scene = scene
        self.reliability = reliability

    def rank_waypoints(self, candidates: Sequence[CandidateWaypoint], target_name: str) -> list[float]:
        finite = [c.score for c in candidates if math.isfinite(c.score)]
        if not finite:
            return [0.0 for _ in candidates]
        lo, hi = min(finite), max(finite)
        span = hi - lo
        out = []
        for c in candidates:
            if not math.isfinite(c.score):
                out.append(0.0)
            elif span == 0:
                out.append(1.0)
            else:
                out.append((c.score - lo) / span)
        return out

    def multifloor_probability(self, digest: ExplorationDigest) -> float:
        ratio = digest.objects_seen / digest.objects_total if digest.objects_total else 0.0
        return 0.5 * ratio + 0.5 * (1.0 - digest.area_growth)

    def check_detection(self, query: DetectionQuery) -> float:
        truth = self.scene.object_at(query.floor, query.world_cell)
        return self.reliability if truth == query.category else 1.0 - self.reliability


@dataclass
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout_ms: int = 10000


MULTIFLOOR_PROMPT = (
    "Your task has a time limit of {max_steps} timesteps, and the current timestep is {t}. "
    "On the present floor, you have identified objects {seen} out of a total of {total} object types. "
    "In the past {interval} timesteps, the proportion of newly explored area is {growth:.3f}.\n"
    "Should the agent explore another floor via the stairs? "
    "Answer with a single number between 0 and 1."
)

WAYPOINT_PROMPT = (
    "A robot is searching an indoor floor for a {target}. "
    "Candidate exploration waypoints:\n{rows}\n"
    "Reply with the candidate numbers ordered from most to least promising, comma-separated."
)

DETECTION_PROMPT = (
    "A detector reports a {category} with confidence {conf:.2f} at map cell {cell}. "
    "Answer with a single number between 0 and 1: the probability that the detection is correct."
)


class RemoteAdvisor:
    """Chat-completions client for an OpenAI-compatible endpoint.

    One blocking request per query; a malformed reply is retried once and then
    raised as AdvisorError. The transcript of the last exchange is kept for the
    trajectory dump.
    """

    name = "remote"

    def __init__(self, config: EndpointConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        self.transcript: list[dict] = []
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout_ms / 1000.0,
            transport=transport,
        )

    def close(self) -> None:
        self._client.close()

    def _chat(self, prompt: str) -> str:
        headers = {}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(
                "/chat/completions",
                json={
                    "model": self.config.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": 0,
                },
                headers=headers,
            )
            resp.raise_for_status()
            text = resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise AdvisorError(f"chat request failed: {exc}") from exc
        self.transcript.append({"prompt": prompt, "reply": text})
        return text

    def _ask(self, prompt: str, parser, what: str):
        text = self._chat(prompt)
        try:
            return parser(text)
        except ValueError:
            text = self._chat(prompt)  # one retry on a malformed reply
            try:
                return parser(text)
            except ValueError as exc:
                raise AdvisorError(f"unparseable {what} reply: {text!r}") from exc

    def rank_waypoints(self, candidates: Sequence[CandidateWaypoint], target_name: str) -> list[float]:
        rows = "\n".join(
            f"{i}: distance {c.distance:.1f} cells, unexplored cells nearby {c.benefit:.0f}, "
            f"local explored fraction {c.explored_ratio:.2f}"
            for i, c in enumerate(candidates)
        )
        prompt = WAYPOINT_PROMPT.format(target=target_name, rows=rows)
        ranking = self._ask(prompt, lambda t: parse_ranking(t, len(candidates)), "ranking")
        n = len(candidates)
        scores = [0.0] * n
        for pos, idx in enumerate(ranking):
            scores[idx] = (n - pos) / n
        return scores

    def multifloor_probability(self, digest: ExplorationDigest) -> float:
        seen = ", ".join(digest.seen_category_names) if digest.seen_category_names else "none"
        prompt = MULTIFLOOR_PROMPT.format(
            max_steps=digest.max_steps, t=digest.t, seen=seen,
            total=digest.objects_total, interval=digest.interval, growth=digest.area_growth,
        )
        return self._ask(prompt, parse_probability, "probability")

    def check_detection(self, query: DetectionQuery) -> float:
        prompt = DETECTION_PROMPT.format(
            category=query.category_name, conf=query.seg_confidence, cell=list(query.map_cell),
        )
        return self._ask(prompt, parse_probability, "probability")


_NUMBER_RE = re.compile(r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?")


def parse_probability(text: str) -> float:
    """Extract a single probability in [0, 1] from a reply; ValueError otherwise."""
    matches = _NUMBER_RE.findall(text.strip())
    if len(matches) != 1:
        raise ValueError(f"expected exactly one number, got {text!r}")
    value = float(matches[0])
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"probability {value} outside [0, 1]")
    return value


def parse_ranking(text: str, n: int) -> list[int]:
    """Parse a comma-separated permutation of candidate indices (0- or 1-based)."""
    parts = [p.strip() for p in text.strip().strip(".").split(",")]
    try:
        values = [int(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"non-integer ranking entry in {text!r}") from exc
    if sorted(values) == list(range(n)):
        return values
    if sorted(values) == list(range(1, n + 1)):
        return [v - 1 for v in values]
    raise ValueError(f"ranking {values} is not a permutation of {n} candidates")


# -- waypoint selection -------------------------------------------------------


@dataclass
class RepeatDetector:
    """Detects a stuck select-loop: the same waypoint chosen repeatedly while the
    agent barely moves, which switches selection to free exploration for a while."""

    repeat_limit: int = 3
    displacement_eps: float = 2.0
    free_explore_steps: int = 20
    last_cell: Optional[Cell] = None
    consecutive_same: int = 0
    span_start: Optional[Cell] = None
    free_remaining: int = 0

    @property
    def free_explore_active(self) -> bool:
        return self.free_remaining > 0

    def tick(self) -> None:
        if self.free_remaining > 0:
            self.free_remaining -= 1

    def record(self, chosen: Cell, agent_cell: Cell) -> bool:
        if chosen == self.last_cell:
            self.consecutive_same += 1
        else:
            self.last_cell = chosen
            self.consecutive_same = 1
            self.span_start = agent_cell
        if (self.consecutive_same >= self.repeat_limit
                and chebyshev(agent_cell, self.span_start) < self.displacement_eps):
            self.free_remaining = self.free_explore_steps
            self.consecutive_same = 0
            self.last_cell = None
            return True
        return False


@dataclass
class SelectionResult:
    waypoint: CandidateWaypoint
    mode: str  # advisor | fallback | free_explore
    scores: list[tuple[Cell, float]] = field(default_factory=list)
    excluded: list[Cell] = field(default_factory=list)


def _nearest(candidates: Sequence[CandidateWaypoint]) -> CandidateWaypoint:
    return min(candidates, key=lambda c: (c.distance if math.isfinite(c.distance) else math.inf, c.cell))


def select_waypoint(candidates: Sequence[CandidateWaypoint], advisor: Advisor,
                    target_name: str, agent_cell: Cell, repeat: RepeatDetector,
                    ratio_limit: float = 0.9) -> SelectionResult:
    """Pick the next exploration waypoint.

    The advisor scores all candidates; the ranking is walked in descending order
    skipping candidates whose neighborhood is already more than ratio_limit
    explored. If every candidate is excluded the top-ranked one is returned
    anyway. Advisor failure falls back to the plain frontier-score ranking, and a
    detected repeat loop forces the nearest frontier for a fixed number of steps.
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")
    if repeat.free_explore_active:
        return SelectionResult(waypoint=_nearest(candidates), mode="free_explore")
    mode = "advisor"
    try:
        raw = advisor.rank_waypoints(candidates, target_name)
        ordered = sorted(
            zip(candidates, raw),
            key=lambda cs: (-cs[1], cs[0].distance, cs[0].cell),
        )
    except AdvisorError:
        mode = "fallback"
        ordered = [(c, 0.0) for c in
                   sorted(candidates, key=lambda c: (-c.score, c.distance, c.cell))]
    excluded = []
    chosen = None
    for cand, _ in ordered:
        if cand.explored_ratio > ratio_limit:
            excluded.append(cand.cell)
            continue
        chosen = cand
        break
    if chosen is None:
        chosen = ordered[0][0]  # every candidate excluded: fall back to the top pick
    if repeat.record(chosen.cell, agent_cell):
        return SelectionResult(waypoint=_nearest(candidates), mode="free_explore",
                               scores=[(c.cell, s) for c, s in ordered], excluded=excluded)
    return SelectionResult(waypoint=chosen, mode=mode,
                           scores=[(c.cell, s) for c, s in ordered], excluded=excluded)
