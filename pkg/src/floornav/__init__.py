"""Multi-floor gridworld simulator and zero-shot object-goal navigation policies."""

from .advisors import (AdvisorError, EndpointConfig, RemoteAdvisor, RepeatDetector,
                       StubAdvisor, fuse_detection, select_waypoint)
from .config import AdvisorConfig, ConfigError, RunConfig, load_config, save_config
from .frontier import (CandidateWaypoint, FrontierConfig, explored_ratio,
                       extract_candidates, score, score_candidates)
from .interfloor import (Directive, InterfloorConfig, InterfloorState, Phase,
                         activate, seal_entrance, tick)
from .mapping import SemanticMap
from .planner import (DistanceField, NoPathError, extract_path, next_action,
                      solve_fmm, solve_fmm_window, upwind_residual)
from .runner import BatchResult, EpisodeResult, run_batch, run_episode
from .scenegen import GenParams, InfeasibleParamsError, generate_scene, sample_episode
from .trajectory import TrajectoryWriter, read_events, replay_metrics
from .trigger import (ExplorationStats, TriggerConfig, compute_metric,
                      should_go_multifloor, time_validity)
from .world import (Action, AgentState, EpisodeSpec, Heading, NoiseModel, Observation,
                    PlacedObject, Scene, SceneValidationError, Stairwell, StepOutcome,
                    episode_success, load_scene, observe, oracle_geodesic, save_scene,
                    step)

__version__ = "0.1.0"
