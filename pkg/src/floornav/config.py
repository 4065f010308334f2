"""Run configuration: schema-versioned, loadable from JSON or TOML."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .advisors import EndpointConfig
from .frontier import FrontierConfig
from .interfloor import InterfloorConfig
from .trigger import TriggerConfig

SCHEMA_VERSION = 1

ABLATION_FLAGS = ("mfnp", "timestep", "objects", "explored", "llm")


class ConfigError(ValueError):
    pass


@dataclass
class AdvisorConfig:
    mode: str = "stub"  # stub | remote
    reliability: float = 0.9  # stub double-check reliability
    endpoint: Optional[EndpointConfig] = None

    def validate(self) -> None:
        if self.mode not in ("stub", "remote"):
            raise ConfigError(f"advisor mode must be stub or remote, got {self.mode!r}")
        if not 0.0 <= self.reliability <= 1.0:
            raise ConfigError(f"advisor reliability must be in [0, 1], got {self.reliability}")
        if self.mode == "remote" and self.endpoint is None:
            raise ConfigError("remote advisor requires an endpoint section")


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    max_steps: int = 500
    success_dist_m: float = 1.0
    sensor_range: int = 20
    label_noise: float = 0.1
    map_size: int = 480
    record_conf_floor: float = 0.3
    min_stair_cells: int = 3
    beta: float = 0.6             # segmentation weight in detection fusion
    conf_threshold: float = 0.65  # fused confidence needed to confirm the target
    repeat_limit: int = 3
    repeat_displacement_eps: float = 2.0
    free_explore_steps: int = 20
    waypoint_hold_steps: int = 25
    replan_interval: int = 8
    trigger_enabled: bool = True
    frontier: FrontierConfig = field(default_factory=FrontierConfig)
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    interfloor: InterfloorConfig = field(default_factory=InterfloorConfig)
    advisor: AdvisorConfig = field(default_factory=AdvisorConfig)

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        checks = [
            (self.max_steps > 0, "max_steps must be positive"),
            (self.success_dist_m > 0, "success_dist_m must be positive"),
            (self.sensor_range >= 1, "sensor_range must be >= 1"),
            (0.0 <= self.label_noise <= 1.0, "label_noise must be in [0, 1]"),
            (self.map_size >= 32, "map_size must be >= 32"),
            (0.0 <= self.record_conf_floor <= 1.0, "record_conf_floor must be in [0, 1]"),
            (self.min_stair_cells >= 1, "min_stair_cells must be >= 1"),
            (0.0 <= self.beta <= 1.0, "beta must be in [0, 1]"),
            (0.0 <= self.conf_threshold <= 1.0, "conf_threshold must be in [0, 1]"),
            (self.repeat_limit >= 1, "repeat_limit must be >= 1"),
            (self.repeat_displacement_eps >= 0, "repeat_displacement_eps must be >= 0"),
            (self.free_explore_steps >= 0, "free_explore_steps must be >= 0"),
            (self.waypoint_hold_steps >= 1, "waypoint_hold_steps must be >= 1"),
            (self.replan_interval >= 1, "replan_interval must be >= 1"),
            (self.frontier.alpha >= 0, "frontier.alpha must be >= 0"),
            (self.frontier.benefit_radius >= 1, "frontier.benefit_radius must be >= 1"),
            (self.frontier.min_region_area >= 1, "frontier.min_region_area must be >= 1"),
            (self.frontier.obstacle_dilation >= 0, "frontier.obstacle_dilation must be >= 0"),
            (self.frontier.ratio_window >= 1, "frontier.ratio_window must be >= 1"),
            (self.interfloor.seal_radius >= 0, "interfloor.seal_radius must be >= 0"),
            (self.interfloor.settle_steps >= 0, "interfloor.settle_steps must be >= 0"),
            (self.interfloor.cooldown_steps >= 0, "interfloor.cooldown_steps must be >= 0"),
            (self.interfloor.deadline_steps >= 1, "interfloor.deadline_steps must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        self.trigger.validate()
        if self.trigger_enabled:
            self.trigger.window(self.max_steps)  # raises when the window is empty
        self.advisor.validate()

    def ablated(self, flag: str) -> "RunConfig":
        """Copy of this config with one trigger component disabled.

        mfnp disables the whole trigger; the term flags zero one Eq-weight and
        renormalize the remaining weights to sum to 1.
        """
        if flag not in ABLATION_FLAGS:
            raise ConfigError(f"unknown ablation {flag!r}; known: {ABLATION_FLAGS}")
        cfg = copy_config(self)
        if flag == "mfnp":
            cfg.trigger_enabled = False
            return cfg
        attr = {"timestep": "w_time", "objects": "w_objects",
                "explored": "w_area", "llm": "w_advisor"}[flag]
        tr = cfg.trigger
        setattr(tr, attr, 0.0)
        total = tr.w_time + tr.w_objects + tr.w_area + tr.w_advisor
        if total <= 0:
            raise ConfigError(f"ablating {flag} leaves no active trigger term")
        tr.w_time /= total
        tr.w_objects /= total
        tr.w_area /= total
        tr.w_advisor /= total
        tr.validate()
        return cfg


def copy_config(cfg: RunConfig) -> RunConfig:
    return from_dict(to_dict(cfg))


def to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    if cfg.advisor.endpoint is None:
        d["advisor"].pop("endpoint")
    return d


_SECTION_TYPES = {
    "frontier": FrontierConfig,
    "trigger": TriggerConfig,
    "interfloor": InterfloorConfig,
}


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    kwargs = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            section = data.pop(name)
            fields = {f.name for f in dataclasses.fields(cls)}
            bad = set(section) - fields
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            kwargs[name] = cls(**section)
    if "advisor" in data:
        section = dict(data.pop("advisor"))
        endpoint = section.pop("endpoint", None)
        if endpoint is not None:
            endpoint = EndpointConfig(**endpoint)
        kwargs["advisor"] = AdvisorConfig(endpoint=endpoint, **section)
    kwargs.update(data)
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path: str) -> RunConfig:
    text = open(path, "rb").read()
    if str(path).endswith(".toml"):
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text.decode("utf-8"))
    else:
        data = json.loads(text.decode("utf-8"))
    return from_dict(data)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
