"""Command-line interface: scene generation, batch runs, replay checks, ablations."""
from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from typing import Optional

import numpy as np

from .config import ABLATION_FLAGS, RunConfig, load_config, save_config
from .runner import run_batch
from .scenegen import GenParams, generate_scene, sample_episode
from .trajectory import read_events, replay_metrics, spec_from_dict, spec_to_dict
from .world import load_scene, save_scene

DEFAULT_REPLAY_TOL = 1e-9


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="floornav")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate scenes and an episode manifest")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--scenes", type=int, default=10)
    p_gen.add_argument("--episodes-per-scene", type=int, default=1)
    p_gen.add_argument("--floors", type=int, default=1)
    p_gen.add_argument("--width", type=int, default=48)
    p_gen.add_argument("--height", type=int, default=40)
    p_gen.add_argument("--rooms", type=int, default=5)
    p_gen.add_argument("--density", type=float, default=0.012)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--max-steps", type=int, default=500)
    p_gen.add_argument("--success-dist", type=float, default=1.0)
    p_gen.add_argument("--target-category", type=int, default=None,
                       help="fix the target category for all episodes")
    p_gen.add_argument("--pin-target-floor", type=int, default=None,
                       help="place the single instance of the target category on this floor")
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run a batch of episodes")
    p_run.add_argument("--config", default=None, help="RunConfig as JSON or TOML")
    p_run.add_argument("--episodes", required=True, help="episode manifest from gen")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--dump", action="store_true", help="write trajectory dumps")
    for flag in ABLATION_FLAGS:
        p_run.add_argument(f"--no-{flag}", action="store_true",
                           help=f"disable the {flag} component")
    p_run.set_defaults(func=cmd_run)

    p_replay = sub.add_parser("replay", help="recompute metrics from trajectory dumps")
    p_replay.add_argument("--dump", required=True, help="a .jsonl file or a directory of them")
    p_replay.add_argument("--tolerance", type=float, default=DEFAULT_REPLAY_TOL)
    p_replay.set_defaults(func=cmd_replay)

    p_abl = sub.add_parser("ablate", help="run trigger-component ablations")
    p_abl.add_argument("--config", default=None)
    p_abl.add_argument("--episodes", required=True)
    p_abl.add_argument("--out", required=True)
    for flag in ABLATION_FLAGS:
        p_abl.add_argument(f"--no-{flag}", action="store_true",
                           help=f"include the w/o {flag} variant")
    p_abl.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    return args.func(args)


def _load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    return load_config(path)


def cmd_gen(args: argparse.Namespace) -> int:
    os.makedirs(args.out, exist_ok=True)
    params = GenParams(
        floors=args.floors, width=args.width, height=args.height, rooms=args.rooms,
        object_density=args.density,
        pin_category=args.target_category if args.pin_target_floor is not None else None,
        pin_floor=args.pin_target_floor if args.pin_target_floor is not None else 0,
    )
    manifest = {"episodes": []}
    rng = np.random.default_rng(args.seed)
    for i in range(args.scenes):
        scene = generate_scene(params, seed=args.seed + i)
        name = f"scene_{i:04d}.json"
        save_scene(scene, os.path.join(args.out, name))
        for k in range(args.episodes_per_scene):
            spec = sample_episode(scene, rng, target_category=args.target_category,
                                  max_steps=args.max_steps,
                                  success_dist_m=args.success_dist)
            entry = spec_to_dict(spec)
            entry["scene"] = name
            entry["seed"] = int(rng.integers(2**31 - 1))
            entry["episode_id"] = f"{scene.scene_id}#{k}"
            manifest["episodes"].append(entry)
    path = os.path.join(args.out, "episodes.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    print(f"wrote {args.scenes} scenes and {len(manifest['episodes'])} episodes to {args.out}")
    return 0


def load_episodes(manifest_path: str):
    """Resolve a gen manifest into (scene, spec, seed, episode_id) tuples."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    scenes = {}
    episodes = []
    for entry in manifest["episodes"]:
        scene_path = os.path.join(base, entry["scene"])
        if scene_path not in scenes:
            scenes[scene_path] = load_scene(scene_path)
        spec = spec_from_dict(entry)
        episodes.append((scenes[scene_path], spec, int(entry["seed"]), entry["episode_id"]))
    return episodes


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_run_config(args.config)
    for flag in ABLATION_FLAGS:
        if getattr(args, f"no_{flag}"):
            config = config.ablated(flag)
    episodes = load_episodes(args.episodes)
    os.makedirs(args.out, exist_ok=True)
    batch = run_batch(
        episodes, config,
        csv_path=os.path.join(args.out, "episodes.csv"),
        summary_path=os.path.join(args.out, "summary.json"),
        dump_dir=os.path.join(args.out, "dumps") if args.dump else None,
    )
    save_config(config, os.path.join(args.out, "config.json"))
    print(f"episodes={len(batch.rows)} SR={batch.sr:.3f} SPL={batch.spl:.3f} "
          f"DTG={batch.dtg_m:.3f} m")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    if os.path.isdir(args.dump):
        paths = sorted(os.path.join(args.dump, n) for n in os.listdir(args.dump)
                       if n.endswith(".jsonl"))
    else:
        paths = [args.dump]
    if not paths:
        print("no dumps found", file=sys.stderr)
        return 2
    worst = 0.0
    for path in paths:
        check = replay_metrics(read_events(path))
        err = check.max_abs_error()
        worst = max(worst, err)
        status = "ok" if err <= args.tolerance else "MISMATCH"
        print(f"{os.path.basename(path)}: max|recorded-recomputed|={err:.3e} {status}")
    print(f"worst error {worst:.3e} over {len(paths)} dumps")
    return 0 if worst <= args.tolerance else 1


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_run_config(args.config)
    episodes = load_episodes(args.episodes)
    flags = [f for f in ABLATION_FLAGS if getattr(args, f"no_{f}")]
    if not flags:
        flags = list(ABLATION_FLAGS)
    os.makedirs(args.out, exist_ok=True)
    report = {"variants": {}, "trigger_sentinel": "max_steps when never triggered"}
    variants = [("full", config)] + [(f"no_{f}", config.ablated(f)) for f in flags]
    for name, cfg in variants:
        vdir = os.path.join(args.out, name)
        os.makedirs(vdir, exist_ok=True)
        batch = run_batch(episodes, cfg,
                          csv_path=os.path.join(vdir, "episodes.csv"),
                          summary_path=os.path.join(vdir, "summary.json"))
        trig = [r.trigger_timestep if r.trigger_timestep >= 0 else cfg.max_steps
                for r in batch.rows]
        report["variants"][name] = {
            "sr": batch.sr,
            "spl": batch.spl,
            "dtg_m": batch.dtg_m,
            "trigger_timesteps": trig,
            "trigger_median": statistics.median(trig),
        }
        print(f"{name}: SR={batch.sr:.3f} trigger_median={statistics.median(trig):.1f}")
    full_median = report["variants"]["full"]["trigger_median"]
    for name, info in report["variants"].items():
        info["trigger_median_shift"] = abs(info["trigger_median"] - full_median)
    with open(os.path.join(args.out, "ablation_summary.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
