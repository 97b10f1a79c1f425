"""Command-line front end: build-graph, train, eval, export-params.

Every config key is mirrored as a ``--section-key`` flag; flags
override the config file.  All commands are deterministic given
(seed, config) and echo both into their outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gridsim, serialize
from .agent import NavigationAgent, OracleAgent, RandomAgent, build_models
from .builder import GraphBuilder
from .config import ConfigError, RunConfig, load_config
from .encoders import OracleEncoder
from .gridsim import (Pose, evaluate, generate_episodes, generate_world,
                      observe, step_env)
from .training import (collect_demonstration, train_bc, train_ppo)

WALK_ACTIONS = (gridsim.FORWARD, gridsim.TURN_LEFT, gridsim.TURN_RIGHT)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")
    parser.add_argument("--out", help="output path or directory")
    seen = set()
    for section in RunConfig.SECTIONS:
        sub_cls = type(getattr(RunConfig(), section))
        for f in fields(sub_cls):
            flag = f"--{section}-{f.name.replace('_', '-')}"
            if flag in seen:
                continue
            seen.add(flag)
            parser.add_argument(flag, dest=f"{section}.{f.name}", metavar="V",
                                help=argparse.SUPPRESS)


def _build_run_config(args) -> RunConfig:
    overrides = {}
    for key, value in vars(args).items():
        if "." in key and value is not None:
            overrides[key] = str(value)
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        overrides["run.out"] = args.out
    return load_config(args.config, overrides)


def _setup(cfg: RunConfig):
    world = generate_world(cfg.seed, cfg.world.width, cfg.world.height,
                           cfg.world.n_rooms, cfg.world.n_objects)
    encoder = OracleEncoder(cfg.encoder, world_seed=cfg.seed)
    return world, encoder


def cmd_build_graph(args) -> int:
    cfg = _build_run_config(args)
    world, encoder = _setup(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    if args.actions:
        names = json.loads(Path(args.actions).read_text())
        idx = {name: i for i, name in enumerate(gridsim.ACTION_NAMES)}
        actions = [idx[name] for name in names]
    else:
        actions = [int(WALK_ACTIONS[rng.integers(len(WALK_ACTIONS))])
                   for _ in range(args.steps)]

    start = sorted(world.main_component())[0]
    pose = Pose(start[0], start[1], 0)
    builder = GraphBuilder(cfg.encoder)
    obs_rng = np.random.default_rng([cfg.seed, 3])
    deltas = []
    obs = observe(world, pose, encoder, cfg.detector, obs_rng)
    deltas.append(builder.step(obs).to_dict())
    for action in actions:
        pose = step_env(world, pose, action)
        obs = observe(world, pose, encoder, cfg.detector, obs_rng)
        deltas.append(builder.step(obs).to_dict())

    # the output path is not part of the run identity, so two runs that
    # differ only in --out stay byte-identical
    meta_cfg = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    meta = {"seed": cfg.seed, "config": meta_cfg}
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize.graph_to_json(builder.graph, meta))
    if args.deltas:
        serialize.write_jsonl(args.deltas, deltas)
    print(f"wrote graph with {builder.graph.num_images} image nodes, "
          f"{builder.graph.num_objects} object nodes to {out}")
    return 0


def _evaluate_policy(cfg: RunConfig, world, encoder, mixer, policy,
                     tier: str, seed: int, ablation: str = "none",
                     episodes_per_tier: int | None = None,
                     collect_logs: bool = False):
    tiers = list(gridsim.TIER_BOUNDS) if tier in ("all", "mixed") else [tier]
    n = episodes_per_tier or cfg.eval.episodes_per_tier
    rng = np.random.default_rng([seed, 10])
    episodes = []
    for t in tiers:
        episodes += generate_episodes(world, encoder, n, t, rng, cfg.detector)
    agent = NavigationAgent(cfg.encoder, mixer, policy, mode=cfg.eval.mode,
                            ablation=ablation, seed=seed,
                            log_attention=collect_logs)
    return evaluate(agent, world, episodes, encoder, cfg.detector,
                    cfg.eval.max_steps, seed=seed, collect_logs=collect_logs)


def cmd_train(args) -> int:
    cfg = _build_run_config(args)
    world, encoder = _setup(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo.json").write_text(
        json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")

    rng = np.random.default_rng([cfg.seed, 20])
    if cfg.train.tier == "mixed":
        tiers = list(gridsim.TIER_BOUNDS)
        base = cfg.train.bc_episodes // len(tiers)
        counts = [base] * len(tiers)
        counts[0] += cfg.train.bc_episodes - base * len(tiers)
        episodes = []
        for t, count in zip(tiers, counts):
            episodes += generate_episodes(world, encoder, count, t, rng,
                                          cfg.detector)
    else:
        episodes = generate_episodes(world, encoder, cfg.train.bc_episodes,
                                     cfg.train.tier, rng, cfg.detector)
    demo_rng = np.random.default_rng([cfg.seed, 21])
    demos = [collect_demonstration(world, ep, encoder, cfg.encoder,
                                   cfg.detector, demo_rng, cfg.train.max_steps)
             for ep in episodes]

    mixer, policy = build_models(cfg.mixer, cfg.policy, cfg.seed)
    serialize.save_checkpoint(out / "checkpoint_initial.pt", mixer, policy,
                              cfg.to_dict())
    metrics_rows = []

    def _log(phase):
        def inner(row):
            metrics_rows.append(row)
            print(f"[{phase}] epoch {row['epoch']}: loss {row['loss']:.4f}")
            serialize.save_checkpoint(out / f"checkpoint_{phase}.pt", mixer,
                                      policy, cfg.to_dict())
        return inner

    train_bc(mixer, policy, demos, cfg.train, log_fn=_log("bc"))
    bc_metrics, _ = _evaluate_policy(cfg, world, encoder, mixer, policy,
                                     cfg.train.tier, cfg.seed,
                                     episodes_per_tier=cfg.train.val_episodes)
    metrics_rows.append({"phase": "bc_eval", "epoch": len(metrics_rows),
                         **bc_metrics})
    print(f"[bc] validation success {bc_metrics['success']:.3f} "
          f"spl {bc_metrics['spl']:.3f}")

    if cfg.train.ppo_updates > 0:
        train_ppo(mixer, policy, world, episodes, encoder, cfg.encoder,
                  cfg.train, cfg.detector, log_fn=_log("ppo"))
        ppo_metrics, _ = _evaluate_policy(cfg, world, encoder, mixer, policy,
                                          cfg.train.tier, cfg.seed,
                                          episodes_per_tier=cfg.train.val_episodes)
        metrics_rows.append({"phase": "ppo_eval", "epoch": len(metrics_rows),
                             **ppo_metrics})
        print(f"[ppo] validation success {ppo_metrics['success']:.3f} "
              f"spl {ppo_metrics['spl']:.3f}")

    serialize.save_checkpoint(out / "checkpoint_final.pt", mixer, policy,
                              cfg.to_dict())
    serialize.write_metrics_csv(out / "metrics.csv", metrics_rows)
    print(f"training artifacts written to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_run_config(args)
    world, encoder = _setup(cfg)

    if args.agent == "policy":
        if not args.checkpoint:
            raise SystemExit("--checkpoint is required for the policy agent")
        mixer, policy = build_models(cfg.mixer, cfg.policy, cfg.seed)
        serialize.load_checkpoint(args.checkpoint, mixer, policy)
        metrics, results = _evaluate_policy(
            cfg, world, encoder, mixer, policy, args.tier, cfg.seed,
            ablation=args.ablate, collect_logs=args.log_attention)
    else:
        tiers = list(gridsim.TIER_BOUNDS) if args.tier == "all" else [args.tier]
        rng = np.random.default_rng([cfg.seed, 10])
        episodes = []
        for t in tiers:
            episodes += generate_episodes(world, encoder,
                                          cfg.eval.episodes_per_tier, t, rng,
                                          cfg.detector)
        agent = OracleAgent() if args.agent == "oracle" else RandomAgent(cfg.seed)
        metrics, results = evaluate(agent, world, episodes, encoder,
                                    cfg.detector, cfg.eval.max_steps,
                                    seed=cfg.seed)

    for key in sorted(metrics):
        print(f"{key}: {metrics[key]}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_metrics_csv(out / "eval_metrics.csv",
                                [{"phase": f"eval-{args.agent}", "epoch": 0,
                                  **metrics}])
    rows = [{"tier": r.tier, "success": bool(r.success), "shortest_m": r.shortest_m,
             "traveled_m": r.traveled_m, "steps": r.steps,
             "final_distance_m": r.final_distance_m,
             **({"step_log": r.step_log} if args.log_attention else {})}
            for r in results]
    serialize.write_jsonl(out / "episodes.jsonl", rows)
    return 0


def cmd_export_params(args) -> int:
    serialize.export_params(args.checkpoint, args.out or "params_export")
    print(f"exported parameters from {args.checkpoint}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="graphnav")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build-graph", help="build a graph from a trajectory")
    _add_config_flags(p_build)
    p_build.add_argument("--steps", type=int, default=200,
                         help="random-walk length when --actions is absent")
    p_build.add_argument("--actions", help="JSON file with an action-name list")
    p_build.add_argument("--deltas", help="optional per-step delta JSONL path")
    p_build.set_defaults(func=cmd_build_graph)

    p_train = sub.add_parser("train", help="behavior cloning then PPO")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate an agent on generated episodes")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", help="trained checkpoint (.pt)")
    p_eval.add_argument("--agent", choices=("policy", "oracle", "random"),
                        default="policy")
    p_eval.add_argument("--tier", choices=("easy", "medium", "hard", "all"),
                        default="easy")
    p_eval.add_argument("--ablate",
                        choices=("none", "no-update", "visual-only", "object-only"),
                        default="none")
    p_eval.add_argument("--log-attention", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_export = sub.add_parser("export-params", help="dump checkpoint tensors")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--out")
    p_export.set_defaults(func=cmd_export_params)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
