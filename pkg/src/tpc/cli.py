"""Command-line entry points: ``tpc train | eval | probe | ablate``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .envs import PixelEnv
from .harness.config import VARIANTS, ConfigError, TrainConfig, load_config
from .harness.experiments import with_variant
from .harness.metrics import MetricsWriter
from .harness.probes import (
    collect_probe_dataset,
    encoder_fn,
    image_grid,
    run_probes,
    write_pgm,
)
from .harness.runs import RUN_ROOT_ENV, default_out, train_run
from .harness.trainer import Agent, evaluate


def resolve_config(args):
    overrides = list(args.set or [])
    if args.config:
        return load_config(args.config, overrides)
    return TrainConfig.loads("", overrides)


# -- train ------------------------------------------------------------------

def cmd_train(args):
    config = resolve_config(args)
    name = f"{Path(args.config).stem if args.config else 'default'}_seed{args.seed}"
    run_dir = Path(args.out) if args.out else default_out(name)
    _, metrics, returns = train_run(config, args.seed, run_dir, args.set or (), args.config,
                                    args.stop_after_grad_steps)
    print(json.dumps({"run_dir": str(run_dir), "eval_returns": returns}))
    return 1 if metrics.error_emitted else 0


# -- eval ---------------------------------------------------------------------

def env_for(agent_config: TrainConfig, args):
    """The checkpoint's environment, or the ``[env]`` of ``--config``, with ``--set`` applied."""
    if args.config:
        return load_config(args.config, args.set or ()).env
    return TrainConfig.loads(agent_config.dumps(), args.set or ()).env


def _eval_env_config(agent_config: TrainConfig, args):
    env_cfg = env_for(agent_config, args)
    bg = env_cfg.background
    if bg.kind == "frame_dir":
        bg = dataclasses.replace(bg, split="eval")
    return dataclasses.replace(env_cfg, background=bg, episode_length=args.episode_length)


def check_dimensions(agent: Agent, env: PixelEnv):
    model_shape = tuple(agent.world_model.config.obs_shape)
    if tuple(env.obs_shape) != model_shape or env.action_dim != agent.action_dim:
        raise ConfigError(
            f"checkpoint expects obs {model_shape} and action_dim {agent.action_dim}, "
            f"environment provides obs {tuple(env.obs_shape)} and action_dim {env.action_dim}"
        )


def cmd_eval(args):
    agent, _ = Agent.load(args.checkpoint)
    env = PixelEnv(_eval_env_config(agent.config, args))
    check_dimensions(agent, env)
    seeds = np.random.default_rng(args.seed).integers(2**31, size=args.episodes)
    returns = evaluate(agent, env, args.episodes, seeds)
    report = {
        "checkpoint": str(args.checkpoint),
        "episode_length": env.config.episode_length,
        "returns": [float(r) for r in returns],
        "mean": float(np.mean(returns)),
        "std": float(np.std(returns)),
    }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(report))
    return 0


# -- probe ----------------------------------------------------------------------

def cmd_probe(args):
    agent, _ = Agent.load(args.checkpoint)
    env_cfg = dataclasses.replace(env_for(agent.config, args), episode_length=args.episode_length)
    check_dimensions(agent, PixelEnv(env_cfg))
    dataset = collect_probe_dataset(env_cfg, args.episodes, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    report, rec = run_probes(encoder_fn(agent.world_model), dataset, rng, steps=args.decoder_steps)
    out = Path(args.out) if args.out else Path(args.checkpoint).resolve().parent.parent / "probe"
    out.mkdir(parents=True, exist_ok=True)
    (out / "probe_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    grid = image_grid(rec.truth, rec.recon)
    write_pgm(out / "probe_grid.pgm", grid, scale=4)
    with MetricsWriter(out) as metrics:
        metrics.write(0, "probe", agent_mse=report.agent_mse, background_mse=report.background_mse,
                      probe_r2_mean=report.probe_r2_mean, latent_std=report.latent_std)
    print(report.to_json())
    return 0


# -- ablate ---------------------------------------------------------------------

def cmd_ablate(args):
    base = resolve_config(args)
    out = Path(args.out) if args.out else default_out(f"ablate_{Path(args.config).stem if args.config else 'default'}")
    out.mkdir(parents=True, exist_ok=True)
    variants = list(args.variants)
    if args.no_smoothing:
        variants.append("no_smoothing")
    rows, traj, failed = [], [], False
    for variant in variants:
        for seed in args.seeds:
            cfg = with_variant(base, variant)
            run_dir = out / f"{variant}_seed{seed}"
            trainer, metrics, returns = train_run(cfg, seed, run_dir, args.set or (), args.config,
                                                  args.stop_after_grad_steps)
            failed |= metrics.error_emitted
            train_recs = [r for r in trainer.history if r["kind"] == "train"]
            rows.append({
                "variant": variant,
                "seed": seed,
                "final_return": float(np.mean(returns)) if returns else float("nan"),
                "min_latent_std": min((r["latent_std_min"] for r in train_recs), default=float("nan")),
                "grad_steps": trainer.agent.grad_steps,
            })
            traj += [{"variant": variant, "seed": seed, "grad_steps": r["grad_steps"],
                      "latent_std": r["latent_std"], "latent_std_min": r["latent_std_min"]}
                     for r in train_recs]
    _write_rows(out / "ablation.csv", rows)
    _write_rows(out / "latent_std.csv", traj)
    print(json.dumps(rows))
    return 1 if failed else 0


def _write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# -- entry point ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="tpc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="TOML run configuration"):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path override, repeatable")
        sp.add_argument("--out", help=f"output directory (default under ${RUN_ROOT_ENV} or ./runs)")

    sp = sub.add_parser("train", help="train one agent")
    common(sp)
    sp.add_argument("--stop-after-grad-steps", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    sp.add_argument("checkpoint")
    common(sp, "config whose [env] section replaces the checkpoint's")
    sp.add_argument("--episodes", type=int, default=3)
    sp.add_argument("--episode-length", type=int, default=1000)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("probe", help="reconstruction and linear probes on a checkpoint's encoder")
    sp.add_argument("checkpoint")
    common(sp, "config whose [env] section defines the probe dataset")
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--episode-length", type=int, default=500)
    sp.add_argument("--decoder-steps", type=int, default=2000)
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("ablate", help="train every variant over shared seeds")
    common(sp)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sp.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    sp.add_argument("--no-smoothing", action="store_true", help="also run the full objective without smoothing")
    sp.add_argument("--stop-after-grad-steps", type=int)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"tpc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
