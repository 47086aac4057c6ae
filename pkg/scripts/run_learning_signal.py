"""Full TPC on pointmass_lite clean against the measured random-policy baseline."""

import argparse

import numpy as np

from _common import CONFIGS, write_csv
from tpc.harness.config import load_config
from tpc.harness.experiments import random_policy_return, run_variant


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(CONFIGS / "pointmass_clean.toml"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--baseline-episodes", type=int, default=20)
    p.add_argument("--out", default="results/learning_signal")
    args = p.parse_args()

    cfg = load_config(args.config)
    baseline, _ = random_policy_return(cfg.env, args.baseline_episodes, seed=0,
                                       episode_length=cfg.train.eval_episode_length)
    print(f"random policy: {baseline:.1f} per {cfg.train.eval_episode_length} env steps")
    rows = []
    for seed in args.seeds:
        r = run_variant(cfg, "full_tpc", seed, run_dir=f"{args.out}/seed{seed}")
        print(f"seed {seed}: eval return {r.final_return:.1f}, {r.seconds / 60:.1f} min")
        rows.append({"seed": seed, "eval_return": r.final_return, "env_steps": r.env_steps,
                     "random_baseline": baseline, "seconds": r.seconds})
    write_csv(f"{args.out}/learning_signal.csv", rows)
    median = float(np.median([r["eval_return"] for r in rows]))
    print(f"median {median:.1f}, target {3 * baseline:.1f}")


if __name__ == "__main__":
    main()
