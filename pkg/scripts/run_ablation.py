"""Collapse and smoothing ablations on pendulum_lite: full_tpc, unstable_tpc and no_smoothing."""

import argparse

import numpy as np

from _common import CONFIGS, write_csv
from tpc.harness.config import load_config
from tpc.harness.experiments import run_variant


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(CONFIGS / "pendulum_ablation.toml"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--variants", nargs="+", default=["full_tpc", "unstable_tpc", "no_smoothing"])
    p.add_argument("--grad-steps", type=int, default=2000)
    p.add_argument("--out", default="results/ablation")
    args = p.parse_args()

    cfg = load_config(args.config)
    rows, traj = [], []
    for variant in args.variants:
        for seed in args.seeds:
            r = run_variant(cfg, variant, seed, run_dir=f"{args.out}/{variant}_seed{seed}",
                            stop_after_grad_steps=args.grad_steps)
            print(f"{variant} seed {seed}: min latent std {r.min_latent_std:.4f}, "
                  f"final return {r.final_return:.1f}, {r.seconds / 60:.1f} min")
            rows.append({"variant": variant, "seed": seed, "grad_steps": r.grad_steps,
                         "min_latent_std": r.min_latent_std, "final_return": r.final_return,
                         "seconds": r.seconds})
            traj += [{"variant": variant, "seed": seed, "grad_steps": g, "latent_std": s, "latent_std_min": m}
                     for g, s, m in r.latent_std]
    write_csv(f"{args.out}/ablation.csv", rows)
    write_csv(f"{args.out}/latent_std.csv", traj)
    for variant in args.variants:
        sel = [r for r in rows if r["variant"] == variant]
        print(f"{variant}: median final return {np.median([r['final_return'] for r in sel]):.1f}, "
              f"worst min latent std {min(r['min_latent_std'] for r in sel):.4f}")


if __name__ == "__main__":
    main()
