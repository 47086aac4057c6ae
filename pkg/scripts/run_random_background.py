"""Probe TPC latents against a pixel-reconstruction encoder on random per-step backgrounds."""

import argparse

from _common import CONFIGS, write_json
from tpc.harness.config import load_config
from tpc.harness.experiments import random_background_probe


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(CONFIGS / "pointmass_random_bg.toml"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoder-steps", type=int, default=2000)
    p.add_argument("--out", default="results/random_background")
    args = p.parse_args()

    res = random_background_probe(load_config(args.config), seed=args.seed, run_dir=f"{args.out}/run",
                                  decoder_steps=args.decoder_steps)
    out = {"tpc": res.tpc.to_dict(), "reconstruction": res.reconstruction.to_dict(),
           "tpc_position_r2": res.tpc_position_r2, "autoencoder_steps": res.autoencoder_steps,
           "eval_returns": res.run.eval_returns}
    write_json(f"{args.out}/probe_comparison.json", out)
    for name, rep in (("tpc", res.tpc), ("reconstruction", res.reconstruction)):
        print(f"{name}: agent MSE {rep.agent_mse:.4f}, background MSE {rep.background_mse:.4f}, "
              f"R2 {rep.r2}")


if __name__ == "__main__":
    main()
