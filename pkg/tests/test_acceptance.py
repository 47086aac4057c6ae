"""Acceptance criteria 1-9, each printing one PASS/FAIL line.

Criteria 5-8 train agents and take most of an hour on one core. Their runs
are shared through session fixtures so each agent is trained once.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import CRITERIA_LINES
from oracles import TINY, grad_check, lambda_return_double_sum, tiny_batch, tiny_behavior, tiny_world_model
from tpc.behavior import actor_loss, imagine, lambda_return, value_loss
from tpc.harness.config import load_config
from tpc.harness.experiments import (
    mi_oracle_sweep,
    random_background_probe,
    random_policy_return,
    run_variant,
)
from tpc.world_model import LossWeights, infonce, pairwise_log_density, static_scores

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = (0, 1, 2)


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    CRITERIA_LINES.append(line)
    return ok


# -- 1. gradient suite ------------------------------------------------------------

def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    errors = {}
    wm = tiny_world_model()
    batch = tiny_batch(wm)
    terms = {"tpc": LossWeights(1, 0, 0, 0), "consistency": LossWeights(0, 1, 0, 0),
             "spc": LossWeights(0, 0, 1, 0), "reward": LossWeights(0, 0, 0, 1)}
    for name, w in terms.items():
        def f(w=w):
            return wm.total_loss(batch, w, np.random.default_rng(7), smooth=False)[0]

        errors[name] = grad_check(f, wm.parameters())

    wm, cfg, policy, value, target, h0, s0 = tiny_behavior(1)

    def actor():
        traj = imagine(wm, policy, target, h0, s0, cfg.horizon, np.random.default_rng(5))
        return actor_loss(traj, cfg.gamma, cfg.lambda_)[0]

    errors["actor"] = grad_check(actor, policy.parameters())
    traj = imagine(wm, policy, target, h0, s0, cfg.horizon, np.random.default_rng(5))
    targets = actor_loss(traj, cfg.gamma, cfg.lambda_)[1].data
    errors["value"] = grad_check(lambda: value_loss(value, traj, targets), value.parameters())

    seconds = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst < 1e-4 and seconds < 120
    detail = ", ".join(f"{k}={v:.1e}" for k, v in errors.items())
    assert report(1, ok, f"max rel err {worst:.2e} ({detail}); {seconds:.1f} s"), errors


# -- 2. InfoNCE ceiling -----------------------------------------------------------

def test_criterion_2_infonce_ceiling():
    rng = np.random.default_rng(0)
    b, t = TINY["batch"], TINY["time"]
    ln_b = math.log(b)
    worst_tpc = worst_spc = -np.inf
    for i in range(1000):
        wm = tiny_world_model(i)
        scale = math.exp(rng.uniform(-2, 2))
        for p in wm.parameters():
            p.data *= scale
        batch = tiny_batch(wm, 10_000 + i)
        enc = wm.encode(batch["obs"])
        _, prior = wm.observe(enc, batch["actions"][:, 1:], rng)
        x = enc.data[:, 1:] + 0.2 * rng.standard_normal(enc.data[:, 1:].shape)
        for k in range(t - 1):
            scores = pairwise_log_density(x[:, k], prior.mean.data[:, k + 1], prior.log_std.data[:, k + 1])
            worst_tpc = max(worst_tpc, infonce(scores).item())
        view = wm.encode(batch["obs"] + 0.01 * rng.standard_normal(batch["obs"].shape)).data
        for k in range(t):
            worst_spc = max(worst_spc, infonce(static_scores(enc.data[:, k], view[:, k], 0.2)).item())
    ok = worst_tpc <= ln_b + 1e-9 and worst_spc <= ln_b + 1e-9
    assert report(2, ok, f"max per-step tpc {worst_tpc:.6f}, spc {worst_spc:.6f}, ln B {ln_b:.6f}")


# -- 3. lambda-return oracle --------------------------------------------------------

def test_criterion_3_lambda_return_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    limits_exact = True
    for _ in range(1000):
        h = int(rng.integers(1, 11))
        r, v = rng.standard_normal(h), rng.standard_normal(h + 1)
        gamma, lam = rng.uniform(0, 1, 2)
        worst = max(worst, float(np.max(np.abs(lambda_return(r, v, gamma, lam)
                                                - lambda_return_double_sum(r, v, gamma, lam)))))
        # lambda = 0: one-step bootstrap
        limits_exact &= np.array_equal(lambda_return(r, v, gamma, 0.0), r + gamma * v[1:])
        # lambda = 1: discounted rewards to the horizon plus the discounted horizon value, nested form
        mc = np.empty(h)
        acc = v[h]
        for tau in range(h - 1, -1, -1):
            acc = r[tau] + gamma * acc
            mc[tau] = acc
        limits_exact &= np.array_equal(lambda_return(r, v, gamma, 1.0), mc)
    ok = worst < 1e-10 and limits_exact
    assert report(3, ok, f"max abs err {worst:.2e}; limits exact: {bool(limits_exact)}")


# -- 4. mutual-information oracle -----------------------------------------------------

def test_criterion_4_mi_oracle():
    start = time.perf_counter()
    results = mi_oracle_sweep(a=0.9, batch_sizes=(4, 16, 64), seed=0)
    seconds = time.perf_counter() - start
    ok = seconds < 60
    parts = []
    for r in results:
        ok &= r.bound_ok
        close = r.relative_error <= 0.10
        if math.log(r.batch_size) >= 2 * r.closed_form_mi:
            ok &= close
        parts.append(f"B={r.batch_size} est {r.estimate:.4f}±{r.stderr:.4f} rel {r.relative_error:.3f}")
    mi = results[0].closed_form_mi
    assert report(4, ok, f"MI {mi:.4f}; " + "; ".join(parts) + f"; {seconds:.1f} s")


# -- shared training runs -------------------------------------------------------------

@pytest.fixture(scope="session")
def pendulum_runs():
    cfg = load_config(CONFIGS / "pendulum_ablation.toml")
    return {(variant, seed): run_variant(cfg, variant, seed, stop_after_grad_steps=2000)
            for variant in ("full_tpc", "unstable_tpc", "no_smoothing") for seed in SEEDS}


# -- 5. collapse ablation ----------------------------------------------------------------

def test_criterion_5_collapse_ablation(pendulum_runs):
    full = [pendulum_runs["full_tpc", s] for s in SEEDS]
    unstable = [pendulum_runs["unstable_tpc", s] for s in SEEDS]
    seconds = sum(r.seconds for r in full + unstable)
    collapsed = all(r.min_latent_std < 0.01 for r in unstable)
    expanded = all(r.min_latent_std > 0.05 for r in full)
    steps_ok = all(r.grad_steps == 2000 for r in full + unstable)
    ok = collapsed and expanded and steps_ok and seconds < 20 * 60
    detail = (f"min latent std unstable_tpc {[round(r.min_latent_std, 4) for r in unstable]}, "
              f"full_tpc {[round(r.min_latent_std, 4) for r in full]}; {seconds / 60:.1f} min")
    assert report(5, ok, detail)


# -- 6. learning signal -----------------------------------------------------------------

def test_criterion_6_learning_signal():
    cfg = load_config(CONFIGS / "pointmass_clean.toml")
    baseline, _ = random_policy_return(cfg.env, episodes=20, seed=0, episode_length=cfg.train.eval_episode_length)
    runs = [run_variant(cfg, "full_tpc", seed) for seed in SEEDS]
    median = float(np.median([r.final_return for r in runs]))
    slowest = max(r.seconds for r in runs)
    ok = (median >= 3 * baseline and slowest < 30 * 60
          and all(r.env_steps <= cfg.train.total_env_steps for r in runs))
    detail = (f"median eval return {median:.1f} vs 3x random {3 * baseline:.1f} "
              f"(returns {[round(r.final_return, 1) for r in runs]}); slowest seed {slowest / 60:.1f} min")
    assert report(6, ok, detail)


# -- 7. random-background robustness ------------------------------------------------------

def test_criterion_7_random_background(tmp_path):
    cfg = load_config(CONFIGS / "pointmass_random_bg.toml")
    res = random_background_probe(cfg, seed=0, run_dir=tmp_path / "run")
    tpc, ae = res.tpc, res.reconstruction
    r2_ok = res.tpc_position_r2 >= 0.8
    tpc_order = tpc.agent_mse < tpc.background_mse
    ae_fails = not ae.agent_mse < ae.background_mse
    ok = r2_ok and tpc_order and ae_fails
    detail = (f"tpc position R2 {res.tpc_position_r2:.3f}; tpc agent/bg MSE {tpc.agent_mse:.4f}/"
              f"{tpc.background_mse:.4f}; reconstruction agent/bg MSE {ae.agent_mse:.4f}/{ae.background_mse:.4f}")
    assert report(7, ok, detail)


# -- 8. smoothing ablation ------------------------------------------------------------

def test_criterion_8_smoothing_ablation(pendulum_runs):
    full = float(np.median([pendulum_runs["full_tpc", s].final_return for s in SEEDS]))
    plain = float(np.median([pendulum_runs["no_smoothing", s].final_return for s in SEEDS]))
    ok = plain < full
    assert report(8, ok, f"median final return no_smoothing {plain:.1f} vs full_tpc {full:.1f}")


# -- 9. determinism -------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    from oracles import TINY_RUN_TOML
    from tpc.cli import main

    config = tmp_path / "tiny.toml"
    config.write_text(TINY_RUN_TOML)
    codes = [main(["train", "--config", str(config), "--seed", "3", "--out", str(tmp_path / name)])
             for name in ("a", "b")]
    a, b = ((tmp_path / name / "metrics.csv").read_bytes() for name in ("a", "b"))
    ok = codes == [0, 0] and a == b and len(a) > 0
    assert report(9, ok, f"exit codes {codes}; metrics.csv {len(a)} bytes, identical: {a == b}")
