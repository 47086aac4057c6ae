"""Agent (world model + actor-critic) and the collect/train schedule."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .. import autodiff as ad
from ..autodiff import NonFiniteError, no_grad
from ..behavior import (
    Policy,
    ValueNet,
    actor_loss,
    features,
    imagine,
    update_target,
    value_loss,
)
from ..checkpoint import load_checkpoint, save_checkpoint, section
from ..envs import PixelEnv
from ..optim import Adam
from ..world_model import WorldModel
from .config import TrainConfig
from .replay import SequenceReplayBuffer

log = logging.getLogger(__name__)

ACTION_LIMIT = 1.0 - 1e-6


class Agent:
    def __init__(self, config: TrainConfig, obs_shape, action_dim, rng):
        self.config = config
        with self.precision():
            self._build(config, obs_shape, action_dim, rng)

    def precision(self):
        return ad.precision(self.config.train.precision)

    def _build(self, config, obs_shape, action_dim, rng):
        wm_cfg = dataclasses.replace(config.model, obs_shape=tuple(obs_shape), action_dim=action_dim)
        self.world_model = WorldModel(wm_cfg, rng)
        feat = wm_cfg.hidden_dim + wm_cfg.latent_dim
        self.policy = Policy(feat, action_dim, config.behavior, rng)
        self.value = ValueNet(feat, config.behavior, rng)
        self.target_value = ValueNet(feat, config.behavior, rng)
        self.target_value.load_state_dict(self.value.state_dict())
        t = config.train
        self.wm_opt = Adam(self.world_model.parameters(), t.model_lr, t.clip_norm)
        self.actor_opt = Adam(self.policy.parameters(), t.actor_lr, t.clip_norm)
        self.value_opt = Adam(self.value.parameters(), t.value_lr, t.clip_norm)
        self.grad_steps = 0

    @property
    def action_dim(self):
        return self.world_model.config.action_dim

    # -- acting -------------------------------------------------------------

    def initial_state(self):
        return np.zeros(self.world_model.config.hidden_dim)

    def act(self, obs, h, rng=None, noise_std=0.0):
        """Mode action plus Gaussian noise, and the recurrent state for the next step."""
        wm = self.world_model
        with no_grad(), self.precision():
            s = wm.encode(np.asarray(obs)[None])
            dist = self.policy(features(h[None], s))
            action = dist.mode().data[0]
            if noise_std > 0:
                action = action + noise_std * rng.standard_normal(action.shape)
            action = np.clip(action, -ACTION_LIMIT, ACTION_LIMIT)
            h_next = wm.rssm_step(h[None], s, action[None]).data[0]
        return action, h_next

    # -- learning -----------------------------------------------------------

    def update(self, batch, rng):
        """One world-model step followed by one actor and one value step."""
        with self.precision():
            return self._update(batch, rng)

    def _update(self, batch, rng):
        cfg = self.config
        wm = self.world_model
        wm.zero_grad()
        objective, terms, hs, encoded = wm.total_loss(
            batch, cfg.loss_weights(), rng,
            smooth=not cfg.train.no_smoothing,
            separate_reward=cfg.train.separate_reward,
        )
        (-objective).backward()
        self.wm_opt.step()

        beh = cfg.behavior
        start_h = hs.data.reshape(-1, hs.shape[-1])
        start_s = encoded.data.reshape(-1, encoded.shape[-1])
        if 0 < beh.imagine_starts < len(start_h):
            idx = rng.choice(len(start_h), beh.imagine_starts, replace=False)
            start_h, start_s = start_h[idx], start_s[idx]
        self.policy.zero_grad()
        traj = imagine(wm, self.policy, self.target_value, start_h, start_s, beh.horizon, rng)
        a_loss, returns = actor_loss(traj, beh.gamma, beh.lambda_)
        a_loss.backward()
        self.actor_opt.step()

        self.value.zero_grad()
        v_loss = value_loss(self.value, traj, returns.data)
        v_loss.backward()
        self.value_opt.step()

        self.grad_steps += 1
        update_target(self.value, self.target_value, self.grad_steps, beh.target_every)
        terms.update(
            actor_loss=a_loss.item(),
            value_loss=v_loss.item(),
            mean_v_lambda=float(returns.data[:-1].mean()),
        )
        return terms

    # -- persistence --------------------------------------------------------

    def sections(self):
        return {
            "world_model": self.world_model.state_dict(),
            "policy": self.policy.state_dict(),
            "value": self.value.state_dict(),
            "target_value": self.target_value.state_dict(),
            "optim/world_model": self.wm_opt.state_arrays(),
            "optim/actor": self.actor_opt.state_arrays(),
            "optim/value": self.value_opt.state_arrays(),
        }

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta.update(
            config=self.config.to_dict(),
            obs_shape=list(self.world_model.config.obs_shape),
            action_dim=self.action_dim,
            grad_steps=self.grad_steps,
        )
        return save_checkpoint(path, self.sections(), meta)

    @classmethod
    def load(cls, path):
        flat, meta = load_checkpoint(path)
        config = TrainConfig.from_dict(meta["config"])
        agent = cls(config, tuple(meta["obs_shape"]), int(meta["action_dim"]), np.random.default_rng(0))
        with agent.precision():
            agent._load_sections(flat)
        agent.grad_steps = int(meta.get("grad_steps", 0))
        return agent, meta

    def _load_sections(self, flat):
        agent = self
        agent.world_model.load_state_dict(section(flat, "world_model"))
        agent.policy.load_state_dict(section(flat, "policy"))
        agent.value.load_state_dict(section(flat, "value"))
        agent.target_value.load_state_dict(section(flat, "target_value"))
        agent.wm_opt.load_state_arrays(section(flat, "optim/world_model"))
        agent.actor_opt.load_state_arrays(section(flat, "optim/actor"))
        agent.value_opt.load_state_arrays(section(flat, "optim/value"))


# -- episodes -----------------------------------------------------------------

def run_episode(env: PixelEnv, seed, policy_fn):
    """Roll one episode; ``policy_fn(obs) -> action``. Returns the stored episode and its return."""
    obs = env.reset(seed)
    zero = np.zeros(env.action_dim)
    ep = {"obs": [obs], "actions": [zero], "rewards": [env.state_reward()],
          "states": [env.state.physics.copy()]}
    total = 0.0
    while True:
        action = policy_fn(obs)
        res = env.step(action)
        obs = res.obs
        total += res.reward
        ep["obs"].append(obs)
        ep["actions"].append(np.asarray(action, dtype=float))
        ep["rewards"].append(res.reward)
        ep["states"].append(res.info["state"])
        if res.done:
            break
    return {k: np.stack(v) if k != "rewards" else np.asarray(v) for k, v in ep.items()}, total


def random_policy(action_dim, rng):
    def act(_obs):
        return rng.uniform(-ACTION_LIMIT, ACTION_LIMIT, size=action_dim)

    return act


def agent_policy(agent: Agent, rng=None, noise_std=0.0):
    h = [agent.initial_state()]

    def act(obs):
        action, h[0] = agent.act(obs, h[0], rng, noise_std)
        return action

    return act


def evaluate(agent, env, episodes, seeds):
    """Deterministic (mode-action) returns for ``episodes`` episodes."""
    returns = []
    for i in range(episodes):
        _, ret = run_episode(env, int(seeds[i]), agent_policy(agent))
        returns.append(ret)
    return returns


class Trainer:
    """Seed episodes, then alternate ``G`` gradient updates with one collected episode."""

    def __init__(self, config: TrainConfig, seed=0, metrics=None, checkpoint_dir=None):
        self.config = config
        self.seed = seed
        init_ss, train_ss, env_ss = np.random.SeedSequence(seed).spawn(3)
        self.rng = np.random.default_rng(train_ss)
        self.env_rng = np.random.default_rng(env_ss)
        self.env = PixelEnv(config.env)
        self.agent = Agent(config, self.env.obs_shape, self.env.action_dim, np.random.default_rng(init_ss))
        self.buffer = SequenceReplayBuffer()
        self.metrics = metrics
        self.checkpoint_dir = checkpoint_dir
        self.env_steps = 0
        self.iteration = 0
        self.latent_std_min = float("inf")
        self.history = []

    def _record(self, kind, **fields):
        rec = {"step": self.env_steps, "kind": kind, **fields}
        self.history.append(rec)
        if self.metrics is not None:
            self.metrics.write(self.env_steps, kind, **fields)
        return rec

    def _episode_seed(self):
        return int(self.env_rng.integers(2**31))

    def seed_dataset(self, episodes=None):
        n = self.config.train.seed_episodes if episodes is None else episodes
        if n < 1:
            raise ValueError("need at least one seed episode")
        for _ in range(n):
            ep, ret = run_episode(self.env, self._episode_seed(), random_policy(self.env.action_dim, self.rng))
            self._store(ep, ret)
        return self.buffer

    def collect_episode(self, noise_std=None):
        noise = self.config.train.exploration_noise if noise_std is None else noise_std
        ep, ret = run_episode(self.env, self._episode_seed(), agent_policy(self.agent, self.rng, noise))
        self._store(ep, ret)
        return ret

    def _store(self, ep, ret):
        self.buffer.add(ep)
        self.env_steps += self.config.env.episode_length
        self._record("episode", episode_return=ret)

    def train_iteration(self, updates=None):
        t = self.config.train
        g = t.updates_per_iteration if updates is None else updates
        if len(self.buffer) == 0:
            raise ValueError("replay buffer is empty")
        rows = []
        try:
            for _ in range(g):
                batch = self.buffer.sample(t.batch_size, t.chunk_length, self.rng)
                terms = self.agent.update(batch, self.rng)
                if not np.isfinite(terms["total"]):
                    raise NonFiniteError("non-finite world-model objective")
                self.latent_std_min = min(self.latent_std_min, terms["latent_std"])
                rows.append(terms)
        except (NonFiniteError, ad.DomainError) as exc:
            self._record("error", grad_steps=self.agent.grad_steps, message=f"iteration aborted: {exc}")
            raise
        self.iteration += 1
        summary = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
        summary["latent_std_min"] = float(min(r["latent_std"] for r in rows))
        self._record("train", grad_steps=self.agent.grad_steps, **summary)
        return summary

    def evaluate(self, episodes=None):
        t = self.config.train
        n = t.eval_episodes if episodes is None else episodes
        eval_env = PixelEnv(dataclasses.replace(self.config.env, episode_length=t.eval_episode_length))
        seeds = self.env_rng.integers(2**31, size=n)
        returns = evaluate(self.agent, eval_env, n, seeds)
        self._record("eval", episode_return=float(np.mean(returns)))
        return returns

    def save_checkpoint(self):
        if self.checkpoint_dir is None:
            return None
        path = f"{self.checkpoint_dir}/iter_{self.iteration:05d}.json"
        self.agent.save(path, {"seed": self.seed, "env_steps": self.env_steps})
        return path

    def run(self, total_env_steps=None, stop_after_grad_steps=None, progress=None):
        t = self.config.train
        total = t.total_env_steps if total_env_steps is None else total_env_steps
        if len(self.buffer) == 0:
            self.seed_dataset()
        while self.env_steps < total:
            self.train_iteration()
            if stop_after_grad_steps is not None and self.agent.grad_steps >= stop_after_grad_steps:
                break
            self.collect_episode()
            if self.checkpoint_dir is not None and t.checkpoint_every and self.iteration % t.checkpoint_every == 0:
                self.save_checkpoint()
            if progress is not None:
                progress(self)
        returns = self.evaluate() if t.eval_episodes else []
        self.save_checkpoint()
        return returns
