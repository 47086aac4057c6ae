"""Latent-imagination actor-critic on top of a trained world model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor, frozen
from .nn import MLP, Module


@dataclass
class BehaviorConfig:
    horizon: int = 15
    gamma: float = 0.99
    lambda_: float = 0.95
    units: tuple = (64, 64)
    mean_scale: float = 5.0
    init_std: float = 5.0
    min_std: float = 1e-4
    target_every: int = 100
    # 0 imagines from every posterior state in the batch; n > 0 uses a random subset of n
    imagine_starts: int = 0


class TanhGaussian:
    """Gaussian pushed through tanh; log-prob carries the Jacobian correction."""

    def __init__(self, mean, std):
        self.mean = mean
        self.std = std

    def rsample(self, rng):
        eps = rng.standard_normal(self.mean.shape)
        u = self.mean + self.std * eps
        return ad.tanh(u), u

    def mode(self):
        return ad.tanh(self.mean)

    def log_prob(self, u):
        """Log-density of ``tanh(u)`` given the pre-squash sample ``u``."""
        u = ad.as_tensor(u)
        z = (u - self.mean) / self.std
        base = -0.5 * ad.square(z) - ad.log(self.std) - 0.5 * ad.LOG_2PI
        # log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
        log_det = 2.0 * (math.log(2.0) - u - ad.softplus(-2.0 * u))
        return ad.sum_(base - log_det, axis=-1)


class Policy(Module):
    def __init__(self, state_dim, action_dim, config: BehaviorConfig, rng, zero_init=False):
        self.config = config
        self.action_dim = action_dim
        self.net = MLP(state_dim, config.units, 2 * action_dim, rng, zero_init_last=zero_init)
        if zero_init:
            for layer in self.net.layers:
                layer.W.data[:] = 0.0
        self._raw_init_std = math.log(math.expm1(config.init_std))

    def __call__(self, feat):
        out = self.net(feat)
        a = self.action_dim
        c = self.config
        mean = c.mean_scale * ad.tanh(out[..., :a] / c.mean_scale)
        std = ad.softplus(out[..., a:] + self._raw_init_std) + c.min_std
        return TanhGaussian(mean, std)


class ValueNet(Module):
    def __init__(self, state_dim, config: BehaviorConfig, rng):
        self.net = MLP(state_dim, config.units, 1, rng)

    def __call__(self, feat):
        return self.net(feat)[..., 0]


def features(h, s):
    return ad.concat([ad.as_tensor(h), ad.as_tensor(s)], axis=-1)


def update_target(value: ValueNet, target: ValueNet, step_count, every):
    """Hard-copy ``value`` into ``target`` when ``step_count % every == 0``."""
    if every < 1:
        raise ValueError("every must be >= 1")
    if step_count % every == 0:
        target.load_state_dict(value.state_dict())
        return True
    return False


def lambda_return(rewards, values, gamma, lam):
    """λ-returns by backward recursion along axis 0.

    ``rewards`` has ``H`` entries and ``values`` ``H + 1``; entry ``τ`` of
    the result mixes the ``k``-step estimates truncated at the horizon.
    Accepts arrays or tensors; returns the same kind stacked on axis 0.
    """
    if not (0.0 <= gamma <= 1.0) or not (0.0 <= lam <= 1.0):
        raise ContractError(f"gamma and lambda must lie in [0, 1], got {gamma}, {lam}")
    is_tensor = isinstance(rewards, Tensor) or isinstance(values, Tensor)
    h = len(rewards)
    if len(values) != h + 1:
        raise ContractError(f"need H + 1 = {h + 1} values, got {len(values)}")
    if not is_tensor:
        rewards = np.asarray(rewards, dtype=float)
        values = np.asarray(values, dtype=float)
        out = np.empty_like(rewards)
        nxt = values[h]
        for tau in range(h - 1, -1, -1):
            nxt = rewards[tau] + gamma * ((1.0 - lam) * values[tau + 1] + lam * nxt)
            out[tau] = nxt
        return out
    rewards, values = ad.as_tensor(rewards), ad.as_tensor(values)
    nxt = values[h]
    outs = [None] * h
    for tau in range(h - 1, -1, -1):
        nxt = rewards[tau] + gamma * ((1.0 - lam) * values[tau + 1] + lam * nxt)
        outs[tau] = nxt
    return ad.stack(outs, axis=0)


@dataclass
class ImaginedTrajectory:
    hs: list
    ss: list
    actions: list
    rewards: Tensor  # (H, N)
    values: Tensor  # (H + 1, N), from the target network

    @property
    def horizon(self):
        return len(self.actions)


def imagine(world_model, policy, target_value, start_h, start_s, horizon, rng, deterministic=False):
    """Roll the learned dynamics and policy forward ``horizon`` steps.

    Start states are detached. World-model and target parameters are held
    constant, so gradients reach only the policy.
    """
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    h = Tensor(np.asarray(getattr(start_h, "data", start_h), dtype=float))
    s = Tensor(np.asarray(getattr(start_s, "data", start_s), dtype=float))
    hs, ss, acts = [h], [s], []
    with frozen(world_model.parameters() + target_value.parameters()):
        for _ in range(horizon):
            dist = policy(features(h, s))
            a = dist.mode() if deterministic else dist.rsample(rng)[0]
            h = world_model.rssm_step(h, s, a)
            prior = world_model.prior(h)
            s = prior.mean if deterministic else prior.sample(rng)
            hs.append(h)
            ss.append(s)
            acts.append(a)
        feat = features(ad.stack(hs, axis=0), ad.stack(ss, axis=0))
        rewards = world_model.reward(ad.stack(ss[:-1], axis=0))
        values = target_value(feat)
    return ImaginedTrajectory(hs, ss, acts, rewards, values)


def v_lambda_path(traj: ImaginedTrajectory, gamma, lam):
    """λ-returns for every state τ = 0..H; the horizon state's entry is its bootstrap value."""
    ret = lambda_return(traj.rewards, traj.values, gamma, lam)
    return ad.concat([ret, traj.values[traj.horizon:]], axis=0)


def actor_loss(traj: ImaginedTrajectory, gamma, lam):
    """Negative imagined return summed over τ = t..t+H, averaged over start states."""
    returns = v_lambda_path(traj, gamma, lam)
    return -ad.mean(ad.sum_(returns, axis=0)), returns


def value_loss(value_net: ValueNet, traj: ImaginedTrajectory, targets):
    """Mean squared regression of v(s_τ) onto detached λ-return targets."""
    feat = features(ad.stack(traj.hs, axis=0).detach(), ad.stack(traj.ss, axis=0).detach())
    pred = value_net(feat)
    target = np.asarray(getattr(targets, "data", targets), dtype=float)
    return ad.mean(0.5 * ad.square(pred - target))
