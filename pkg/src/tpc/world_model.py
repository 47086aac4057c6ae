"""Encoder, recurrent state-space dynamics, reward head and the contrastive objectives.

Shapes follow batch-major convention: ``encoded`` is ``(B, T, D_s)``,
``actions`` passed to the dynamics are ``(B, T-1, D_a)`` where
``actions[:, t]`` moves the model from step ``t`` to ``t + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ShapeError, Tensor, no_grad
from .nn import MLP, Dense, GRUCell, Module


@dataclass
class WorldModelConfig:
    obs_shape: tuple = (1, 16, 16)
    action_dim: int = 1
    latent_dim: int = 10
    hidden_dim: int = 40
    encoder_units: tuple = (128, 128)
    head_units: int = 64
    min_log_std: float = -5.0
    max_log_std: float = 2.0
    # pixel jitter for the second view in static predictive coding
    spc_jitter: float = 0.01

    @classmethod
    def paper_scale(cls, **kw):
        return cls(latent_dim=30, hidden_dim=200, **kw)


@dataclass
class LossWeights:
    lambda1: float = 1.0  # temporal predictive coding
    lambda2: float = 0.1  # consistency
    lambda3: float = 1.0  # static predictive coding
    lambda4: float = 1.0  # reward likelihood
    spc_sigma: float = 0.2
    tpc_noise: float = 0.2

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.spc_sigma <= 0 or self.tpc_noise <= 0:
            raise ValueError("spc_sigma and tpc_noise must be positive")


@dataclass
class DiagGaussian:
    mean: Tensor
    log_std: Tensor

    @property
    def std(self):
        return ad.exp(self.log_std)

    def log_prob(self, x):
        return ad.gaussian_log_prob(ad.as_tensor(x), self.mean, self.log_std)

    def sample(self, rng):
        eps = rng.standard_normal(self.mean.shape)
        return self.mean + self.std * eps


# -- contrastive estimator core ---------------------------------------------

def infonce(scores):
    """InfoNCE bound from a ``(..., K, K)`` critic matrix with positives on the diagonal.

    Row ``i`` contributes ``S[i, i] - logsumexp_j S[i, j] + ln K``; rows are
    averaged, so the result never exceeds ``ln K``.
    """
    scores = ad.as_tensor(scores)
    k = scores.shape[-1]
    if scores.ndim < 2 or scores.shape[-2] != k:
        raise ShapeError(f"infonce needs square score matrices, got {scores.shape}")
    diag = ad.sum_(scores * np.eye(k), axis=-1)
    per_row = diag - ad.logsumexp(scores, axis=-1)
    return ad.mean(per_row, axis=-1) + math.log(k)


def pairwise_log_density(x, mean, log_std):
    """``out[..., i, j] = log N(x_i | mean_j, diag(exp(log_std_j))^2)``."""
    x, mean, log_std = ad.as_tensor(x), ad.as_tensor(mean), ad.as_tensor(log_std)
    d = x.shape[-1]
    xi = ad.expand_dims(x, -2)
    mj = ad.expand_dims(mean, -3)
    inv = ad.expand_dims(ad.exp(-log_std), -3)
    z = (xi - mj) * inv
    quad = ad.sum_(ad.square(z), axis=-1)
    norm = ad.expand_dims(ad.sum_(log_std, axis=-1), -2)
    return -0.5 * quad - norm - 0.5 * d * ad.LOG_2PI


def static_scores(x, y, sigma):
    """Fixed-variance Gaussian critic, ``-||x_i - y_j||^2 / (2 sigma^2)``."""
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    diff = ad.expand_dims(x, -2) - ad.expand_dims(y, -3)
    return ad.sum_(ad.square(diff), axis=-1) * (-0.5 / sigma**2)


def _time_major(t):
    return ad.transpose(t, (1, 0, 2))


class WorldModel(Module):
    def __init__(self, config: WorldModelConfig, rng, zero_init_encoder=False):
        self.config = config
        c = config
        obs_dim = int(np.prod(c.obs_shape))
        self.encoder = MLP(obs_dim, c.encoder_units, c.latent_dim, rng, zero_init_last=zero_init_encoder)
        self.rnn_in = Dense(c.latent_dim + c.action_dim, c.hidden_dim, rng, act="elu")
        self.cell = GRUCell(c.hidden_dim, c.hidden_dim, rng)
        self.prior_net = MLP(c.hidden_dim, (c.head_units,), 2 * c.latent_dim, rng)
        self.reward_net = MLP(c.latent_dim, (c.head_units,), 1, rng)

    # -- model components -------------------------------------------------

    def encode(self, obs):
        obs = np.asarray(obs.data if isinstance(obs, Tensor) else obs, dtype=float)
        shape = tuple(self.config.obs_shape)
        if obs.shape[-3:] != shape:
            raise ShapeError(f"observation shape {obs.shape[-3:]} does not match configured {shape}")
        flat = obs.reshape(obs.shape[:-3] + (-1,))
        return self.encoder(Tensor(flat))

    def initial_state(self, batch):
        return Tensor(np.zeros((batch, self.config.hidden_dim)))

    def rssm_step(self, h, s, action):
        x = self.rnn_in(ad.concat([ad.as_tensor(s), ad.as_tensor(action)], axis=-1))
        return self.cell(x, ad.as_tensor(h))

    def prior(self, h):
        out = self.prior_net(ad.as_tensor(h))
        d = self.config.latent_dim
        log_std = ad.clip(out[..., d:], self.config.min_log_std, self.config.max_log_std)
        return DiagGaussian(out[..., :d], log_std)

    def reward(self, s):
        return self.reward_net(ad.as_tensor(s))[..., 0]

    def smooth_inputs(self, s, prior_dist, rng):
        """Add noise drawn from the dynamics' own predicted spread (treated as a constant)."""
        std = np.exp(prior_dist.log_std.data)
        return ad.as_tensor(s) + std * rng.standard_normal(std.shape)

    def observe(self, encoded, actions, rng=None, smooth=True):
        """Unroll the dynamics over encoded latents.

        Returns ``(hs, prior)`` with ``hs`` of shape ``(B, T, D_h)`` and the
        prior over every step, ``h_1`` being the zero state.
        """
        encoded, actions = ad.as_tensor(encoded), ad.as_tensor(actions)
        b, t_len, _ = encoded.shape
        if actions.shape[:2] != (b, t_len - 1):
            raise ShapeError(f"actions {actions.shape} do not match encoded {encoded.shape}")
        if smooth and rng is None:
            raise ContractError("smoothing needs an rng")
        h = self.initial_state(b)
        hs = [h]
        for t in range(t_len - 1):
            s_in = encoded[:, t]
            if smooth:
                with no_grad():
                    dist = self.prior(h.data)
                s_in = self.smooth_inputs(s_in, dist, rng)
            h = self.rssm_step(h, s_in, actions[:, t])
            hs.append(h)
        hs = ad.stack(hs, axis=1)
        return hs, self.prior(hs)

    # -- objectives (all maximized) -----------------------------------------

    def tpc_from_prior(self, encoded, prior, noise):
        """Sum over t >= 2 of the batch InfoNCE bound with the prior as critic."""
        x = ad.as_tensor(encoded)[:, 1:] + noise
        scores = pairwise_log_density(
            _time_major(x), _time_major(prior.mean[:, 1:]), _time_major(prior.log_std[:, 1:])
        )
        return ad.sum_(infonce(scores))

    def consistency_from_prior(self, encoded, prior):
        ll = ad.gaussian_log_prob(ad.as_tensor(encoded)[:, 1:], prior.mean[:, 1:], prior.log_std[:, 1:])
        return ad.sum_(ad.mean(ll, axis=0))

    def tpc_loss(self, encoded, actions, rng, noise_std=0.2, smooth=False):
        encoded = ad.as_tensor(encoded)
        if encoded.shape[0] < 2:
            raise ContractError("temporal predictive coding needs batch size >= 2")
        _, prior = self.observe(encoded, actions, rng, smooth=smooth)
        noise = noise_std * rng.standard_normal(encoded[:, 1:].shape)
        return self.tpc_from_prior(encoded, prior, noise)

    def consistency_loss(self, encoded, actions, rng=None, smooth=False):
        _, prior = self.observe(encoded, actions, rng, smooth=smooth)
        return self.consistency_from_prior(encoded, prior)

    def spc_loss(self, encoded, view, sigma=0.2):
        """Static InfoNCE between latents and a second view.

        ``(B, D)`` input gives one bound (at most ``ln B``); ``(B, T, D)``
        input sums the per-step bounds over time, like the temporal term.
        """
        encoded, view = ad.as_tensor(encoded), ad.as_tensor(view)
        if encoded.shape[0] < 2:
            raise ContractError("static predictive coding needs batch size >= 2")
        if encoded.ndim == 3:
            encoded, view = _time_major(encoded), _time_major(view)
        return ad.sum_(infonce(static_scores(encoded, view, sigma)))

    def reward_loss(self, encoded, rewards):
        pred = self.reward(encoded)
        rewards = np.asarray(rewards, dtype=float)
        if pred.shape != rewards.shape:
            raise ShapeError(f"rewards {rewards.shape} do not match predictions {pred.shape}")
        ll = -0.5 * ad.square(pred - rewards) - 0.5 * ad.LOG_2PI
        return ad.sum_(ad.mean(ll, axis=0))

    def total_loss(self, batch, weights: LossWeights, rng, smooth=True, separate_reward=False):
        """Weighted objective from one shared encoding and one unroll.

        ``batch`` holds ``obs (B, T, C, H, W)``, ``actions (B, T, D_a)`` with
        ``actions[:, t]`` the action that led into ``obs[:, t]``, and
        ``rewards (B, T)``. Returns ``(objective, terms, hs, encoded)``.
        """
        obs = np.asarray(batch["obs"], dtype=float)
        actions = np.asarray(batch["actions"], dtype=float)
        if obs.shape[0] < 2:
            raise ContractError("batch size must be >= 2")
        encoded = self.encode(obs)
        hs, prior = self.observe(encoded, actions[:, 1:], rng, smooth=smooth)

        noise = weights.tpc_noise * rng.standard_normal(encoded[:, 1:].shape)
        l_tpc = self.tpc_from_prior(encoded, prior, noise)
        l_cons = self.consistency_from_prior(encoded, prior)
        jitter = obs + self.config.spc_jitter * rng.standard_normal(obs.shape)
        l_spc = self.spc_loss(encoded, self.encode(jitter), weights.spc_sigma)
        reward_in = encoded.detach() if separate_reward else encoded
        l_rew = self.reward_loss(reward_in, batch["rewards"])

        objective = (weights.lambda1 * l_tpc + weights.lambda2 * l_cons
                     + weights.lambda3 * l_spc + weights.lambda4 * l_rew)
        terms = {
            "tpc": l_tpc.item(),
            "consistency": l_cons.item(),
            "spc": l_spc.item(),
            "reward": l_rew.item(),
            "total": objective.item(),
            "latent_std": latent_std(encoded.data),
        }
        return objective, terms, hs, encoded


def latent_std(latents):
    """Per-dimension std over all samples in the batch, averaged over dimensions."""
    flat = np.asarray(latents).reshape(-1, np.shape(latents)[-1])
    return float(flat.std(axis=0).mean())
