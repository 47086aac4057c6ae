"""Analysis probes: reconstruction decoder, linear state probe, collapse metric, MI oracle.

Probes only read encoder outputs. Latents are computed under ``no_grad`` and
handed to freshly initialized probe networks, so nothing a probe does can
reach the trained parameters.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor, no_grad
from ..envs import EnvConfig, PixelEnv
from ..nn import MLP, Module
from ..optim import Adam
from ..world_model import infonce, latent_std, pairwise_log_density

RIDGE = 1e-6
DECODER_STEPS = 2000
DECODER_UNITS = (128, 128)


@dataclass
class ProbeDataset:
    """Frames with ground-truth state and the exact sprite mask of every frame."""

    obs: np.ndarray  # (N, C, H, W)
    states: np.ndarray  # (N, k)
    masks: np.ndarray  # (N, H, W) bool, agent and goal sprites
    episode: np.ndarray  # (N,) episode id, used for the held-out split
    state_names: tuple
    angle_dims: tuple = ()

    def __len__(self):
        return len(self.obs)

    def split(self, holdout=0.2):
        """Train/held-out split by whole episodes (the last ``holdout`` fraction)."""
        ids = np.unique(self.episode)
        n_hold = max(1, int(round(holdout * len(ids))))
        if len(ids) < 2:
            raise ValueError("need at least two episodes for a held-out split")
        held = np.isin(self.episode, ids[-n_hold:])
        return ~held, held


def collect_probe_dataset(env_config: EnvConfig, episodes, seed=0, policy_fn=None, frame_stride=1):
    """Roll ``episodes`` episodes (uniform random actions unless ``policy_fn``) and keep every frame.

    ``policy_fn(obs, rng) -> action`` may carry its own state.
    """
    env = PixelEnv(env_config)
    rng = np.random.default_rng(seed)
    obs, states, masks, ep_ids = [], [], [], []
    for ep in range(episodes):
        o = env.reset(int(rng.integers(2**31)))
        t = 0
        while True:
            if t % frame_stride == 0:
                obs.append(o)
                states.append(env.state.physics.copy())
                masks.append(env.foreground_mask())
                ep_ids.append(ep)
            if policy_fn is None:
                action = rng.uniform(-1.0, 1.0, size=env.action_dim)
            else:
                action = policy_fn(o, rng)
            res = env.step(action)
            o = res.obs
            t += 1
            if res.done:
                break
    return ProbeDataset(
        obs=np.asarray(obs, dtype=np.float32),
        states=np.asarray(states),
        masks=np.asarray(masks, dtype=bool),
        episode=np.asarray(ep_ids),
        state_names=tuple(env.task.state_names),
        angle_dims=tuple(env.task.angle_dims),
    )


def encoder_fn(world_model, chunk=1024):
    """Wrap a world model's encoder as a numpy ``obs -> latents`` function."""
    dtype = world_model.parameters()[0].data.dtype

    def encode(obs):
        out = []
        with no_grad(), ad.precision(dtype):
            for i in range(0, len(obs), chunk):
                out.append(world_model.encode(obs[i:i + chunk]).data)
        return np.concatenate(out).astype(float)

    return encode


def _latents(encoder, dataset):
    z = np.asarray(encoder(dataset.obs), dtype=float)
    if z.ndim != 2 or len(z) != len(dataset):
        raise ValueError(f"encoder must return (N, D) latents, got {z.shape}")
    return z


# -- linear probe ---------------------------------------------------------

def state_targets(states, angle_dims=(), names=None):
    """Angles become (sin, cos) pairs; other coordinates pass through."""
    states = np.asarray(states, dtype=float)
    cols, labels = [], []
    names = names or tuple(f"s{i}" for i in range(states.shape[1]))
    for i in range(states.shape[1]):
        if i in angle_dims:
            cols += [np.sin(states[:, i]), np.cos(states[:, i])]
            labels += [f"sin_{names[i]}", f"cos_{names[i]}"]
        else:
            cols.append(states[:, i])
            labels.append(names[i])
    return np.stack(cols, axis=1), tuple(labels)


@dataclass
class LinearFit:
    coef: np.ndarray
    x_mean: np.ndarray
    y_mean: np.ndarray
    ridge: bool

    def predict(self, x):
        return (np.asarray(x, dtype=float) - self.x_mean) @ self.coef + self.y_mean


def fit_linear(x, y, ridge=RIDGE):
    """Least squares on centered data; a rank-deficient design falls back to ridge."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - xm, y - ym
    rank = np.linalg.matrix_rank(xc) if xc.size else 0
    if rank < x.shape[1]:
        gram = xc.T @ xc + ridge * np.eye(x.shape[1])
        coef = np.linalg.solve(gram, xc.T @ yc)
        return LinearFit(coef, xm, ym, True)
    coef, *_ = np.linalg.lstsq(xc, yc, rcond=None)
    return LinearFit(coef, xm, ym, False)


def r2_scores(y_true, y_pred, baseline):
    """Per-column ``1 - SSE / SST`` with SST measured around ``baseline`` (the training mean)."""
    y_true = np.asarray(y_true, dtype=float)
    sse = ((y_true - y_pred) ** 2).sum(axis=0)
    sst = ((y_true - baseline) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - sse / sst
    # a coordinate that never varies carries nothing to explain
    return np.where(sst > 0, r2, 0.0)


def probe_linear_latents(latents, dataset: ProbeDataset, holdout=0.2):
    """Held-out R² for each (featurized) state coordinate, plus whether ridge was needed."""
    train, test = dataset.split(holdout)
    y, labels = state_targets(dataset.states, dataset.angle_dims, dataset.state_names)
    fit = fit_linear(latents[train], y[train])
    r2 = r2_scores(y[test], fit.predict(latents[test]), fit.y_mean)
    return dict(zip(labels, map(float, r2))), fit.ridge


def probe_linear(encoder, dataset: ProbeDataset, holdout=0.2):
    return probe_linear_latents(_latents(encoder, dataset), dataset, holdout)


# -- reconstruction probe -------------------------------------------------

class Decoder(Module):
    def __init__(self, latent_dim, obs_shape, rng, units=DECODER_UNITS):
        self.obs_shape = tuple(obs_shape)
        self.net = MLP(latent_dim, units, int(np.prod(obs_shape)), rng)

    def __call__(self, z):
        return self.net(z)


def train_decoder(latents, targets, rng, steps=DECODER_STEPS, batch_size=64, lr=1e-3, units=DECODER_UNITS):
    """Fit ``latents -> flattened pixels`` by squared error; returns the decoder."""
    latents = np.asarray(latents, dtype=float)
    flat = np.asarray(targets, dtype=float).reshape(len(targets), -1)
    dec = Decoder(latents.shape[1], (flat.shape[1],), rng, units)
    opt = Adam(dec.parameters(), lr)
    for _ in range(steps):
        idx = rng.integers(len(latents), size=batch_size)
        opt.zero_grad()
        err = dec(Tensor(latents[idx])) - flat[idx]
        ad.mean(ad.square(err)).backward()
        opt.step()
    return dec


def region_errors(recon, obs, masks):
    """Mean squared error inside the sprite mask and on its complement."""
    sq = (np.asarray(recon).reshape(obs.shape) - obs) ** 2
    sq = sq.reshape(len(obs), -1)
    m = np.asarray(masks).reshape(len(obs), -1)
    agent = float(sq[m].mean()) if m.any() else float("nan")
    background = float(sq[~m].mean()) if (~m).any() else float("nan")
    return agent, background


@dataclass
class ReconstructionResult:
    agent_mse: float
    background_mse: float
    truth: np.ndarray  # held-out frames used for the image grid
    recon: np.ndarray


def probe_reconstruction_latents(latents, dataset: ProbeDataset, rng, steps=DECODER_STEPS, holdout=0.2,
                                 n_show=8):
    train, test = dataset.split(holdout)
    with ad.precision(np.float32):
        dec = train_decoder(latents[train], dataset.obs[train], rng, steps)
        with no_grad():
            recon = dec(Tensor(latents[test])).data.astype(float)
    obs = dataset.obs[test].astype(float)
    agent, background = region_errors(recon, obs, dataset.masks[test])
    show = np.linspace(0, len(obs) - 1, min(n_show, len(obs))).astype(int)
    return ReconstructionResult(agent, background, obs[show], recon.reshape(obs.shape)[show])


def probe_reconstruction(encoder, dataset: ProbeDataset, rng, steps=DECODER_STEPS, holdout=0.2):
    return probe_reconstruction_latents(_latents(encoder, dataset), dataset, rng, steps, holdout)


# -- combined report ------------------------------------------------------

@dataclass
class ProbeReport:
    agent_mse: float
    background_mse: float
    r2: dict
    latent_std: float
    ridge_fallback: bool = False
    background_variance: float | None = None
    notes: list = field(default_factory=list)

    @property
    def probe_r2_mean(self):
        return float(np.mean(list(self.r2.values()))) if self.r2 else float("nan")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["probe_r2_mean"] = self.probe_r2_mean
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def background_variance(dataset: ProbeDataset):
    """Pixel variance of the background region: the floor for any decoder that cannot see it."""
    bg = dataset.obs[:, 0][~dataset.masks]
    return float(bg.var())


def run_probes(encoder, dataset: ProbeDataset, rng, steps=DECODER_STEPS, holdout=0.2):
    """Reconstruction and linear probes from one encoding pass."""
    z = _latents(encoder, dataset)
    rec = probe_reconstruction_latents(z, dataset, rng, steps, holdout)
    r2, ridge = probe_linear_latents(z, dataset, holdout)
    notes = ["linear probe design was rank deficient; ridge fallback used"] if ridge else []
    report = ProbeReport(
        agent_mse=rec.agent_mse,
        background_mse=rec.background_mse,
        r2=r2,
        latent_std=latent_std(z),
        ridge_fallback=ridge,
        background_variance=background_variance(dataset),
        notes=notes,
    )
    return report, rec


def image_grid(truth, recon, pad=1, pad_value=-0.5):
    """Two-row strip: held-out frames on top, their reconstructions below."""
    truth, recon = np.asarray(truth)[:, 0], np.asarray(recon)[:, 0]
    n, h, w = truth.shape
    grid = np.full((2 * h + 3 * pad, n * (w + pad) + pad), pad_value, dtype=float)
    for row, frames in enumerate((truth, recon)):
        top = pad + row * (h + pad)
        for i, frame in enumerate(frames):
            left = pad + i * (w + pad)
            grid[top:top + h, left:left + w] = frame
    return grid


def write_pgm(path, image, lo=-0.5, hi=0.5, scale=1):
    """Write a binary 8-bit PGM, mapping ``[lo, hi]`` to ``[0, 255]``."""
    img = np.clip((np.asarray(image, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    img = np.round(img * 255).astype(np.uint8)
    if scale > 1:
        img = np.kron(img, np.ones((scale, scale), dtype=np.uint8))
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


# -- pixel-reconstruction baseline ----------------------------------------

class AutoEncoder(Module):
    """Dense encoder of the same shape as the world model's, trained only to reconstruct pixels."""

    def __init__(self, obs_shape, latent_dim, units, rng, decoder_units=DECODER_UNITS):
        self.obs_shape = tuple(obs_shape)
        n = int(np.prod(obs_shape))
        self.encoder = MLP(n, units, latent_dim, rng)
        self.decoder = MLP(latent_dim, decoder_units, n, rng)

    def encode(self, obs):
        obs = np.asarray(obs, dtype=float)
        return self.encoder(obs.reshape(len(obs), -1))

    def loss(self, obs):
        flat = np.asarray(obs, dtype=float).reshape(len(obs), -1)
        return ad.mean(ad.square(self.decoder(self.encode(obs)) - flat))


def train_reconstruction_encoder(frames, obs_shape, latent_dim, units, rng, steps, batch_size=640, lr=6e-4):
    """Train an autoencoder on ``frames`` for ``steps`` updates; returns ``(model, encode_fn)``."""
    frames = np.asarray(frames, dtype=np.float32)
    with ad.precision(np.float32):
        model = AutoEncoder(obs_shape, latent_dim, units, rng)
        opt = Adam(model.parameters(), lr)
        for _ in range(steps):
            idx = rng.integers(len(frames), size=batch_size)
            opt.zero_grad()
            model.loss(frames[idx]).backward()
            opt.step()

    def encode(obs):
        with no_grad(), ad.precision(np.float32):
            return np.concatenate([model.encode(obs[i:i + 1024]).data for i in range(0, len(obs), 1024)]).astype(float)

    return model, encode


# -- mutual-information oracle --------------------------------------------

def stationary_covariance(a, q):
    """Solve ``S = A S A^T + Q`` for a stable linear system."""
    a, q = np.atleast_2d(a).astype(float), np.atleast_2d(q).astype(float)
    d = a.shape[0]
    if np.max(np.abs(np.linalg.eigvals(a))) >= 1.0:
        raise ValueError("dynamics matrix must be stable (spectral radius < 1)")
    vec = np.linalg.solve(np.eye(d * d) - np.kron(a, a), q.reshape(-1))
    return vec.reshape(d, d)


def linear_gaussian_mi(a, noise_std=1.0):
    """Closed-form ``I(s_t; s_{t-1})`` for ``s_t = A s_{t-1} + N(0, noise_std^2 I)`` at stationarity."""
    a = np.atleast_2d(a).astype(float)
    q = noise_std**2 * np.eye(a.shape[0])
    sigma = stationary_covariance(a, q)
    return 0.5 * (np.linalg.slogdet(sigma)[1] - np.linalg.slogdet(q)[1])


@dataclass
class MIOracleResult:
    batch_size: int
    closed_form_mi: float
    estimate: float
    stderr: float
    ceiling: float

    @property
    def bound_ok(self):
        return self.estimate <= min(self.closed_form_mi, self.ceiling) + 3 * self.stderr

    @property
    def relative_error(self):
        if self.closed_form_mi == 0:
            return abs(self.estimate)
        return abs(self.estimate - self.closed_form_mi) / self.closed_form_mi


def mi_oracle_check(a=0.9, batch_size=16, n_batches=500, rng=None, noise_std=1.0, chunk=10_000):
    """InfoNCE estimate with the true transition density as critic, against the closed form.

    Each batch draws ``s_{t-1}`` from the stationary law and ``s_t`` from the
    dynamics; row ``i`` scores ``s_t^i`` against every ``A s_{t-1}^j``.
    Batches are evaluated ``chunk`` at a time to bound memory.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    a = np.atleast_2d(a).astype(float)
    d = a.shape[0]
    q = noise_std**2 * np.eye(d)
    chol = np.linalg.cholesky(stationary_covariance(a, q))
    per_batch = []
    for lo in range(0, n_batches, chunk):
        n = min(chunk, n_batches - lo)
        prev = rng.standard_normal((n, batch_size, d)) @ chol.T
        cur = prev @ a.T + noise_std * rng.standard_normal((n, batch_size, d))
        log_std = np.full((n, batch_size, d), math.log(noise_std))
        with no_grad():
            per_batch.append(infonce(pairwise_log_density(cur, prev @ a.T, log_std)).data)
    per_batch = np.concatenate(per_batch)
    return MIOracleResult(
        batch_size=batch_size,
        closed_form_mi=float(linear_gaussian_mi(a, noise_std)),
        estimate=float(per_batch.mean()),
        stderr=float(per_batch.std(ddof=1) / math.sqrt(n_batches)),
        ceiling=math.log(batch_size),
    )
