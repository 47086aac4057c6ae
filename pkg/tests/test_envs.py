import csv
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from tpc.envs import (
    AGENT_VALUE,
    BG_HIGH,
    CLEAN_VALUE,
    BackgroundLoadError,
    BackgroundSource,
    BackgroundStream,
    EnvConfig,
    PixelEnv,
    background_next,
    scripted_frame,
    write_episode_csv,
)

TASKS = ("pendulum_lite", "pointmass_lite")
BACKGROUNDS = ("clean", "random_per_step", "scripted_motion")


def make_env(task="pendulum_lite", kind="clean", **kw):
    return PixelEnv(EnvConfig(task=task, background=BackgroundSource(kind=kind), **kw))


def write_clips(root, split, n_clips, n_frames, value, size=20):
    for c in range(n_clips):
        d = root / split / f"clip{c}"
        d.mkdir(parents=True)
        for f in range(n_frames):
            arr = np.full((size, size + 4), value + c, dtype=np.uint8)
            Image.fromarray(arr, mode="L").save(d / f"frame_{f:06d}.pgm")


def rollout(env, seed, actions):
    obs = [env.reset(seed)]
    rewards, states = [], []
    for a in actions:
        res = env.step(a)
        obs.append(res.obs)
        rewards.append(res.reward)
        states.append(res.info["state"])
    return np.stack(obs), np.array(rewards), np.stack(states)


@pytest.mark.parametrize("task", TASKS)
@pytest.mark.parametrize("kind", BACKGROUNDS)
def test_determinism(task, kind):
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, (40, 2 if task == "pointmass_lite" else 1))
    a = rollout(make_env(task, kind), 7, actions)
    b = rollout(make_env(task, kind), 7, actions)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("task", TASKS)
def test_clean_background_is_flat(task):
    env = make_env(task)
    obs = env.reset(3)[0]
    mask = env.foreground_mask()
    assert mask.any()
    assert np.all(obs[~mask] == CLEAN_VALUE)


def test_pendulum_starts_hanging_down():
    env = make_env()
    for seed in range(20):
        env.reset(seed)
        theta = env.state.physics[0]
        assert abs(abs(theta) - math.pi) <= 0.1 + 1e-12
        assert env.state.physics[1] == 0.0
        assert env.state_reward() / env.config.action_repeat == pytest.approx(-1.0, abs=0.01)


@pytest.mark.parametrize("task", TASKS)
@pytest.mark.parametrize("kind", BACKGROUNDS)
def test_agent_contrast(task, kind):
    env = make_env(task, kind)
    rng = np.random.default_rng(1)
    for seed in range(5):
        obs = env.reset(seed)[0]
        for _ in range(10):
            agent, _ = env.sprite_masks()
            bg = obs[~env.foreground_mask()]
            assert obs[agent].min() - bg.max() >= 0.3
            obs = env.step(rng.uniform(-1, 1, env.action_dim)).obs[0]
    assert AGENT_VALUE - BG_HIGH >= 0.3


def test_pendulum_locality():
    env = make_env()
    env.reset(0)
    base = env.state
    a = env.render()
    other = dataclasses.replace(base, physics=base.physics + np.array([0.7, 0.0]))
    b = env.render(other)
    swept = env.sprite_masks(base.physics)[0] | env.sprite_masks(other.physics)[0]
    diff = a[0] != b[0]
    assert diff.any()
    assert not np.any(diff & ~swept)


def test_random_background_decorrelated_between_steps():
    stream = BackgroundStream(BackgroundSource(kind="random_per_step", tile_size=1), 16)
    stream.reset(np.random.default_rng(0))
    x, y = [], []
    prev = stream.frame(0)
    pix = np.random.default_rng(1).integers(16, size=(1000, 2))
    for i in range(1000):
        nxt = stream.next()
        r, c = pix[i]
        x.append(prev[r, c])
        y.append(nxt[r, c])
        prev = nxt
    rho = np.corrcoef(x, y)[0, 1]
    assert abs(rho) < 0.05


def test_random_background_range_and_tiles():
    src = BackgroundSource(kind="random_per_step", noise_scale=0.5, tile_size=4)
    stream = BackgroundStream(src, 16)
    stream.reset(np.random.default_rng(0))
    f = stream.next()
    assert f.min() >= -0.5 and f.max() <= 0.0
    assert np.all(f[:4, :4] == f[0, 0])


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 32), st.integers(0, 200))
def test_scripted_motion_periodic(size, t):
    assert np.array_equal(scripted_frame(size, t + size), scripted_frame(size, t))
    assert np.array_equal(np.roll(scripted_frame(size, t), -1, axis=1), scripted_frame(size, t + 1))


def test_scripted_background_next_is_deterministic_in_t():
    stream = BackgroundStream(BackgroundSource(kind="scripted_motion"), 16)
    stream.reset(np.random.default_rng(0))
    seq = [background_next(stream) for _ in range(5)]
    for t, frame in enumerate(seq, start=1):
        np.testing.assert_array_equal(frame, background_next(stream, t))


def test_frame_dir_splits_are_disjoint(tmp_path):
    write_clips(tmp_path, "train", 3, 4, value=10)
    write_clips(tmp_path, "eval", 2, 3, value=200)
    train = BackgroundStream(BackgroundSource(kind="frame_dir", path=str(tmp_path), split="train"), 16)
    evals = BackgroundStream(BackgroundSource(kind="frame_dir", path=str(tmp_path), split="eval"), 16)
    rng = np.random.default_rng(0)
    train_vals, eval_vals = set(), set()
    for _ in range(10):
        train.reset(rng)
        evals.reset(rng)
        for _ in range(7):
            train_vals.update(np.unique(train.next()).tolist())
            eval_vals.update(np.unique(evals.next()).tolist())
    assert train_vals and eval_vals
    assert not train_vals & eval_vals


def test_frame_dir_wraps_clip(tmp_path):
    write_clips(tmp_path, "train", 1, 3, value=50)
    stream = BackgroundStream(BackgroundSource(kind="frame_dir", path=str(tmp_path)), 16)
    stream.reset(np.random.default_rng(0))
    frames = [stream.next() for _ in range(6)]
    np.testing.assert_array_equal(frames[0], frames[3])


def test_frame_dir_missing_or_empty_raises(tmp_path):
    with pytest.raises(BackgroundLoadError):
        PixelEnv(EnvConfig(
            background=BackgroundSource(kind="frame_dir", path=str(tmp_path / "nope"))))
    (tmp_path / "train" / "empty").mkdir(parents=True)
    with pytest.raises(BackgroundLoadError):
        PixelEnv(EnvConfig(background=BackgroundSource(kind="frame_dir", path=str(tmp_path))))


@pytest.mark.parametrize("task", TASKS)
@pytest.mark.parametrize("repeat", [1, 2, 4])
def test_reward_bounds_and_episode_length(task, repeat):
    env = make_env(task, action_repeat=repeat, episode_length=40 * repeat)
    lo, hi = env.task.reward_range
    rng = np.random.default_rng(repeat)
    env.reset(0)
    steps = 0
    while True:
        res = env.step(rng.uniform(-3, 3, env.action_dim))
        steps += 1
        assert lo * repeat - 1e-12 <= res.reward <= hi * repeat + 1e-12
        assert env.task.in_bounds(res.info["state"])
        if res.done:
            break
    assert steps == 40


def test_action_repeat_sums_substep_rewards():
    env = make_env("pointmass_lite", action_repeat=2)
    env.reset(4)
    x = env.state.physics.copy()
    a = np.array([0.5, -0.2])
    x1 = env.task.substep(x, a)
    x2 = env.task.substep(x1, a)
    res = env.step(a)
    assert res.reward == pytest.approx(env.task.reward(x1) + env.task.reward(x2), abs=1e-15)
    np.testing.assert_array_equal(res.info["state"], x2)


def test_pointmass_reward_at_goal_is_one():
    env = make_env("pointmass_lite")
    env.reset(0)
    x = env.state.physics.copy()
    x[:2] = x[4:]
    assert env.task.reward(x) == 1.0


def test_pendulum_rest_is_equilibrium():
    env = make_env()
    env.reset(0)
    env.state.physics = np.array([-math.pi, 0.0])
    for _ in range(20):
        res = env.step(np.zeros(1))
    assert abs(abs(res.info["state"][0]) - math.pi) < 1e-9


def test_state_rerenders_agent_layer():
    env = make_env("pointmass_lite", kind="random_per_step")
    rng = np.random.default_rng(0)
    env.reset(2)
    for _ in range(5):
        res = env.step(rng.uniform(-1, 1, 2))
    agent, goal = env.sprite_masks(res.info["state"])
    assert np.all(res.obs[0][agent] == AGENT_VALUE)


def test_step_before_reset_and_bad_config():
    with pytest.raises(RuntimeError):
        make_env().step(np.zeros(1))
    with pytest.raises(ValueError):
        EnvConfig(task="cartpole")
    with pytest.raises(ValueError):
        EnvConfig(episode_length=7, action_repeat=2)
    with pytest.raises(ValueError):
        BackgroundSource(kind="video")


def test_episode_csv(tmp_path):
    env = make_env("pointmass_lite", episode_length=10)
    env.reset(0)
    records = []
    for t in range(5):
        a = np.array([0.1 * t, -0.1])
        res = env.step(a)
        records.append({"t": t, "action": a, "reward": res.reward, "state": res.info["state"]})
    path = tmp_path / "ep.csv"
    write_episode_csv(path, records, env.task.state_names)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert list(rows[0]) == ["t", "action_0", "action_1", "reward", *env.task.state_names]
    assert float(rows[3]["reward"]) == records[3]["reward"]
    assert float(rows[4]["goal_y"]) == records[4]["state"][5]
