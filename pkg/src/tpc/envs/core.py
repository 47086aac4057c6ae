"""Seedable pixel control tasks: ``pendulum_lite`` and ``pointmass_lite``.

Physics is integrated with semi-implicit Euler at ``DT``; each agent
decision is repeated ``action_repeat`` times and rewards are summed over
the repeats. Observations are ``(1, S, S)`` grayscale images in
``[-0.5, 0.5]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .backgrounds import BackgroundSource, BackgroundStream

DT = 0.05
AGENT_VALUE = 0.5
GOAL_VALUE = 0.25
TASKS = ("pendulum_lite", "pointmass_lite")


@dataclass
class EnvConfig:
    task: str = "pendulum_lite"
    image_size: int = 16
    action_repeat: int = 2
    episode_length: int = 1000
    background: BackgroundSource = field(default_factory=BackgroundSource)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.background, dict):
            self.background = BackgroundSource(**self.background)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.action_repeat < 1:
            raise ValueError("action_repeat must be >= 1")
        if self.episode_length % self.action_repeat:
            raise ValueError("episode_length must be divisible by action_repeat")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")

    @property
    def decisions(self):
        return self.episode_length // self.action_repeat


@dataclass
class EnvState:
    physics: np.ndarray
    t: int
    background: np.ndarray


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict


class Pendulum:
    """Angle measured from upright; ``θ = π`` hangs down."""

    action_dim = 1
    state_names = ("theta", "theta_dot")
    angle_dims = (0,)
    mass, length, gravity = 1.0, 1.0, 9.8
    torque_gain, damping = 2.0, 0.05
    max_speed = 8.0
    reward_range = (-1.0, 1.0)

    def init(self, rng):
        return np.array([math.pi + rng.uniform(-0.1, 0.1), 0.0])

    def substep(self, x, a):
        theta, omega = x
        acc = (self.gravity / self.length) * math.sin(theta) \
            + self.torque_gain * a[0] / (self.mass * self.length**2) - self.damping * omega
        omega = float(np.clip(omega + DT * acc, -self.max_speed, self.max_speed))
        theta = (theta + DT * omega + math.pi) % (2 * math.pi) - math.pi
        return np.array([theta, omega])

    def reward(self, x):
        return math.cos(x[0])

    def masks(self, x, grid):
        ys, xs, size = grid
        c = size / 2.0
        length = 0.4 * size
        tip = np.array([c + length * math.sin(x[0]), c - length * math.cos(x[0])])
        d = np.array([tip[0] - c, tip[1] - c])
        px, py = xs - c, ys - c
        u = np.clip((px * d[0] + py * d[1]) / (d @ d), 0.0, 1.0)
        dist = np.hypot(px - u * d[0], py - u * d[1])
        return dist <= 0.06 * size, np.zeros_like(dist, dtype=bool)

    def in_bounds(self, x):
        return -math.pi <= x[0] < math.pi and abs(x[1]) <= self.max_speed


class PointMass:
    """Point mass in ``[-1, 1]^2`` pushed toward a goal; state ``(x, y, vx, vy, gx, gy)``."""

    action_dim = 2
    state_names = ("x", "y", "vx", "vy", "goal_x", "goal_y")
    angle_dims = ()
    force_gain, drag = 1.0, 0.1
    max_speed = 2.0
    reward_range = (0.0, 1.0)
    # sprite radii as fractions of the image side
    agent_radius = 0.1
    goal_radius = 0.1

    def init(self, rng):
        pos = rng.uniform(-0.8, 0.8, size=2)
        goal = rng.uniform(-0.8, 0.8, size=2)
        return np.concatenate([pos, np.zeros(2), goal])

    def substep(self, x, a):
        pos, vel, goal = x[:2], x[2:4], x[4:]
        vel = np.clip(vel + DT * (self.force_gain * np.asarray(a) - self.drag * vel),
                      -self.max_speed, self.max_speed)
        pos = pos + DT * vel
        hit = np.abs(pos) > 1.0
        pos = np.clip(pos, -1.0, 1.0)
        vel = np.where(hit, 0.0, vel)
        return np.concatenate([pos, vel, goal])

    def reward(self, x):
        return 1.0 - math.tanh(4.0 * float(np.hypot(*(x[:2] - x[4:]))))

    def masks(self, x, grid):
        ys, xs, size = grid
        r_agent, r_goal = self.agent_radius * size, self.goal_radius * size

        def to_px(p):
            return r_agent + (p + 1.0) / 2.0 * (size - 2 * r_agent)

        agent = np.hypot(xs - to_px(x[0]), ys - to_px(x[1])) <= r_agent
        goal = np.hypot(xs - to_px(x[4]), ys - to_px(x[5])) <= r_goal
        return agent, goal & ~agent

    def in_bounds(self, x):
        return bool(np.all(np.abs(x[:2]) <= 1.0) and np.all(np.abs(x[2:4]) <= self.max_speed))


def make_task(name):
    return {"pendulum_lite": Pendulum, "pointmass_lite": PointMass}[name]()


class PixelEnv:
    def __init__(self, config: EnvConfig):
        self.config = config
        self.task = make_task(config.task)
        self.background = BackgroundStream(config.background, config.image_size)
        n = config.image_size
        ys, xs = np.mgrid[0:n, 0:n] + 0.5
        self._grid = (ys, xs, n)
        self.state = None

    @property
    def action_dim(self):
        return self.task.action_dim

    @property
    def obs_shape(self):
        return (1, self.config.image_size, self.config.image_size)

    def reset(self, seed=None):
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        physics = self.task.init(rng)
        frame = self.background.reset(rng)
        self.state = EnvState(physics, 0, frame)
        return self.render()

    def step(self, action):
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        a = np.clip(np.asarray(action, dtype=float).reshape(self.action_dim), -1.0, 1.0)
        st = self.state
        total = 0.0
        for _ in range(self.config.action_repeat):
            st.physics = self.task.substep(st.physics, a)
            st.t += 1
            total += self.task.reward(st.physics)
            st.background = self.background.next()
        done = st.t >= self.config.episode_length
        info = {"state": st.physics.copy(), "t": st.t}
        return StepResult(self.render(), float(total), done, info)

    def sprite_masks(self, physics=None):
        """Boolean ``(agent, goal)`` masks of the sprite layer for ``physics``."""
        return self.task.masks(self.state.physics if physics is None else physics, self._grid)

    def foreground_mask(self, physics=None):
        agent, goal = self.sprite_masks(physics)
        return agent | goal

    def render(self, state: EnvState | None = None):
        st = self.state if state is None else state
        img = np.array(st.background, dtype=float)
        agent, goal = self.task.masks(st.physics, self._grid)
        img[goal] = GOAL_VALUE
        img[agent] = AGENT_VALUE
        return img[None]

    def state_reward(self, physics=None):
        """Reward collected over one decision if the state were held fixed."""
        x = self.state.physics if physics is None else physics
        return self.config.action_repeat * self.task.reward(x)


def write_episode_csv(path, records, state_names):
    """Per-step rows ``t, action..., reward, state...``."""
    with open(path, "w", newline="") as fh:
        writer = None
        for rec in records:
            action = np.atleast_1d(rec["action"])
            if writer is None:
                writer = csv.writer(fh)
                writer.writerow(["t", *[f"action_{i}" for i in range(len(action))], "reward", *state_names])
            writer.writerow([rec["t"], *map(repr, map(float, action)), repr(float(rec["reward"])),
                             *map(repr, map(float, rec["state"]))])
