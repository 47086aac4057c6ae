from __future__ import annotations

import threading

import numpy as np


class SequenceReplayBuffer:
    """Whole episodes; samples contiguous chunks that never straddle episodes.

    Appends are atomic under a lock and sampling works on a snapshot of the
    episode list, so a collector thread can add episodes while a trainer
    samples.
    """

    KEYS = ("obs", "actions", "rewards", "states")

    def __init__(self, capacity=None):
        self.capacity = capacity
        self._episodes = []
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._episodes)

    @property
    def episodes(self):
        with self._lock:
            return list(self._episodes)

    def add(self, episode):
        n = len(episode["obs"])
        ep = {}
        for key in self.KEYS:
            arr = np.asarray(episode[key], dtype=np.float32 if key == "obs" else float)
            if len(arr) != n:
                raise ValueError(f"episode field {key} has length {len(arr)}, expected {n}")
            ep[key] = arr
        with self._lock:
            self._episodes.append(ep)
            if self.capacity is not None and len(self._episodes) > self.capacity:
                self._episodes.pop(0)

    def total_steps(self):
        return sum(len(ep["obs"]) for ep in self.episodes)

    def sample(self, batch_size, length, rng):
        """Draw ``batch_size`` chunks of ``length`` steps, uniform over valid start positions."""
        episodes = self.episodes
        starts = np.array([max(len(ep["obs"]) - length + 1, 0) for ep in episodes], dtype=float)
        if starts.sum() == 0:
            raise ValueError(f"no stored episode has at least {length} steps")
        picks = rng.choice(len(episodes), size=batch_size, p=starts / starts.sum())
        batch = {k: [] for k in self.KEYS}
        for i in picks:
            ep = episodes[i]
            s = int(rng.integers(int(starts[i])))
            for k in self.KEYS:
                batch[k].append(ep[k][s:s + length])
        out = {k: np.stack(v).astype(float) for k, v in batch.items()}
        out["episode_index"] = picks
        return out
