"""Nuisance background generators composited behind the agent sprite.

All background intensities live in ``[BG_LOW, BG_HIGH]`` so the sprite
layer (``AGENT_VALUE``) always stands out by at least 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

BG_LOW = -0.5
BG_HIGH = 0.0
CLEAN_VALUE = -0.4

KINDS = ("clean", "random_per_step", "scripted_motion", "frame_dir")


class BackgroundLoadError(OSError):
    pass


@dataclass
class BackgroundSource:
    kind: str = "clean"
    # random_per_step: tiles of ``tile_size`` px with intensities in [BG_LOW, BG_LOW + noise_scale]
    noise_scale: float = 0.5
    tile_size: int = 4
    # scripted_motion: stripe shift in px per environment step
    stripe_speed: int = 1
    # frame_dir: <path>/<split>/<clip_id>/<frame_%06d>.pgm
    path: str = ""
    split: str = "train"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown background kind {self.kind!r}; expected one of {KINDS}")
        if not 0 < self.noise_scale <= BG_HIGH - BG_LOW:
            raise ValueError("noise_scale must lie in (0, 0.5]")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")


def _to_square(img, size):
    h, w = img.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    img = img[top:top + side, left:left + side]
    idx = (np.arange(size) * side) // size
    return img[np.ix_(idx, idx)]


def load_clips(root, split, size):
    """Load every clip under ``root/split`` as an array ``(frames, size, size)``."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise BackgroundLoadError(f"frame directory {split_dir} does not exist")
    clips = {}
    for clip_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        files = sorted(clip_dir.glob("frame_*.pgm"))
        if not files:
            continue
        frames = []
        for f in files:
            with Image.open(f) as im:
                raw = np.asarray(im.convert("L"), dtype=float) / 255.0
            frames.append(BG_LOW + (BG_HIGH - BG_LOW) * _to_square(raw, size))
        clips[clip_dir.name] = np.stack(frames)
    if not clips:
        raise BackgroundLoadError(f"no clips with frame_*.pgm files under {split_dir}")
    return clips


class BackgroundStream:
    """Per-environment background state; :meth:`reset` at episode start, :meth:`next` per env step."""

    def __init__(self, source: BackgroundSource, image_size: int):
        self.source = source
        self.size = image_size
        self.t = 0
        self.rng = None
        self.clip_name = None
        self.clips = None
        if source.kind == "frame_dir":
            self.clips = load_clips(source.path, source.split, image_size)

    def reset(self, rng):
        self.rng = rng
        self.t = 0
        if self.clips is not None:
            names = sorted(self.clips)
            self.clip_name = names[int(rng.integers(len(names)))]
        return self.frame(0)

    def next(self):
        self.t += 1
        return self.frame(self.t)

    def frame(self, t):
        src, n = self.source, self.size
        if src.kind == "clean":
            return np.full((n, n), CLEAN_VALUE)
        if src.kind == "random_per_step":
            k = -(-n // src.tile_size)
            tiles = BG_LOW + src.noise_scale * self.rng.random((k, k))
            return np.kron(tiles, np.ones((src.tile_size, src.tile_size)))[:n, :n]
        if src.kind == "scripted_motion":
            return scripted_frame(n, t * src.stripe_speed)
        clip = self.clips[self.clip_name]
        return clip[t % len(clip)].copy()


def scripted_frame(size, shift):
    """Diagonal stripes with period ``size`` along the anti-diagonal, shifted by ``shift`` px."""
    r, c = np.mgrid[0:size, 0:size]
    phase = (r + c + shift) % size
    return np.where(phase < size // 2, BG_LOW, BG_LOW + 0.4)


def background_next(stream: BackgroundStream, t=None):
    """Frame for env step ``t`` (or the stream's next step when ``t`` is None)."""
    return stream.next() if t is None else stream.frame(t)
