"""Seeded synthetic video generators for tests, training, and the CLI.

All kinds are deterministic for a fixed (kind, seed, config, length).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .streams import VideoConfig

KINDS = ("moving_rect", "translating_texture", "noise_drift")


def _reflect(x: int, limit: int) -> int:
    """Fold x into [0, limit] by bouncing off both ends (triangle wave)."""
    if limit == 0:
        return 0
    period = 2 * limit
    y = x % period
    return y if y <= limit else period - y


@dataclass(frozen=True)
class RectScene:
    """Ground-truth geometry of a moving_rect video (for construction checks)."""

    rect_h: int
    rect_w: int
    start: tuple[int, int]
    velocity: tuple[int, int]
    bounds: tuple[int, int]  # max top-left position per axis
    value: int

    def position(self, t: int) -> tuple[int, int]:
        return (
            _reflect(self.start[0] + t * self.velocity[0], self.bounds[0]),
            _reflect(self.start[1] + t * self.velocity[1], self.bounds[1]),
        )


def _rng(seed: int, salt: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, salt]))


def moving_rect_scene(seed: int, config: VideoConfig) -> RectScene:
    """Rectangle bouncing off the frame edges at a seeded integer velocity.

    The start position sits at least |velocity| from each edge, so the step
    from frame 0 to frame 1 is always a pure translation.
    """
    rng = _rng(seed, 1)
    rect_h = max(4, config.height // 4)
    rect_w = max(4, config.width // 4)
    bounds = (config.height - rect_h, config.width - rect_w)
    while True:
        vel = (int(rng.integers(-3, 4)), int(rng.integers(-3, 4)))
        if vel != (0, 0):
            break
    start = (
        int(rng.integers(abs(vel[0]), bounds[0] - abs(vel[0]) + 1)),
        int(rng.integers(abs(vel[1]), bounds[1] - abs(vel[1]) + 1)),
    )
    return RectScene(rect_h=rect_h, rect_w=rect_w, start=start, velocity=vel,
                     bounds=bounds, value=250)


def synth_video(kind: str, seed: int, config: VideoConfig, length: int) -> list[np.ndarray]:
    if length < 1:
        raise ValueError("length must be >= 1")
    if kind == "moving_rect":
        return _moving_rect(seed, config, length)
    if kind == "translating_texture":
        return _translating_texture(seed, config, length)
    if kind == "noise_drift":
        return _noise_drift(seed, config, length)
    raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")


def _moving_rect(seed: int, config: VideoConfig, length: int) -> list[np.ndarray]:
    scene = moving_rect_scene(seed, config)
    background = _rng(seed, 2).integers(0, 128, size=config.frame_shape, dtype=np.uint8)
    frames = []
    for t in range(length):
        frame = background.copy()
        r, c = scene.position(t)
        frame[r : r + scene.rect_h, c : c + scene.rect_w, :] = scene.value
        frames.append(frame)
    return frames


def texture_velocity(seed: int) -> tuple[int, int]:
    """Per-frame cyclic shift of the translating_texture kind for this seed."""
    rng = _rng(seed, 5)
    while True:
        vel = (int(rng.integers(-3, 4)), int(rng.integers(-3, 4)))
        if vel != (0, 0):
            return vel


def _translating_texture(seed: int, config: VideoConfig, length: int) -> list[np.ndarray]:
    texture = _rng(seed, 3).integers(0, 256, size=config.frame_shape, dtype=np.uint8)
    vel = texture_velocity(seed)
    return [
        np.roll(texture, shift=(t * vel[0], t * vel[1]), axis=(0, 1)) for t in range(length)
    ]


def _noise_drift(seed: int, config: VideoConfig, length: int) -> list[np.ndarray]:
    base = _rng(seed, 4).integers(32, 224, size=config.frame_shape, dtype=np.uint8)
    frames = []
    for t in range(length):
        noise = _rng(seed, 100 + t).integers(-8, 9, size=config.frame_shape)
        frames.append(np.clip(base.astype(np.int16) + noise, 0, 255).astype(np.uint8))
    return frames
