"""Codec-domain data model: configs, encoded frames, streams, token containers.

All types are immutable after construction (frozen dataclasses; ndarray
payloads are flagged read-only) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROLE_I = "I"
ROLE_P = "P"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VideoConfig:
    """Geometry and GOP layout shared by every frame of a stream.

    block_size is the motion-compensation block edge B; the motion grid is
    (height/B, width/B). gop_size is in frames; fusion_window is the P-frame
    grouping s (1 = unfused).
    """

    width: int
    height: int
    channels: int = 1
    block_size: int = 16
    gop_size: int = 240
    fps: int = 30
    fusion_window: int = 30

    def __post_init__(self):
        if self.width % self.block_size or self.height % self.block_size:
            raise ValueError(
                f"frame {self.width}x{self.height} not divisible by block_size {self.block_size}"
            )
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.fusion_window > self.gop_size:
            raise ValueError("fusion_window must not exceed gop_size")
        if self.gop_size % self.fusion_window:
            raise ValueError(
                f"gop_size {self.gop_size} not divisible by fusion_window {self.fusion_window}"
            )
        if min(self.width, self.height, self.block_size, self.gop_size, self.fps) < 1:
            raise ValueError("all dimensions must be positive")

    @property
    def grid_h(self) -> int:
        return self.height // self.block_size

    @property
    def grid_w(self) -> int:
        return self.width // self.block_size

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def slots_per_gop(self) -> int:
        return self.gop_size // self.fusion_window


@dataclass(frozen=True)
class IFrame:
    """Intra frame: self-contained u8 raster (H, W, C)."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _freeze(self.pixels))

    @property
    def is_iframe(self) -> bool:
        return True


@dataclass(frozen=True)
class PFrame:
    """Predictive frame: block motion grid + signed residual plane.

    ref_offset counts frames back in original frame units: 1 for plain
    P-frames, fusion_window for fused ones. In a fused stream's frame list
    that is always one list slot back.
    """

    ref_offset: int
    motion: np.ndarray    # (H_G, W_G, 2) int16, (d_row, d_col)
    residual: np.ndarray  # (H, W, C) int16 in [-255, 255]

    def __post_init__(self):
        object.__setattr__(self, "motion", _freeze(self.motion))
        object.__setattr__(self, "residual", _freeze(self.residual))

    @property
    def is_iframe(self) -> bool:
        return False


EncodedFrame = IFrame | PFrame


@dataclass(frozen=True)
class CodecStream:
    """Ordered GOP sequence of encoded frames in display order."""

    config: VideoConfig
    frames: tuple[EncodedFrame, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def is_fused(self) -> bool:
        """True when P-frames reference fusion_window frames back."""
        for f in self.frames:
            if not f.is_iframe:
                return f.ref_offset == self.config.fusion_window > 1
        return False

    @property
    def frames_per_gop(self) -> int:
        """List-slot count of a full GOP (slots for fused, frames for plain)."""
        return self.config.slots_per_gop if self.is_fused else self.config.gop_size


@dataclass(frozen=True)
class TokenConfig:
    """Token-space dimensions.

    M is fixed by the stand-in patch embedder to (H/16)*(W/16); the full-scale
    reference constants (M=210, N=8, d=1152) remain valid values for the
    budget calculator, which treats them as pure arithmetic inputs.
    """

    d: int = 64
    m_tokens: int = 210
    k_tau: int = 4
    k_delta: int = 4

    def __post_init__(self):
        if min(self.d, self.m_tokens, self.k_tau, self.k_delta) < 1:
            raise ValueError("token dimensions must be positive")

    @property
    def n_tokens(self) -> int:
        return self.k_tau + self.k_delta


@dataclass(frozen=True)
class TokenEntry:
    role: str               # ROLE_I or ROLE_P
    frame_index: int        # index into the source stream's frame list
    tokens: np.ndarray      # (M, d) for I, (N, d) for P

    def __post_init__(self):
        object.__setattr__(self, "tokens", _freeze(np.asarray(self.tokens)))


@dataclass(frozen=True)
class TokenStream:
    entries: tuple[TokenEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def total_tokens(self) -> int:
        return int(sum(e.tokens.shape[0] for e in self.entries))


@dataclass(frozen=True)
class Violation:
    frame_index: int  # -1 for stream-level problems
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "\n".join(f"frame {v.frame_index}: {v.message}" for v in self.violations)


def expand_motion(motion: np.ndarray, block_size: int) -> np.ndarray:
    """Block grid (H_G, W_G, 2) -> dense per-pixel field (H, W, 2)."""
    return np.repeat(np.repeat(motion, block_size, axis=0), block_size, axis=1)


def reduce_motion(dense: np.ndarray, block_size: int) -> np.ndarray:
    """Inverse of expand_motion: top-left pixel of each block."""
    return dense[::block_size, ::block_size]


def validate_stream(stream: CodecStream) -> ValidationReport:
    """Check every stream invariant; reports violations, never raises."""
    cfg = stream.config
    bad: list[Violation] = []
    if not stream.frames:
        return ValidationReport((Violation(-1, "stream has no frames"),))

    period = stream.frames_per_gop
    ref_units = cfg.fusion_window if stream.is_fused else 1
    for i, f in enumerate(stream.frames):
        if i % period == 0 and not f.is_iframe:
            bad.append(Violation(i, "GOP boundary frame is not an I-frame"))
        if f.is_iframe:
            if f.pixels.shape != cfg.frame_shape:
                bad.append(Violation(i, f"I-frame shape {f.pixels.shape} != {cfg.frame_shape}"))
            if f.pixels.dtype != np.uint8:
                bad.append(Violation(i, f"I-frame dtype {f.pixels.dtype} != uint8"))
            continue
        if f.motion.shape != (cfg.grid_h, cfg.grid_w, 2):
            bad.append(
                Violation(i, f"motion shape {f.motion.shape} != {(cfg.grid_h, cfg.grid_w, 2)}")
            )
        if f.residual.shape != cfg.frame_shape:
            bad.append(Violation(i, f"residual shape {f.residual.shape} != {cfg.frame_shape}"))
        elif f.residual.min() < -255 or f.residual.max() > 255:
            bad.append(Violation(i, "residual values outside [-255, 255]"))
        if f.ref_offset != ref_units:
            bad.append(Violation(i, f"ref_offset {f.ref_offset} != expected {ref_units}"))
        # reference must stay inside this GOP (checked in original frame units)
        pos = i * ref_units
        gop_start = (pos // cfg.gop_size) * cfg.gop_size
        if pos - f.ref_offset < gop_start:
            bad.append(Violation(i, "P-frame reference crosses its GOP boundary"))
    return ValidationReport(tuple(bad))
