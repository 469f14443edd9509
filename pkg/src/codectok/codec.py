"""Lossless block-based I/P codec: motion estimation, warp, encode, decode.

Encoding is closed-loop (residuals are computed against the decoder's
reconstruction, which equals the source because the codec is lossless), so
decode(encode(v)) reproduces v bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .streams import CodecStream, IFrame, PFrame, VideoConfig, validate_stream


@dataclass(frozen=True)
class EncoderParams:
    """search_radius R bounds plain-P displacements to [-R, R] per axis.

    cost names the block-matching metric; SAD is the only one implemented.
    """

    search_radius: int = 8
    cost: str = "SAD"

    def __post_init__(self):
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if self.cost != "SAD":
            raise ValueError(f"unsupported cost {self.cost!r}; only SAD is implemented")


class StreamIntegrityError(ValueError):
    """Decode input violates stream invariants."""


def _require_frame(frame: np.ndarray, config: VideoConfig) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    if frame.shape != config.frame_shape:
        raise ValueError(f"frame shape {frame.shape} does not match config {config.frame_shape}")
    if frame.dtype != np.uint8:
        raise ValueError(f"frame dtype must be uint8, got {frame.dtype}")
    return frame


def warp(reference: np.ndarray, motion: np.ndarray, config: VideoConfig) -> np.ndarray:
    """Predict a frame by sampling the reference at displaced positions.

    Output pixel i takes the reference value at clamp(i - tau_i), where tau is
    the block vector dense-expanded to pixel resolution and each coordinate is
    clamped to frame bounds independently. Returns an int16 workspace.
    """
    reference = _require_frame(reference, config)
    if motion.shape != (config.grid_h, config.grid_w, 2):
        raise ValueError(
            f"motion shape {motion.shape} does not match grid "
            f"{(config.grid_h, config.grid_w, 2)}"
        )
    return kernels.warp(reference, motion, config.block_size)


def estimate_motion(
    target: np.ndarray,
    reference: np.ndarray,
    config: VideoConfig,
    params: EncoderParams = EncoderParams(),
) -> np.ndarray:
    """Exhaustive SAD block search over [-R, R]^2 with deterministic ties.

    Ties minimize (SAD, d_row^2 + d_col^2, d_row, d_col) lexicographically, so
    flat regions report (0, 0).
    """
    target = _require_frame(target, config)
    reference = _require_frame(reference, config)
    return kernels.sad_search(target, reference, config.block_size, params.search_radius)


def encode(
    frames: list[np.ndarray],
    config: VideoConfig,
    params: EncoderParams = EncoderParams(),
) -> CodecStream:
    """Encode raw frames into a GOP-structured stream.

    Frame 0 of each GOP is an I-frame; every other frame is a plain P-frame
    (ref_offset 1) carrying estimated motion plus the exact residual.
    """
    if not frames:
        raise ValueError("need at least one frame")
    encoded = []
    recon_prev: np.ndarray | None = None
    for idx, raw in enumerate(frames):
        raw = _require_frame(raw, config)
        if idx % config.gop_size == 0:
            encoded.append(IFrame(raw.copy()))
        else:
            motion = estimate_motion(raw, recon_prev, config, params)
            prediction = warp(recon_prev, motion, config)
            residual = raw.astype(np.int16) - prediction
            encoded.append(PFrame(ref_offset=1, motion=motion, residual=residual))
        # lossless: the reconstruction equals the source frame
        recon_prev = raw
    return CodecStream(config=config, frames=tuple(encoded))


def decode(stream: CodecStream) -> list[np.ndarray]:
    """Reconstruct frames via warp-then-add-residual, one GOP at a time.

    GOPs are independent; I-frames are copied verbatim. The [0, 255] clip is
    a defensive cap that never fires on encoder-produced streams.
    """
    report = validate_stream(stream)
    if not report.ok:
        raise StreamIntegrityError(f"invalid stream:\n{report}")
    cfg = stream.config
    period = stream.frames_per_gop
    out: list[np.ndarray] = []
    for gop_start in range(0, len(stream.frames), period):
        gop = stream.frames[gop_start : gop_start + period]
        recon: list[np.ndarray] = []
        for f in gop:
            if f.is_iframe:
                recon.append(np.asarray(f.pixels))
            else:
                if not recon:
                    raise StreamIntegrityError("P-frame with no reference in GOP")
                prediction = kernels.warp(recon[-1], f.motion, cfg.block_size)
                pixels = np.clip(prediction + f.residual, 0, 255).astype(np.uint8)
                recon.append(pixels)
        out.extend(recon)
    return out
