"""P-frame fusion and keyframe promotion.

Fusing collapses s consecutive plain P-frames into one P-frame that references
s frames back, composing the displacement chain at block granularity and
recomputing the residual from decoded pixels so the retained timestamps decode
bit-exactly no matter how rough the composed motion is. Promotion converts
selected fused slots back into I-frames to trade tokens for spatial fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .codec import decode
from .streams import CodecStream, IFrame, PFrame, validate_stream


@dataclass(frozen=True)
class FusionPlan:
    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("fusion window must be >= 1")

    def slots_per_gop(self, gop_size: int) -> int:
        if gop_size % self.window:
            raise ValueError(f"gop_size {gop_size} not divisible by window {self.window}")
        return gop_size // self.window


def compose_motion(fields: list[np.ndarray], block_size: int) -> np.ndarray:
    """Chain block displacements across a window (fields in temporal order).

    Starting from each block of the newest field, the accumulated vector is
    followed back through successively older fields: the block containing the
    displaced (clamped) block center contributes its vector. Approximation
    error from the nearest-block lookup is absorbed by the recomputed residual.
    """
    if not fields:
        raise ValueError("compose_motion needs at least one field")
    grid_h, grid_w, _ = fields[0].shape
    h, w = grid_h * block_size, grid_w * block_size
    acc = fields[-1].astype(np.int64).copy()
    centers_r = np.arange(grid_h)[:, None] * block_size + block_size // 2
    centers_c = np.arange(grid_w)[None, :] * block_size + block_size // 2
    for field in fields[-2::-1]:
        src_r = np.clip(centers_r - acc[:, :, 0], 0, h - 1) // block_size
        src_c = np.clip(centers_c - acc[:, :, 1], 0, w - 1) // block_size
        acc += field[src_r, src_c].astype(np.int64)
    if np.abs(acc).max() > np.iinfo(np.int16).max:
        raise ValueError("composed displacement overflows int16")
    return acc.astype(np.int16)


def _slot_timestamps(gop_len: int, window: int) -> list[int]:
    """Retained in-GOP timestamps i*window; partial GOPs keep full windows only."""
    return [i * window for i in range((gop_len - 1) // window + 1)]


def fuse_gop(stream: CodecStream, plan: FusionPlan) -> CodecStream:
    """Collapse each GOP to its I-frame plus one fused P-frame per window."""
    if stream.is_fused:
        raise ValueError("stream is already fused")
    report = validate_stream(stream)
    if not report.ok:
        raise ValueError(f"invalid stream:\n{report}")
    if any(not f.is_iframe and f.ref_offset != 1 for f in stream.frames):
        raise ValueError("fuse_gop expects plain P-frames (ref_offset 1)")
    cfg = stream.config
    plan.slots_per_gop(cfg.gop_size)  # raises on indivisible window
    if plan.window == 1:
        return stream

    pixels = decode(stream)
    new_cfg = replace(cfg, fusion_window=plan.window)
    fused = []
    for gop_start in range(0, len(stream.frames), cfg.gop_size):
        gop_len = min(cfg.gop_size, len(stream.frames) - gop_start)
        for t in _slot_timestamps(gop_len, plan.window):
            if t == 0:
                fused.append(IFrame(pixels[gop_start].copy()))
                continue
            window_fields = [
                stream.frames[gop_start + u].motion
                for u in range(t - plan.window + 1, t + 1)
            ]
            motion = compose_motion(window_fields, cfg.block_size)
            prediction = kernels.warp(
                pixels[gop_start + t - plan.window], motion, cfg.block_size
            )
            residual = pixels[gop_start + t].astype(np.int16) - prediction
            fused.append(PFrame(ref_offset=plan.window, motion=motion, residual=residual))
    return CodecStream(config=new_cfg, frames=tuple(fused))


def keyframe_promote(stream: CodecStream, keyframes_per_gop: int) -> CodecStream:
    """Store k uniformly spaced slots per GOP as I-frames (slot 0 included).

    The remaining fused P-frames keep referencing the previous slot; their
    residuals are recomputed against decoded pixels, which leaves them
    unchanged on a lossless stream.
    """
    cfg = stream.config
    if any(not f.is_iframe and f.ref_offset != cfg.fusion_window for f in stream.frames):
        raise ValueError("keyframe_promote expects a fused stream")
    slots = cfg.slots_per_gop
    if not 1 <= keyframes_per_gop <= slots:
        raise ValueError(f"keyframes_per_gop must be in [1, {slots}]")

    pixels = decode(stream)
    promoted = []
    for gop_start in range(0, len(stream.frames), slots):
        gop_len = min(slots, len(stream.frames) - gop_start)
        k = min(keyframes_per_gop, gop_len)
        keep_i = {j * gop_len // k for j in range(k)}
        for slot in range(gop_len):
            frame = stream.frames[gop_start + slot]
            if slot in keep_i:
                promoted.append(IFrame(pixels[gop_start + slot].copy()))
            else:
                prediction = kernels.warp(
                    pixels[gop_start + slot - 1], frame.motion, cfg.block_size
                )
                residual = pixels[gop_start + slot].astype(np.int16) - prediction
                promoted.append(
                    PFrame(ref_offset=frame.ref_offset, motion=frame.motion, residual=residual)
                )
    return CodecStream(config=cfg, frames=tuple(promoted))
