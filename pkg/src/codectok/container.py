"""Bit-exact stream container (magic "CPVS") and raw-frame file I/O.

Container layout, all little-endian:
  header: magic "CPVS" | version u16 (=1) | width u32 | height u32 |
          channels u8 | block_size u8 | gop_size u32 | fps u16 |
          fusion_window u32 | frame_count u32
  per frame: tag u8 (0 = I, 1 = P)
    I: raw u8 pixels, row-major (H * W * C bytes)
    P: ref_offset u32 | motion grid as i16 (d_row, d_col) pairs | residual i16

Raw video files are planar u8 frames back to back, described by a JSON
sidecar {width, height, channels, fps, frame_count}.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .streams import CodecStream, IFrame, PFrame, VideoConfig, validate_stream

MAGIC = b"CPVS"
VERSION = 1
_HEADER = struct.Struct("<4sHIIBBIHII")

TAG_I = 0
TAG_P = 1


class ContainerError(ValueError):
    pass


def _atomic_write(path: str, blob: bytes) -> None:
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(tmp_fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def stream_to_bytes(stream: CodecStream) -> bytes:
    report = validate_stream(stream)
    if not report.ok:
        raise ContainerError(f"refusing to serialize invalid stream:\n{report}")
    cfg = stream.config
    blob = bytearray()
    blob += _HEADER.pack(
        MAGIC, VERSION, cfg.width, cfg.height, cfg.channels, cfg.block_size,
        cfg.gop_size, cfg.fps, cfg.fusion_window, len(stream.frames),
    )
    for f in stream.frames:
        if f.is_iframe:
            blob += struct.pack("<B", TAG_I)
            blob += f.pixels.tobytes()
        else:
            blob += struct.pack("<B", TAG_P)
            blob += struct.pack("<I", f.ref_offset)
            blob += f.motion.astype("<i2").tobytes()
            blob += f.residual.astype("<i2").tobytes()
    return bytes(blob)


def write_stream(stream: CodecStream, path: str) -> int:
    """Serialize atomically; returns bytes written."""
    blob = stream_to_bytes(stream)
    _atomic_write(path, blob)
    return len(blob)


def stream_from_bytes(blob: bytes, source: str = "<bytes>") -> CodecStream:
    if blob[:4] != MAGIC:
        raise ContainerError(f"{source}: not a CPVS file (bad magic {blob[:4]!r})")
    if len(blob) < _HEADER.size:
        raise ContainerError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, version, width, height, channels, block, gop, fps, window, count = (
        _HEADER.unpack_from(blob, 0)
    )
    if version != VERSION:
        raise ContainerError(f"{source}: unsupported CPVS version {version}")
    try:
        cfg = VideoConfig(
            width=width, height=height, channels=channels, block_size=block,
            gop_size=gop, fps=fps, fusion_window=window,
        )
    except ValueError as exc:
        raise ContainerError(f"{source}: invalid header: {exc}") from exc
    if count < 1:
        raise ContainerError(f"{source}: frame_count must be >= 1")

    pixel_count = height * width * channels
    motion_count = cfg.grid_h * cfg.grid_w * 2
    offset = _HEADER.size
    frames: list[IFrame | PFrame] = []
    for idx in range(count):
        def _take(n: int, what: str) -> bytes:
            nonlocal offset
            end = offset + n
            if end > len(blob):
                raise ContainerError(
                    f"{source}: truncated while reading {what} of frame {idx} "
                    f"at byte {offset} (need {n}, have {len(blob) - offset})"
                )
            piece = blob[offset:end]
            offset = end
            return piece

        (tag,) = struct.unpack("<B", _take(1, "tag"))
        if tag == TAG_I:
            pixels = np.frombuffer(_take(pixel_count, "pixels"), dtype=np.uint8)
            frames.append(IFrame(pixels.reshape(cfg.frame_shape)))
        elif tag == TAG_P:
            (ref_offset,) = struct.unpack("<I", _take(4, "ref_offset"))
            motion = np.frombuffer(_take(2 * motion_count, "motion"), dtype="<i2")
            residual = np.frombuffer(_take(2 * pixel_count, "residual"), dtype="<i2")
            frames.append(
                PFrame(
                    ref_offset=ref_offset,
                    motion=motion.astype(np.int16).reshape(cfg.grid_h, cfg.grid_w, 2),
                    residual=residual.astype(np.int16).reshape(cfg.frame_shape),
                )
            )
        else:
            raise ContainerError(f"{source}: unknown frame tag {tag} for frame {idx}")
    if offset != len(blob):
        raise ContainerError(f"{source}: {len(blob) - offset} trailing bytes after frame data")
    stream = CodecStream(config=cfg, frames=tuple(frames))
    report = validate_stream(stream)
    if not report.ok:
        raise ContainerError(f"{source}: stream violates invariants:\n{report}")
    return stream


def read_stream(path: str) -> CodecStream:
    with open(path, "rb") as fh:
        blob = fh.read()
    return stream_from_bytes(blob, source=path)


# ---------------------------------------------------------------------------
# raw-frame files
# ---------------------------------------------------------------------------

def sidecar_path(raw_path: str) -> str:
    return raw_path + ".json"


def write_raw_video(frames: list[np.ndarray], fps: int, path: str) -> None:
    if not frames:
        raise ValueError("no frames to write")
    shape = frames[0].shape
    blob = b"".join(np.ascontiguousarray(f, dtype=np.uint8).tobytes() for f in frames)
    _atomic_write(path, blob)
    height, width = shape[0], shape[1]
    channels = shape[2] if len(shape) == 3 else 1
    descriptor = {
        "width": width, "height": height, "channels": channels,
        "fps": fps, "frame_count": len(frames),
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(descriptor, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_raw_video(path: str) -> tuple[list[np.ndarray], dict]:
    with open(sidecar_path(path)) as fh:
        desc = json.load(fh)
    frame_shape = (desc["height"], desc["width"], desc["channels"])
    frame_bytes = int(np.prod(frame_shape))
    with open(path, "rb") as fh:
        blob = fh.read()
    expected = frame_bytes * desc["frame_count"]
    if len(blob) != expected:
        raise ContainerError(
            f"{path}: raw file has {len(blob)} bytes, descriptor implies {expected}"
        )
    frames = [
        np.frombuffer(blob, dtype=np.uint8, count=frame_bytes, offset=i * frame_bytes)
        .reshape(frame_shape)
        .copy()
        for i in range(desc["frame_count"])
    ]
    return frames, desc
