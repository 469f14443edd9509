"""Token-stream assembly, uniform GOP sampling, and the token-budget planner.

The budget arithmetic treats M and N as pure accounting constants (their
defaults are the full-scale reference values 210 and 8), independent of whatever embedder
actually produces tokens at desk scale.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .streams import ROLE_I, ROLE_P, CodecStream, TokenEntry, TokenStream, validate_stream

DEFAULT_GOP_CAP = 64


@dataclass(frozen=True)
class BudgetQuery:
    duration: float = 0.0  # seconds of source video, 0 when only planning capacity
    fps: int = 30
    gop_size: int = 240
    fusion_window: int = 30
    keyframes_per_gop: int = 1
    m_tokens: int = 210
    n_tokens: int = 8
    context_budget: int = 1_000_000
    per_frame_overhead: int = 0

    def __post_init__(self):
        if min(self.fps, self.gop_size, self.fusion_window, self.keyframes_per_gop,
               self.m_tokens, self.n_tokens) < 1:
            raise ValueError("all counts must be positive")
        if self.gop_size % self.fusion_window:
            raise ValueError("gop_size must be divisible by fusion_window")
        if self.keyframes_per_gop > self.gop_size // self.fusion_window:
            raise ValueError("keyframes_per_gop exceeds slots per GOP")
        if self.m_tokens <= self.n_tokens:
            raise ValueError("m_tokens must exceed n_tokens")
        if self.per_frame_overhead < 0 or self.context_budget < 0 or self.duration < 0:
            raise ValueError("budget, overhead, and duration must be non-negative")

    @property
    def slots(self) -> int:
        return self.gop_size // self.fusion_window


def tokens_per_gop(q: BudgetQuery) -> int:
    """k*M + p*N plus optional per-slot overhead (M + 7N at the defaults)."""
    k = q.keyframes_per_gop
    p = q.slots - k
    return k * q.m_tokens + p * q.n_tokens + q.slots * q.per_frame_overhead


@dataclass(frozen=True)
class BudgetPlan:
    max_gops: int
    max_duration_seconds: float
    tokens_used: int
    tokens_per_gop: int

    @property
    def covered(self) -> bool:
        return self.max_gops > 0


def plan_budget(q: BudgetQuery) -> BudgetPlan:
    """How many GOPs (and seconds of video) fit in the context budget."""
    per_gop = tokens_per_gop(q)
    max_gops = q.context_budget // per_gop
    return BudgetPlan(
        max_gops=max_gops,
        max_duration_seconds=max_gops * q.gop_size / q.fps,
        tokens_used=max_gops * per_gop,
        tokens_per_gop=per_gop,
    )


def sample_gops(total_gops: int, cap: int = DEFAULT_GOP_CAP) -> list[int]:
    """Uniform GOP sampling: identity below the cap, floor(j*total/cap) above."""
    if total_gops < 1:
        raise ValueError("total_gops must be >= 1")
    if total_gops <= cap:
        return list(range(total_gops))
    return [j * total_gops // cap for j in range(cap)]


def build_token_stream(
    stream: CodecStream,
    embedder,
    model,
    sampled_gops: list[int] | None = None,
) -> TokenStream:
    """Interleave I-frame tokens and delta-tokens in display order.

    I-frames contribute M x d blocks through the frozen patch embedder;
    P-frames contribute N x d blocks through the delta-encoder. Entries are
    restricted to the sampled GOPs and tagged with their stream frame index.
    """
    from .codec import decode  # deferred: avoids import cycle at module load

    if embedder.d != model.d:
        raise ValueError(f"embedder dim {embedder.d} != delta-encoder dim {model.d}")
    report = validate_stream(stream)
    if not report.ok:
        raise ValueError(f"invalid stream:\n{report}")

    period = stream.frames_per_gop
    total_gops = (len(stream.frames) + period - 1) // period
    if sampled_gops is None:
        sampled_gops = sample_gops(total_gops)
    pixels = decode(stream)

    entries = []
    for g in sampled_gops:
        start = g * period
        for i in range(start, min(start + period, len(stream.frames))):
            frame = stream.frames[i]
            if frame.is_iframe:
                tokens = embedder.embed(pixels[i])
                entries.append(TokenEntry(role=ROLE_I, frame_index=i, tokens=tokens))
            else:
                tokens = model.delta_tokens(frame.motion, frame.residual)
                entries.append(TokenEntry(role=ROLE_P, frame_index=i, tokens=tokens))
    return TokenStream(entries=tuple(entries))


def write_token_jsonl(tokens: TokenStream, path: str) -> None:
    """One record per entry: {"role", "frame_index", "tokens" (f32 rows)}."""
    with open(path, "w") as fh:
        for e in tokens.entries:
            rec = {
                "role": e.role,
                "frame_index": e.frame_index,
                "tokens": np.asarray(e.tokens, dtype=np.float32).tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def read_token_jsonl(path: str) -> TokenStream:
    entries = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            entries.append(
                TokenEntry(
                    role=rec["role"],
                    frame_index=rec["frame_index"],
                    tokens=np.asarray(rec["tokens"], dtype=np.float32),
                )
            )
    return TokenStream(entries=tuple(entries))


def write_scaling_csv(rows: list[tuple[str, int, float]], path: str) -> None:
    """Rows of (config_label, context_budget, max_duration_seconds)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config_label", "context_budget", "max_duration_seconds"])
        for label, budget, duration in rows:
            writer.writerow([label, budget, f"{duration:.1f}"])


def scaling_curve(
    budgets: tuple[int, ...] = (32_768, 131_072, 1_000_000),
    keyframe_counts: tuple[int, ...] = (1, 2, 4, 8),
) -> list[tuple[str, int, float]]:
    """Duration-vs-budget points at the reference constants, one curve per k."""
    rows = []
    for k in keyframe_counts:
        label = "dense" if k == 8 else f"k={k}"
        for budget in budgets:
            q = BudgetQuery(duration=0.0, keyframes_per_gop=k, context_budget=budget)
            rows.append((label, budget, plan_budget(q).max_duration_seconds))
    return rows
