"""Alignment pre-training of the delta-encoder and the next-frame retrieval
harness that probes what the learned tokens preserve.

Training minimizes the patch-wise MSE between the heads' predicted target
tokens and the frozen embedder's tokens of the true target frame. Runs are
deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import EncoderParams, estimate_motion, warp
from .delta_encoder import (
    DeltaEncoder,
    DeltaEncoderConfig,
    PatchEmbedder,
    PretrainHeads,
    alignment_loss,
    pretrain_forward,
)
from .streams import VideoConfig
from .synth import KINDS, synth_video

META_KEY = "meta.model_config"


@dataclass(frozen=True)
class PretrainSample:
    """One (previous frame, P-frame primitives, target frame) triple with the
    frozen embeddings precomputed."""

    prev_tokens: np.ndarray    # (M, d)
    motion: np.ndarray         # (H_G, W_G, 2)
    residual: np.ndarray       # (H, W, C)
    target_tokens: np.ndarray  # (M, d)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 500
    batch_size: int = 16
    lr: float = 3e-3
    warmup_steps: int = 50
    weight_decay: float = 0.0
    seed: int = 0


def build_sample(
    prev_frame: np.ndarray,
    target_frame: np.ndarray,
    video_config: VideoConfig,
    embedder: PatchEmbedder,
    params: EncoderParams = EncoderParams(),
) -> PretrainSample:
    motion = estimate_motion(target_frame, prev_frame, video_config, params)
    residual = target_frame.astype(np.int16) - warp(prev_frame, motion, video_config)
    return PretrainSample(
        prev_tokens=embedder.embed(prev_frame),
        motion=motion,
        residual=residual,
        target_tokens=embedder.embed(target_frame),
    )


def make_pretrain_dataset(
    video_config: VideoConfig,
    embedder: PatchEmbedder,
    data_seed: int = 0,
    num_videos: int = 12,
    frames_per_video: int = 8,
) -> list[PretrainSample]:
    """Consecutive-frame pairs from seeded synthetic videos, all kinds mixed."""
    samples: list[PretrainSample] = []
    for v in range(num_videos):
        kind = KINDS[v % len(KINDS)]
        frames = synth_video(kind, data_seed * 1000 + v, video_config, frames_per_video)
        for t in range(1, len(frames)):
            samples.append(build_sample(frames[t - 1], frames[t], video_config, embedder))
    return samples


@dataclass
class LossHistory:
    rows: list[tuple[int, float, float]] = field(default_factory=list)  # step, lr, loss

    def append(self, step: int, lr: float, loss: float) -> None:
        self.rows.append((step, lr, loss))

    @property
    def losses(self) -> list[float]:
        return [r[2] for r in self.rows]

    def smoothed(self, window: int = 50) -> list[float]:
        vals = self.losses
        return [
            float(np.mean(vals[max(0, i + 1 - window) : i + 1])) for i in range(len(vals))
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in self.rows:
            writer.writerow([step, f"{lr:.10g}", f"{loss:.12g}"])
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def pretrain(
    dataset: list[PretrainSample],
    model: DeltaEncoder,
    heads: PretrainHeads,
    config: PretrainConfig = PretrainConfig(),
) -> LossHistory:
    """Run the alignment loop; returns per-step loss history."""
    if not dataset:
        raise ValueError("dataset is empty")
    m_dims = {s.prev_tokens.shape for s in dataset}
    if len(m_dims) != 1:
        raise ValueError(f"inconsistent sample token shapes: {sorted(m_dims)}")

    params = model.trainable_parameters() + heads.trainable_parameters()
    optimizer = nn.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.Generator(np.random.PCG64([config.seed, 23]))
    history = LossHistory()
    for step in range(1, config.steps + 1):
        batch_idx = rng.integers(0, len(dataset), size=config.batch_size)
        losses = []
        for i in batch_idx:
            s = dataset[int(i)]
            predicted = pretrain_forward(s.prev_tokens, s.motion, s.residual, model, heads)
            losses.append(alignment_loss(predicted, s.target_tokens))
        total = losses[0]
        for extra in losses[1:]:
            total = nn.add(total, extra)
        mean_loss = nn.mul(total, 1.0 / len(losses))
        optimizer.zero_grad()
        mean_loss.backward()
        lr = nn.cosine_warmup_lr(step, config.lr, config.warmup_steps, config.steps)
        optimizer.step(lr=lr)
        history.append(step, lr, float(mean_loss.data))
    return history


# ---------------------------------------------------------------------------
# checkpoint plumbing
# ---------------------------------------------------------------------------

def save_model(
    path: str, model: DeltaEncoder, heads: PretrainHeads, embedder: PatchEmbedder
) -> int:
    cfg = model.config
    state: dict[str, np.ndarray] = {
        META_KEY: np.array(
            [cfg.height, cfg.width, cfg.channels, cfg.d, cfg.heads,
             cfg.k_tau, cfg.k_delta, cfg.depth, cfg.seed],
            dtype=np.float64,
        )
    }
    state.update(model.state_dict())
    state.update(heads.state_dict())
    state.update(embedder.state())
    return save_checkpoint(state, path)


def load_model(path: str) -> tuple[DeltaEncoder, PretrainHeads, PatchEmbedder]:
    state = load_checkpoint(path)
    if META_KEY not in state:
        raise ValueError(f"{path}: missing {META_KEY} record")
    h, w, c, d, heads_n, k_tau, k_delta, depth, seed = (int(v) for v in state[META_KEY])
    cfg = DeltaEncoderConfig(
        height=h, width=w, channels=c, d=d, heads=heads_n,
        k_tau=k_tau, k_delta=k_delta, depth=depth, seed=seed,
    )
    model = DeltaEncoder(cfg)
    heads = PretrainHeads(cfg)
    model.load_state_dict(state)
    heads.load_state_dict(state)
    embedder = PatchEmbedder(h, w, c, d, seed=seed)
    stored = state.get("embedder.projection")
    if stored is not None and not np.array_equal(stored, embedder.state()["embedder.projection"]):
        raise ValueError(f"{path}: frozen embedder does not match its seed")
    return model, heads, embedder


# ---------------------------------------------------------------------------
# next-frame retrieval
# ---------------------------------------------------------------------------

def _mean_embedding(embedder: PatchEmbedder, frame: np.ndarray) -> np.ndarray:
    return embedder.embed(frame).mean(axis=0)


def _rank_of(target: int, candidates: list[int], sims: np.ndarray) -> int:
    """1-based rank of target; ties broken toward the lowest frame index."""
    order = sorted(range(len(candidates)), key=lambda j: (-sims[j], candidates[j]))
    return next(pos for pos, j in enumerate(order, start=1) if candidates[j] == target)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.dot(a, b) / denom)


def retrieval_eval(
    videos: list[list[np.ndarray]],
    model: DeltaEncoder,
    heads: PretrainHeads,
    embedder: PatchEmbedder,
    video_config: VideoConfig,
    recall_at: tuple[int, ...] = (1, 2, 5),
) -> dict:
    """Next-frame retrieval: rank each video's frames by cosine similarity to
    the query embedding; the true successor should rank first.

    Our query is the pooled predicted-target embedding (previous frame tokens
    plus P-frame primitives through the pre-training heads); the baseline
    query is the pooled embedding of the previous frame itself. The database
    per query holds every frame of the video except the query frame.
    """
    ranks_ours: list[int] = []
    ranks_base: list[int] = []
    for frames in videos:
        if len(frames) < 2:
            warnings.warn("skipping video with fewer than 2 retained frames")
            continue
        frame_embs = np.stack([_mean_embedding(embedder, f) for f in frames])
        for t in range(1, len(frames)):
            sample = build_sample(frames[t - 1], frames[t], video_config, embedder)
            predicted = pretrain_forward(
                sample.prev_tokens, sample.motion, sample.residual, model, heads
            ).data.mean(axis=0)
            candidates = [i for i in range(len(frames)) if i != t - 1]
            sims_ours = np.array([_cosine(predicted, frame_embs[i]) for i in candidates])
            sims_base = np.array(
                [_cosine(frame_embs[t - 1], frame_embs[i]) for i in candidates]
            )
            ranks_ours.append(_rank_of(t, candidates, sims_ours))
            ranks_base.append(_rank_of(t, candidates, sims_base))

    def recalls(ranks: list[int]) -> dict[str, float]:
        n = len(ranks)
        return {
            f"recall@{k}": (sum(r <= k for r in ranks) / n if n else 0.0) for k in recall_at
        }

    return {
        "ours": recalls(ranks_ours),
        "baseline": recalls(ranks_base),
        "num_queries": len(ranks_ours),
    }


def write_retrieval_report(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
