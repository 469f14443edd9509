"""Delta-encoder: compresses a P-frame's motion field and residual plane into
N = K_tau + K_delta embedding tokens, plus the alignment heads used only
during pre-training.

Motion branch: dense-expand block vectors to pixel resolution, min-max
normalize to [-1, 1], patchify into 16x16 blocks, run a shared two-layer MLP
per patch, then compress through a 4-layer PreNorm transformer with K_tau
learnable queries (queries are appended to the feature sequence and only the
query positions are emitted). Residual branch: scale to [-1, 1], run four
stride-2 convs down to the patch grid, then an identical query transformer
with K_delta queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .streams import expand_motion

PATCH = 16


def sinusoid_table(length: int, d: int) -> np.ndarray:
    """Fixed sinusoidal positional encodings (length x d)."""
    positions = np.arange(length)[:, None]
    dims = np.arange(d)[None, :]
    angles = positions / np.power(10000.0, (2 * (dims // 2)) / d)
    table = np.where(dims % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(np.float64)


def _patchify(plane: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H/16 * W/16, 256*C), patch rows in grid row-major order."""
    h, w, c = plane.shape
    if h % PATCH or w % PATCH:
        raise ValueError(f"dims {h}x{w} not divisible by patch size {PATCH}")
    gh, gw = h // PATCH, w // PATCH
    tiles = plane.reshape(gh, PATCH, gw, PATCH, c).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * gw, PATCH * PATCH * c)


class PatchEmbedder:
    """Frozen stand-in for the vision encoder.

    Per-patch flatten -> seeded frozen linear -> + sinusoidal positions ->
    tanh. Deterministic, never receives gradients.
    """

    def __init__(self, height: int, width: int, channels: int, d: int, seed: int = 0):
        if height % PATCH or width % PATCH:
            raise ValueError(f"frame {height}x{width} not divisible by patch {PATCH}")
        self.height, self.width, self.channels, self.d = height, width, channels, d
        self.m_tokens = (height // PATCH) * (width // PATCH)
        rng = np.random.Generator(np.random.PCG64([seed, 11]))
        fan_in = PATCH * PATCH * channels
        self._projection = nn.uniform_init(rng, fan_in, (fan_in, d))
        self._projection.setflags(write=False)
        self._positional = sinusoid_table(self.m_tokens, d)
        self._positional.setflags(write=False)

    def embed(self, frame: np.ndarray) -> np.ndarray:
        """u8 frame (H, W, C) -> (M, d) token matrix."""
        frame = np.asarray(frame)
        if frame.ndim == 2:
            frame = frame[:, :, None]
        if frame.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"frame shape {frame.shape} != "
                f"{(self.height, self.width, self.channels)}"
            )
        patches = _patchify(frame.astype(np.float64) / 127.5 - 1.0)
        return np.tanh(patches @ self._projection + self._positional)

    def state(self) -> dict[str, np.ndarray]:
        return {"embedder.projection": self._projection}


@dataclass(frozen=True)
class DeltaEncoderConfig:
    height: int
    width: int
    channels: int = 1
    d: int = 64
    heads: int = 4
    k_tau: int = 4
    k_delta: int = 4
    depth: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.height % PATCH or self.width % PATCH:
            raise ValueError(f"frame {self.height}x{self.width} not divisible by {PATCH}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.d % 8:
            raise ValueError(f"d={self.d} must be divisible by 8 (conv channel ladder)")

    @property
    def n_tokens(self) -> int:
        return self.k_tau + self.k_delta

    @property
    def grid_tokens(self) -> int:
        return (self.height // PATCH) * (self.width // PATCH)


class DeltaEncoder(nn.Module):
    def __init__(self, config: DeltaEncoderConfig):
        cfg = config
        self.config = cfg
        self.d = cfg.d
        rng = np.random.Generator(np.random.PCG64([cfg.seed, 13]))
        self.motion_mlp_in = nn.Linear(rng, PATCH * PATCH * 2, cfg.d, "motion.mlp_in")
        self.motion_mlp_out = nn.Linear(rng, cfg.d, cfg.d, "motion.mlp_out")
        self.motion_queries = nn.Parameter(
            rng.normal(0.0, 0.02, size=(cfg.k_tau, cfg.d)), "motion.queries"
        )
        self.motion_transformer = nn.TransformerStack(
            rng, cfg.d, cfg.heads, cfg.depth, "motion.transformer"
        )
        ladder = [cfg.channels, cfg.d // 8, cfg.d // 4, cfg.d // 2, cfg.d]
        self.residual_convs = [
            nn.Conv2dStride2(rng, ladder[i], ladder[i + 1], f"residual.conv{i}")
            for i in range(4)
        ]
        self.residual_queries = nn.Parameter(
            rng.normal(0.0, 0.02, size=(cfg.k_delta, cfg.d)), "residual.queries"
        )
        self.residual_transformer = nn.TransformerStack(
            rng, cfg.d, cfg.heads, cfg.depth, "residual.transformer"
        )

    # -- motion branch -------------------------------------------------------

    def _normalize_motion(self, motion: np.ndarray) -> np.ndarray:
        """Per-field min-max to [-1, 1]; constant fields map to all-zero."""
        dense = self._dense_motion(motion).astype(np.float64)
        lo, hi = dense.min(), dense.max()
        if hi == lo:
            return np.zeros_like(dense)
        return 2.0 * (dense - lo) / (hi - lo) - 1.0

    def _dense_motion(self, motion: np.ndarray) -> np.ndarray:
        gh = motion.shape[0]
        if self.config.height % gh:
            raise ValueError(
                f"motion grid {motion.shape[:2]} does not divide frame "
                f"{self.config.height}x{self.config.width}"
            )
        block = self.config.height // gh
        if motion.shape[1] * block != self.config.width:
            raise ValueError("motion grid aspect does not match frame")
        return expand_motion(motion, block)

    def encode_motion_t(self, motion: np.ndarray) -> nn.Tensor:
        patches = nn.Tensor(_patchify(self._normalize_motion(motion)))
        feats = self.motion_mlp_out(nn.gelu(self.motion_mlp_in(patches)))
        seq = nn.concat([feats, self.motion_queries], axis=0)
        out = self.motion_transformer(seq)
        return nn.narrow(out, self.config.grid_tokens, self.config.k_tau, axis=0)

    def encode_motion(self, motion: np.ndarray) -> np.ndarray:
        return self.encode_motion_t(motion).data

    # -- residual branch -------------------------------------------------------

    def encode_residual_t(self, residual: np.ndarray) -> nn.Tensor:
        if residual.shape != (self.config.height, self.config.width, self.config.channels):
            raise ValueError(
                f"residual shape {residual.shape} != "
                f"{(self.config.height, self.config.width, self.config.channels)}"
            )
        x = nn.Tensor(residual.astype(np.float64) / 255.0)
        for conv in self.residual_convs:
            x = nn.relu(conv(x))
        gh, gw = self.config.height // PATCH, self.config.width // PATCH
        feats = nn.reshape(x, (gh * gw, self.config.d))
        seq = nn.concat([feats, self.residual_queries], axis=0)
        out = self.residual_transformer(seq)
        return nn.narrow(out, self.config.grid_tokens, self.config.k_delta, axis=0)

    def encode_residual(self, residual: np.ndarray) -> np.ndarray:
        return self.encode_residual_t(residual).data

    # -- combined -------------------------------------------------------------

    def delta_tokens_t(self, motion: np.ndarray, residual: np.ndarray) -> nn.Tensor:
        return nn.concat(
            [self.encode_motion_t(motion), self.encode_residual_t(residual)], axis=0
        )

    def delta_tokens(self, motion: np.ndarray, residual: np.ndarray) -> np.ndarray:
        """Inference path: (N, d) float32 token block."""
        return self.delta_tokens_t(motion, residual).data.astype(np.float32)


class ZeroDeltaEncoder:
    """Ablation hook: same interface, emits all-zero delta-tokens."""

    def __init__(self, model: DeltaEncoder):
        self._model = model
        self.d = model.d

    def delta_tokens(self, motion: np.ndarray, residual: np.ndarray) -> np.ndarray:
        n = self._model.config.n_tokens
        return np.zeros((n, self.d), dtype=np.float32)


class PretrainHeads(nn.Module):
    """Reference/warped transformers used only during alignment pre-training."""

    def __init__(self, config: DeltaEncoderConfig):
        self.config = config
        rng = np.random.Generator(np.random.PCG64([config.seed, 17]))
        self.ref = nn.TransformerStack(rng, config.d, config.heads, config.depth, "heads.ref")
        self.warped = nn.TransformerStack(
            rng, config.d, config.heads, config.depth, "heads.warped"
        )


def pretrain_forward(
    prev_iframe_tokens: np.ndarray,
    motion: np.ndarray,
    residual: np.ndarray,
    model: DeltaEncoder,
    heads: PretrainHeads,
) -> nn.Tensor:
    """Predict the target frame's M x d image tokens from the previous
    I-frame's tokens plus the P-frame primitives.

    The reference transformer consumes [image tokens || motion tokens] and the
    warped transformer adds the residual tokens, each emitting the image-token
    positions of its joint sequence.
    """
    m = prev_iframe_tokens.shape[0]
    prev = nn.Tensor(np.asarray(prev_iframe_tokens, dtype=np.float64))
    tau_tok = model.encode_motion_t(motion)
    warped = nn.narrow(heads.ref(nn.concat([prev, tau_tok], axis=0)), 0, m, axis=0)
    delta_tok = model.encode_residual_t(residual)
    return nn.narrow(heads.warped(nn.concat([warped, delta_tok], axis=0)), 0, m, axis=0)


def alignment_loss(predicted: nn.Tensor, target: np.ndarray) -> nn.Tensor:
    """Mean over patches of the squared L2 distance along the embedding axis."""
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {target.shape}")
    diff = predicted - nn.Tensor(np.asarray(target, dtype=np.float64))
    return nn.mul(nn.sum_all(nn.mul(diff, diff)), 1.0 / target.shape[0])
