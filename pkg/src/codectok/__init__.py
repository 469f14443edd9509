"""codectok: codec-native video tokenization at desk scale.

A lossless block-based I/P codec, P-frame fusion with keyframe promotion,
token-budget planning with interleaved token-stream assembly, and a trainable
delta-encoder aligned to a frozen patch embedder.
"""

from .codec import EncoderParams, decode, encode, estimate_motion, warp
from .delta_encoder import (
    DeltaEncoder,
    DeltaEncoderConfig,
    PatchEmbedder,
    PretrainHeads,
    ZeroDeltaEncoder,
    alignment_loss,
    pretrain_forward,
)
from .fusion import FusionPlan, compose_motion, fuse_gop, keyframe_promote
from .pretrain import (
    PretrainConfig,
    load_model,
    make_pretrain_dataset,
    pretrain,
    retrieval_eval,
    save_model,
)
from .streams import (
    CodecStream,
    IFrame,
    PFrame,
    TokenConfig,
    TokenStream,
    VideoConfig,
    validate_stream,
)
from .synth import synth_video
from .tokenizer import (
    BudgetQuery,
    build_token_stream,
    plan_budget,
    sample_gops,
    tokens_per_gop,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetQuery",
    "CodecStream",
    "DeltaEncoder",
    "DeltaEncoderConfig",
    "EncoderParams",
    "FusionPlan",
    "IFrame",
    "PFrame",
    "PatchEmbedder",
    "PretrainConfig",
    "PretrainHeads",
    "TokenConfig",
    "TokenStream",
    "VideoConfig",
    "ZeroDeltaEncoder",
    "alignment_loss",
    "build_token_stream",
    "compose_motion",
    "decode",
    "encode",
    "estimate_motion",
    "fuse_gop",
    "keyframe_promote",
    "load_model",
    "make_pretrain_dataset",
    "plan_budget",
    "pretrain",
    "pretrain_forward",
    "retrieval_eval",
    "sample_gops",
    "save_model",
    "synth_video",
    "tokens_per_gop",
    "validate_stream",
    "warp",
]
