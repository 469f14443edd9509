"""Command-line pipeline: synth -> encode -> fuse -> tokenize, plus planning,
training, retrieval evaluation, and stream statistics.

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import container, fusion, synth, tokenizer
from .codec import EncoderParams, StreamIntegrityError, decode, encode
from .checkpoint import CheckpointError
from .container import ContainerError
from .pretrain import (
    PretrainConfig,
    load_model,
    make_pretrain_dataset,
    pretrain,
    retrieval_eval,
    save_model,
)
from .streams import VideoConfig

USAGE_EXIT = 1
DATA_EXIT = 2


class CliError(Exception):
    """Data or format problem; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _atomic_text(path: str, text: str) -> None:
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(tmp_fd, "w") as fh:
            fh.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="codectok", description=__doc__)
    parser.add_argument(
        "--deterministic", action="store_true",
        help="suppress timing lines so output is byte-stable",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic raw video")
    p.add_argument("--kind", choices=synth.KINDS, default="moving_rect")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="raw video (+ JSON sidecar) -> CPVS stream")
    p.add_argument("raw")
    p.add_argument("out")
    p.add_argument("--gop", type=int, default=240)
    p.add_argument("--block", type=int, default=16)
    p.add_argument("--radius", type=int, default=8)

    p = sub.add_parser("decode", help="CPVS stream -> raw video (+ JSON sidecar)")
    p.add_argument("stream")
    p.add_argument("out")

    p = sub.add_parser("fuse", help="fuse P-frames and optionally promote keyframes")
    p.add_argument("stream")
    p.add_argument("out")
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--keyframes", type=int, default=1)

    p = sub.add_parser("tokenize", help="CPVS stream -> token JSONL via a checkpoint")
    p.add_argument("stream")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cap", type=int, default=tokenizer.DEFAULT_GOP_CAP,
                   help="uniform GOP sampling cap")

    p = sub.add_parser("plan", help="token-budget planner")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--gop", type=int, default=240)
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--keyframes", type=int, default=1)
    p.add_argument("--m", type=int, default=210)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--overhead", type=int, default=0)

    p = sub.add_parser("pretrain", help="train the delta-encoder on synthetic data")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--k-tau", type=int, default=4)
    p.add_argument("--k-delta", type=int, default=4)
    p.add_argument("--videos", type=int, default=12)
    p.add_argument("--video-frames", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")

    p = sub.add_parser("retrieval-eval", help="next-frame retrieval report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data-seed", type=int, default=900)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--video-frames", type=int, default=8)
    p.add_argument("--report", required=True)

    p = sub.add_parser("stats", help="per-GOP token accounting and residual energy")
    p.add_argument("stream")
    p.add_argument("--m", type=int, default=210)
    p.add_argument("--n", type=int, default=8)

    p = sub.add_parser("scaling-curve", help="duration-vs-budget CSV")
    p.add_argument("--out", required=True)

    return parser


def _eval_videos(args, cfg: VideoConfig) -> list[list[np.ndarray]]:
    kinds = [k for k in synth.KINDS if k != "noise_drift"]
    return [
        synth.synth_video(kinds[i % len(kinds)], args.data_seed * 1000 + i, cfg,
                          args.video_frames)
        for i in range(args.videos)
    ]


def _cmd_synth(args) -> int:
    cfg = VideoConfig(
        width=args.width, height=args.height, channels=args.channels,
        block_size=16, gop_size=max(args.frames, 1), fps=args.fps, fusion_window=1,
    )
    frames = synth.synth_video(args.kind, args.seed, cfg, args.frames)
    container.write_raw_video(frames, args.fps, args.out)
    print(f"wrote {args.frames} frames to {args.out}")
    return 0


def _cmd_encode(args) -> int:
    frames, desc = container.read_raw_video(args.raw)
    cfg = VideoConfig(
        width=desc["width"], height=desc["height"], channels=desc["channels"],
        block_size=args.block, gop_size=args.gop, fps=desc["fps"], fusion_window=1,
    )
    stream = encode(frames, cfg, EncoderParams(search_radius=args.radius))
    written = container.write_stream(stream, args.out)
    print(f"encoded {len(frames)} frames -> {args.out} ({written} bytes)")
    return 0


def _cmd_decode(args) -> int:
    stream = container.read_stream(args.stream)
    frames = decode(stream)
    container.write_raw_video(frames, stream.config.fps, args.out)
    print(f"decoded {len(frames)} frames -> {args.out}")
    return 0


def _cmd_fuse(args) -> int:
    stream = container.read_stream(args.stream)
    fused = fusion.fuse_gop(stream, fusion.FusionPlan(window=args.window))
    promoted = fusion.keyframe_promote(fused, args.keyframes)
    written = container.write_stream(promoted, args.out)
    n_i = sum(f.is_iframe for f in promoted.frames)
    print(
        f"fused window={args.window} keyframes={args.keyframes}: "
        f"{len(promoted.frames)} slots ({n_i} I) -> {args.out} ({written} bytes)"
    )
    return 0


def _cmd_tokenize(args) -> int:
    stream = container.read_stream(args.stream)
    model, _, embedder = load_model(args.model)
    mc = model.config
    if (stream.config.height, stream.config.width, stream.config.channels) != (
        mc.height, mc.width, mc.channels
    ):
        raise CliError(
            f"stream frames {stream.config.frame_shape} do not match "
            f"checkpoint frames {(mc.height, mc.width, mc.channels)}"
        )
    period = stream.frames_per_gop
    total_gops = (len(stream.frames) + period - 1) // period
    sampled = tokenizer.sample_gops(total_gops, cap=args.cap)
    tokens = tokenizer.build_token_stream(stream, embedder, model, sampled)
    buf = io.StringIO()
    for e in tokens.entries:
        rec = {"role": e.role, "frame_index": e.frame_index,
               "tokens": np.asarray(e.tokens, dtype=np.float32).tolist()}
        buf.write(json.dumps(rec) + "\n")
    _atomic_text(args.out, buf.getvalue())
    print(
        f"tokenized {len(tokens.entries)} entries ({tokens.total_tokens} tokens, "
        f"{len(sampled)}/{total_gops} GOPs) -> {args.out}"
    )
    return 0


def _cmd_plan(args) -> int:
    q = tokenizer.BudgetQuery(
        fps=args.fps, gop_size=args.gop, fusion_window=args.window,
        keyframes_per_gop=args.keyframes, m_tokens=args.m, n_tokens=args.n,
        context_budget=args.budget, per_frame_overhead=args.overhead,
    )
    plan = tokenizer.plan_budget(q)
    if not plan.covered:
        raise CliError(
            f"no coverage: budget {args.budget} is below one GOP "
            f"({plan.tokens_per_gop} tokens)"
        )
    print(
        f"{plan.max_gops} GOPs / {plan.max_duration_seconds:g} s "
        f"({plan.tokens_per_gop} tokens/GOP, {plan.tokens_used} of {args.budget} used)"
    )
    return 0


def _cmd_pretrain(args, deterministic: bool) -> int:
    from .delta_encoder import DeltaEncoder, DeltaEncoderConfig, PatchEmbedder, PretrainHeads

    video_cfg = VideoConfig(
        width=args.width, height=args.height, channels=args.channels,
        block_size=16, gop_size=args.video_frames, fps=30, fusion_window=1,
    )
    enc_cfg = DeltaEncoderConfig(
        height=args.height, width=args.width, channels=args.channels,
        d=args.d, heads=args.heads, k_tau=args.k_tau, k_delta=args.k_delta,
        seed=args.seed,
    )
    embedder = PatchEmbedder(args.height, args.width, args.channels, args.d, seed=args.seed)
    model = DeltaEncoder(enc_cfg)
    heads = PretrainHeads(enc_cfg)
    dataset = make_pretrain_dataset(
        video_cfg, embedder, data_seed=args.data_seed,
        num_videos=args.videos, frames_per_video=args.video_frames,
    )
    start = time.perf_counter()
    history = pretrain(
        dataset, model, heads,
        PretrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                          warmup_steps=args.warmup, seed=args.seed),
    )
    elapsed = time.perf_counter() - start
    save_model(args.out, model, heads, embedder)
    if args.loss_csv:
        _atomic_text(args.loss_csv, history.to_csv())
    smoothed = history.smoothed()
    print(
        f"pretrained {args.steps} steps on {len(dataset)} samples: "
        f"loss {history.losses[0]:.4f} -> {history.losses[-1]:.4f} "
        f"(smoothed {smoothed[-1]:.4f}) -> {args.out}"
    )
    if not deterministic:
        print(f"elapsed: {elapsed:.1f}s")
    return 0


def _cmd_retrieval_eval(args) -> int:
    model, heads, embedder = load_model(args.ckpt)
    mc = model.config
    video_cfg = VideoConfig(
        width=mc.width, height=mc.height, channels=mc.channels,
        block_size=16, gop_size=args.video_frames, fps=30, fusion_window=1,
    )
    videos = _eval_videos(args, video_cfg)
    report = retrieval_eval(videos, model, heads, embedder, video_cfg)
    buf = io.StringIO()
    json.dump(report, buf, indent=2, sort_keys=True)
    buf.write("\n")
    _atomic_text(args.report, buf.getvalue())
    ours = report["ours"]["recall@1"]
    base = report["baseline"]["recall@1"]
    print(
        f"recall@1 ours {ours:.4f} vs baseline {base:.4f} "
        f"({report['num_queries']} queries) -> {args.report}"
    )
    return 0


def _cmd_stats(args) -> int:
    stream = container.read_stream(args.stream)
    period = stream.frames_per_gop
    print(f"frames: {len(stream.frames)}  per-GOP slots: {period}  "
          f"fused: {stream.is_fused}")
    print("gop  i_frames  p_frames  tokens  residual_abs_sum  residual_abs_mean")
    for g, start in enumerate(range(0, len(stream.frames), period)):
        gop = stream.frames[start : start + period]
        n_i = sum(f.is_iframe for f in gop)
        n_p = len(gop) - n_i
        tokens = n_i * args.m + n_p * args.n
        abs_sum = int(sum(np.abs(f.residual).sum() for f in gop if not f.is_iframe))
        denom = sum(f.residual.size for f in gop if not f.is_iframe)
        abs_mean = abs_sum / denom if denom else 0.0
        print(f"{g:>3}  {n_i:>8}  {n_p:>8}  {tokens:>6}  {abs_sum:>16}  {abs_mean:>17.4f}")
    return 0


def _cmd_scaling_curve(args) -> int:
    rows = tokenizer.scaling_curve()
    buf = io.StringIO()
    buf.write("config_label,context_budget,max_duration_seconds\n")
    for label, budget, duration in rows:
        buf.write(f"{label},{budget},{duration:.1f}\n")
    _atomic_text(args.out, buf.getvalue())
    print(f"wrote {len(rows)} rows -> {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "encode":
            return _cmd_encode(args)
        if args.command == "decode":
            return _cmd_decode(args)
        if args.command == "fuse":
            return _cmd_fuse(args)
        if args.command == "tokenize":
            return _cmd_tokenize(args)
        if args.command == "plan":
            return _cmd_plan(args)
        if args.command == "pretrain":
            return _cmd_pretrain(args, args.deterministic)
        if args.command == "retrieval-eval":
            return _cmd_retrieval_eval(args)
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command == "scaling-curve":
            return _cmd_scaling_curve(args)
        parser.error(f"unknown command {args.command!r}")
    except (CliError, ContainerError, CheckpointError, StreamIntegrityError,
            ValueError, OSError) as exc:
        print(f"codectok: error: {exc}", file=sys.stderr)
        return DATA_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
