"""Command line for the offline perception exporter."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from .export import ExportJob, export_bundle, export_embeddings


def _cmd_export(args: argparse.Namespace) -> int:
    job = ExportJob(
        video=Path(args.video),
        vocabulary=tuple(v.strip() for v in args.vocab.split(",") if v.strip()),
        keyframe_interval=args.tau,
        out_dir=Path(args.out),
        detector=args.detector,
        propagator=args.propagator,
        copy_frames=not args.no_frames,
    )
    out = export_bundle(job)
    print(f"bundle written to {out}")
    return 0


def _cmd_export_embeddings(args: argparse.Namespace) -> int:
    crops = json.loads(Path(args.crops).read_text()) if args.crops else []
    texts = [t.strip() for t in (args.texts or "").split(",") if t.strip()]
    out = export_embeddings(args.bundle, crops, texts, out_path=args.out, embedder=args.embedder)
    print(f"embeddings written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refvos-export",
        description="Export detections, propagations and embeddings as a perception bundle.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("export", help="detect and propagate over a video")
    ex.add_argument("--video", required=True, help="frame directory or video file")
    ex.add_argument("--vocab", required=True, help="comma-separated entity noun phrases")
    ex.add_argument("--tau", type=int, default=15, help="keyframe sampling interval")
    ex.add_argument("--out", required=True, help="bundle output directory")
    ex.add_argument("--detector", default="reference")
    ex.add_argument("--propagator", default="reference")
    ex.add_argument("--no-frames", action="store_true", help="skip copying frames into the bundle")
    ex.set_defaults(func=_cmd_export)

    emb = sub.add_parser("export-embeddings", help="add crop/text embeddings to a bundle")
    emb.add_argument("--bundle", required=True, help="existing bundle directory")
    emb.add_argument("--crops", help="JSON file of {track_id, frame, box} entries")
    emb.add_argument("--texts", help="comma-separated posture phrases")
    emb.add_argument("--out", help="output file (default: <bundle>/embeddings.json)")
    emb.add_argument("--embedder", default="reference")
    emb.set_defaults(func=_cmd_export_embeddings)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
