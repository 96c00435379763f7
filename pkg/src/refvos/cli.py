"""Command line front-end: run, eval, ablate, simulate."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .bundle import load_bundle
from .context import dump_camera_model
from .geometry import BinaryMask, MaskSequence
from .metrics import evaluate_masks
from .pipeline import (
    PipelineConfig,
    prepare_perception,
    render_overlays,
    run_ablation_suite,
    run_pipeline,
    write_run_result,
)
from .simulator import Scenario, scene_spec_from_dict, write_scene
from .tracking import dump_trajectories


def _load_config(path: str | None, offline: bool) -> PipelineConfig:
    config = PipelineConfig.from_file(path) if path else PipelineConfig()
    if offline:
        config = config.replace(reasoner=dataclasses.replace(config.reasoner, offline=True))
    return config


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config, args.offline)
    bundle = load_bundle(args.bundle)
    if args.query:
        queries = [args.query]
    else:
        queries = [
            line.strip() for line in Path(args.queries).read_text().splitlines() if line.strip()
        ]
    out_root = Path(args.out)
    prepared = prepare_perception(bundle, config)
    for i, query in enumerate(queries):
        result = run_pipeline(bundle, query, config, prepared=prepared)
        out_dir = out_root if len(queries) == 1 else out_root / f"expr_{i:03d}"
        write_run_result(out_dir, result)
        if args.overlay:
            render_overlays(result, bundle, out_dir / "overlays")
        if args.debug_dump:
            (out_dir / "tracks.txt").write_text(dump_trajectories(prepared.tracks) + "\n")
            (out_dir / "camera.txt").write_text(dump_camera_model(prepared.camera) + "\n")
        print(f"{bundle.video_id} [{i}] selected={list(result.selected_ids)} -> {out_dir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    pred_doc = json.loads((Path(args.pred) / "results.json").read_text())
    gt_doc = json.loads((Path(args.gt) / "ground_truth.json").read_text())
    pred = MaskSequence(
        pred_doc["video_id"], tuple(BinaryMask.from_coco(m) for m in pred_doc["masks"])
    )
    gt = MaskSequence("gt", tuple(BinaryMask.from_coco(m) for m in gt_doc["target_masks"]))
    report = evaluate_masks(pred, gt, radius=args.boundary_radius)
    doc = {
        "j_mean": report.j_mean,
        "f_mean": report.f_mean,
        "jf_mean": report.jf_mean,
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args.config, offline=True)
    scenarios = []
    for path in sorted(Path(args.scenes).glob("*.json")):
        doc = json.loads(path.read_text())
        spec = scene_spec_from_dict(doc["scene"] if "scene" in doc else doc)
        scenarios.append(Scenario(name=spec.name, spec=spec, seed=doc.get("seed", 0)))
    if not scenarios:
        print(f"no scene files under {args.scenes}", file=sys.stderr)
        return 2
    report = run_ablation_suite(scenarios, config)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    Path(args.out).write_text(text + "\n")
    print(json.dumps({"reasoning": report.reasoning}, indent=2, sort_keys=True))
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.spec).read_text())
    spec = scene_spec_from_dict(doc["scene"] if "scene" in doc else doc)
    out = write_scene(args.out, spec, args.seed)
    print(f"scene '{spec.name}' written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refvos",
        description="Segment the video object a language expression refers to.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline on a perception bundle")
    run.add_argument("--bundle", required=True, help="bundle directory")
    group = run.add_mutually_exclusive_group(required=True)
    group.add_argument("--query", help="referring expression")
    group.add_argument("--queries", help="file with one expression per line")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--offline", action="store_true", help="never call the endpoint")
    run.add_argument("--overlay", action="store_true", help="write mask overlays")
    run.add_argument("--debug-dump", action="store_true", help="write track/camera dumps")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="score a run against ground truth")
    ev.add_argument("--pred", required=True, help="directory holding results.json")
    ev.add_argument("--gt", required=True, help="directory holding ground_truth.json")
    ev.add_argument("--out", help="optional report file")
    ev.add_argument("--boundary-radius", type=int, default=None)
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="run reasoning/context ablations over scenes")
    ab.add_argument("--scenes", required=True, help="directory of scene spec JSON files")
    ab.add_argument("--out", required=True, help="report JSON path")
    ab.add_argument("--config", help="JSON config file")
    ab.set_defaults(func=_cmd_ablate)

    sim = sub.add_parser("simulate", help="render a synthetic scene to a bundle")
    sim.add_argument("--spec", required=True, help="scene spec JSON file")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output bundle directory")
    sim.set_defaults(func=_cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
