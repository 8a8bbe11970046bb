"""Command-line entry point: ``planekit <subcommand> [options]``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io, pipeline
from .config import load_config
from .errors import PlanekitError
from .metrics import MetricsReport, mean_rows, segmentation_metrics

DEPTH_KEYS = ("rel", "log10", "rms", "sigma1", "sigma2", "sigma3")
IBIMS_KEYS = ("pe_plan", "pe_orie", "dbe_acc", "dbe_comp", "dde_0", "dde_minus", "dde_plus")


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--config", type=Path, help="flat JSON configuration file")
    p.add_argument("--out", type=Path, default=Path("planekit-out"), help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def build_parser():
    parser = argparse.ArgumentParser(prog="planekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a synthetic dataset and manifest")
    _common(p)
    p.add_argument("--num-images", type=int, default=20)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--focal", type=float)
    p.add_argument("--layout", choices=("room", "plane"), default="room")
    p.add_argument("--extra-planes", type=int, default=2)
    p.add_argument("--sphere", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--noise", type=float, default=0.0, help="ground-truth depth noise (m)")
    p.add_argument("--pred-noise", type=float, default=0.01, help="predicted depth noise (m)")
    p.add_argument("--score-mode", choices=("random", "one"), default="random")
    p.add_argument("--depth-format", choices=("png", "pfm", "npy"), default="png")

    p = sub.add_parser("losses", help="loss breakdown and gradient checks for one sample")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--index", type=int, default=0, help="manifest record to evaluate")

    p = sub.add_parser("fit-planes", help="per-instance PCA and RANSAC plane fits")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--masks", choices=("gt", "pred"), default="gt")

    p = sub.add_parser("render-pd", help="render planar depth from fitted planes")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--depth-format", choices=("png", "pfm", "npy"), default="npy")

    for name, text in (("eval-depth", "standard depth metrics"),
                       ("eval-seg", "mask and box average precision"),
                       ("eval-ibims", "planarity, boundary and directed depth errors")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--manifest", type=Path, required=True)
    return parser


def cmd_synth(args, cfg):
    jobs = [pipeline.SynthJob(i, args.seed, str(args.out), args.width, args.height, args.focal,
                              args.layout, args.extra_planes, args.sphere, args.noise,
                              args.pred_noise, args.score_mode, args.depth_format)
            for i in range(args.num_images)]
    args.out.mkdir(parents=True, exist_ok=True)
    entries = pipeline.run_pool(pipeline.synth_one, jobs, args.jobs)
    io.write_manifest(args.out / "manifest.jsonl", entries)
    print(f"wrote {len(entries)} samples to {args.out / 'manifest.jsonl'}")


def cmd_losses(args, cfg):
    entries = io.read_manifest(args.manifest)
    if not 0 <= args.index < len(entries):
        raise PlanekitError(f"--index {args.index} outside manifest of {len(entries)} records")
    sample = pipeline.load_sample(entries[args.index])
    breakdown, checks = pipeline.compute_losses(sample, cfg, pipeline.image_seed(args.seed, args.index))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "losses.txt").write_text(breakdown.to_record())
    report = {"id": sample.id, "grad_check_max_rel_error": {k: float(v) for k, v in checks.items()},
              "grad_check_pass": {k: bool(v <= 1e-4) for k, v in checks.items()}}
    io.write_json(args.out / "grad_checks.json", report)
    sys.stdout.write(breakdown.to_record())
    for k, v in checks.items():
        print(f"grad_check_{k}={v:.3e}")


def cmd_fit_planes(args, cfg):
    entries = io.read_manifest(args.manifest)
    work = [(e, cfg, pipeline.image_seed(args.seed, i), args.masks == "pred") for i, e in enumerate(entries)]
    rows = [r for chunk in pipeline.run_pool(pipeline.fit_planes_one, work, args.jobs) for r in chunk]
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_json(args.out / "planes.json", rows)
    print(f"fitted {sum(r['status'] == 'ok' for r in rows)} of {len(rows)} instance/method pairs")


def cmd_render(args, cfg):
    entries = io.read_manifest(args.manifest)
    work = [(e, cfg, pipeline.image_seed(args.seed, i), str(args.out), args.depth_format)
            for i, e in enumerate(entries)]
    results = pipeline.run_pool(pipeline.render_one, work, args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_manifest(args.out / "manifest.jsonl", [r[0] for r in results])
    io.write_json(args.out / "render.json", [r[1] for r in results])
    print(f"rendered {len(results)} depth maps; manifest at {args.out / 'manifest.jsonl'}")


def _report(args, name, values, rows):
    report = MetricsReport(name, values, rows)
    report.write(args.out)
    sys.stdout.write(report.to_text())


def cmd_eval_depth(args, cfg):
    entries = io.read_manifest(args.manifest)
    rows = pipeline.run_pool(pipeline.eval_depth_one, entries, args.jobs)
    _report(args, "depth", {"images": len(rows), **mean_rows(rows, DEPTH_KEYS)}, rows)


def cmd_eval_seg(args, cfg):
    entries = io.read_manifest(args.manifest)
    pairs = pipeline.run_pool(pipeline.load_seg_pair, entries, args.jobs)
    preds, gts = [p for p, _ in pairs], [g for _, g in pairs]
    seg = segmentation_metrics(preds, gts, mask_threshold=cfg.mask_threshold)
    n_gt = sum(int(g.max(initial=0)) for g in gts)
    values = {"images": len(pairs), "gt_instances": n_gt,
              "detections": sum(len(p) for p in preds), **seg.as_dict()}
    rows = [{"id": e.id, "gt_instances": int(g.max(initial=0)), "detections": len(p)}
            for e, (p, g) in zip(entries, pairs)]
    _report(args, "segmentation", values, rows)


def cmd_eval_ibims(args, cfg):
    entries = io.read_manifest(args.manifest)
    rows = pipeline.run_pool(pipeline.eval_ibims_one, [(e, cfg) for e in entries], args.jobs)
    _report(args, "ibims", {"images": len(rows), **mean_rows(rows, IBIMS_KEYS)}, rows)


COMMANDS = {"synth": cmd_synth, "losses": cmd_losses, "fit-planes": cmd_fit_planes,
            "render-pd": cmd_render, "eval-depth": cmd_eval_depth, "eval-seg": cmd_eval_seg,
            "eval-ibims": cmd_eval_ibims}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except (PlanekitError, OSError, ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"planekit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
