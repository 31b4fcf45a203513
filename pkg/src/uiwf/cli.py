"""Command-line entry point: dedup, synth, train, eval, stats,
export-embeddings.

Exit codes: 0 success, 1 usage error, 2 data error. Every run writes a
provenance file (arguments, seed, config digest, toolkit version) into its
output directory; timestamps live only there, so all other outputs are
byte-stable for a fixed seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (DatasetManifest, FrameRecord, ManifestError, label_stats,
                      load_image, load_manifest, save_manifest)
from .labels import ChainLabel, ContextValue, LabelRegistry
from .metrics import embed_records, evaluate, export_embeddings
from .model import load_checkpoint
from .motion import MotionConfig, kept_frame_indices, motion_det
from .synthgen import AssetDB, augment_dataset
from .trainer import TrainConfig, train

log = logging.getLogger("uiwf")

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract reserves 2 for
    # data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("UIWF_SEED")
    if env is not None:
        return int(env)
    return 0


def _write_provenance(out_dir: Path, args_list: list[str], seed: int,
                      config_obj) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(config_obj, sort_keys=True).encode("utf-8")
    prov = {
        "args": args_list,
        "seed": seed,
        "config_digest": hashlib.sha256(blob).hexdigest(),
        "config": config_obj,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(out_dir / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(prov, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_registry(args) -> LabelRegistry:
    if getattr(args, "registry", None):
        return LabelRegistry.from_file(args.registry)
    return LabelRegistry.default()


def _frame_index(path: Path) -> int:
    m = re.fullmatch(r"(\d+)", path.stem)
    if not m:
        raise ManifestError(f"{path}: frame filename must be <index>.png")
    return int(m.group(1))


def cmd_dedup(args) -> int:
    root = Path(args.in_dir)
    if not root.is_dir():
        raise ManifestError(f"input directory not found: {root}")
    registry = _load_registry(args)
    labels_by_video: dict[str, tuple[str, str]] = {}
    if args.labels:
        for lineno, line in enumerate(
                Path(args.labels).read_text(encoding="utf-8").splitlines(),
                start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(
                    f"{args.labels}:{lineno}: expected video<TAB>software"
                    f"<TAB>view")
            labels_by_video[parts[0]] = (parts[1], parts[2])

    config = MotionConfig(
        gaussian_kernel=(args.kg, args.kg),
        dilation_kernel=(args.kd, args.kd),
        binarize_threshold=args.tb,
        contour_area_threshold=args.tc,
    )
    records = []
    for video_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        vid = video_dir.name
        if vid in labels_by_video:
            software, view = labels_by_video[vid]
        elif args.software and args.view:
            software, view = args.software, args.view
        else:
            raise ManifestError(
                f"no label for video {vid!r}: pass --labels or "
                f"--software/--view")
        frame_paths = sorted(video_dir.glob("*.png"), key=_frame_index)
        if not frame_paths:
            continue
        frames = [load_image(p) for p in frame_paths]
        transitions = motion_det(frames, config)
        kept = kept_frame_indices(transitions)
        log.info("dedup %s: %d/%d frames kept", vid, len(kept), len(frames))
        for idx in kept:
            records.append(FrameRecord(
                video_id=vid,
                frame_index=_frame_index(frame_paths[idx]),
                image_path=str(frame_paths[idx].relative_to(root)),
                label=ChainLabel(software, view, ContextValue.NONE),
                context_observed=False,
                synthetic=False,
                split=args.split,
            ))
    manifest = DatasetManifest(root, registry, records)
    out_path = Path(args.out_manifest)
    save_manifest(manifest, out_path)
    _write_provenance(out_path.parent, sys.argv[1:], 0, {
        "tc": args.tc, "tb": args.tb, "kg": args.kg, "kd": args.kd,
    })
    return 0


def cmd_synth(args) -> int:
    seed = _resolve_seed(args)
    registry = _load_registry(args)
    manifest = load_manifest(args.manifest, registry)
    db = AssetDB.from_directory(args.assets)
    out_manifest = augment_dataset(manifest, db, args.fraction, seed)
    out_dir = Path(args.out)
    save_manifest(out_manifest, out_dir / "manifest.jsonl")
    _write_provenance(out_dir, sys.argv[1:], seed,
                      {"fraction": args.fraction, "assets": str(args.assets)})
    n_synth = sum(1 for r in out_manifest.records if r.synthetic)
    log.info("synth: %d synthetic records added", n_synth)
    return 0


def cmd_train(args) -> int:
    registry = _load_registry(args)
    manifest = load_manifest(args.manifest, registry)
    config = TrainConfig.from_file(args.config) if args.config \
        else TrainConfig()
    if args.seed is not None or os.environ.get("UIWF_SEED"):
        config = TrainConfig.from_json(
            {**config.to_json(), "seed": _resolve_seed(args)})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_provenance(out_dir, sys.argv[1:], config.seed, config.to_json())
    train(manifest, config, out_dir)
    log.info("train: wrote checkpoints to %s", out_dir)
    return 0


def cmd_eval(args) -> int:
    registry = _load_registry(args)
    manifest = load_manifest(args.manifest, registry)
    params, encoder = load_checkpoint(args.ckpt)
    levels = args.levels.split(",")
    seed = _resolve_seed(args)
    report = evaluate(params, encoder, manifest, levels=levels, seed=seed)
    out_path = Path(args.out)
    report.save(out_path)
    _write_provenance(out_path.parent, sys.argv[1:], seed,
                      {"levels": levels, "ckpt": str(args.ckpt)})
    for level, block in report.per_level.items():
        log.info("eval %s: AMI=%.4f P@1=%.4f R-Prec=%.4f mAP@R=%.4f",
                 level, block["ami"], block["precision_at_1"],
                 block["r_precision"], block["map_at_r"])
    return 0


def cmd_stats(args) -> int:
    registry = _load_registry(args)
    manifest = load_manifest(args.manifest, registry)
    table = label_stats(manifest, args.level)
    for key, pct in table.items():
        name = key if isinstance(key, str) else " / ".join(str(k) for k in key)
        print(f"{name}\t{pct:.2f}")
    return 0


def cmd_export_embeddings(args) -> int:
    registry = _load_registry(args)
    manifest = load_manifest(args.manifest, registry)
    params, encoder = load_checkpoint(args.ckpt)
    records = manifest.split_records(args.split)
    if not records:
        raise ManifestError(f"manifest has no {args.split!r} records")
    emb = embed_records(params, encoder, manifest, records, head=args.head)
    out_path = Path(args.out)
    export_embeddings(emb, out_path)
    _write_provenance(out_path.parent, sys.argv[1:], 0,
                      {"head": args.head, "split": args.split})
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="uiwf", description=__doc__)
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed (fallback: UIWF_SEED env, then 0)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("dedup", help="drop near-duplicate frames")
    p.add_argument("--in", dest="in_dir", required=True,
                   help="directory with <video_id>/<frame_index>.png")
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--tc", type=float, required=True,
                   help="contour area threshold, px^2 (per-video tuning knob)")
    p.add_argument("--tb", type=float, default=40.0)
    p.add_argument("--kg", type=int, default=5)
    p.add_argument("--kd", type=int, default=5)
    p.add_argument("--labels", help="TSV: video_id, software, view")
    p.add_argument("--software")
    p.add_argument("--view")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--registry")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("synth", help="add synthetic context instances")
    p.add_argument("--manifest", required=True)
    p.add_argument("--assets", required=True)
    p.add_argument("--fraction", type=float, default=0.6666)
    p.add_argument("--out", required=True)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train encoder and projection heads")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="TrainConfig as JSON or TOML")
    p.add_argument("--out", required=True)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval + clustering metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--levels", default="svc")
    p.add_argument("--out", required=True)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="label distribution table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--level", choices=["s", "sv", "svc"], default="sv")
    p.add_argument("--registry")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export-embeddings",
                       help="dump embeddings for external projection")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--head", default="svc")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1
        else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ManifestError, FileNotFoundError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"uiwf: {exc}\n")
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
