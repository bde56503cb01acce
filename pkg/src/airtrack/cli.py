"""Command-line front end: phantom, blobs, track, eval and the full pipeline.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .blobs import Measurement, detect_blobs
from .config import PipelineConfig, describe_options, dump_config, load_config
from .errors import ConfigError, NumericalError, VolumeFormatError
from .evaluation import (
    CenterlineMetrics,
    branch_recall,
    centerline_distance,
    format_table,
    region_grow,
    voxel_points,
)
from .formats import (
    branch_record,
    read_branches,
    read_json,
    read_measurements,
    write_branches,
    write_json,
    write_measurements,
)
from .phantom import PhantomTree, corrupt, generate_tree, occlusion_slabs, rasterize
from .tracker import Branch, track_all
from .volume import Volume, load_volume, save_volume

logger = logging.getLogger("airtrack")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


# -- stages -----------------------------------------------------------------

def make_phantom(cfg: PipelineConfig) -> tuple[Volume, PhantomTree]:
    """Rendered (and corrupted) phantom volume plus its ground-truth tree."""
    tree = generate_tree(cfg.phantom_spec())
    vol = rasterize(tree, cfg.phantom_dims, cfg.phantom_spacing)
    boxes = occlusion_slabs(tree, cfg.occlusion_slabs, cfg.occlusion_thickness)
    boxes += cfg.explicit_occlusions()
    if cfg.noise_sigma > 0 or boxes:
        vol = corrupt(vol, cfg.noise_sigma, boxes, cfg.rng_seed)
    return vol, tree


def _volume_path(prefix) -> str:
    return os.fspath(prefix) + ".mhd"


def _truth_path(prefix) -> str:
    return os.fspath(prefix) + ".truth.json"


def read_truth(path) -> PhantomTree:
    doc = read_json(path)
    try:
        return PhantomTree.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{os.fspath(path)}: malformed tree ({exc!r})") from None


def cmd_phantom(cfg: PipelineConfig, out_prefix) -> tuple[Volume, PhantomTree]:
    vol, tree = make_phantom(cfg)
    save_volume(vol, _volume_path(out_prefix))
    write_json(_truth_path(out_prefix), tree.to_json())
    logger.info("phantom: %d branches -> %s", len(tree.branches), _volume_path(out_prefix))
    return vol, tree


def cmd_blobs(volume_path, cfg: PipelineConfig, out_path) -> list[Measurement]:
    vol = load_volume(volume_path)
    ms = detect_blobs(vol, cfg.blob_config())
    write_measurements(out_path, ms)
    logger.info("blobs: %d measurements -> %s", len(ms), out_path)
    return ms


def cmd_track(volume_path, measurements_path, cfg: PipelineConfig, out_path) -> list[Branch]:
    vol = load_volume(volume_path)
    ms = read_measurements(measurements_path)
    tcfg = cfg.tracker_config()
    branches = track_all(ms, vol, tcfg)
    write_branches(out_path, [branch_record(b) for b in branches], tcfg.as_dict())
    logger.info("track: %d branches, %d accepted -> %s",
                len(branches), sum(b.accepted for b in branches), out_path)
    return branches


def accepted_points(branches) -> np.ndarray:
    pts = [b.positions() for b in branches if b.accepted and len(b)]
    return np.vstack(pts) if pts else np.empty((0, 3))


def cmd_eval(branches_path, truth_path, cfg: PipelineConfig, out_path) -> CenterlineMetrics:
    records, _ = read_branches(branches_path)
    tree = read_truth(truth_path)
    m = centerline_distance(accepted_points(records), tree.samples())
    write_json(out_path, m.to_json())
    logger.info("eval: d_FP %.3f  d_FN %.3f  d_err %.3f", m.d_fp, m.d_fn, m.d_err)
    return m


@dataclass
class PipelineResult:
    volume: Volume
    tree: PhantomTree
    measurements: list[Measurement]
    branches: list[Branch]
    metrics: dict[str, CenterlineMetrics]
    recall: dict[str, float]
    timings: dict[str, float] = field(default_factory=dict)


def run_pipeline(cfg: PipelineConfig, workdir) -> PipelineResult:
    """Phantom -> blobs -> track -> eval, plus the region-growing comparison."""
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    timings = {}

    t = time.perf_counter()
    _, tree = cmd_phantom(cfg, work / "phantom")
    timings["phantom"] = time.perf_counter() - t

    t = time.perf_counter()
    ms = cmd_blobs(_volume_path(work / "phantom"), cfg, work / "blobs.json")
    timings["blobs"] = time.perf_counter() - t

    t = time.perf_counter()
    branches = cmd_track(_volume_path(work / "phantom"), work / "blobs.json", cfg,
                         work / "branches.json")
    timings["track"] = time.perf_counter() - t

    truth = tree.samples()
    rts = cmd_eval(work / "branches.json", _truth_path(work / "phantom"), cfg,
                   work / "metrics.json")

    # baseline: region growing from the root of the tree on the stored volume
    vol = load_volume(_volume_path(work / "phantom"))
    rg_idx = region_grow(vol, cfg.rg_threshold, tree.branches[0].points[0])
    rg_pts = voxel_points(vol, rg_idx)
    rows = {
        "RG": centerline_distance(rg_pts, truth),
        "RTS": rts,
        "RTS+RG": centerline_distance(np.vstack([accepted_points(branches), rg_pts]), truth),
    }
    accepted = [b for b in branches if b.accepted]
    recall = {
        "accepted": branch_recall(accepted, tree, cfg.recall_tol),
        "all": branch_recall(branches, tree, cfg.recall_tol),
    }
    table = format_table(list(rows.items()))
    (work / "summary.txt").write_text(table, encoding="utf-8")
    write_json(work / "summary.json", {
        "rows": {k: m.to_json() for k, m in rows.items()},
        "recall": recall,
        "n_measurements": len(ms),
        "n_branches": len(branches),
        "n_accepted": len(accepted),
        "config": cfg.as_dict(),
    })
    logger.info("\n%s", table.rstrip())
    logger.info("timings: %s", ", ".join(f"{k} {v:.1f}s" for k, v in timings.items()))
    return PipelineResult(vol, tree, ms, branches, rows, recall, timings)


# -- argument handling --------------------------------------------------------

def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS defaults let the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                   help="flat key = value config file")
    p.add_argument("--seed", type=int, metavar="INT", default=argparse.SUPPRESS,
                   help="override rng_seed")
    p.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS,
                   help="print the resolved config and write nothing")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                   help="only report errors")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog="airtrack",
        description="Extract tube trees from 3D volumes with blob measurements and an RTS smoother.",
        epilog="config keys (default, [unit]):\n" + describe_options(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("phantom", parents=[common], help="render a synthetic tree phantom")
    p.add_argument("out_prefix", help="writes PREFIX.mhd/.raw and PREFIX.truth.json")

    p = sub.add_parser("blobs", parents=[common], help="detect multi-scale blob measurements")
    p.add_argument("volume", help="input .mhd volume")
    p.add_argument("out", help="output measurement JSON")

    p = sub.add_parser("track", parents=[common], help="track and validate branches")
    p.add_argument("volume", help="input .mhd volume (for seed directions)")
    p.add_argument("measurements", help="measurement JSON from 'blobs'")
    p.add_argument("out", help="output branch JSON")

    p = sub.add_parser("eval", parents=[common], help="centerline metrics of accepted branches")
    p.add_argument("branches", help="branch JSON from 'track'")
    p.add_argument("truth", help="ground-truth tree JSON from 'phantom'")
    p.add_argument("out", help="output metrics JSON")

    p = sub.add_parser("pipeline", parents=[common],
                       help="phantom, blobs, track, eval and the region-growing comparison")
    p.add_argument("workdir", help="directory for all outputs")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    path = getattr(args, "config", None)
    cfg = load_config(path) if path is not None else PipelineConfig()
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = replace(cfg, rng_seed=seed).validate()
    return cfg


def _dispatch(args: argparse.Namespace, cfg: PipelineConfig) -> None:
    if args.command == "phantom":
        cmd_phantom(cfg, args.out_prefix)
    elif args.command == "blobs":
        cmd_blobs(args.volume, cfg, args.out)
    elif args.command == "track":
        cmd_track(args.volume, args.measurements, cfg, args.out)
    elif args.command == "eval":
        cmd_eval(args.branches, args.truth, cfg, args.out)
    else:
        run_pipeline(cfg, args.workdir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args)
        if getattr(args, "dry_run", False):
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        _dispatch(args, cfg)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OSError, VolumeFormatError) as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except (NumericalError, ValueError) as exc:
        logger.error("failed: %s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
