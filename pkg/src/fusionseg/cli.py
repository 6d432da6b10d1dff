"""``fsk`` command line: flow-color, curate, train, segment, eval.

Exit codes: 0 success, 2 usage or input error, 1 internal failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import curation, evaluation, flowio, netpbm, network, training
from .config import ConfigError, RunConfig, load_config
from .numerics import load_checkpoint, restore_shapes, save_checkpoint

log = logging.getLogger("fusionseg")


class UsageError(Exception):
    """Bad arguments or unusable input; maps to exit code 2."""


# --- shared helpers ---------------------------------------------------------


@dataclass
class FrameEntry:
    frame_id: str
    frame: Optional[Path]
    flow: Optional[Path]
    mask: Optional[Path]


def read_frames_manifest(path: Path) -> list[FrameEntry]:
    """Tab-separated ``frame_id, frame.ppm, flow.flo[, mask.pgm]``; ``-`` marks an absent file."""
    if not path.is_file():
        raise UsageError(f"cannot read manifest {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (3, 4):
            raise UsageError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields")
        cols += ["-"] * (4 - len(cols))
        opt = [None if c == "-" else path.parent / c for c in cols[1:]]
        entries.append(FrameEntry(cols[0], *opt))
    return sorted(entries, key=lambda e: e.frame_id)


def _require(path: Optional[Path], what: str, frame_id: str) -> Path:
    if path is None:
        raise UsageError(f"frame {frame_id}: missing {what}")
    if not path.is_file():
        raise UsageError(f"frame {frame_id}: {what} file {path} not found")
    return path


def _load_stream(path: Optional[str], cfg: RunConfig, flag: str) -> network.Params:
    if path is None:
        raise UsageError(f"{flag} checkpoint is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag} checkpoint {p} not found")
    return restore_shapes(load_checkpoint(p.read_bytes()), network.stream_template(cfg.stream))


def _load_fusion(path: Optional[str]) -> network.Params:
    if path is None:
        raise UsageError("--fusion checkpoint is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"--fusion checkpoint {p} not found")
    return restore_shapes(load_checkpoint(p.read_bytes()), network.fusion_template())


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("FSK_JOBS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"FSK_JOBS must be an integer, got {env!r}")


def _map(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# --- commands -------------------------------------------------------------


def cmd_flow_color(args, cfg: RunConfig) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"flow file {src} not found")
    flow = flowio.read_flo(src.read_bytes())
    netpbm.write_ppm(args.output, flowio.flow_to_color(flow, args.max_mag))
    return 0


def cmd_curate(args, cfg: RunConfig) -> int:
    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise UsageError(f"cannot read manifest {manifest}")
    try:
        entries = curation.read_manifest(manifest)
    except (ValueError, UnicodeDecodeError) as exc:
        raise UsageError(str(exc)) from exc

    segmenter = None
    if args.appearance is not None:
        params = _load_stream(args.appearance, cfg, "--appearance")

        def segmenter(rgb):
            return network.predict_mask(network.infer_logits(params, rgb, cfg.stream))[0]

    elif any(e.seg_path is None for e in entries):
        raise UsageError("manifest rows without a segmentation column need --appearance")

    result = curation.curate_dataset(entries, segmenter, jobs=_jobs(args))
    curation.write_curation_outputs(result, args.outdir)
    print(result.summary())
    return 0


def _load_training_set(entries: list[FrameEntry], stream: str):
    data = []
    for e in entries:
        mask = netpbm.read_mask(_require(e.mask, "mask", e.frame_id))
        frame = flow = None
        if stream in ("appearance", "fusion"):
            frame = network.image_to_tensor(netpbm.read_ppm(_require(e.frame, "frame", e.frame_id)))[0]
        if stream in ("motion", "fusion"):
            color = flowio.flow_to_color(flowio.load_flo(_require(e.flow, "flow", e.frame_id)))
            flow = network.image_to_tensor(color)[0]
        for x in (frame, flow):
            if x is not None and x.shape[1:] != mask.shape:
                raise UsageError(f"frame {e.frame_id}: input {x.shape[1:]} and mask {mask.shape} differ in size")
        data.append((frame, flow, mask))
    return data


def cmd_train(args, cfg: RunConfig) -> int:
    entries = read_frames_manifest(Path(args.data))
    if not entries:
        raise UsageError("training manifest is empty")
    if args.stream == "fusion" and (args.appearance is None or args.motion is None):
        raise UsageError("fusion training needs both --appearance and --motion checkpoints")
    data = _load_training_set(entries, args.stream)
    out = Path(args.out)

    if args.stream == "fusion":
        app = _load_stream(args.appearance, cfg, "--appearance")
        mot = _load_stream(args.motion, cfg, "--motion")
        params, curve = training.train_fusion(network.init_fusion(), app, mot, data, cfg.train, cfg.stream)
    else:
        pairs = [(f if args.stream == "appearance" else m, mask) for f, m, mask in data]
        init = network.build_stream(cfg.stream, cfg.seed)
        params, curve = training.train_stream(init, pairs, cfg.train, cfg.stream)

    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(save_checkpoint(params))
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    loss_csv.write_text(training.loss_curve_csv(curve))
    print(f"iters={len(curve)} initial_loss={curve[0].loss:.6f} final_loss={curve[-1].loss:.6f}")
    return 0


def cmd_segment(args, cfg: RunConfig) -> int:
    entries = read_frames_manifest(Path(args.inputs))
    model = args.model
    needs_flow = model in ("motion", "joint", "flow-th", "flow-sal")
    needs_frame = model in ("appearance", "joint")
    for e in entries:
        if needs_flow:
            _require(e.flow, "flow", e.frame_id)
        if needs_frame:
            _require(e.frame, "frame", e.frame_id)

    app = _load_stream(args.appearance, cfg, "--appearance") if needs_frame else None
    mot = _load_stream(args.motion, cfg, "--motion") if model in ("motion", "joint") else None
    fusion = _load_fusion(args.fusion) if model == "joint" else None

    def run(e: FrameEntry) -> np.ndarray:
        flow = flowio.load_flo(e.flow) if needs_flow else None
        if model == "flow-th":
            return flowio.flow_threshold_segment(flow)
        if model == "flow-sal":
            return flowio.flow_saliency_segment(flow)
        a = network.infer_logits(app, netpbm.read_ppm(e.frame), cfg.stream) if app is not None else None
        m = network.infer_logits(mot, flowio.flow_to_color(flow), cfg.stream) if mot is not None else None
        if model == "appearance":
            logits = a
        elif model == "motion":
            logits = m
        else:
            if a.shape != m.shape:
                raise UsageError(f"frame {e.frame_id}: frame and flow sizes differ")
            logits = network.fusion_forward(fusion, a, m)
        return network.predict_mask(logits)[0]

    masks = _map(run, entries, _jobs(args))
    outdir = Path(args.outdir)
    for e, mask in zip(entries, masks):
        target = outdir / f"{e.frame_id}.pgm"
        target.parent.mkdir(parents=True, exist_ok=True)
        netpbm.write_mask(target, mask)
    print(f"frames={len(entries)} model={model}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    categories = None
    if args.categories:
        if not Path(args.categories).is_file():
            raise UsageError(f"categories file {args.categories} not found")
        categories = evaluation.read_categories(args.categories)
    mode = "per-category" if categories is not None else "per-video"

    if args.reference:
        if args.reference in evaluation.REFERENCE_TABLES:
            rows = evaluation.load_reference(args.reference)
        elif Path(args.reference).is_file():
            rows = evaluation.read_reference_csv(args.reference)
        else:
            raise UsageError(f"reference table {args.reference} not found")
    else:
        if args.pred is None or args.gt is None:
            raise UsageError("eval needs PRED_DIR and GT_DIR, or --reference")
        for d in (args.pred, args.gt):
            if not Path(d).is_dir():
                raise UsageError(f"directory {d} not found")
        report = evaluation.evaluate_dirs(args.pred, args.gt, args.method, categories)
        rows = evaluation.rows_from_reports([report])

    text, csv_text = evaluation.render_table(rows, mode, categories)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(csv_text)
    return 0


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--config", default=None, help="key=value configuration file")
    common.add_argument("--jobs", type=int, default=None, help="worker threads (default: $FSK_JOBS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fsk", description="Two-stream video object segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow-color", parents=[common], help="encode a .flo file as a color PPM")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--max-mag", type=float, default=None)
    p.set_defaults(func=cmd_flow_color)

    p = sub.add_parser("curate", parents=[common], help="generate pseudo-ground-truth masks")
    p.add_argument("manifest")
    p.add_argument("outdir")
    p.add_argument("--appearance", help="appearance checkpoint for rows without a segmentation")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("train", parents=[common], help="train a stream or the fusion head")
    p.add_argument("--stream", choices=("appearance", "motion", "fusion"), required=True)
    p.add_argument("--data", required=True, help="frames manifest with masks")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--appearance")
    p.add_argument("--motion")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", parents=[common], help="segment frames with a model or baseline")
    p.add_argument("--model", choices=("appearance", "motion", "joint", "flow-th", "flow-sal"), required=True)
    p.add_argument("--inputs", required=True, help="frames manifest")
    p.add_argument("outdir")
    p.add_argument("--appearance")
    p.add_argument("--motion")
    p.add_argument("--fusion")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", parents=[common], help="Jaccard evaluation and table rendering")
    p.add_argument("pred", nargs="?")
    p.add_argument("gt", nargs="?")
    p.add_argument("--reference", help="aggregate a reference CSV (or davis/segtrack/youtube)")
    p.add_argument("--categories", help="video,category CSV for per-category averaging")
    p.add_argument("--method", default="prediction")
    p.add_argument("--out", help="write the table as CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"fsk {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"fsk {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"fsk {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
