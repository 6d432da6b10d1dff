"""Jaccard scoring, per-video / per-category aggregation and table rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import netpbm

REFERENCE_TABLES = ("davis", "segtrack", "youtube")


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; two empty masks score 1.0."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask dimensions differ: pred {pred.shape} vs gt {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def merge_objects(masks: Sequence[np.ndarray]) -> np.ndarray:
    if not masks:
        raise ValueError("merge_objects needs at least one mask")
    out = np.zeros(np.shape(masks[0]), dtype=bool)
    for m in masks:
        if np.shape(m) != out.shape:
            raise ValueError(f"mask dimensions differ: {np.shape(m)} vs {out.shape}")
        out |= np.asarray(m, dtype=bool)
    return out


def evaluate_video(preds: Sequence[np.ndarray], gts: Sequence[Optional[np.ndarray]]) -> float:
    """Unweighted mean Jaccard over the frames that have ground truth (gt not None)."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predicted frames but {len(gts)} ground-truth slots")
    scores = [jaccard(p, g) for p, g in zip(preds, gts) if g is not None]
    if not scores:
        raise ValueError("video has no annotated frames")
    return float(np.mean(scores))


@dataclass
class ReferenceRow:
    video: str
    method: str
    score: Optional[float]  # None for a missing table entry


@dataclass
class IoUReport:
    method: str
    per_frame: dict[str, list[float]] = field(default_factory=dict)
    per_video: dict[str, float] = field(default_factory=dict)
    per_category: Optional[dict[str, float]] = None
    mean: float = float("nan")


def parse_reference_csv(text: str) -> list[ReferenceRow]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or list(reader.fieldnames)[:3] != ["video", "method", "score"]:
        raise ValueError(f"reference CSV must start with header video,method,score; got {reader.fieldnames}")
    rows = []
    for rec in reader:
        raw = rec["score"].strip()
        rows.append(ReferenceRow(rec["video"], rec["method"], None if raw in ("-", "") else float(raw)))
    return rows


def read_reference_csv(path: str | Path) -> list[ReferenceRow]:
    return parse_reference_csv(Path(path).read_text())


def load_reference(name: str) -> list[ReferenceRow]:
    """One of the shipped per-video tables: ``davis``, ``segtrack`` or ``youtube``."""
    if name not in REFERENCE_TABLES:
        raise ValueError(f"unknown reference table {name!r}; choose from {REFERENCE_TABLES}")
    text = resources.files("fusionseg.data").joinpath(f"{name}.csv").read_text()
    return parse_reference_csv(text)


def read_categories(path: str | Path) -> dict[str, str]:
    """``video,category`` CSV (header required)."""
    with open(path, newline="") as fh:
        return {row["video"]: row["category"] for row in csv.DictReader(fh)}


def methods_of(rows: Iterable[ReferenceRow]) -> list[str]:
    seen: dict[str, None] = {}
    for r in rows:
        seen.setdefault(r.method, None)
    return list(seen)


def aggregate(
    rows: Iterable[ReferenceRow],
    mode: str = "per-video",
    categories: Optional[Mapping[str, str]] = None,
    method: Optional[str] = None,
) -> float:
    """Dataset mean for one method.

    ``per-video``: unweighted mean over videos with a score.
    ``per-category``: unweighted mean of per-category means.
    """
    rows = [r for r in rows if method is None or r.method == method]
    present = [r for r in rows if r.score is not None]
    if len({r.method for r in rows}) > 1:
        raise ValueError("rows span several methods; pass method=")
    if not present:
        raise ValueError("no scores to aggregate")
    if mode == "per-video":
        return float(np.mean([r.score for r in present]))
    if mode == "per-category":
        if categories is None:
            raise ValueError("per-category aggregation needs a video -> category mapping")
        groups: dict[str, list[float]] = {}
        for r in present:
            if r.video not in categories:
                raise ValueError(f"video {r.video!r} has no category label")
            groups.setdefault(categories[r.video], []).append(r.score)
        return float(np.mean([np.mean(v) for v in groups.values()]))
    raise ValueError(f"unknown aggregation mode {mode!r}")


def aggregate_table(
    rows: Sequence[ReferenceRow],
    mode: str = "per-video",
    categories: Optional[Mapping[str, str]] = None,
) -> dict[str, float]:
    return {m: aggregate(rows, mode, categories, method=m) for m in methods_of(rows)}


def round2(x: float) -> str:
    """Two decimals, halves rounded away from zero (on the shortest decimal repr)."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def render_table(
    rows: Sequence[ReferenceRow],
    mode: str = "per-video",
    categories: Optional[Mapping[str, str]] = None,
) -> tuple[str, str]:
    """Render a fixed-width text table and a CSV: one line per video, then the averages."""
    methods = methods_of(rows)
    videos: dict[str, None] = {}
    cell: dict[tuple[str, str], Optional[float]] = {}
    for r in rows:
        videos.setdefault(r.video, None)
        cell[(r.video, r.method)] = r.score
    means = aggregate_table(rows, mode, categories)

    def fmt(v):
        return "-" if v is None else round2(v)

    label = "Avg. IoU"
    body = [[v] + [fmt(cell.get((v, m))) for m in methods] for v in videos]
    footer = [label] + [round2(means[m]) for m in methods]
    header = ["video"] + methods
    widths = [max(len(line[i]) for line in [header, *body, footer]) for i in range(len(header))]

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join([first, *rest]).rstrip()

    rule = "-" * len(line(header))
    text_lines = [line(header), rule, *(line(b) for b in body), rule, line(footer)]
    text = "\n".join(text_lines) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(body)
    writer.writerow(footer)
    return text, buf.getvalue()


def rows_from_reports(reports: Sequence[IoUReport]) -> list[ReferenceRow]:
    rows = []
    for rep in reports:
        for video, score in rep.per_video.items():
            rows.append(ReferenceRow(video, rep.method, score))
    return rows


def _mask_files(root: Path) -> dict[str, Path]:
    return {p.relative_to(root).as_posix()[: -len(".pgm")]: p for p in sorted(root.rglob("*.pgm"))}


def evaluate_dirs(
    pred_dir: str | Path,
    gt_dir: str | Path,
    method: str = "prediction",
    categories: Optional[Mapping[str, str]] = None,
) -> IoUReport:
    """Score ``<dir>/<video>/<frame>.pgm`` masks; a flat directory is one video named ".".

    Predictions without ground truth are ignored; ground truth without a
    prediction is an error.
    """
    preds = _mask_files(Path(pred_dir))
    gts = _mask_files(Path(gt_dir))
    if not gts:
        raise ValueError(f"no ground-truth masks under {gt_dir}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ValueError(f"missing predictions for {len(missing)} frame(s), e.g. {missing[0]}")

    report = IoUReport(method)
    for key in sorted(gts):
        video = key.rsplit("/", 1)[0] if "/" in key else "."
        score = jaccard(netpbm.read_mask(preds[key]), netpbm.read_mask(gts[key]))
        report.per_frame.setdefault(video, []).append(score)
    report.per_video = {v: float(np.mean(s)) for v, s in report.per_frame.items()}
    video_rows = [ReferenceRow(v, method, s) for v, s in report.per_video.items()]
    if categories is not None:
        groups: dict[str, list[float]] = {}
        for v, s in report.per_video.items():
            groups.setdefault(categories[v], []).append(s)
        report.per_category = {c: float(np.mean(s)) for c, s in sorted(groups.items())}
        report.mean = aggregate(video_rows, "per-category", categories)
    else:
        report.mean = aggregate(video_rows, "per-video")
    return report
