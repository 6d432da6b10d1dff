"""Pseudo-ground-truth curation from box-annotated video frames.

A frame's appearance segmentation is pruned to its boxes and then each box
goes through three tests in a fixed order: enclosing-rectangle overlap,
foreground density, and color-flow contrast. The frame is accepted only if
every box passes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import flowio, netpbm

log = logging.getLogger(__name__)

STAGES = ("box_overlap", "density", "flow_contrast")
OVERLAP_THRESHOLD = 0.75
DENSITY_THRESHOLD = 0.95
FLOW_CONTRAST_THRESHOLD = 30.0


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def clamp(self, width: int, height: int) -> "BoundingBox":
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"box {self} lies outside the {width}x{height} frame")
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def doubled(self, width: int, height: int) -> "BoundingBox":
        """Concentric box with twice the width and height, clamped to the frame."""
        grown = BoundingBox(self.x - self.w // 2, self.y - self.h // 2, 2 * self.w, 2 * self.h)
        return grown.clamp(width, height)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


@dataclass
class CurationRecord:
    frame_id: str
    outcomes: list[Optional[str]] = field(default_factory=list)  # per box: None = passed, else stage
    mask: Optional[np.ndarray] = None

    @property
    def accepted(self) -> bool:
        return self.mask is not None

    @property
    def stage(self) -> Optional[str]:
        """The first failing stage in box order, or None if accepted."""
        for outcome in self.outcomes:
            if outcome is not None:
                return outcome
        return None if self.outcomes else "box_overlap"

    def provenance(self) -> str:
        return f"{self.frame_id}\t" + ("accepted" if self.accepted else f"rejected:{self.stage}")


def mask_outside_boxes(seg: np.ndarray, boxes: Iterable[BoundingBox]) -> np.ndarray:
    inside = np.zeros(seg.shape, dtype=bool)
    for box in boxes:
        inside[box.slices()] = True
    return np.asarray(seg, dtype=bool) & inside


def enclosing_rectangle(seg: np.ndarray, box: BoundingBox) -> Optional[BoundingBox]:
    crop = np.asarray(seg, dtype=bool)[box.slices()]
    rows = np.flatnonzero(crop.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(crop.any(axis=0))
    return BoundingBox(
        box.x + int(cols[0]),
        box.y + int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )


def _intersection_area(a: BoundingBox, b: BoundingBox) -> int:
    w = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    h = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return max(w, 0) * max(h, 0)


def box_overlap_test(enclosing: BoundingBox, box: BoundingBox) -> bool:
    """IoU of the enclosing rectangle and the box is at least 75% (inclusive)."""
    inter = _intersection_area(enclosing, box)
    union = enclosing.area + box.area - inter
    # integer form of inter / union >= 3/4
    return 4 * inter >= 3 * union


def foreground_density_test(seg: np.ndarray, box: BoundingBox) -> bool:
    """Keep unless more than 95% of the box is foreground."""
    count = int(np.count_nonzero(np.asarray(seg, dtype=bool)[box.slices()]))
    return 20 * count <= 19 * box.area


def flow_contrast_test(color_flow: np.ndarray, box: BoundingBox) -> bool:
    height, width = color_flow.shape[:2]
    outer = box.doubled(width, height)
    img = color_flow.astype(np.float64)
    m_in = img[box.slices()].reshape(-1, 3).mean(axis=0)
    m_out = img[outer.slices()].reshape(-1, 3).mean(axis=0)
    return float(np.linalg.norm(m_in - m_out)) > FLOW_CONTRAST_THRESHOLD


def _box_stage(pruned: np.ndarray, box: BoundingBox, color_flow: np.ndarray) -> Optional[str]:
    enc = enclosing_rectangle(pruned, box)
    if enc is None or not box_overlap_test(enc, box):
        return "box_overlap"
    if not foreground_density_test(pruned, box):
        return "density"
    if not flow_contrast_test(color_flow, box):
        return "flow_contrast"
    return None


def curate_frame(
    seg: np.ndarray,
    boxes: list[BoundingBox],
    color_flow: np.ndarray,
    frame_id: str = "",
) -> CurationRecord:
    seg = np.asarray(seg, dtype=bool)
    if seg.shape != color_flow.shape[:2]:
        raise ValueError(f"segmentation {seg.shape} and flow image {color_flow.shape[:2]} differ in size")
    height, width = seg.shape
    boxes = [b.clamp(width, height) for b in boxes]
    pruned = mask_outside_boxes(seg, boxes)
    record = CurationRecord(frame_id, [_box_stage(pruned, b, color_flow) for b in boxes])
    if boxes and all(o is None for o in record.outcomes):
        record.mask = pruned
    return record


# --- dataset level ---------------------------------------------------------


@dataclass
class ManifestEntry:
    frame_id: str
    frame_path: Path
    flow_path: Path
    box_path: Path
    seg_path: Optional[Path] = None


@dataclass
class CurationResult:
    records: list[CurationRecord]
    skipped: list[tuple[str, str]]

    @property
    def accepted(self) -> int:
        return sum(r.accepted for r in self.records)

    @property
    def rejected(self) -> int:
        return sum(not r.accepted for r in self.records)

    def summary(self) -> str:
        return f"accepted={self.accepted} rejected={self.rejected}"


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Tab-separated ``frame_id, frame.ppm, flow.flo, boxes.txt[, seg.pgm]``.

    Relative paths resolve against the manifest's directory. The optional
    fifth column supplies a precomputed appearance segmentation.
    """
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (4, 5):
            raise ValueError(f"{path}:{lineno}: expected 4 or 5 tab-separated fields, got {len(cols)}")
        paths = [base / c for c in cols[1:]]
        entries.append(ManifestEntry(cols[0], *paths))
    return entries


def read_boxes(path: str | Path) -> list[BoundingBox]:
    boxes = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            x, y, w, h = (int(t) for t in line.split())
            boxes.append(BoundingBox(x, y, w, h))
    return boxes


Segmenter = Callable[[np.ndarray], np.ndarray]


def _curate_entry(entry: ManifestEntry, segmenter: Optional[Segmenter]) -> CurationRecord:
    frame = netpbm.read_ppm(entry.frame_path)
    flow = flowio.load_flo(entry.flow_path)
    boxes = read_boxes(entry.box_path)
    if entry.seg_path is not None:
        seg = netpbm.read_mask(entry.seg_path)
    elif segmenter is not None:
        seg = segmenter(frame)
    else:
        raise ValueError("no segmentation column and no appearance segmenter")
    if frame.shape[:2] != seg.shape or seg.shape != (flow.height, flow.width):
        raise ValueError(
            f"dimension mismatch: frame {frame.shape[:2]}, seg {seg.shape}, flow {(flow.height, flow.width)}"
        )
    return curate_frame(seg, boxes, flowio.flow_to_color(flow), entry.frame_id)


def curate_dataset(
    entries: list[ManifestEntry],
    segmenter: Optional[Segmenter] = None,
    jobs: int = 1,
) -> CurationResult:
    """Curate every manifest frame in frame_id order; bad inputs are logged and skipped."""
    ordered = sorted(entries, key=lambda e: e.frame_id)

    def work(entry):
        try:
            return _curate_entry(entry, segmenter)
        except (OSError, ValueError) as exc:
            log.warning("skipping frame %s: %s", entry.frame_id, exc)
            return str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, ordered))
    else:
        results = [work(e) for e in ordered]

    records, skipped = [], []
    for entry, res in zip(ordered, results):
        if isinstance(res, CurationRecord):
            records.append(res)
        else:
            skipped.append((entry.frame_id, res))
    return CurationResult(records, skipped)


def write_curation_outputs(result: CurationResult, outdir: str | Path) -> None:
    outdir = Path(outdir)
    masks = outdir / "masks"
    masks.mkdir(parents=True, exist_ok=True)
    for rec in result.records:
        if rec.accepted:
            target = masks / f"{rec.frame_id}.pgm"
            target.parent.mkdir(parents=True, exist_ok=True)
            netpbm.write_mask(target, rec.mask)
    lines = [rec.provenance() for rec in result.records]
    (outdir / "provenance.log").write_text("".join(line + "\n" for line in lines))
    summary = result.summary() + "\n"
    if result.skipped:
        summary += f"skipped={len(result.skipped)}\n"
    (outdir / "summary.txt").write_text(summary)
