"""WIDER-style ground truth, detection files and average precision."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
import re
from typing import Dict, List, Mapping, Optional, Sequence, TextIO

import numpy as np

from ..errors import InputError, ParseError
from ..geometry import Box, Detection, iou_matrix
from ..utils import format_score

logger = logging.getLogger(__name__)

ATTRIBUTE_FIELDS = ("blur", "expression", "illumination", "invalid", "occlusion", "pose")
INVALID_COLUMN = 4 + ATTRIBUTE_FIELDS.index("invalid")
SUBSETS = ("easy", "medium", "hard")
_SUBSET_TAG = re.compile(r"^#\s*subset\s*:\s*(\w+)\s*$", re.IGNORECASE)


@dataclass
class ImageAnnotation:
    path: str
    boxes: np.ndarray  # (N, 4) raw x y w h, possibly degenerate
    ignore: np.ndarray  # (N,) bool
    attributes: np.ndarray  # (N, k) int, k <= 6
    subset: Optional[str] = None

    @property
    def n_valid(self) -> int:
        return int((~self.ignore).sum())


@dataclass
class AnnotationSet:
    images: List[ImageAnnotation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def by_path(self) -> Dict[str, ImageAnnotation]:
        return {img.path: img for img in self.images}

    def subsets(self) -> List[str]:
        present = {img.subset for img in self.images if img.subset}
        return [s for s in SUBSETS if s in present] + sorted(present - set(SUBSETS))

    def face_lists(self) -> List[np.ndarray]:
        """Non-ignored boxes per image, for matching statistics."""
        return [img.boxes[~img.ignore] for img in self.images]


def _numbers(line: str, number: int) -> List[float]:
    try:
        return [float(tok) for tok in line.split()]
    except ValueError as exc:
        raise ParseError(f"non-numeric field in {line.strip()!r}", number) from exc


def parse_annotations(text: str) -> AnnotationSet:
    """Blocks of: path, face count, then one `x y w h [attributes...]` line per face.

    A `# subset: easy|medium|hard` line before a path tags that image. Faces
    with w <= 0, h <= 0 or the invalid flag set are kept but marked ignore.
    """
    lines = text.splitlines()
    images: List[ImageAnnotation] = []
    pos, subset = 0, None
    while pos < len(lines):
        raw = lines[pos].strip()
        pos += 1
        if not raw:
            continue
        tag = _SUBSET_TAG.match(raw)
        if tag:
            subset = tag.group(1).lower()
            continue
        if raw.startswith("#"):
            continue
        path, path_line = raw, pos
        if pos >= len(lines):
            raise ParseError(f"missing face count after {path!r}", path_line + 1)
        count_text = lines[pos].strip()
        pos += 1
        try:
            count = int(count_text)
        except ValueError as exc:
            raise ParseError(f"expected a face count, got {count_text!r}", pos) from exc
        if count < 0:
            raise ParseError(f"negative face count {count}", pos)

        rows = []
        for _ in range(count):
            if pos >= len(lines) or not lines[pos].strip():
                raise ParseError(f"{path}: expected {count} face lines, found {len(rows)}", pos + 1)
            values = _numbers(lines[pos], pos + 1)
            if len(values) < 4:
                raise ParseError(f"face line needs at least x y w h, got {lines[pos].strip()!r}", pos + 1)
            rows.append(values[:4 + len(ATTRIBUTE_FIELDS)])
            pos += 1
        if count == 0 and pos < len(lines):
            # WIDER writes a zero placeholder line for faceless images
            try:
                placeholder = [float(tok) for tok in lines[pos].split()]
            except ValueError:
                placeholder = []
            if placeholder and not any(placeholder):
                pos += 1

        width = max((len(r) for r in rows), default=4)
        table = np.zeros((len(rows), width))
        for k, r in enumerate(rows):
            table[k, :len(r)] = r
        boxes = table[:, :4] if rows else np.zeros((0, 4))
        attributes = table[:, 4:].astype(np.int64) if rows else np.zeros((0, 0), dtype=np.int64)
        ignore = (boxes[:, 2] <= 0) | (boxes[:, 3] <= 0)
        if attributes.shape[1] > INVALID_COLUMN - 4:
            ignore |= attributes[:, INVALID_COLUMN - 4] == 1
        images.append(ImageAnnotation(path, boxes, ignore, attributes, subset))
        subset = None
    return AnnotationSet(images)


def format_annotations(faces: Mapping[str, np.ndarray], subsets: Optional[Mapping[str, str]] = None) -> str:
    """Inverse of parse_annotations for plain boxes; attributes are written as zeros."""
    out = []
    for path, boxes in faces.items():
        if subsets and subsets.get(path):
            out.append(f"# subset: {subsets[path]}")
        out.append(path)
        out.append(str(len(boxes)))
        zeros = " ".join("0" for _ in ATTRIBUTE_FIELDS)
        out.extend(f"{' '.join(_coord(v) for v in row)} {zeros}" for row in boxes)
        if len(boxes) == 0:
            out.append(" ".join("0" for _ in range(4 + len(ATTRIBUTE_FIELDS))))
    return "".join(line + "\n" for line in out)


def read_annotations(path) -> AnnotationSet:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_annotations(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read annotations {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Detection files
# ---------------------------------------------------------------------------


def _coord(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def write_detections(dets: Mapping[str, Sequence[Detection]]) -> str:
    out = []
    for path, items in dets.items():
        out.append(path)
        out.append(str(len(items)))
        for det in items:
            b = det.box
            out.append(f"{_coord(b.x)} {_coord(b.y)} {_coord(b.w)} {_coord(b.h)} {format_score(det.score)}")
    return "".join(line + "\n" for line in out)


def parse_detections(text: str) -> Dict[str, List[Detection]]:
    lines = text.splitlines()
    result: Dict[str, List[Detection]] = {}
    pos = 0
    while pos < len(lines):
        path = lines[pos].strip()
        pos += 1
        if not path:
            continue
        if pos >= len(lines):
            raise ParseError(f"missing detection count after {path!r}", pos + 1)
        try:
            count = int(lines[pos].strip())
        except ValueError as exc:
            raise ParseError(f"expected a detection count, got {lines[pos].strip()!r}", pos + 1) from exc
        pos += 1
        items = []
        for _ in range(count):
            if pos >= len(lines):
                raise ParseError(f"{path}: expected {count} detections, found {len(items)}", pos + 1)
            values = _numbers(lines[pos], pos + 1)
            if len(values) != 5:
                raise ParseError(f"expected 'x y w h score', got {lines[pos].strip()!r}", pos + 1)
            try:
                items.append(Detection(Box(*values[:4]), values[4]))
            except InputError as exc:
                raise ParseError(str(exc), pos + 1) from exc
            pos += 1
        result[path] = items
    return result


# ---------------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------------


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: Optional[float]
    n_gt: int
    n_tp: int
    n_fp: int

    @property
    def defined(self) -> bool:
        return self.ap is not None

    def write_csv(self, out: TextIO) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["recall", "precision"])
        for r, p in zip(self.recall, self.precision):
            writer.writerow([f"{r:.6f}", f"{p:.6f}"])


def all_points_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the monotone precision envelope."""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(
    dets: Mapping[str, Sequence[Detection]],
    gts: AnnotationSet,
    iou_thresh: float = 0.5,
    subset: Optional[str] = None,
) -> PRCurve:
    """Greedy matching in global score order.

    A detection claims the unmatched non-ignored face it overlaps most at IoU
    >= iou_thresh; failing that, a detection on an ignored face is dropped from
    both counts; anything else is a false positive.
    """
    truth = gts.by_path()
    unknown = [p for p in dets if p not in truth]
    if unknown:
        raise InputError(f"detections for {len(unknown)} unannotated images, e.g. {unknown[0]!r}")
    images = [img for img in gts.images if subset is None or img.subset == subset]
    chosen = {img.path for img in images}
    n_gt = sum(img.n_valid for img in images)

    flat = [
        (det.score, order, path, det.box)
        for order, (path, det) in enumerate((p, d) for p, items in dets.items() if p in chosen for d in items)
    ]
    flat.sort(key=lambda item: (-item[0], item[1]))

    taken = {img.path: np.zeros(img.boxes.shape[0], dtype=bool) for img in images}
    tp_flags: List[bool] = []
    for score, _, path, box in flat:
        img = truth[path]
        if img.boxes.shape[0] == 0:
            tp_flags.append(False)
            continue
        # degenerate boxes get a unit stand-in so IoU stays defined, then zeroed
        valid = (img.boxes[:, 2] > 0) & (img.boxes[:, 3] > 0)
        stand_in = np.where(valid[:, None], img.boxes, [0.0, 0.0, 1.0, 1.0])
        ious = np.where(valid, iou_matrix([box], stand_in)[0], 0.0)
        hits = ious >= iou_thresh
        open_faces = hits & ~img.ignore & ~taken[path]
        if open_faces.any():
            g = int(np.flatnonzero(open_faces)[ious[open_faces].argmax()])
            taken[path][g] = True
            tp_flags.append(True)
        elif (hits & img.ignore).any():
            continue
        else:
            tp_flags.append(False)

    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    n_tp = int(tp[-1]) if tp.size else 0
    n_fp = int(fp[-1]) if fp.size else 0
    if n_gt == 0:
        logger.warning("average_precision: no ground-truth faces%s; AP undefined",
                       f" in subset {subset}" if subset else "")
        return PRCurve(np.zeros(0), np.zeros(0), None, 0, n_tp, n_fp)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return PRCurve(recall, precision, all_points_ap(recall, precision), n_gt, n_tp, n_fp)
