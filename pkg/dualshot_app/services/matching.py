from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass
import logging
from typing import List, Optional, Sequence, TextIO

import numpy as np

from .. import config
from ..anchors import AnchorGrid
from ..errors import InputError
from ..geometry import iou_matrix
from ..utils import as_box_array, geometric_bin_edges

logger = logging.getLogger(__name__)

NEGATIVE = -1
COUNT_BINS = 21  # matched-count histogram 0..19 plus a final ">= 20" bin
STAT_SCALE_EDGES = (8, 16, 32, 64, 128, 256, 512)


@dataclass
class MatchResult:
    anchor_labels: np.ndarray  # face index per anchor, NEGATIVE for background
    per_face_counts: np.ndarray
    per_face_scales: np.ndarray

    @property
    def positive_mask(self) -> np.ndarray:
        return self.anchor_labels != NEGATIVE

    @property
    def n_pos(self) -> int:
        return int(self.positive_mask.sum())


def anchor_array(anchors) -> np.ndarray:
    if isinstance(anchors, AnchorGrid):
        return anchors.boxes
    if isinstance(anchors, (list, tuple)) and anchors and isinstance(anchors[0], AnchorGrid):
        return np.concatenate([grid.boxes for grid in anchors], axis=0)
    return as_box_array(anchors)


def face_scales(faces) -> np.ndarray:
    f = as_box_array(faces)
    return np.sqrt(f[:, 2] * f[:, 3])


def match(anchors, faces, threshold: float = config.MATCH_THRESHOLD, force_best: bool = False) -> MatchResult:
    """Assign each anchor to its best face when IoU >= threshold.

    With ``force_best`` every face also claims one anchor regardless of the
    threshold. Faces claim in order of their best IoU (ties to the lower face
    index); a face whose best anchor is already claimed takes its best
    unclaimed one, so no face is left without an anchor while any remain.
    """
    if not 0.0 < threshold < 1.0:
        raise InputError(f"match threshold must be in (0, 1), got {threshold}")
    a = anchor_array(anchors)
    f = as_box_array(faces)
    if a.shape[0] == 0:
        raise InputError("match: no anchors given")
    labels = np.full(a.shape[0], NEGATIVE, dtype=np.int64)
    if f.shape[0] == 0:
        return MatchResult(labels, np.zeros(0, dtype=np.int64), np.zeros(0))

    overlaps = iou_matrix(a, f)
    best_face = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(a.shape[0]), best_face]
    matched = best_iou >= threshold
    labels[matched] = best_face[matched]

    if force_best:
        claimed = np.zeros(a.shape[0], dtype=bool)
        face_best = overlaps.max(axis=0)
        for g in np.lexsort((np.arange(f.shape[0]), -face_best)):
            column = np.where(claimed, -1.0, overlaps[:, g])
            anchor = int(column.argmax())
            if column[anchor] < 0:
                continue
            labels[anchor] = g
            claimed[anchor] = True

    counts = np.bincount(labels[labels != NEGATIVE], minlength=f.shape[0])
    return MatchResult(labels, counts, face_scales(f))


def match_dataset(dataset: Sequence, anchors, threshold: float, force_best: bool = False,
                  threads: int = 1) -> List[MatchResult]:
    boxes = anchor_array(anchors)
    if threads <= 1 or len(dataset) < 2:
        return [match(boxes, faces, threshold, force_best) for faces in dataset]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda faces: match(boxes, faces, threshold, force_best), dataset))


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class MatchStats:
    scale_edges: tuple
    face_counts: np.ndarray  # faces per scale bin
    mean_matched: np.ndarray  # nan for empty bins
    histograms: np.ndarray  # (scale bins, COUNT_BINS)
    overall_histogram: np.ndarray
    mean_overall: Optional[float]
    n_faces: int

    @property
    def mean_defined(self) -> bool:
        return self.mean_overall is not None

    def bin_labels(self) -> List[str]:
        edges = self.scale_edges
        return [f"{edges[i]}-{edges[i + 1]}" for i in range(len(edges) - 1)]

    def write_csv(self, out: TextIO) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["scale_bin", "face_count", "mean_matched"] + [f"hist_{k}" for k in range(COUNT_BINS)]
        )
        for label, count, mean, hist in zip(
            self.bin_labels(), self.face_counts, self.mean_matched, self.histograms
        ):
            mean_text = "nan" if np.isnan(mean) else f"{mean:.6f}"
            writer.writerow([label, int(count), mean_text, *(int(v) for v in hist)])
        overall = "undefined" if self.mean_overall is None else f"{self.mean_overall:.6f}"
        out.write(f"mean_matched_overall={overall}\n")


def _scale_bin(scales: np.ndarray, edges: Sequence[float]) -> np.ndarray:
    log_edges = np.log2(np.asarray(edges, dtype=np.float64))
    idx = np.searchsorted(log_edges, np.log2(scales), side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def summarize_matches(results: Sequence[MatchResult], edges: Sequence[float] = STAT_SCALE_EDGES) -> MatchStats:
    counts = np.concatenate([r.per_face_counts for r in results]) if results else np.zeros(0)
    scales = np.concatenate([r.per_face_scales for r in results]) if results else np.zeros(0)
    n_bins = len(edges) - 1
    face_counts = np.zeros(n_bins, dtype=np.int64)
    sums = np.zeros(n_bins)
    histograms = np.zeros((n_bins, COUNT_BINS), dtype=np.int64)
    if counts.size:
        bins = _scale_bin(scales, edges)
        capped = np.minimum(counts, COUNT_BINS - 1).astype(np.int64)
        np.add.at(face_counts, bins, 1)
        np.add.at(sums, bins, counts)
        np.add.at(histograms, (bins, capped), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(face_counts > 0, sums / np.maximum(face_counts, 1), np.nan)
    return MatchStats(
        scale_edges=tuple(edges),
        face_counts=face_counts,
        mean_matched=means,
        histograms=histograms,
        overall_histogram=histograms.sum(axis=0),
        mean_overall=float(counts.mean()) if counts.size else None,
        n_faces=int(counts.size),
    )


def matched_count_stats(dataset: Sequence, anchors, threshold: float,
                        force_best: bool = False, threads: int = 1) -> MatchStats:
    """Matched-anchor counts per face over a dataset of per-image face arrays."""
    if len(dataset) == 0:
        raise InputError("matched_count_stats: empty dataset")
    results = match_dataset(dataset, anchors, threshold, force_best, threads)
    stats = summarize_matches(results)
    if stats.mean_overall is None:
        logger.warning("matched_count_stats: dataset has no faces; mean undefined")
    return stats


@dataclass
class ScaleHistogram:
    centers: tuple
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def scale_histogram(dataset: Sequence, centers: Sequence[float] = config.ANCHOR_SCALES) -> ScaleHistogram:
    """Face counts per scale bin centred on the anchor scales with geometric boundaries."""
    counts = np.zeros(len(centers), dtype=np.int64)
    edges = geometric_bin_edges(centers)
    for faces in dataset:
        scales = face_scales(faces)
        if scales.size:
            np.add.at(counts, _scale_bin(scales, edges), 1)
    return ScaleHistogram(tuple(centers), counts)


def near_anchor_scale_fraction(dataset: Sequence, tolerance: float = 0.02,
                               centers: Sequence[float] = config.ANCHOR_SCALES) -> float:
    """Share of faces whose scale lies within ``tolerance`` (relative) of an anchor scale."""
    scales = [face_scales(faces) for faces in dataset]
    scales = np.concatenate(scales) if scales else np.zeros(0)
    if scales.size == 0:
        return 0.0
    ref = np.asarray(centers, dtype=np.float64)
    closest = np.abs(np.log(scales[:, None] / ref[None, :])).min(axis=1)
    return float((closest <= np.log1p(tolerance)).mean())
