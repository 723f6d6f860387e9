"""Box arithmetic in (x, y, w, h) pixel coordinates."""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .errors import InputError
from .utils import as_box_array

# exp() argument cap for decoded log-sizes
MAX_LOG_SIZE = 30.0


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise InputError(f"box has non-finite coordinates: {self}")
        if self.w <= 0 or self.h <= 0:
            raise InputError(f"box needs positive width and height: {self}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def scale(self) -> float:
        return math.sqrt(self.w * self.h)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def contains(self, other: "Box") -> bool:
        return (
            self.x <= other.x and self.y <= other.y
            and self.x2 >= other.x2 and self.y2 >= other.y2
        )


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InputError(f"detection score outside [0, 1]: {self.score}")


@dataclass(frozen=True)
class BoxDelta:
    tx: float
    ty: float
    tw: float
    th: float

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.tx, self.ty, self.tw, self.th)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    a = as_box_array(boxes_a)
    b = as_box_array(boxes_b)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, 0][:, None], b[:, 0][None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, 1][:, None], b[:, 1][None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


def _variances(variances: Optional[Sequence[float]]) -> Tuple[float, float]:
    if variances is None:
        variances = config.BOX_VARIANCES
    if not variances:
        return 1.0, 1.0
    center, size = variances
    return float(center), float(size)


def encode(gt: Box, anchor: Box, variances: Optional[Sequence[float]] = None) -> BoxDelta:
    vc, vs = _variances(variances)
    return BoxDelta(
        (gt.cx - anchor.cx) / anchor.w / vc,
        (gt.cy - anchor.cy) / anchor.h / vc,
        math.log(gt.w / anchor.w) / vs,
        math.log(gt.h / anchor.h) / vs,
    )


def decode(delta: BoxDelta, anchor: Box, variances: Optional[Sequence[float]] = None) -> Tuple[Box, bool]:
    """Inverse of encode. Returns (box, clamped) where clamped flags a capped log-size."""
    vc, vs = _variances(variances)
    tw, th = delta.tw * vs, delta.th * vs
    clamped = abs(tw) > MAX_LOG_SIZE or abs(th) > MAX_LOG_SIZE
    tw = max(-MAX_LOG_SIZE, min(MAX_LOG_SIZE, tw))
    th = max(-MAX_LOG_SIZE, min(MAX_LOG_SIZE, th))
    cx = anchor.cx + delta.tx * vc * anchor.w
    cy = anchor.cy + delta.ty * vc * anchor.h
    w = anchor.w * math.exp(tw)
    h = anchor.h * math.exp(th)
    return Box(cx - w / 2.0, cy - h / 2.0, w, h), clamped


def encode_array(gts, anchors, variances: Optional[Sequence[float]] = None) -> np.ndarray:
    g = as_box_array(gts)
    a = as_box_array(anchors)
    if g.shape != a.shape:
        raise InputError(f"encode_array: {g.shape[0]} boxes vs {a.shape[0]} anchors")
    vc, vs = _variances(variances)
    gcx, gcy = g[:, 0] + g[:, 2] / 2.0, g[:, 1] + g[:, 3] / 2.0
    acx, acy = a[:, 0] + a[:, 2] / 2.0, a[:, 1] + a[:, 3] / 2.0
    return np.stack(
        [
            (gcx - acx) / a[:, 2] / vc,
            (gcy - acy) / a[:, 3] / vc,
            np.log(g[:, 2] / a[:, 2]) / vs,
            np.log(g[:, 3] / a[:, 3]) / vs,
        ],
        axis=1,
    )


def decode_array(deltas, anchors, variances: Optional[Sequence[float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised decode; returns (boxes (N, 4), clamped mask (N,))."""
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    a = as_box_array(anchors)
    vc, vs = _variances(variances)
    sizes = d[:, 2:] * vs
    clamped = (np.abs(sizes) > MAX_LOG_SIZE).any(axis=1)
    sizes = np.clip(sizes, -MAX_LOG_SIZE, MAX_LOG_SIZE)
    cx = a[:, 0] + a[:, 2] / 2.0 + d[:, 0] * vc * a[:, 2]
    cy = a[:, 1] + a[:, 3] / 2.0 + d[:, 1] * vc * a[:, 3]
    w = a[:, 2] * np.exp(sizes[:, 0])
    h = a[:, 3] * np.exp(sizes[:, 1])
    return np.stack([cx - w / 2.0, cy - h / 2.0, w, h], axis=1), clamped


def nms_indices(boxes, scores, overlap: float) -> np.ndarray:
    """Greedy NMS over arrays; kept indices by descending score, ties to the lower index."""
    if not 0.0 < overlap < 1.0:
        raise InputError(f"nms overlap must be in (0, 1), got {overlap}")
    b = as_box_array(boxes)
    s = np.asarray(scores, dtype=np.float64)
    if b.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    x1, y1 = b[:, 0], b[:, 1]
    x2, y2 = x1 + b[:, 2], y1 + b[:, 3]
    areas = b[:, 2] * b[:, 3]
    order = np.argsort(-s, kind="stable")

    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        iw = np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
        ih = np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]))
        inter = iw * ih
        ovr = inter / (areas[i] + areas[rest] - inter)
        order = rest[ovr <= overlap]
    return np.asarray(keep, dtype=np.int64)


def nms(dets: Sequence[Detection], overlap: float) -> List[Detection]:
    if not dets:
        if not 0.0 < overlap < 1.0:
            raise InputError(f"nms overlap must be in (0, 1), got {overlap}")
        return []
    keep = nms_indices([d.box for d in dets], [d.score for d in dets], overlap)
    return [dets[i] for i in keep]


def round_detection(box: Box, contain: Optional[bool] = None) -> Box:
    """Floor the top-left corner and ceil the size.

    With ``contain`` the size is measured to the ceiled far edge instead, so the
    result always covers the input box.
    """
    if contain is None:
        contain = config.ROUND_CONTAIN
    x, y = math.floor(box.x), math.floor(box.y)
    if contain:
        return Box(x, y, math.ceil(box.x2) - x, math.ceil(box.y2) - y)
    return Box(x, y, math.ceil(box.w), math.ceil(box.h))
