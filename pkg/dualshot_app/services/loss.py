"""Per-shot multi-task loss with hard negative mining, and the two-shot combination."""
from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..anchors import Shot
from ..errors import InputError, NumericError, ShapeError
from ..geometry import encode_array
from ..tensor import (
    Tensor,
    add,
    index_rows,
    mul_scalar,
    smooth_l1,
    softmax_cross_entropy,
    sum_all,
)
from ..utils import as_box_array
from .matching import NEGATIVE, MatchResult, anchor_array

logger = logging.getLogger(__name__)

DEFAULT_NEG_POS_RATIO = 3.0


@dataclass
class ShotPredictions:
    cls_logits: Tensor  # (N, 2), or (B, N, 2) for a batch
    loc_deltas: Tensor  # (N, 4), or (B, N, 4)
    shot: Shot

    def __post_init__(self):
        if self.cls_logits.shape[:-1] != self.loc_deltas.shape[:-1]:
            raise ShapeError(
                f"{self.shot.value} shot: {self.cls_logits.shape} logits vs {self.loc_deltas.shape} deltas"
            )
        if self.cls_logits.shape[-1] != 2 or self.loc_deltas.shape[-1] != 4:
            raise ShapeError(f"{self.shot.value} shot: expected (..., 2) logits and (..., 4) deltas")

    @property
    def batched(self) -> bool:
        return len(self.cls_logits.shape) == 3

    def __len__(self) -> int:
        return self.cls_logits.shape[-2]

    def image(self, index: int) -> "ShotPredictions":
        if not self.batched:
            raise ShapeError("image(): predictions are not batched")
        return ShotPredictions(index_rows(self.cls_logits, index), index_rows(self.loc_deltas, index), self.shot)


@dataclass
class LossReport:
    conf: float
    loc: float
    total_shot: float
    n_pos: int
    n_conf: int
    pal_total: Optional[float] = None
    per_shot: Optional[Tuple["LossReport", "LossReport"]] = None

    def __post_init__(self):
        values = (self.conf, self.loc, self.total_shot) + (() if self.pal_total is None else (self.pal_total,))
        if not all(math.isfinite(v) for v in values):
            raise NumericError(
                f"non-finite loss: conf={self.conf} loc={self.loc} total={self.total_shot} pal={self.pal_total}"
            )


def mine_negatives(cls_losses, labels, ratio: float = DEFAULT_NEG_POS_RATIO) -> np.ndarray:
    """Hardest background anchors, highest loss first, ties to the lower index.

    Keeps floor(ratio * n_pos); with no positives keeps floor(ratio), at least one.
    """
    if ratio <= 0:
        raise InputError(f"negative mining ratio must be positive, got {ratio}")
    losses = np.asarray(cls_losses, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    negatives = np.flatnonzero(labels == NEGATIVE)
    n_pos = labels.size - negatives.size
    quota = int(math.floor(ratio * n_pos)) if n_pos else max(1, int(math.floor(ratio)))
    order = np.lexsort((negatives, -losses[negatives]))
    return negatives[order[: min(quota, negatives.size)]]


def shot_loss(
    preds: ShotPredictions,
    match: MatchResult,
    anchors,
    faces,
    beta: float = 1.0,
    neg_pos_ratio: float = DEFAULT_NEG_POS_RATIO,
    eq2_literal: bool = False,
    negatives: Optional[np.ndarray] = None,
    variances: Optional[Sequence[float]] = None,
) -> Tuple[Tensor, LossReport]:
    """Confidence over positives plus mined negatives, smooth-L1 over positives.

    conf is normalised by N_conf = positives + kept negatives and loc by the
    positive count, weighted by beta. ``eq2_literal`` additionally divides the
    loc term by N_conf. Passing ``negatives`` freezes the mined set.
    """
    if beta <= 0:
        raise InputError(f"beta must be positive, got {beta}")
    a = anchor_array(anchors)
    if a.shape[0] == 0:
        raise InputError("shot_loss: zero anchors")
    if preds.batched:
        raise ShapeError("shot_loss works on one image; use preds.image(b)")
    if not (len(preds) == a.shape[0] == match.anchor_labels.size):
        raise ShapeError(
            f"shot_loss: {len(preds)} predictions, {a.shape[0]} anchors, {match.anchor_labels.size} labels"
        )

    labels = match.anchor_labels
    positives = np.flatnonzero(labels != NEGATIVE)
    ce = softmax_cross_entropy(preds.cls_logits, (labels != NEGATIVE).astype(np.int64))
    if negatives is None:
        negatives = mine_negatives(ce.data, labels, neg_pos_ratio)
    selected = np.concatenate([positives, np.asarray(negatives, dtype=np.int64)])
    n_conf = int(selected.size)
    conf = mul_scalar(sum_all(index_rows(ce, selected)), 1.0 / n_conf)

    total = conf
    loc_value = 0.0
    if positives.size:
        f = as_box_array(faces)
        targets = encode_array(f[labels[positives]], a[positives], variances)
        scale = beta / positives.size
        if eq2_literal:
            scale /= n_conf
        loc = mul_scalar(sum_all(smooth_l1(index_rows(preds.loc_deltas, positives), targets)), scale)
        loc_value = loc.item()
        total = add(conf, loc)

    report = LossReport(
        conf=conf.item(),
        loc=loc_value,
        total_shot=total.item(),
        n_pos=int(positives.size),
        n_conf=n_conf,
    )
    return total, report


def pal_total(first: LossReport, second: LossReport, lam: float = 1.0) -> float:
    value = first.total_shot + lam * second.total_shot
    if not math.isfinite(value):
        raise NumericError(f"non-finite progressive loss from {first.total_shot} and {second.total_shot}")
    return value


def pal_tensor(first: Tensor, second: Tensor, lam: float = 1.0) -> Tensor:
    return add(first, mul_scalar(second, lam))
