"""Augment-then-match statistics comparing anchor-matching pipelines."""
from __future__ import annotations

from dataclasses import dataclass, replace
import logging
from typing import Optional, Sequence

from .. import config
from ..anchors import Shot, shot_anchors
from ..errors import InputError
from .augment import AugConfig, Sample, augment_batch
from .matching import (
    MatchStats,
    ScaleHistogram,
    matched_count_stats,
    near_anchor_scale_fraction,
    scale_histogram,
)

logger = logging.getLogger(__name__)

PIPELINE_IAM = "iam"
PIPELINE_TRADITIONAL = "traditional"
PIPELINE_THRESHOLDS = {
    PIPELINE_IAM: config.MATCH_THRESHOLD,
    PIPELINE_TRADITIONAL: config.TRADITIONAL_MATCH_THRESHOLD,
}


@dataclass
class PipelineStats:
    pipeline: str
    threshold: float
    matches: MatchStats
    scales: ScaleHistogram
    near_anchor_fraction: float


def pipeline_match_stats(
    samples: Sequence[Sample],
    pipeline: str,
    aug_cfg: Optional[AugConfig] = None,
    threshold: Optional[float] = None,
    seed: int = config.DEFAULT_SEED,
    threads: int = 1,
    force_best: bool = False,
) -> PipelineStats:
    """Augment every sample once, then count matched second-shot anchors per face.

    The IAM pipeline turns anchor-based sampling on; the traditional one uses
    SSD-style sampling only. Thresholds default to 0.4 and 0.35 respectively.
    """
    if pipeline not in PIPELINE_THRESHOLDS:
        raise InputError(f"unknown pipeline {pipeline!r}")
    aug_cfg = replace(aug_cfg or AugConfig(), use_iam=pipeline == PIPELINE_IAM)
    threshold = PIPELINE_THRESHOLDS[pipeline] if threshold is None else threshold
    augmented = augment_batch(samples, aug_cfg, seed=seed, threads=threads)
    faces = [s.faces for s in augmented]
    anchors = shot_anchors(aug_cfg.input_size, Shot.SECOND)
    stats = matched_count_stats(faces, anchors, threshold, force_best=force_best, threads=threads)
    result = PipelineStats(pipeline, threshold, stats, scale_histogram(faces), near_anchor_scale_fraction(faces))
    logger.info(
        "%s pipeline: %d faces, mean matched %s at threshold %.2f",
        pipeline, stats.n_faces,
        "undefined" if stats.mean_overall is None else f"{stats.mean_overall:.4f}", threshold,
    )
    return result
