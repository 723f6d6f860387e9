"""Training-time sampling: anchor-based crops and SSD-style crops.

Samples may carry no pixels (``image is None``); the geometry then follows
exactly the same random draws, which is what the matching statistics use.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .. import config
from ..errors import InputError
from ..tensor import Tensor
from ..utils import as_box_array, rng_for

logger = logging.getLogger(__name__)

MIN_IOU_CHOICES = (0.1, 0.3, 0.5, 0.7, 0.9)
BRANCH_ANCHOR = "anchor"
BRANCH_IDENTITY = "identity"
BRANCH_MIN_IOU = "min_iou_crop"
BRANCH_FREE = "free_crop"
SSD_BRANCHES = (BRANCH_IDENTITY, BRANCH_MIN_IOU, BRANCH_FREE)


@dataclass
class Sample:
    faces: np.ndarray
    width: int
    height: int
    image: Optional[np.ndarray] = None  # (C, H, W) float64, 0..255
    branch: str = "source"
    fallback: bool = False

    def __post_init__(self):
        self.faces = as_box_array(self.faces)
        if self.faces.size and (self.faces[:, 2:] <= 0).any():
            raise InputError("sample faces need positive width and height")
        if self.image is not None and self.image.shape[1:] != (self.height, self.width):
            raise InputError(
                f"image shape {self.image.shape} does not match {self.height}x{self.width}"
            )

    @property
    def has_faces(self) -> bool:
        return self.faces.shape[0] > 0

    def to_tensor(self) -> Tensor:
        if self.image is None:
            raise InputError("sample has no pixels")
        return Tensor(self.image[None])


@dataclass
class AugConfig:
    input_size: int = config.INPUT_SIZE
    anchor_scale_set: Tuple[float, ...] = tuple(float(s) for s in config.ANCHOR_SCALES)
    p_anchor_sampling: float = 0.4
    seed: int = 0
    use_iam: bool = True
    restrict_scale_choice: bool = True
    flip_prob: float = 0.5
    jitter: float = 0.125
    min_crop_scale: float = 0.3
    max_trials: int = 50
    mean: Optional[Tuple[float, ...]] = None  # padding fill; per-source mean when unset

    def __post_init__(self):
        if not 0.0 <= self.p_anchor_sampling <= 1.0:
            raise InputError(f"p_anchor_sampling must be in [0, 1], got {self.p_anchor_sampling}")
        scales = np.asarray(self.anchor_scale_set, dtype=np.float64)
        if scales.size == 0 or (np.diff(scales) <= 0).any() or (scales <= 0).any():
            raise InputError(f"anchor scale set must be positive and strictly increasing: {self.anchor_scale_set}")
        if self.input_size <= 0:
            raise InputError(f"input size must be positive, got {self.input_size}")


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------


def _warp(sample: Sample, x0: float, y0: float, side: float, cfg: AugConfig) -> Optional[np.ndarray]:
    """Crop the square (x0, y0, side) from the image, padding outside, and resize to input_size."""
    if sample.image is None:
        return None
    k = cfg.input_size / side
    shift_x = k * (0.5 - x0) - 0.5
    shift_y = k * (0.5 - y0) - 0.5
    matrix = np.array([[k, 0.0, shift_x], [0.0, k, shift_y]], dtype=np.float64)
    fill = cfg.mean if cfg.mean is not None else tuple(sample.image.mean(axis=(1, 2)))
    hwc = np.ascontiguousarray(sample.image.transpose(1, 2, 0), dtype=np.float32)
    warped = cv2.warpAffine(
        hwc,
        matrix,
        (cfg.input_size, cfg.input_size),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=tuple(float(v) for v in fill) + (0.0,) * (4 - len(fill)),
    )
    if warped.ndim == 2:
        warped = warped[:, :, None]
    return warped.transpose(2, 0, 1).astype(np.float64)


def _project(faces: np.ndarray, x0: float, y0: float, side: float, out_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep faces whose centre lies in the crop; returns (clipped, unclipped, keep mask) in output pixels."""
    if faces.shape[0] == 0:
        empty = np.zeros((0, 4))
        return empty, empty, np.zeros(0, dtype=bool)
    cx = faces[:, 0] + faces[:, 2] / 2.0
    cy = faces[:, 1] + faces[:, 3] / 2.0
    keep = (cx >= x0) & (cx < x0 + side) & (cy >= y0) & (cy < y0 + side)
    k = out_size / side
    mapped = np.stack(
        [(faces[:, 0] - x0) * k, (faces[:, 1] - y0) * k, faces[:, 2] * k, faces[:, 3] * k], axis=1
    )[keep]
    x1 = np.clip(mapped[:, 0], 0.0, out_size)
    y1 = np.clip(mapped[:, 1], 0.0, out_size)
    x2 = np.clip(mapped[:, 0] + mapped[:, 2], 0.0, out_size)
    y2 = np.clip(mapped[:, 1] + mapped[:, 3], 0.0, out_size)
    clipped = np.stack([x1, y1, x2 - x1, y2 - y1], axis=1)
    valid = (clipped[:, 2] > 0) & (clipped[:, 3] > 0)
    keep_idx = np.flatnonzero(keep)
    keep = np.zeros(faces.shape[0], dtype=bool)
    keep[keep_idx[valid]] = True
    return clipped[valid], mapped[valid], keep


def _paired_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    return inter / (a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter)


def _photometric(image: Optional[np.ndarray], alpha: float, beta: float) -> Optional[np.ndarray]:
    if image is None:
        return None
    return np.clip(image * alpha + beta, 0.0, 255.0)


def _flip(faces: np.ndarray, image: Optional[np.ndarray], size: int):
    flipped = faces.copy()
    flipped[:, 0] = size - faces[:, 0] - faces[:, 2]
    return flipped, (None if image is None else image[:, :, ::-1].copy())


# ---------------------------------------------------------------------------
# Branches
# ---------------------------------------------------------------------------


def target_scale_choices(face_scale: float, cfg: AugConfig) -> np.ndarray:
    """Anchor scales a face may be resized to.

    Restricted choice allows every scale up to one step above the scale
    nearest to the face (in log space).
    """
    scales = np.asarray(cfg.anchor_scale_set, dtype=np.float64)
    if not cfg.restrict_scale_choice:
        return scales
    nearest = int(np.abs(np.log(scales / face_scale)).argmin())
    return scales[: min(len(scales) - 1, nearest + 1) + 1]


def anchor_based_sample(src: Sample, cfg: AugConfig, rng: np.random.Generator) -> Sample:
    if not src.has_faces:
        raise InputError("anchor_based_sample needs at least one face")
    pick = int(rng.integers(src.faces.shape[0]))
    fx, fy, fw, fh = src.faces[pick]
    face_scale = math.sqrt(fw * fh)
    choices = target_scale_choices(face_scale, cfg)
    target = float(choices[int(rng.integers(len(choices)))])
    side = face_scale * cfg.input_size / target
    if side < fw or side < fh:
        logger.debug("anchor sampling: face %.1fx%.1f cannot fit crop side %.1f", fw, fh, side)
        out = ssd_style_sample(src, cfg, rng)
        return replace(out, fallback=True)

    x0 = float(rng.uniform(fx + fw - side, fx))
    y0 = float(rng.uniform(fy + fh - side, fy))
    faces, _, _ = _project(src.faces, x0, y0, side, cfg.input_size)
    image = _warp(src, x0, y0, side, cfg)
    return Sample(faces, cfg.input_size, cfg.input_size, image, branch=BRANCH_ANCHOR)


def _crop_window(src: Sample, cfg: AugConfig, rng: np.random.Generator, min_iou: Optional[float]):
    short = min(src.width, src.height)
    for _ in range(cfg.max_trials):
        side = float(rng.uniform(cfg.min_crop_scale, 1.0)) * short
        x0 = float(rng.uniform(0.0, src.width - side))
        y0 = float(rng.uniform(0.0, src.height - side))
        clipped, unclipped, _ = _project(src.faces, x0, y0, side, cfg.input_size)
        if src.has_faces and clipped.shape[0] == 0:
            continue
        if min_iou is not None and clipped.shape[0] and (_paired_iou(clipped, unclipped) < min_iou).any():
            continue
        return x0, y0, side
    return None


def ssd_style_sample(src: Sample, cfg: AugConfig, rng: np.random.Generator) -> Sample:
    alpha = 1.0 + float(rng.uniform(-cfg.jitter, cfg.jitter))
    beta = 255.0 * float(rng.uniform(-cfg.jitter, cfg.jitter))
    branch = SSD_BRANCHES[int(rng.integers(len(SSD_BRANCHES)))]
    min_iou = float(rng.choice(MIN_IOU_CHOICES)) if branch == BRANCH_MIN_IOU else None
    distorted = replace(src, image=_photometric(src.image, alpha, beta))

    window = None
    if branch != BRANCH_IDENTITY:
        window = _crop_window(distorted, cfg, rng, min_iou)
        if window is None:
            logger.debug("ssd sampling: %s exhausted %d trials, using identity", branch, cfg.max_trials)
            branch = BRANCH_IDENTITY
    flip = bool(rng.random() < cfg.flip_prob)

    if window is None:
        # whole image; non-square sources are stretched to the square input
        kx = cfg.input_size / src.width
        ky = cfg.input_size / src.height
        faces = src.faces * np.array([kx, ky, kx, ky])
        image = None
        if distorted.image is not None:
            hwc = np.ascontiguousarray(distorted.image.transpose(1, 2, 0), dtype=np.float32)
            resized = cv2.resize(hwc, (cfg.input_size, cfg.input_size), interpolation=cv2.INTER_LINEAR)
            if resized.ndim == 2:
                resized = resized[:, :, None]
            image = resized.transpose(2, 0, 1).astype(np.float64)
    else:
        x0, y0, side = window
        faces, _, _ = _project(src.faces, x0, y0, side, cfg.input_size)
        image = _warp(distorted, x0, y0, side, cfg)

    if flip:
        faces, image = _flip(faces, image, cfg.input_size)
    return Sample(faces, cfg.input_size, cfg.input_size, image, branch=branch)


def choose_branch(cfg: AugConfig, rng: np.random.Generator, has_faces: bool) -> str:
    draw = float(rng.random())
    if cfg.use_iam and has_faces and draw < cfg.p_anchor_sampling:
        return BRANCH_ANCHOR
    return "ssd"


def augment(src: Sample, cfg: AugConfig, rng: np.random.Generator) -> Sample:
    if choose_branch(cfg, rng, src.has_faces) == BRANCH_ANCHOR:
        return anchor_based_sample(src, cfg, rng)
    return ssd_style_sample(src, cfg, rng)


def augment_batch(samples: Sequence[Sample], cfg: AugConfig, seed: Optional[int] = None,
                  threads: int = 1, epoch: int = 0) -> List[Sample]:
    """Augment each sample on its own (seed, epoch, index) stream; thread count never changes results."""
    seed = cfg.seed if seed is None else seed

    def work(item):
        index, sample = item
        return augment(sample, cfg, rng_for(seed, epoch, index))

    if threads <= 1 or len(samples) < 2:
        return [work(item) for item in enumerate(samples)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, enumerate(samples)))
