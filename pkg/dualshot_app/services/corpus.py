"""Synthetic face corpora: solid rectangles on textured noise."""
from __future__ import annotations

import logging
import math
from typing import List, Sequence, Tuple

import cv2
import numpy as np

from .. import config
from ..errors import InputError
from ..geometry import iou_matrix
from ..utils import rng_for
from .augment import Sample

logger = logging.getLogger(__name__)

FACE_ASPECT = 1.5  # h / w
PLACEMENT_TRIES = 20


def face_size(scale: float) -> Tuple[float, float]:
    """(w, h) with sqrt(w*h) == scale and h / w == FACE_ASPECT."""
    return scale / math.sqrt(FACE_ASPECT), scale * math.sqrt(FACE_ASPECT)


def _background(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    coarse = rng.uniform(40.0, 140.0, size=(8, 8, channels)).astype(np.float32)
    smooth = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)
    if smooth.ndim == 2:
        smooth = smooth[:, :, None]
    grain = rng.normal(0.0, 12.0, size=(size, size, channels))
    return np.clip(smooth + grain, 0.0, 255.0).transpose(2, 0, 1).astype(np.float64)


def _paint(image: np.ndarray, box: np.ndarray, color: np.ndarray) -> None:
    x, y, w, h = box
    x1, y1 = int(round(x)), int(round(y))
    x2, y2 = max(x1 + 1, int(round(x + w))), max(y1 + 1, int(round(y + h)))
    image[:, y1:y2, x1:x2] = color[:, None, None]


def _place_faces(rng: np.random.Generator, count: int, size: int,
                 scale_range: Tuple[float, float]) -> np.ndarray:
    lo, hi = math.log(scale_range[0]), math.log(scale_range[1])
    faces = np.zeros((0, 4))
    for _ in range(count):
        scale = math.exp(rng.uniform(lo, hi))
        w, h = face_size(scale)
        if h > size:
            w, h = face_size(size / math.sqrt(FACE_ASPECT))
        box = None
        for _ in range(PLACEMENT_TRIES):
            box = np.array([rng.uniform(0.0, size - w), rng.uniform(0.0, size - h), w, h])
            if faces.shape[0] == 0 or iou_matrix(box[None], faces).max() == 0.0:
                break
        faces = np.vstack([faces, box])
    return faces


def synth_corpus(
    n_images: int,
    faces_per_image: Tuple[int, int] = (1, 5),
    scale_range: Tuple[float, float] = (8.0, 512.0),
    seed: int = config.DEFAULT_SEED,
    input_size: int = config.INPUT_SIZE,
    render: bool = True,
    channels: int = 3,
) -> List[Sample]:
    """Image i draws from its own (seed, i) stream, so corpora are prefix-stable in n_images.

    ``render=False`` skips pixels and yields geometry-only samples.
    """
    if n_images < 1:
        raise InputError(f"synth_corpus needs n_images >= 1, got {n_images}")
    lo_faces, hi_faces = faces_per_image
    if lo_faces < 0 or hi_faces < lo_faces:
        raise InputError(f"bad faces_per_image range {faces_per_image}")
    if not 0 < scale_range[0] <= scale_range[1]:
        raise InputError(f"bad scale range {scale_range}")

    samples = []
    for index in range(n_images):
        rng = rng_for(seed, index)
        count = int(rng.integers(lo_faces, hi_faces + 1))
        faces = _place_faces(rng, count, input_size, scale_range)
        image = None
        if render:
            image = _background(rng, input_size, channels)
            for box in faces:
                _paint(image, box, rng.uniform(180.0, 255.0, size=channels))
        samples.append(Sample(faces, input_size, input_size, image))
    logger.debug("synth_corpus: %d images, %d faces", n_images, sum(s.faces.shape[0] for s in samples))
    return samples


def corpus_mean(samples: Sequence[Sample]) -> Tuple[float, ...]:
    """Per-channel pixel mean over rendered samples."""
    images = [s.image for s in samples if s.image is not None]
    if not images:
        raise InputError("corpus_mean: no rendered images")
    return tuple(float(v) for v in np.mean([img.mean(axis=(1, 2)) for img in images], axis=0))
