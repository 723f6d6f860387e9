from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
import math
from typing import List, Optional, Sequence, TextIO

import numpy as np

from . import config
from .errors import InputError


class Shot(str, Enum):
    FIRST = "first"
    SECOND = "second"


@dataclass(frozen=True)
class LevelSpec:
    index: int
    stride: int
    map_h: int
    map_w: int
    scale_second_shot: float
    scale_first_shot: float
    ratio: float = config.ANCHOR_RATIO

    @property
    def count(self) -> int:
        return self.map_h * self.map_w

    def scale(self, shot: Shot) -> float:
        return self.scale_first_shot if Shot(shot) is Shot.FIRST else self.scale_second_shot


@dataclass(frozen=True)
class AnchorGrid:
    level: LevelSpec
    shot: Shot
    boxes: np.ndarray  # (map_h * map_w, 4) x, y, w, h in row-major cell order

    def __len__(self) -> int:
        return int(self.boxes.shape[0])


def default_level_specs(input_size: int = config.INPUT_SIZE, strict: bool = True) -> List[LevelSpec]:
    """Six levels with strides 4..128; second-shot scale 4x the stride, first shot half of that.

    ``strict`` demands divisibility by the largest stride (the 640 layout);
    otherwise multiples of 32 are accepted and map sizes use ceil division.
    """
    divisor = config.ANCHOR_STRIDES[-1] if strict else 32
    if input_size <= 0 or input_size % divisor:
        raise InputError(f"input size {input_size} must be a positive multiple of {divisor}")
    specs = []
    for index, (stride, scale) in enumerate(zip(config.ANCHOR_STRIDES, config.ANCHOR_SCALES), start=1):
        side = math.ceil(input_size / stride)
        specs.append(
            LevelSpec(
                index=index,
                stride=stride,
                map_h=side,
                map_w=side,
                scale_second_shot=float(scale),
                scale_first_shot=scale / 2.0,
            )
        )
    return specs


def anchor_size(scale: float, ratio: float, ratio_mode: Optional[str] = None) -> tuple[float, float]:
    """(width, height) of an anchor; "width" mode reads the scale as the width."""
    mode = (ratio_mode or config.ANCHOR_RATIO_MODE).lower()
    if mode == "width":
        return scale, scale * ratio
    if mode == "area":
        return scale / math.sqrt(ratio), scale * math.sqrt(ratio)
    raise InputError(f"unknown anchor ratio mode {mode!r}")


def build_grid(spec: LevelSpec, shot: Shot, ratio_mode: Optional[str] = None) -> AnchorGrid:
    shot = Shot(shot)
    w, h = anchor_size(spec.scale(shot), spec.ratio, ratio_mode)
    ii, jj = np.meshgrid(np.arange(spec.map_h), np.arange(spec.map_w), indexing="ij")
    cx = (jj.reshape(-1) + 0.5) * spec.stride
    cy = (ii.reshape(-1) + 0.5) * spec.stride
    boxes = np.stack(
        [cx - w / 2.0, cy - h / 2.0, np.full_like(cx, w), np.full_like(cy, h)], axis=1
    )
    boxes.setflags(write=False)
    return AnchorGrid(level=spec, shot=shot, boxes=boxes)


def total_anchor_count(specs: Sequence[LevelSpec], both_shots: bool = False) -> int:
    per_shot = sum(spec.count for spec in specs)
    return 2 * per_shot if both_shots else per_shot


@lru_cache(maxsize=32)
def _cached_shot_anchors(input_size: int, shot: Shot, ratio_mode: str, strict: bool) -> np.ndarray:
    specs = default_level_specs(input_size, strict=strict)
    boxes = np.concatenate([build_grid(spec, shot, ratio_mode).boxes for spec in specs], axis=0)
    boxes.setflags(write=False)
    return boxes


def shot_anchors(
    input_size: int, shot: Shot, ratio_mode: Optional[str] = None, strict: bool = False
) -> np.ndarray:
    """All anchors of one shot, levels concatenated in order (the network's output order)."""
    mode = (ratio_mode or config.ANCHOR_RATIO_MODE).lower()
    return _cached_shot_anchors(int(input_size), Shot(shot), mode, bool(strict))


def dump_csv(specs: Sequence[LevelSpec], out: TextIO, shots: Sequence[Shot] = (Shot.FIRST, Shot.SECOND),
             ratio_mode: Optional[str] = None) -> int:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["level", "shot", "cell_i", "cell_j", "x", "y", "w", "h"])
    rows = 0
    for shot in shots:
        for spec in specs:
            grid = build_grid(spec, shot, ratio_mode)
            for cell, (x, y, w, h) in enumerate(grid.boxes.tolist()):
                i, j = divmod(cell, spec.map_w)
                writer.writerow([spec.index, grid.shot.value, i, j, repr(x), repr(y), repr(w), repr(h)])
                rows += 1
    return rows
