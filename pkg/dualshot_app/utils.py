from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError


def format_float(value: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(value), ".17g")


def format_score(value: float) -> str:
    return f"{float(value):.6f}"


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream...); order of use never matters."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def parse_bool(value: Optional[str], default: bool = False) -> bool:
    if value is None or value == "":
        return default
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {value!r}")


def parse_int_list(value: str) -> Tuple[int, ...]:
    try:
        return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
    except ValueError as exc:
        raise InputError(f"not an integer list: {value!r}") from exc


def parse_float(value: str, key: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{key}: not a number: {value!r}") from exc


def ensure_dir(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def as_box_array(boxes: Iterable) -> np.ndarray:
    """Accept an (N, 4) array or an iterable of Box / 4-sequences; returns float64 (N, 4)."""
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    else:
        rows = [
            (b.x, b.y, b.w, b.h) if hasattr(b, "w") else tuple(b) for b in boxes
        ]
        arr = np.asarray(rows, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 4), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise InputError(f"expected boxes of shape (N, 4), got {arr.shape}")
    return arr


def geometric_bin_edges(centers: Sequence[float]) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.float64)
    return np.concatenate([centers / np.sqrt(2.0), centers[-1:] * np.sqrt(2.0)])
