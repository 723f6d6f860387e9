"""On-disk formats: tensor fixtures, checkpoints, PPM/PGM images and face-box sidecars."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np

from .errors import InputError, ParseError
from .utils import as_box_array, format_float

logger = logging.getLogger(__name__)

TENSOR_HEADER = "TENSOR"


def _as_rank4(array: np.ndarray) -> np.ndarray:
    if array.ndim > 4:
        raise InputError(f"tensor fixtures hold at most 4 dims, got shape {array.shape}")
    return array.reshape((1,) * (4 - array.ndim) + array.shape)


def format_tensor(array) -> str:
    data = _as_rank4(np.asarray(array, dtype=np.float64))
    header = " ".join([TENSOR_HEADER, *(str(d) for d in data.shape)])
    return header + "\n" + " ".join(format_float(v) for v in data.reshape(-1)) + "\n"


def parse_tensor(text: str) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 5 or tokens[0] != TENSOR_HEADER:
        raise ParseError("expected header 'TENSOR b c h w'", 1)
    try:
        shape = tuple(int(t) for t in tokens[1:5])
    except ValueError as exc:
        raise ParseError(f"bad tensor dimensions {tokens[1:5]}", 1) from exc
    if any(d < 0 for d in shape):
        raise ParseError(f"negative tensor dimension in {shape}", 1)
    expected = int(np.prod(shape))
    values = tokens[5:]
    if len(values) != expected:
        raise ParseError(f"shape {shape} needs {expected} values, found {len(values)}")
    try:
        data = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"non-numeric tensor value: {exc}") from exc
    return data.reshape(shape)


def write_tensor(path, array) -> Path:
    path = Path(path)
    path.write_text(format_tensor(array), encoding="utf-8")
    return path


def read_tensor(path) -> np.ndarray:
    return parse_tensor(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Weight sets
# ---------------------------------------------------------------------------


def save_weight_fixtures(directory, arrays: Mapping[str, np.ndarray]) -> Path:
    """One tensor fixture per array plus `manifest.txt` of (name, shape) lines."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, array in arrays.items():
        write_tensor(directory / f"{name}.tensor", array)
        lines.append(f"{name} {'x'.join(str(d) for d in np.shape(array)) or 'scalar'}")
    manifest = directory / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_weight_fixtures(directory) -> Dict[str, np.ndarray]:
    directory = Path(directory)
    arrays = {}
    for number, line in enumerate((directory / "manifest.txt").read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, shape_text = line.split()
        except ValueError as exc:
            raise ParseError(f"expected 'name shape', got {line!r}", number) from exc
        shape = () if shape_text == "scalar" else tuple(int(d) for d in shape_text.split("x"))
        arrays[name] = read_tensor(directory / f"{name}.tensor").reshape(shape)
    return arrays


def save_checkpoint(path, arrays: Mapping[str, np.ndarray]) -> Tuple[Path, Path]:
    """Manifest text (`name shape offset`) beside a raw little-endian float64 payload."""
    path = Path(path)
    payload_path = path.with_suffix(".bin")
    offset = 0
    lines = [f"payload {payload_path.name}"]
    with payload_path.open("wb") as fh:
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype="<f8")
            shape = ",".join(str(d) for d in data.shape) or "scalar"
            lines.append(f"{name} {shape} {offset}")
            fh.write(data.tobytes())
            offset += data.size
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug("checkpoint %s: %d arrays, %d values", path, len(arrays), offset)
    return path, payload_path


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("payload "):
        raise ParseError("checkpoint manifest must start with 'payload <file>'", 1)
    payload = np.fromfile(path.parent / lines[0].split(None, 1)[1].strip(), dtype="<f8")
    arrays = {}
    for number, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"expected 'name shape offset', got {line!r}", number)
        name, shape_text, offset_text = parts
        shape = () if shape_text == "scalar" else tuple(int(d) for d in shape_text.split(","))
        offset = int(offset_text)
        size = int(np.prod(shape)) if shape else 1
        if offset + size > payload.size:
            raise ParseError(f"{name}: payload too short", number)
        arrays[name] = payload[offset:offset + size].reshape(shape).astype(np.float64)
    return arrays


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def write_pnm(path, image: np.ndarray) -> Path:
    """Binary PPM for (3, H, W) or PGM for (1, H, W)/(H, W); values clipped to 0..255."""
    path = Path(path)
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3 or array.shape[0] not in (1, 3):
        raise InputError(f"image must be (1|3, H, W), got {array.shape}")
    channels, height, width = array.shape
    pixels = np.clip(np.rint(array), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P6" if channels == 3 else b"P5"
    with path.open("wb") as fh:
        fh.write(magic + f"\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return path


def _pnm_tokens(raw: bytes, count: int) -> Tuple[List[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError("truncated PNM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Returns float64 (C, H, W) with C = 3 for P6 and 1 for P5."""
    raw = Path(path).read_bytes()
    (magic, width, height, maxval), offset = _pnm_tokens(raw, 4)
    if magic not in (b"P5", b"P6"):
        raise InputError(f"{path}: only binary PPM/PGM supported, got {magic!r}")
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval > 255:
        raise InputError(f"{path}: 16-bit PNM not supported")
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height * channels, offset=offset)
    return data.reshape(height, width, channels).transpose(2, 0, 1).astype(np.float64)


def write_boxes(path, boxes: Iterable) -> Path:
    arr = as_box_array(list(boxes) if not isinstance(boxes, np.ndarray) else boxes)
    lines = [" ".join(format_float(v) for v in row) for row in arr]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return Path(path)


def read_boxes(path) -> np.ndarray:
    rows = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError as exc:
            raise ParseError(f"non-numeric box field in {line!r}", number) from exc
        if len(values) != 4:
            raise ParseError(f"expected 'x y w h', got {line!r}", number)
        rows.append(values)
    return as_box_array(np.asarray(rows, dtype=np.float64).reshape(-1, 4))
