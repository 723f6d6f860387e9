"""Toy dual-shot detector: strided-conv backbone, per-level FEM, per-shot heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import config, storage
from ..anchors import LevelSpec, Shot, default_level_specs, shot_anchors
from ..errors import InputError, ShapeError
from ..geometry import Box, Detection, decode_array, nms_indices, round_detection
from ..tensor import ConvParams, Tensor, add, concat_rows, conv2d, mul_scalar, relu, to_anchor_rows
from ..utils import rng_for
from .fem import DEFAULT_DILATION, FemParams, fem_forward, init_fem_params
from .loss import ShotPredictions

logger = logging.getLogger(__name__)

LEVELS = 6
HEAD_KERNEL = 3
# 0..255 pixels enter the backbone as 0..1 after the pixel mean is taken off
PIXEL_SCALE = 1.0 / 255.0
INPUT_CHANNELS = 3
# scales the xavier limits of the toy preset
TOY_INIT_GAIN = float(np.sqrt(2.0))
# about the mean of the synthetic corpus
TOY_PIXEL_MEAN = 110.0


@dataclass
class NetConfig:
    input_size: int = 160
    backbone_channels: Tuple[int, ...] = (8, 12, 12, 12, 12, 12)
    fem_channels: int = 6
    use_fem: bool = True
    seed: int = 0
    fem_dilation: int = DEFAULT_DILATION
    ratio_mode: Optional[str] = None
    input_channels: int = INPUT_CHANNELS
    init_gain: float = 1.0
    pixel_mean: float = 0.0

    def __post_init__(self):
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        if len(self.backbone_channels) != LEVELS:
            raise InputError(f"backbone_channels needs {LEVELS} entries, got {self.backbone_channels}")
        if any(c <= 0 for c in self.backbone_channels):
            raise InputError(f"backbone channels must be positive: {self.backbone_channels}")
        if self.use_fem and (self.fem_channels <= 0 or self.fem_channels % 3):
            raise ShapeError(f"fem_channels must be a positive multiple of 3, got {self.fem_channels}")
        if self.init_gain <= 0:
            raise InputError(f"init_gain must be positive, got {self.init_gain}")
        default_level_specs(self.input_size, strict=False)

    @classmethod
    def toy(cls, **overrides) -> "NetConfig":
        """Preset the train-toy command and the overfit runs start from."""
        settings = dict(backbone_channels=(16,) * LEVELS, fem_channels=12, init_gain=TOY_INIT_GAIN,
                        pixel_mean=TOY_PIXEL_MEAN)
        settings.update(overrides)
        return cls(**settings)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["backbone_channels"] = list(self.backbone_channels)
        return data


@dataclass
class Network:
    cfg: NetConfig
    specs: List[LevelSpec]
    backbone: List[List[ConvParams]]
    fems: List[FemParams]
    heads: Dict[Tuple[Shot, int], Tuple[ConvParams, ConvParams]] = field(default_factory=dict)

    def convs(self) -> List[ConvParams]:
        out = [conv for stage in self.backbone for conv in stage]
        for fem in self.fems:
            out.extend(fem.convs())
        for shot in (Shot.FIRST, Shot.SECOND):
            for level in range(1, LEVELS + 1):
                out.extend(self.heads[(shot, level)])
        return out

    def parameters(self) -> Dict[str, Tensor]:
        """Name -> trainable tensor, in a fixed order."""
        named: Dict[str, Tensor] = {}
        for conv in self.convs():
            named.update(conv.named_tensors())
        return named

    def anchors(self, shot: Shot) -> np.ndarray:
        return shot_anchors(self.cfg.input_size, shot, self.cfg.ratio_mode)

    def anchor_count(self) -> int:
        return sum(spec.count for spec in self.specs)


def build(cfg: NetConfig) -> Network:
    rng = rng_for(cfg.seed, 0)
    specs = default_level_specs(cfg.input_size, strict=False)
    chans = cfg.backbone_channels
    backbone = []
    in_ch = cfg.input_channels
    for level, out_ch in enumerate(chans, start=1):
        # stage 1 reaches stride 4 with two strided convs; later stages halve once
        second_stride = 2 if level == 1 else 1
        backbone.append([
            ConvParams.xavier(out_ch, in_ch, 3, rng, stride=2, name=f"backbone{level}.conv1",
                              gain=cfg.init_gain),
            ConvParams.xavier(out_ch, out_ch, 3, rng, stride=second_stride,
                              name=f"backbone{level}.conv2", gain=cfg.init_gain),
        ])
        in_ch = out_ch

    fems: List[FemParams] = []
    if cfg.use_fem:
        for level in range(1, LEVELS + 1):
            upper = chans[level] if level < LEVELS else None
            fems.append(init_fem_params(chans[level - 1], upper, cfg.fem_channels, rng,
                                        dilation=cfg.fem_dilation, name=f"fem{level}", gain=cfg.init_gain))

    heads = {}
    for shot in (Shot.FIRST, Shot.SECOND):
        for level in range(1, LEVELS + 1):
            in_head = cfg.fem_channels if (shot is Shot.SECOND and cfg.use_fem) else chans[level - 1]
            prefix = f"head.{shot.value}{level}"
            heads[(shot, level)] = (
                ConvParams.xavier(2, in_head, HEAD_KERNEL, rng, name=f"{prefix}.cls", gain=cfg.init_gain),
                ConvParams.xavier(4, in_head, HEAD_KERNEL, rng, name=f"{prefix}.loc", gain=cfg.init_gain),
            )
    net = Network(cfg, specs, backbone, fems, heads)
    logger.debug("built network: %d tensors, %d anchors per shot", len(net.parameters()), net.anchor_count())
    return net


def _as_image(image) -> Tensor:
    if isinstance(image, Tensor):
        return image
    data = np.asarray(image, dtype=np.float64)
    return Tensor(data[None] if data.ndim == 3 else data)


def original_maps(net: Network, image: Tensor) -> List[Tensor]:
    if len(image.shape) != 4 or image.shape[2:] != (net.cfg.input_size, net.cfg.input_size):
        raise ShapeError(f"image shape {image.shape} does not match input size {net.cfg.input_size}")
    maps = []
    x = mul_scalar(image, PIXEL_SCALE)
    if net.cfg.pixel_mean:
        x = add(x, Tensor(np.full(x.shape, -net.cfg.pixel_mean * PIXEL_SCALE)))
    for stage, spec in zip(net.backbone, net.specs):
        for conv in stage:
            x = relu(conv2d(x, conv))
        if x.shape[2:] != (spec.map_h, spec.map_w):
            raise ShapeError(
                f"level {spec.index}: backbone map {x.shape[2:]} but anchors expect {(spec.map_h, spec.map_w)}"
            )
        maps.append(x)
    return maps


def enhanced_maps(net: Network, maps: Sequence[Tensor]) -> List[Tensor]:
    if not net.cfg.use_fem:
        return list(maps)
    return [
        fem_forward(maps[k], maps[k + 1] if k + 1 < len(maps) else None, net.fems[k])
        for k in range(len(maps))
    ]


def _heads(net: Network, maps: Sequence[Tensor], shot: Shot) -> ShotPredictions:
    logits, deltas = [], []
    for spec, fmap in zip(net.specs, maps):
        cls_conv, loc_conv = net.heads[(shot, spec.index)]
        cls_rows = to_anchor_rows(conv2d(fmap, cls_conv))
        if cls_rows.shape[1] != spec.count:
            raise ShapeError(f"{shot.value} shot level {spec.index}: {cls_rows.shape[1]} rows, expected {spec.count}")
        logits.append(cls_rows)
        deltas.append(to_anchor_rows(conv2d(fmap, loc_conv)))
    return ShotPredictions(concat_rows(logits), concat_rows(deltas), shot)


def forward_dual(net: Network, image) -> Tuple[ShotPredictions, ShotPredictions]:
    """First shot reads the original maps, second shot the enhanced ones; batched predictions."""
    maps = original_maps(net, _as_image(image))
    return _heads(net, maps, Shot.FIRST), _heads(net, enhanced_maps(net, maps), Shot.SECOND)


def forward_second(net: Network, image) -> ShotPredictions:
    maps = original_maps(net, _as_image(image))
    return _heads(net, enhanced_maps(net, maps), Shot.SECOND)


def face_scores(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    return probs[..., 1] / probs.sum(axis=-1)


def predict(
    net: Network,
    image,
    conf_thresh: float = config.SCORE_PREFILTER,
    top_pre: int = config.TOP_PRE_NMS,
    nms_overlap: float = config.NMS_OVERLAP,
    top_post: int = config.TOP_POST_NMS,
    contain: Optional[bool] = None,
) -> List[Detection]:
    """Second-shot detections for one image, rounded to integer boxes."""
    preds = forward_second(net, image)
    if preds.cls_logits.shape[0] != 1:
        raise ShapeError("predict takes a single image")
    scores = face_scores(preds.cls_logits.data[0])
    deltas = preds.loc_deltas.data[0]

    candidates = np.flatnonzero(scores >= conf_thresh)
    order = candidates[np.argsort(-scores[candidates], kind="stable")][:top_pre]
    boxes, clamped = decode_array(deltas[order], net.anchors(Shot.SECOND)[order])
    if clamped.any():
        logger.debug("predict: %d decoded sizes clamped", int(clamped.sum()))
    usable = np.isfinite(boxes).all(axis=1) & (boxes[:, 2] > 0) & (boxes[:, 3] > 0)
    boxes, order = boxes[usable], order[usable]
    keep = nms_indices(boxes, scores[order], nms_overlap)[:top_post]
    return [
        Detection(round_detection(Box(*boxes[k]), contain=contain), float(scores[order[k]]))
        for k in keep
    ]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _config_path(path: Path) -> Path:
    return path.with_suffix(".net.json")


def save_checkpoint(net: Network, path) -> List[Path]:
    """Writes the manifest, its payload and a NetConfig sidecar; returns all three paths."""
    path = Path(path)
    manifest, payload = storage.save_checkpoint(path, {n: t.data for n, t in net.parameters().items()})
    cfg_path = _config_path(path)
    cfg_path.write_text(json.dumps(net.cfg.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return [manifest, payload, cfg_path]


def load_checkpoint(path, cfg: Optional[NetConfig] = None) -> Network:
    path = Path(path)
    if cfg is None:
        cfg_path = _config_path(path)
        if not cfg_path.is_file():
            raise InputError(f"no network config beside checkpoint: {cfg_path}")
        cfg = NetConfig(**json.loads(cfg_path.read_text(encoding="utf-8")))
    net = build(cfg)
    arrays = storage.load_checkpoint(path)
    params = net.parameters()
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise InputError(f"checkpoint lacks {len(missing)} tensors, e.g. {missing[0]}")
    for name, tensor in params.items():
        if arrays[name].shape != tensor.shape:
            raise ShapeError(f"{name}: checkpoint shape {arrays[name].shape}, network {tensor.shape}")
        tensor.data = np.ascontiguousarray(arrays[name])
    return net
