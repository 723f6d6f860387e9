"""Finite-difference checks of the differentiable stack, target by target."""
from __future__ import annotations

import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ..anchors import Shot
from ..errors import InputError
from ..tensor import (
    GradCheckReport,
    Tensor,
    check_parameters,
    eltwise_mul,
    perturb_gradient,
    softmax_cross_entropy,
    sum_all,
)
from ..utils import rng_for
from .fem import fem_forward, init_fem_params
from .loss import ShotPredictions, mine_negatives, pal_tensor, shot_loss
from .matching import match
from .network import NetConfig, build, forward_dual

logger = logging.getLogger(__name__)

TARGETS = ("fem", "loss", "net")
DEFAULT_TOL = {"fem": 1e-4, "loss": 1e-4, "net": 1e-3}
# per tensor for fem and loss, across all parameters for net
DEFAULT_SAMPLES = {"fem": 64, "loss": 64, "net": 256}
MIN_SAMPLES = 64
CORRUPT_FACTOR = 1.5

Problem = Tuple[Callable[[], Tensor], Dict[str, Tensor]]


def _maybe_corrupt(x: Tensor, corrupt: bool) -> Tensor:
    return perturb_gradient(x, CORRUPT_FACTOR) if corrupt else x


def fem_problem(rng: np.random.Generator, corrupt: bool = False) -> Problem:
    params = init_fem_params(4, 5, 6, rng)
    for conv in params.convs():
        conv.bias.data = rng.normal(0.0, 0.1, size=conv.bias.shape)
    of_cur = Tensor(rng.normal(size=(1, 4, 7, 6)), requires_grad=True, name="of_cur")
    of_up = Tensor(rng.normal(size=(1, 5, 4, 3)), requires_grad=True, name="of_up")
    weights = Tensor(rng.normal(size=(1, 6, 7, 6)))

    def loss() -> Tensor:
        out = _maybe_corrupt(fem_forward(of_cur, of_up, params), corrupt)
        return sum_all(eltwise_mul(out, weights))

    tensors = {"of_cur": of_cur, "of_up": of_up}
    tensors.update(params.named_tensors())
    return loss, tensors


def _toy_anchors(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    centers = rng.uniform(0.0, 64.0, size=(n, 2))
    w, h = scale, scale * 1.5
    return np.column_stack([centers[:, 0] - w / 2, centers[:, 1] - h / 2, np.full(n, w), np.full(n, h)])


def loss_problem(rng: np.random.Generator, corrupt: bool = False) -> Problem:
    """Both shot losses on random predictions; mined negatives frozen at the base point."""
    faces = np.array([[10.0, 12.0, 16.0, 24.0], [36.0, 30.0, 12.0, 18.0]])
    shots = {}
    tensors: Dict[str, Tensor] = {}
    for shot, scale in ((Shot.FIRST, 8.0), (Shot.SECOND, 16.0)):
        anchors = _toy_anchors(rng, 24, scale)
        m = match(anchors, faces, 0.4, force_best=True)
        logits = Tensor(rng.normal(size=(24, 2)), requires_grad=True, name=f"{shot.value}.logits")
        deltas = Tensor(rng.normal(0.0, 0.5, size=(24, 4)), requires_grad=True, name=f"{shot.value}.deltas")
        preds = ShotPredictions(logits, deltas, shot)
        ce = softmax_cross_entropy(Tensor(logits.data), m.positive_mask.astype(np.int64)).data
        shots[shot] = (preds, m, anchors, mine_negatives(ce, m.anchor_labels))
        tensors[logits.name] = logits
        tensors[deltas.name] = deltas

    def loss() -> Tensor:
        parts = {
            shot: shot_loss(preds, m, anchors, faces, negatives=negs)[0]
            for shot, (preds, m, anchors, negs) in shots.items()
        }
        return _maybe_corrupt(pal_tensor(parts[Shot.FIRST], parts[Shot.SECOND]), corrupt)

    return loss, tensors


def net_problem(rng: np.random.Generator, corrupt: bool = False) -> Problem:
    cfg = NetConfig(input_size=64, backbone_channels=(3, 3, 3, 3, 3, 3), fem_channels=3,
                    seed=int(rng.integers(2**31)))
    net = build(cfg)
    for conv in net.convs():
        conv.bias.data = rng.normal(0.0, 0.05, size=conv.bias.shape)
    image = Tensor(rng.uniform(0.0, 255.0, size=(1, 3, 64, 64)), name="image")
    faces = np.array([[14.0, 10.0, 20.0, 30.0]])
    anchors = {shot: net.anchors(shot) for shot in (Shot.FIRST, Shot.SECOND)}
    matches = {shot: match(anchors[shot], faces, 0.4, force_best=True) for shot in anchors}

    first, second = forward_dual(net, image)
    negatives = {}
    for preds in (first, second):
        m = matches[preds.shot]
        ce = softmax_cross_entropy(Tensor(preds.cls_logits.data[0]), m.positive_mask.astype(np.int64)).data
        negatives[preds.shot] = mine_negatives(ce, m.anchor_labels)

    def loss() -> Tensor:
        parts = {}
        for preds in forward_dual(net, image):
            shot = preds.shot
            parts[shot] = shot_loss(preds.image(0), matches[shot], anchors[shot], faces,
                                    negatives=negatives[shot])[0]
        return _maybe_corrupt(pal_tensor(parts[Shot.FIRST], parts[Shot.SECOND]), corrupt)

    return loss, net.parameters()


PROBLEMS = {"fem": fem_problem, "loss": loss_problem, "net": net_problem}


def run_gradcheck(target: str, tol: Optional[float] = None, seed: int = 0, corrupt: bool = False,
                  samples: Optional[int] = None) -> GradCheckReport:
    if target not in PROBLEMS:
        raise InputError(f"unknown gradcheck target {target!r}; choose from {', '.join(TARGETS)}")
    tol = DEFAULT_TOL[target] if tol is None else tol
    samples = DEFAULT_SAMPLES[target] if samples is None else samples
    if samples < MIN_SAMPLES:
        raise InputError(f"gradcheck needs at least {MIN_SAMPLES} sampled coordinates, got {samples}")
    rng = rng_for(seed, TARGETS.index(target))
    loss, tensors = PROBLEMS[target](rng, corrupt)
    report = check_parameters(loss, tensors, tol, rng=rng, samples=samples, pooled=target == "net")
    logger.info("gradcheck %s: %s", target, report.describe())
    return report
