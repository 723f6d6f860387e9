from __future__ import annotations

from dataclasses import dataclass, field
import logging
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import config
from ..anchors import Shot
from ..errors import InputError, NumericError
from ..tensor import Tensor, backward, mul_scalar, zero_grad
from .augment import AugConfig, Sample, augment_batch
from .loss import DEFAULT_NEG_POS_RATIO, LossReport, pal_tensor, shot_loss
from .matching import match
from .network import Network, forward_dual

logger = logging.getLogger(__name__)

LR_SCHEDULES = ("constant", "step")
# (first step, multiplier) of the long schedule: 40k steps, then 10k at each decade
STEP_SCHEDULE = ((0, 1.0), (40_000, 0.1), (50_000, 0.01))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_schedule: str = "constant"
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch: int = 8
    steps: int = 500
    log_every: int = 50
    warmup_steps: int = 0
    warmup_ratio: float = 0.1
    clip_norm: float = 0.0
    use_pal: bool = True
    match_threshold: float = config.MATCH_THRESHOLD
    force_best: bool = True
    beta: float = 1.0
    lam: float = 1.0
    neg_pos_ratio: float = DEFAULT_NEG_POS_RATIO
    eq2_literal: bool = False

    def __post_init__(self):
        if self.lr_schedule not in LR_SCHEDULES:
            raise InputError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise InputError(
                f"bad optimiser settings lr={self.lr} momentum={self.momentum} weight_decay={self.weight_decay}"
            )
        if self.batch < 1 or self.steps < 0 or self.log_every < 1:
            raise InputError(f"bad loop settings batch={self.batch} steps={self.steps} log_every={self.log_every}")
        if self.warmup_steps < 0 or not 0 < self.warmup_ratio <= 1 or self.clip_norm < 0:
            raise InputError(
                f"bad warmup/clip settings warmup_steps={self.warmup_steps} "
                f"warmup_ratio={self.warmup_ratio} clip_norm={self.clip_norm}"
            )
        if self.beta <= 0 or self.lam < 0 or self.neg_pos_ratio <= 0:
            raise InputError(f"bad loss settings beta={self.beta} lambda={self.lam} ratio={self.neg_pos_ratio}")

    @classmethod
    def long_run(cls, **overrides) -> "TrainConfig":
        settings = dict(lr=1e-3, lr_schedule="step", batch=16, steps=60_000, log_every=100)
        settings.update(overrides)
        return cls(**settings)

    @classmethod
    def toy_run(cls, **overrides) -> "TrainConfig":
        """Short overfit run of the toy network: warmed-up, clipped and at a higher rate."""
        settings = dict(lr=4e-2, warmup_steps=100, warmup_ratio=0.1, clip_norm=3.0, batch=8, steps=500)
        settings.update(overrides)
        return cls(**settings)

    def lr_at(self, step: int) -> float:
        """Scheduled rate; the first ``warmup_steps`` ramp linearly up from ``warmup_ratio * lr``."""
        factor = 1.0
        if self.lr_schedule == "step":
            for start, mult in STEP_SCHEDULE:
                if step >= start:
                    factor = mult
        if step < self.warmup_steps:
            progress = step / self.warmup_steps
            factor *= self.warmup_ratio + (1.0 - self.warmup_ratio) * progress
        return self.lr * factor


class SGD:
    """v <- mu * v - lr * (g + wd * theta); theta <- theta + v."""

    def __init__(self, params: Dict[str, Tensor], momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def zero_grad(self) -> None:
        zero_grad(self.params.values())

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(t.grad ** 2) for t in self.params.values() if t.grad is not None)))

    def step(self, lr: float, clip_norm: float = 0.0) -> None:
        """Update in place; a positive ``clip_norm`` rescales the raw gradients to that global norm first."""
        scale = 1.0
        if clip_norm > 0:
            norm = self.grad_norm()
            if norm > clip_norm:
                scale = clip_norm / norm
        for name, tensor in self.params.items():
            grad = tensor.grad * scale if tensor.grad is not None else 0.0
            v = self.velocity[name]
            v *= self.momentum
            v -= lr * (grad + self.weight_decay * tensor.data)
            tensor.data = tensor.data + v


def _stack(batch: Sequence[Sample]) -> Tensor:
    if any(s.image is None for s in batch):
        raise InputError("training samples need pixels")
    return Tensor(np.stack([s.image for s in batch]))


def _mean_report(reports: List[LossReport]) -> LossReport:
    n = len(reports)
    return LossReport(
        conf=sum(r.conf for r in reports) / n,
        loc=sum(r.loc for r in reports) / n,
        total_shot=sum(r.total_shot for r in reports) / n,
        n_pos=sum(r.n_pos for r in reports),
        n_conf=sum(r.n_conf for r in reports),
    )


def batch_loss(net: Network, batch: Sequence[Sample], cfg: TrainConfig):
    """Mean progressive loss over the batch; returns (loss tensor, first report, second report)."""
    if not batch:
        raise InputError("empty training batch")
    first, second = forward_dual(net, _stack(batch))
    anchors = {shot: net.anchors(shot) for shot in (Shot.FIRST, Shot.SECOND)}
    total: Optional[Tensor] = None
    reports = {Shot.FIRST: [], Shot.SECOND: []}
    for b, sample in enumerate(batch):
        losses = {}
        for preds in (first, second):
            m = match(anchors[preds.shot], sample.faces, cfg.match_threshold, cfg.force_best)
            losses[preds.shot], report = shot_loss(
                preds.image(b), m, anchors[preds.shot], sample.faces,
                beta=cfg.beta, neg_pos_ratio=cfg.neg_pos_ratio, eq2_literal=cfg.eq2_literal,
            )
            reports[preds.shot].append(report)
        if cfg.use_pal:
            image_loss = pal_tensor(losses[Shot.FIRST], losses[Shot.SECOND], cfg.lam)
        else:
            image_loss = losses[Shot.SECOND]
        total = image_loss if total is None else pal_tensor(total, image_loss, 1.0)
    return mul_scalar(total, 1.0 / len(batch)), _mean_report(reports[Shot.FIRST]), _mean_report(reports[Shot.SECOND])


def train_step(net: Network, batch: Sequence[Sample], cfg: TrainConfig, optimizer: SGD,
               step: int = 0) -> LossReport:
    """One SGD step; the returned report holds the pre-update loss."""
    start = time.perf_counter()
    loss, first, second = batch_loss(net, batch, cfg)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(
            f"step {step}: non-finite loss (first conf={first.conf} loc={first.loc}, "
            f"second conf={second.conf} loc={second.loc})"
        )
    optimizer.zero_grad()
    backward(loss)
    optimizer.step(cfg.lr_at(step), cfg.clip_norm)

    elapsed_ms = (time.perf_counter() - start) * 1000
    if config.LOG_SLOW_STEPS and elapsed_ms >= config.SLOW_STEP_THRESHOLD_MS:
        logger.warning("Slow step %d: %.1fms for %d images", step, elapsed_ms, len(batch))
    if cfg.use_pal:
        conf = first.conf + cfg.lam * second.conf
        loc = first.loc + cfg.lam * second.loc
    else:
        conf, loc = second.conf, second.loc
    return LossReport(conf, loc, value, first.n_pos + second.n_pos, first.n_conf + second.n_conf,
                      pal_total=value, per_shot=(first, second))


@dataclass
class TrainHistory:
    losses: List[float] = field(default_factory=list)
    reports: List[LossReport] = field(default_factory=list)

    @property
    def initial(self) -> float:
        return self.losses[0]

    @property
    def final(self) -> float:
        return self.losses[-1]


def train(
    net: Network,
    samples: Sequence[Sample],
    cfg: TrainConfig,
    aug_cfg: Optional[AugConfig] = None,
    seed: int = config.DEFAULT_SEED,
    threads: int = 1,
    on_step: Optional[Callable[[int, LossReport], None]] = None,
) -> TrainHistory:
    """Cycle through ``samples`` in order; augment each batch afresh when ``aug_cfg`` is given."""
    if not samples:
        raise InputError("train: no samples")
    optimizer = SGD(net.parameters(), cfg.momentum, cfg.weight_decay)
    history = TrainHistory()
    n = len(samples)
    for step in range(cfg.steps):
        batch = [samples[(step * cfg.batch + k) % n] for k in range(cfg.batch)]
        if aug_cfg is not None:
            batch = augment_batch(batch, aug_cfg, seed=seed, threads=threads, epoch=step)
        report = train_step(net, batch, cfg, optimizer, step)
        history.losses.append(report.total_shot)
        history.reports.append(report)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            first, second = report.per_shot
            logger.info(
                "step %d pal_total=%.6f first conf=%.4f loc=%.4f second conf=%.4f loc=%.4f lr=%.2e",
                step, report.total_shot, first.conf, first.loc, second.conf, second.loc, cfg.lr_at(step),
            )
        if on_step is not None:
            on_step(step, report)
    return history
