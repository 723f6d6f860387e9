"""Feature enhancement: fuse a level with its upper neighbour, then widen the receptive field.

The current map and the upper map are both projected to C' channels by 1x1
convs; the upper one is upsampled 2x and multiplied in. The product is split
into three channel groups that run through 1, 2 and 3 stacked dilated 3x3
convs, and the groups are concatenated again.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Dict, List, Optional

import numpy as np

from ..errors import CheckFailure, InputError, ShapeError
from ..tensor import (
    ConvParams,
    Tensor,
    concat_channels,
    conv2d,
    crop_to,
    eltwise_mul,
    relu,
    split_channels,
    upsample2x,
)

logger = logging.getLogger(__name__)

BRANCH_DEPTHS = (1, 2, 3)
DEFAULT_DILATION = 3
BRANCH_KERNEL = 3


@dataclass
class FemParams:
    norm_cur: ConvParams
    norm_up: Optional[ConvParams]
    branches: List[List[ConvParams]]

    def __post_init__(self):
        c_prime = self.norm_cur.out_ch
        if c_prime % 3:
            raise ShapeError(f"FEM channels {c_prime} not divisible by 3")
        if self.norm_up is not None and self.norm_up.out_ch != c_prime:
            raise ShapeError(f"FEM upper projection gives {self.norm_up.out_ch} channels, expected {c_prime}")
        if len(self.branches) != len(BRANCH_DEPTHS):
            raise ShapeError(f"FEM needs {len(BRANCH_DEPTHS)} branches, got {len(self.branches)}")
        for convs in self.branches:
            for conv in convs:
                if conv.stride != 1 or conv.padding != conv.dilation * (conv.weight.shape[2] - 1) // 2:
                    raise ShapeError(f"{conv.name}: branch convs must be stride-1 same-padded")
                if conv.in_ch != c_prime // 3 or conv.out_ch != c_prime // 3:
                    raise ShapeError(f"{conv.name}: branch convs must map {c_prime // 3} -> {c_prime // 3} channels")

    @property
    def channels(self) -> int:
        return self.norm_cur.out_ch

    def convs(self) -> List[ConvParams]:
        out = [self.norm_cur]
        if self.norm_up is not None:
            out.append(self.norm_up)
        for convs in self.branches:
            out.extend(convs)
        return out

    def named_tensors(self) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for conv in self.convs():
            named.update(conv.named_tensors())
        return named


def init_fem_params(c_cur: int, c_up: Optional[int], c_prime: int, rng: np.random.Generator,
                    dilation: int = DEFAULT_DILATION, name: str = "fem", gain: float = 1.0) -> FemParams:
    if c_prime <= 0 or c_prime % 3:
        raise ShapeError(f"FEM channels must be a positive multiple of 3, got {c_prime}")
    part = c_prime // 3
    norm_cur = ConvParams.xavier(c_prime, c_cur, 1, rng, name=f"{name}.norm_cur", gain=gain)
    norm_up = ConvParams.xavier(c_prime, c_up, 1, rng, name=f"{name}.norm_up", gain=gain) if c_up else None
    branches = [
        [
            ConvParams.xavier(part, part, BRANCH_KERNEL, rng, dilation=dilation,
                              name=f"{name}.branch{b}.conv{k}", gain=gain)
            for k in range(1, depth + 1)
        ]
        for b, depth in enumerate(BRANCH_DEPTHS, start=1)
    ]
    return FemParams(norm_cur, norm_up, branches)


def _check_pair(of_cur: Tensor, of_up: Tensor) -> None:
    height, width = of_cur.shape[2:]
    up_h, up_w = of_up.shape[2:]
    if (up_h, up_w) != (-(-height // 2), -(-width // 2)):
        raise ShapeError(
            f"FEM upper map {up_h}x{up_w} is not half of {height}x{width} (ceil division)"
        )


def run_branch(x: Tensor, convs: List[ConvParams]) -> Tensor:
    for conv in convs:
        x = relu(conv2d(x, conv))
    return x


def fem_forward(of_cur: Tensor, of_up: Optional[Tensor], params: FemParams) -> Tensor:
    height, width = of_cur.shape[2:]
    fused = relu(conv2d(of_cur, params.norm_cur))
    if of_up is not None:
        if params.norm_up is None:
            raise ShapeError("FEM params for the top level cannot take an upper map")
        _check_pair(of_cur, of_up)
        up = relu(conv2d(of_up, params.norm_up))
        fused = eltwise_mul(fused, crop_to(upsample2x(up), height, width))
    part = params.channels // 3
    groups = split_channels(fused, [part, part, part])
    return concat_channels([run_branch(g, convs) for g, convs in zip(groups, params.branches)])


def receptive_field(branch_depth: int, kernel: int = BRANCH_KERNEL, dilation: int = DEFAULT_DILATION) -> int:
    if branch_depth < 1:
        raise InputError(f"branch depth must be >= 1, got {branch_depth}")
    return 1 + branch_depth * (kernel - 1) * dilation


def positive_copy(params: FemParams) -> FemParams:
    """Same topology with |w| + 0.01 weights and zero biases, for impulse-response checks."""
    def flip(conv: ConvParams) -> ConvParams:
        return ConvParams(
            Tensor(np.abs(conv.weight.data) + 0.01), Tensor(np.zeros(conv.out_ch)),
            stride=conv.stride, dilation=conv.dilation, padding=conv.padding, name=conv.name,
        )

    return FemParams(
        flip(params.norm_cur),
        None if params.norm_up is None else flip(params.norm_up),
        [[flip(c) for c in convs] for convs in params.branches],
    )


def verify_rf_empirically(params: FemParams, branch: int) -> int:
    """Width of the nonzero response of one branch to a centred unit impulse.

    Weights must be positive (see ``positive_copy``); the response to a zero
    input is subtracted so biases do not widen the measured extent.
    """
    if not 1 <= branch <= len(params.branches):
        raise InputError(f"branch must be in 1..{len(params.branches)}, got {branch}")
    convs = params.branches[branch - 1]
    if any((conv.weight.data <= 0).any() for conv in convs):
        raise InputError("impulse-response check needs strictly positive branch weights")
    reach = sum(conv.extent[1] - 1 for conv in convs)
    size = 2 * reach + 3
    impulse = np.zeros((1, convs[0].in_ch, size, size))
    impulse[0, :, size // 2, size // 2] = 1.0
    response = run_branch(Tensor(impulse), convs).data - run_branch(Tensor(np.zeros_like(impulse)), convs).data
    active = np.abs(response).sum(axis=(0, 1)) > 0
    if not active.any():
        raise CheckFailure(f"branch {branch}: impulse response is all zero")
    cols = np.flatnonzero(active.any(axis=0))
    rows = np.flatnonzero(active.any(axis=1))
    measured = int(cols[-1] - cols[0] + 1)
    if measured != int(rows[-1] - rows[0] + 1):
        raise CheckFailure(f"branch {branch}: impulse response is not square")
    logger.debug("branch %d: measured receptive field %d px", branch, measured)
    return measured
