"""Small reverse-mode tensor engine over float64 numpy arrays.

Feature maps are rank-4 (batch, channels, height, width). Every operation
returns a new Tensor that remembers its parents and a closure mapping the
output gradient to parent gradients; ``backward`` replays that record in
reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import GradientError, ShapeError

logger = logging.getLogger(__name__)

_EPS = np.finfo(np.float64).eps


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_done")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
    ):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._done = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward) -> Tensor:
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires_grad,
        _parents=parents if requires_grad else (),
        _backward=backward if requires_grad else None,
    )


def _require_rank4(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: expected (batch, channels, height, width), got shape {x.shape}")


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    name: str = field(default="conv")

    def __post_init__(self):
        if self.weight.data.ndim != 4:
            raise ShapeError(f"{self.name}: kernel must be (out, in, kh, kw), got {self.weight.shape}")
        out_ch, _, kh, kw = self.weight.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"{self.name}: kernel sides must be odd, got {kh}x{kw}")
        if self.bias.shape != (out_ch,):
            raise ShapeError(f"{self.name}: bias shape {self.bias.shape} does not match {out_ch} outputs")
        if self.stride < 1 or self.dilation < 1:
            raise ShapeError(
                f"{self.name}: stride and dilation must be positive, got {self.stride}/{self.dilation}"
            )
        if self.padding < 0:
            raise ShapeError(f"{self.name}: negative padding {self.padding}")

    @classmethod
    def same(cls, weight: Tensor, bias: Tensor, dilation: int = 1, stride: int = 1, name: str = "conv"):
        kh = weight.shape[2]
        return cls(weight, bias, stride=stride, dilation=dilation,
                   padding=dilation * (kh - 1) // 2, name=name)

    @classmethod
    def xavier(cls, out_ch: int, in_ch: int, kernel: int, rng: np.random.Generator,
               dilation: int = 1, stride: int = 1, name: str = "conv", gain: float = 1.0) -> "ConvParams":
        """Same-padded conv with xavier-uniform weights (times ``gain``) and zero bias."""
        fan_in, fan_out = in_ch * kernel * kernel, out_ch * kernel * kernel
        limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
        weight = Tensor(rng.uniform(-limit, limit, size=(out_ch, in_ch, kernel, kernel)),
                        requires_grad=True, name=f"{name}.weight")
        bias = Tensor(np.zeros(out_ch), requires_grad=True, name=f"{name}.bias")
        return cls.same(weight, bias, dilation=dilation, stride=stride, name=name)

    def named_tensors(self) -> dict:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def extent(self) -> Tuple[int, int]:
        _, _, kh, kw = self.weight.shape
        return (kh - 1) * self.dilation + 1, (kw - 1) * self.dilation + 1

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        eh, ew = self.extent
        out_h = (height + 2 * self.padding - eh) // self.stride + 1
        out_w = (width + 2 * self.padding - ew) // self.stride + 1
        return out_h, out_w

    def tensors(self) -> Tuple[Tensor, Tensor]:
        return self.weight, self.bias


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    _require_rank4(x, "conv2d")
    batch, channels, height, width = x.shape
    if channels != params.in_ch:
        raise ShapeError(
            f"{params.name}: input has {channels} channels, kernel expects {params.in_ch}"
        )
    out_h, out_w = params.output_size(height, width)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"{params.name}: input {height}x{width} too small for extent {params.extent}")

    s, d, p = params.stride, params.dilation, params.padding
    w = params.weight.data
    _, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data

    def window(i: int, j: int):
        return (
            slice(None),
            slice(None),
            slice(i * d, i * d + s * (out_h - 1) + 1, s),
            slice(j * d, j * d + s * (out_w - 1) + 1, s),
        )

    acc = np.zeros((batch, out_h, out_w, params.out_ch))
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(xp[window(i, j)], w[:, :, i, j], axes=([1], [1]))
    out = acc.transpose(0, 3, 1, 2) + params.bias.data[None, :, None, None]

    def backward(grad: np.ndarray):
        g = grad.transpose(0, 2, 3, 1)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                win = window(i, j)
                gw[:, :, i, j] = np.tensordot(g, xp[win], axes=([0, 1, 2], [0, 2, 3]))
                gxp[win] += np.tensordot(g, w[:, :, i, j], axes=([3], [0])).transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + height, p:p + width] if p else gxp
        return gx, gw, grad.sum(axis=(0, 2, 3))

    return _result(out, (x, params.weight, params.bias), backward)


# ---------------------------------------------------------------------------
# Resampling and channel plumbing
# ---------------------------------------------------------------------------


def _upsample_matrix(n: int) -> np.ndarray:
    # half-pixel centres, edges clamped (align_corners off)
    mat = np.zeros((2 * n, n))
    for out_idx in range(2 * n):
        src = max((out_idx + 0.5) / 2.0 - 0.5, 0.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        mat[out_idx, lo] += 1.0 - frac
        mat[out_idx, hi] += frac
    return mat


def upsample2x(x: Tensor) -> Tensor:
    _require_rank4(x, "upsample2x")
    _, _, height, width = x.shape
    uh, uw = _upsample_matrix(height), _upsample_matrix(width)
    tmp = np.tensordot(x.data, uw, axes=([3], [1]))
    out = np.tensordot(uh, tmp, axes=([1], [2])).transpose(1, 2, 0, 3)

    def backward(grad: np.ndarray):
        back = np.tensordot(grad, uw, axes=([3], [0]))
        return (np.tensordot(uh, back, axes=([0], [2])).transpose(1, 2, 0, 3),)

    return _result(out, (x,), backward)


def crop_to(x: Tensor, height: int, width: int) -> Tensor:
    """Top-left window of a feature map."""
    _require_rank4(x, "crop_to")
    if height > x.shape[2] or width > x.shape[3]:
        raise ShapeError(f"crop_to: cannot crop {x.shape[2:]} to {(height, width)}")
    if (height, width) == x.shape[2:]:
        return x
    out = x.data[:, :, :height, :width]

    def backward(grad: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, :, :height, :width] = grad
        return (full,)

    return _result(out, (x,), backward)


def eltwise_mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"eltwise_mul: shapes {a.shape} and {b.shape} differ")
    out = a.data * b.data
    return _result(out, (a, b), lambda g: (g * b.data, g * a.data))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul_scalar(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, float(g)),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: no tensors given")
    ref = parts[0].shape
    for part in parts[1:]:
        if len(part.shape) != len(ref) or any(
            a != b for k, (a, b) in enumerate(zip(part.shape, ref)) if k != axis
        ):
            raise ShapeError(f"concat: shape {part.shape} incompatible with {ref} along axis {axis}")
    if len(parts) == 1:
        return parts[0]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _result(out, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    for part in parts:
        _require_rank4(part, "concat_channels")
    return concat(parts, axis=1)


def split_channels(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    _require_rank4(x, "split_channels")
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split_channels: sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    pieces = []
    start = 0
    for size in sizes:
        stop = start + size

        def backward(grad: np.ndarray, start=start, stop=stop):
            full = np.zeros_like(x.data)
            full[:, start:stop] = grad
            return (full,)

        pieces.append(_result(x.data[:, start:stop], (x,), backward))
        start = stop
    return pieces


def to_anchor_rows(x: Tensor) -> Tensor:
    """(B, K, H, W) head output -> (B, H*W, K) rows in row-major cell order."""
    _require_rank4(x, "to_anchor_rows")
    batch, k, height, width = x.shape
    out = x.data.transpose(0, 2, 3, 1).reshape(batch, height * width, k)
    return _result(
        out, (x,),
        lambda g: (g.reshape(batch, height, width, k).transpose(0, 3, 1, 2),),
    )


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return concat(parts, axis=1)


def index_rows(x: Tensor, index) -> Tensor:
    """x[index] along the first axis; index may be an int or an integer array."""
    idx = index if np.isscalar(index) else np.asarray(index, dtype=np.int64)
    out = x.data[idx]

    def backward(grad: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, grad)
        return (full,)

    return _result(out, (x,), backward)


def perturb_gradient(x: Tensor, factor: float) -> Tensor:
    """Identity forward, gradient scaled by ``factor``: a negative control for gradient checks."""
    return _result(x.data.copy(), (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    z = logits.data
    if z.ndim != 2 or z.shape[1] != 2:
        raise ShapeError(f"softmax_cross_entropy: expected (N, 2) logits, got {z.shape}")
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: labels shape {labels.shape} for {z.shape[0]} rows")
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise ShapeError("softmax_cross_entropy: labels must be 0 or 1")
    labels = labels.astype(np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    out = log_norm - shifted[rows, labels]
    probs = np.exp(shifted - log_norm[:, None])

    def backward(grad: np.ndarray):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * grad[:, None],)

    return _result(out, (logits,), backward)


def smooth_l1(pred: Tensor, target) -> Tensor:
    """Smooth L1 summed over the last axis: a 4-vector gives a scalar, (N, 4) gives (N,)."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    adiff = np.abs(diff)
    out = np.where(adiff < 1.0, 0.5 * diff * diff, adiff - 0.5).sum(axis=-1)
    slope = np.clip(diff, -1.0, 1.0)
    return _result(out, (pred,), lambda g: (np.asarray(g)[..., None] * slope,))


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def _topological(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    if root.size != 1:
        raise GradientError(f"backward needs a scalar root, got shape {root.shape}")
    if root._done:
        raise GradientError("backward already ran on this graph; call reset(root) first")
    if not root.requires_grad:
        raise GradientError("root does not depend on any tensor that requires grad")

    order = _topological(root)
    pending = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        node.grad = grad
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
    root._done = True


def reset(root: Tensor) -> None:
    """Clear gradients of every tensor in root's graph so backward may run again."""
    for node in _topological(root):
        node.grad = None
        node._done = False


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for tensor in tensors:
        tensor.grad = None


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Worst coordinate of a finite-difference comparison.

    ``max_rel_error`` is |a - n| / max(|a|, |n|, 1e-8) and decides ``passed``.
    ``floored_error`` is the same maximum after treating differences below the
    floating-point resolution of the quotient as agreement; ``below_resolution``
    counts those coordinates.
    """

    max_rel_error: float
    passed: bool
    tol: float
    checked: int
    nonsmooth: int = 0
    worst_index: Optional[int] = None
    worst_name: Optional[str] = None
    message: str = ""
    floored_error: float = 0.0
    below_resolution: int = 0

    def describe(self) -> str:
        where = self.worst_name or "point"
        status = "PASS" if self.passed else "FAIL"
        text = (
            f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e} "
            f"checked={self.checked} nonsmooth={self.nonsmooth} worst={where}[{self.worst_index}] "
            f"floored_error={self.floored_error:.3e} below_resolution={self.below_resolution}"
        )
        return f"{text} {self.message}".strip()


def _rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_check(
    fn: Callable[[Tensor], Tensor],
    point: Tensor,
    tol: float,
    rng: Optional[np.random.Generator] = None,
    samples: int = 64,
    coords: Optional[np.ndarray] = None,
) -> GradCheckReport:
    """Compare the analytic gradient of ``fn`` at ``point`` with central differences.

    Step is 1e-5 * max(1, |x|). Coordinates where a ReLU kink falls inside the
    difference interval are recognised by disagreeing one-sided differences and
    compared against the one-sided difference on the analytic side instead.
    ``coords`` overrides the random subsample of flat indices.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    zero_grad([point])
    point.requires_grad = True
    root = fn(point)
    base = root.item()
    if not np.isfinite(base):
        return GradCheckReport(float("inf"), False, tol, 0, message="non-finite function value")
    backward(root)
    analytic = (point.grad if point.grad is not None else np.zeros_like(point.data)).reshape(-1).copy()
    if not np.all(np.isfinite(analytic)):
        return GradCheckReport(float("inf"), False, tol, 0, message="non-finite analytic gradient")

    flat = point.data.reshape(-1)
    if coords is None:
        if flat.size <= samples:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=samples, replace=False))

    worst, worst_idx, floored, nonsmooth, below = 0.0, None, 0.0, 0, 0
    for k in coords:
        orig = flat[k]
        h = 1e-5 * max(1.0, abs(orig))
        flat[k] = orig + h
        f_plus = fn(point).item()
        flat[k] = orig - h
        f_minus = fn(point).item()
        flat[k] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            return GradCheckReport(float("inf"), False, tol, int(k), worst_index=int(k),
                                   message="non-finite function value under perturbation")
        a = float(analytic[k])
        resolution = 8.0 * _EPS * max(1.0, abs(base), abs(f_plus), abs(f_minus)) / h
        candidates = [(f_plus - f_minus) / (2.0 * h)]
        err = _rel_error(a, candidates[0])
        if err > tol:
            forward, backward_diff = (f_plus - base) / h, (base - f_minus) / h
            if _rel_error(forward, backward_diff) > tol:
                nonsmooth += 1
                candidates = [forward, backward_diff]
                err = min(_rel_error(a, one_sided) for one_sided in candidates)
        # one-sided quotients carry twice the rounding of the central one
        limit = resolution if len(candidates) == 1 else 2.0 * resolution
        if min(abs(a - numeric) for numeric in candidates) <= limit:
            below += 1
        else:
            floored = max(floored, err)
        if worst_idx is None or err > worst:
            worst, worst_idx = err, int(k)
    passed = bool(worst <= tol and len(coords) > 0)
    return GradCheckReport(worst, passed, tol, len(coords), nonsmooth, worst_idx,
                           floored_error=floored, below_resolution=below)


def _pooled_coords(params: Mapping[str, Tensor], samples: int, rng: np.random.Generator):
    """One subsample of ``samples`` flat indices drawn across all tensors, split per tensor."""
    sizes = np.array([t.size for t in params.values()], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    chosen = np.arange(total) if total <= samples else np.sort(rng.choice(total, size=samples, replace=False))
    owner = np.searchsorted(offsets, chosen, side="right") - 1
    return {name: chosen[owner == i] - offsets[i] for i, name in enumerate(params)}


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tol: float,
    rng: Optional[np.random.Generator] = None,
    samples: int = 64,
    pooled: bool = False,
) -> GradCheckReport:
    """Run finite_diff_check over several tensors of one closed-over graph; report the worst.

    ``samples`` counts per tensor, or across all tensors together when ``pooled``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    plan = _pooled_coords(params, samples, rng) if pooled else {name: None for name in params}
    worst: Optional[GradCheckReport] = None
    checked = nonsmooth = below = 0
    floored = 0.0
    for name, tensor in params.items():
        coords = plan[name]
        if coords is not None and coords.size == 0:
            continue
        zero_grad(params.values())
        report = finite_diff_check(lambda _p: loss_fn(), tensor, tol, rng=rng, samples=samples, coords=coords)
        report.worst_name = name
        checked += report.checked
        nonsmooth += report.nonsmooth
        below += report.below_resolution
        floored = max(floored, report.floored_error)
        logger.debug("gradcheck %s: %s", name, report.describe())
        if worst is None or report.max_rel_error > worst.max_rel_error or not report.passed:
            worst = report
        if not report.passed:
            break
    if worst is None:
        return GradCheckReport(0.0, False, tol, 0, message="no tensors to check")
    return GradCheckReport(
        worst.max_rel_error, worst.passed, tol, checked, nonsmooth,
        worst.worst_index, worst.worst_name, worst.message, floored, below,
    )
