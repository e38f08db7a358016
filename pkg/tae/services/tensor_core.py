"""
Tensor core.

Float64 ``torch`` tensors are the array type; a ``Tape`` records every public
primitive executed on it, guards against running backward twice, and (through
tensor hooks) notes the order in which backward reaches each recorded node.
The networks and losses are built only from the primitives here.
"""

from __future__ import annotations

import math
import weakref
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Literal

import structlog
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from tae.errors import (
    BroadcastError,
    DomainError,
    NonScalarLossError,
    ShapeMismatchError,
    TapeReuseError,
)

logger = structlog.get_logger(__name__)

DTYPE = torch.float64

ElementwiseKind = Literal["add", "sub", "mul", "pow", "exp", "log", "sigmoid", "clamp"]
Operand = Tensor | float | int


def as_tensor(data, *, requires_grad: bool = False) -> Tensor:
    """Copy *data* into a fresh float64 tensor."""
    out = torch.as_tensor(data, dtype=DTYPE).clone()
    return out.requires_grad_(requires_grad)


# ── Tape ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor


@dataclass
class Tape:
    """Ordered record of executed primitives. Single-threaded; backward runs once."""

    nodes: list[TapeNode] = field(default_factory=list)
    visited: list[int] = field(default_factory=list)
    consumed: bool = False
    _handles: list = field(default_factory=list, repr=False)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor) -> Tensor:
        index = len(self.nodes)
        self.nodes.append(TapeNode(op, tuple(inputs), output))
        if output.requires_grad:
            # hooks must not hold the tape strongly; torch keeps them outside the gc
            self._handles.append(output.register_hook(_visit_hook(weakref.ref(self), index)))
        return output

    def release_hooks(self) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles.clear()

    def produced(self, tensor: Tensor) -> bool:
        return any(node.output is tensor for node in self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def _visit_hook(ref: weakref.ReferenceType[Tape], index: int) -> Callable[[Tensor], None]:
    def hook(grad: Tensor) -> None:
        tape = ref()
        if tape is not None:
            tape.visited.append(index)

    return hook


def _record(tape: Tape | None, op: str, inputs: Sequence[Tensor], output: Tensor) -> Tensor:
    if tape is None:
        return output
    return tape.record(op, inputs, output)


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """
    Seed ``d loss / d loss = 1`` and propagate to every leaf reachable from *loss*.

    Tensors in *params* that the loss does not depend on end with a zero grad.
    """
    if loss.numel() != 1:
        raise NonScalarLossError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if tape.consumed:
        raise TapeReuseError("backward already ran on this tape")
    if not tape.produced(loss):
        raise ValueError("loss was not produced on this tape")
    tape.consumed = True

    try:
        if loss.requires_grad:
            loss.backward(torch.ones_like(loss))
    finally:
        tape.release_hooks()
    for p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)


# ── Layers ──────────────────────────────────────────────────────────────────

class ConvLayer(nn.Module):
    """2-D correlation layer; weights are (out, in, k, k)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        *,
        zero_init: bool = False,
        leaky_slope: float = 0.1,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        if stride < 1 or padding < 0:
            raise ValueError(f"invalid stride/padding: {stride}/{padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(
            torch.zeros(out_channels, in_channels, kernel_size, kernel_size, dtype=DTYPE)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels, dtype=DTYPE))
        if not zero_init:
            fan_in = in_channels * kernel_size * kernel_size
            bound = nn.init.calculate_gain("leaky_relu", leaky_slope) * math.sqrt(3.0 / fan_in)
            with torch.no_grad():
                self.weight.uniform_(-bound, bound, generator=generator)

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        return ((height + 2 * p - k) // s + 1, (width + 2 * p - k) // s + 1)

    def forward(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return conv2d_forward(x, self, tape)


class AffineLayer(nn.Module):
    """Dense layer mapping a length-``in`` vector to length ``out``."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        *,
        zero_init: bool = False,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.zeros(out_features, in_features, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(out_features, dtype=DTYPE))
        if not zero_init:
            bound = 1.0 / math.sqrt(in_features)
            with torch.no_grad():
                self.weight.uniform_(-bound, bound, generator=generator)

    def forward(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return affine_forward(x, self, tape)


# ── Primitives ──────────────────────────────────────────────────────────────

def conv2d_forward(x: Tensor, layer: ConvLayer, tape: Tape | None = None) -> Tensor:
    """Correlation-with-bias of a C×H×W input; output (out, H', W')."""
    if x.dim() != 3 or x.shape[0] != layer.in_channels:
        raise ShapeMismatchError(
            f"conv2d input {tuple(x.shape)} does not match weights {tuple(layer.weight.shape)}"
        )
    height, width = x.shape[1] + 2 * layer.padding, x.shape[2] + 2 * layer.padding
    if height < layer.kernel_size or width < layer.kernel_size:
        raise ShapeMismatchError(
            f"conv2d input {tuple(x.shape)} smaller than kernel {tuple(layer.weight.shape)} "
            f"after padding {layer.padding}"
        )
    out = F.conv2d(
        x.unsqueeze(0), layer.weight, layer.bias, stride=layer.stride, padding=layer.padding
    ).squeeze(0)
    return _record(tape, "conv2d", (x, layer.weight, layer.bias), out)


def affine_forward(x: Tensor, layer: AffineLayer, tape: Tape | None = None) -> Tensor:
    if x.dim() != 1 or x.shape[0] != layer.in_features:
        raise ShapeMismatchError(
            f"affine input {tuple(x.shape)} does not match weights {tuple(layer.weight.shape)}"
        )
    out = F.linear(x, layer.weight, layer.bias)
    return _record(tape, "affine", (x, layer.weight, layer.bias), out)


def leaky_relu(x: Tensor, slope: float, tape: Tape | None = None) -> Tensor:
    return _record(tape, "leaky_relu", (x,), F.leaky_relu(x, negative_slope=slope))


def _broadcast(a: Tensor, b: Operand | None) -> Tensor:
    """Scalar or per-channel (leading-dim) broadcasting only."""
    if isinstance(b, (int, float)):
        return torch.tensor(float(b), dtype=a.dtype)
    if not isinstance(b, Tensor):
        raise BroadcastError(f"unsupported operand {type(b).__name__}")
    if b.shape == a.shape:
        return b
    if b.numel() == 1:
        return b.reshape(())
    if b.dim() == 1 and a.dim() >= 1 and b.shape[0] == a.shape[0]:
        return b.reshape(b.shape[0], *([1] * (a.dim() - 1)))
    raise BroadcastError(f"cannot broadcast {tuple(b.shape)} onto {tuple(a.shape)}")


def _safe_pow(base: Tensor, exponent: Tensor) -> Tensor:
    """``base ** exponent`` with pow(0, γ>0) = 0 and a zero gradient there."""
    zero_base = (base == 0) & (exponent > 0)
    if not bool(zero_base.any()):
        return base**exponent
    safe = torch.where(zero_base, torch.ones_like(base), base)
    return torch.where(zero_base, torch.zeros_like(safe), safe**exponent)


_UNARY: dict[str, Callable[[Tensor], Tensor]] = {
    "exp": torch.exp,
    "log": torch.log,
    "sigmoid": torch.sigmoid,
}


def elementwise(
    kind: ElementwiseKind,
    a: Tensor,
    b: Operand | tuple[float, float] | None = None,
    tape: Tape | None = None,
) -> Tensor:
    """
    Pointwise primitive. Unary kinds ignore *b*; ``clamp`` takes ``b = (lo, hi)``
    and passes gradient only inside the interval.
    """
    if kind in _UNARY:
        if kind == "log" and bool((a <= 0).any()):
            raise DomainError("log of non-positive value")
        return _record(tape, kind, (a,), _UNARY[kind](a))

    if kind == "clamp":
        if not isinstance(b, tuple) or len(b) != 2:
            raise BroadcastError("clamp expects b = (lo, hi)")
        lo, hi = b
        return _record(tape, kind, (a,), torch.clamp(a, lo, hi))

    other = _broadcast(a, b)
    if kind == "add":
        out = a + other
    elif kind == "sub":
        out = a - other
    elif kind == "mul":
        out = a * other
    elif kind == "pow":
        if bool((other != torch.round(other)).any()) and bool((a < 0).any()):
            raise DomainError("pow with non-integer exponent of a negative base")
        out = _safe_pow(a, other)
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    inputs = (a, other) if isinstance(b, Tensor) else (a,)
    return _record(tape, kind, inputs, out)


def channel_softmax(logits: Tensor, tape: Tape | None = None) -> Tensor:
    """Softmax over the last axis (each row of a K-vector or C×K matrix)."""
    if logits.numel() == 0 or logits.shape[-1] < 1:
        raise ShapeMismatchError(f"softmax needs K >= 1, got {tuple(logits.shape)}")
    return _record(tape, "softmax", (logits,), torch.softmax(logits, dim=-1))


def global_avg_pool(x: Tensor, tape: Tape | None = None) -> Tensor:
    if x.dim() != 3 or x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeMismatchError(f"global_avg_pool expects C×H×W, got {tuple(x.shape)}")
    return _record(tape, "global_avg_pool", (x,), x.mean(dim=(1, 2)))


def reduce_sum(x: Tensor, tape: Tape | None = None) -> Tensor:
    return _record(tape, "sum", (x,), x.sum())


def reduce_mean(x: Tensor, tape: Tape | None = None) -> Tensor:
    return _record(tape, "mean", (x,), x.mean())


# ── Finite-difference checking ──────────────────────────────────────────────

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    tol: float
    finite: bool
    analytic: Tensor
    numeric: Tensor

    @property
    def passed(self) -> bool:
        return self.finite and self.max_rel_error <= self.tol


def grad_check(
    f: Callable[[Tensor, Tape | None], Tensor],
    point: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
    *,
    indices: Sequence[int] | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """
    Compare the tape gradient of scalar ``f(x, tape)`` at *point* against central
    differences. Relative error is ``|a - n| / max(|a|, |n|, floor)``; *indices*
    restricts the comparison to selected flat coordinates.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-6, 1e-3]")

    x = point.detach().clone().to(DTYPE).requires_grad_(True)
    tape = Tape()
    value = f(x, tape)
    backward(tape, value, params=[x])
    analytic_full = x.grad.detach().reshape(-1)

    coords = list(range(analytic_full.numel())) if indices is None else list(indices)
    analytic = analytic_full[coords].clone()
    numeric = torch.zeros_like(analytic)

    shifted = point.detach().clone().to(DTYPE).contiguous()
    flat = shifted.view(-1)
    with torch.no_grad():
        for n, i in enumerate(coords):
            orig = float(flat[i])
            flat[i] = orig + h
            f_plus = float(f(shifted, None))
            flat[i] = orig - h
            f_minus = float(f(shifted, None))
            flat[i] = orig
            numeric[n] = (f_plus - f_minus) / (2.0 * h)

    finite = bool(
        torch.isfinite(analytic).all() and torch.isfinite(numeric).all() and math.isfinite(float(value))
    )
    if not coords:
        return GradCheckReport(0.0, tol, finite, analytic, numeric)
    denom = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=floor)
    err = float(((analytic - numeric).abs() / denom).max()) if finite else math.inf
    if not finite:
        logger.warning("grad_check_non_finite", coords=len(coords))
    return GradCheckReport(err, tol, finite, analytic, numeric)
