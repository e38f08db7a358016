"""
AdamW with decoupled weight decay and bias-corrected moments.
"""

from __future__ import annotations

from collections.abc import Sequence

import torch
from torch import Tensor
from torch.optim import Optimizer

from tae.errors import ShapeMismatchError


@torch.no_grad()
def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[Tensor],
    exp_avgs: Sequence[Tensor],
    exp_avg_sqs: Sequence[Tensor],
    step: int,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> int:
    """
    Update *params* and the moment buffers in place; returns the new step count.

        p ← p · (1 − lr·wd)
        m ← β1·m + (1 − β1)·g          v ← β2·v + (1 − β2)·g²
        p ← p − lr · m̂ / (√v̂ + eps)     with m̂ = m / (1 − β1ᵗ), v̂ = v / (1 − β2ᵗ)
    """
    if not len(params) == len(grads) == len(exp_avgs) == len(exp_avg_sqs):
        raise ShapeMismatchError("params, grads and moment buffers differ in length")
    step += 1
    bias_c1 = 1.0 - beta1**step
    bias_c2 = 1.0 - beta2**step

    for p, g, m, v in zip(params, grads, exp_avgs, exp_avg_sqs):
        if not p.shape == g.shape == m.shape == v.shape:
            raise ShapeMismatchError(
                f"param {tuple(p.shape)}, grad {tuple(g.shape)}, "
                f"moments {tuple(m.shape)}/{tuple(v.shape)}"
            )
        if weight_decay != 0.0:
            p.mul_(1.0 - lr * weight_decay)
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        update = (m / bias_c1) / ((v / bias_c2).sqrt() + eps)
        p.sub_(lr * update)
    return step


class AdamW(Optimizer):
    """``torch.optim`` front-end over :func:`adamw_step` with one shared step counter."""

    def __init__(
        self,
        params,
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ) -> None:
        if lr < 0.0:
            raise ValueError(f"Invalid lr: {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"Invalid betas: {betas}")
        if eps <= 0.0:
            raise ValueError(f"Invalid eps: {eps}")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))
        self.step_count = 0

    def moments(self, p: Tensor) -> tuple[Tensor, Tensor]:
        state = self.state[p]
        if len(state) == 0:
            state["exp_avg"] = torch.zeros_like(p)
            state["exp_avg_sq"] = torch.zeros_like(p)
        return state["exp_avg"], state["exp_avg_sq"]

    def set_lr(self, lr: float) -> None:
        for group in self.param_groups:
            group["lr"] = lr

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        new_step = self.step_count + 1
        for group in self.param_groups:
            live = [p for p in group["params"] if p.grad is not None]
            if not live:
                continue
            moments = [self.moments(p) for p in live]
            beta1, beta2 = group["betas"]
            new_step = adamw_step(
                live,
                [p.grad for p in live],
                [m for m, _ in moments],
                [v for _, v in moments],
                self.step_count,
                lr=group["lr"],
                beta1=beta1,
                beta2=beta2,
                eps=group["eps"],
                weight_decay=group["weight_decay"],
            )
        self.step_count = new_step
        return loss
