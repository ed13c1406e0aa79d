"""
Schedule Module
Linear warmup then cosine decay to zero, and the AdamW step that applies it
"""

from __future__ import annotations

import math
from typing import Iterable, List

import torch

from ...utils.errors import MorphError
from .train_config import TrainConfig


def lr_at(step: int, lr_max: float, warmup: int, steps: int) -> float:
    """Learning rate for step in [0, steps]"""
    if step < 0 or step > steps:
        raise MorphError("STEP_OUT_OF_RANGE", f"step {step} outside [0, {steps}]")
    warmup = min(warmup, steps)
    if step < warmup:
        return lr_max * step / warmup
    if steps == warmup:
        return lr_max if step < steps else 0.0
    progress = (step - warmup) / (steps - warmup)
    return 0.5 * lr_max * (1.0 + math.cos(math.pi * progress))


def build_optimizer(params: Iterable[torch.nn.Parameter], config: TrainConfig) -> torch.optim.AdamW:
    trainable: List[torch.nn.Parameter] = [p for p in params if p.requires_grad]
    if not trainable:
        raise MorphError("INVALID_CONFIG", "no trainable parameters")
    return torch.optim.AdamW(trainable, lr=config.lr_max, betas=config.betas, weight_decay=config.weight_decay)


def optimizer_step(optimizer: torch.optim.Optimizer, step: int, config: TrainConfig) -> float:
    """Set the scheduled rate, clip, step and clear grads; returns the rate used"""
    lr = lr_at(step, config.lr_max, config.warmup, config.steps)
    for group in optimizer.param_groups:
        group["lr"] = lr
    if config.grad_clip > 0:
        params = [p for group in optimizer.param_groups for p in group["params"] if p.grad is not None]
        torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return lr


def optimizer_echo(config: TrainConfig) -> dict:
    """Hyper-parameters recorded in checkpoint metadata"""
    return {
        "name": "AdamW",
        "betas": list(config.betas),
        "weight_decay": config.weight_decay,
        "lr_max": config.lr_max,
        "warmup": config.warmup,
        "schedule": "cosine",
    }
