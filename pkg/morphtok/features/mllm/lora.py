"""
LoRA Module
Low-rank adapters on attention projections: W x + (alpha / r) B A x with B zero-initialized
"""

from __future__ import annotations

import math
from typing import List

import torch
import torch.nn as nn

from ...utils.errors import MorphError
from .mllm_config import LoRAConfig


class LoRALinear(nn.Module):
    """Frozen base nn.Linear plus a trainable rank-r update"""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        limit = min(base.in_features, base.out_features)
        if not 0 < rank <= limit:
            raise MorphError("LORA_RANK_TOO_LARGE", f"LoRA rank {rank} must be in [1, {limit}]")
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features, dtype=base.weight.dtype))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank, dtype=base.weight.dtype))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    @property
    def in_features(self) -> int:
        return self.base.in_features

    @property
    def out_features(self) -> int:
        return self.base.out_features

    def delta_weight(self) -> torch.Tensor:
        return self.scaling * (self.lora_b @ self.lora_a)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + (x @ self.lora_a.T @ self.lora_b.T) * self.scaling

    @torch.no_grad()
    def merged(self) -> nn.Linear:
        """Plain nn.Linear with W + (alpha / r) B A materialized"""
        linear = nn.Linear(self.in_features, self.out_features, bias=self.base.bias is not None,
                           dtype=self.base.weight.dtype)
        linear.weight.copy_(self.base.weight + self.delta_weight())
        if self.base.bias is not None:
            linear.bias.copy_(self.base.bias)
        return linear


def apply_lora(model: nn.Module, config: LoRAConfig) -> List[LoRALinear]:
    """
    Freeze every parameter of model, then wrap each attention projection named in
    config.targets with a LoRALinear. Returns the new adapters.
    """
    for param in model.parameters():
        param.requires_grad_(False)

    adapters: List[LoRALinear] = []
    for module in list(model.modules()):
        for name in config.targets:
            child = getattr(module, name, None)
            if isinstance(child, nn.Linear):
                adapter = LoRALinear(child, config.rank, config.alpha)
                setattr(module, name, adapter)
                adapters.append(adapter)
    if not adapters:
        raise MorphError("SHAPE_MISMATCH", f"no {config.targets} projections found for LoRA")
    print(f"✅ LoRA applied: {len(adapters)} projections, rank {config.rank}")
    return adapters


def merge_lora(model: nn.Module) -> int:
    """Replace every LoRALinear by its merged nn.Linear; returns how many were merged"""
    count = 0
    for module in list(model.modules()):
        for name, child in list(module.named_children()):
            if isinstance(child, LoRALinear):
                setattr(module, name, child.merged())
                count += 1
    return count


def lora_parameters(model: nn.Module) -> List[nn.Parameter]:
    params: List[nn.Parameter] = []
    for module in model.modules():
        if isinstance(module, LoRALinear):
            params.extend([module.lora_a, module.lora_b])
    return params
