"""
Gradient Checking Module
Central finite differences against autograd, in float64
"""

from __future__ import annotations

from typing import Callable, Sequence

import torch


def numerical_grad(fn: Callable[[], torch.Tensor], tensor: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """
    Central-difference gradient of a scalar fn() w.r.t. tensor (perturbed in place)

    Args:
        fn: closure returning a scalar tensor; reads tensor's current values
        tensor: float64 tensor (leaf or parameter)
        eps: step size

    Returns:
        Tensor shaped like `tensor`
    """
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    flat_grad = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + eps
            plus = fn().item()
            flat[i] = original - eps
            minus = fn().item()
            flat[i] = original
            flat_grad[i] = (plus - minus) / (2.0 * eps)
    return grad


def analytic_grads(fn: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor]) -> list:
    """Autograd gradients of fn() w.r.t. each tensor (zeros when unused)"""
    loss = fn()
    grads = torch.autograd.grad(loss, list(tensors), allow_unused=True)
    return [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]


def rel_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), the usual gradient-check ratio"""
    diff = (a - b).abs().max().item()
    scale = max(a.abs().max().item(), b.abs().max().item(), floor)
    return diff / scale


def check_gradients(fn: Callable[[], torch.Tensor], tensors: Sequence[torch.Tensor], eps: float = 1e-6) -> float:
    """Worst relative error between autograd and finite differences over tensors"""
    analytic = analytic_grads(fn, tensors)
    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        worst = max(worst, rel_error(grad, numerical_grad(fn, tensor, eps)))
    return worst
