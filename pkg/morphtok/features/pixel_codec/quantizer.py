"""
Quantizer Module
Codebook with exact nearest-neighbor lookup and the straight-through gradient contract
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ...utils.errors import MorphError

_CHUNK_ROWS = 1024


class Codebook(nn.Module):
    """K x d table of embedding vectors"""

    def __init__(self, size: int, dim: int):
        super().__init__()
        if size < 2:
            raise MorphError("INVALID_CODEBOOK", f"codebook needs at least 2 entries, got {size}")
        self.embedding = nn.Embedding(size, dim)
        self.embedding.weight.data.uniform_(-1.0 / size, 1.0 / size)

    @property
    def size(self) -> int:
        return self.embedding.num_embeddings

    @property
    def dim(self) -> int:
        return self.embedding.embedding_dim

    @property
    def weight(self) -> torch.Tensor:
        return self.embedding.weight

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        return self.embedding(ids)

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.embedding.weight).all())


@dataclass
class Quantized:
    """Result of quantizing a batch of vectors"""

    ids: torch.Tensor        # (...)
    embedding: torch.Tensor  # (..., d) straight-through: value = codes, gradient -> z
    codes: torch.Tensor      # (..., d) raw codebook rows, gradient -> codebook


def nearest_ids(z: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """
    argmin_k ||z - weight[k]||^2 over the last axis; ties go to the lowest index
    """
    dim = weight.shape[-1]
    flat = z.reshape(-1, dim)
    ids = torch.empty(flat.shape[0], dtype=torch.long, device=z.device)
    with torch.no_grad():
        for start in range(0, flat.shape[0], _CHUNK_ROWS):
            chunk = flat[start:start + _CHUNK_ROWS]
            distances = ((chunk[:, None, :] - weight[None, :, :]) ** 2).sum(-1)
            # torch.argmin returns the first minimal index
            ids[start:start + _CHUNK_ROWS] = distances.argmin(dim=1)
    return ids.reshape(z.shape[:-1])


def straight_through(z: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """Forward value of codes, gradient passed to z unchanged"""
    return z + (codes - z).detach()


def quantize(z: torch.Tensor, codebook: Codebook) -> Quantized:
    """Nearest-neighbor quantization of z (..., d) against codebook"""
    if not torch.isfinite(z).all():
        raise MorphError("NON_FINITE_INPUT", "cannot quantize NaN/Inf features")
    if z.shape[-1] != codebook.dim:
        raise MorphError("SHAPE_MISMATCH", f"feature dim {z.shape[-1]} != codebook dim {codebook.dim}")
    ids = nearest_ids(z.detach(), codebook.weight.detach())
    codes = codebook.lookup(ids)
    return Quantized(ids=ids, embedding=straight_through(z, codes), codes=codes)


def vq_losses(z: torch.Tensor, codes: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(codebook loss, commitment loss); both zero when z already equals its codes"""
    codebook_loss = F.mse_loss(codes, z.detach())
    commitment_loss = F.mse_loss(z, codes.detach())
    return codebook_loss, commitment_loss


def code_usage(ids: torch.Tensor, size: int) -> torch.Tensor:
    """Histogram of code ids; sums to ids.numel()"""
    return torch.bincount(ids.reshape(-1).long(), minlength=size)
