"""
Deconfounded Slot Attention Module
Query-axis slot attention with the dictionary-expanded query (normalized weighted geometric mean)

Functional ops work on plain tensors so they can be checked in isolation;
SlotAttention wraps them with trainable parameters for the Q-former blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ...utils.errors import MorphError

PRIOR_TOLERANCE = 1e-8
RENORM_EPS = 1e-8


@dataclass
class AttentionParams:
    """d x d projections of one slot-attention layer"""

    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise MorphError("INVALID_SCALE", f"attention scale must be positive, got {self.scale}")


@dataclass
class ConfounderDict:
    """
    Dictionary rows D (K_d x d_dict) with prior P(d), plus the projections of the
    single-layer cross-attention that reads it (G as query, D as key/value)
    """

    entries: torch.Tensor
    prior: torch.Tensor
    w_q: torch.Tensor   # d x d
    w_k: torch.Tensor   # d_dict x d
    w_v: torch.Tensor   # d_dict x d
    scale: float


@dataclass
class SlotAttentionOutput:
    attn: torch.Tensor   # (..., n_g, L_v); sums to 1 over the query axis
    slots: torch.Tensor  # (..., n_g, d)


def check_prior(prior: torch.Tensor):
    """Reject priors that are negative or do not sum to 1 within 1e-8"""
    p = prior.detach().to(torch.float64)
    if p.dim() != 1 or not torch.isfinite(p).all() or bool((p < 0).any()):
        raise MorphError("INVALID_PRIOR", "prior must be a finite non-negative vector")
    total = float(p.sum())
    if abs(total - 1.0) > PRIOR_TOLERANCE:
        raise MorphError("INVALID_PRIOR", f"prior sums to {total!r}, expected 1")


def intervention_term(G: torch.Tensor, dictionary: ConfounderDict) -> torch.Tensor:
    """
    E_d[h_G(d)]: cross-attention weights of every group token over the dictionary,
    multiplied entrywise into the projected rows and weighted by P(d)

    Returns:
        (..., n_g, d) tensor
    """
    check_prior(dictionary.prior)
    keys = dictionary.entries @ dictionary.w_k            # K_d x d
    values = dictionary.entries @ dictionary.w_v          # K_d x d
    scores = (G @ dictionary.w_q) @ keys.transpose(-2, -1) / dictionary.scale
    weights = F.softmax(scores, dim=-1)                   # (..., n_g, K_d)
    prior = dictionary.prior.to(dtype=G.dtype, device=G.device)
    return (weights * prior) @ values


def deconfound_queries(G: torch.Tensor, dictionary: ConfounderDict, params: AttentionParams) -> torch.Tensor:
    """Q = G W_q + E_d[h_G(d)]"""
    return G @ params.w_q + intervention_term(G, dictionary)


def slot_attention(Q: torch.Tensor, V: torch.Tensor, params: AttentionParams) -> SlotAttentionOutput:
    """
    Slots compete for keys: softmax over the query axis, then every query's
    weights are renormalized by their row sum before aggregating values.

    Q is already projected (G W_q, or the deconfounded query).
    """
    if not (torch.isfinite(Q).all() and torch.isfinite(V).all()):
        raise MorphError("NON_FINITE_INPUT", "slot attention inputs contain NaN/Inf")
    keys = V @ params.w_k
    values = V @ params.w_v
    logits = Q @ keys.transpose(-2, -1) / params.scale
    attn = F.softmax(logits, dim=-2)
    weights = attn / (attn.sum(dim=-1, keepdim=True) + RENORM_EPS)
    return SlotAttentionOutput(attn=attn, slots=weights @ values)


def nwgm_forward(G: torch.Tensor, dictionary: ConfounderDict, V: torch.Tensor,
                 params: AttentionParams) -> SlotAttentionOutput:
    """Expectation over the confounder moved inside the softmax via the expanded query"""
    return slot_attention(deconfound_queries(G, dictionary, params), V, params)


class ConfounderDictionary(nn.Module):
    """Trainable dictionary rows with a fixed prior buffer"""

    def __init__(self, size: int, dict_dim: int, model_dim: int):
        super().__init__()
        self.entries = nn.Parameter(torch.randn(size, dict_dim) * 0.02)
        self.register_buffer("prior", torch.full((size,), 1.0 / size, dtype=torch.float64))
        self.w_q = nn.Parameter(torch.randn(model_dim, model_dim) / math.sqrt(model_dim))
        self.w_k = nn.Parameter(torch.randn(dict_dim, model_dim) / math.sqrt(dict_dim))
        self.w_v = nn.Parameter(torch.randn(dict_dim, model_dim) / math.sqrt(dict_dim))
        self.scale = math.sqrt(model_dim)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def as_dict(self) -> ConfounderDict:
        return ConfounderDict(self.entries, self.prior, self.w_q, self.w_k, self.w_v, self.scale)

    @torch.no_grad()
    def renormalize_prior(self):
        """Restore an exact float64 sum of 1 after a float32 round trip"""
        prior = self.prior.to(torch.float64).clamp_min(0.0)
        total = float(prior.sum())
        if total <= 0:
            self.prior.fill_(1.0 / self.size)
        else:
            self.prior.copy_(prior / total)

    @torch.no_grad()
    def init_from_codebook(self, weight: torch.Tensor, usage: Optional[torch.Tensor], prior_mode: str = "empirical"):
        """
        Take the K_d most used codebook rows as entries; the prior is their
        renormalized usage frequency (uniform when unused or prior_mode='uniform')
        """
        if weight.shape[1] != self.entries.shape[1]:
            raise MorphError("SHAPE_MISMATCH",
                             f"codebook dim {weight.shape[1]} != dictionary dim {self.entries.shape[1]}")
        if weight.shape[0] < self.size:
            raise MorphError("SHAPE_MISMATCH",
                             f"codebook has {weight.shape[0]} rows, dictionary needs {self.size}")
        if prior_mode not in ("empirical", "uniform"):
            raise MorphError("INVALID_PRIOR", f"unknown prior_mode '{prior_mode}'")
        if usage is None:
            usage = torch.zeros(weight.shape[0], dtype=torch.long)
        order = torch.sort(usage.to(torch.float64), descending=True, stable=True).indices[: self.size]
        self.entries.copy_(weight[order].to(self.entries.dtype))

        counts = usage[order].to(torch.float64)
        if prior_mode == "empirical" and float(counts.sum()) > 0:
            self.prior.copy_(counts / counts.sum())
            return
        if prior_mode == "empirical":
            print("⚠️ No codebook usage recorded, falling back to a uniform dictionary prior")
        self.prior.fill_(1.0 / self.size)


class SlotAttention(nn.Module):
    """Slot cross-attention into V; deconfounded when a dictionary is passed"""

    def __init__(self, d_model: int):
        super().__init__()
        self.w_q = nn.Parameter(torch.randn(d_model, d_model) / math.sqrt(d_model))
        self.w_k = nn.Parameter(torch.randn(d_model, d_model) / math.sqrt(d_model))
        self.w_v = nn.Parameter(torch.randn(d_model, d_model) / math.sqrt(d_model))
        self.scale = math.sqrt(d_model)

    def params(self) -> AttentionParams:
        return AttentionParams(self.w_q, self.w_k, self.w_v, self.scale)

    def forward(self, G: torch.Tensor, V: torch.Tensor,
                dictionary: Optional[ConfounderDictionary] = None) -> SlotAttentionOutput:
        params = self.params()
        if dictionary is None:
            return slot_attention(G @ params.w_q, V, params)
        return nwgm_forward(G, dictionary.as_dict(), V, params)
