"""
Visual Decoder Module
Decoder-only transformer: [condition m_1..m_n | BOX | x_1..x_{L-1}] -> logits for x_1..x_L
"""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ...core.blocks import TransformerStack
from ...utils.errors import MorphError
from ..morph_encoder.encoder import MorphSequence
from .decoder_config import DecoderConfig


class VisualDecoder(nn.Module):
    """theta_Dec: post-MLLM morph tokens -> pixel-codec ids"""

    def __init__(self, config: DecoderConfig, code_dim: int, n_g: int, pixel_size: int, num_tokens: int):
        super().__init__()
        self.config = config
        self.n_g = n_g
        self.pixel_size = pixel_size
        self.num_tokens = num_tokens
        d = config.d

        self.adapter = nn.Linear(code_dim, d)
        self.emp = nn.Parameter(torch.randn(d) * 0.02)
        self.box = nn.Parameter(torch.randn(d) * 0.02)
        self.pixel_embed = nn.Embedding(pixel_size, d)
        self.pos = nn.Parameter(torch.randn(n_g + num_tokens, d) * 0.02)
        self.stack = TransformerStack(d, config.heads, config.layers, causal=True)
        self.head = nn.Linear(d, pixel_size)

    def condition(self, morph: MorphSequence) -> torch.Tensor:
        """(B, n_g, d) prefix: adapted embeddings, the learned ⟨Emp⟩ vector at padded slots"""
        embeddings = morph.embeddings
        if embeddings.dim() == 2:
            embeddings = embeddings[None]
        if embeddings.shape[1] != self.n_g:
            raise MorphError("SHAPE_MISMATCH", f"condition has {embeddings.shape[1]} slots, expected {self.n_g}")
        prefix = self.adapter(embeddings)
        emp = morph.emp_mask.reshape(prefix.shape[:2]).unsqueeze(-1)
        return torch.where(emp, self.emp.to(prefix.dtype).expand_as(prefix), prefix)

    def logits(self, morph: MorphSequence, targets: torch.Tensor) -> torch.Tensor:
        """Teacher-forced (B, L_x, K) logits for every target position"""
        prefix = self.condition(morph)
        targets = self._check_targets(targets, prefix.shape[0])
        box = self.box.to(prefix.dtype).expand(prefix.shape[0], 1, -1)
        stream = torch.cat([prefix, box, self.pixel_embed(targets[:, :-1])], dim=1)
        hidden = self.stack(stream + self.pos[: stream.shape[1]])
        return self.head(hidden[:, self.n_g:])

    def _check_targets(self, targets: torch.Tensor, batch: int) -> torch.Tensor:
        if targets.dim() == 1:
            targets = targets[None]
        if tuple(targets.shape) != (batch, self.num_tokens):
            raise MorphError("SHAPE_MISMATCH",
                             f"expected ({batch}, {self.num_tokens}) pixel targets, got {tuple(targets.shape)}")
        if int(targets.min()) < 0 or int(targets.max()) >= self.pixel_size:
            raise MorphError("ID_OUT_OF_RANGE", "pixel target outside the pixel codebook")
        return targets

    def decode_loss(self, morph: MorphSequence, targets: torch.Tensor) -> torch.Tensor:
        """Mean CE over exactly L_x pixel positions"""
        logits = self.logits(morph, targets)
        targets = targets if targets.dim() == 2 else targets[None]
        return F.cross_entropy(logits.reshape(-1, self.pixel_size), targets.reshape(-1))

    @torch.no_grad()
    def generate_pixels(self, morph: MorphSequence, mode: str = "greedy", temperature: float = 1.0,
                        seed: int = 0) -> torch.Tensor:
        """(B, L_x) pixel ids; greedy is deterministic, sampling is seeded"""
        prefix = self.condition(morph)
        batch = prefix.shape[0]
        generator: Optional[torch.Generator] = torch.Generator().manual_seed(seed) if mode == "sample" else None
        if mode not in ("greedy", "sample"):
            raise MorphError("UNKNOWN_MODE", f"unknown decode mode '{mode}'")

        stream = torch.cat([prefix, self.box.to(prefix.dtype).expand(batch, 1, -1)], dim=1)
        out = torch.empty(batch, self.num_tokens, dtype=torch.long)
        for i in range(self.num_tokens):
            hidden = self.stack(stream + self.pos[: stream.shape[1]])
            logits = self.head(hidden[:, -1])
            if mode == "greedy":
                token = logits.argmax(dim=-1)
            else:
                probs = F.softmax(logits / max(temperature, 1e-6), dim=-1)
                token = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
            out[:, i] = token
            stream = torch.cat([stream, self.pixel_embed(token)[:, None]], dim=1)
        return out
