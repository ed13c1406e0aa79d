"""
Morph Encoder Module
Image -> patch features V -> causal, deconfounded slot-attention Q-former -> n_g morph tokens
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from ...core.blocks import FeedForward, MultiHeadAttention, TransformerStack
from ...utils.errors import MorphError
from ..pixel_codec.quantizer import Codebook, quantize, vq_losses
from ..pixel_codec.codec import images_to_tensor
from .attention import ConfounderDictionary, SlotAttention
from .encoder_config import EncoderConfig

EMP_CODE = -1  # <Emp> padding inside a MorphSequence


@dataclass
class MorphSequence:
    """
    Morph-token ids (..., n_g) into the morph codebook, plus the (..., n_g, d)
    conditioning embeddings; EMP_CODE marks padded positions of a generated M_hat.
    ids is None only for the continuous (unquantized) variant.
    """

    ids: Optional[torch.Tensor]
    embeddings: torch.Tensor

    @property
    def length(self) -> int:
        return self.embeddings.shape[-2]

    @property
    def emp_mask(self) -> torch.Tensor:
        if self.ids is None:
            return torch.zeros(self.embeddings.shape[:-1], dtype=torch.bool, device=self.embeddings.device)
        return self.ids == EMP_CODE

    def detach(self) -> "MorphSequence":
        return MorphSequence(self.ids, self.embeddings.detach())

    def __getitem__(self, index) -> "MorphSequence":
        return MorphSequence(None if self.ids is None else self.ids[index], self.embeddings[index])


@dataclass
class EncoderOutput:
    morph: MorphSequence                 # ST embeddings, gradient reaches the encoder
    z: torch.Tensor                      # pre-quantization head output
    codes: Optional[torch.Tensor]        # raw codebook rows (None when unquantized)
    attn: List[torch.Tensor] = field(default_factory=list)


class PatchEmbedder(nn.Module):
    """Linear patch projection + learned positions + N_v bidirectional blocks"""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        if config.image_size % config.patch_size != 0:
            raise MorphError("SHAPE_MISMATCH", "image size must be divisible by the encoder patch size")
        self.config = config
        self.grid = config.image_size // config.patch_size
        self.proj = nn.Linear(3 * config.patch_size ** 2, config.d)
        self.pos = nn.Parameter(torch.randn(config.num_patches, config.d) * 0.02)
        self.blocks = TransformerStack(config.d, config.heads, config.embed_layers, causal=False, final_norm=False)

    def patches(self, x: torch.Tensor) -> torch.Tensor:
        """(N, 3, H, W) -> (N, L_v, 3 p^2) in row-major patch order"""
        size, p = self.config.image_size, self.config.patch_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, size, size):
            raise MorphError("SHAPE_MISMATCH", f"expected (N, 3, {size}, {size}) images, got {tuple(x.shape)}")
        n, g = x.shape[0], self.grid
        grid = x.reshape(n, 3, g, p, g, p).permute(0, 2, 4, 3, 5, 1)
        return grid.reshape(n, g * g, p * p * 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(self.proj(self.patches(x)) + self.pos)


class QFormerBlock(nn.Module):
    """Causal self-attention over slots, slot cross-attention into V, feed-forward"""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.ln_self = nn.LayerNorm(config.d)
        self.self_attn = MultiHeadAttention(config.d, config.heads, causal=True)
        self.ln_cross = nn.LayerNorm(config.d)
        self.slot_attn = SlotAttention(config.d)
        self.ln_ff = nn.LayerNorm(config.d)
        self.ff = FeedForward(config.d)

    def forward(self, slots: torch.Tensor, V: torch.Tensor,
                dictionary: Optional[ConfounderDictionary] = None):
        slots = slots + self.self_attn(self.ln_self(slots))
        cross = self.slot_attn(self.ln_cross(slots), V, dictionary)
        slots = slots + cross.slots
        slots = slots + self.ff(self.ln_ff(slots))
        return slots, cross.attn


class MorphEncoder(nn.Module):
    """theta_Enc: images to pre-MLLM morph tokens M"""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.embedder = PatchEmbedder(config)
        self.ln_v = nn.LayerNorm(config.d)
        self.group_tokens = nn.Parameter(torch.randn(config.n_g, config.d) * 0.5)
        self.dictionary = ConfounderDictionary(config.K_d, config.dict_dim, config.d) if config.deconfound else None
        self.blocks = nn.ModuleList(QFormerBlock(config) for _ in range(config.N_q))
        self.head = nn.Sequential(
            nn.LayerNorm(config.d),
            nn.Linear(config.d, config.d),
            nn.GELU(),
            nn.Linear(config.d, config.d),
        )
        self.codebook = Codebook(config.K_m, config.d)
        self.register_buffer("trained", torch.tensor(False))

    @property
    def n_g(self) -> int:
        return self.config.n_g

    def mark_trained(self):
        self.trained.fill_(True)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """VisualFeatures V: (N, L_v, d)"""
        return self.embedder(x)

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        V = self.ln_v(self.features(x))
        slots = self.group_tokens.expand(x.shape[0], -1, -1)
        attn = []
        for block in self.blocks:
            slots, weights = block(slots, V, self.dictionary)
            attn.append(weights)
        z = self.head(slots)

        if not self.config.quantize:
            return EncoderOutput(MorphSequence(None, z), z, None, attn)
        quantized = quantize(z, self.codebook)
        return EncoderOutput(MorphSequence(quantized.ids, quantized.embedding), z, quantized.codes, attn)

    def quantizer_loss(self, output: EncoderOutput) -> torch.Tensor:
        """Codebook + beta * commitment; zero for the continuous variant"""
        if output.codes is None:
            return output.z.new_zeros(())
        codebook_loss, commitment_loss = vq_losses(output.z, output.codes)
        return codebook_loss + self.config.beta * commitment_loss

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        """Codebook rows for ids, zero rows at EMP_CODE positions"""
        safe = ids.clamp_min(0)
        rows = self.codebook.lookup(safe)
        return rows * (ids != EMP_CODE).unsqueeze(-1).to(rows.dtype)

    def sequence(self, ids: torch.Tensor) -> MorphSequence:
        if int(ids.max()) >= self.config.K_m or int(ids.min()) < EMP_CODE:
            raise MorphError("ID_OUT_OF_RANGE", "morph id outside the morph codebook")
        return MorphSequence(ids, self.lookup(ids))

    @torch.no_grad()
    def encode_batch(self, images: Union[np.ndarray, torch.Tensor], allow_untrained: bool = False) -> MorphSequence:
        """(N, H, W, 3) uint8 images -> batched MorphSequence"""
        if not bool(self.trained) and not allow_untrained:
            raise MorphError("UNTRAINED_CHECKPOINT", "encoder has not been trained; run stage 1 first")
        x = images if isinstance(images, torch.Tensor) else images_to_tensor(images)
        was_training = self.training
        self.eval()
        try:
            return self.forward(x).morph.detach()
        finally:
            self.train(was_training)

    def encode(self, image: np.ndarray, allow_untrained: bool = False) -> MorphSequence:
        """One H x W x 3 image -> MorphSequence of length n_g"""
        return self.encode_batch(np.asarray(image)[None], allow_untrained=allow_untrained)[0]
