"""
MLLM Core Module
Decoder-only transformer over the joint vocabulary: masked CE, text generation,
post-MLLM morph generation with ⟨Emp⟩ length normalization, and the
differentiable M_hat read-outs used by generation training
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ...core.blocks import TransformerStack
from ...utils.errors import MorphError
from ..morph_encoder.encoder import EMP_CODE, MorphSequence
from .mllm_config import MLLMConfig
from .vocab import MixedSequence, Modality, Vocabulary

MorphLookup = Callable[[torch.Tensor], torch.Tensor]
DECODE_MODES = ("greedy", "sample")


@dataclass
class LLMOutput:
    logits: torch.Tensor   # (B, L, |vocab|)
    hidden: torch.Tensor   # (B, L, d) after the final norm


def cross_entropy_masked(logits: torch.Tensor, seq: MixedSequence) -> torch.Tensor:
    """Mean NLL of ids[t] under logits[t - 1], over loss-masked positions only"""
    seq = seq.as_batch()
    if logits.dim() == 2:
        logits = logits[None]
    mask = seq.loss_mask[:, 1:]
    if not bool(mask.any()):
        raise MorphError("EMPTY_LOSS_MASK", f"no loss positions in a '{seq.fmt}' sequence")
    return F.cross_entropy(logits[:, :-1][mask], seq.ids[:, 1:][mask])


def normalize_length(codes: Sequence[int], n_g: int) -> List[int]:
    """Pad with EMP_CODE up to n_g, or keep the first n_g"""
    codes = list(codes)[:n_g]
    return codes + [EMP_CODE] * (n_g - len(codes))


def _pick(logits: torch.Tensor, allowed: torch.Tensor, mode: str, temperature: float,
          generator: Optional[torch.Generator]) -> int:
    logits = logits.masked_fill(~allowed, float("-inf"))
    if mode == "greedy":
        return int(logits.argmax())
    if mode == "sample":
        probs = F.softmax(logits / max(temperature, 1e-6), dim=-1)
        return int(torch.multinomial(probs, 1, generator=generator))
    raise MorphError("UNKNOWN_MODE", f"unknown decode mode '{mode}' (expected one of {DECODE_MODES})")


class MorphLLM(nn.Module):
    """
    theta_LLM. Morph positions are embedded by a learned adapter over morph-codebook
    vectors supplied by the caller; every other position uses the token table.
    Morph logits come from a dedicated head and share the joint softmax.
    """

    def __init__(self, config: MLLMConfig, vocab: Vocabulary, code_dim: int):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.code_dim = code_dim
        d = config.d

        self.embed = nn.Embedding(vocab.size - vocab.morph_size, d)
        self.morph_adapter = nn.Linear(code_dim, d)
        self.pos = nn.Parameter(torch.randn(config.max_positions, d) * 0.02)
        self.stack = TransformerStack(d, config.heads, config.layers, causal=True)
        self.lm_head = nn.Linear(d, vocab.size - vocab.morph_size)
        self.morph_head = nn.Linear(d, vocab.morph_size) if vocab.morph_size else None
        # hidden-state conditioning path and the continuous-variant regression head
        self.hidden_to_code = nn.Linear(d, code_dim)

    # Forward

    def _table_index(self, ids: torch.Tensor) -> torch.Tensor:
        shifted = torch.where(ids >= self.vocab.pixel_offset, ids - self.vocab.morph_size, ids)
        morph = (ids >= self.vocab.morph_offset) & (ids < self.vocab.pixel_offset)
        return shifted.masked_fill(morph, 0)

    def embed_inputs(self, seq: MixedSequence, morph_embeds: Optional[torch.Tensor] = None) -> torch.Tensor:
        ids = seq.ids
        self.vocab.check_ids(ids)
        if ids.shape[-1] > self.config.max_positions:
            raise MorphError("SEQUENCE_TOO_LONG",
                             f"sequence of {ids.shape[-1]} positions exceeds {self.config.max_positions}")
        x = self.embed(self._table_index(ids))
        morph = seq.modality == int(Modality.MORPH)
        count = int(morph.sum())
        if count:
            if morph_embeds is None:
                raise MorphError("SHAPE_MISMATCH", "sequence has morph positions but no morph embeddings")
            flat = morph_embeds.reshape(-1, self.code_dim)
            if flat.shape[0] != count:
                raise MorphError("SHAPE_MISMATCH", f"{flat.shape[0]} morph embeddings for {count} morph positions")
            aligned = x.new_zeros(x.shape)
            aligned[morph] = self.morph_adapter(flat).to(x.dtype)
            x = torch.where(morph.unsqueeze(-1), aligned, x)
        return x + self.pos[: ids.shape[-1]]

    def joint_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        """[text | morph | pixel | special] logits in vocabulary order"""
        rest = self.lm_head(hidden)
        parts = [rest[..., : self.vocab.text_size]]
        if self.morph_head is not None:
            parts.append(self.morph_head(hidden))
        parts.append(rest[..., self.vocab.text_size:])
        return torch.cat(parts, dim=-1)

    def forward(self, seq: MixedSequence, morph_embeds: Optional[torch.Tensor] = None) -> LLMOutput:
        seq = seq.as_batch()
        hidden = self.stack(self.embed_inputs(seq, morph_embeds))
        return LLMOutput(logits=self.joint_logits(hidden), hidden=hidden)

    # Read-outs at generated visual positions (teacher forced)

    def _gather(self, hidden: torch.Tensor, start: torch.Tensor, length: int) -> torch.Tensor:
        """Hidden states at the positions predicting tokens start .. start + length - 1"""
        start = torch.as_tensor(start, dtype=torch.long).reshape(-1)
        if bool((start < 1).any()):
            raise MorphError("SHAPE_MISMATCH", "sequence has no generated visual segment")
        positions = start[:, None] - 1 + torch.arange(length)[None, :]
        rows = torch.arange(hidden.shape[0])[:, None]
        return hidden[rows, positions]

    def morph_logits_at(self, output: LLMOutput, start: torch.Tensor, n_g: int) -> torch.Tensor:
        """(B, n_g, K_m) morph-range logits for the generated segment"""
        if self.morph_head is None:
            raise MorphError("UNKNOWN_ABLATION", "this model has no morph range")
        return self.morph_head(self._gather(output.hidden, start, n_g))

    def st_morph(self, output: LLMOutput, start: torch.Tensor, n_g: int,
                 codebook: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Straight-through argmax: forward value is the codebook row of the argmax id,
        the gradient is that of the softmax-expected embedding

        Returns:
            (ids (B, n_g), embeddings (B, n_g, code_dim))
        """
        logits = self.morph_logits_at(output, start, n_g)
        probs = F.softmax(logits / self.config.st_temperature, dim=-1)
        soft = probs @ codebook
        ids = logits.argmax(dim=-1)
        hard = codebook[ids]
        return ids, hard + (soft - soft.detach())

    def hidden_condition(self, output: LLMOutput, start: torch.Tensor, n_g: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """Hidden-state conditioning: projected hidden states, argmax ids for logging"""
        hidden = self._gather(output.hidden, start, n_g)
        ids = self.morph_head(hidden).argmax(dim=-1) if self.morph_head is not None else None
        return ids, self.hidden_to_code(hidden)

    def regress_at(self, output: LLMOutput, start: torch.Tensor, n_g: int) -> torch.Tensor:
        """Continuous variant: predicted next morph embeddings"""
        return self.hidden_to_code(self._gather(output.hidden, start, n_g))

    # Generation

    def _allowed(self, modalities: Sequence[Modality], extra: Sequence[int]) -> torch.Tensor:
        allowed = torch.zeros(self.vocab.size, dtype=torch.bool)
        for modality in modalities:
            low, high = self.vocab.range_of(modality)
            allowed[low:high] = True
        for token in extra:
            allowed[token] = True
        return allowed

    def _last_logits(self, ids: List[int], modality: List[int], embeds: List[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
        seq = MixedSequence(
            ids=torch.tensor(ids, dtype=torch.long),
            modality=torch.tensor(modality, dtype=torch.long),
            loss_mask=torch.zeros(len(ids), dtype=torch.bool),
            fmt="generation",
        )
        morph_embeds = torch.stack(embeds) if embeds else None
        out = self.forward(seq, morph_embeds)
        return out.logits[0, -1], out.hidden[0, -1]

    @staticmethod
    def _prefix_embeds(prefix: MixedSequence, prefix_embeds: Optional[torch.Tensor],
                       morph_lookup: Optional[MorphLookup], vocab: Vocabulary) -> List[torch.Tensor]:
        morph = prefix.modality == int(Modality.MORPH)
        if not bool(morph.any()):
            return []
        if prefix_embeds is not None:
            return list(prefix_embeds.reshape(int(morph.sum()), -1))
        if morph_lookup is None:
            raise MorphError("SHAPE_MISMATCH", "prefix has morph positions but no way to embed them")
        codes = vocab.from_vocab(prefix.ids[morph], Modality.MORPH)
        return list(morph_lookup(codes))

    @torch.no_grad()
    def generate_text(self, prefix: MixedSequence, max_len: Optional[int] = None, mode: str = "greedy",
                      temperature: float = 1.0, seed: int = 0, morph_lookup: Optional[MorphLookup] = None,
                      prefix_embeds: Optional[torch.Tensor] = None) -> List[int]:
        """Decode text ids (morph/pixel/special logits masked) until EOS, end-of-text or max_len"""
        max_len = max_len or self.config.max_text
        generator = torch.Generator().manual_seed(seed)
        allowed = self._allowed([Modality.TEXT], [self.vocab.EOS])
        ids = prefix.ids.tolist()
        modality = prefix.modality.tolist()
        embeds = self._prefix_embeds(prefix, prefix_embeds, morph_lookup, self.vocab)

        text: List[int] = []
        for _ in range(max_len):
            if len(ids) >= self.config.max_positions:
                break
            logits, _ = self._last_logits(ids, modality, embeds)
            token = _pick(logits, allowed, mode, temperature, generator)
            if token in (self.vocab.EOS, self.vocab.end_of_text):
                break
            text.append(token)
            ids.append(token)
            modality.append(int(Modality.TEXT))
        return text

    def _open_image(self, prefix: MixedSequence) -> Tuple[List[int], List[int]]:
        ids = prefix.ids.tolist()
        modality = prefix.modality.tolist()
        if not ids or ids[-1] != self.vocab.BOI:
            ids.append(self.vocab.BOI)
            modality.append(int(Modality.SPECIAL))
        return ids, modality

    @torch.no_grad()
    def generate_morph(self, prefix: MixedSequence, n_g: int, morph_lookup: MorphLookup,
                       mode: str = "greedy", temperature: float = 1.0, seed: int = 0,
                       max_len: Optional[int] = None, prefix_embeds: Optional[torch.Tensor] = None,
                       return_raw: bool = False):
        """
        Post-MLLM morph tokens: decode morph ids (or EOI) after BOI, then pad with
        ⟨Emp⟩ or trim so the result always has n_g positions
        """
        if self.morph_head is None:
            raise MorphError("UNKNOWN_ABLATION", "this model has no morph range")
        max_len = max_len or 2 * n_g
        generator = torch.Generator().manual_seed(seed)
        allowed = self._allowed([Modality.MORPH], [self.vocab.EOI])
        embeds = self._prefix_embeds(prefix, prefix_embeds, morph_lookup, self.vocab)
        ids, modality = self._open_image(prefix)

        raw: List[int] = []
        for _ in range(max_len):
            if len(ids) >= self.config.max_positions:
                break
            logits, _ = self._last_logits(ids, modality, embeds)
            token = _pick(logits, allowed, mode, temperature, generator)
            if token == self.vocab.EOI:
                break
            code = token - self.vocab.morph_offset
            raw.append(code)
            ids.append(token)
            modality.append(int(Modality.MORPH))
            embeds.append(morph_lookup(torch.tensor([code]))[0])

        codes = torch.tensor(normalize_length(raw, n_g), dtype=torch.long)
        sequence = MorphSequence(codes, morph_lookup(codes))
        return (sequence, raw) if return_raw else sequence

    @torch.no_grad()
    def regress_morph(self, prefix: MixedSequence, n_g: int, prefix_embeds: Optional[torch.Tensor] = None) -> MorphSequence:
        """Continuous variant: n_g embeddings regressed one position at a time"""
        embeds = self._prefix_embeds(prefix, prefix_embeds, None, self.vocab)
        ids, modality = self._open_image(prefix)
        out: List[torch.Tensor] = []
        for _ in range(n_g):
            _, hidden = self._last_logits(ids, modality, embeds)
            vector = self.hidden_to_code(hidden)
            out.append(vector)
            embeds.append(vector)
            ids.append(self.vocab.morph_offset)
            modality.append(int(Modality.MORPH))
        return MorphSequence(None, torch.stack(out))

    @torch.no_grad()
    def generate_pixels_direct(self, prefix: MixedSequence, length: int, mode: str = "greedy",
                               temperature: float = 1.0, seed: int = 0,
                               morph_lookup: Optional[MorphLookup] = None,
                               prefix_embeds: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Variants without a visual decoder: exactly `length` pixel-codec ids"""
        if self.vocab.pixel_size == 0:
            raise MorphError("UNKNOWN_ABLATION", "this model has no pixel range")
        generator = torch.Generator().manual_seed(seed)
        allowed = self._allowed([Modality.PIXEL], [])
        embeds = self._prefix_embeds(prefix, prefix_embeds, morph_lookup, self.vocab)
        ids, modality = self._open_image(prefix)
        codes: List[int] = []
        for _ in range(length):
            logits, _ = self._last_logits(ids, modality, embeds)
            token = _pick(logits, allowed, mode, temperature, generator)
            codes.append(token - self.vocab.pixel_offset)
            ids.append(token)
            modality.append(int(Modality.PIXEL))
        return torch.tensor(codes, dtype=torch.long)
