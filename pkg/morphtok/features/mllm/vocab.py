"""
Joint Vocabulary Module
Text / morph / pixel / special id ranges and the ⟨M,Y⟩, ⟨Y,M⟩ and instruction sequence formats
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple, Union

import torch

from ...utils.errors import MorphError
from ..morph_encoder.encoder import EMP_CODE, MorphSequence


class Modality(IntEnum):
    """Per-position tag of a mixed sequence"""
    TEXT = 0
    MORPH = 1
    PIXEL = 2
    SPECIAL = 3


SPECIAL_TOKENS: Tuple[str, ...] = ("BOS", "EOS", "BOI", "EOI", "EMP", "USER", "ASSISTANT")
FORMATS: Tuple[str, ...] = ("MY", "YM", "instruction")
STAGES: Tuple[int, ...] = (1, 2, 3)

VisualTokens = Union[MorphSequence, torch.Tensor, Sequence[int]]


@dataclass(frozen=True)
class Vocabulary:
    """
    Ids laid out as [text | morph | pixel | specials].
    The pixel range is only non-empty for variants whose MLLM emits pixel tokens.
    """

    text_size: int
    morph_size: int
    pixel_size: int = 0
    end_of_text: int = 0   # text id that ends a caption or answer

    @property
    def morph_offset(self) -> int:
        return self.text_size

    @property
    def pixel_offset(self) -> int:
        return self.text_size + self.morph_size

    @property
    def special_offset(self) -> int:
        return self.pixel_offset + self.pixel_size

    @property
    def size(self) -> int:
        return self.special_offset + len(SPECIAL_TOKENS)

    def special(self, name: str) -> int:
        return self.special_offset + SPECIAL_TOKENS.index(name)

    @property
    def BOS(self) -> int:
        return self.special("BOS")

    @property
    def EOS(self) -> int:
        return self.special("EOS")

    @property
    def BOI(self) -> int:
        return self.special("BOI")

    @property
    def EOI(self) -> int:
        return self.special("EOI")

    @property
    def EMP(self) -> int:
        return self.special("EMP")

    @property
    def USER(self) -> int:
        return self.special("USER")

    @property
    def ASSISTANT(self) -> int:
        return self.special("ASSISTANT")

    def range_of(self, modality: Modality) -> Tuple[int, int]:
        """Half-open id range of one modality"""
        if modality == Modality.TEXT:
            return 0, self.text_size
        if modality == Modality.MORPH:
            return self.morph_offset, self.pixel_offset
        if modality == Modality.PIXEL:
            return self.pixel_offset, self.special_offset
        return self.special_offset, self.size

    def modality_of(self, ids: torch.Tensor) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        self.check_ids(ids)
        modality = torch.full_like(ids, int(Modality.SPECIAL))
        modality[ids < self.special_offset] = int(Modality.PIXEL)
        modality[ids < self.pixel_offset] = int(Modality.MORPH)
        modality[ids < self.text_size] = int(Modality.TEXT)
        return modality

    def check_ids(self, ids: torch.Tensor):
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.size):
            raise MorphError("ID_OUT_OF_RANGE", f"token id outside [0, {self.size})")

    def to_vocab(self, codes: torch.Tensor, modality: Modality = Modality.MORPH) -> torch.Tensor:
        """Codebook indices -> vocabulary ids; EMP_CODE maps to EMP"""
        low, high = self.range_of(modality)
        codes = torch.as_tensor(codes, dtype=torch.long)
        valid = codes != EMP_CODE
        if bool(((codes[valid] < 0) | (codes[valid] >= high - low)).any()):
            raise MorphError("ID_OUT_OF_RANGE", f"code outside the {modality.name.lower()} codebook")
        return torch.where(valid, codes + low, torch.full_like(codes, self.EMP))

    def from_vocab(self, ids: torch.Tensor, modality: Modality = Modality.MORPH) -> torch.Tensor:
        """Vocabulary ids -> codebook indices; EMP maps to EMP_CODE"""
        low, _ = self.range_of(modality)
        ids = torch.as_tensor(ids, dtype=torch.long)
        return torch.where(ids == self.EMP, torch.full_like(ids, EMP_CODE), ids - low)

    def to_dict(self):
        return {"text_size": self.text_size, "morph_size": self.morph_size,
                "pixel_size": self.pixel_size, "end_of_text": self.end_of_text}


@dataclass
class MixedSequence:
    """
    One (L,) or batched (B, L) joint-vocabulary sequence.
    loss_mask[t] marks ids[t] as a CE target (predicted from position t - 1);
    target_start is the index of the first generated visual token, -1 when none.
    """

    ids: torch.Tensor
    modality: torch.Tensor
    loss_mask: torch.Tensor
    fmt: str
    target_start: Union[int, torch.Tensor] = -1

    def __post_init__(self):
        if not (self.ids.shape == self.modality.shape == self.loss_mask.shape):
            raise MorphError("SHAPE_MISMATCH", "ids, modality and loss_mask must have one shape")

    def __len__(self) -> int:
        return self.ids.shape[-1]

    @property
    def batched(self) -> bool:
        return self.ids.dim() == 2

    def as_batch(self) -> "MixedSequence":
        if self.batched:
            return self
        return MixedSequence(self.ids[None], self.modality[None], self.loss_mask[None], self.fmt,
                             torch.tensor([int(self.target_start)]))

    def positions(self, modality: Modality) -> torch.Tensor:
        return self.modality == int(modality)


@dataclass
class Segment:
    """A text or image part of an instruction"""

    kind: str                       # text | image
    tokens: VisualTokens
    modality: Modality = Modality.TEXT

    @classmethod
    def text(cls, ids: Sequence[int]) -> "Segment":
        return cls("text", list(ids), Modality.TEXT)

    @classmethod
    def image(cls, tokens: VisualTokens, modality: Modality = Modality.MORPH) -> "Segment":
        return cls("image", tokens, modality)


def _codes(tokens: VisualTokens) -> torch.Tensor:
    if isinstance(tokens, MorphSequence):
        if tokens.ids is None:
            # continuous variant: positions are placeholders, embeddings carry the content
            return torch.zeros(tokens.length, dtype=torch.long)
        return tokens.ids.reshape(-1).long()
    return torch.as_tensor(tokens, dtype=torch.long).reshape(-1)


class _Builder:
    """Accumulates ids, modality tags and loss flags"""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.ids: List[int] = []
        self.modality: List[int] = []
        self.loss: List[bool] = []
        self.target_start = -1

    def special(self, name: str):
        self.ids.append(self.vocab.special(name))
        self.modality.append(int(Modality.SPECIAL))
        self.loss.append(False)

    def text(self, ids: Sequence[int], loss: bool):
        for i in ids:
            if not 0 <= int(i) < self.vocab.text_size:
                raise MorphError("ID_OUT_OF_RANGE", f"text id {i} outside [0, {self.vocab.text_size})")
            self.ids.append(int(i))
            self.modality.append(int(Modality.TEXT))
            self.loss.append(loss)

    def image(self, tokens: VisualTokens, modality: Modality, loss: bool, target: bool = False, close: bool = True):
        vocab_ids = self.vocab.to_vocab(_codes(tokens), modality).tolist()
        self.special("BOI")
        if target:
            self.target_start = len(self.ids)
        for i in vocab_ids:
            emp = i == self.vocab.EMP
            self.ids.append(i)
            self.modality.append(int(Modality.SPECIAL if emp else modality))
            self.loss.append(loss and not emp)
        if close:
            self.special("EOI")

    def build(self, fmt: str) -> MixedSequence:
        return MixedSequence(
            ids=torch.tensor(self.ids, dtype=torch.long),
            modality=torch.tensor(self.modality, dtype=torch.long),
            loss_mask=torch.tensor(self.loss, dtype=torch.bool),
            fmt=fmt,
            target_start=self.target_start,
        )


def _check_text(Y: Sequence[int], max_text: Optional[int]):
    if max_text is not None and len(Y) > max_text:
        raise MorphError("SEQUENCE_TOO_LONG", f"text has {len(Y)} tokens, limit is {max_text}")


def pack(fmt: str, M: Optional[VisualTokens], Y: Sequence[int], stage: int, vocab: Vocabulary,
         visual: Modality = Modality.MORPH, tie_visual: bool = False,
         max_text: Optional[int] = None, prompt_only: bool = False) -> MixedSequence:
    """
    Build a MixedSequence in one of the formats:
        MY:          [BOS, BOI, M, EOI, Y, EOS]
        YM:          [BOS, Y, BOI, M, EOI, EOS]
        instruction: [BOS, USER, BOI, M, EOI, ASSISTANT, Y, EOS]

    Loss mask by stage:
        1    -> every text and visual position
        2, 3 -> text targets only (MY, instruction); generated morph positions carry
                no MLLM-side loss unless tie_visual is set, pixel targets always do

    prompt_only stops where generation starts (after EOI for MY, after BOI for YM,
    after ASSISTANT for instruction).
    """
    if fmt not in FORMATS:
        raise MorphError("UNKNOWN_FORMAT", f"unknown sequence format '{fmt}' (expected one of {FORMATS})")
    if stage not in STAGES:
        raise MorphError("UNKNOWN_STAGE", f"unknown training stage {stage}")
    _check_text(Y, max_text)

    if fmt == "instruction":
        answer = None if prompt_only else Segment.text(Y)
        return pack_instruction([Segment.image(M, visual)], answer, vocab, stage=stage, max_text=max_text)

    visual_loss = stage == 1 or visual == Modality.PIXEL or tie_visual
    text_loss = stage == 1 or fmt == "MY"
    builder = _Builder(vocab)
    builder.special("BOS")
    if fmt == "MY":
        builder.image(M, visual, loss=stage == 1)
        if prompt_only:
            return builder.build(fmt)
        builder.text(Y, loss=text_loss)
    else:
        builder.text(Y, loss=text_loss)
        if prompt_only:
            builder.special("BOI")
            builder.target_start = len(builder.ids)
            return builder.build(fmt)
        builder.image(M, visual, loss=visual_loss, target=True)
    builder.special("EOS")
    return builder.build(fmt)


def pack_instruction(user: Sequence[Segment], answer: Optional[Segment], vocab: Vocabulary,
                     stage: int = 3, tie_visual: bool = False, max_text: Optional[int] = None,
                     answer_image: bool = False) -> MixedSequence:
    """
    [BOS, USER, <segments>, ASSISTANT, <answer>, EOS]; loss only on answer positions.
    With answer=None the prompt ends after ASSISTANT (plus BOI when answer_image).
    """
    builder = _Builder(vocab)
    builder.special("BOS")
    builder.special("USER")
    for segment in user:
        if segment.kind == "text":
            _check_text(segment.tokens, max_text)
            builder.text(segment.tokens, loss=False)
        else:
            builder.image(segment.tokens, segment.modality, loss=False)
    builder.special("ASSISTANT")

    if answer is None:
        if answer_image:
            builder.special("BOI")
            builder.target_start = len(builder.ids)
        return builder.build("instruction")

    if answer.kind == "text":
        _check_text(answer.tokens, max_text)
        builder.text(answer.tokens, loss=True)
    else:
        visual_loss = stage == 1 or answer.modality == Modality.PIXEL or tie_visual
        builder.image(answer.tokens, answer.modality, loss=visual_loss, target=True)
    builder.special("EOS")
    return builder.build("instruction")


def unpack(seq: MixedSequence, vocab: Vocabulary) -> Tuple[Optional[torch.Tensor], List[int]]:
    """Recover (visual codes, text ids) from an unbatched MY / YM sequence"""
    if seq.batched:
        raise MorphError("SHAPE_MISMATCH", "unpack expects a single sequence")
    ids = seq.ids.tolist()
    text = [i for i, m in zip(ids, seq.modality.tolist()) if m == int(Modality.TEXT)]
    if vocab.BOI not in ids:
        return None, text
    start = ids.index(vocab.BOI) + 1
    end = ids.index(vocab.EOI, start) if vocab.EOI in ids[start:] else len(ids)
    segment = torch.tensor(ids[start:end], dtype=torch.long)
    kinds = seq.modality[start:end]
    visual = Modality.PIXEL if bool((kinds == int(Modality.PIXEL)).any()) else Modality.MORPH
    return vocab.from_vocab(segment, visual), text


def collate(seqs: Sequence[MixedSequence], vocab: Vocabulary) -> MixedSequence:
    """Right-pad with EOS (special, never a target) into one (B, L) batch"""
    if not seqs:
        raise MorphError("SHAPE_MISMATCH", "cannot collate an empty batch")
    length = max(len(s) for s in seqs)
    batch = len(seqs)
    ids = torch.full((batch, length), vocab.EOS, dtype=torch.long)
    modality = torch.full((batch, length), int(Modality.SPECIAL), dtype=torch.long)
    loss_mask = torch.zeros((batch, length), dtype=torch.bool)
    for row, seq in enumerate(seqs):
        n = len(seq)
        ids[row, :n] = seq.ids
        modality[row, :n] = seq.modality
        loss_mask[row, :n] = seq.loss_mask
    fmts = {s.fmt for s in seqs}
    fmt = fmts.pop() if len(fmts) == 1 else "mixed"
    starts = torch.tensor([int(s.target_start) for s in seqs], dtype=torch.long)
    return MixedSequence(ids, modality, loss_mask, fmt, starts)
