"""
Metrics Module
Oracle-scored captioning, reconstruction, editing and text-to-image metrics,
and the MetricReport document they fill
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from tqdm import tqdm

from ...core.inference_manager import InferenceManager
from ...core.pipeline import MorphPipeline
from ...utils.errors import MorphError
from ...utils.io_utils import read_json, write_json
from ..mllm.model import LLMOutput
from ..mllm.vocab import MixedSequence, Modality, collate, pack
from ..morph_encoder.encoder import MorphSequence
from ..synth_data.dataset import Sample
from ..synth_data.grammar import IDENTITY_INSTRUCTION, encode_text
from ..synth_data.render import try_parse_image


class MetricReport(BaseModel):
    """One evaluation run; serialized as a single JSON document"""

    variant: str = "morph"
    checkpoint: Optional[str] = None
    config_hash: Optional[str] = None
    caption_exact: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    caption_ppl: Optional[float] = Field(default=None, ge=0.0)
    recon_l1: Optional[float] = Field(default=None, ge=0.0)
    edit_l1: Optional[float] = Field(default=None, ge=0.0)
    edit_scene_acc: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    t2i_scene_acc: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    random_edit_scene_acc: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    identity_l1: Optional[float] = Field(default=None, ge=0.0)
    retrieval_r_at_k: Dict[str, float] = Field(default_factory=dict)
    probe_ppl: Dict[str, float] = Field(default_factory=dict)
    sweep: List[Dict[str, Any]] = Field(default_factory=list)
    sweep_summary: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    ablations: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    claims: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    def save(self, path: Union[str, Path]):
        write_json(path, self.model_dump())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MetricReport":
        return cls.model_validate(read_json(path))


def _batches(items: Sequence[Any], size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _images(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.image for s in samples])


def pixel_l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute pixel difference on the [0, 1] scale"""
    if a.shape != b.shape:
        raise MorphError("SHAPE_MISMATCH", f"cannot compare images {a.shape} and {b.shape}")
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean() / 255.0)


def masked_nll(logits: torch.Tensor, seq: MixedSequence, modality: Optional[Modality] = None,
               vocab=None) -> Tuple[float, int]:
    """
    Summed NLL and count over loss-masked targets.
    With a modality the softmax is restricted to that modality's id range.
    """
    mask = seq.loss_mask[:, 1:]
    targets = seq.ids[:, 1:]
    if modality is not None:
        mask = mask & (seq.modality[:, 1:] == int(modality))
    count = int(mask.sum())
    if count == 0:
        return 0.0, 0
    picked = logits[:, :-1][mask]
    wanted = targets[mask]
    if modality is not None:
        low, high = vocab.range_of(modality)
        picked = picked[:, low:high]
        wanted = wanted - low
    return float(F.cross_entropy(picked, wanted, reduction="sum")), count


def _perplexity(total: float, count: int) -> float:
    return math.exp(total / count) if count else float("nan")


# Captioning

@torch.no_grad()
def caption_perplexity(pipeline: MorphPipeline, samples: Sequence[Sample], batch: int = 64) -> float:
    """Teacher-forced per-token perplexity of the ground-truth caption under ⟨M,Y⟩"""
    pipeline.eval()
    total, count = 0.0, 0
    for chunk in _batches(list(samples), batch):
        visual = pipeline.visual_inputs(_images(chunk), grad=False)
        seqs = [pack("MY", visual.tokens[i], encode_text(s.caption), stage=2, vocab=pipeline.vocab,
                     visual=pipeline.input_modality) for i, s in enumerate(chunk)]
        seq = collate(seqs, pipeline.vocab)
        out = pipeline.llm(seq, visual.embeds)
        nll, n = masked_nll(out.logits, seq)
        total, count = total + nll, count + n
    return _perplexity(total, count)


def eval_caption(pipeline: MorphPipeline, samples: Sequence[Sample], batch: int = 64,
                 manager: Optional[InferenceManager] = None, progress: bool = False) -> Tuple[float, float]:
    """(exact-match fraction under greedy decoding, caption perplexity)"""
    if not samples:
        raise MorphError("SHAPE_MISMATCH", "empty caption test set")
    manager = manager or InferenceManager(pipeline)
    hits = 0
    for sample in tqdm(samples, desc="    caption", ncols=70, disable=not progress):
        hits += int(manager.caption(sample.image) == sample.caption)
    return hits / len(samples), caption_perplexity(pipeline, samples, batch)


# Reconstruction

def _teacher_forced_condition(pipeline: MorphPipeline, out: LLMOutput, seq: MixedSequence) -> MorphSequence:
    llm, n_g, start = pipeline.llm, pipeline.n_g, seq.target_start
    if pipeline.continuous:
        return MorphSequence(None, llm.regress_at(out, start, n_g))
    if pipeline.config.mllm.gen_path == "hidden_state" and not pipeline.tie_visual:
        ids, condition = llm.hidden_condition(out, start, n_g)
        return MorphSequence(ids, condition)
    ids = llm.morph_logits_at(out, start, n_g).argmax(dim=-1)
    return MorphSequence(ids, pipeline.morph_lookup(ids))


@torch.no_grad()
def reconstruct(pipeline: MorphPipeline, images: np.ndarray, captions: Sequence[str]) -> np.ndarray:
    """Image -> encode -> MLLM (M -> M_hat, teacher forced under ⟨Y,M⟩) -> pixel tokens -> codec decode"""
    pipeline.eval()
    vocab = pipeline.vocab
    texts = [encode_text(c) for c in captions]
    visual = pipeline.visual_inputs(images, grad=False)

    if pipeline.output_modality == Modality.PIXEL:
        targets = pipeline.pixel_ids(images)
        seq = collate([pack("YM", targets[i], texts[i], stage=2, vocab=vocab, visual=Modality.PIXEL)
                       for i in range(len(texts))], vocab)
        out = pipeline.llm(seq)
        rows = torch.arange(len(texts))[:, None]
        positions = seq.target_start[:, None] - 1 + torch.arange(targets.shape[1])[None, :]
        low, high = vocab.range_of(Modality.PIXEL)
        pixels = out.logits[rows, positions][..., low:high].argmax(dim=-1)
    else:
        seq = collate([pack("YM", visual.tokens[i], texts[i], stage=2, vocab=vocab)
                       for i in range(len(texts))], vocab)
        out = pipeline.llm(seq, visual.embeds)
        pixels = pipeline.decoder.generate_pixels(_teacher_forced_condition(pipeline, out, seq))
    return pipeline.codec.decode_batch(pixels)


def eval_recon(pipeline: MorphPipeline, samples: Sequence[Sample], batch: int = 64) -> float:
    """Mean round-trip L1 on the [0, 1] scale"""
    if not samples:
        raise MorphError("SHAPE_MISMATCH", "empty reconstruction test set")
    errors = []
    for chunk in _batches(list(samples), batch):
        images = _images(chunk)
        rebuilt = reconstruct(pipeline, images, [s.caption for s in chunk])
        errors.extend(pixel_l1(a, b) for a, b in zip(rebuilt, images))
    return float(np.mean(errors))


# Editing and text-to-image

class RandomEditor:
    """Chance baseline: uniformly random pixel tokens decoded by the codec"""

    def __init__(self, codec, seed: int = 0):
        self.codec = codec
        self.generator = torch.Generator().manual_seed(seed)

    def edit(self, image: np.ndarray, instruction: str):
        ids = torch.randint(0, self.codec.config.codebook_size, (self.codec.num_tokens,), generator=self.generator)
        return self.codec.decode_tokens(ids), None


def _note_unparseable(kind: str, count: int, total: int, warnings: Optional[List[str]]):
    if count:
        message = f"{count}/{total} {kind} outputs were UNPARSEABLE"
        print(f"⚠️ {message}")
        if warnings is not None:
            warnings.append(message)


def eval_edit(editor, samples: Sequence[Sample], warnings: Optional[List[str]] = None,
              progress: bool = False) -> Tuple[float, float]:
    """
    (mean L1 to the rendered target, fraction of outputs whose parse equals the target scene).
    editor is anything with .edit(image, instruction) -> (image, record).
    """
    pairs = [s for s in samples if s.edit is not None and s.target_image is not None]
    if not pairs:
        raise MorphError("SHAPE_MISMATCH", "edit test set has no edit pairs")
    errors, hits, unparseable = [], 0, 0
    for sample in tqdm(pairs, desc="    edit", ncols=70, disable=not progress):
        output, _ = editor.edit(sample.image, sample.edit.instruction)
        errors.append(pixel_l1(output, sample.target_image))
        parsed = try_parse_image(output)
        unparseable += int(parsed is None)
        hits += int(parsed == sample.edit.target)
    _note_unparseable("edit", unparseable, len(pairs), warnings)
    return float(np.mean(errors)), hits / len(pairs)


def eval_identity(manager: InferenceManager, samples: Sequence[Sample], progress: bool = False) -> float:
    """Mean L1 between identity edits and the codec round trip of their source images"""
    if not samples:
        raise MorphError("SHAPE_MISMATCH", "empty identity-edit test set")
    codec = manager.pipeline.codec
    errors = []
    for sample in tqdm(samples, desc="    identity", ncols=70, disable=not progress):
        output, _ = manager.edit(sample.image, IDENTITY_INSTRUCTION)
        errors.append(pixel_l1(output, codec.decode_tokens(codec.encode_image(sample.image))))
    return float(np.mean(errors))


def eval_t2i(manager: InferenceManager, samples: Sequence[Sample], warnings: Optional[List[str]] = None,
             progress: bool = False) -> float:
    """Fraction of generated images whose parse equals the scene the caption denotes"""
    if not samples:
        raise MorphError("SHAPE_MISMATCH", "empty text-to-image test set")
    hits, unparseable = 0, 0
    for sample in tqdm(samples, desc="    t2i", ncols=70, disable=not progress):
        image, _ = manager.text_to_image(sample.caption)
        parsed = try_parse_image(image)
        unparseable += int(parsed is None)
        hits += int(parsed == sample.scene)
    _note_unparseable("t2i", unparseable, len(samples), warnings)
    return hits / len(samples)

