"""
Inference Manager Module
One-shot captioning, text-to-image and image editing on a trained pipeline,
with PNG outputs and sidecar token dumps
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field

from ..features.mllm.vocab import MixedSequence, Modality, Segment, pack, pack_instruction
from ..features.morph_encoder.encoder import MorphSequence
from ..features.synth_data.grammar import decode_text, encode_text
from ..features.training.tasks import CAPTION_PROMPT, EDIT_PROMPT, T2I_PROMPT
from ..utils.errors import MorphError
from ..utils.io_utils import write_json, write_png
from .pipeline import MorphPipeline


class GenerationRecord(BaseModel):
    """Sidecar written next to every generated image"""

    command: str
    prompt: str
    variant: str
    stage: int
    seed: int
    input_morph_ids: Optional[List[int]] = None
    output_morph_ids: Optional[List[int]] = None
    raw_morph_ids: Optional[List[int]] = None
    pixel_ids: List[int] = Field(default_factory=list)


class InferenceManager:
    """
    Inference flows of a trained pipeline.
    Checkpoints past stage 2 are prompted with the USER/ASSISTANT templates,
    earlier ones with the bare ⟨M,Y⟩ / ⟨Y,M⟩ formats they were trained on.
    """

    def __init__(self, pipeline: MorphPipeline, seed: int = 0, mode: str = "greedy", temperature: float = 1.0):
        self.pipeline = pipeline.eval()
        self.vocab = pipeline.vocab
        self.seed = seed
        self.mode = mode
        self.temperature = temperature

    @property
    def instruction_style(self) -> bool:
        return self.pipeline.stage >= 3

    # Input side

    def image_tokens(self, image: np.ndarray) -> Tuple[Union[MorphSequence, torch.Tensor], Optional[torch.Tensor]]:
        """Input visual tokens of one image and their morph embeddings (None for pixel input)"""
        pipeline = self.pipeline
        if pipeline.input_modality == Modality.PIXEL:
            return pipeline.pixel_ids(image)[0], None
        morph = pipeline.encoder.encode(image)
        return morph, morph.embeddings

    @staticmethod
    def _ids(morph: Union[MorphSequence, torch.Tensor]) -> Optional[List[int]]:
        if isinstance(morph, MorphSequence):
            return None if morph.ids is None else morph.ids.reshape(-1).tolist()
        return morph.reshape(-1).tolist()

    # Output side

    def generate_visual(self, prefix: MixedSequence, prefix_embeds: Optional[torch.Tensor]) -> Tuple[torch.Tensor, Dict[str, Any]]:
        """Visual answer after a prompt: (L_x,) pixel ids plus the token ids for the sidecar"""
        pipeline, llm = self.pipeline, self.pipeline.llm
        lookup = pipeline.morph_lookup if pipeline.encoder is not None else None
        if pipeline.output_modality == Modality.PIXEL:
            pixels = llm.generate_pixels_direct(prefix, pipeline.codec.num_tokens, mode=self.mode,
                                                temperature=self.temperature, seed=self.seed,
                                                morph_lookup=lookup, prefix_embeds=prefix_embeds)
            return pixels, {}

        if pipeline.continuous:
            morph = llm.regress_morph(prefix, pipeline.n_g, prefix_embeds=prefix_embeds)
            tokens: Dict[str, Any] = {}
        else:
            morph, raw = llm.generate_morph(prefix, pipeline.n_g, lookup, mode=self.mode,
                                            temperature=self.temperature, seed=self.seed,
                                            prefix_embeds=prefix_embeds, return_raw=True)
            tokens = {"output_morph_ids": morph.ids.tolist(), "raw_morph_ids": list(raw)}
        pixels = pipeline.decoder.generate_pixels(morph, mode=self.mode, temperature=self.temperature, seed=self.seed)
        return pixels[0], tokens

    def render(self, pixels: torch.Tensor) -> np.ndarray:
        return self.pipeline.codec.decode_tokens(pixels)

    # Flows

    def caption(self, image: np.ndarray, max_len: Optional[int] = None) -> str:
        tokens, embeds = self.image_tokens(image)
        visual = self.pipeline.input_modality
        if self.instruction_style:
            prefix = pack_instruction([Segment.image(tokens, visual), Segment.text(encode_text(CAPTION_PROMPT, terminate=False))],
                                      None, self.vocab)
        else:
            prefix = pack("MY", tokens, [], stage=2, vocab=self.vocab, visual=visual, prompt_only=True)
        ids = self.pipeline.llm.generate_text(prefix, max_len=max_len, mode=self.mode, temperature=self.temperature,
                                              seed=self.seed, prefix_embeds=embeds)
        return decode_text(ids)

    def text_to_image(self, text: str) -> Tuple[np.ndarray, GenerationRecord]:
        words = encode_text(text, terminate=not self.instruction_style)
        if self.instruction_style:
            segments = [Segment.text(words), Segment.text(encode_text(T2I_PROMPT, terminate=False))]
            prefix = pack_instruction(segments, None, self.vocab, answer_image=True)
        else:
            prefix = pack("YM", None, words, stage=2, vocab=self.vocab, prompt_only=True)
        pixels, tokens = self.generate_visual(prefix, None)
        record = self._record("t2i", text, pixels, **tokens)
        return self.render(pixels), record

    def edit(self, image: np.ndarray, instruction: str) -> Tuple[np.ndarray, GenerationRecord]:
        """Edit flow: encode source -> instruction prompt -> generate M_hat -> decode pixels"""
        tokens, embeds = self.image_tokens(image)
        words = encode_text(f"{EDIT_PROMPT} {instruction}", terminate=False)
        segments = [Segment.image(tokens, self.pipeline.input_modality), Segment.text(words)]
        prefix = pack_instruction(segments, None, self.vocab, answer_image=True)
        pixels, generated = self.generate_visual(prefix, embeds)
        record = self._record("edit", instruction, pixels, input_morph_ids=self._ids(tokens), **generated)
        return self.render(pixels), record

    def _record(self, command: str, prompt: str, pixels: torch.Tensor, **tokens: Any) -> GenerationRecord:
        return GenerationRecord(command=command, prompt=prompt, variant=self.pipeline.variant,
                                stage=self.pipeline.stage, seed=self.seed,
                                pixel_ids=pixels.reshape(-1).tolist(), **tokens)


def write_generation(out_dir: Union[str, Path], name: str, image: np.ndarray, record: GenerationRecord) -> Path:
    """<name>.png plus <name>.json, both renamed into place"""
    out_dir = Path(out_dir)
    if record.command not in ("t2i", "edit"):
        raise MorphError("INVALID_CONFIG", f"no image output for '{record.command}'")
    png = out_dir / f"{name}.png"
    write_png(png, image)
    write_json(out_dir / f"{name}.json", record.model_dump())
    print(f"💾 {png} (+ sidecar {name}.json)")
    return png
