"""
Instruction Tasks Module
USER/ASSISTANT templates for captioning, text-to-image, editing and two-image QA,
plus the weighted task sampler used in stage 3
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ...utils.errors import MorphError
from ..mllm.vocab import MixedSequence, Modality, Segment, VisualTokens, Vocabulary, pack_instruction
from ..synth_data.dataset import Sample
from ..synth_data.grammar import IDENTITY_INSTRUCTION, encode_text

TASKS: Tuple[str, ...] = ("caption", "t2i", "edit", "qa")

CAPTION_PROMPT = "describe the image"
T2I_PROMPT = "generate an image based on the description"
EDIT_PROMPT = "what will this image be like with the editing instruction"
QA_FIRST = "this is the first image"
QA_SECOND = "this is the second image"
QA_SAME = "are the two images the same"
QA_MORE = "which image has more objects"


@dataclass
class TaskExample:
    """
    One instruction example before visual tokenization.
    prompt items are ("text", ids) or ("image", index into images).
    """

    task: str
    images: List[np.ndarray]
    prompt: List[Tuple[str, object]]
    answer_text: Optional[List[int]] = None
    answer_image: Optional[np.ndarray] = None
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def answer_is_image(self) -> bool:
        return self.answer_image is not None


def _words(text: str) -> List[int]:
    return encode_text(text, terminate=False)


def caption_example(sample: Sample) -> TaskExample:
    return TaskExample(
        task="caption",
        images=[sample.image],
        prompt=[("image", 0), ("text", _words(CAPTION_PROMPT))],
        answer_text=encode_text(sample.caption),
        meta={"caption": sample.caption},
    )


def t2i_example(sample: Sample) -> TaskExample:
    return TaskExample(
        task="t2i",
        images=[],
        prompt=[("text", _words(sample.caption)), ("text", _words(T2I_PROMPT))],
        answer_image=sample.image,
        meta={"caption": sample.caption},
    )


def edit_example(sample: Sample, identity: bool = False) -> TaskExample:
    """Edit the source image; identity uses the source as its own target"""
    if identity or sample.edit is None:
        instruction, target = IDENTITY_INSTRUCTION, sample.image
    else:
        instruction, target = sample.edit.instruction, sample.target_image
    return TaskExample(
        task="edit",
        images=[sample.image],
        prompt=[("image", 0), ("text", _words(f"{EDIT_PROMPT} {instruction}"))],
        answer_image=target,
        meta={"instruction": instruction},
    )


def qa_example(first: Sample, second: Sample, rng: np.random.Generator) -> TaskExample:
    """Two-image question with an oracle answer"""
    if rng.random() < 0.5:
        question = QA_SAME
        answer = "yes" if first.scene.key() == second.scene.key() else "no"
    else:
        question = QA_MORE
        a, b = len(first.scene.objects), len(second.scene.objects)
        answer = "the first image" if a > b else "the second image" if b > a else "neither"
    return TaskExample(
        task="qa",
        images=[first.image, second.image],
        prompt=[
            ("text", _words(QA_FIRST)), ("image", 0),
            ("text", _words(QA_SECOND)), ("image", 1),
            ("text", _words(question)),
        ],
        answer_text=encode_text(answer),
        meta={"question": question, "answer": answer},
    )


def to_sequence(example: TaskExample, image_tokens: Sequence[VisualTokens], vocab: Vocabulary,
                answer_tokens: Optional[VisualTokens] = None, visual: Modality = Modality.MORPH,
                answer_visual: Optional[Modality] = None, tie_visual: bool = False,
                prompt_only: bool = False) -> MixedSequence:
    """Pack an example given the visual tokens of its prompt images (and answer image)"""
    segments: List[Segment] = []
    for kind, value in example.prompt:
        if kind == "text":
            segments.append(Segment.text(value))
        else:
            segments.append(Segment.image(image_tokens[int(value)], visual))

    if prompt_only:
        return pack_instruction(segments, None, vocab, answer_image=example.answer_is_image)
    if example.answer_is_image:
        if answer_tokens is None:
            raise MorphError("SHAPE_MISMATCH", f"{example.task} example needs answer visual tokens")
        answer = Segment.image(answer_tokens, answer_visual or visual)
    else:
        answer = Segment.text(example.answer_text)
    return pack_instruction(segments, answer, vocab, stage=3, tie_visual=tie_visual)


class TaskSampler:
    """Draws task tags with the configured mixture weights"""

    def __init__(self, weights: Dict[str, float], seed: int = 0):
        unknown = [t for t in weights if t not in TASKS]
        if unknown:
            raise MorphError("UNKNOWN_TASK", f"unknown task tag(s) {unknown} (expected {TASKS})")
        total = float(sum(weights.values()))
        if total <= 0 or any(w < 0 for w in weights.values()):
            raise MorphError("INVALID_CONFIG", "task weights must be non-negative with a positive sum")
        self.tasks = [t for t in TASKS if weights.get(t, 0) > 0]
        self.probs = np.array([weights[t] / total for t in self.tasks])
        self.rng = np.random.default_rng(seed)
        self.counts: Dict[str, int] = {t: 0 for t in self.tasks}

    def draw(self) -> str:
        task = self.tasks[int(self.rng.choice(len(self.tasks), p=self.probs))]
        self.counts[task] += 1
        return task


def build_example(task: str, samples: Sequence[Sample], index: int, rng: np.random.Generator,
                  identity_rate: float = 0.1) -> TaskExample:
    """Example of one task built from samples[index] (and a partner for QA)"""
    sample = samples[index % len(samples)]
    if task == "caption":
        return caption_example(sample)
    if task == "t2i":
        return t2i_example(sample)
    if task == "edit":
        return edit_example(sample, identity=rng.random() < identity_rate)
    if task == "qa":
        partner = sample if rng.random() < 0.3 else samples[int(rng.integers(len(samples)))]
        return qa_example(sample, partner, rng)
    raise MorphError("UNKNOWN_TASK", f"unknown task tag '{task}'")
