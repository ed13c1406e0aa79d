"""
Stage Trainer Module
Stage 1 joint ⟨M,Y⟩ / ⟨Y,M⟩ alignment, stage 2 auto-encoding with detached
caption and reconstruction losses, stage 3 instruction tuning

Every loss is wrapped in a LossTerm tagged with the token groups it consumes
(M, Y, M_hat, X); the detachment audit checks those tags and the autograd graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from ...core.pipeline import MorphPipeline, VisualBatch
from ...utils.errors import MorphError
from ...utils.io_utils import seed_everything
from ..mllm.model import cross_entropy_masked
from ..mllm.vocab import MixedSequence, Modality, collate, pack
from ..morph_encoder.encoder import MorphSequence
from ..synth_data.dataset import SynthDataset
from ..synth_data.grammar import encode_text
from .schedule import build_optimizer, optimizer_step
from .tasks import TaskExample, TaskSampler, build_example, to_sequence
from .train_config import TrainConfig
from .train_log import TrainingLog

TOKEN_GROUPS = frozenset({"M", "Y", "M_hat", "X"})
COUPLING = frozenset({"M", "M_hat"})


@dataclass
class LossTerm:
    name: str
    value: torch.Tensor
    inputs: FrozenSet[str]
    weight: float = 1.0

    def __post_init__(self):
        self.inputs = frozenset(self.inputs)
        unknown = self.inputs - TOKEN_GROUPS
        if unknown:
            raise MorphError("INVALID_CONFIG", f"unknown token groups {sorted(unknown)} in loss '{self.name}'")

    @property
    def couples(self) -> bool:
        return COUPLING <= self.inputs


def coupled_terms(terms: Iterable[LossTerm]) -> List[str]:
    """Names of loss terms that consume both M and M_hat"""
    return [t.name for t in terms if t.couples]


def graph_leaves(loss: torch.Tensor) -> Set[int]:
    """ids of every leaf tensor reachable from loss through its grad_fn graph"""
    leaves: Set[int] = set()
    seen = set()
    stack = [loss.grad_fn] if loss.grad_fn is not None else []
    while stack:
        node = stack.pop()
        if node is None or node in seen:
            continue
        seen.add(node)
        variable = getattr(node, "variable", None)
        if variable is not None:
            leaves.add(id(variable))
        stack.extend(next_fn for next_fn, _ in node.next_functions)
    return leaves


def audit_detachment(caption_loss: torch.Tensor, decoder: nn.Module) -> Dict[str, bool]:
    """
    structural: no decoder parameter is a leaf of the caption-loss graph
    numeric: d caption_loss / d theta_Dec is exactly zero (or absent) everywhere
    """
    params = [p for p in decoder.parameters() if p.requires_grad]
    leaves = graph_leaves(caption_loss)
    structural = not any(id(p) in leaves for p in params)
    grads = torch.autograd.grad(caption_loss, params, retain_graph=True, allow_unused=True)
    numeric = all(g is None or not bool(g.any()) for g in grads)
    return {"structural": structural, "numeric": numeric}


def _row_embeds(parts: Sequence[Optional[torch.Tensor]]) -> Optional[torch.Tensor]:
    present = [p for p in parts if p is not None]
    return torch.cat(present, dim=0) if present else None


class StageTrainer:
    """Runs one stage on a pipeline, logging every step"""

    def __init__(self, pipeline: MorphPipeline, config: TrainConfig, dataset: SynthDataset,
                 log: Optional[TrainingLog] = None, progress: bool = True):
        if len(dataset) == 0:
            raise MorphError("DATASET_EXHAUSTED", "training dataset is empty")
        self.pipeline = pipeline
        self.config = config
        self.samples = dataset.samples
        self.dataset_info = dataset.describe()
        self.log = log if log is not None else TrainingLog()
        self.progress = progress
        self.rng = np.random.default_rng(config.seed)
        self.vocab = pipeline.vocab
        self.max_text = pipeline.config.mllm.max_text

        self.images = np.stack([s.image for s in self.samples])
        self.captions = [encode_text(s.caption) for s in self.samples]
        self.pixel_targets = pipeline.pixel_ids(self.images)
        self.sampler = TaskSampler(config.task_weights, seed=config.seed) if config.stage == 3 else None

    # Helpers

    def _visual(self, images: np.ndarray) -> VisualBatch:
        return self.pipeline.visual_inputs(images, grad=True)

    def _quantizer_term(self, visual: VisualBatch) -> Optional[LossTerm]:
        encoder = self.pipeline.encoder
        if encoder is None or visual.encoder_output is None:
            return None
        return LossTerm("quantizer", encoder.quantizer_loss(visual.encoder_output), {"M"})

    def _regression_loss(self, batch: MixedSequence, hidden: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        """Continuous variant: MSE of next-morph-embedding predictions at every morph position"""
        mask = batch.modality[:, 1:] == int(Modality.MORPH)
        predicted = self.pipeline.llm.hidden_to_code(hidden[:, :-1][mask])
        return F.mse_loss(predicted, targets.reshape(-1, targets.shape[-1]).detach())

    def _generated_condition(self, out, batch: MixedSequence, visual_m: Optional[torch.Tensor],
                             step: int) -> Tuple[MorphSequence, List[LossTerm]]:
        """M_hat conditioning for the decoder from a teacher-forced pass, plus any tie terms"""
        pipeline, llm = self.pipeline, self.pipeline.llm
        n_g = pipeline.n_g
        start = batch.target_start
        extra: List[LossTerm] = []

        if pipeline.continuous:
            return MorphSequence(None, llm.regress_at(out, start, n_g)), extra
        if pipeline.tie_visual:
            # abstr-abstr: the decoder reads M itself
            return MorphSequence(None, visual_m), extra

        if step < pipeline.config.mllm.warm_start_steps and visual_m is not None:
            target_ids = batch.ids[torch.arange(batch.ids.shape[0])[:, None],
                                   start[:, None] + torch.arange(n_g)[None, :]] - self.vocab.morph_offset
            logits = llm.morph_logits_at(out, start, n_g)
            extra.append(LossTerm("warm_start", F.cross_entropy(logits.reshape(-1, logits.shape[-1]),
                                                                target_ids.reshape(-1)), {"M", "M_hat"}))

        if pipeline.config.mllm.gen_path == "hidden_state":
            ids, condition = llm.hidden_condition(out, start, n_g)
        else:
            ids, condition = llm.st_morph(out, start, n_g, pipeline.encoder.codebook.weight)
        return MorphSequence(ids, condition), extra

    # Stage steps

    def stage1_step(self, idx: np.ndarray, step: int) -> Tuple[List[LossTerm], Dict[str, int]]:
        pipeline = self.pipeline
        visual = self._visual(self.images[idx])
        counts = {"MY": 0, "YM": 0}
        seqs = []
        for row, i in enumerate(idx):
            fmt = "MY" if self.rng.random() < self.config.format_ratio else "YM"
            counts[fmt] += 1
            seqs.append(pack(fmt, visual.tokens[row], self.captions[i], stage=1, vocab=self.vocab,
                             visual=pipeline.input_modality, max_text=self.max_text))
        batch = collate(seqs, self.vocab)

        terms: List[LossTerm] = []
        if pipeline.continuous:
            batch.loss_mask &= batch.modality != int(Modality.MORPH)
            out = pipeline.llm(batch, visual.embeds)
            terms.append(LossTerm("regression", self._regression_loss(batch, out.hidden, visual.embeds), {"M"}))
        else:
            out = pipeline.llm(batch, visual.embeds)
        terms.append(LossTerm("ar", cross_entropy_masked(out.logits, batch), {"M", "Y"}))
        quantizer = self._quantizer_term(visual)
        if quantizer is not None:
            terms.append(quantizer)
        return terms, counts

    def stage2_step(self, idx: np.ndarray, step: int) -> Tuple[List[LossTerm], Dict[str, int]]:
        pipeline, config = self.pipeline, self.config
        do_caption = config.stage2_mix == "sum" or step % 2 == 0
        do_generation = config.stage2_mix == "sum" or step % 2 == 1
        visual = self._visual(self.images[idx])
        terms: List[LossTerm] = []

        if do_caption:
            seqs = [pack("MY", visual.tokens[row], self.captions[i], stage=2, vocab=self.vocab,
                         visual=pipeline.input_modality, max_text=self.max_text) for row, i in enumerate(idx)]
            batch = collate(seqs, self.vocab)
            out = pipeline.llm(batch, visual.embeds)
            terms.append(LossTerm("caption", cross_entropy_masked(out.logits, batch), {"M", "Y"},
                                  weight=config.lambda_cap))

        if do_generation:
            terms.extend(self._generation_terms(idx, visual, step))

        quantizer = self._quantizer_term(visual)
        if quantizer is not None:
            terms.append(quantizer)
        return terms, {"caption": int(do_caption), "generation": int(do_generation)}

    def _generation_terms(self, idx: np.ndarray, visual: VisualBatch, step: int) -> List[LossTerm]:
        """⟨Y,M⟩ teacher-forced pass; M_hat drives the decoder, or pixel CE without one"""
        pipeline, config = self.pipeline, self.config
        targets = self.pixel_targets[torch.as_tensor(idx)]
        if pipeline.output_modality == Modality.PIXEL:
            seqs = [pack("YM", targets[row], self.captions[i], stage=2, vocab=self.vocab,
                         visual=Modality.PIXEL, max_text=self.max_text) for row, i in enumerate(idx)]
            batch = collate(seqs, self.vocab)
            out = pipeline.llm(batch, None)
            return [LossTerm("recon", cross_entropy_masked(out.logits, batch), {"Y", "X"}, weight=config.lambda_gen)]

        seqs = [pack("YM", visual.tokens[row], self.captions[i], stage=2, vocab=self.vocab,
                     visual=Modality.MORPH, tie_visual=pipeline.tie_visual, max_text=self.max_text)
                for row, i in enumerate(idx)]
        batch = collate(seqs, self.vocab)
        out = pipeline.llm(batch, visual.embeds)
        terms: List[LossTerm] = []
        if pipeline.tie_visual:
            terms.append(LossTerm("tie", cross_entropy_masked(out.logits, batch), {"M", "M_hat"}))
        condition, extra = self._generated_condition(out, batch, visual.embeds, step)
        terms.extend(extra)
        recon = pipeline.decoder.decode_loss(condition, targets)
        terms.append(LossTerm("recon", recon, {"M_hat", "X"}, weight=config.lambda_gen))
        return terms

    def stage3_step(self, idx: np.ndarray, step: int) -> Tuple[List[LossTerm], Dict[str, int]]:
        pipeline = self.pipeline
        task = self.sampler.draw()
        examples = [build_example(task, self.samples, int(i), self.rng) for i in idx]

        prompt_images = [img for ex in examples for img in ex.images]
        answer_images = [ex.answer_image for ex in examples if ex.answer_is_image]
        stacked = prompt_images + answer_images
        visual = self._visual(np.stack(stacked)) if stacked else VisualBatch(tokens=[])
        answer_pixels = pipeline.pixel_ids(np.stack(answer_images)) if answer_images else None

        seqs, rows, answer_m = self._instruction_batch(examples, visual, answer_pixels, len(prompt_images))
        batch = collate(seqs, self.vocab)
        embeds = _row_embeds(rows)
        terms: List[LossTerm] = []

        if pipeline.continuous and embeds is not None:
            batch.loss_mask &= batch.modality != int(Modality.MORPH)
        out = pipeline.llm(batch, embeds)

        if bool(batch.loss_mask[:, 1:].any()):
            if not examples[0].answer_is_image:
                name, inputs = f"{task}_ce", {"M", "Y"}
            elif pipeline.tie_visual:
                name, inputs = f"{task}_tie", {"M", "M_hat"}
            else:
                name, inputs = f"{task}_ce", {"Y", "X"}
            terms.append(LossTerm(name, cross_entropy_masked(out.logits, batch), inputs))

        if examples[0].answer_is_image and pipeline.uses_decoder:
            condition, extra = self._generated_condition(out, batch, answer_m, step)
            terms.extend(extra)
            terms.append(LossTerm(f"{task}_recon", pipeline.decoder.decode_loss(condition, answer_pixels),
                                  {"M_hat", "X"}, weight=self.config.lambda_gen))

        quantizer = self._quantizer_term(visual)
        if quantizer is not None:
            terms.append(quantizer)
        return terms, {task: 1}

    def _instruction_batch(self, examples: Sequence[TaskExample], visual: VisualBatch,
                           answer_pixels: Optional[torch.Tensor], n_prompt: int):
        """Pack examples; returns sequences, per-row morph embeddings and the answer M embeddings"""
        pipeline = self.pipeline
        seqs: List[MixedSequence] = []
        rows: List[Optional[torch.Tensor]] = []
        answer_embeds: List[torch.Tensor] = []
        cursor, answer_cursor = 0, 0
        for ex in examples:
            count = len(ex.images)
            tokens = visual.tokens[cursor:cursor + count]
            parts = [visual.embeds[cursor:cursor + count].reshape(-1, visual.embeds.shape[-1])] \
                if visual.embeds is not None and count else []
            cursor += count

            answer_tokens = None
            if ex.answer_is_image:
                if pipeline.output_modality == Modality.PIXEL:
                    answer_tokens = answer_pixels[answer_cursor]
                else:
                    position = n_prompt + answer_cursor
                    answer_tokens = visual.tokens[position]
                    parts.append(visual.embeds[position])
                    answer_embeds.append(visual.embeds[position])
                answer_cursor += 1
            seqs.append(to_sequence(ex, tokens, self.vocab, answer_tokens=answer_tokens,
                                    visual=pipeline.input_modality, answer_visual=pipeline.output_modality,
                                    tie_visual=pipeline.tie_visual))
            rows.append(_row_embeds(parts))
        answer_m = torch.stack(answer_embeds) if answer_embeds else None
        return seqs, rows, answer_m

    # Loop

    def run(self, start_step: int = 0) -> TrainingLog:
        config, pipeline = self.config, self.pipeline
        step_fn = {1: self.stage1_step, 2: self.stage2_step, 3: self.stage3_step}[config.stage]
        seed_everything(config.seed + start_step)
        optimizer = build_optimizer(pipeline.trainable_parameters(config.stage), config)

        print(f"🚀 {config.get_description()} [{pipeline.variant}]")
        pipeline.train()
        n = len(self.samples)
        bar = tqdm(range(start_step, config.steps), desc=f"    stage {config.stage}", unit="step",
                   ncols=70, disable=not self.progress)
        for step in bar:
            idx = self.rng.integers(0, n, size=config.batch)
            terms, counts = step_fn(idx, step)
            total = sum(t.weight * t.value for t in terms)
            if not bool(torch.isfinite(total)):
                raise MorphError("NON_FINITE_INPUT", f"non-finite loss at stage {config.stage} step {step}")

            logged = step % config.log_every == 0 or step == config.steps - 1
            extra = {}
            if logged and config.stage >= 2 and pipeline.decoder is not None:
                extra["audit"] = self._audit(terms, step)

            total.backward()
            lr = optimizer_step(optimizer, step, config)
            if logged:
                losses = {t.name: float(t.value.detach()) for t in terms}
                losses["total"] = float(total.detach())
                self.log.record(step, config.stage, losses, lr, counts=counts, **extra)

        pipeline.history.append({"stage": config.stage, "train": config.to_dict(), "dataset": self.dataset_info})
        pipeline.stage = max(pipeline.stage, config.stage)
        pipeline.step = config.steps
        if config.stage == 1 and pipeline.encoder is not None:
            pipeline.encoder.mark_trained()
        pipeline.eval()
        final = self.log.records[-1]["losses"]["total"] if len(self.log) else float("nan")
        print(f"✅ Stage {config.stage} done, final loss {final:.4f}")
        return self.log

    def _audit(self, terms: Sequence[LossTerm], step: int) -> Dict[str, object]:
        coupled = coupled_terms(terms)
        unexpected = [name for name in coupled if not (name == "warm_start" or name.endswith("tie"))]
        result: Dict[str, object] = {"coupled": coupled}
        caption = [t for t in terms if t.inputs == frozenset({"M", "Y"})]
        if caption:
            result.update(audit_detachment(caption[0].value, self.pipeline.decoder))
        if unexpected or not all(result.get(k, True) for k in ("structural", "numeric")):
            raise MorphError("DETACHMENT_VIOLATION", f"step {step}: coupled={coupled} audit={result}")
        return result


def train_stages(pipeline: MorphPipeline, configs: Sequence[TrainConfig], dataset: SynthDataset,
                 log_dir: Optional[Path] = None, progress: bool = True) -> MorphPipeline:
    """Run stages back to back on one pipeline, one JSONL log per stage"""
    if pipeline.stage == 0 and configs and configs[0].stage == 1:
        pipeline.init_dictionary(np.stack([s.image for s in dataset.samples]))
    for config in configs:
        path = Path(log_dir) / f"{pipeline.variant}_stage{config.stage}.jsonl" if log_dir else None
        StageTrainer(pipeline, config, dataset, TrainingLog(path), progress=progress).run()
    return pipeline
