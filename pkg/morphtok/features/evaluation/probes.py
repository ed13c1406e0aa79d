"""
Probes Module
Teacher-forced perplexity of text and visual tokens, and the comprehension /
generation conflict sweep over joint-training data mixes
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from ...core.pipeline import MorphPipeline, PipelineConfig
from ...utils.io_utils import seed_everything
from ..mllm.model import cross_entropy_masked
from ..mllm.vocab import MixedSequence, Modality, collate, pack
from ..pixel_codec.codec import PixelCodec
from ..synth_data.dataset import Sample, SynthDataset
from ..synth_data.grammar import encode_text
from ..training.schedule import build_optimizer, optimizer_step
from ..training.stages import train_stages
from ..training.train_config import TrainConfig
from .eval_config import EvalConfig
from .metrics import eval_caption, masked_nll

SWEEP_VARIANTS = ("detail-detail", "abstr-abstr-vq", "morph")
TEXT_ONLY = "text-only"


@torch.no_grad()
def perplexity_probe(pipeline: MorphPipeline, samples: Sequence[Sample], batch: int = 64) -> Dict[str, float]:
    """
    Per-token perplexity with the softmax restricted to the scored modality:
    text positions of ⟨M,Y⟩ and visual positions of ⟨Y,M⟩
    """
    pipeline.eval()
    vocab = pipeline.vocab
    visual_kind = pipeline.output_modality
    totals = {"text": [0.0, 0], "visual": [0.0, 0]}
    samples = list(samples)
    for start in range(0, len(samples), batch):
        chunk = samples[start:start + batch]
        images = np.stack([s.image for s in chunk])
        texts = [encode_text(s.caption) for s in chunk]
        visual = pipeline.visual_inputs(images, grad=False)

        seq = collate([pack("MY", visual.tokens[i], texts[i], stage=1, vocab=vocab, visual=pipeline.input_modality)
                       for i in range(len(chunk))], vocab)
        out = pipeline.llm(seq, visual.embeds)
        nll, n = masked_nll(out.logits, seq, Modality.TEXT, vocab)
        totals["text"][0] += nll
        totals["text"][1] += n

        if pipeline.continuous:
            continue
        if visual_kind == Modality.PIXEL:
            tokens, embeds = list(pipeline.pixel_ids(images)), None
        else:
            tokens, embeds = visual.tokens, visual.embeds
        seq = collate([pack("YM", tokens[i], texts[i], stage=1, vocab=vocab, visual=visual_kind)
                       for i in range(len(chunk))], vocab)
        out = pipeline.llm(seq, embeds)
        nll, n = masked_nll(out.logits, seq, visual_kind, vocab)
        totals["visual"][0] += nll
        totals["visual"][1] += n

    return {name: math.exp(total / count) for name, (total, count) in totals.items() if count}


def compare_probes(before: Dict[str, float], after: Dict[str, float]) -> Dict[str, float]:
    """pre_* from the checkpoint before training, post_* from the one after"""
    merged = {f"pre_{k}": v for k, v in before.items()}
    merged.update({f"post_{k}": v for k, v in after.items()})
    for name in ("text", "visual"):
        if name in before and name in after:
            print(f"    {name} perplexity: {before[name]:.3f} -> {after[name]:.3f}")
    return merged


def curve_auc(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Trapezoid area under a curve, x sorted ascending"""
    order = np.argsort(xs)
    x = np.asarray(xs, dtype=np.float64)[order]
    y = np.asarray(ys, dtype=np.float64)[order]
    if len(x) < 2:
        return 0.0
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def _text_sequences(samples: Sequence[Sample], vocab) -> MixedSequence:
    """[BOS, Y, BOI] rows with CE on the caption only"""
    return collate([pack("YM", None, encode_text(s.caption), stage=1, vocab=vocab, prompt_only=True)
                    for s in samples], vocab)


def text_only_baseline(codec: PixelCodec, base: PipelineConfig, dataset: SynthDataset, test: Sequence[Sample],
                       train: TrainConfig, variant: str = "detail-detail") -> float:
    """Text perplexity of an MLLM core trained on captions alone with the same step budget"""
    seed_everything(train.seed)
    pipeline = MorphPipeline(codec, base.with_variant(variant))
    llm, vocab = pipeline.llm, pipeline.vocab
    optimizer = build_optimizer(llm.parameters(), train)
    rng = np.random.default_rng(train.seed)
    samples = dataset.samples
    llm.train()
    for step in range(train.steps):
        idx = rng.integers(0, len(samples), size=train.batch)
        seq = _text_sequences([samples[i] for i in idx], vocab)
        cross_entropy_masked(llm(seq).logits, seq).backward()
        optimizer_step(optimizer, step, train)
    llm.eval()

    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(test), train.batch):
            seq = _text_sequences(test[start:start + train.batch], vocab)
            nll, n = masked_nll(llm(seq).logits, seq, Modality.TEXT, vocab)
            total, count = total + nll, count + n
    return math.exp(total / count)


def conflict_sweep(codec: PixelCodec, base: PipelineConfig, dataset: SynthDataset, test: Sequence[Sample],
                   config: EvalConfig, train: Optional[TrainConfig] = None,
                   variants: Sequence[str] = SWEEP_VARIANTS, progress: bool = False) -> List[Dict[str, Any]]:
    """
    For each variant, seed and generation-data share r, joint-train from scratch with a
    ⟨M,Y⟩ : ⟨Y,M⟩ mix of (1 - r) : r and score comprehension and generation.
    One row per (variant, share, seed), plus one text-only baseline row per seed.
    """
    train = train or TrainConfig(stage=1)
    test = list(test)
    rows: List[Dict[str, Any]] = []
    for seed in config.sweep_seeds:
        stage1 = replace(train, stage=1, steps=config.sweep_steps, seed=seed)
        rows.append({"variant": TEXT_ONLY, "seed": seed,
                     "text_ppl": text_only_baseline(codec, base, dataset, test, stage1)})
        for variant in variants:
            for share in tqdm(config.sweep_ratios, desc=f"    sweep {variant} s{seed}", ncols=70,
                              disable=not progress):
                run = replace(stage1, format_ratio=1.0 - share)
                seed_everything(run.seed)
                pipeline = MorphPipeline(codec, base.with_variant(variant))
                train_stages(pipeline, [run], dataset, progress=False)
                exact, caption_ppl = eval_caption(pipeline, test, batch=config.batch)
                ppl = perplexity_probe(pipeline, test, batch=config.batch)
                rows.append({
                    "variant": variant,
                    "seed": seed,
                    "gen_share": float(share),
                    "caption_exact": exact,
                    "caption_ppl": caption_ppl,
                    "text_ppl": ppl.get("text"),
                    "visual_ppl": ppl.get("visual"),
                })
    summary, _ = summarize_sweep(rows, config.sweep_tolerance)
    for variant, values in summary.items():
        if variant != TEXT_ONLY:
            print(f"✅ Sweep {variant}: caption AUC {values['caption_auc']:.4f}, drop AUC {values['drop_auc']:.4f}")
    return rows


def summarize_sweep(rows: Sequence[Dict[str, Any]], tolerance: float = 0.02
                    ) -> Tuple[Dict[str, Dict[str, Any]], Dict[str, Dict[str, Any]]]:
    """
    Per-variant curves (seed means per share, smoothed over neighbouring shares),
    comprehension-drop AUC and mean text perplexity, plus the conflict claims.
    """
    summary: Dict[str, Dict[str, Any]] = {}
    baseline = [r["text_ppl"] for r in rows if r["variant"] == TEXT_ONLY]
    if baseline:
        summary[TEXT_ONLY] = {"text_ppl": float(np.mean(baseline))}

    for variant in dict.fromkeys(r["variant"] for r in rows if r["variant"] != TEXT_ONLY):
        points = [r for r in rows if r["variant"] == variant]
        shares = sorted({r["gen_share"] for r in points})
        curve = [float(np.mean([r["caption_exact"] for r in points if r["gen_share"] == s])) for s in shares]
        smooth = [float(np.mean(curve[max(0, i - 1):i + 2])) for i in range(len(curve))]
        drops = [max(0.0, smooth[0] - y) for y in smooth]
        text = [r["text_ppl"] for r in points if r.get("text_ppl") is not None]
        summary[variant] = {
            "shares": shares,
            "caption_curve": curve,
            "caption_auc": curve_auc(shares, curve),
            "drop_auc": curve_auc(shares, drops),
            "non_increasing": all(b <= a + tolerance for a, b in zip(smooth, smooth[1:])),
            "text_ppl": float(np.mean(text)) if text else None,
        }

    claims: Dict[str, Dict[str, Any]] = {}
    tied = summary.get("detail-detail")
    if tied is not None:
        claims["detail-detail:caption_non_increasing"] = {"passed": tied["non_increasing"]}
        if TEXT_ONLY in summary and tied["text_ppl"] is not None:
            claims["detail-detail:text_ppl_above_text_only"] = {
                "value": tied["text_ppl"], "baseline": summary[TEXT_ONLY]["text_ppl"],
                "passed": tied["text_ppl"] > summary[TEXT_ONLY]["text_ppl"],
            }
    if "morph" in summary:
        for other in ("detail-detail", "abstr-abstr-vq"):
            if other in summary:
                claims[f"morph<{other}:drop_auc"] = {
                    "value": summary["morph"]["drop_auc"], "other": summary[other]["drop_auc"],
                    "passed": summary["morph"]["drop_auc"] < summary[other]["drop_auc"],
                }
    return summary, claims
