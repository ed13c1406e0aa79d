"""
Ablations Module
Suite runner for one checkpoint and the equal-budget ablation grid over seeds
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ...core.inference_manager import InferenceManager
from ...core.pipeline import ABLATIONS, VARIANTS, MorphPipeline, PipelineConfig
from ...utils.config_store import stable_hash
from ...utils.errors import MorphError
from ...utils.io_utils import seed_everything
from ..pixel_codec.codec import PixelCodec
from ..synth_data.dataset import Sample, SynthDataset
from ..training.stages import train_stages
from ..training.train_config import TrainConfig
from .eval_config import SUITES, EvalConfig
from .metrics import MetricReport, RandomEditor, eval_caption, eval_edit, eval_identity, eval_recon, eval_t2i
from .probes import compare_probes, perplexity_probe
from .retrieval import retrieval_probe

# (name, better variant, worse variant, metric, strict); edit_l1 is lower-is-better
ORDERINGS = (
    ("morph>detail-detail:caption", "morph", "detail-detail", "caption_exact", True),
    ("morph>abstr-abstr-vq:caption", "morph", "abstr-abstr-vq", "caption_exact", True),
    ("morph>wo-decoder:edit", "morph", "wo-decoder", "edit_l1", True),
    ("morph>abstr-abstr-vq:edit", "morph", "abstr-abstr-vq", "edit_l1", True),
    ("morph>=wo-deconfound:caption", "morph", "wo-deconfound", "caption_exact", False),
    ("morph>=wo-deconfound:edit", "morph", "wo-deconfound", "edit_l1", False),
    ("morph>=continuous:caption", "morph", "continuous", "caption_exact", False),
    ("morph>=continuous:edit", "morph", "continuous", "edit_l1", False),
)
_LOWER_IS_BETTER = ("edit_l1", "recon_l1", "caption_ppl")


def _budget(dataset: Any, train: List[Dict[str, Any]], model: Dict[str, Any]) -> str:
    sizes = dict(model)
    sizes.pop("variant", None)
    return stable_hash({"dataset": dataset, "train": train, "model": sizes})


def budget_hash(dataset: SynthDataset, configs: Sequence[TrainConfig], base: PipelineConfig) -> str:
    """Everything a fair comparison must share: data, seeds, step budgets and model sizes"""
    return _budget(dataset.describe(), [c.to_dict() for c in configs], base.to_dict())


def trained_budget(pipeline: MorphPipeline) -> str:
    """Budget hash of what a pipeline was actually trained on, from its stage history"""
    datasets = [h["dataset"] for h in pipeline.history]
    data = datasets[0] if datasets and all(d == datasets[0] for d in datasets) else datasets
    return _budget(data, [h["train"] for h in pipeline.history], pipeline.config.to_dict())


def check_budget(pipeline: MorphPipeline, expected: str):
    budget = trained_budget(pipeline)
    if budget != expected:
        raise MorphError("BUDGET_MISMATCH",
                         f"'{pipeline.variant}' was trained on budget {budget}, the comparison uses {expected}")


def evaluate(pipeline: MorphPipeline, test: Sequence[Sample], suites: Sequence[str], config: EvalConfig,
             train: Optional[Sequence[Sample]] = None, baseline: Optional[MorphPipeline] = None,
             progress: bool = False) -> MetricReport:
    """Run the requested suites on one pipeline"""
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise MorphError("INVALID_CONFIG", f"unknown eval suite(s) {unknown} (expected {SUITES})")
    seed_everything(config.seed)
    report = MetricReport(variant=pipeline.variant, config_hash=pipeline.config_hash())
    manager = InferenceManager(pipeline, seed=config.seed, mode=config.mode)
    captions = list(test)[: config.n_test]
    edits = [s for s in test if s.edit is not None][: config.n_edit]

    if "caption" in suites:
        report.caption_exact, report.caption_ppl = eval_caption(pipeline, captions, config.batch, manager, progress)
    if "recon" in suites:
        report.recon_l1 = eval_recon(pipeline, captions, config.batch)
    if "edit" in suites:
        report.edit_l1, report.edit_scene_acc = eval_edit(manager, edits, report.warnings, progress)
        _, report.random_edit_scene_acc = eval_edit(RandomEditor(pipeline.codec, config.seed), edits)
        report.identity_l1 = eval_identity(manager, edits, progress)
    if "t2i" in suites:
        report.t2i_scene_acc = eval_t2i(manager, captions, report.warnings, progress)
    if "probe" in suites:
        probe_set = list(test)[: config.n_probe]
        after = perplexity_probe(pipeline, probe_set, config.batch)
        before = perplexity_probe(baseline, probe_set, config.batch) if baseline is not None else {}
        report.probe_ppl = compare_probes(before, after)
    if "retrieval" in suites:
        if not train:
            raise MorphError("SHAPE_MISMATCH", "retrieval suite needs training pairs")
        report.retrieval_r_at_k = retrieval_probe(pipeline, train, test, config)
    return report


def run_variant(variant: str, codec: PixelCodec, base: PipelineConfig, dataset: SynthDataset,
                configs: Sequence[TrainConfig], test: Sequence[Sample], config: EvalConfig,
                suites: Sequence[str] = ("caption", "recon", "edit"), expected_budget: Optional[str] = None,
                log_dir: Optional[Path] = None) -> MetricReport:
    """Train one variant from scratch on the shared budget and evaluate it"""
    if variant not in VARIANTS:
        raise MorphError("UNKNOWN_ABLATION", f"unknown ablation '{variant}' (expected one of {VARIANTS})")

    print(f"🚀 Variant {variant}")
    seed_everything(configs[0].seed if configs else 0)
    pipeline = MorphPipeline(codec, base.with_variant(variant))
    train_stages(pipeline, configs, dataset, log_dir=log_dir, progress=False)
    budget = trained_budget(pipeline)
    if expected_budget is not None:
        check_budget(pipeline, expected_budget)
    report = evaluate(pipeline, test, suites, config, train=dataset.samples)
    report.ablations[variant] = {"budget_hash": budget}
    return report


def run_ablation(name: str, codec: PixelCodec, base: PipelineConfig, dataset: SynthDataset,
                 configs: Sequence[TrainConfig], test: Sequence[Sample], config: EvalConfig,
                 expected_budget: Optional[str] = None, **kwargs) -> MetricReport:
    if name not in ABLATIONS:
        raise MorphError("UNKNOWN_ABLATION", f"unknown ablation '{name}' (expected one of {ABLATIONS})")
    return run_variant(name, codec, base, dataset, configs, test, config, expected_budget=expected_budget, **kwargs)


def ablation_grid(codec: PixelCodec, base: PipelineConfig, dataset: SynthDataset, configs: Sequence[TrainConfig],
                  test: Sequence[Sample], config: EvalConfig, names: Sequence[str] = ABLATIONS,
                  seeds: Optional[Sequence[int]] = None, **kwargs) -> MetricReport:
    """
    The main model plus every named ablation, trained from scratch on one budget per seed.
    Rows hold per-seed summaries and their mean; claims hold the orderings under a majority rule.
    """
    seeds = list(config.ablation_seeds if seeds is None else seeds)
    if not seeds:
        raise MorphError("INVALID_CONFIG", "ablation grid needs at least one seed")
    per_seed: Dict[str, Dict[int, Dict[str, Any]]] = {}
    warnings: List[str] = []
    for seed in seeds:
        seeded = [replace(c, seed=seed) for c in configs]
        budget = budget_hash(dataset, seeded, base)
        for name in ("morph", *names):
            if name == "morph":
                report = run_variant(name, codec, base, dataset, seeded, test, config, expected_budget=budget, **kwargs)
            else:
                report = run_ablation(name, codec, base, dataset, seeded, test, config, expected_budget=budget, **kwargs)
            per_seed.setdefault(name, {})[seed] = _summary(report)
            warnings.extend(f"{name} (seed {seed}): {w}" for w in report.warnings)

    main = MetricReport(variant="morph")
    main.ablations = {name: {"seeds": {str(s): row for s, row in rows.items()}, "mean": _mean(rows.values())}
                      for name, rows in per_seed.items()}
    main.claims = ordering_claims(per_seed, seeds)
    main.warnings.extend(warnings)
    for claim, result in main.claims.items():
        print(f"{'✅' if result['passed'] else '⚠️'} {claim}: {result['held']}/{result['seeds']} seeds")
    return main


def ordering_claims(per_seed: Dict[str, Dict[int, Dict[str, Any]]], seeds: Sequence[int]) -> Dict[str, Dict[str, Any]]:
    """Each ordering passes when it holds on a strict majority of seeds"""
    claims: Dict[str, Dict[str, Any]] = {}
    for claim, better, worse, metric, strict in ORDERINGS:
        if better not in per_seed or worse not in per_seed:
            continue
        held, compared = 0, 0
        for seed in seeds:
            a = per_seed[better].get(seed, {}).get(metric)
            b = per_seed[worse].get(seed, {}).get(metric)
            if a is None or b is None:
                continue
            if metric in _LOWER_IS_BETTER:
                a, b = -a, -b
            compared += 1
            held += int(a > b if strict else a >= b)
        if not compared:
            continue
        claims[claim] = {"metric": metric, "held": held, "seeds": len(seeds), "passed": held * 2 > len(seeds)}
    return claims


def _summary(report: MetricReport) -> Dict[str, Any]:
    keep = ("caption_exact", "caption_ppl", "recon_l1", "edit_l1", "edit_scene_acc", "t2i_scene_acc")
    data = report.model_dump()
    summary = {k: data[k] for k in keep if data[k] is not None}
    summary.update(report.ablations.get(report.variant, {}))
    return summary


def _mean(rows) -> Dict[str, float]:
    rows = list(rows)
    keys = sorted({k for row in rows for k, v in row.items() if isinstance(v, (int, float))})
    return {k: float(np.mean([row[k] for row in rows if k in row])) for k in keys}
