import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from morphtok.core.inference_manager import InferenceManager
from morphtok.core.pipeline import MorphPipeline, PipelineConfig
from morphtok.features.evaluation.ablations import (
    ablation_grid,
    budget_hash,
    check_budget,
    evaluate,
    ordering_claims,
    run_ablation,
    run_variant,
    trained_budget,
)
from morphtok.features.evaluation.eval_config import EvalConfig
from morphtok.features.evaluation.metrics import (
    MetricReport,
    RandomEditor,
    eval_caption,
    eval_edit,
    eval_identity,
    eval_recon,
    masked_nll,
    pixel_l1,
)
from morphtok.features.evaluation.probes import (
    TEXT_ONLY,
    compare_probes,
    conflict_sweep,
    curve_auc,
    perplexity_probe,
    summarize_sweep,
)
from morphtok.features.evaluation.retrieval import recall_at_k, retrieval_probe
from morphtok.features.mllm.vocab import Modality, Vocabulary, collate, pack
from morphtok.features.morph_encoder.encoder import MorphSequence
from morphtok.features.synth_data.grammar import IDENTITY_INSTRUCTION, WORDS, encode_text
from morphtok.features.training.stages import train_stages
from morphtok.utils.errors import MorphError


# Retrieval ranking

def test_recall_on_perfect_and_single_galleries():
    assert recall_at_k(torch.tensor([[0.3]]), [1])["i2t@1"] == 1.0
    scores = recall_at_k(torch.eye(5), [1, 5])
    assert all(value == 1.0 for value in scores.values())


def test_recall_counts_ties_against_the_match():
    scores = recall_at_k(torch.ones(4, 4), [1, 4])
    assert scores["i2t@1"] == 0.0 and scores["t2i@1"] == 0.0
    assert scores["i2t@4"] == 1.0


def test_recall_on_random_scores_is_near_chance():
    similarity = torch.randn(100, 100, generator=torch.Generator().manual_seed(0))
    scores = recall_at_k(similarity, [1, 10])
    assert scores["i2t@1"] < 0.05 and scores["t2i@1"] < 0.05
    assert scores["i2t@10"] < 0.25
    with pytest.raises(MorphError) as err:
        recall_at_k(torch.zeros(2, 3), [1])
    assert err.value.code == "SHAPE_MISMATCH"


# Perplexity and reports

def test_uniform_logits_give_modality_sized_perplexity():
    vocab = Vocabulary(len(WORDS), 8, 0)
    morph = MorphSequence(torch.tensor([1, 4, 7]), torch.zeros(3, 8))
    seq = collate([pack("YM", morph, encode_text("a red circle"), stage=1, vocab=vocab)], vocab)
    logits = torch.zeros(1, len(seq), vocab.size)

    text_nll, text_count = masked_nll(logits, seq, Modality.TEXT, vocab)
    morph_nll, morph_count = masked_nll(logits, seq, Modality.MORPH, vocab)
    assert morph_count == 3 and text_count > 0
    assert math.exp(text_nll / text_count) == pytest.approx(vocab.text_size, rel=1e-5)
    assert math.exp(morph_nll / morph_count) == pytest.approx(8, rel=1e-5)

    total, count = masked_nll(logits, seq)
    assert math.exp(total / count) == pytest.approx(vocab.size, rel=1e-5)


def test_metric_report_round_trip_and_bounds(tmp_path):
    report = MetricReport(variant="wo-decoder", caption_exact=0.5, recon_l1=0.1,
                          retrieval_r_at_k={"i2t@1": 0.2}, warnings=["note"])
    report.save(tmp_path / "report.json")
    assert MetricReport.load(tmp_path / "report.json") == report
    with pytest.raises(ValidationError):
        MetricReport(caption_exact=1.5)
    with pytest.raises(ValidationError):
        MetricReport(edit_scene_acc=-0.1)


def test_pixel_l1_scale():
    black = np.zeros((4, 4, 3), dtype=np.uint8)
    white = np.full((4, 4, 3), 255, dtype=np.uint8)
    assert pixel_l1(black, white) == 1.0
    assert pixel_l1(black, black) == 0.0
    with pytest.raises(MorphError) as err:
        pixel_l1(black, white[:2])
    assert err.value.code == "SHAPE_MISMATCH"


def test_curve_auc_and_probe_comparison():
    assert curve_auc([0.0, 1.0], [1.0, 1.0]) == pytest.approx(1.0)
    assert curve_auc([1.0, 0.0, 0.5], [1.0, 0.0, 0.5]) == pytest.approx(0.5)
    assert curve_auc([0.3], [0.9]) == 0.0
    merged = compare_probes({"text": 2.0}, {"text": 1.5, "visual": 3.0})
    assert merged == {"pre_text": 2.0, "post_text": 1.5, "post_visual": 3.0}


# Pipeline-level suites

def test_perplexity_probe_scores_both_modalities(make_pipeline, test_samples):
    probe = perplexity_probe(make_pipeline("morph"), test_samples, batch=2)
    assert set(probe) == {"text", "visual"}
    assert all(value > 1.0 and np.isfinite(value) for value in probe.values())
    assert set(perplexity_probe(make_pipeline("continuous"), test_samples)) == {"text"}
    assert set(perplexity_probe(make_pipeline("detail-detail"), test_samples)) == {"text", "visual"}


def test_identity_edit_goes_through_the_model(make_pipeline, test_samples):
    pipeline = make_pipeline("morph")
    pipeline.stage = 3
    pipeline.encoder.mark_trained()
    manager = InferenceManager(pipeline)
    image = test_samples[0].image
    output, record = manager.edit(image, IDENTITY_INSTRUCTION)
    assert output.shape == image.shape
    assert len(record.input_morph_ids) == pipeline.n_g
    assert len(record.output_morph_ids) == pipeline.n_g
    assert len(record.pixel_ids) == pipeline.codec.num_tokens
    assert "shortcut" not in record.model_dump()

    gap = eval_identity(manager, test_samples[:2])
    assert 0.0 <= gap <= 1.0
    with pytest.raises(MorphError) as err:
        eval_identity(manager, [])
    assert err.value.code == "SHAPE_MISMATCH"


def test_random_editor_stays_at_chance(codec, test_samples):
    _, accuracy = eval_edit(RandomEditor(codec, seed=0), test_samples)
    assert accuracy <= 0.25
    with pytest.raises(MorphError) as err:
        eval_edit(RandomEditor(codec), [])
    assert err.value.code == "SHAPE_MISMATCH"


def test_recon_error_is_on_the_unit_scale(make_pipeline, test_samples):
    for variant in ("morph", "wo-decoder"):
        value = eval_recon(make_pipeline(variant), test_samples, batch=2)
        assert 0.0 <= value <= 1.0


def test_caption_eval_needs_samples(make_pipeline):
    with pytest.raises(MorphError) as err:
        eval_caption(make_pipeline("morph"), [])
    assert err.value.code == "SHAPE_MISMATCH"


def test_evaluate_fills_the_requested_suites(make_pipeline, test_samples):
    pipeline = make_pipeline("morph")
    pipeline.encoder.mark_trained()
    config = EvalConfig.get_preset("micro")
    report = evaluate(pipeline, test_samples, ["caption", "recon", "edit", "probe"], config, baseline=pipeline)
    assert 0.0 <= report.caption_exact <= 1.0 and report.caption_ppl > 0
    assert report.recon_l1 is not None and report.edit_scene_acc is not None
    assert report.random_edit_scene_acc is not None
    assert {"pre_text", "post_text", "pre_visual", "post_visual"} <= set(report.probe_ppl)
    assert report.t2i_scene_acc is None

    with pytest.raises(MorphError) as err:
        evaluate(pipeline, test_samples, ["bleu"], config)
    assert err.value.code == "INVALID_CONFIG"


def test_retrieval_probe_on_a_tiny_gallery(make_pipeline, train_set, test_samples):
    scores = retrieval_probe(make_pipeline("morph"), train_set.samples, test_samples, EvalConfig.get_preset("micro"))
    assert set(scores) == {"i2t@1", "t2i@1", "i2t@5", "t2i@5", "mean"}
    assert all(0.0 <= v <= 1.0 for v in scores.values())
    # the gallery holds fewer than five pairs
    assert scores["i2t@5"] == 1.0 and scores["t2i@5"] == 1.0


# Budgets and ablations

def test_budget_hash_ignores_the_variant(train_set, micro_stage):
    base = PipelineConfig.get_preset("small")
    configs = [micro_stage(1), micro_stage(2)]
    reference = budget_hash(train_set, configs, base)
    assert budget_hash(train_set, configs, base.with_variant("continuous")) == reference
    assert budget_hash(train_set, [micro_stage(1)], base) != reference


def test_budget_mismatch_against_the_trained_pipeline(codec, train_set, test_samples, micro_stage):
    base = PipelineConfig.get_preset("small")
    shorter = budget_hash(train_set, [micro_stage(1, steps=1)], base)
    with pytest.raises(MorphError) as err:
        run_variant("morph", codec, base, train_set, [micro_stage(1)], test_samples,
                    EvalConfig.get_preset("micro"), suites=("caption",), expected_budget=shorter)
    assert err.value.code == "BUDGET_MISMATCH"


def test_trained_budget_follows_the_stage_history(make_pipeline, train_set, micro_stage, tmp_path):
    pipeline = make_pipeline("morph")
    base = pipeline.config
    configs = [micro_stage(1)]
    train_stages(pipeline, configs, train_set, progress=False)
    assert trained_budget(pipeline) == budget_hash(train_set, configs, base)
    check_budget(pipeline, budget_hash(train_set, configs, base.with_variant("continuous")))

    pipeline.save(tmp_path / "ckpt", quiet=True)
    restored = MorphPipeline.load(tmp_path / "ckpt")
    assert restored.history == pipeline.history
    for other in ([micro_stage(1, steps=3)], [micro_stage(1), micro_stage(2)]):
        with pytest.raises(MorphError) as err:
            check_budget(restored, budget_hash(train_set, other, base))
        assert err.value.code == "BUDGET_MISMATCH"


def test_run_ablation_only_accepts_ablations(codec, train_set, test_samples, micro_stage):
    base = PipelineConfig.get_preset("small")
    for name in ("morph", "wo-everything"):
        with pytest.raises(MorphError) as err:
            run_ablation(name, codec, base, train_set, [micro_stage(1)], test_samples, EvalConfig.get_preset("micro"))
        assert err.value.code == "UNKNOWN_ABLATION"


def test_run_variant_trains_and_reports(codec, train_set, test_samples, micro_stage):
    base = PipelineConfig.get_preset("small")
    configs = [micro_stage(1), micro_stage(2)]
    report = run_variant("wo-deconfound", codec, base, train_set, configs, test_samples,
                         EvalConfig.get_preset("micro"), suites=("caption", "recon"))
    assert report.variant == "wo-deconfound"
    assert report.ablations["wo-deconfound"]["budget_hash"] == budget_hash(train_set, configs, base)
    assert report.caption_exact is not None and report.recon_l1 is not None


def test_conflict_sweep_rows(codec, train_set, test_samples, micro_stage):
    config = EvalConfig.get_preset("micro")
    rows = conflict_sweep(codec, PipelineConfig.get_preset("small"), train_set, test_samples, config,
                          train=micro_stage(1), variants=("morph",))
    baseline, *sweep = rows
    assert baseline["variant"] == TEXT_ONLY and baseline["seed"] == 0 and baseline["text_ppl"] > 0
    assert [row["gen_share"] for row in sweep] == config.sweep_ratios
    assert all(row["variant"] == "morph" and row["seed"] == 0 and row["text_ppl"] > 0 for row in sweep)


def _sweep_row(variant, share, exact, text_ppl, seed=0):
    return {"variant": variant, "seed": seed, "gen_share": share, "caption_exact": exact, "text_ppl": text_ppl}


def test_summarize_sweep_scores_the_conflict():
    shares = [0.1, 0.5, 0.9]
    rows = [{"variant": TEXT_ONLY, "seed": 0, "text_ppl": 2.0}]
    rows += [_sweep_row("detail-detail", s, y, 3.0) for s, y in zip(shares, [0.9, 0.6, 0.2])]
    rows += [_sweep_row("morph", s, y, 2.5) for s, y in zip(shares, [0.9, 0.9, 0.85])]
    summary, claims = summarize_sweep(rows)

    assert summary[TEXT_ONLY]["text_ppl"] == pytest.approx(2.0)
    tied = summary["detail-detail"]
    assert tied["shares"] == shares and tied["caption_curve"] == pytest.approx([0.9, 0.6, 0.2])
    assert tied["non_increasing"]
    assert summary["morph"]["drop_auc"] < tied["drop_auc"]
    assert claims["detail-detail:caption_non_increasing"]["passed"]
    assert claims["detail-detail:text_ppl_above_text_only"]["passed"]
    assert claims["morph<detail-detail:drop_auc"]["passed"]
    assert "morph<abstr-abstr-vq:drop_auc" not in claims


def test_summarize_sweep_averages_seeds_and_flags_a_rising_curve():
    rows = [_sweep_row("detail-detail", s, y, 1.5, seed) for seed in (0, 1)
            for s, y in zip([0.1, 0.5, 0.9], [0.2, 0.5, 0.9] if seed == 0 else [0.4, 0.5, 0.7])]
    rows.append({"variant": TEXT_ONLY, "seed": 0, "text_ppl": 2.0})
    summary, claims = summarize_sweep(rows, tolerance=0.02)
    assert summary["detail-detail"]["caption_curve"] == pytest.approx([0.3, 0.5, 0.8])
    assert not claims["detail-detail:caption_non_increasing"]["passed"]
    assert not claims["detail-detail:text_ppl_above_text_only"]["passed"]


def test_ordering_claims_use_a_majority_of_seeds():
    per_seed = {
        "morph": {0: {"caption_exact": 0.9, "edit_l1": 0.1}, 1: {"caption_exact": 0.5, "edit_l1": 0.1},
                  2: {"caption_exact": 0.8, "edit_l1": 0.3}},
        "detail-detail": {0: {"caption_exact": 0.7}, 1: {"caption_exact": 0.6}, 2: {"caption_exact": 0.7}},
        "wo-decoder": {0: {"edit_l1": 0.2}, 1: {"edit_l1": 0.2}, 2: {"edit_l1": 0.2}},
        "continuous": {0: {"caption_exact": 0.9}, 1: {"caption_exact": 0.5}, 2: {"caption_exact": 0.9}},
    }
    claims = ordering_claims(per_seed, [0, 1, 2])
    assert claims["morph>detail-detail:caption"] == {"metric": "caption_exact", "held": 2, "seeds": 3, "passed": True}
    assert claims["morph>wo-decoder:edit"]["held"] == 2 and claims["morph>wo-decoder:edit"]["passed"]
    # ties count for the non-strict orderings only
    assert claims["morph>=continuous:caption"]["held"] == 2
    assert "morph>abstr-abstr-vq:caption" not in claims

    split = ordering_claims({"morph": {0: {"caption_exact": 0.9}, 1: {"caption_exact": 0.1}},
                             "detail-detail": {0: {"caption_exact": 0.5}, 1: {"caption_exact": 0.5}}}, [0, 1])
    assert not split["morph>detail-detail:caption"]["passed"]


def test_ablation_grid_reports_seeds_and_claims(codec, train_set, test_samples, micro_stage):
    base = PipelineConfig.get_preset("small")
    config = EvalConfig.get_preset("micro")
    report = ablation_grid(codec, base, train_set, [micro_stage(1)], test_samples, config,
                           names=("wo-deconfound",), seeds=[0, 1], suites=("caption",))
    assert set(report.ablations) == {"morph", "wo-deconfound"}
    for row in report.ablations.values():
        assert set(row) == {"seeds", "mean"} and set(row["seeds"]) == {"0", "1"}
        assert 0.0 <= row["mean"]["caption_exact"] <= 1.0
    # budgets differ across seeds
    hashes = {row["budget_hash"] for row in report.ablations["morph"]["seeds"].values()}
    assert len(hashes) == 2
    assert set(report.claims) == {"morph>=wo-deconfound:caption"}
    assert report.claims["morph>=wo-deconfound:caption"]["seeds"] == 2

    with pytest.raises(MorphError) as err:
        ablation_grid(codec, base, train_set, [micro_stage(1)], test_samples, config, seeds=[])
    assert err.value.code == "INVALID_CONFIG"
