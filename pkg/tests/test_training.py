import json

import numpy as np
import pytest
import torch
import torch.nn as nn

from morphtok.features.synth_data.grammar import IDENTITY_INSTRUCTION, encode_text
from morphtok.features.training.schedule import build_optimizer, lr_at, optimizer_step
from morphtok.features.training.stages import (
    LossTerm,
    StageTrainer,
    audit_detachment,
    coupled_terms,
    graph_leaves,
    train_stages,
)
from morphtok.features.training.tasks import (
    QA_SAME,
    TASKS,
    TaskSampler,
    build_example,
    caption_example,
    edit_example,
    qa_example,
)
from morphtok.features.training.train_config import DEFAULT_TASK_WEIGHTS, TrainConfig
from morphtok.features.training.train_log import TrainingLog
from morphtok.utils.errors import MorphError


# Schedule and config

def test_lr_schedule_endpoints():
    assert lr_at(0, 1.0, 10, 100) == 0.0
    assert lr_at(5, 1.0, 10, 100) == pytest.approx(0.5)
    assert lr_at(10, 1.0, 10, 100) == pytest.approx(1.0)
    assert lr_at(55, 1.0, 10, 100) == pytest.approx(0.5)
    assert lr_at(100, 1.0, 10, 100) == pytest.approx(0.0, abs=1e-12)
    values = [lr_at(s, 1.0, 10, 100) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_schedule_rejects_out_of_range_steps():
    for step in (-1, 101):
        with pytest.raises(MorphError) as err:
            lr_at(step, 1.0, 10, 100)
        assert err.value.code == "STEP_OUT_OF_RANGE"
    assert lr_at(5, 1.0, 5, 5) == 0.0


def test_optimizer_step_applies_the_schedule():
    config = TrainConfig(steps=10, warmup=2, lr_max=0.1)
    layer = nn.Linear(3, 1)
    optimizer = build_optimizer(layer.parameters(), config)
    layer(torch.ones(1, 3)).sum().backward()
    lr = optimizer_step(optimizer, 1, config)
    assert lr == pytest.approx(0.05)
    assert all(p.grad is None for p in layer.parameters())

    frozen = nn.Linear(3, 1).requires_grad_(False)
    with pytest.raises(MorphError) as err:
        build_optimizer(frozen.parameters(), config)
    assert err.value.code == "INVALID_CONFIG"


def test_train_config_validation_and_stage_budgets():
    with pytest.raises(MorphError) as err:
        TrainConfig(stage=4)
    assert err.value.code == "UNKNOWN_STAGE"
    for bad in ({"steps": 0}, {"lambda_cap": -1.0}, {"stage2_mix": "interleave"}):
        with pytest.raises(MorphError) as err:
            TrainConfig(**bad)
        assert err.value.code == "INVALID_CONFIG"

    stage3 = TrainConfig.for_stage(3)
    assert (stage3.steps, stage3.lr_max) == (2000, 1e-4)
    assert TrainConfig.for_stage(1, steps=7).steps == 7
    assert TrainConfig.from_dict(stage3.to_dict()) == stage3


# Task mixture

def test_task_sampler_follows_the_weights():
    sampler = TaskSampler(DEFAULT_TASK_WEIGHTS, seed=3)
    draws = 10000
    for _ in range(draws):
        sampler.draw()
    assert sum(sampler.counts.values()) == draws
    for task, weight in DEFAULT_TASK_WEIGHTS.items():
        assert abs(sampler.counts[task] / draws - weight) < 0.02


def test_task_sampler_rejects_bad_weights():
    with pytest.raises(MorphError) as err:
        TaskSampler({"caption": 1.0, "vqa": 1.0})
    assert err.value.code == "UNKNOWN_TASK"
    with pytest.raises(MorphError) as err:
        TaskSampler({"caption": 0.0})
    assert err.value.code == "INVALID_CONFIG"
    sampler = TaskSampler({"edit": 1.0, "qa": 0.0})
    assert {sampler.draw() for _ in range(20)} == {"edit"}


def test_instruction_examples(train_set, rng):
    sample = train_set.samples[0]
    caption = caption_example(sample)
    assert caption.answer_text == encode_text(sample.caption)
    assert not caption.answer_is_image

    identity = edit_example(sample, identity=True)
    assert identity.meta["instruction"] == IDENTITY_INSTRUCTION
    assert np.array_equal(identity.answer_image, sample.image)

    qa = qa_example(sample, sample, np.random.default_rng(1))
    expected = "yes" if qa.meta["question"] == QA_SAME else "neither"
    assert qa.meta["answer"] == expected
    assert [kind for kind, _ in qa.prompt].count("image") == 2

    for task in TASKS:
        assert build_example(task, train_set.samples, 3, rng).task == task
    with pytest.raises(MorphError) as err:
        build_example("vqa", train_set.samples, 0, rng)
    assert err.value.code == "UNKNOWN_TASK"


# Loss tags and detachment audit

def test_loss_terms_flag_coupling():
    value = torch.tensor(1.0)
    terms = [
        LossTerm("caption", value, {"M", "Y"}),
        LossTerm("recon", value, {"M_hat", "X"}),
        LossTerm("tie", value, {"M", "M_hat"}),
    ]
    assert coupled_terms(terms) == ["tie"]
    with pytest.raises(MorphError) as err:
        LossTerm("bad", value, {"M", "Z"})
    assert err.value.code == "INVALID_CONFIG"


def test_audit_detachment_accepts_disjoint_graphs():
    decoder = nn.Linear(4, 2)
    x = torch.randn(3, 4, requires_grad=True)
    caption_loss = (x * 2.0).sum()
    assert id(x) in graph_leaves(caption_loss)
    assert audit_detachment(caption_loss, decoder) == {"structural": True, "numeric": True}


def test_audit_detachment_catches_decoder_gradients():
    decoder = nn.Linear(4, 2)
    x = torch.randn(3, 4)
    leaked = decoder(x).pow(2).sum()
    result = audit_detachment(leaked, decoder)
    assert result == {"structural": False, "numeric": False}

    # detached condition: decoder output only through a constant
    detached = decoder(x).detach().sum() + (x.requires_grad_(True) ** 2).sum()
    assert audit_detachment(detached, decoder) == {"structural": True, "numeric": True}


# Stage loops

def _state(module: nn.Module):
    return {k: v.clone() for k, v in module.state_dict().items()}


def test_stage1_trains_encoder_and_llm_only(make_pipeline, micro_stage, train_set):
    pipeline = make_pipeline("morph")
    decoder_before = _state(pipeline.decoder)
    llm_before = _state(pipeline.llm)

    log = StageTrainer(pipeline, micro_stage(1), train_set, progress=False).run()
    assert len(log) == 2
    assert all(np.isfinite(r["losses"]["total"]) for r in log.records)
    assert all(sum(r["counts"].values()) == 4 for r in log.records)
    assert pipeline.stage == 1 and bool(pipeline.encoder.trained)

    for key, value in _state(pipeline.decoder).items():
        assert torch.equal(value, decoder_before[key])
    assert any(not torch.equal(v, llm_before[k]) for k, v in _state(pipeline.llm).items())


@pytest.mark.parametrize("variant", ["morph", "abstr-abstr-vq", "wo-deconfound"])
def test_stage2_audit_passes_every_step(make_pipeline, micro_stage, train_set, variant):
    pipeline = make_pipeline(variant)
    log = StageTrainer(pipeline, micro_stage(2, steps=10), train_set, progress=False).run()
    assert len(log) == 10
    for record in log.records:
        audit = record["audit"]
        assert audit["structural"] and audit["numeric"]
        assert {"caption", "recon"} <= set(record["losses"])
        if variant == "abstr-abstr-vq":
            assert audit["coupled"] == ["tie"]
        else:
            assert audit["coupled"] == []
    assert pipeline.stage == 2


def test_stage2_audits_every_logged_step(make_pipeline, micro_stage, train_set):
    pipeline = make_pipeline("morph")
    log = StageTrainer(pipeline, micro_stage(2, steps=5, log_every=2), train_set, progress=False).run()
    assert [r["step"] for r in log.records] == [0, 2, 4]
    assert all("audit" in r for r in log.records)


def test_stage2_alternate_mix_splits_the_losses(make_pipeline, micro_stage, train_set):
    pipeline = make_pipeline("morph")
    log = StageTrainer(pipeline, micro_stage(2, stage2_mix="alternate"), train_set, progress=False).run()
    first, second = log.records
    assert "caption" in first["losses"] and "recon" not in first["losses"]
    assert "recon" in second["losses"] and "caption" not in second["losses"]


@pytest.mark.parametrize("variant", ["detail-detail", "wo-decoder", "continuous"])
def test_stage2_runs_for_decoderless_and_continuous_variants(make_pipeline, micro_stage, train_set, variant):
    pipeline = make_pipeline(variant)
    log = StageTrainer(pipeline, micro_stage(2), train_set, progress=False).run()
    assert all(np.isfinite(r["losses"]["total"]) for r in log.records)
    assert ("audit" in log.records[0]) == pipeline.uses_decoder


def test_stage3_logs_task_counts(make_pipeline, micro_stage, train_set):
    pipeline = make_pipeline("morph")
    log = StageTrainer(pipeline, micro_stage(3, steps=4), train_set, progress=False).run()
    tasks = [next(iter(r["counts"])) for r in log.records]
    assert len(tasks) == 4 and set(tasks) <= set(TASKS)
    assert all(sum(r["counts"].values()) == 1 for r in log.records)
    assert pipeline.stage == 3


def test_stage3_edit_only_mixture(make_pipeline, micro_stage, train_set):
    pipeline = make_pipeline("morph")
    config = micro_stage(3, task_weights={"edit": 1.0})
    log = StageTrainer(pipeline, config, train_set, progress=False).run()
    for record in log.records:
        assert record["counts"] == {"edit": 1}
        assert "edit_recon" in record["losses"]


# Logs

def test_training_log_mirrors_records_to_jsonl(tmp_path):
    path = tmp_path / "log.jsonl"
    log = TrainingLog(path)
    for step, value in enumerate([1.0, 2.0, 3.0]):
        log.record(step, 1, {"total": value}, lr=0.1, counts={"MY": 1})
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert [line["step"] for line in lines] == [0, 1, 2]
    assert set(lines[0]) == {"step", "stage", "losses", "lr", "rng_state_hash", "counts"}
    assert log.losses() == [1.0, 2.0, 3.0]
    assert log.smoothed(window=2) == [1.0, 1.5, 2.5]


def test_train_stages_writes_one_log_per_stage(make_pipeline, micro_stage, train_set, tmp_path):
    pipeline = make_pipeline("morph")
    train_stages(pipeline, [micro_stage(1), micro_stage(2)], train_set, log_dir=tmp_path, progress=False)
    for stage in (1, 2):
        path = tmp_path / f"morph_stage{stage}.jsonl"
        assert len(path.read_text(encoding="utf-8").splitlines()) == 2
    assert pipeline.stage == 2


def test_stage1_losses_are_reproducible(make_pipeline, micro_stage, train_set):
    runs = []
    for _ in range(2):
        pipeline = make_pipeline("morph")
        log = StageTrainer(pipeline, micro_stage(1, steps=5), train_set, progress=False).run()
        runs.append([(r["losses"], r["rng_state_hash"]) for r in log.records])
    assert runs[0] == runs[1]


def test_stage_trainer_keeps_a_passed_empty_log(make_pipeline, micro_stage, train_set, tmp_path):
    log = TrainingLog(tmp_path / "stage1.jsonl")
    assert len(log) == 0
    trainer = StageTrainer(make_pipeline("morph"), micro_stage(1), train_set, log=log, progress=False)
    assert trainer.log is log
    trainer.run()
    assert len(log) == 2
    assert len((tmp_path / "stage1.jsonl").read_text(encoding="utf-8").splitlines()) == 2


def test_stage1_trajectory_is_bitwise_reproducible_for_200_steps(make_pipeline, micro_stage, train_set):
    runs, states = [], []
    for _ in range(2):
        pipeline = make_pipeline("morph")
        log = StageTrainer(pipeline, micro_stage(1, steps=200, warmup=10), train_set, progress=False).run()
        runs.append([(r["losses"], r["lr"], r["rng_state_hash"]) for r in log.records])
        states.append(_state(pipeline.llm))
    assert len(runs[0]) == 200
    assert runs[0] == runs[1]
    for key, value in states[0].items():
        assert torch.equal(value, states[1][key])
