#!/usr/bin/env python3
"""
Morphtok Command Line
Data generation, codec / stage training, evaluation and one-shot inference

Usage:
    python morph_cli.py gen-data --n 20000 --seed 0 --out data/
    python morph_cli.py train-codec --data data/train.jsonl --out runs/codec
    python morph_cli.py train --stage 1 --data data/train.jsonl --codec runs/codec/codec --out runs/s1
    python morph_cli.py train --stage 2 --resume runs/s1/checkpoint --data data/train.jsonl --out runs/s2
    python morph_cli.py eval --checkpoint runs/s3/checkpoint --suite caption,recon,edit --data data/test.jsonl --out runs/eval
    python morph_cli.py caption --checkpoint runs/s3/checkpoint --image scene.png
    python morph_cli.py t2i --checkpoint runs/s3/checkpoint --text "a red circle at top left" --out runs/t2i
    python morph_cli.py edit --checkpoint runs/s3/checkpoint --image scene.png --instruction "change the circle to blue" --out runs/edit

Every command that writes files echoes its run config, version and seed into --out first.
Config keys can be overridden per run with --set section.key=value (JSON values).
Failures print one line `error=<CODE> message=<text>` on stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv()

import numpy as np
from pydantic import BaseModel, Field

from morphtok.core.inference_manager import InferenceManager, write_generation
from morphtok.core.pipeline import MorphPipeline, PipelineConfig, load_codec, require_stage, save_codec
from morphtok.features.evaluation import EvalConfig, ablation_grid, conflict_sweep, evaluate, summarize_sweep
from morphtok.features.mllm.mllm_config import MLLMConfig
from morphtok.features.morph_encoder.encoder_config import EncoderConfig
from morphtok.features.pixel_codec.codec_config import CodecConfig
from morphtok.features.pixel_codec.trainer import roundtrip_l1, train_codec
from morphtok.features.synth_data.dataset import gen_dataset, load_dataset, write_dataset
from morphtok.features.training.schedule import optimizer_echo
from morphtok.features.training.stages import train_stages
from morphtok.features.training.train_config import TrainConfig
from morphtok.features.visual_decoder.decoder_config import DecoderConfig
from morphtok.utils.config_store import CONFIG_PATH, ConfigStore, parse_override
from morphtok.utils.errors import MorphError
from morphtok.utils.io_utils import configure_threads, read_png, seed_everything, version_string, write_json, write_jsonl

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "pipeline": {"variant": "morph"},
    "codec": CodecConfig().to_dict(),
    "encoder": EncoderConfig().to_dict(),
    "mllm": MLLMConfig().to_dict(),
    "decoder": DecoderConfig().to_dict(),
    "train": {},
    "stage1": {},
    "stage2": {},
    "stage3": {},
    "eval": EvalConfig().to_dict(),
}


class RunConfig(BaseModel):
    """Echo written into --out before a command does any work"""

    command: str
    config_path: str
    seed: int
    out: Optional[str] = None
    checkpoints: Dict[str, Optional[str]] = Field(default_factory=dict)
    arguments: Dict[str, Any] = Field(default_factory=dict)
    version: str = ""
    config_hash: str = ""
    config: Dict[str, Any] = Field(default_factory=dict)


# Helpers

def _need(path: Optional[str], what: str, code: str = "MISSING_INPUT") -> Path:
    if not path:
        raise MorphError(code, f"--{what} is required")
    resolved = Path(path)
    if not resolved.exists():
        raise MorphError(code, f"{what} not found: {resolved}")
    return resolved


def _progress(args) -> bool:
    return not args.quiet and os.getenv("MORPHTOK_PROGRESS", "1") != "0"


def load_store(args) -> ConfigStore:
    store = ConfigStore(Path(args.config) if args.config else CONFIG_PATH, defaults=DEFAULTS)
    store.apply_overrides(parse_override(text) for text in args.set or [])
    if getattr(args, "variant", None):
        store.set_value("pipeline", "variant", args.variant)
    return store


def pipeline_config(store: ConfigStore) -> PipelineConfig:
    return PipelineConfig.from_dict({
        "variant": store.section("pipeline").get("variant", "morph"),
        "codec": store.section("codec"),
        "encoder": store.section("encoder"),
        "mllm": store.section("mllm"),
        "decoder": store.section("decoder"),
    })


def stage_config(store: ConfigStore, stage: int, seed: int) -> TrainConfig:
    overrides = {**store.section("train"), **store.section(f"stage{stage}")}
    overrides.pop("stage", None)
    overrides.setdefault("seed", seed)
    return TrainConfig.for_stage(stage, **overrides)


def echo_run(args, store: ConfigStore, checkpoints: Optional[Dict[str, Optional[str]]] = None):
    """Write run_config.json into --out before doing any work"""
    arguments = {k: v for k, v in vars(args).items() if k != "func"}
    run = RunConfig(
        command=args.command,
        config_path=str(store.path),
        seed=args.seed,
        out=str(args.out) if args.out else None,
        checkpoints=checkpoints or {},
        arguments=arguments,
        version=version_string(),
        config_hash=store.config_hash(),
        config=store.snapshot(),
    )
    if args.out:
        out = Path(args.out)
        folder = out.parent if out.suffix == ".json" else out
        write_json(folder / "run_config.json", run.model_dump())


# Commands

def cmd_gen_data(args, store: ConfigStore):
    echo_run(args, store)
    dataset = gen_dataset(args.n, args.seed, split=args.split, with_edits=not args.no_edits, progress=_progress(args))
    write_dataset(dataset, args.out)


def cmd_train_codec(args, store: ConfigStore):
    data = _need(args.data, "data")
    echo_run(args, store)
    config = CodecConfig.from_dict({**store.section("codec"), "seed": args.seed})
    dataset = load_dataset(data)
    images = [s.image for s in dataset.samples]
    codec, log = train_codec(np.stack(images), config, progress=_progress(args))
    out = Path(args.out)
    write_jsonl(out / "codec_log.jsonl", log)
    l1 = roundtrip_l1(codec, np.stack(images[:256]))
    save_codec(codec, out / "codec", extra={"seed": args.seed, "roundtrip_l1": l1})
    print(f"✅ Codec round-trip L1 {l1:.4f}")


def cmd_train(args, store: ConfigStore):
    data = _need(args.data, "data")
    stage = args.stage
    echo_run(args, store, {"codec": args.codec, "resume": args.resume})
    config = stage_config(store, stage, args.seed)

    if args.resume:
        pipeline = MorphPipeline.load(_need(args.resume, "resume", "MISSING_CHECKPOINT"))
        require_stage(pipeline, stage, args.from_scratch)
    else:
        require_stage(None, stage, args.from_scratch)
        codec = load_codec(_need(args.codec, "codec", "MISSING_CHECKPOINT"))
        seed_everything(config.seed)
        pipeline = MorphPipeline(codec, pipeline_config(store))

    dataset = load_dataset(data)
    out = Path(args.out)
    train_stages(pipeline, [config], dataset, log_dir=out, progress=_progress(args))
    pipeline.save(out / "checkpoint", extra={"optimizer": optimizer_echo(config), "train": config.to_dict()})


def cmd_eval(args, store: ConfigStore):
    checkpoint = _need(args.checkpoint, "checkpoint", "MISSING_CHECKPOINT")
    data = _need(args.data, "data")
    echo_run(args, store, {"checkpoint": args.checkpoint, "baseline": args.baseline})
    eval_config = EvalConfig.from_dict({**store.section("eval"), "seed": args.seed})
    suites = [s.strip() for s in args.suite.split(",") if s.strip()]

    pipeline = MorphPipeline.load(checkpoint)
    test = load_dataset(data).samples
    train = load_dataset(args.train_data).samples if args.train_data else None
    baseline = MorphPipeline.load(_need(args.baseline, "baseline", "MISSING_CHECKPOINT")) if args.baseline else None

    direct = [s for s in suites if s not in ("ablation", "sweep")]
    report = evaluate(pipeline, test, direct, eval_config, train=train, baseline=baseline, progress=_progress(args))
    report.checkpoint = str(checkpoint)

    if "ablation" in suites or "sweep" in suites:
        if not args.train_data:
            raise MorphError("MISSING_INPUT", "--train-data is required for the ablation and sweep suites")
        dataset = load_dataset(args.train_data)
        base = pipeline_config(store)
        if "ablation" in suites:
            configs = [stage_config(store, s, args.seed) for s in (1, 2, 3)]
            grid = ablation_grid(pipeline.codec, base, dataset, configs, test, eval_config)
            report.ablations = grid.ablations
            report.claims.update(grid.claims)
            report.warnings.extend(grid.warnings)
        if "sweep" in suites:
            report.sweep = conflict_sweep(pipeline.codec, base, dataset, test, eval_config,
                                          train=stage_config(store, 1, args.seed), progress=_progress(args))
            report.sweep_summary, claims = summarize_sweep(report.sweep, eval_config.sweep_tolerance)
            report.claims.update(claims)

    out = Path(args.out)
    report_path = out if out.suffix == ".json" else out / "report.json"
    report.save(report_path)
    print(f"💾 Report written to {report_path}")


def cmd_caption(args, store: ConfigStore):
    checkpoint = _need(args.checkpoint, "checkpoint", "MISSING_CHECKPOINT")
    image = read_png(_need(args.image, "image"))
    echo_run(args, store, {"checkpoint": args.checkpoint})
    manager = InferenceManager(MorphPipeline.load(checkpoint), seed=args.seed)
    print(manager.caption(image))


def cmd_t2i(args, store: ConfigStore):
    checkpoint = _need(args.checkpoint, "checkpoint", "MISSING_CHECKPOINT")
    echo_run(args, store, {"checkpoint": args.checkpoint})
    manager = InferenceManager(MorphPipeline.load(checkpoint), seed=args.seed)
    image, record = manager.text_to_image(args.text)
    write_generation(args.out, "t2i", image, record)


def cmd_edit(args, store: ConfigStore):
    checkpoint = _need(args.checkpoint, "checkpoint", "MISSING_CHECKPOINT")
    source = read_png(_need(args.image, "image"))
    echo_run(args, store, {"checkpoint": args.checkpoint})
    manager = InferenceManager(MorphPipeline.load(checkpoint), seed=args.seed)
    image, record = manager.edit(source, args.instruction)
    write_generation(args.out, "edit", image, record)


# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Morph-token multimodal pipeline on a synthetic shape world",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("Usage:")[1] if __doc__ else None,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help=f"JSON config file (default: {CONFIG_PATH.name})")
    common.add_argument("--seed", type=int, default=0, help="Run seed (default: 0)")
    common.add_argument("--quiet", action="store_true", help="Hide progress bars")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config key, e.g. --set stage1.steps=500 (repeatable)")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-data", parents=[common], help="Generate a synthetic dataset split")
    p.add_argument("--n", type=int, required=True, help="Number of distinct scenes")
    p.add_argument("--split", default="train", choices=["train", "val", "test"])
    p.add_argument("--no-edits", action="store_true", help="Skip edit pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = commands.add_parser("train-codec", parents=[common], help="Train the pixel codec")
    p.add_argument("--data", required=True, help="Dataset .jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_codec)

    p = commands.add_parser("train", parents=[common], help="Run one training stage")
    p.add_argument("--stage", type=int, required=True, choices=[1, 2, 3])
    p.add_argument("--data", required=True, help="Dataset .jsonl")
    p.add_argument("--codec", default=None, help="Codec checkpoint (fresh runs)")
    p.add_argument("--resume", default=None, help="Pipeline checkpoint to continue from")
    p.add_argument("--from-scratch", action="store_true", help="Skip the previous-stage checkpoint requirement")
    p.add_argument("--variant", default=None, help="Override the configured variant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", default="caption,recon,edit",
                   help="Comma-separated: caption,recon,edit,t2i,probe,retrieval,ablation,sweep")
    p.add_argument("--data", required=True, help="Held-out dataset .jsonl")
    p.add_argument("--train-data", default=None, help="Training .jsonl (retrieval, ablation, sweep)")
    p.add_argument("--baseline", default=None, help="Earlier checkpoint for the pre/post perplexity probe")
    p.add_argument("--out", required=True, help="Report path or directory")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("caption", parents=[common], help="Caption one PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_caption)

    p = commands.add_parser("t2i", parents=[common], help="Generate an image from text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_t2i)

    p = commands.add_parser("edit", parents=[common], help="Edit one PNG with an instruction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_threads()
    try:
        args.func(args, load_store(args))
    except MorphError as e:
        print(e.one_line(), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
