"""
MLLM Package
Joint text + morph vocabulary, sequence formats, the decoder-only core and LoRA adapters
"""

from .lora import LoRALinear, apply_lora, lora_parameters, merge_lora
from .mllm_config import LoRAConfig, MLLMConfig
from .model import LLMOutput, MorphLLM, cross_entropy_masked, normalize_length
from .vocab import (
    FORMATS,
    SPECIAL_TOKENS,
    MixedSequence,
    Modality,
    Segment,
    Vocabulary,
    collate,
    pack,
    pack_instruction,
    unpack,
)

__all__ = [
    "LoRALinear",
    "apply_lora",
    "lora_parameters",
    "merge_lora",
    "LoRAConfig",
    "MLLMConfig",
    "LLMOutput",
    "MorphLLM",
    "cross_entropy_masked",
    "normalize_length",
    "FORMATS",
    "SPECIAL_TOKENS",
    "MixedSequence",
    "Modality",
    "Segment",
    "Vocabulary",
    "collate",
    "pack",
    "pack_instruction",
    "unpack",
]
