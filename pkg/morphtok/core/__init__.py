"""
Core modules for Morphtok
"""

from .blocks import TransformerBlock, TransformerStack
from .pipeline import MorphPipeline, PipelineConfig, VisualBatch, load_codec, require_stage, save_codec
from .inference_manager import GenerationRecord, InferenceManager, write_generation

__all__ = [
    "TransformerBlock",
    "TransformerStack",
    "MorphPipeline",
    "PipelineConfig",
    "VisualBatch",
    "load_codec",
    "require_stage",
    "save_codec",
    "GenerationRecord",
    "InferenceManager",
    "write_generation",
]
