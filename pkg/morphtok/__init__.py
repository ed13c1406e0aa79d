"""
Morphtok - Morph-Token Multimodal Pipeline
Abstract pre-MLLM morph tokens for comprehension, visually complete post-MLLM
morph tokens for generation, on a synthetic shape world
"""

__version__ = "0.1.0"
__author__ = "Morphtok Team"

from .core.pipeline import MorphPipeline, PipelineConfig
from .core.inference_manager import InferenceManager

__all__ = [
    "MorphPipeline",
    "PipelineConfig",
    "InferenceManager",
]
