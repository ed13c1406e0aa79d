"""
Visual Decoder Package
"""

from .decoder import VisualDecoder
from .decoder_config import DecoderConfig

__all__ = ["VisualDecoder", "DecoderConfig"]
