"""
Synthetic shape world: scenes, captions, edits and their exact oracles
"""

from .scene import Scene, SceneObject, SHAPES, COLORS, GRID_SIZE
from .grammar import caption, parse_caption, encode_text, decode_text, WORDS
from .render import render, parse_image, try_parse_image, IMAGE_SIZE
from .edits import EditPair, make_edit, apply_instruction
from .dataset import Sample, SynthDataset, gen_dataset, write_dataset, load_dataset, split_of

__all__ = [
    "Scene",
    "SceneObject",
    "SHAPES",
    "COLORS",
    "GRID_SIZE",
    "caption",
    "parse_caption",
    "encode_text",
    "decode_text",
    "WORDS",
    "render",
    "parse_image",
    "try_parse_image",
    "IMAGE_SIZE",
    "EditPair",
    "make_edit",
    "apply_instruction",
    "Sample",
    "SynthDataset",
    "gen_dataset",
    "write_dataset",
    "load_dataset",
    "split_of",
]
