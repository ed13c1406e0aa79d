"""
Grammar Module
Canonical captions, edit instructions and the closed word list of the synthetic world
"""

from __future__ import annotations

import re
from typing import Dict, List, Optional, Tuple

from ...utils.errors import MorphError
from .scene import COLORS, GRID_SIZE, SHAPES, Cell, Scene, SceneObject

END_OF_TEXT = "."
EMPTY_CAPTION = "nothing"
IDENTITY_INSTRUCTION = "keep the image the same"

_ORDINALS = ("one", "two", "three", "four")
_CORNERS: Dict[Cell, str] = {
    (0, 0): "top left",
    (0, GRID_SIZE - 1): "top right",
    (GRID_SIZE - 1, 0): "bottom left",
    (GRID_SIZE - 1, GRID_SIZE - 1): "bottom right",
}


def _build_cell_names() -> Dict[Cell, str]:
    names = {}
    for row in range(GRID_SIZE):
        for col in range(GRID_SIZE):
            names[(row, col)] = _CORNERS.get((row, col), f"row {_ORDINALS[row]} column {_ORDINALS[col]}")
    return names


CELL_NAMES: Dict[Cell, str] = _build_cell_names()
CELLS_BY_NAME: Dict[str, Cell] = {name: cell for cell, name in CELL_NAMES.items()}

# Closed vocabulary, order fixes the text id range [0, T)
WORDS: Tuple[str, ...] = (
    END_OF_TEXT, "a", "an", "the", "at", "and", "to", EMPTY_CAPTION,
    *COLORS,
    *SHAPES,
    "top", "bottom", "left", "right", "row", "column", *_ORDINALS,
    "change", "move", "add", "remove", "keep", "image", "same",
    "describe", "generate", "based", "on", "description",
    "what", "will", "this", "be", "like", "with", "editing", "instruction",
    "is", "first", "second", "are", "images", "yes", "no",
    "which", "has", "more", "objects", "neither",
)
WORD_TO_ID: Dict[str, int] = {w: i for i, w in enumerate(WORDS)}

_OBJECT_PATTERN = re.compile(rf"^a ({'|'.join(COLORS)}) ({'|'.join(SHAPES)}) at (.+)$")


def cell_name(cell: Cell) -> str:
    return CELL_NAMES[cell]


def parse_cell_name(name: str) -> Cell:
    name = " ".join(name.split())
    if name not in CELLS_BY_NAME:
        raise MorphError("UNPARSEABLE", f"unknown cell name '{name}'")
    return CELLS_BY_NAME[name]


def caption(scene: Scene) -> str:
    """'a <color> <shape> at <cell-name>[ and ...]' in row-major order"""
    if len(scene) == 0:
        return EMPTY_CAPTION
    return " and ".join(f"a {o.color} {o.shape} at {cell_name(o.cell)}" for o in scene.objects)


def parse_caption(text: str) -> Scene:
    """Inverse of caption() over its own grammar"""
    text = " ".join(text.strip().split())
    if text == EMPTY_CAPTION:
        return Scene()
    objects = []
    for part in text.split(" and "):
        match = _OBJECT_PATTERN.match(part)
        if not match:
            raise MorphError("UNPARSEABLE", f"caption fragment '{part}' does not follow the grammar")
        color, shape, where = match.groups()
        row, col = parse_cell_name(where)
        objects.append(SceneObject(row=row, col=col, shape=shape, color=color))
    return Scene(tuple(objects))


# Object references inside instructions

def referent(scene: Scene, obj: SceneObject) -> str:
    """Shortest unambiguous reference: 'circle' or 'circle at top left'"""
    same_shape = [o for o in scene.objects if o.shape == obj.shape]
    if len(same_shape) == 1:
        return obj.shape
    return f"{obj.shape} at {cell_name(obj.cell)}"


def resolve_referent(scene: Scene, shape: str, where: Optional[str]) -> SceneObject:
    candidates = [o for o in scene.objects if o.shape == shape]
    if where is not None:
        cell = parse_cell_name(where)
        candidates = [o for o in candidates if o.cell == cell]
    if len(candidates) != 1:
        raise MorphError("UNPARSEABLE", f"reference to '{shape}' is ambiguous or missing")
    return candidates[0]


# Tokenization over the closed word list

def tokenize(text: str) -> List[str]:
    return text.strip().lower().split()


def encode_text(text: str, terminate: bool = True) -> List[int]:
    """Word ids of text; terminate appends the end-of-text word"""
    ids = []
    for word in tokenize(text):
        if word not in WORD_TO_ID:
            raise MorphError("UNKNOWN_WORD", f"'{word}' is not in the vocabulary")
        ids.append(WORD_TO_ID[word])
    if terminate:
        ids.append(WORD_TO_ID[END_OF_TEXT])
    return ids


def decode_text(ids: List[int]) -> str:
    """Words up to (excluding) the first end-of-text word"""
    words = []
    for i in ids:
        word = WORDS[i]
        if word == END_OF_TEXT:
            break
        words.append(word)
    return " ".join(words)
