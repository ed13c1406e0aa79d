"""
Edits Module
Four primitive edits (recolor / move / add / remove), their instructions,
and the symbolic editor that applies an instruction to a scene
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from ...utils.errors import MorphError
from .grammar import (
    IDENTITY_INSTRUCTION,
    cell_name,
    parse_cell_name,
    referent,
    resolve_referent,
)
from .scene import COLORS, MAX_OBJECTS, SHAPES, Scene, SceneObject

EDIT_KINDS = ("recolor", "move", "add", "remove")

_SHAPE = "|".join(SHAPES)
_COLOR = "|".join(COLORS)

# Instruction patterns, tried in order
_PATTERNS = {
    "recolor": re.compile(rf"^change the ({_SHAPE})(?: at (.+?))? to ({_COLOR})$"),
    "move": re.compile(rf"^move the ({_SHAPE})(?: at (.+?))? to (.+)$"),
    "add": re.compile(rf"^add a ({_COLOR}) ({_SHAPE}) at (.+)$"),
    "remove": re.compile(rf"^remove the ({_SHAPE})(?: at (.+))?$"),
}


@dataclass(frozen=True)
class EditPair:
    """Source scene, instruction text, and the scene the instruction produces"""

    source: Scene
    instruction: str
    target: Scene
    kind: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source.to_dict(),
            "instruction": self.instruction,
            "target": self.target.to_dict(),
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EditPair":
        return cls(
            source=Scene.from_dict(data["source"]),
            instruction=data["instruction"],
            target=Scene.from_dict(data["target"]),
            kind=data.get("kind", ""),
        )


def available_edits(scene: Scene) -> list:
    kinds = []
    if len(scene) >= 1:
        kinds.append("recolor")
        if scene.free_cells():
            kinds.append("move")
    if len(scene) < MAX_OBJECTS:
        kinds.append("add")
    if len(scene) >= 2:
        kinds.append("remove")
    return kinds


def make_edit(scene: Scene, seed: int) -> EditPair:
    """Draw one primitive edit of scene; seed fixes every choice"""
    rng = np.random.default_rng(seed)
    kinds = available_edits(scene)
    if not kinds:
        raise MorphError("INVALID_SCENE", "no primitive edit applies to this scene")
    kind = kinds[int(rng.integers(len(kinds)))]

    if kind == "add":
        cells = scene.free_cells()
        row, col = cells[int(rng.integers(len(cells)))]
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        color = COLORS[int(rng.integers(len(COLORS)))]
        new = SceneObject(row=row, col=col, shape=shape, color=color)
        instruction = f"add a {color} {shape} at {cell_name(new.cell)}"
        target = scene.add(new)
    else:
        obj = scene.objects[int(rng.integers(len(scene)))]
        ref = referent(scene, obj)
        if kind == "recolor":
            colors = [c for c in COLORS if c != obj.color]
            color = colors[int(rng.integers(len(colors)))]
            instruction = f"change the {ref} to {color}"
            target = scene.replace(obj, SceneObject(row=obj.row, col=obj.col, shape=obj.shape, color=color))
        elif kind == "move":
            cells = scene.free_cells()
            row, col = cells[int(rng.integers(len(cells)))]
            instruction = f"move the {ref} to {cell_name((row, col))}"
            target = scene.replace(obj, SceneObject(row=row, col=col, shape=obj.shape, color=obj.color))
        else:
            instruction = f"remove the {ref}"
            target = scene.replace(obj, None)

    return EditPair(source=scene, instruction=instruction, target=target, kind=kind)


def apply_instruction(scene: Scene, instruction: str) -> Scene:
    """Symbolic editor: the scene an instruction denotes when applied to scene"""
    text = " ".join(instruction.strip().lower().split())
    if text == IDENTITY_INSTRUCTION:
        return scene

    match = _PATTERNS["recolor"].match(text)
    if match:
        shape, where, color = match.groups()
        obj = resolve_referent(scene, shape, where)
        return scene.replace(obj, SceneObject(row=obj.row, col=obj.col, shape=obj.shape, color=color))

    match = _PATTERNS["move"].match(text)
    if match:
        shape, where, destination = match.groups()
        obj = resolve_referent(scene, shape, where)
        row, col = parse_cell_name(destination)
        if scene.at((row, col)) is not None:
            raise MorphError("UNPARSEABLE", f"destination '{destination}' is occupied")
        return scene.replace(obj, SceneObject(row=row, col=col, shape=obj.shape, color=obj.color))

    match = _PATTERNS["add"].match(text)
    if match:
        color, shape, where = match.groups()
        row, col = parse_cell_name(where)
        return scene.add(SceneObject(row=row, col=col, shape=shape, color=color))

    match = _PATTERNS["remove"].match(text)
    if match:
        shape, where = match.groups()
        return scene.replace(resolve_referent(scene, shape, where), None)

    raise MorphError("UNPARSEABLE", f"instruction '{instruction}' does not follow the grammar")
