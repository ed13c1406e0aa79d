"""
Scene Module
Symbolic ground truth for one synthetic image: up to three colored shapes on a 4x4 grid
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

from ...utils.errors import MorphError

SHAPES: Tuple[str, ...] = ("circle", "square", "triangle")
COLORS: Tuple[str, ...] = ("red", "green", "blue", "yellow")
GRID_SIZE = 4
MAX_OBJECTS = 3

Cell = Tuple[int, int]


@dataclass(frozen=True, order=True)
class SceneObject:
    """One shape in one cell"""

    row: int
    col: int
    shape: str
    color: str

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise MorphError("INVALID_SCENE", f"unknown shape '{self.shape}'")
        if self.color not in COLORS:
            raise MorphError("INVALID_SCENE", f"unknown color '{self.color}'")
        if not (0 <= self.row < GRID_SIZE and 0 <= self.col < GRID_SIZE):
            raise MorphError("INVALID_SCENE", f"cell ({self.row}, {self.col}) is off the grid")

    @property
    def cell(self) -> Cell:
        return (self.row, self.col)

    def to_dict(self) -> Dict[str, Any]:
        return {"shape": self.shape, "color": self.color, "cell": [self.row, self.col]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneObject":
        row, col = data["cell"]
        return cls(row=int(row), col=int(col), shape=data["shape"], color=data["color"])


@dataclass(frozen=True)
class Scene:
    """
    Canonical scene: objects kept in row-major cell order so equality is structural
    """

    objects: Tuple[SceneObject, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ordered = tuple(sorted(self.objects, key=lambda o: o.cell))
        object.__setattr__(self, "objects", ordered)
        if len(ordered) > MAX_OBJECTS:
            raise MorphError("INVALID_SCENE", f"at most {MAX_OBJECTS} objects, got {len(ordered)}")
        cells = [o.cell for o in ordered]
        if len(set(cells)) != len(cells):
            raise MorphError("INVALID_SCENE", "two objects share a cell")

    @classmethod
    def of(cls, *objects: Iterable) -> "Scene":
        """Scene.of(("circle", "red", (0, 0)), ...)"""
        built = []
        for shape, color, (row, col) in objects:
            built.append(SceneObject(row=row, col=col, shape=shape, color=color))
        return cls(tuple(built))

    def __len__(self) -> int:
        return len(self.objects)

    def cells(self) -> List[Cell]:
        return [o.cell for o in self.objects]

    def free_cells(self) -> List[Cell]:
        taken = set(self.cells())
        return [(r, c) for r in range(GRID_SIZE) for c in range(GRID_SIZE) if (r, c) not in taken]

    def at(self, cell: Cell) -> Optional[SceneObject]:
        for obj in self.objects:
            if obj.cell == cell:
                return obj
        return None

    def replace(self, old: SceneObject, new: Optional[SceneObject]) -> "Scene":
        kept = [o for o in self.objects if o != old]
        if new is not None:
            kept.append(new)
        return Scene(tuple(kept))

    def add(self, new: SceneObject) -> "Scene":
        return Scene(self.objects + (new,))

    def key(self) -> str:
        """Stable identity string, used for split assignment and set checks"""
        return ";".join(f"{o.row}{o.col}{o.shape[0]}{o.color[0]}" for o in self.objects) or "empty"

    def to_dict(self) -> Dict[str, Any]:
        return {"objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        return cls(tuple(SceneObject.from_dict(o) for o in data.get("objects", [])))
