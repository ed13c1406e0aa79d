"""
Render Module
Pure rasterizer for scenes and its nearest-template inverse (the image oracle)
"""

from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from ...utils.errors import MorphError
from .scene import COLORS, GRID_SIZE, SHAPES, Scene, SceneObject

IMAGE_SIZE = 32
CELL_PX = IMAGE_SIZE // GRID_SIZE  # 8
MARGIN = 2
SHAPE_PX = CELL_PX - 2 * MARGIN  # 4

BACKGROUND = np.array([24, 24, 24], dtype=np.uint8)
PALETTE: Dict[str, np.ndarray] = {
    "red": np.array([220, 40, 40], dtype=np.uint8),
    "green": np.array([40, 200, 60], dtype=np.uint8),
    "blue": np.array([40, 80, 220], dtype=np.uint8),
    "yellow": np.array([230, 210, 40], dtype=np.uint8),
}

# 4x4 footprints drawn inside the cell margin
_MASKS: Dict[str, np.ndarray] = {
    "circle": np.array(
        [[0, 1, 1, 0],
         [1, 1, 1, 1],
         [1, 1, 1, 1],
         [0, 1, 1, 0]], dtype=bool),
    "square": np.ones((SHAPE_PX, SHAPE_PX), dtype=bool),
    "triangle": np.array(
        [[0, 1, 1, 0],
         [0, 1, 1, 0],
         [1, 1, 1, 1],
         [1, 1, 1, 1]], dtype=bool),
}

DEFAULT_PARSE_THRESHOLD = 40.0


def _cell_tile(shape: Optional[str], color: Optional[str]) -> np.ndarray:
    tile = np.tile(BACKGROUND, (CELL_PX, CELL_PX, 1))
    if shape is not None:
        inner = tile[MARGIN:MARGIN + SHAPE_PX, MARGIN:MARGIN + SHAPE_PX]
        inner[_MASKS[shape]] = PALETTE[color]
    return tile


def _build_templates() -> Tuple[List[Tuple[Optional[str], Optional[str]]], np.ndarray]:
    labels: List[Tuple[Optional[str], Optional[str]]] = [(None, None)]
    tiles = [_cell_tile(None, None)]
    for shape in SHAPES:
        for color in COLORS:
            labels.append((shape, color))
            tiles.append(_cell_tile(shape, color))
    return labels, np.stack(tiles).astype(np.float32)


TEMPLATE_LABELS, TEMPLATES = _build_templates()


def render(scene: Scene) -> np.ndarray:
    """Deterministic H x W x 3 uint8 raster of a scene"""
    image = np.tile(BACKGROUND, (IMAGE_SIZE, IMAGE_SIZE, 1))
    for obj in scene.objects:
        top, left = obj.row * CELL_PX, obj.col * CELL_PX
        image[top:top + CELL_PX, left:left + CELL_PX] = _cell_tile(obj.shape, obj.color)
    return image


def cell_template_distances(image: np.ndarray) -> np.ndarray:
    """Mean absolute distance of every cell to every template: (grid, grid, templates)"""
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise MorphError("SHAPE_MISMATCH", f"expected {IMAGE_SIZE}x{IMAGE_SIZE}x3 image, got {image.shape}")
    cells = image.astype(np.float32).reshape(GRID_SIZE, CELL_PX, GRID_SIZE, CELL_PX, 3).transpose(0, 2, 1, 3, 4)
    diff = np.abs(cells[:, :, None] - TEMPLATES[None, None])
    return diff.mean(axis=(3, 4, 5))


def parse_image(image: np.ndarray, threshold: float = DEFAULT_PARSE_THRESHOLD) -> Scene:
    """
    Per-cell nearest-template classification

    Raises:
        MorphError(UNPARSEABLE) when a cell's best template is farther than threshold
    """
    distances = cell_template_distances(image)
    best = distances.argmin(axis=-1)
    objects = []
    for row in range(GRID_SIZE):
        for col in range(GRID_SIZE):
            index = int(best[row, col])
            if distances[row, col, index] > threshold:
                raise MorphError(
                    "UNPARSEABLE",
                    f"cell ({row}, {col}) is {distances[row, col, index]:.1f} away from every template",
                )
            shape, color = TEMPLATE_LABELS[index]
            if shape is not None:
                objects.append(SceneObject(row=row, col=col, shape=shape, color=color))
    if len(objects) > 3:
        raise MorphError("UNPARSEABLE", f"{len(objects)} objects found, at most 3 allowed")
    return Scene(tuple(objects))


def try_parse_image(image: np.ndarray, threshold: float = DEFAULT_PARSE_THRESHOLD) -> Optional[Scene]:
    """parse_image that returns None instead of raising, used by scoring loops"""
    try:
        return parse_image(image, threshold)
    except MorphError as e:
        if e.code != "UNPARSEABLE":
            raise
        return None
