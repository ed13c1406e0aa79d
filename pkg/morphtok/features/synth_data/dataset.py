"""
Dataset Module
Seeded scene sampling, split assignment by scene identity, and
line-delimited JSON + PNG storage of (image, caption, edit) records
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from tqdm import tqdm

from ...utils.errors import MorphError
from ...utils.io_utils import read_jsonl, read_png, write_jsonl, write_png
from .edits import EditPair, make_edit
from .grammar import caption
from .render import render
from .scene import COLORS, GRID_SIZE, MAX_OBJECTS, SHAPES, Scene, SceneObject

SPLITS = ("train", "val", "test")
_SPLIT_INDEX = {name: i for i, name in enumerate(SPLITS)}
# Percent of scene-identity hash buckets per split
_SPLIT_BOUNDS = {"train": (0, 80), "val": (80, 90), "test": (90, 100)}


@dataclass
class Sample:
    """One (scene, image, caption) record with its optional edit"""

    scene: Scene
    image: np.ndarray
    caption: str
    edit: Optional[EditPair] = None
    target_image: Optional[np.ndarray] = None


@dataclass
class SynthDataset:
    split: str
    seed: int
    samples: List[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def edits(self) -> List[EditPair]:
        return [s.edit for s in self.samples if s.edit is not None]

    def scenes(self) -> List[Scene]:
        return [s.scene for s in self.samples]

    def describe(self) -> Dict[str, Any]:
        """Identity of the training data as it enters a budget comparison"""
        return {"split": self.split, "seed": self.seed, "n": len(self.samples)}


def split_of(scene: Scene) -> str:
    """Deterministic split of a scene, decided by its identity alone"""
    bucket = int(hashlib.sha256(scene.key().encode("utf-8")).hexdigest(), 16) % 100
    for name, (low, high) in _SPLIT_BOUNDS.items():
        if low <= bucket < high:
            return name
    return "train"


def random_scene(rng: np.random.Generator, min_objects: int = 1, max_objects: int = MAX_OBJECTS) -> Scene:
    count = int(rng.integers(min_objects, max_objects + 1))
    cells = rng.choice(GRID_SIZE * GRID_SIZE, size=count, replace=False)
    objects = []
    for cell in cells:
        objects.append(SceneObject(
            row=int(cell) // GRID_SIZE,
            col=int(cell) % GRID_SIZE,
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            color=COLORS[int(rng.integers(len(COLORS)))],
        ))
    return Scene(tuple(objects))


def all_one_object_scenes() -> List[Scene]:
    return [
        Scene((SceneObject(row=r, col=c, shape=s, color=k),))
        for s in SHAPES for k in COLORS for r in range(GRID_SIZE) for c in range(GRID_SIZE)
    ]


def gen_dataset(n: int, seed: int, split: str = "train", with_edits: bool = True,
                progress: bool = False) -> SynthDataset:
    """
    Generate n distinct scenes belonging to split, each with its caption,
    rendered image and (optionally) one seeded primitive edit
    """
    if split not in _SPLIT_INDEX:
        raise MorphError("UNKNOWN_SPLIT", f"split must be one of {SPLITS}")
    rng = np.random.default_rng([seed, _SPLIT_INDEX[split]])
    dataset = SynthDataset(split=split, seed=seed)
    seen = set()

    bar = tqdm(total=n, desc=f"    {split}", unit="scene", ncols=70, disable=not progress)
    attempts = 0
    while len(dataset.samples) < n:
        attempts += 1
        if attempts > 200 * max(n, 1) + 10000:
            raise MorphError("DATASET_EXHAUSTED", f"could not draw {n} distinct {split} scenes")
        scene = random_scene(rng)
        if split_of(scene) != split or scene.key() in seen:
            continue
        seen.add(scene.key())
        edit_seed = int(rng.integers(2 ** 31))
        edit = make_edit(scene, edit_seed) if with_edits else None
        dataset.samples.append(Sample(
            scene=scene,
            image=render(scene),
            caption=caption(scene),
            edit=edit,
            target_image=render(edit.target) if edit is not None else None,
        ))
        bar.update(1)
    bar.close()
    return dataset


def write_dataset(dataset: SynthDataset, out_dir: Union[str, Path]) -> Path:
    """Write <split>.jsonl plus PNGs under images/; returns the jsonl path"""
    out_dir = Path(out_dir)
    records: List[Dict[str, Any]] = []
    for i, sample in enumerate(dataset.samples):
        image_rel = f"images/{dataset.split}_{i:06d}.png"
        write_png(out_dir / image_rel, sample.image)
        record: Dict[str, Any] = {
            "scene": sample.scene.to_dict(),
            "caption": sample.caption,
            "image_path": image_rel,
        }
        if sample.edit is not None:
            target_rel = f"images/{dataset.split}_{i:06d}_target.png"
            write_png(out_dir / target_rel, sample.target_image)
            record["edit"] = {
                "instruction": sample.edit.instruction,
                "kind": sample.edit.kind,
                "target_scene": sample.edit.target.to_dict(),
                "target_image_path": target_rel,
            }
        records.append(record)
    path = out_dir / f"{dataset.split}.jsonl"
    write_jsonl(path, records)
    print(f"✅ Wrote {len(records)} {dataset.split} records to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> SynthDataset:
    """Read a <split>.jsonl written by write_dataset"""
    path = Path(path)
    dataset = SynthDataset(split=path.stem, seed=-1)
    for record in read_jsonl(path):
        scene = Scene.from_dict(record["scene"])
        edit, target_image = None, None
        if "edit" in record:
            info = record["edit"]
            edit = EditPair(
                source=scene,
                instruction=info["instruction"],
                target=Scene.from_dict(info["target_scene"]),
                kind=info.get("kind", ""),
            )
            target_image = read_png(path.parent / info["target_image_path"])
        dataset.samples.append(Sample(
            scene=scene,
            image=read_png(path.parent / record["image_path"]),
            caption=record["caption"],
            edit=edit,
            target_image=target_image,
        ))
    return dataset
