"""
I/O Utilities Module
Atomic writes, PNG and JSONL helpers, seeding and version strings
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import subprocess
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Union

import cv2
import numpy as np
import torch

from .errors import MorphError

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, payload: bytes):
    """Write to a temp file in the target directory, then rename into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path: PathLike, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: PathLike, payload: Any):
    atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise MorphError("MISSING_INPUT", f"file not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_png(path: PathLike, image: np.ndarray):
    """Write an H x W x 3 uint8 RGB image as an 8-bit PNG"""
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise MorphError("SHAPE_MISMATCH", f"expected HxWx3 uint8 image, got {image.shape} {image.dtype}")
    # OpenCV stores BGR
    ok, buffer = cv2.imencode(".png", cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
    if not ok:
        raise MorphError("WRITE_FAILED", f"could not encode PNG for {path}")
    atomic_write_bytes(path, buffer.tobytes())


def read_png(path: PathLike) -> np.ndarray:
    """Read an 8-bit PNG as an H x W x 3 uint8 RGB image"""
    path = Path(path)
    if not path.exists():
        raise MorphError("MISSING_INPUT", f"image not found: {path}")
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise MorphError("MISSING_INPUT", f"could not decode image: {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]):
    lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def append_jsonl(path: PathLike, record: Dict[str, Any]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise MorphError("MISSING_INPUT", f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def seed_everything(seed: int):
    """Fix python, numpy and torch RNGs; force deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def rng_state_hash() -> str:
    """Short hash of the torch CPU RNG state, logged per step"""
    state = torch.get_rng_state().numpy().tobytes()
    return hashlib.sha256(state).hexdigest()[:16]


def configure_threads():
    """Honour MORPHTOK_NUM_THREADS from the environment"""
    threads = os.getenv("MORPHTOK_NUM_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))


def version_string() -> str:
    """git-describe style version, falling back to the package version"""
    from .. import __version__

    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=str(Path(__file__).resolve().parent),
            capture_output=True,
            text=True,
            timeout=5,
        )
        if result.returncode == 0 and result.stdout.strip():
            return f"{__version__}+{result.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__
