"""
Checkpoint Storage Module
Directory container: manifest.json (tensor name -> shape, dtype, blob, file),
one raw little-endian blob per tensor, and metadata.json. Float32 weights are
<f4 blobs; float64, integer and bool buffers keep their exact encoding
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import torch

from .errors import MorphError

MANIFEST_NAME = "manifest.json"
METADATA_NAME = "metadata.json"
BLOB_DTYPE = np.dtype("<f4")

_EXACT_BLOBS = {
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
    "int32": np.dtype("<i4"),
    "bool": np.dtype("|b1"),
}

_TORCH_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "int32": torch.int32,
    "bool": torch.bool,
}


def _dtype_name(tensor: torch.Tensor) -> str:
    return str(tensor.dtype).replace("torch.", "")


def _blob_dtype(dtype_name: str) -> np.dtype:
    return _EXACT_BLOBS.get(dtype_name, BLOB_DTYPE)


def _dump(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class CheckpointStore:
    """Reads and writes one checkpoint directory"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def exists(self) -> bool:
        return (self.root / MANIFEST_NAME).exists()

    def save(self, tensors: Dict[str, torch.Tensor], metadata: Dict[str, Any], quiet: bool = False):
        """Write all tensors and metadata; the directory appears atomically"""
        self.root.parent.mkdir(parents=True, exist_ok=True)
        tmp_dir = Path(tempfile.mkdtemp(prefix=f".{self.root.name}.", dir=str(self.root.parent)))
        try:
            manifest = {}
            for name in sorted(tensors):
                tensor = tensors[name].detach().cpu()
                file_name = f"{name}.bin"
                dtype_name = _dtype_name(tensor)
                blob_dtype = _blob_dtype(dtype_name)
                if dtype_name in _EXACT_BLOBS:
                    blob = tensor.numpy().astype(blob_dtype)
                else:
                    blob = tensor.to(torch.float64).numpy().astype(blob_dtype)
                (tmp_dir / file_name).write_bytes(blob.tobytes())
                manifest[name] = {
                    "shape": list(tensor.shape),
                    "dtype": dtype_name,
                    "blob": blob_dtype.str,
                    "file": file_name,
                }
            (tmp_dir / MANIFEST_NAME).write_text(_dump(manifest), encoding="utf-8")
            (tmp_dir / METADATA_NAME).write_text(_dump(metadata), encoding="utf-8")

            if self.root.exists():
                backup = self.root.with_name(f".{self.root.name}.old")
                if backup.exists():
                    shutil.rmtree(backup)
                os.replace(self.root, backup)
                os.replace(tmp_dir, self.root)
                shutil.rmtree(backup)
            else:
                os.replace(tmp_dir, self.root)
        except BaseException:
            shutil.rmtree(tmp_dir, ignore_errors=True)
            raise
        if not quiet:
            print(f"💾 Checkpoint saved to {self.root}")

    def load(self) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
        """Load all tensors (cast back to their recorded dtype) and metadata"""
        if not self.exists():
            raise MorphError("MISSING_CHECKPOINT", f"no checkpoint at {self.root}")
        manifest = json.loads((self.root / MANIFEST_NAME).read_text(encoding="utf-8"))
        metadata = self.load_metadata()

        tensors: Dict[str, torch.Tensor] = {}
        for name, entry in manifest.items():
            blob_dtype = np.dtype(entry.get("blob", BLOB_DTYPE.str))
            raw = np.frombuffer((self.root / entry["file"]).read_bytes(), dtype=blob_dtype)
            shape = tuple(entry["shape"])
            if raw.size != int(np.prod(shape, dtype=np.int64)):
                raise MorphError("SHAPE_MISMATCH", f"blob size mismatch for {name}")
            dtype = _TORCH_DTYPES.get(entry["dtype"], torch.float32)
            tensors[name] = torch.from_numpy(raw.copy().reshape(shape)).to(dtype)
        return tensors, metadata

    def load_metadata(self) -> Dict[str, Any]:
        path = self.root / METADATA_NAME
        if not path.exists():
            raise MorphError("MISSING_CHECKPOINT", f"no checkpoint at {self.root}")
        return json.loads(path.read_text(encoding="utf-8"))
