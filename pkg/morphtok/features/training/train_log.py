"""
Training Log Module
One line-delimited JSON record per step: {step, stage, losses, lr, rng_state_hash, counts}
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ...utils.io_utils import append_jsonl, rng_state_hash


class TrainingLog:
    """In-memory step log, mirrored to a JSONL file when a path is given"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.records: List[Dict[str, Any]] = []

    def record(self, step: int, stage: int, losses: Dict[str, float], lr: float,
               counts: Optional[Dict[str, int]] = None, **extra: Any) -> Dict[str, Any]:
        entry: Dict[str, Any] = {
            "step": step,
            "stage": stage,
            "losses": {k: float(v) for k, v in losses.items()},
            "lr": float(lr),
            "rng_state_hash": rng_state_hash(),
        }
        if counts:
            entry["counts"] = dict(counts)
        entry.update(extra)
        self.records.append(entry)
        if self.path is not None:
            append_jsonl(self.path, entry)
        return entry

    def losses(self, name: str = "total") -> List[float]:
        return [r["losses"][name] for r in self.records if name in r["losses"]]

    def smoothed(self, name: str = "total", window: int = 50) -> List[float]:
        """Trailing moving average of one loss"""
        values = self.losses(name)
        out, running = [], 0.0
        for i, value in enumerate(values):
            running += value
            if i >= window:
                running -= values[i - window]
            out.append(running / min(i + 1, window))
        return out

    def __len__(self) -> int:
        return len(self.records)
