"""
Configuration Store Module
Centralized settings management for morphtok
Stores one section per component in config.json at workspace root
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

from .errors import MorphError


# Config file at workspace root, overridable from .env
WORKSPACE_ROOT = Path(__file__).resolve().parent.parent.parent
CONFIG_PATH = Path(os.getenv("MORPHTOK_CONFIG", str(WORKSPACE_ROOT / "config.json")))


class ConfigStore:
    """Centralized configuration store for all component settings"""

    def __init__(self, path: Path = CONFIG_PATH, defaults: Optional[Dict[str, Dict[str, Any]]] = None):
        self.path = Path(path)
        self.data: Dict[str, Dict[str, Any]] = copy.deepcopy(defaults or {})
        self.load()

    def load(self):
        """Load configuration from file, keeping defaults for missing keys"""
        if not self.path.exists():
            return
        try:
            loaded_data = json.loads(self.path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            print(f"⚠️ Could not parse {self.path.name}, using defaults: {e}")
            return

        # Documentation block, not a section
        loaded_data.pop("_info", None)
        for section, values in loaded_data.items():
            if isinstance(values, dict):
                self.data.setdefault(section, {})
                self.data[section].update(values)
            else:
                self.data[section] = values

    # Section helpers
    def section(self, name: str) -> Dict[str, Any]:
        """Get a copy of one component section"""
        return copy.deepcopy(self.data.get(name, {}))

    def set_value(self, section: str, key: str, value: Any):
        """Set a single key inside a section"""
        self.data.setdefault(section, {})
        self.data[section][key] = value

    def apply_overrides(self, overrides: Iterable[Tuple[str, Any]]):
        """Apply (section.key, value) pairs, e.g. from repeated CLI --set flags"""
        for dotted, value in overrides:
            section, key = dotted.split(".", 1)
            self.set_value(section, key, value)

    def snapshot(self) -> Dict[str, Any]:
        """Full config echo without documentation"""
        return copy.deepcopy(self.data)

    def config_hash(self, sections: Optional[list] = None) -> str:
        """Stable hash over the selected sections (all by default)"""
        chosen = {k: v for k, v in self.data.items() if sections is None or k in sections}
        return stable_hash(chosen)


def parse_override(text: str) -> Tuple[str, Any]:
    """'section.key=value' with a JSON value, falling back to the raw string"""
    dotted, sep, raw = text.partition("=")
    section, dot, key = dotted.strip().partition(".")
    if not (sep and dot and section and key):
        raise MorphError("INVALID_CONFIG", f"override '{text}' is not section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return f"{section}.{key}", value


def stable_hash(payload: Any) -> str:
    """sha256 over canonical JSON"""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
