"""
Utility modules for Morphtok
"""

from .config_store import ConfigStore, stable_hash
from .errors import MorphError
from .checkpoint_store import CheckpointStore

__all__ = ["ConfigStore", "stable_hash", "MorphError", "CheckpointStore"]
