"""
Decoder Configuration Module
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict


@dataclass
class DecoderConfig:
    """Prefix-LM pixel-token decoder"""

    layers: int = 4
    d: int = 64
    heads: int = 4

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DecoderConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def get_preset(cls, preset_name: str) -> "DecoderConfig":
        """
        Presets:
        - 'toy': 4 layers, d=64 [DEFAULT]
        - 'small': 2 layers, d=16
        - 'micro': 1 layer, d=8
        """
        presets = {
            "toy": cls(),
            "small": cls(layers=2, d=16, heads=2),
            "micro": cls(layers=1, d=8, heads=2),
        }
        return presets.get(preset_name, presets["toy"])

    def get_description(self) -> str:
        return f"Visual decoder: {self.layers} layers, d={self.d}, {self.heads} heads (prefix-LM)"
