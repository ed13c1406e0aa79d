"""
Codec Configuration Module
Sizes and training options for the pixel-token VQ autoencoder
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict


@dataclass
class CodecConfig:
    """Configuration for the pixel codec"""

    image_size: int = 32
    patch_size: int = 4          # p, so L_x = (H/p)^2 = 64
    codebook_size: int = 256     # K
    embed_dim: int = 32          # d
    hidden: int = 64

    # Training
    steps: int = 1500
    batch: int = 64
    lr: float = 2e-3
    beta: float = 0.25           # commitment weight
    seed: int = 0
    usage_warn: float = 0.25     # collapse warning below this used fraction per epoch
    restart_dead_codes: bool = True

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CodecConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def get_preset(cls, preset_name: str) -> "CodecConfig":
        """
        Presets:
        - 'toy': desk-scale defaults [DEFAULT]
        - 'micro': tiny sizes for unit tests
        """
        presets = {
            "toy": cls(),
            "micro": cls(codebook_size=16, embed_dim=8, hidden=8, steps=20, batch=8),
        }
        return presets.get(preset_name, presets["toy"])

    def get_description(self) -> str:
        return (f"Pixel codec: K={self.codebook_size}, d={self.embed_dim}, "
                f"p={self.patch_size} ({self.num_tokens} tokens/image)")
