"""
Encoder Configuration Module
Sizes for the patch embedder, the deconfounded Q-former and the morph codebook
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict


@dataclass
class EncoderConfig:
    """Configuration for the morph-token encoder"""

    image_size: int = 32
    patch_size: int = 4        # p_v, so L_v = 64
    d: int = 64
    heads: int = 4
    embed_layers: int = 2      # N_v patch-transformer blocks
    n_g: int = 8               # group tokens = |M|
    K_m: int = 64              # morph codebook entries
    K_d: int = 64              # confounder dictionary rows
    dict_dim: int = 32         # matches the pixel codec embedding dim
    N_q: int = 2               # Q-former blocks
    prior_mode: str = "empirical"   # empirical | uniform
    deconfound: bool = True
    quantize: bool = True      # False only for the continuous ablation
    beta: float = 0.25         # commitment weight

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def get_preset(cls, preset_name: str) -> "EncoderConfig":
        """
        Presets:
        - 'toy': desk-scale defaults [DEFAULT]
        - 'small': 32x32 images at test-friendly width
        - 'micro': gradient-check scale (d=8, n_g=2, L_v=4)
        """
        presets = {
            "toy": cls(),
            "small": cls(patch_size=8, d=16, heads=2, embed_layers=1, n_g=4, K_m=16, K_d=8,
                         dict_dim=8, N_q=1),
            "micro": cls(image_size=8, patch_size=4, d=8, heads=2, embed_layers=1, n_g=2, K_m=8,
                         K_d=4, dict_dim=8, N_q=1),
        }
        return presets.get(preset_name, presets["toy"])

    def get_description(self) -> str:
        mode = "deconfounded" if self.deconfound else "plain"
        return (f"Morph encoder: n_g={self.n_g}, K_m={self.K_m}, {mode} slot attention "
                f"({self.N_q} blocks, d={self.d}, K_d={self.K_d})")
