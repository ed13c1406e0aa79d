"""
MLLM Configuration Module
Sizes of the decoder-only core plus LoRA and stage-2 generation-path options
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Tuple


@dataclass
class LoRAConfig:
    """Low-rank adapters on the attention query/value projections"""

    on: bool = False
    rank: int = 4
    alpha: float = 8.0
    targets: Tuple[str, ...] = ("w_q", "w_v")
    train_visual_head: bool = True   # morph head + morph input adapter stay trainable

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["targets"] = list(self.targets)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LoRAConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in data.items() if k in known}
        if "targets" in values:
            values["targets"] = tuple(values["targets"])
        return cls(**values)


@dataclass
class MLLMConfig:
    """Configuration for the joint text + morph language model"""

    layers: int = 4
    d: int = 64
    heads: int = 4
    max_text: int = 32
    max_positions: int = 256
    gen_path: str = "st_argmax"      # st_argmax | hidden_state
    st_temperature: float = 1.0
    warm_start_steps: int = 0        # CE toward M on generated positions, default off
    lora: LoRAConfig = field(default_factory=LoRAConfig)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["lora"] = self.lora.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MLLMConfig":
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in data.items() if k in known}
        lora = values.get("lora")
        if isinstance(lora, dict):
            values["lora"] = LoRAConfig.from_dict(lora)
        return cls(**values)

    @classmethod
    def get_preset(cls, preset_name: str) -> "MLLMConfig":
        """
        Presets:
        - 'toy': 4 layers, d=64 [DEFAULT]
        - 'small': 2 layers, d=16 for integration tests
        - 'micro': 2 layers, d=8 for gradient checks
        """
        presets = {
            "toy": cls(),
            "small": cls(layers=2, d=16, heads=2, max_positions=192),
            "micro": cls(layers=2, d=8, heads=2, max_positions=64),
        }
        return presets.get(preset_name, presets["toy"])

    def get_description(self) -> str:
        lora = f", LoRA r={self.lora.rank}" if self.lora.on else ""
        return f"MLLM core: {self.layers} layers, d={self.d}, {self.heads} heads, gen_path={self.gen_path}{lora}"
