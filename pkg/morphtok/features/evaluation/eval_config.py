"""
Evaluation Configuration Module
Test-set sizes, decoding mode, retrieval-probe training and conflict-sweep ratios
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Tuple

from ...utils.errors import MorphError

SUITES: Tuple[str, ...] = ("caption", "recon", "edit", "t2i", "probe", "ablation", "retrieval", "sweep")


@dataclass
class EvalConfig:
    """Configuration for the evaluation suites"""

    seed: int = 1
    n_test: int = 200
    n_edit: int = 100
    n_probe: int = 100
    mode: str = "greedy"
    batch: int = 64

    # Retrieval probe: bag-of-words text tower + linear image projection
    retrieval_gallery: int = 100
    retrieval_train: int = 2000
    retrieval_dim: int = 32
    retrieval_steps: int = 300
    retrieval_lr: float = 1e-2
    retrieval_temperature: float = 0.07
    recall_ks: Tuple[int, ...] = (1, 5)

    # Conflict sweep: share of generation-format sequences in joint training
    sweep_ratios: List[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    sweep_steps: int = 500
    sweep_seeds: List[int] = field(default_factory=lambda: [0])
    # Slack allowed when checking that caption accuracy does not rise with the generation share
    sweep_tolerance: float = 0.02

    # Ablation grid: every ordering is judged by majority over these seeds
    ablation_seeds: List[int] = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if self.mode not in ("greedy", "sample"):
            raise MorphError("UNKNOWN_MODE", f"unknown decode mode '{self.mode}'")
        if any(not 0.0 <= r <= 1.0 for r in self.sweep_ratios):
            raise MorphError("INVALID_CONFIG", "sweep ratios must lie in [0, 1]")
        if not self.sweep_seeds or not self.ablation_seeds:
            raise MorphError("INVALID_CONFIG", "sweep and ablation seed lists must not be empty")
        self.recall_ks = tuple(self.recall_ks)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["recall_ks"] = list(self.recall_ks)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def get_preset(cls, preset_name: str) -> "EvalConfig":
        """
        Presets:
        - 'toy': full held-out evaluation [DEFAULT]
        - 'micro': a few examples per suite
        """
        presets = {
            "toy": cls(),
            "micro": cls(n_test=4, n_edit=4, n_probe=4, batch=4, retrieval_gallery=4, retrieval_train=16,
                         retrieval_dim=8, retrieval_steps=5, sweep_ratios=[0.25, 0.75], sweep_steps=2, ablation_seeds=[0]),
        }
        return presets.get(preset_name, presets["toy"])

    def get_description(self) -> str:
        return (f"Eval: {self.n_test} test / {self.n_edit} edit examples, {self.mode} decoding, "
                f"R@{list(self.recall_ks)} on {self.retrieval_gallery}-item galleries")
