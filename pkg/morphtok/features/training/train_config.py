"""
Training Configuration Module
Per-stage budgets, AdamW + warmup/cosine hyper-parameters, loss weights and task mixture
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Tuple

from ...utils.errors import MorphError

DEFAULT_TASK_WEIGHTS = {"caption": 0.3, "t2i": 0.2, "edit": 0.4, "qa": 0.1}


@dataclass
class TrainConfig:
    """Configuration for one training stage"""

    stage: int = 1
    steps: int = 3000
    lr_max: float = 3e-4
    warmup: int = 100
    batch: int = 32
    seed: int = 0
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.05
    grad_clip: float = 1.0

    # Loss weights
    lambda_cap: float = 1.0
    lambda_gen: float = 1.0

    # Stage 1: share of <M,Y> sequences, the rest are <Y,M>
    format_ratio: float = 0.5
    # Stage 2: "sum" both detached losses per batch, or "alternate" batches
    stage2_mix: str = "sum"
    # Stage 3 mixture over caption / t2i / edit / qa
    task_weights: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TASK_WEIGHTS))

    # Data and bookkeeping
    n_train: int = 20000
    n_edit: int = 10000
    log_every: int = 1

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise MorphError("UNKNOWN_STAGE", f"unknown training stage {self.stage}")
        if self.steps <= 0:
            raise MorphError("INVALID_CONFIG", "steps must be positive")
        if self.lambda_cap < 0 or self.lambda_gen < 0:
            raise MorphError("INVALID_CONFIG", "loss weights must be non-negative")
        if self.stage2_mix not in ("sum", "alternate"):
            raise MorphError("INVALID_CONFIG", f"unknown stage2_mix '{self.stage2_mix}'")
        self.betas = tuple(self.betas)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def for_stage(cls, stage: int, **overrides) -> "TrainConfig":
        """Toy budgets: 3k / 3k / 2k steps at lr 3e-4 / 3e-4 / 1e-4"""
        budgets = {1: (3000, 3e-4), 2: (3000, 3e-4), 3: (2000, 1e-4)}
        if stage not in budgets:
            raise MorphError("UNKNOWN_STAGE", f"unknown training stage {stage}")
        steps, lr = budgets[stage]
        values = {"stage": stage, "steps": steps, "lr_max": lr}
        values.update(overrides)
        return cls(**values)

    @classmethod
    def get_preset(cls, preset_name: str) -> "TrainConfig":
        """
        Presets:
        - 'toy': stage-1 defaults [DEFAULT]
        - 'micro': a handful of steps for tests
        """
        presets = {
            "toy": cls(),
            "micro": cls(steps=4, warmup=1, batch=4, n_train=32, n_edit=16),
        }
        return presets.get(preset_name, presets["toy"])

    def get_description(self) -> str:
        return (f"Stage {self.stage}: {self.steps} steps, batch {self.batch}, lr_max {self.lr_max:g}, "
                f"warmup {self.warmup}, AdamW betas {self.betas}, wd {self.weight_decay}")
