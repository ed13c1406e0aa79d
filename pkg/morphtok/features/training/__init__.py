"""
Training Package
Three-stage training with detached comprehension / generation losses
"""

from .schedule import build_optimizer, lr_at, optimizer_echo, optimizer_step
from .stages import LossTerm, StageTrainer, audit_detachment, coupled_terms, graph_leaves, train_stages
from .tasks import TASKS, TaskExample, TaskSampler, build_example, to_sequence
from .train_config import TrainConfig
from .train_log import TrainingLog

__all__ = [
    "build_optimizer",
    "lr_at",
    "optimizer_echo",
    "optimizer_step",
    "LossTerm",
    "StageTrainer",
    "audit_detachment",
    "coupled_terms",
    "graph_leaves",
    "train_stages",
    "TASKS",
    "TaskExample",
    "TaskSampler",
    "build_example",
    "to_sequence",
    "TrainConfig",
    "TrainingLog",
]
